//! Low-rank factor sets for 4D (X, Y, Z, T) feature grids.
//!
//! Two factorizations are supported:
//!
//! * CP: `T[a,b,c,d] = Σ_r x_r[a] · y_r[b] · z_r[c] · t_r[d]`
//! * MM (matrix-matrix): three families of matrix pairs, each pair covering
//!   complementary axis pairs,
//!   `Σ XY_r[a,b]·ZT_r[c,d] + Σ XZ_r[a,c]·YT_r[b,d] + Σ YZ_r[b,c]·XT_r[a,d]`.
//!
//! Sampling is separable: each factor is interpolated (linearly or
//! bilinearly) on its own axes and the results multiplied, which equals
//! quadrilinear interpolation of the dense reconstruction.

mod array;
mod cp;
mod dense;
mod mm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use array::FactorArray;
pub use cp::CpFactors;
pub use dense::{DenseGrid4, DEFAULT_DENSE_CAP};
pub use mm::{MatrixPair, MmFactors, PAIR_NAMES};

use crate::error::{Error, Result};

/// Element type of a factor buffer. Parameters are stored as `f32`,
/// gradients as `f64`; arithmetic is always carried out in `f64`.
pub trait Scalar: Copy + Default + Send + Sync + Into<f64> + PartialEq + std::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Voxel counts per spatial axis plus the number of time slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub n_t: usize,
}

impl GridDims {
    pub fn new(i: usize, j: usize, k: usize, n_t: usize) -> Result<Self> {
        let dims = Self { i, j, k, n_t };
        dims.validate()?;
        Ok(dims)
    }

    pub fn cube(n: usize, n_t: usize) -> Result<Self> {
        Self::new(n, n, n, n_t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j == 0 || self.k == 0 || self.n_t == 0 {
            return Err(Error::invalid(format!("grid dims must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// Axis lengths in `[x, y, z, t]` order.
    pub fn axes(&self) -> [usize; 4] {
        [self.i, self.j, self.k, self.n_t]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }

    pub fn with_spatial(&self, s: [usize; 3]) -> Self {
        Self { i: s[0], j: s[1], k: s[2], n_t: self.n_t }
    }

    pub fn total(&self) -> Option<usize> {
        self.i
            .checked_mul(self.j)?
            .checked_mul(self.k)?
            .checked_mul(self.n_t)
    }

    /// Locates a grid-space coordinate, rejecting anything outside `[0, dim-1]`.
    pub fn locate(&self, c: &Coord4) -> Result<CellWeights> {
        const TOL: f64 = 1e-9;
        for (v, len, name) in [(c.x, self.i, "x"), (c.y, self.j, "y"), (c.z, self.k, "z"), (c.t, self.n_t, "t")] {
            if !(v >= -TOL && v <= (len - 1) as f64 + TOL) {
                return Err(Error::invalid(format!(
                    "coordinate {name}={v} outside [0, {}]",
                    len - 1
                )));
            }
        }
        Ok(self.locate_clamped(c))
    }

    /// Locates a coordinate after clamping each axis into range.
    #[inline]
    pub fn locate_clamped(&self, c: &Coord4) -> CellWeights {
        CellWeights {
            axes: [
                AxisLerp::new(c.x, self.i),
                AxisLerp::new(c.y, self.j),
                AxisLerp::new(c.z, self.k),
                AxisLerp::new(c.t, self.n_t),
            ],
        }
    }
}

/// Continuous grid-space coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coord4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
}

impl Coord4 {
    pub fn new(x: f64, y: f64, z: f64, t: f64) -> Result<Self> {
        if x.is_nan() || y.is_nan() || z.is_nan() || t.is_nan() {
            return Err(Error::invalid("NaN coordinate"));
        }
        Ok(Self { x, y, z, t })
    }
}

/// Linear interpolation stencil along one axis: `(1-w)·a[i0] + w·a[i1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisLerp {
    pub i0: usize,
    pub i1: usize,
    pub w: f64,
}

impl AxisLerp {
    #[inline]
    pub fn new(coord: f64, len: usize) -> Self {
        if len <= 1 {
            return Self { i0: 0, i1: 0, w: 0.0 };
        }
        let c = coord.clamp(0.0, (len - 1) as f64);
        let i0 = (c.floor() as usize).min(len - 2);
        Self { i0, i1: i0 + 1, w: c - i0 as f64 }
    }
}

/// Interpolation stencils for the four axes of one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellWeights {
    pub axes: [AxisLerp; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Cp,
    Mm,
}

impl std::fmt::Display for FactorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FactorKind::Cp => "cp",
            FactorKind::Mm => "mm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamStats {
    pub count: usize,
    pub bytes: usize,
}

impl ParamStats {
    pub fn from_count(count: usize) -> Self {
        Self { count, bytes: count * 4 }
    }
}

impl std::ops::Add for ParamStats {
    type Output = ParamStats;
    fn add(self, rhs: Self) -> Self {
        ParamStats::from_count(self.count + rhs.count)
    }
}

/// A factorized 4D grid, either CP or MM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorGrid<T = f32> {
    Cp(CpFactors<T>),
    Mm(MmFactors<T>),
}

/// Draws an i.i.d. uniform CP factor set in `[-b, b]`, `b = (scale/rank)^(1/4)`, so a
/// reconstructed entry is O(scale) independent of rank.
pub fn init_cp(dims: GridDims, rank: usize, scale: f64, seed: u64) -> Result<CpFactors> {
    dims.validate()?;
    if rank == 0 {
        return Err(Error::invalid("CP rank must be at least 1"));
    }
    check_scale(scale)?;
    let bound = (scale / rank as f64).powf(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(CpFactors::random(dims, rank, bound, &mut rng))
}

/// Draws an i.i.d. uniform MM factor set in `[-b, b]`, `b = (scale/(r1+r2+r3))^(1/2)`.
pub fn init_mm(dims: GridDims, ranks: [usize; 3], scale: f64, seed: u64) -> Result<MmFactors> {
    dims.validate()?;
    check_scale(scale)?;
    let total: usize = ranks.iter().sum();
    let bound = if total == 0 { 0.0 } else { (scale / total as f64).sqrt() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(MmFactors::random(dims, ranks, bound, &mut rng))
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("init scale must be finite and >= 0, got {scale}")));
    }
    Ok(())
}

impl<T: Scalar> FactorGrid<T> {
    pub fn kind(&self) -> FactorKind {
        match self {
            FactorGrid::Cp(_) => FactorKind::Cp,
            FactorGrid::Mm(_) => FactorKind::Mm,
        }
    }

    pub fn dims(&self) -> GridDims {
        match self {
            FactorGrid::Cp(f) => f.dims(),
            FactorGrid::Mm(f) => f.dims(),
        }
    }

    /// Number of scalar components a point query produces: `R` for CP,
    /// `r1 + r2 + r3` for MM.
    pub fn n_components(&self) -> usize {
        match self {
            FactorGrid::Cp(f) => f.rank(),
            FactorGrid::Mm(f) => f.n_components(),
        }
    }

    /// Ranks in a uniform shape: `[R, 0, 0]` for CP.
    pub fn ranks(&self) -> [usize; 3] {
        match self {
            FactorGrid::Cp(f) => [f.rank(), 0, 0],
            FactorGrid::Mm(f) => f.ranks(),
        }
    }

    /// Writes every per-component interpolated scalar into `out`.
    #[inline]
    pub fn component_values(&self, w: &CellWeights, out: &mut [f64]) {
        match self {
            FactorGrid::Cp(f) => f.component_values(w, out),
            FactorGrid::Mm(f) => f.component_values(w, out),
        }
    }

    /// Accumulates `∂(Σ_r up[r]·component_r)/∂(factor entries)` into `grad`.
    /// `scratch` is resized as needed.
    #[inline]
    pub fn component_grads(
        &self,
        w: &CellWeights,
        up: &[f64],
        grad: &mut FactorGrid<f64>,
        scratch: &mut Vec<f64>,
    ) {
        match (self, grad) {
            (FactorGrid::Cp(f), FactorGrid::Cp(g)) => f.component_grads(w, up, g, scratch),
            (FactorGrid::Mm(f), FactorGrid::Mm(g)) => f.component_grads(w, up, g, scratch),
            _ => panic!("gradient buffer kind does not match factor kind"),
        }
    }

    /// Sum of all components at one located coordinate.
    #[inline]
    pub fn sample_at(&self, w: &CellWeights, scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.n_components(), 0.0);
        self.component_values(w, scratch);
        scratch.iter().sum()
    }

    /// Interpolated grid value at each coordinate.
    pub fn sample(&self, coords: &[Coord4]) -> Result<Vec<f64>> {
        let dims = self.dims();
        let mut scratch = Vec::new();
        coords
            .iter()
            .map(|c| Ok(self.sample_at(&dims.locate(c)?, &mut scratch)))
            .collect()
    }

    /// Gradient of `Σ_b upstream[b] · sample(coords[b])` w.r.t. every factor entry.
    pub fn sample_grad(&self, coords: &[Coord4], upstream: &[f64]) -> Result<FactorGrid<f64>> {
        if coords.len() != upstream.len() {
            return Err(Error::invalid(format!(
                "{} coordinates but {} upstream values",
                coords.len(),
                upstream.len()
            )));
        }
        let dims = self.dims();
        let mut grad = self.zeros_like::<f64>();
        let mut scratch = Vec::new();
        let mut up = vec![0.0; self.n_components()];
        for (c, &u) in coords.iter().zip(upstream) {
            let w = dims.locate(c)?;
            up.fill(u);
            self.component_grads(&w, &up, &mut grad, &mut scratch);
        }
        Ok(grad)
    }

    pub fn zeros_like<U: Scalar>(&self) -> FactorGrid<U> {
        match self {
            FactorGrid::Cp(f) => FactorGrid::Cp(f.zeros_like()),
            FactorGrid::Mm(f) => FactorGrid::Mm(f.zeros_like()),
        }
    }

    /// Resamples spatial factors to `new_dims`; the time axis is never resampled.
    pub fn upsample(&self, new_dims: GridDims) -> Result<Self> {
        let old = self.dims();
        new_dims.validate()?;
        if new_dims.n_t != old.n_t {
            return Err(Error::invalid(format!(
                "cannot change time resolution during upsampling ({} -> {})",
                old.n_t, new_dims.n_t
            )));
        }
        if new_dims.spatial().iter().zip(old.spatial()).any(|(&n, o)| n < o) {
            return Err(Error::invalid(format!(
                "upsampling cannot shrink the grid ({old:?} -> {new_dims:?})"
            )));
        }
        Ok(match self {
            FactorGrid::Cp(f) => FactorGrid::Cp(f.resample(new_dims)),
            FactorGrid::Mm(f) => FactorGrid::Mm(f.resample(new_dims)),
        })
    }

    /// Keeps the inclusive spatial node ranges `[lo[a], hi[a]]`.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        let spatial = self.dims().spatial();
        for a in 0..3 {
            if lo[a] > hi[a] || hi[a] >= spatial[a] {
                return Err(Error::invalid(format!(
                    "crop range {lo:?}..={hi:?} invalid for dims {spatial:?}"
                )));
            }
        }
        Ok(match self {
            FactorGrid::Cp(f) => FactorGrid::Cp(f.crop(lo, hi)),
            FactorGrid::Mm(f) => FactorGrid::Mm(f.crop(lo, hi)),
        })
    }

    /// Dense `I×J×K×N` tensor. Intended as a test oracle; refuses to
    /// allocate more than `cap` entries.
    pub fn reconstruct_dense(&self, cap: usize) -> Result<DenseGrid4> {
        let dims = self.dims();
        let total = dims.total().unwrap_or(usize::MAX);
        if total > cap {
            return Err(Error::ResourceLimit(format!(
                "dense reconstruction of {total} entries exceeds cap {cap}"
            )));
        }
        Ok(match self {
            FactorGrid::Cp(f) => f.reconstruct_dense(),
            FactorGrid::Mm(f) => f.reconstruct_dense(),
        })
    }

    pub fn param_stats(&self) -> ParamStats {
        ParamStats::from_count(self.arrays().iter().map(|(_, a)| a.data().len()).sum())
    }

    /// All factor arrays with stable names, in serialization order.
    pub fn arrays(&self) -> Vec<(&'static str, &FactorArray<T>)> {
        match self {
            FactorGrid::Cp(f) => f.arrays(),
            FactorGrid::Mm(f) => f.arrays(),
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut FactorArray<T>)> {
        match self {
            FactorGrid::Cp(f) => f.arrays_mut(),
            FactorGrid::Mm(f) => f.arrays_mut(),
        }
    }

    /// Arrays that carry a time mode, paired with the index of that mode.
    pub fn time_arrays(&self) -> Vec<(&FactorArray<T>, usize)> {
        match self {
            FactorGrid::Cp(f) => vec![(f.t(), 0)],
            FactorGrid::Mm(f) => f.pairs().iter().map(|p| (&p.temporal, 1)).collect(),
        }
    }

    pub fn time_arrays_mut(&mut self) -> Vec<(&mut FactorArray<T>, usize)> {
        match self {
            FactorGrid::Cp(f) => vec![(f.t_mut(), 0)],
            FactorGrid::Mm(f) => f.pairs_mut().iter_mut().map(|p| (&mut p.temporal, 1)).collect(),
        }
    }

    /// Rebuilds a grid of the same layout from arrays in `arrays()` order.
    pub fn with_arrays<U: Scalar>(&self, arrays: Vec<FactorArray<U>>) -> Result<FactorGrid<U>> {
        let expected = self.arrays();
        if arrays.len() != expected.len()
            || arrays
                .iter()
                .zip(&expected)
                .any(|(a, (_, e))| a.shape() != e.shape() || a.rank() != e.rank())
        {
            return Err(Error::invalid("array layout does not match factor grid"));
        }
        let dims = self.dims();
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(match self {
            FactorGrid::Cp(_) => FactorGrid::Cp(CpFactors::from_arrays(dims, [next(), next(), next(), next()])?),
            FactorGrid::Mm(_) => {
                let mut pairs = Vec::with_capacity(3);
                for _ in 0..3 {
                    pairs.push(MatrixPair { spatial: next(), temporal: next() });
                }
                let pairs: [MatrixPair<U>; 3] = pairs.try_into().ok().expect("three pairs");
                FactorGrid::Mm(MmFactors::from_pairs(dims, pairs)?)
            }
        })
    }
}

impl FactorGrid<f64> {
    pub fn add_assign(&mut self, other: &FactorGrid<f64>) {
        for ((_, a), (_, b)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            a.add_assign(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_lerp_handles_edges() {
        assert_eq!(AxisLerp::new(0.0, 1), AxisLerp { i0: 0, i1: 0, w: 0.0 });
        let l = AxisLerp::new(3.0, 4);
        assert_eq!((l.i0, l.i1), (2, 3));
        assert!((l.w - 1.0).abs() < 1e-15);
        let l = AxisLerp::new(1.25, 4);
        assert_eq!((l.i0, l.i1), (1, 2));
        assert!((l.w - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_dims_and_rank_rejected() {
        assert!(GridDims::new(0, 2, 2, 2).is_err());
        let dims = GridDims::new(2, 2, 2, 2).unwrap();
        assert!(matches!(init_cp(dims, 0, 0.1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn out_of_bounds_coordinate_rejected() {
        let dims = GridDims::new(4, 4, 4, 2).unwrap();
        let f = FactorGrid::Cp(init_cp(dims, 2, 0.5, 1).unwrap());
        let bad = Coord4::new(3.5, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(f.sample(&[bad]), Err(Error::InvalidArgument(_))));
        let bad_t = Coord4::new(0.0, 0.0, 0.0, 1.5).unwrap();
        assert!(f.sample(&[bad_t]).is_err());
        assert!(Coord4::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sample_grad_shape_mismatch_rejected() {
        let dims = GridDims::new(3, 3, 3, 2).unwrap();
        let f = FactorGrid::Mm(init_mm(dims, [1, 1, 1], 1.0, 3).unwrap());
        let c = Coord4::new(1.0, 1.0, 1.0, 0.5).unwrap();
        assert!(f.sample_grad(&[c, c], &[1.0]).is_err());
    }

    #[test]
    fn dense_cap_enforced() {
        let dims = GridDims::new(8, 8, 8, 4).unwrap();
        let f = FactorGrid::Cp(init_cp(dims, 1, 1.0, 0).unwrap());
        assert!(matches!(f.reconstruct_dense(100), Err(Error::ResourceLimit(_))));
        assert!(f.reconstruct_dense(DEFAULT_DENSE_CAP).is_ok());
    }

    #[test]
    fn upsample_rejects_time_change() {
        let dims = GridDims::new(4, 4, 4, 3).unwrap();
        let f = FactorGrid::Mm(init_mm(dims, [1, 1, 1], 1.0, 0).unwrap());
        assert!(f.upsample(GridDims::new(8, 8, 8, 4).unwrap()).is_err());
        assert!(f.upsample(GridDims::new(2, 8, 8, 3).unwrap()).is_err());
        assert!(f.upsample(GridDims::new(8, 8, 8, 3).unwrap()).is_ok());
    }

    #[test]
    fn param_stats_closed_forms() {
        let dims = GridDims::new(5, 6, 7, 3).unwrap();
        let cp = FactorGrid::Cp(init_cp(dims, 4, 1.0, 0).unwrap());
        assert_eq!(cp.param_stats().count, 4 * (5 + 6 + 7 + 3));
        assert_eq!(cp.param_stats().bytes, 16 * (5 + 6 + 7 + 3));
        let mm = FactorGrid::Mm(init_mm(dims, [2, 2, 2], 1.0, 0).unwrap());
        assert_eq!(
            mm.param_stats().count,
            2 * (5 * 6 + 7 * 3 + 5 * 7 + 6 * 3 + 6 * 7 + 5 * 3)
        );
        let empty = FactorGrid::Mm(init_mm(dims, [0, 0, 0], 1.0, 0).unwrap());
        assert_eq!(empty.param_stats().count, 0);
    }

    #[test]
    fn crop_keeps_node_values() {
        let dims = GridDims::new(6, 5, 4, 2).unwrap();
        let f = FactorGrid::Mm(init_mm(dims, [1, 2, 1], 1.0, 9).unwrap());
        let c = f.crop([1, 1, 0], [4, 3, 2]).unwrap();
        assert_eq!(c.dims(), GridDims::new(4, 3, 3, 2).unwrap());
        let a = f.sample(&[Coord4::new(2.0, 2.0, 1.0, 1.0).unwrap()]).unwrap();
        let b = c.sample(&[Coord4::new(1.0, 1.0, 1.0, 1.0).unwrap()]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
    }
}
