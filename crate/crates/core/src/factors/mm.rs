use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CellWeights, DenseGrid4, FactorArray, GridDims, Scalar};
use crate::error::{Error, Result};

/// Axis indices (x=0, y=1, z=2) of each pairing's spatial matrix.
const SPATIAL_AXES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];
/// Spatial axis that the temporal matrix of each pairing carries alongside time.
const TEMPORAL_AXIS: [usize; 3] = [2, 1, 0];

/// Array names per pairing: `(spatial, temporal)`.
pub const PAIR_NAMES: [(&str, &str); 3] = [("xy", "zt"), ("xz", "yt"), ("yz", "xt")];

/// One MM pairing: `rank` spatial matrices paired with `rank` spatial×time matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixPair<T = f32> {
    pub spatial: FactorArray<T>,
    pub temporal: FactorArray<T>,
}

/// MM factor set: pairings XY∘ZT, XZ∘YT and YZ∘XT with ranks `r1, r2, r3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmFactors<T = f32> {
    dims: GridDims,
    pairs: [MatrixPair<T>; 3],
}

fn pair_shapes(dims: &GridDims, p: usize) -> ([usize; 2], [usize; 2]) {
    let axes = dims.axes();
    let [a, b] = SPATIAL_AXES[p];
    ([axes[a], axes[b]], [axes[TEMPORAL_AXIS[p]], dims.n_t])
}

impl<T: Scalar> MmFactors<T> {
    pub fn from_pairs(dims: GridDims, pairs: [MatrixPair<T>; 3]) -> Result<Self> {
        dims.validate()?;
        for (p, pair) in pairs.iter().enumerate() {
            let (s, t) = pair_shapes(&dims, p);
            if pair.spatial.shape() != s
                || pair.temporal.shape() != t
                || pair.spatial.rank() != pair.temporal.rank()
            {
                return Err(Error::invalid(format!(
                    "MM pairing {}∘{} has shapes {:?}/{:?}, expected {s:?}/{t:?} with equal ranks",
                    PAIR_NAMES[p].0,
                    PAIR_NAMES[p].1,
                    pair.spatial.shape(),
                    pair.temporal.shape()
                )));
            }
        }
        Ok(Self { dims, pairs })
    }

    pub fn zeros(dims: GridDims, ranks: [usize; 3]) -> Self {
        let pairs = std::array::from_fn(|p| {
            let (s, t) = pair_shapes(&dims, p);
            MatrixPair {
                spatial: FactorArray::zeros(s, ranks[p]),
                temporal: FactorArray::zeros(t, ranks[p]),
            }
        });
        Self { dims, pairs }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn ranks(&self) -> [usize; 3] {
        std::array::from_fn(|p| self.pairs[p].spatial.rank())
    }

    pub fn n_components(&self) -> usize {
        self.ranks().iter().sum()
    }

    pub fn pairs(&self) -> &[MatrixPair<T>; 3] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [MatrixPair<T>; 3] {
        &mut self.pairs
    }

    pub fn arrays(&self) -> Vec<(&'static str, &FactorArray<T>)> {
        self.pairs
            .iter()
            .zip(PAIR_NAMES)
            .flat_map(|(p, (s, t))| [(s, &p.spatial), (t, &p.temporal)])
            .collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut FactorArray<T>)> {
        self.pairs
            .iter_mut()
            .zip(PAIR_NAMES)
            .flat_map(|(p, (s, t))| [(s, &mut p.spatial), (t, &mut p.temporal)])
            .collect()
    }

    pub fn zeros_like<U: Scalar>(&self) -> MmFactors<U> {
        MmFactors::zeros(self.dims, self.ranks())
    }

    /// Component order is all of pairing 1, then pairing 2, then pairing 3.
    #[inline]
    pub(crate) fn component_values(&self, w: &CellWeights, out: &mut [f64]) {
        let mut off = 0;
        for (p, pair) in self.pairs.iter().enumerate() {
            let r_n = pair.spatial.rank();
            if r_n == 0 {
                continue;
            }
            let seg = &mut out[off..off + r_n];
            let [a, b] = SPATIAL_AXES[p];
            pair.spatial.bilinear_into(&w.axes[a], &w.axes[b], seg);
            pair.temporal.bilinear_mul(&w.axes[TEMPORAL_AXIS[p]], &w.axes[3], seg);
            off += r_n;
        }
    }

    pub(crate) fn component_grads(
        &self,
        w: &CellWeights,
        up: &[f64],
        grad: &mut MmFactors<f64>,
        scratch: &mut Vec<f64>,
    ) {
        let mut off = 0;
        for (p, (pair, gpair)) in self.pairs.iter().zip(grad.pairs.iter_mut()).enumerate() {
            let r_n = pair.spatial.rank();
            if r_n == 0 {
                continue;
            }
            scratch.resize(2 * r_n, 0.0);
            let (sv, tv) = scratch.split_at_mut(r_n);
            let [a, b] = SPATIAL_AXES[p];
            let (la, lb) = (&w.axes[a], &w.axes[b]);
            let (lc, lt) = (&w.axes[TEMPORAL_AXIS[p]], &w.axes[3]);
            pair.spatial.bilinear_into(la, lb, sv);
            pair.temporal.bilinear_into(lc, lt, tv);
            let u = &up[off..off + r_n];
            gpair.spatial.scatter_bilinear(la, lb, u, tv);
            gpair.temporal.scatter_bilinear(lc, lt, u, sv);
            off += r_n;
        }
    }

    pub(crate) fn resample(&self, new_dims: GridDims) -> Self {
        let axes = new_dims.axes();
        let pairs = std::array::from_fn(|p| {
            let [a, b] = SPATIAL_AXES[p];
            let pair = &self.pairs[p];
            MatrixPair {
                spatial: pair.spatial.resample_mode(0, axes[a]).resample_mode(1, axes[b]),
                temporal: pair.temporal.resample_mode(0, axes[TEMPORAL_AXIS[p]]),
            }
        });
        Self { dims: new_dims, pairs }
    }

    pub(crate) fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let dims = self.dims.with_spatial([hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1]);
        let pairs = std::array::from_fn(|p| {
            let [a, b] = SPATIAL_AXES[p];
            let c = TEMPORAL_AXIS[p];
            let pair = &self.pairs[p];
            MatrixPair {
                spatial: pair.spatial.crop_mode(0, lo[a], hi[a]).crop_mode(1, lo[b], hi[b]),
                temporal: pair.temporal.crop_mode(0, lo[c], hi[c]),
            }
        });
        Self { dims, pairs }
    }

    pub(crate) fn reconstruct_dense(&self) -> DenseGrid4 {
        let d = self.dims;
        let mut dense = DenseGrid4::zeros(d);
        for a in 0..d.i {
            for b in 0..d.j {
                for c in 0..d.k {
                    for n in 0..d.n_t {
                        let idx = [a, b, c];
                        let mut v = 0.0;
                        for (p, pair) in self.pairs.iter().enumerate() {
                            let [sa, sb] = SPATIAL_AXES[p];
                            let tc = TEMPORAL_AXIS[p];
                            for r in 0..pair.spatial.rank() {
                                let s: f64 = pair.spatial.get(idx[sa], idx[sb], r).into();
                                let t: f64 = pair.temporal.get(idx[tc], n, r).into();
                                v += s * t;
                            }
                        }
                        *dense.get_mut(a, b, c, n) = v;
                    }
                }
            }
        }
        dense
    }
}

impl MmFactors<f32> {
    pub(crate) fn random(dims: GridDims, ranks: [usize; 3], bound: f64, rng: &mut impl Rng) -> Self {
        let mut f = Self::zeros(dims, ranks);
        for pair in f.pairs.iter_mut() {
            for arr in [&mut pair.spatial, &mut pair.temporal] {
                for v in arr.data_mut() {
                    *v = if bound > 0.0 { rng.gen_range(-bound..=bound) as f32 } else { 0.0 };
                }
            }
        }
        f
    }
}
