use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CellWeights, DenseGrid4, FactorArray, GridDims, Scalar};
use crate::error::{Error, Result};

/// CP factor set: one vector per axis per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpFactors<T = f32> {
    dims: GridDims,
    x: FactorArray<T>,
    y: FactorArray<T>,
    z: FactorArray<T>,
    t: FactorArray<T>,
}

impl<T: Scalar> CpFactors<T> {
    pub fn from_arrays(dims: GridDims, [x, y, z, t]: [FactorArray<T>; 4]) -> Result<Self> {
        dims.validate()?;
        let rank = x.rank();
        for (arr, len, name) in [(&x, dims.i, "x"), (&y, dims.j, "y"), (&z, dims.k, "z"), (&t, dims.n_t, "t")] {
            if arr.shape() != [len, 1] || arr.rank() != rank {
                return Err(Error::invalid(format!(
                    "CP factor {name} has shape {:?} rank {}, expected [{len}, 1] rank {rank}",
                    arr.shape(),
                    arr.rank()
                )));
            }
        }
        Ok(Self { dims, x, y, z, t })
    }

    /// Builds from per-component vectors (`vx[r]` has length `I`, etc.).
    pub fn from_vectors(
        dims: GridDims,
        vx: &[Vec<f64>],
        vy: &[Vec<f64>],
        vz: &[Vec<f64>],
        vt: &[Vec<f64>],
    ) -> Result<Self> {
        let rank = vx.len();
        if vy.len() != rank || vz.len() != rank || vt.len() != rank {
            return Err(Error::invalid("CP vectors disagree on rank"));
        }
        let pack = |vs: &[Vec<f64>], len: usize| -> Result<FactorArray<T>> {
            let mut arr = FactorArray::zeros([len, 1], rank);
            for (r, v) in vs.iter().enumerate() {
                if v.len() != len {
                    return Err(Error::invalid(format!("CP vector length {} != {len}", v.len())));
                }
                for (a, &val) in v.iter().enumerate() {
                    arr.set(a, 0, r, T::from_f64(val));
                }
            }
            Ok(arr)
        };
        Self::from_arrays(
            dims,
            [pack(vx, dims.i)?, pack(vy, dims.j)?, pack(vz, dims.k)?, pack(vt, dims.n_t)?],
        )
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn rank(&self) -> usize {
        self.x.rank()
    }

    pub fn t(&self) -> &FactorArray<T> {
        &self.t
    }

    pub fn t_mut(&mut self) -> &mut FactorArray<T> {
        &mut self.t
    }

    pub fn arrays(&self) -> Vec<(&'static str, &FactorArray<T>)> {
        vec![("x", &self.x), ("y", &self.y), ("z", &self.z), ("t", &self.t)]
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut FactorArray<T>)> {
        vec![("x", &mut self.x), ("y", &mut self.y), ("z", &mut self.z), ("t", &mut self.t)]
    }

    pub fn zeros_like<U: Scalar>(&self) -> CpFactors<U> {
        CpFactors {
            dims: self.dims,
            x: self.x.zeros_like(),
            y: self.y.zeros_like(),
            z: self.z.zeros_like(),
            t: self.t.zeros_like(),
        }
    }

    #[inline]
    pub(crate) fn component_values(&self, w: &CellWeights, out: &mut [f64]) {
        let [lx, ly, lz, lt] = &w.axes;
        self.x.linear_into(lx, out);
        self.y.linear_mul(ly, out);
        self.z.linear_mul(lz, out);
        self.t.linear_mul(lt, out);
    }

    pub(crate) fn component_grads(
        &self,
        w: &CellWeights,
        up: &[f64],
        grad: &mut CpFactors<f64>,
        scratch: &mut Vec<f64>,
    ) {
        let r_n = self.rank();
        scratch.resize(5 * r_n, 0.0);
        let (vals, other) = scratch.split_at_mut(4 * r_n);
        let arrays = [&self.x, &self.y, &self.z, &self.t];
        for (axis, arr) in arrays.iter().enumerate() {
            arr.linear_into(&w.axes[axis], &mut vals[axis * r_n..(axis + 1) * r_n]);
        }
        let grads = [&mut grad.x, &mut grad.y, &mut grad.z, &mut grad.t];
        for (axis, g) in grads.into_iter().enumerate() {
            for r in 0..r_n {
                let mut p = 1.0;
                for o in (0..4).filter(|&o| o != axis) {
                    p *= vals[o * r_n + r];
                }
                other[r] = p;
            }
            g.scatter_linear(&w.axes[axis], up, other);
        }
    }

    pub(crate) fn resample(&self, new_dims: GridDims) -> Self {
        Self {
            dims: new_dims,
            x: self.x.resample_mode(0, new_dims.i),
            y: self.y.resample_mode(0, new_dims.j),
            z: self.z.resample_mode(0, new_dims.k),
            t: self.t.clone(),
        }
    }

    pub(crate) fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let dims = self.dims.with_spatial([hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1]);
        Self {
            dims,
            x: self.x.crop_mode(0, lo[0], hi[0]),
            y: self.y.crop_mode(0, lo[1], hi[1]),
            z: self.z.crop_mode(0, lo[2], hi[2]),
            t: self.t.clone(),
        }
    }

    pub(crate) fn reconstruct_dense(&self) -> DenseGrid4 {
        let d = self.dims;
        let mut dense = DenseGrid4::zeros(d);
        for r in 0..self.rank() {
            for a in 0..d.i {
                let va: f64 = self.x.get(a, 0, r).into();
                for b in 0..d.j {
                    let vb: f64 = self.y.get(b, 0, r).into();
                    for c in 0..d.k {
                        let vc: f64 = self.z.get(c, 0, r).into();
                        for n in 0..d.n_t {
                            let vn: f64 = self.t.get(n, 0, r).into();
                            *dense.get_mut(a, b, c, n) += va * vb * vc * vn;
                        }
                    }
                }
            }
        }
        dense
    }
}

impl CpFactors<f32> {
    pub(crate) fn random(dims: GridDims, rank: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let mut draw = |len: usize| {
            let mut arr = FactorArray::zeros([len, 1], rank);
            for v in arr.data_mut() {
                *v = if bound > 0.0 { rng.gen_range(-bound..=bound) as f32 } else { 0.0 };
            }
            arr
        };
        let x = draw(dims.i);
        let y = draw(dims.j);
        let z = draw(dims.k);
        let t = draw(dims.n_t);
        Self { dims, x, y, z, t }
    }
}
