use serde::{Deserialize, Serialize};

use super::{AxisLerp, Scalar};

/// A family of `rank` two-mode arrays stored with the component index
/// innermost, so the corners touched by one interpolation are contiguous
/// runs of `rank` values.
///
/// Vectors are stored as `[len, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorArray<T = f32> {
    shape: [usize; 2],
    rank: usize,
    data: Vec<T>,
}

impl<T: Scalar> FactorArray<T> {
    pub fn zeros(shape: [usize; 2], rank: usize) -> Self {
        Self {
            shape,
            rank,
            data: vec![T::default(); shape[0] * shape[1] * rank],
        }
    }

    pub fn from_data(shape: [usize; 2], rank: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == shape[0] * shape[1] * rank).then_some(Self { shape, rank, data })
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, r: usize) -> usize {
        (a * self.shape[1] + b) * self.rank + r
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, r: usize) -> T {
        self.data[self.index(a, b, r)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, r: usize, v: T) {
        let idx = self.index(a, b, r);
        self.data[idx] = v;
    }

    pub fn zeros_like<U: Scalar>(&self) -> FactorArray<U> {
        FactorArray::zeros(self.shape, self.rank)
    }

    /// `out[r] = lerp along mode 0` for a `[len, 1]` array.
    #[inline]
    pub(crate) fn linear_into(&self, l: &AxisLerp, out: &mut [f64]) {
        let r_n = self.rank;
        let lo = &self.data[l.i0 * r_n..(l.i0 + 1) * r_n];
        let hi = &self.data[l.i1 * r_n..(l.i1 + 1) * r_n];
        let w0 = 1.0 - l.w;
        for ((o, &a), &b) in out.iter_mut().zip(lo).zip(hi) {
            *o = w0 * a.into() + l.w * b.into();
        }
    }

    /// `out[r] *= lerp along mode 0`.
    #[inline]
    pub(crate) fn linear_mul(&self, l: &AxisLerp, out: &mut [f64]) {
        let r_n = self.rank;
        let lo = &self.data[l.i0 * r_n..(l.i0 + 1) * r_n];
        let hi = &self.data[l.i1 * r_n..(l.i1 + 1) * r_n];
        let w0 = 1.0 - l.w;
        for ((o, &a), &b) in out.iter_mut().zip(lo).zip(hi) {
            *o *= w0 * a.into() + l.w * b.into();
        }
    }

    /// `out[r] = bilinear sample` at `(la, lb)`.
    #[inline]
    pub(crate) fn bilinear_into(&self, la: &AxisLerp, lb: &AxisLerp, out: &mut [f64]) {
        let [w00, w01, w10, w11] = corner_weights(la, lb);
        let [c00, c01, c10, c11] = self.corner_offsets(la, lb);
        let d = &self.data;
        for (r, o) in out.iter_mut().enumerate() {
            *o = w00 * d[c00 + r].into()
                + w01 * d[c01 + r].into()
                + w10 * d[c10 + r].into()
                + w11 * d[c11 + r].into();
        }
    }

    #[inline]
    pub(crate) fn bilinear_mul(&self, la: &AxisLerp, lb: &AxisLerp, out: &mut [f64]) {
        let [w00, w01, w10, w11] = corner_weights(la, lb);
        let [c00, c01, c10, c11] = self.corner_offsets(la, lb);
        let d = &self.data;
        for (r, o) in out.iter_mut().enumerate() {
            *o *= w00 * d[c00 + r].into()
                + w01 * d[c01 + r].into()
                + w10 * d[c10 + r].into()
                + w11 * d[c11 + r].into();
        }
    }

    #[inline]
    fn corner_offsets(&self, la: &AxisLerp, lb: &AxisLerp) -> [usize; 4] {
        [
            self.index(la.i0, lb.i0, 0),
            self.index(la.i0, lb.i1, 0),
            self.index(la.i1, lb.i0, 0),
            self.index(la.i1, lb.i1, 0),
        ]
    }

    /// Iterates `(base, stride, len)` over every fiber running along `mode`,
    /// one per (other-mode index, component) pair.
    pub fn fibers(&self, mode: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let [a_n, b_n] = self.shape;
        let r_n = self.rank;
        let (outer, stride, len) = match mode {
            0 => (b_n, b_n * r_n, a_n),
            _ => (a_n, r_n, b_n),
        };
        (0..outer).flat_map(move |o| {
            (0..r_n).map(move |r| {
                let base = if mode == 0 { o * r_n + r } else { o * b_n * r_n + r };
                (base, stride, len)
            })
        })
    }

    /// Linear resampling along one mode with corner-aligned endpoints.
    pub fn resample_mode(&self, mode: usize, new_len: usize) -> FactorArray<T> {
        let old_len = self.shape[mode];
        let mut shape = self.shape;
        shape[mode] = new_len;
        let mut out = FactorArray::zeros(shape, self.rank);
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                let (idx, other) = if mode == 0 { (a, b) } else { (b, a) };
                let src = if new_len > 1 {
                    idx as f64 * (old_len - 1) as f64 / (new_len - 1) as f64
                } else {
                    0.0
                };
                let l = AxisLerp::new(src, old_len);
                for r in 0..self.rank {
                    let (lo, hi) = if mode == 0 {
                        (self.get(l.i0, other, r), self.get(l.i1, other, r))
                    } else {
                        (self.get(other, l.i0, r), self.get(other, l.i1, r))
                    };
                    let v = (1.0 - l.w) * lo.into() + l.w * hi.into();
                    out.set(a, b, r, T::from_f64(v));
                }
            }
        }
        out
    }

    /// Keeps the inclusive index range `[lo, hi]` along `mode`.
    pub fn crop_mode(&self, mode: usize, lo: usize, hi: usize) -> FactorArray<T> {
        let mut shape = self.shape;
        shape[mode] = hi - lo + 1;
        let mut out = FactorArray::zeros(shape, self.rank);
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                let (sa, sb) = if mode == 0 { (a + lo, b) } else { (a, b + lo) };
                for r in 0..self.rank {
                    out.set(a, b, r, self.get(sa, sb, r));
                }
            }
        }
        out
    }
}

impl FactorArray<f64> {
    /// Adds `up[r] * other[r] * w` to each linear corner.
    #[inline]
    pub(crate) fn scatter_linear(&mut self, l: &AxisLerp, up: &[f64], other: &[f64]) {
        let r_n = self.rank;
        let w0 = 1.0 - l.w;
        for r in 0..r_n {
            let g = up[r] * other[r];
            self.data[l.i0 * r_n + r] += w0 * g;
            self.data[l.i1 * r_n + r] += l.w * g;
        }
    }

    #[inline]
    pub(crate) fn scatter_bilinear(
        &mut self,
        la: &AxisLerp,
        lb: &AxisLerp,
        up: &[f64],
        other: &[f64],
    ) {
        let [w00, w01, w10, w11] = corner_weights(la, lb);
        let [c00, c01, c10, c11] = self.corner_offsets(la, lb);
        let d = &mut self.data;
        for r in 0..up.len() {
            let g = up[r] * other[r];
            d[c00 + r] += w00 * g;
            d[c01 + r] += w01 * g;
            d[c10 + r] += w10 * g;
            d[c11 + r] += w11 * g;
        }
    }

    pub(crate) fn add_assign(&mut self, other: &FactorArray<f64>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[inline]
fn corner_weights(la: &AxisLerp, lb: &AxisLerp) -> [f64; 4] {
    let (a0, a1) = (1.0 - la.w, la.w);
    let (b0, b1) = (1.0 - lb.w, lb.w);
    [a0 * b0, a0 * b1, a1 * b0, a1 * b1]
}
