//! Feature-to-color decoders: a two-layer MLP over the appearance feature
//! and an encoded view direction, or a closed-form spherical-harmonics
//! evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aabb::Vec3;
use crate::error::{Error, Result};
use crate::factors::Scalar;

pub const HIDDEN_WIDTH: usize = 128;
/// sin/cos of `2^0·d` and `2^1·d` for each axis.
pub const VIEW_ENCODING_DIM: usize = 12;
pub const SH_DEGREE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Mlp,
    Sh,
}

/// Dense ReLU network `input → hidden → 3` with sigmoid output.
/// `w1` is `hidden × in_dim`, `w2` is `3 × hidden`, both row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T = f32> {
    pub in_dim: usize,
    pub hidden: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decoder {
    Mlp(Mlp),
    Sh { degree: usize },
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            in_dim,
            hidden,
            w1: vec![T::default(); hidden * in_dim],
            b1: vec![T::default(); hidden],
            w2: vec![T::default(); 3 * hidden],
            b2: vec![T::default(); 3],
        }
    }

    pub fn zeros_like<U: Scalar>(&self) -> Mlp<U> {
        Mlp::zeros(self.in_dim, self.hidden)
    }

    pub fn to_f64(&self) -> Mlp<f64> {
        let conv = |v: &[T]| v.iter().map(|&x| x.into()).collect();
        Mlp {
            in_dim: self.in_dim,
            hidden: self.hidden,
            w1: conv(&self.w1),
            b1: conv(&self.b1),
            w2: conv(&self.w2),
            b2: conv(&self.b2),
        }
    }

    pub fn arrays(&self) -> [(&'static str, &[T]); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut [T]); 4] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

impl Mlp<f32> {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn random(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(in_dim, hidden);
        let b1 = 1.0 / (in_dim as f64).sqrt();
        for w in &mut m.w1 {
            *w = rng.gen_range(-b1..b1) as f32;
        }
        let b2 = 1.0 / (hidden as f64).sqrt();
        for w in &mut m.w2 {
            *w = rng.gen_range(-b2..b2) as f32;
        }
        m
    }
}

/// Activations kept from an MLP forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: [f64; 3],
}

impl Mlp<f64> {
    pub fn forward(&self, feature: &[f64], view: &[f64; VIEW_ENCODING_DIM], cache: &mut MlpCache) -> [f64; 3] {
        debug_assert_eq!(feature.len() + VIEW_ENCODING_DIM, self.in_dim);
        cache.input.clear();
        cache.input.extend_from_slice(feature);
        cache.input.extend_from_slice(view);
        cache.hidden.clear();
        for h in 0..self.hidden {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            cache.hidden.push((self.b1[h] + dot(row, &cache.input)).max(0.0));
        }
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            *o = sigmoid(self.b2[c] + dot(row, &cache.hidden));
        }
        cache.out = out;
        out
    }

    /// Accumulates parameter gradients into `grad` and writes
    /// `∂/∂feature` into `dfeature`.
    pub fn backward(&self, cache: &MlpCache, dout: [f64; 3], grad: &mut Mlp<f64>, dfeature: &mut [f64]) {
        let mut dpre_out = [0.0; 3];
        for c in 0..3 {
            let s = cache.out[c];
            dpre_out[c] = dout[c] * s * (1.0 - s);
            grad.b2[c] += dpre_out[c];
            let grow = &mut grad.w2[c * self.hidden..(c + 1) * self.hidden];
            for (g, h) in grow.iter_mut().zip(&cache.hidden) {
                *g += dpre_out[c] * h;
            }
        }
        dfeature.fill(0.0);
        let n_feat = dfeature.len();
        for h in 0..self.hidden {
            if cache.hidden[h] <= 0.0 {
                continue;
            }
            let dh = dpre_out[0] * self.w2[h] + dpre_out[1] * self.w2[self.hidden + h] + dpre_out[2] * self.w2[2 * self.hidden + h];
            grad.b1[h] += dh;
            let off = h * self.in_dim;
            let grow = &mut grad.w1[off..off + self.in_dim];
            for (g, x) in grow.iter_mut().zip(&cache.input) {
                *g += dh * x;
            }
            let wrow = &self.w1[off..off + n_feat];
            for (d, w) in dfeature.iter_mut().zip(wrow) {
                *d += dh * w;
            }
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Mlp<f64>) {
        for ((_, a), (_, b)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let split = n - n % 4;
    for (ca, cb) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += ca[l].into() * cb[l];
        }
    }
    let tail: f64 = a[split..].iter().zip(&b[split..]).map(|(&x, y)| x.into() * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[sin(d), sin(2d)]` then `[cos(d), cos(2d)]`, each interleaved per axis.
pub fn encode_direction(d: &Vec3) -> [f64; VIEW_ENCODING_DIM] {
    let mut scaled = [0.0; 6];
    for a in 0..3 {
        scaled[2 * a] = d[a];
        scaled[2 * a + 1] = 2.0 * d[a];
    }
    let mut out = [0.0; VIEW_ENCODING_DIM];
    for i in 0..6 {
        out[i] = scaled[i].sin();
        out[6 + i] = scaled[i].cos();
    }
    out
}

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Real spherical-harmonic basis up to degree 2 at unit direction `d`.
pub fn sh_basis(degree: usize, d: &Vec3) -> [f64; 9] {
    const C0: f64 = 0.282_094_791_773_878_14;
    const C1: f64 = 0.488_602_511_902_919_9;
    const C2: [f64; 5] = [
        1.092_548_430_592_079_2,
        -1.092_548_430_592_079_2,
        0.315_391_565_252_520_05,
        -1.092_548_430_592_079_2,
        0.546_274_215_296_039_6,
    ];
    let (x, y, z) = (d.x, d.y, d.z);
    let mut b = [0.0; 9];
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * z * z - x * x - y * y);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (x * x - y * y);
    }
    b
}

/// SH color: channel `c` uses features `c·n .. (c+1)·n`, `n = (degree+1)^2`.
pub fn sh_color(degree: usize, feature: &[f64], basis: &[f64; 9]) -> [f64; 3] {
    let n = sh_coeff_count(degree);
    std::array::from_fn(|c| {
        let coeffs = &feature[c * n..(c + 1) * n];
        sigmoid(coeffs.iter().zip(basis).map(|(a, b)| a * b).sum())
    })
}

/// Checked single-point color decode.
pub fn decode_color(decoder: &Decoder, feature: &[f64], direction: &Vec3) -> Result<[f64; 3]> {
    if (direction.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "view direction must be unit length (norm {})",
            direction.norm()
        )));
    }
    match decoder {
        Decoder::Mlp(mlp) => {
            if feature.len() + VIEW_ENCODING_DIM != mlp.in_dim {
                return Err(Error::invalid(format!(
                    "feature length {} does not match decoder input {}",
                    feature.len(),
                    mlp.in_dim
                )));
            }
            let mut cache = MlpCache::default();
            Ok(mlp.to_f64().forward(feature, &encode_direction(direction), &mut cache))
        }
        Decoder::Sh { degree } => {
            if *degree > SH_DEGREE || feature.len() < 3 * sh_coeff_count(*degree) {
                return Err(Error::invalid(format!(
                    "SH degree {degree} needs {} features, got {}",
                    3 * sh_coeff_count(*degree),
                    feature.len()
                )));
            }
            Ok(sh_color(*degree, feature, &sh_basis(*degree, direction)))
        }
    }
}
