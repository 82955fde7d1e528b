//! Ray generation, ray marching and the quadrature compositing rule.
//!
//! For samples with densities `σ_i` and spacings `δ_i`:
//!
//! ```text
//! T_i = exp(-Σ_{j<i} σ_j δ_j)
//! w_i = T_i (1 - exp(-σ_i δ_i))
//! C   = Σ_i w_i c_i + (1 - Σ_i w_i) · background
//! ```

mod camera;
mod image;
mod mask;
mod trace;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use camera::{Camera, Ray};
pub use image::Image;
pub use mask::OccupancyMask;
pub use trace::{render_image, render_image_with, ModelEval, TraceWorkspace};

use crate::aabb::{Aabb, Vec3};
use crate::factors::GridDims;

/// Options controlling ray marching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Overrides the grid-derived step size.
    pub step_size: Option<f64>,
    /// Random per-ray offset of the first sample (training only).
    pub jitter: bool,
    pub background: [f64; 3],
    /// Samples with compositing weight at or below this are not colored.
    pub weight_threshold: f64,
    /// Skip samples in empty occupancy-mask cells.
    pub use_mask: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            step_size: None,
            jitter: false,
            background: [1.0; 3],
            weight_threshold: 1e-4,
            use_mask: true,
        }
    }
}

/// Half of the mean voxel size, i.e. about two samples per voxel.
pub fn default_step_size(aabb: &Aabb, dims: &GridDims) -> f64 {
    let s = aabb.size();
    let n = dims.spatial();
    let voxel: f64 = (0..3).map(|a| s[a] / (n[a].max(2) - 1) as f64).sum::<f64>() / 3.0;
    0.5 * voxel
}

/// Samples along one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub positions: Vec<Vec3>,
    /// False where the occupancy mask marks the cell empty.
    pub occupied: Vec<bool>,
    pub time: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Parametric distances of uniformly spaced samples inside the box:
/// `t_n + (i + offset)·step` for every value below `t_f`. `offset` is in
/// `[0, 1)`; 0.5 places samples at interval midpoints.
#[inline]
pub(crate) fn march(ray: &Ray, aabb: &Aabb, step: f64, offset: f64, mut f: impl FnMut(f64)) {
    let Some((t_near, t_far)) = aabb.intersect(&ray.origin, &ray.dir) else {
        return;
    };
    let n = ((t_far - t_near) / step).ceil() as usize;
    for i in 0..n {
        let t = t_near + (i as f64 + offset) * step;
        if t >= t_far {
            break;
        }
        f(t);
    }
}

/// Uniform samples along `ray` inside `aabb`. `jitter` is the per-ray
/// offset in `[0, 1)`; `None` places samples at interval midpoints.
pub fn sample_points(
    ray: &Ray,
    aabb: &Aabb,
    step: f64,
    jitter: Option<f64>,
    mask: Option<&OccupancyMask>,
    time: f64,
) -> SampleBatch {
    assert!(step > 0.0, "step size must be positive");
    let mut batch = SampleBatch { time, ..Default::default() };
    march(ray, aabb, step, jitter.unwrap_or(0.5), |t| {
        let p = ray.at(t);
        batch.t.push(t);
        batch.delta.push(step);
        batch.occupied.push(mask.map_or(true, |m| m.occupied(&p)));
        batch.positions.push(p);
    });
    batch
}

/// Result of compositing one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    /// `T_i` for each sample.
    pub transmittance: Vec<f64>,
}

/// Fills `weights[i] = T_i (1 - exp(-σ_i δ_i))` and `trans[i] = T_i`.
#[inline]
pub fn compute_weights(sigmas: &[f64], deltas: &[f64], weights: &mut Vec<f64>, trans: &mut Vec<f64>) {
    weights.clear();
    trans.clear();
    let mut t = 1.0;
    for (&s, &d) in sigmas.iter().zip(deltas) {
        let att = (-s * d).exp();
        trans.push(t);
        weights.push(t * (1.0 - att));
        t *= att;
    }
}

pub fn composite(sigmas: &[f64], colors: &[[f64; 3]], deltas: &[f64], background: [f64; 3]) -> Composite {
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut transmittance = Vec::with_capacity(sigmas.len());
    compute_weights(sigmas, deltas, &mut weights, &mut transmittance);
    let rgb = blend(&weights, colors, background);
    Composite { rgb, weights, transmittance }
}

#[inline]
pub(crate) fn blend(weights: &[f64], colors: &[[f64; 3]], background: [f64; 3]) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    let mut acc = 0.0;
    for (w, c) in weights.iter().zip(colors) {
        for ch in 0..3 {
            rgb[ch] += w * c[ch];
        }
        acc += w;
    }
    for ch in 0..3 {
        rgb[ch] += (1.0 - acc) * background[ch];
    }
    rgb
}

/// Gradient of `dpixel · C` w.r.t. each `σ_i`, given weights and
/// transmittance from the forward pass. Colors enter through
/// `g_i = dpixel · (c_i - background)`.
#[inline]
pub(crate) fn sigma_grads(
    sigmas: &[f64],
    deltas: &[f64],
    weights: &[f64],
    trans: &[f64],
    color_dot: &[f64],
    out: &mut Vec<f64>,
) {
    let n = sigmas.len();
    out.clear();
    out.resize(n, 0.0);
    let mut suffix = 0.0;
    for k in (0..n).rev() {
        let t_next = trans[k] * (-sigmas[k] * deltas[k]).exp();
        out[k] = deltas[k] * (t_next * color_dot[k] - suffix);
        suffix += weights[k] * color_dot[k];
    }
}

/// Backward of [`composite`]: returns `(∂/∂σ_i, ∂/∂c_i)` of `dpixel · C`.
pub fn composite_backward(
    sigmas: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    background: [f64; 3],
    dpixel: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let fwd = composite(sigmas, colors, deltas, background);
    let color_dot: Vec<f64> = colors
        .iter()
        .map(|c| (0..3).map(|ch| dpixel[ch] * (c[ch] - background[ch])).sum())
        .collect();
    let mut dsigma = Vec::new();
    sigma_grads(sigmas, deltas, &fwd.weights, &fwd.transmittance, &color_dot, &mut dsigma);
    let dcolor = fwd.weights.iter().map(|w| dpixel.map(|g| g * w)).collect();
    (dsigma, dcolor)
}

/// A time-varying radiance field that can be ray-marched.
pub trait RadianceField: Sync {
    fn density(&self, p: &Vec3, t: f64) -> f64;
    fn color(&self, p: &Vec3, dir: &Vec3, t: f64) -> [f64; 3];
}

/// Renders one pixel of an arbitrary field with midpoint sampling.
pub fn render_field_ray(
    field: &dyn RadianceField,
    ray: &Ray,
    time: f64,
    aabb: &Aabb,
    step: f64,
    background: [f64; 3],
) -> [f64; 3] {
    let mut sigmas = Vec::new();
    let mut positions = Vec::new();
    march(ray, aabb, step, 0.5, |t| {
        let p = ray.at(t);
        sigmas.push(field.density(&p, time));
        positions.push(p);
    });
    let deltas = vec![step; sigmas.len()];
    let colors: Vec<[f64; 3]> = positions
        .iter()
        .zip(&sigmas)
        .map(|(p, &s)| if s > 0.0 { field.color(p, &ray.dir, time) } else { [0.0; 3] })
        .collect();
    composite(&sigmas, &colors, &deltas, background).rgb
}

/// Renders a full frame of an arbitrary field.
pub fn render_field(
    field: &dyn RadianceField,
    camera: &Camera,
    time: f64,
    aabb: &Aabb,
    step: f64,
    background: [f64; 3],
) -> Image {
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|py| {
            let mut row = Vec::with_capacity(3 * w as usize);
            for px in 0..w {
                let rgb = render_field_ray(field, &camera.ray(px, py), time, aabb, step, background);
                row.extend(rgb.iter().map(|&v| v as f32));
            }
            row
        })
        .collect();
    Image::from_rgb(w, h, rows.concat()).expect("row sizes are consistent")
}
