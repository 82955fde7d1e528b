//! Ray marching through a [`RadianceModel`] with a hand-derived backward
//! pass.

use rayon::prelude::*;

use super::{blend, compute_weights, default_step_size, march, sigma_grads, Camera, Image, Ray, RenderOptions};
use crate::error::{Error, Result};
use crate::factors::CellWeights;
use crate::model::decoder::{encode_direction, sh_basis, sh_coeff_count, sigmoid, MlpCache};
use crate::model::{project_basis, Decoder, Mlp, ModelGrads, RadianceModel};

/// A model prepared for repeated ray evaluation: network weights widened
/// to `f64` and the step size resolved.
pub struct ModelEval<'a> {
    model: &'a RadianceModel,
    basis: Vec<f64>,
    mlp: Option<Mlp<f64>>,
    step: f64,
    opts: RenderOptions,
}

/// Per-ray scratch buffers, reused across rays.
#[derive(Default)]
pub struct TraceWorkspace {
    cells: Vec<CellWeights>,
    raw: Vec<f64>,
    sigmas: Vec<f64>,
    deltas: Vec<f64>,
    weights: Vec<f64>,
    trans: Vec<f64>,
    colors: Vec<[f64; 3]>,
    /// Indices of colored samples.
    colored: Vec<usize>,
    stacked: Vec<f64>,
    caches: Vec<MlpCache>,
    sh: Vec<[f64; 9]>,
    view: [f64; 12],
    color_dot: Vec<f64>,
    dsigma: Vec<f64>,
    scratch: Vec<f64>,
    up: Vec<f64>,
    feature: Vec<f64>,
    dfeature: Vec<f64>,
    dstacked: Vec<f64>,
    rgb: [f64; 3],
}

impl TraceWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Samples kept on the last traced ray.
    pub fn n_samples(&self) -> usize {
        self.sigmas.len()
    }

    /// Compositing weights of the last traced ray.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.rgb
    }
}

impl<'a> ModelEval<'a> {
    pub fn new(model: &'a RadianceModel, opts: &RenderOptions) -> Result<Self> {
        let step = opts.step_size.unwrap_or_else(|| default_step_size(&model.aabb, &model.dims()));
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {step}")));
        }
        Ok(Self {
            model,
            basis: model.basis.iter().map(|&b| b as f64).collect(),
            mlp: match &model.decoder {
                Decoder::Mlp(m) => Some(m.to_f64()),
                Decoder::Sh { .. } => None,
            },
            step,
            opts: opts.clone(),
        })
    }

    pub fn model(&self) -> &RadianceModel {
        self.model
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn options(&self) -> &RenderOptions {
        &self.opts
    }

    /// Renders one ray. `offset` in `[0, 1)` places samples at
    /// `t_n + (i + offset)·step`. Intermediate values stay in `ws` for
    /// [`ModelEval::backward`].
    pub fn forward(&self, ray: &Ray, time: f64, offset: f64, ws: &mut TraceWorkspace) -> [f64; 3] {
        let m = self.model;
        let mask = if self.opts.use_mask { m.mask.as_ref() } else { None };
        ws.cells.clear();
        ws.raw.clear();
        ws.sigmas.clear();
        let geom = &m.geometry;
        let scratch = &mut ws.scratch;
        march(ray, &m.aabb, self.step, offset, |t| {
            let p = ray.at(t);
            if mask.is_some_and(|mk| !mk.occupied(&p)) {
                return;
            }
            let w = m.cell_weights(&p, time);
            let raw = geom.sample_at(&w, scratch);
            ws.cells.push(w);
            ws.raw.push(raw);
            ws.sigmas.push(raw.max(0.0));
        });
        let n = ws.sigmas.len();
        ws.deltas.clear();
        ws.deltas.resize(n, self.step);
        compute_weights(&ws.sigmas, &ws.deltas, &mut ws.weights, &mut ws.trans);

        ws.colors.clear();
        ws.colors.resize(n, [0.0; 3]);
        ws.colored.clear();
        let n_app = m.appearance.n_components();
        let p_dim = m.feature_dim;
        ws.view = encode_direction(&ray.dir);
        let sh_dirs = match &m.decoder {
            Decoder::Sh { degree } => Some((*degree, sh_basis(*degree, &ray.dir))),
            Decoder::Mlp(_) => None,
        };
        ws.feature.resize(p_dim, 0.0);
        for i in 0..n {
            if ws.weights[i] <= self.opts.weight_threshold {
                continue;
            }
            let slot = ws.colored.len();
            ws.colored.push(i);
            ws.stacked.resize((slot + 1) * n_app, 0.0);
            let st = &mut ws.stacked[slot * n_app..(slot + 1) * n_app];
            m.appearance.component_values(&ws.cells[i], st);
            project_basis(&self.basis, st, &mut ws.feature);
            ws.colors[i] = match (&self.mlp, sh_dirs) {
                (Some(mlp), _) => {
                    if ws.caches.len() <= slot {
                        ws.caches.push(MlpCache::default());
                    }
                    mlp.forward(&ws.feature, &ws.view, &mut ws.caches[slot])
                }
                (None, Some((degree, basis))) => {
                    if ws.sh.len() <= slot {
                        ws.sh.push([0.0; 9]);
                    }
                    ws.sh[slot] = basis;
                    sh_color_raw(degree, &ws.feature, &basis)
                }
                (None, None) => unreachable!(),
            };
        }
        ws.rgb = blend(&ws.weights, &ws.colors, self.opts.background);
        ws.rgb
    }

    /// Accumulates `∂(dpixel · C)/∂θ` for the ray last passed to
    /// [`ModelEval::forward`] with this workspace.
    pub fn backward(&self, ws: &mut TraceWorkspace, dpixel: [f64; 3], grads: &mut ModelGrads) {
        let m = self.model;
        let n = ws.sigmas.len();
        if n == 0 {
            return;
        }
        let bg = self.opts.background;
        ws.color_dot.clear();
        ws.color_dot
            .extend(ws.colors.iter().map(|c| (0..3).map(|ch| dpixel[ch] * (c[ch] - bg[ch])).sum::<f64>()));
        sigma_grads(&ws.sigmas, &ws.deltas, &ws.weights, &ws.trans, &ws.color_dot, &mut ws.dsigma);

        let n_geo = m.geometry.n_components();
        for i in 0..n {
            if ws.raw[i] <= 0.0 || ws.dsigma[i] == 0.0 {
                continue;
            }
            ws.up.clear();
            ws.up.resize(n_geo, ws.dsigma[i]);
            m.geometry.component_grads(&ws.cells[i], &ws.up, &mut grads.geometry, &mut ws.scratch);
        }

        let n_app = m.appearance.n_components();
        let p_dim = m.feature_dim;
        ws.dfeature.resize(p_dim, 0.0);
        ws.dstacked.resize(n_app, 0.0);
        for (slot, &i) in ws.colored.iter().enumerate() {
            let w = ws.weights[i];
            let dc = dpixel.map(|g| g * w);
            match (&self.mlp, &m.decoder) {
                (Some(mlp), _) => {
                    let g = grads.decoder.as_mut().expect("decoder gradient buffer");
                    mlp.backward(&ws.caches[slot], dc, g, &mut ws.dfeature);
                }
                (None, Decoder::Sh { degree }) => {
                    let nc = sh_coeff_count(*degree);
                    let basis = &ws.sh[slot];
                    ws.dfeature.fill(0.0);
                    let c = ws.colors[i];
                    for ch in 0..3 {
                        let dpre = dc[ch] * c[ch] * (1.0 - c[ch]);
                        for k in 0..nc {
                            ws.dfeature[ch * nc + k] = dpre * basis[k];
                        }
                    }
                }
                (None, Decoder::Mlp(_)) => unreachable!(),
            }
            let st = &ws.stacked[slot * n_app..(slot + 1) * n_app];
            ws.dstacked.fill(0.0);
            for (p, &df) in ws.dfeature.iter().enumerate() {
                if df == 0.0 {
                    continue;
                }
                let row = p * n_app;
                let brow = &self.basis[row..row + n_app];
                let grow = &mut grads.basis[row..row + n_app];
                for j in 0..n_app {
                    grow[j] += df * st[j];
                    ws.dstacked[j] += df * brow[j];
                }
            }
            m.appearance.component_grads(&ws.cells[i], &ws.dstacked, &mut grads.appearance, &mut ws.scratch);
        }
    }

    /// Renders every pixel of `camera` at `time`.
    pub fn render(&self, camera: &Camera, time: f64) -> Image {
        let (w, h) = (camera.width(), camera.height());
        let jitter = self.opts.jitter;
        let rows: Vec<Vec<f32>> = (0..h)
            .into_par_iter()
            .map_init(TraceWorkspace::new, |ws, py| {
                let mut row = Vec::with_capacity(3 * w as usize);
                for px in 0..w {
                    let offset = if jitter { pixel_offset(px, py) } else { 0.5 };
                    let rgb = self.forward(&camera.ray(px, py), time, offset, ws);
                    row.extend(rgb.iter().map(|&v| v as f32));
                }
                row
            })
            .collect();
        Image::from_rgb(w, h, rows.concat()).expect("row sizes are consistent")
    }
}

/// Deterministic per-pixel sample offset in `[0, 1)` for jittered renders.
fn pixel_offset(px: u32, py: u32) -> f64 {
    let mut z = ((py as u64) << 32 | px as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn sh_color_raw(degree: usize, feature: &[f64], basis: &[f64; 9]) -> [f64; 3] {
    let n = sh_coeff_count(degree);
    std::array::from_fn(|c| sigmoid(feature[c * n..(c + 1) * n].iter().zip(basis).map(|(a, b)| a * b).sum()))
}

/// Renders a full frame of `model` at normalized time `time`.
pub fn render_image(model: &RadianceModel, camera: &Camera, time: f64, opts: &RenderOptions) -> Result<Image> {
    Ok(ModelEval::new(model, opts)?.render(camera, time))
}

/// Renders with a prepared evaluator, avoiding repeated setup across frames.
pub fn render_image_with(eval: &ModelEval<'_>, camera: &Camera, time: f64) -> Image {
    eval.render(camera, time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aabb::{Aabb, Vec3};
    use crate::factors::{FactorKind, GridDims};
    use crate::model::{DecoderKind, ModelSpec, FEATURE_DIM};

    fn model(kind: FactorKind, decoder: DecoderKind) -> RadianceModel {
        RadianceModel::new(&ModelSpec {
            kind,
            density_rank: 2,
            appearance_rank: Some(3),
            dims: GridDims::new(5, 4, 6, 3).unwrap(),
            aabb: Aabb::cube(1.0),
            decoder,
            feature_dim: FEATURE_DIM,
            density_init_scale: 3.0,
            appearance_init_scale: 1.0,
            seed: 11,
        })
        .unwrap()
    }

    fn opts() -> RenderOptions {
        RenderOptions { step_size: Some(0.15), weight_threshold: 0.0, use_mask: false, ..Default::default() }
    }

    #[test]
    fn forward_matches_field_renderer() {
        for dec in [DecoderKind::Mlp, DecoderKind::Sh] {
            let m = model(FactorKind::Mm, dec);
            let o = opts();
            let eval = ModelEval::new(&m, &o).unwrap();
            let ray = Ray { origin: Vec3::new(-3.0, 0.1, 0.2), dir: Vec3::new(1.0, 0.05, -0.1).normalize() };
            let mut ws = TraceWorkspace::new();
            let a = eval.forward(&ray, 0.4, 0.5, &mut ws);
            let b = super::super::render_field_ray(&m, &ray, 0.4, &m.aabb, 0.15, o.background);
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_basis() {
        let mut m = model(FactorKind::Cp, DecoderKind::Sh);
        let o = opts();
        let ray = Ray { origin: Vec3::new(0.1, -3.0, 0.0), dir: Vec3::new(0.0, 1.0, 0.1).normalize() };
        let dp = [0.4, -0.3, 0.9];
        let f = |m: &RadianceModel| {
            let e = ModelEval::new(m, &o).unwrap();
            let c = e.forward(&ray, 0.7, 0.3, &mut TraceWorkspace::new());
            (0..3).map(|i| dp[i] * c[i]).sum::<f64>()
        };
        let eval = ModelEval::new(&m, &o).unwrap();
        let mut ws = TraceWorkspace::new();
        eval.forward(&ray, 0.7, 0.3, &mut ws);
        let mut g = m.zero_grads();
        eval.backward(&mut ws, dp, &mut g);
        for idx in [0usize, 5, 17, 40] {
            let orig = m.basis[idx];
            m.basis[idx] = orig + 1e-3;
            let hi = m.basis[idx] as f64;
            let fp = f(&m);
            m.basis[idx] = orig - 1e-3;
            let lo = m.basis[idx] as f64;
            let fm = f(&m);
            m.basis[idx] = orig;
            let fd = (fp - fm) / (hi - lo);
            assert!((fd - g.basis[idx]).abs() < 1e-5 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", g.basis[idx]);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let m = model(FactorKind::Mm, DecoderKind::Mlp);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), 0.8, 8, 6).unwrap();
        let a = render_image(&m, &cam, 0.2, &RenderOptions::default()).unwrap();
        let b = render_image(&m, &cam, 0.2, &RenderOptions::default()).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
