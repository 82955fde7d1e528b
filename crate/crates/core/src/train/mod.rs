//! Optimization of a [`RadianceModel`] against a posed, timed image set.

mod schedule;
mod smooth;

use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use schedule::{build_occupancy_mask, crop_range, resolution_for, voxel_schedule, MaskOutcome};
pub use smooth::{
    factor_count, kernel_weights, l1_loss, smoothing_loss, smoothing_loss_array, smoothing_loss_cp, smoothing_loss_mm,
    SmoothingSpec,
};

use crate::aabb::Aabb;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::factors::{FactorKind, GridDims};
use crate::metrics::psnr;
use crate::model::{DecoderKind, GroupRole, ModelGrads, ModelSpec, RadianceModel, FEATURE_DIM};
use crate::optim::{adam_step, lr_schedule, AdamConfig, AdamState, ParamGroup};
use crate::render::{ModelEval, Ray, RenderOptions, TraceWorkspace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: FactorKind,
    /// `R_σ`; for MM the rank of each of the three pairings.
    pub density_rank: usize,
    /// `R_c`; `3·R_σ` when unset.
    pub appearance_rank: Option<usize>,
    pub decoder: DecoderKind,
    pub feature_dim: usize,
    /// Initial voxel count is `initial_resolution³`.
    pub initial_resolution: usize,
    /// Final voxel count is `final_resolution³`.
    pub final_resolution: usize,
    pub upsample_steps: Vec<usize>,
    /// Step at which the occupancy mask is built and the box shrunk.
    pub mask_step: Option<usize>,
    pub total_steps: usize,
    /// Rays per step.
    pub batch_size: usize,
    pub lambda_smooth: f64,
    pub lambda_l1: f64,
    pub smoothing: SmoothingSpec,
    /// `N_t = round(factor × n_train)`, at least 2.
    pub n_t_factor: f64,
    /// Overrides the `N_t` rule.
    pub n_t: Option<usize>,
    pub optimizer: AdamConfig,
    pub density_init_scale: f64,
    pub appearance_init_scale: f64,
    pub seed: u64,
    /// Ray-marching settings during training; jitter is forced on.
    pub render: RenderOptions,
    /// Scene box; the dataset's when unset.
    pub aabb: Option<Aabb>,
    /// Opacity below which mask corners count as empty.
    pub mask_alpha: f64,
    /// Steps between log records.
    pub log_every: usize,
    /// Steps between validation renders of the first test frame; 0 disables.
    pub val_every: usize,
    /// Fixed number of ray chunks whose gradients are summed in order.
    pub grad_chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: FactorKind::Mm,
            density_rank: 16,
            appearance_rank: None,
            decoder: DecoderKind::Mlp,
            feature_dim: FEATURE_DIM,
            initial_resolution: 64,
            final_resolution: 150,
            upsample_steps: vec![2000, 3000, 4000, 5500, 7000],
            mask_step: Some(2000),
            total_steps: 30000,
            batch_size: 4096,
            lambda_smooth: 1e-4,
            lambda_l1: 1e-4,
            smoothing: SmoothingSpec::default(),
            n_t_factor: 0.25,
            n_t: None,
            optimizer: AdamConfig::default(),
            density_init_scale: 0.1,
            appearance_init_scale: 0.1,
            seed: 0,
            render: RenderOptions::default(),
            aabb: None,
            mask_alpha: 1e-4,
            log_every: 100,
            val_every: 0,
            grad_chunks: 8,
        }
    }
}

impl TrainConfig {
    /// The desk-scale preset used for the synthetic tiny scene: 24³ growing
    /// to 48³ voxels over 2000 steps of 1024 rays.
    pub fn tiny(kind: FactorKind) -> Self {
        Self {
            kind,
            density_rank: match kind {
                FactorKind::Mm => 4,
                FactorKind::Cp => 12,
            },
            initial_resolution: 24,
            final_resolution: 48,
            upsample_steps: vec![300, 600, 900, 1200],
            mask_step: Some(600),
            total_steps: 2000,
            batch_size: 1024,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        self.optimizer.validate()?;
        let bad = |m: String| Err(Error::invalid(m));
        if self.density_rank == 0 || self.appearance_rank == Some(0) {
            return bad("ranks must be positive".into());
        }
        if self.initial_resolution < 2 || self.final_resolution < self.initial_resolution {
            return bad(format!(
                "resolutions must satisfy 2 <= initial ({}) <= final ({})",
                self.initial_resolution, self.final_resolution
            ));
        }
        if self.upsample_steps.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("upsample steps {:?} are not strictly ascending", self.upsample_steps));
        }
        if self.total_steps > 0 && self.upsample_steps.last().is_some_and(|&s| s >= self.total_steps) {
            return bad(format!("upsample steps {:?} must be below total steps {}", self.upsample_steps, self.total_steps));
        }
        if !(self.lambda_smooth >= 0.0 && self.lambda_l1 >= 0.0) {
            return bad("regularization weights must be >= 0".into());
        }
        if self.batch_size == 0 || self.grad_chunks == 0 || self.log_every == 0 {
            return bad("batch_size, grad_chunks and log_every must be positive".into());
        }
        if self.n_t == Some(0) || !(self.n_t_factor > 0.0) {
            return bad("N_t must be positive".into());
        }
        Ok(())
    }

    pub fn n_t_for(&self, n_train: usize) -> usize {
        self.n_t.unwrap_or_else(|| ((self.n_t_factor * n_train as f64).round() as usize).max(2))
    }

    pub fn appearance_rank(&self) -> usize {
        self.appearance_rank.unwrap_or(3 * self.density_rank)
    }
}

/// Rays with their times, sample offsets and target colors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub times: Vec<f64>,
    pub offsets: Vec<f64>,
    pub targets: Vec<[f64; 3]>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Weights of the loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_l1: f64,
    pub smoothing: SmoothingSpec,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self { lambda_smooth: c.lambda_smooth, lambda_l1: c.lambda_l1, smoothing: c.smoothing.clone() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Mean squared error over rays and channels.
    pub photo: f64,
    pub smooth: f64,
    pub l1: f64,
}

/// `L = L_photo + λ_smooth·L_smooth + λ_L1·L_L1` on `batch` and its
/// gradient. Rays are split into `chunks` fixed groups whose gradients are
/// summed in order, so the result does not depend on thread count.
pub fn loss_and_grad(
    model: &RadianceModel,
    batch: &RayBatch,
    weights: &LossWeights,
    opts: &RenderOptions,
    chunks: usize,
) -> Result<(LossParts, ModelGrads)> {
    let eval = ModelEval::new(model, opts)?;
    let n = batch.len();
    let norm = 1.0 / (3 * n.max(1)) as f64;
    let per = n.div_ceil(chunks.max(1)).max(1);
    let parts: Vec<(f64, ModelGrads)> = (0..n)
        .step_by(per)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut ws = TraceWorkspace::new();
            let mut g = model.zero_grads();
            let mut sq = 0.0;
            for i in start..(start + per).min(n) {
                let rgb = eval.forward(&batch.rays[i], batch.times[i], batch.offsets[i], &mut ws);
                let err: [f64; 3] = std::array::from_fn(|c| rgb[c] - batch.targets[i][c]);
                sq += err.iter().map(|e| e * e).sum::<f64>();
                eval.backward(&mut ws, err.map(|e| 2.0 * e * norm), &mut g);
            }
            (sq, g)
        })
        .collect();
    let mut grads = model.zero_grads();
    let mut sq = 0.0;
    for (s, g) in &parts {
        sq += s;
        grads.add_assign(g);
    }
    let photo = sq * norm;
    let smooth = if weights.lambda_smooth > 0.0 {
        smoothing_loss(&model.geometry, &weights.smoothing, Some((&mut grads.geometry, weights.lambda_smooth)))
            + smoothing_loss(&model.appearance, &weights.smoothing, Some((&mut grads.appearance, weights.lambda_smooth)))
    } else {
        smoothing_loss(&model.geometry, &weights.smoothing, None)
            + smoothing_loss(&model.appearance, &weights.smoothing, None)
    };
    let l1 = if weights.lambda_l1 > 0.0 {
        l1_loss(&[&model.geometry], Some((&mut [&mut grads.geometry], weights.lambda_l1)))
    } else {
        l1_loss(&[&model.geometry], None)
    };
    let total = photo + weights.lambda_smooth * smooth + weights.lambda_l1 * l1;
    Ok((LossParts { total, photo, smooth, l1 }, grads))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub photo: f64,
    pub smooth: f64,
    pub l1: f64,
    pub lr: f64,
    /// PSNR of the training batch.
    pub batch_psnr: f64,
    pub val_psnr: Option<f64>,
    pub dims: [usize; 4],
    pub event: Option<String>,
    pub elapsed_s: f64,
}

/// Stateful training loop; the model it holds is always the last one
/// whose loss was finite.
pub struct Trainer<'d> {
    config: TrainConfig,
    dataset: &'d Dataset,
    model: RadianceModel,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: usize,
    voxel_targets: Vec<usize>,
    pixel_offsets: Vec<usize>,
    losses: Vec<f64>,
    start: Instant,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let aabb = config.aabb.unwrap_or(dataset.aabb);
        let n_t = config.n_t_for(dataset.train.len());
        let [i, j, k] = resolution_for(&aabb, config.initial_resolution.pow(3));
        let spec = ModelSpec {
            kind: config.kind,
            density_rank: config.density_rank,
            appearance_rank: Some(config.appearance_rank()),
            dims: GridDims::new(i, j, k, n_t)?,
            aabb,
            decoder: config.decoder,
            feature_dim: config.feature_dim,
            density_init_scale: config.density_init_scale,
            appearance_init_scale: config.appearance_init_scale,
            seed: config.seed,
        };
        let model = RadianceModel::new(&spec)?;
        let voxel_targets = voxel_schedule(
            config.initial_resolution.pow(3),
            config.final_resolution.pow(3),
            config.upsample_steps.len(),
        );
        let mut pixel_offsets = Vec::with_capacity(dataset.train.len() + 1);
        let mut acc = 0;
        for f in &dataset.train {
            pixel_offsets.push(acc);
            acc += f.camera.width() as usize * f.camera.height() as usize;
        }
        pixel_offsets.push(acc);
        Ok(Self {
            adam: AdamState::new(&config.optimizer),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed),
            config,
            dataset,
            model,
            step: 0,
            voxel_targets,
            pixel_offsets,
            losses: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn model(&self) -> &RadianceModel {
        &self.model
    }

    pub fn into_model(self) -> RadianceModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Total loss of every completed step.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    fn train_opts(&self) -> RenderOptions {
        RenderOptions { jitter: true, background: self.dataset.background, ..self.config.render.clone() }
    }

    pub fn eval_opts(&self) -> RenderOptions {
        RenderOptions { jitter: false, background: self.dataset.background, ..self.config.render.clone() }
    }

    fn sample_batch(&mut self) -> RayBatch {
        let total = *self.pixel_offsets.last().expect("offsets");
        let n = self.config.batch_size;
        let mut b = RayBatch {
            rays: Vec::with_capacity(n),
            times: Vec::with_capacity(n),
            offsets: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let idx = self.rng.gen_range(0..total);
            let fi = self.pixel_offsets.partition_point(|&o| o <= idx) - 1;
            let f = &self.dataset.train[fi];
            let local = idx - self.pixel_offsets[fi];
            let w = f.camera.width() as usize;
            let (px, py) = ((local % w) as u32, (local / w) as u32);
            b.rays.push(f.camera.ray(px, py));
            b.times.push(f.time);
            b.offsets.push(self.rng.gen::<f64>());
            b.targets.push(f.image.pixel(px, py).map(|v| v as f64));
        }
        b
    }

    fn schedule_events(&mut self) -> Result<Option<String>> {
        let mut events = Vec::new();
        if self.config.mask_step == Some(self.step) && self.step > 0 {
            events.push(self.apply_mask()?);
        }
        if let Some(k) = self.config.upsample_steps.iter().position(|&s| s == self.step) {
            let target = resolution_for(&self.model.aabb, self.voxel_targets[k]);
            let cur = self.model.dims();
            let spatial: [usize; 3] = std::array::from_fn(|a| target[a].max(cur.spatial()[a]));
            self.model.upsample(cur.with_spatial(spatial))?;
            self.adam.reset("geometry.");
            self.adam.reset("appearance.");
            events.push(format!("upsample {spatial:?}"));
        }
        Ok((!events.is_empty()).then(|| events.join("; ")))
    }

    fn apply_mask(&mut self) -> Result<String> {
        let opts = self.eval_opts();
        let step = ModelEval::new(&self.model, &opts)?.step();
        let threshold = -(1.0 - self.config.mask_alpha).ln() / step;
        let nodes = self.model.dims().spatial();
        let out = build_occupancy_mask(&self.model, nodes, threshold, self.model.dims().n_t)?;
        if out.empty {
            return Ok("mask empty; box kept".into());
        }
        let (lo, hi) = crop_range(&self.model, &out.aabb);
        self.model.crop(lo, hi)?;
        self.model.mask = Some(out.mask);
        self.adam.reset("geometry.");
        self.adam.reset("appearance.");
        Ok(format!("mask: box {:?}..{:?}", self.model.aabb.min, self.model.aabb.max))
    }

    /// PSNR of the first test frame (or first training frame).
    pub fn validation_psnr(&self) -> Result<f64> {
        let frame = self.dataset.test.first().unwrap_or(&self.dataset.train[0]);
        let eval = ModelEval::new(&self.model, &self.eval_opts())?;
        psnr(&eval.render(&frame.camera, frame.time), &frame.image)
    }

    /// Runs one optimization step. On a non-finite loss the model is left
    /// untouched and an error returned.
    pub fn step_once(&mut self) -> Result<LogRecord> {
        let event = self.schedule_events()?;
        let batch = self.sample_batch();
        let opts = self.train_opts();
        let (loss, grads) =
            loss_and_grad(&self.model, &batch, &LossWeights::from(&self.config), &opts, self.config.grad_chunks)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let lr = lr_schedule(self.step, self.config.total_steps, self.config.optimizer.lr, self.config.optimizer.decay_ratio);
        let mult = self.config.optimizer.factor_lr_multiplier;
        {
            let mut groups = Vec::new();
            for ((name, role, params), (_, g)) in self.model.param_groups_mut().into_iter().zip(grads.groups()) {
                let m = if role == GroupRole::Factor { mult } else { 1.0 };
                groups.push(ParamGroup::new(name, params, g, m)?);
            }
            adam_step(&mut groups, &mut self.adam, lr)?;
        }
        self.losses.push(loss.total);
        let step = self.step;
        self.step += 1;
        let val = if self.config.val_every > 0 && self.step % self.config.val_every == 0 {
            Some(self.validation_psnr()?)
        } else {
            None
        };
        let d = self.model.dims();
        Ok(LogRecord {
            step,
            loss: loss.total,
            photo: loss.photo,
            smooth: loss.smooth,
            l1: loss.l1,
            lr,
            batch_psnr: -10.0 * loss.photo.log10(),
            val_psnr: val,
            dims: d.axes(),
            event,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining steps, passing every `log_every`-th record (and
    /// every record with an event or validation score) to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&LogRecord)) -> Result<()> {
        while self.step < self.config.total_steps {
            let rec = match self.step_once() {
                Ok(r) => r,
                Err(e) => {
                    warn!("training stopped at step {}: {e}", self.step);
                    return Err(e);
                }
            };
            let last = self.step == self.config.total_steps;
            if rec.step % self.config.log_every == 0 || rec.event.is_some() || rec.val_psnr.is_some() || last {
                if let Some(ev) = &rec.event {
                    info!("step {}: {ev}", rec.step);
                }
                sink(&rec);
            }
        }
        Ok(())
    }
}

/// Output of [`train`].
pub struct TrainOutput {
    pub model: RadianceModel,
    pub log: Vec<LogRecord>,
    /// Total loss of every step.
    pub losses: Vec<f64>,
}

/// Trains a fresh model for `config.total_steps` steps.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    let mut t = Trainer::new(config.clone(), dataset)?;
    let mut log = Vec::new();
    t.run(|r| log.push(r.clone()))?;
    let losses = t.losses().to_vec();
    Ok(TrainOutput { model: t.into_model(), log, losses })
}
