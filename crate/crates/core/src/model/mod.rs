//! The dynamic radiance field `F(x, d, t) → (c, σ)`.
//!
//! Density is the (rectified) sum of the geometry grid's components.
//! Appearance components are stacked into a vector, projected by the basis
//! matrix `B` to a `P`-dimensional feature and decoded to RGB together with
//! the view direction.

pub mod decoder;
mod grads;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{Decoder, DecoderKind, Mlp, HIDDEN_WIDTH, VIEW_ENCODING_DIM};
pub use grads::ModelGrads;

use crate::aabb::{Aabb, Vec3};
use crate::error::{Error, Result};
use crate::factors::{init_cp, init_mm, CellWeights, Coord4, FactorGrid, FactorKind, GridDims, ParamStats};
use crate::render::{OccupancyMask, RadianceField};
use decoder::{encode_direction, sh_basis, sh_coeff_count, sh_color, MlpCache, SH_DEGREE};

/// Appearance feature width `P`.
pub const FEATURE_DIM: usize = 27;

/// Construction parameters for a fresh model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: FactorKind,
    /// `R_σ`; for MM this is the rank of each of the three pairings.
    pub density_rank: usize,
    /// `R_c`; defaults to `3·R_σ`.
    pub appearance_rank: Option<usize>,
    pub dims: GridDims,
    pub aabb: Aabb,
    pub decoder: DecoderKind,
    pub feature_dim: usize,
    pub density_init_scale: f64,
    pub appearance_init_scale: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn appearance_rank(&self) -> usize {
        self.appearance_rank.unwrap_or(3 * self.density_rank)
    }
}

/// Which optimizer learning rate a parameter group follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupRole {
    Factor,
    Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadianceModel {
    pub geometry: FactorGrid,
    pub appearance: FactorGrid,
    /// `feature_dim × n_appearance_components`, row-major.
    pub basis: Vec<f32>,
    pub feature_dim: usize,
    pub decoder: Decoder,
    pub aabb: Aabb,
    pub mask: Option<OccupancyMask>,
}

/// One point query of the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldQuery {
    pub position: Vec3,
    pub direction: Vec3,
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

fn grid_for(kind: FactorKind, dims: GridDims, rank: usize, scale: f64, seed: u64) -> Result<FactorGrid> {
    Ok(match kind {
        FactorKind::Cp => FactorGrid::Cp(init_cp(dims, rank, scale, seed)?),
        FactorKind::Mm => FactorGrid::Mm(init_mm(dims, [rank; 3], scale, seed)?),
    })
}

impl RadianceModel {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        if spec.density_rank == 0 || spec.appearance_rank() == 0 {
            return Err(Error::invalid("ranks must be positive"));
        }
        let geometry = grid_for(spec.kind, spec.dims, spec.density_rank, spec.density_init_scale, spec.seed)?;
        let appearance = grid_for(
            spec.kind,
            spec.dims,
            spec.appearance_rank(),
            spec.appearance_init_scale,
            spec.seed.wrapping_add(1),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
        let n_app = appearance.n_components();
        let bound = 1.0 / (n_app as f64).sqrt();
        let basis = (0..spec.feature_dim * n_app)
            .map(|_| rand::Rng::gen_range(&mut rng, -bound..bound) as f32)
            .collect();
        let decoder = match spec.decoder {
            DecoderKind::Mlp => Decoder::Mlp(Mlp::random(spec.feature_dim + VIEW_ENCODING_DIM, HIDDEN_WIDTH, &mut rng)),
            DecoderKind::Sh => Decoder::Sh { degree: SH_DEGREE },
        };
        Self::from_parts(geometry, appearance, basis, spec.feature_dim, decoder, spec.aabb)
    }

    pub fn from_parts(
        geometry: FactorGrid,
        appearance: FactorGrid,
        basis: Vec<f32>,
        feature_dim: usize,
        decoder: Decoder,
        aabb: Aabb,
    ) -> Result<Self> {
        if geometry.dims() != appearance.dims() {
            return Err(Error::invalid("geometry and appearance grids must share dims"));
        }
        if geometry.kind() != appearance.kind() {
            return Err(Error::invalid("geometry and appearance grids must share a decomposition"));
        }
        if basis.len() != feature_dim * appearance.n_components() {
            return Err(Error::invalid(format!(
                "basis has {} entries, expected {}×{}",
                basis.len(),
                feature_dim,
                appearance.n_components()
            )));
        }
        match &decoder {
            Decoder::Mlp(m) if m.in_dim != feature_dim + VIEW_ENCODING_DIM || m.w1.len() != m.hidden * m.in_dim => {
                return Err(Error::invalid("decoder input width does not match feature dim"));
            }
            Decoder::Sh { degree } if *degree > SH_DEGREE || feature_dim < 3 * sh_coeff_count(*degree) => {
                return Err(Error::invalid(format!("feature dim {feature_dim} too small for SH degree {degree}")));
            }
            _ => {}
        }
        Aabb::new(aabb.min, aabb.max)?;
        Ok(Self { geometry, appearance, basis, feature_dim, decoder, aabb, mask: None })
    }

    pub fn kind(&self) -> FactorKind {
        self.geometry.kind()
    }

    pub fn dims(&self) -> GridDims {
        self.geometry.dims()
    }

    pub fn decoder_kind(&self) -> DecoderKind {
        match self.decoder {
            Decoder::Mlp(_) => DecoderKind::Mlp,
            Decoder::Sh { .. } => DecoderKind::Sh,
        }
    }

    /// Grid-space coordinate of a world point and a time in `[0, 1]`,
    /// clamped into the grid.
    #[inline]
    pub fn world_to_grid(&self, p: &Vec3, t: f64) -> Coord4 {
        let d = self.dims();
        let u = self.aabb.normalize(p);
        let n = [d.i, d.j, d.k];
        let g: [f64; 3] = std::array::from_fn(|a| (u[a] * (n[a] - 1) as f64).clamp(0.0, (n[a] - 1) as f64));
        Coord4 { x: g[0], y: g[1], z: g[2], t: t.clamp(0.0, 1.0) * (d.n_t - 1) as f64 }
    }

    #[inline]
    pub fn cell_weights(&self, p: &Vec3, t: f64) -> CellWeights {
        self.dims().locate_clamped(&self.world_to_grid(p, t))
    }

    /// Raw (unrectified) geometry sum.
    pub fn raw_density(&self, p: &Vec3, t: f64) -> f64 {
        let mut scratch = Vec::new();
        self.geometry.sample_at(&self.cell_weights(p, t), &mut scratch)
    }

    /// `σ = max(0, Σ geometry components)`; zero outside the box.
    pub fn query_density(&self, points: &[(Vec3, f64)]) -> Vec<f64> {
        let mut scratch = Vec::new();
        points
            .iter()
            .map(|(p, t)| {
                if !self.aabb.contains(p) {
                    return 0.0;
                }
                self.geometry.sample_at(&self.cell_weights(p, *t), &mut scratch).max(0.0)
            })
            .collect()
    }

    /// `B · [stacked appearance components]` at each point.
    pub fn query_appearance_feature(&self, points: &[(Vec3, f64)]) -> Vec<Vec<f64>> {
        let mut stacked = vec![0.0; self.appearance.n_components()];
        points
            .iter()
            .map(|(p, t)| {
                self.appearance.component_values(&self.cell_weights(p, *t), &mut stacked);
                let mut f = vec![0.0; self.feature_dim];
                project_basis(&self.basis, &stacked, &mut f);
                f
            })
            .collect()
    }

    pub fn decode_color(&self, feature: &[f64], direction: &Vec3) -> Result<[f64; 3]> {
        decoder::decode_color(&self.decoder, feature, direction)
    }

    pub fn query_field(&self, queries: &[FieldQuery]) -> Result<Vec<FieldSample>> {
        let pts: Vec<(Vec3, f64)> = queries.iter().map(|q| (q.position, q.time.clamp(0.0, 1.0))).collect();
        let sig = self.query_density(&pts);
        let feats = self.query_appearance_feature(&pts);
        queries
            .iter()
            .zip(sig)
            .zip(feats)
            .map(|((q, sigma), f)| Ok(FieldSample { sigma, rgb: self.decode_color(&f, &q.direction)? }))
            .collect()
    }

    /// Parameter accounting over factors, basis and decoder.
    pub fn param_stats(&self) -> ParamStats {
        let dec = match &self.decoder {
            Decoder::Mlp(m) => m.param_count(),
            Decoder::Sh { .. } => 0,
        };
        self.geometry.param_stats() + self.appearance.param_stats() + ParamStats::from_count(self.basis.len() + dec)
    }

    /// Resamples both grids; the box is unchanged.
    pub fn upsample(&mut self, new_dims: GridDims) -> Result<()> {
        let g = self.geometry.upsample(new_dims)?;
        let a = self.appearance.upsample(new_dims)?;
        self.geometry = g;
        self.appearance = a;
        Ok(())
    }

    /// Restricts both grids to the inclusive node ranges `lo..=hi` and
    /// moves the box onto the kept nodes, so the field is unchanged inside it.
    pub fn crop(&mut self, lo: [usize; 3], hi: [usize; 3]) -> Result<()> {
        let g = self.geometry.crop(lo, hi)?;
        let a = self.appearance.crop(lo, hi)?;
        let n = self.dims().spatial();
        let size = self.aabb.size();
        let node = |a: usize, i: usize| self.aabb.min[a] + size[a] * i as f64 / (n[a] - 1) as f64;
        let aabb = Aabb::new(
            std::array::from_fn(|a| node(a, lo[a])),
            std::array::from_fn(|a| node(a, hi[a])),
        )?;
        self.geometry = g;
        self.appearance = a;
        self.aabb = aabb;
        Ok(())
    }

    /// Flat parameter buffers with names and roles, in a stable order.
    pub fn param_groups_mut(&mut self) -> Vec<(String, GroupRole, &mut [f32])> {
        let mut out = Vec::new();
        for (prefix, grid) in [("geometry", &mut self.geometry), ("appearance", &mut self.appearance)] {
            for (name, arr) in grid.arrays_mut() {
                out.push((format!("{prefix}.{name}"), GroupRole::Factor, arr.data_mut()));
            }
        }
        out.push(("basis".to_string(), GroupRole::Network, &mut self.basis[..]));
        if let Decoder::Mlp(m) = &mut self.decoder {
            for (name, arr) in m.arrays_mut() {
                out.push((format!("decoder.{name}"), GroupRole::Network, arr));
            }
        }
        out
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads::zeros_like(self)
    }
}

/// `out = B · stacked` with `B` row-major `out.len() × stacked.len()`.
#[inline]
pub(crate) fn project_basis<T: crate::factors::Scalar>(basis: &[T], stacked: &[f64], out: &mut [f64]) {
    let n = stacked.len();
    for (row, o) in basis.chunks_exact(n).zip(out.iter_mut()) {
        *o = decoder::dot(row, stacked);
    }
}

impl RadianceField for RadianceModel {
    fn density(&self, p: &Vec3, t: f64) -> f64 {
        self.query_density(&[(*p, t)])[0]
    }

    fn color(&self, p: &Vec3, dir: &Vec3, t: f64) -> [f64; 3] {
        let f = &self.query_appearance_feature(&[(*p, t)])[0];
        match &self.decoder {
            Decoder::Mlp(m) => m.to_f64().forward(f, &encode_direction(dir), &mut MlpCache::default()),
            Decoder::Sh { degree } => sh_color(*degree, f, &sh_basis(*degree, dir)),
        }
    }
}
