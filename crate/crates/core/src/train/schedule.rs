//! Grid-resolution schedule and the occupancy-mask step.

use log::warn;
use rayon::prelude::*;

use crate::aabb::{Aabb, Vec3};
use crate::error::{Error, Result};
use crate::model::RadianceModel;
use crate::render::OccupancyMask;

/// Voxel counts after each of `n_steps` upsample events, geometric between
/// `initial` and `final_count`.
pub fn voxel_schedule(initial: usize, final_count: usize, n_steps: usize) -> Vec<usize> {
    if n_steps == 0 {
        return Vec::new();
    }
    let (a, b) = ((initial as f64).ln(), (final_count as f64).ln());
    (1..=n_steps)
        .map(|k| (a + (b - a) * k as f64 / n_steps as f64).exp().round() as usize)
        .collect()
}

/// Per-axis node counts giving about `n_voxels` cubic voxels in `aabb`.
pub fn resolution_for(aabb: &Aabb, n_voxels: usize) -> [usize; 3] {
    let voxel = (aabb.volume() / n_voxels as f64).cbrt();
    let s = aabb.size();
    std::array::from_fn(|a| ((s[a] / voxel).round() as usize).max(2))
}

/// An occupancy mask and the box it implies.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskOutcome {
    pub mask: OccupancyMask,
    /// Occupied bounds plus a one-cell margin; the input box if empty.
    pub aabb: Aabb,
    pub empty: bool,
}

/// Evaluates `σ` on a `nodes` lattice over the model box at
/// `time_samples` evenly spaced times. A cell is occupied if any of its
/// corners exceeds `threshold` at any sampled time.
pub fn build_occupancy_mask(
    model: &RadianceModel,
    nodes: [usize; 3],
    threshold: f64,
    time_samples: usize,
) -> Result<MaskOutcome> {
    if nodes.iter().any(|&n| n < 2) || time_samples == 0 {
        return Err(Error::invalid("mask needs at least 2 nodes per axis and one time sample"));
    }
    let aabb = model.aabb;
    let size = aabb.size();
    let times: Vec<f64> = (0..time_samples)
        .map(|k| if time_samples > 1 { k as f64 / (time_samples - 1) as f64 } else { 0.0 })
        .collect();
    let corner: Vec<bool> = (0..nodes[0])
        .into_par_iter()
        .flat_map_iter(|a| {
            let mut scratch = Vec::new();
            let times = &times;
            (0..nodes[1] * nodes[2]).map(move |bc| {
                let (b, c) = (bc / nodes[2], bc % nodes[2]);
                let idx = [a, b, c];
                let p = Vec3::from_fn(|ax, _| aabb.min[ax] + size[ax] * idx[ax] as f64 / (nodes[ax] - 1) as f64);
                times.iter().any(|&t| model.geometry.sample_at(&model.cell_weights(&p, t), &mut scratch) > threshold)
            })
        })
        .collect();
    let mask = OccupancyMask::from_corners(aabb, nodes, &corner)?;
    match mask.occupied_bounds(1) {
        Some(b) => Ok(MaskOutcome { mask, aabb: b, empty: false }),
        None => {
            warn!("occupancy mask is empty; keeping the scene box");
            Ok(MaskOutcome { mask, aabb, empty: true })
        }
    }
}

/// Node index ranges of the model grid covering `bounds`.
pub fn crop_range(model: &RadianceModel, bounds: &Aabb) -> ([usize; 3], [usize; 3]) {
    let n = model.dims().spatial();
    let s = model.aabb.size();
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let scale = (n[a] - 1) as f64 / s[a];
        let l = ((bounds.min[a] - model.aabb.min[a]) * scale + 1e-9).floor().max(0.0) as usize;
        let h = ((bounds.max[a] - model.aabb.min[a]) * scale - 1e-9).ceil().min((n[a] - 1) as f64) as usize;
        lo[a] = l.min(n[a] - 2);
        hi[a] = h.max(lo[a] + 1);
    }
    (lo, hi)
}
