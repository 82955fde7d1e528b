//! Temporal smoothing and L1 regularizers over factor arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorArray, FactorGrid};

/// Gaussian neighbor window along the time axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSpec {
    /// Window size `S` (odd).
    pub window: usize,
    /// Kernel width `σ_k` in time-index units.
    pub sigma: f64,
    /// Include `i_t` itself in its own window.
    pub include_center: bool,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self { window: 3, sigma: 0.5, include_center: false }
    }
}

impl SmoothingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || !(self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "smoothing window must be odd and σ positive (got S={}, σ={})",
                self.window, self.sigma
            )));
        }
        Ok(())
    }

    pub fn half_width(&self) -> usize {
        self.window / 2
    }
}

/// Normalized kernel weights `(i_w, w)` of the window around `i_t`,
/// truncated to `[0, n_t)`. Empty when the window has no members.
pub fn kernel_weights(i_t: usize, n_t: usize, spec: &SmoothingSpec) -> Vec<(usize, f64)> {
    assert!(i_t < n_t, "time index {i_t} out of range {n_t}");
    let h = spec.half_width();
    let lo = i_t.saturating_sub(h);
    let hi = (i_t + h).min(n_t - 1);
    let mut out: Vec<(usize, f64)> = (lo..=hi)
        .filter(|&i| spec.include_center || i != i_t)
        .map(|i| {
            let d = i as f64 - i_t as f64;
            (i, (-d * d / (2.0 * spec.sigma * spec.sigma)).exp())
        })
        .collect();
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut out {
        *w /= total;
    }
    out
}

/// Dense `n_t × n_t` matrix of kernel weights.
fn kernel_matrix(n_t: usize, spec: &SmoothingSpec) -> Vec<f64> {
    let mut w = vec![0.0; n_t * n_t];
    for i in 0..n_t {
        for (j, v) in kernel_weights(i, n_t, spec) {
            w[i * n_t + j] = v;
        }
    }
    w
}

/// `Σ_fibers Σ_i (e_i − Σ_w W_iw e_w)²` along `mode` of `arr`; adds
/// `scale · ∂/∂e` into `grad` when given.
pub fn smoothing_loss_array(
    arr: &FactorArray,
    mode: usize,
    spec: &SmoothingSpec,
    grad: Option<(&mut FactorArray<f64>, f64)>,
) -> f64 {
    let n = arr.shape()[mode];
    if n < 2 {
        return 0.0;
    }
    let w = kernel_matrix(n, spec);
    let data = arr.data();
    let mut e = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut loss = 0.0;
    let mut grad = grad;
    for (base, stride, len) in arr.fibers(mode) {
        for (i, v) in e.iter_mut().enumerate().take(len) {
            *v = data[base + i * stride] as f64;
        }
        for i in 0..n {
            let pred: f64 = (0..n).map(|j| w[i * n + j] * e[j]).sum();
            r[i] = e[i] - pred;
            loss += r[i] * r[i];
        }
        if let Some((g, scale)) = grad.as_mut() {
            let gd = g.data_mut();
            for j in 0..n {
                let back: f64 = (0..n).map(|i| w[i * n + j] * r[i]).sum();
                gd[base + j * stride] += *scale * 2.0 * (r[j] - back);
            }
        }
    }
    loss
}

/// Smoothing loss over every time-bearing array of the grid: the `t`
/// vectors for CP, the spatial×time matrices for MM.
pub fn smoothing_loss(grid: &FactorGrid, spec: &SmoothingSpec, grad: Option<(&mut FactorGrid<f64>, f64)>) -> f64 {
    match grad {
        None => grid.time_arrays().into_iter().map(|(a, mode)| smoothing_loss_array(a, mode, spec, None)).sum(),
        Some((g, scale)) => grid
            .time_arrays()
            .into_iter()
            .zip(g.time_arrays_mut())
            .map(|((a, mode), (ga, _))| smoothing_loss_array(a, mode, spec, Some((ga, scale))))
            .sum(),
    }
}

/// CP form of [`smoothing_loss`].
pub fn smoothing_loss_cp(geometry: &FactorGrid, appearance: &FactorGrid, spec: &SmoothingSpec) -> f64 {
    smoothing_loss(geometry, spec, None) + smoothing_loss(appearance, spec, None)
}

/// MM form of [`smoothing_loss`].
pub fn smoothing_loss_mm(geometry: &FactorGrid, appearance: &FactorGrid, spec: &SmoothingSpec) -> f64 {
    smoothing_loss_cp(geometry, appearance, spec)
}

/// Number of factor entries across `grids`.
pub fn factor_count(grids: &[&FactorGrid]) -> usize {
    grids.iter().map(|g| g.param_stats().count).sum()
}

/// Mean absolute value over all entries of `grids`; adds
/// `scale · sign(x)/count` into the matching gradient buffers.
pub fn l1_loss(grids: &[&FactorGrid], grads: Option<(&mut [&mut FactorGrid<f64>], f64)>) -> f64 {
    let count = factor_count(grids);
    if count == 0 {
        return 0.0;
    }
    let sum: f64 = grids
        .iter()
        .flat_map(|g| g.arrays())
        .map(|(_, a)| a.data().iter().map(|&v| (v as f64).abs()).sum::<f64>())
        .sum();
    if let Some((gs, scale)) = grads {
        let k = scale / count as f64;
        for (grid, g) in grids.iter().zip(gs.iter_mut()) {
            for ((_, a), (_, ga)) in grid.arrays().into_iter().zip(g.arrays_mut()) {
                for (x, d) in a.data().iter().zip(ga.data_mut()) {
                    if *x != 0.0 {
                        *d += k * (*x as f64).signum();
                    }
                }
            }
        }
    }
    sum / count as f64
}
