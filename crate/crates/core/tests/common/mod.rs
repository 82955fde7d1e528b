#![allow(dead_code)]

use dtensorf::factors::{init_cp, init_mm, Coord4, FactorGrid, GridDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense tensor from explicit per-entry sums over components, laid out
/// as `((a·J + b)·K + c)·N + d`.
pub fn brute_dense(grid: &FactorGrid) -> Vec<f64> {
    let GridDims { i, j, k, n_t } = grid.dims();
    let mut out = vec![0.0; i * j * k * n_t];
    for a in 0..i {
        for b in 0..j {
            for c in 0..k {
                for d in 0..n_t {
                    out[((a * j + b) * k + c) * n_t + d] = brute_entry(grid, [a, b, c, d]);
                }
            }
        }
    }
    out
}

fn brute_entry(grid: &FactorGrid, [a, b, c, d]: [usize; 4]) -> f64 {
    let g = |v: f32| v as f64;
    match grid {
        FactorGrid::Cp(cp) => {
            let arr = cp.arrays();
            (0..cp.rank())
                .map(|r| g(arr[0].1.get(a, 0, r)) * g(arr[1].1.get(b, 0, r)) * g(arr[2].1.get(c, 0, r)) * g(arr[3].1.get(d, 0, r)))
                .sum()
        }
        FactorGrid::Mm(mm) => {
            let p = mm.pairs();
            let mut s = 0.0;
            for r in 0..p[0].spatial.rank() {
                s += g(p[0].spatial.get(a, b, r)) * g(p[0].temporal.get(c, d, r));
            }
            for r in 0..p[1].spatial.rank() {
                s += g(p[1].spatial.get(a, c, r)) * g(p[1].temporal.get(b, d, r));
            }
            for r in 0..p[2].spatial.rank() {
                s += g(p[2].spatial.get(b, c, r)) * g(p[2].temporal.get(a, d, r));
            }
            s
        }
    }
}

/// 16-corner quadrilinear interpolation of a dense tensor.
pub fn quadrilinear(dense: &[f64], dims: GridDims, c: &Coord4) -> f64 {
    let axes = dims.axes();
    let coord = [c.x, c.y, c.z, c.t];
    let mut lo = [0usize; 4];
    let mut frac = [0.0; 4];
    for ax in 0..4 {
        if axes[ax] == 1 {
            continue;
        }
        let v = coord[ax].clamp(0.0, (axes[ax] - 1) as f64);
        lo[ax] = (v.floor() as usize).min(axes[ax] - 2);
        frac[ax] = v - lo[ax] as f64;
    }
    let mut sum = 0.0;
    for corner in 0..16 {
        let mut idx = [0usize; 4];
        let mut w = 1.0;
        for ax in 0..4 {
            let hi = (corner >> ax) & 1 == 1;
            if axes[ax] == 1 {
                if hi {
                    w = 0.0;
                }
                continue;
            }
            idx[ax] = lo[ax] + hi as usize;
            w *= if hi { frac[ax] } else { 1.0 - frac[ax] };
        }
        if w != 0.0 {
            sum += w * dense[((idx[0] * axes[1] + idx[1]) * axes[2] + idx[2]) * axes[3] + idx[3]];
        }
    }
    sum
}

pub fn random_dims(rng: &mut impl Rng, max: usize) -> GridDims {
    GridDims::new(rng.gen_range(2..=max), rng.gen_range(2..=max), rng.gen_range(2..=max), rng.gen_range(1..=max)).unwrap()
}

pub fn random_coord(rng: &mut impl Rng, dims: GridDims) -> Coord4 {
    let [i, j, k, n] = dims.axes().map(|v| (v - 1) as f64);
    Coord4::new(rng.gen_range(0.0..=i), rng.gen_range(0.0..=j), rng.gen_range(0.0..=k), rng.gen_range(0.0..=n)).unwrap()
}

/// A random CP (even seeds) or MM (odd seeds) grid with entries of order one.
pub fn random_grid(seed: u64, max_dim: usize, max_cp: usize, max_mm: usize) -> FactorGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = random_dims(&mut rng, max_dim);
    if seed % 2 == 0 {
        FactorGrid::Cp(init_cp(dims, rng.gen_range(1..=max_cp), 1.0, seed).unwrap())
    } else {
        let ranks = [rng.gen_range(1..=max_mm), rng.gen_range(1..=max_mm), rng.gen_range(1..=max_mm)];
        FactorGrid::Mm(init_mm(dims, ranks, 1.0, seed).unwrap())
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn model_spec(kind: dtensorf::factors::FactorKind, dims: GridDims, rank: usize, seed: u64) -> dtensorf::model::ModelSpec {
    dtensorf::model::ModelSpec {
        kind,
        density_rank: rank,
        appearance_rank: None,
        dims,
        aabb: dtensorf::aabb::Aabb::cube(1.0),
        decoder: dtensorf::model::DecoderKind::Mlp,
        feature_dim: dtensorf::model::FEATURE_DIM,
        density_init_scale: 1.0,
        appearance_init_scale: 1.0,
        seed,
    }
}

/// Per-group result of a finite-difference check.
#[derive(Debug)]
pub struct GroupCheck {
    pub group: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// A rank-2 model on a 4³×3 grid with strictly positive density factors
/// (raw density stays far from the ReLU kink) and five rays through the box.
pub fn micro_problem(
    kind: dtensorf::factors::FactorKind,
    decoder: dtensorf::model::DecoderKind,
) -> (dtensorf::model::RadianceModel, dtensorf::train::RayBatch) {
    use dtensorf::aabb::Vec3;
    use dtensorf::render::Ray;
    let dims = GridDims::new(4, 4, 4, 3).unwrap();
    let mut spec = model_spec(kind, dims, 2, 11);
    spec.appearance_rank = Some(2);
    spec.decoder = decoder;
    let mut model = dtensorf::model::RadianceModel::new(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (_, arr) in model.geometry.arrays_mut() {
        for v in arr.data_mut() {
            *v = rng.gen_range(0.8..1.2);
        }
    }
    let origins = [
        Vec3::new(-3.0, 0.1, 0.2),
        Vec3::new(0.2, -3.0, -0.1),
        Vec3::new(-0.3, 0.4, 3.0),
        Vec3::new(2.5, 2.5, 0.3),
        Vec3::new(-2.0, -1.5, -2.2),
    ];
    let rays: Vec<Ray> = origins
        .iter()
        .map(|o| Ray { origin: *o, dir: (Vec3::new(0.05, -0.02, 0.03) - o).normalize() })
        .collect();
    let batch = dtensorf::train::RayBatch {
        rays,
        times: vec![0.1, 0.35, 0.5, 0.8, 1.0],
        offsets: vec![0.5, 0.2, 0.7, 0.4, 0.9],
        targets: vec![[0.9, 0.1, 0.2], [0.2, 0.8, 0.3], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0], [0.0, 0.3, 0.9]],
    };
    (model, batch)
}

/// Compares the analytic gradient of photometric + smoothing + L1 loss
/// with central differences taken in the `f32` parameters. The step starts
/// at `eps` and shrinks by 4× until two successive estimates agree and the
/// left and right one-sided slopes agree (or their gap shrinks in proportion
/// to the step, as smooth curvature does). A parameter that never settles
/// down to `eps/256` sits at an activation kink and is excluded.
pub fn gradient_suite(
    model: &dtensorf::model::RadianceModel,
    batch: &dtensorf::train::RayBatch,
    eps: f32,
    stride: usize,
) -> Vec<GroupCheck> {
    use dtensorf::render::RenderOptions;
    use dtensorf::train::{loss_and_grad, LossWeights, SmoothingSpec};
    let weights = LossWeights { lambda_smooth: 0.05, lambda_l1: 0.02, smoothing: SmoothingSpec::default() };
    let opts = RenderOptions { step_size: Some(0.1), weight_threshold: 0.0, ..Default::default() };
    let loss = |m: &dtensorf::model::RadianceModel| loss_and_grad(m, batch, &weights, &opts, 1).unwrap().0.total;
    let (_, grads) = loss_and_grad(model, batch, &weights, &opts, 1).unwrap();
    let f0 = loss(model);
    let analytic: Vec<(String, Vec<f64>)> = grads.groups().into_iter().map(|(n, g)| (n, g.to_vec())).collect();
    let mut work = model.clone();
    let mut out = Vec::new();
    for (gi, (name, grad)) in analytic.iter().enumerate() {
        let mut check = GroupCheck { group: name.clone(), max_rel_error: 0.0, checked: 0, excluded: 0 };
        for idx in (0..grad.len()).step_by(stride.max(1)) {
            let orig = work.param_groups_mut()[gi].2[idx];
            let an = grad[idx];
            let mut verdict = None;
            let mut h = eps;
            let mut prev_gap = f64::NAN;
            let mut prev_fd = f64::NAN;
            for _ in 0..5 {
                let mut shifted = |d: f32| {
                    let v = orig + d;
                    work.param_groups_mut()[gi].2[idx] = v;
                    let f = loss(&work);
                    work.param_groups_mut()[gi].2[idx] = orig;
                    (f, v as f64 - orig as f64)
                };
                let (fp, hp) = shifted(h);
                let (fm, hm) = shifted(-h);
                let (right, left) = ((fp - f0) / hp, (f0 - fm) / -hm);
                let fd = (fp - fm) / (hp - hm);
                let scale = fd.abs().max(an.abs()).max(1e-6);
                let gap = (right - left).abs();
                let ratio = gap / prev_gap;
                let stable = (fd - prev_fd).abs() <= 1e-4 * scale;
                if stable && (gap <= 1e-3 * scale || (0.2..0.3).contains(&ratio)) {
                    verdict = Some((fd - an).abs() / scale);
                    break;
                }
                prev_gap = gap;
                prev_fd = fd;
                h /= 4.0;
            }
            match verdict {
                Some(e) => {
                    check.max_rel_error = check.max_rel_error.max(e);
                    check.checked += 1;
                }
                None => check.excluded += 1,
            }
        }
        out.push(check);
    }
    out
}
