mod common;

use common::model_spec;
use dtensorf::aabb::{Aabb, Vec3};
use dtensorf::factors::{CpFactors, FactorGrid, FactorKind, GridDims};
use dtensorf::model::RadianceModel;
use dtensorf::render::{
    composite, composite_backward, render_field_ray, render_image, sample_points, Camera, RadianceField, Ray,
    RenderOptions,
};
use dtensorf::train::build_occupancy_mask;
use proptest::prelude::*;

struct Homogeneous {
    sigma: f64,
    color: [f64; 3],
}

impl RadianceField for Homogeneous {
    fn density(&self, _p: &Vec3, _t: f64) -> f64 {
        self.sigma
    }
    fn color(&self, _p: &Vec3, _d: &Vec3, _t: f64) -> [f64; 3] {
        self.color
    }
}

#[test]
fn homogeneous_medium_matches_closed_form() {
    let aabb = Aabb::new([-1.0, -0.5, -0.5], [1.0, 0.5, 0.5]).unwrap();
    let ray = Ray { origin: Vec3::new(-4.0, 0.1, -0.2), dir: Vec3::x() };
    let length = 2.0;
    let bg = [0.9, 0.8, 0.1];
    for sigma in [0.1, 1.0, 3.0, 20.0] {
        let field = Homogeneous { sigma, color: [0.2, 0.7, 0.4] };
        for steps in [64, 100, 256] {
            let rgb = render_field_ray(&field, &ray, 0.0, &aabb, length / steps as f64, bg);
            let att = (-sigma * length).exp();
            for ch in 0..3 {
                let want = field.color[ch] * (1.0 - att) + bg[ch] * att;
                assert!((rgb[ch] - want).abs() < 1e-3, "σ={sigma} n={steps}: {} vs {want}", rgb[ch]);
            }
        }
    }
}

#[test]
fn samples_strictly_increase() {
    let aabb = Aabb::cube(1.0);
    let ray = Ray { origin: Vec3::new(-3.0, 0.2, 0.3), dir: Vec3::new(1.0, 0.1, -0.05).normalize() };
    for jitter in [None, Some(0.0), Some(0.37), Some(0.99)] {
        let s = sample_points(&ray, &aabb, 0.05, jitter, None, 0.5);
        assert!(!s.is_empty());
        assert!(s.t.windows(2).all(|w| w[1] > w[0]));
        assert!(s.delta.iter().all(|&d| d > 0.0));
        assert!(s.positions.iter().all(|p| aabb.contains(p)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn compositing_weights_are_valid(
        sigmas in prop::collection::vec(0.0f64..50.0, 0..40),
        delta in 1e-3f64..0.5,
    ) {
        let n = sigmas.len();
        let c = composite(&sigmas, &vec![[0.5; 3]; n], &vec![delta; n], [1.0; 3]);
        prop_assert!(c.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!(c.weights.iter().sum::<f64>() <= 1.0 + 1e-6);
        prop_assert!(c.transmittance.windows(2).all(|t| t[1] <= t[0]));
    }
}

proptest! {
    #[test]
    fn reversal_changes_output_unless_colors_equal(sigma in 0.1f64..5.0, n in 2usize..10) {
        let sigmas = vec![sigma; n];
        let deltas = vec![0.3; n];
        let ramp: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 / n as f64, 0.5, 1.0 - i as f64 / n as f64]).collect();
        let reversed: Vec<[f64; 3]> = ramp.iter().rev().copied().collect();
        let fwd = composite(&sigmas, &ramp, &deltas, [0.0; 3]).rgb;
        let rev = composite(&sigmas, &reversed, &deltas, [0.0; 3]).rgb;
        prop_assert!((fwd[0] - rev[0]).abs() > 1e-9);
        let flat = vec![[0.3, 0.2, 0.1]; n];
        let a = composite(&sigmas, &flat, &deltas, [0.0; 3]).rgb;
        let varied: Vec<f64> = (0..n).map(|i| sigma * (1.0 + i as f64)).collect();
        let varied_rev: Vec<f64> = varied.iter().rev().copied().collect();
        let b = composite(&varied, &flat, &deltas, [0.0; 3]).rgb;
        let c = composite(&varied_rev, &flat, &deltas, [0.0; 3]).rgb;
        prop_assert!((b[0] - c[0]).abs() < 1e-12);
        prop_assert!(a[0] <= 0.3 + 1e-12);
    }

    #[test]
    fn composite_backward_matches_differences(
        sigmas in prop::collection::vec(0.0f64..4.0, 1..6),
        dp in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let n = sigmas.len();
        let colors: Vec<[f64; 3]> = (0..n).map(|i| [0.1 * i as f64, 0.5, 0.9 - 0.1 * i as f64]).collect();
        let deltas = vec![0.2; n];
        let bg = [0.3, 0.6, 0.9];
        let f = |s: &[f64]| {
            let c = composite(s, &colors, &deltas, bg).rgb;
            (0..3).map(|k| dp[k] * c[k]).sum::<f64>()
        };
        let (ds, _) = composite_backward(&sigmas, &colors, &deltas, bg, dp);
        for i in 0..n {
            let mut p = sigmas.clone();
            let mut m = sigmas.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            prop_assert!((fd - ds[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}

fn blob_model(n_t: usize) -> RadianceModel {
    let dims = GridDims::new(8, 8, 8, n_t).unwrap();
    let mut model = RadianceModel::new(&model_spec(FactorKind::Cp, dims, 2, 5)).unwrap();
    let bump = |n: usize, lo: usize, hi: usize| (0..n).map(|i| if (lo..=hi).contains(&i) { 2.0 } else { -0.5 }).collect::<Vec<f64>>();
    let pos = |n: usize, lo: usize, hi: usize| (0..n).map(|i| if (lo..=hi).contains(&i) { 2.0 } else { 0.0 }).collect::<Vec<f64>>();
    let t: Vec<f64> = (0..n_t).map(|k| 1.0 + 0.3 * k as f64).collect();
    model.geometry = FactorGrid::Cp(
        CpFactors::from_vectors(
            dims,
            &[bump(8, 2, 4), pos(8, 5, 6)],
            &[pos(8, 3, 5), pos(8, 1, 2)],
            &[pos(8, 2, 5), pos(8, 4, 6)],
            &[t.clone(), t],
        )
        .unwrap(),
    );
    model
}

#[test]
fn conservative_mask_does_not_change_pixels() {
    let mut model = blob_model(3);
    let outcome = build_occupancy_mask(&model, model.dims().spatial(), 0.0, 3).unwrap();
    assert!(!outcome.empty);
    assert!(outcome.mask.occupied_count() < outcome.mask.cells().len());
    model.mask = Some(outcome.mask);
    let cam = Camera::look_at(Vec3::new(0.5, 1.2, 3.0), Vec3::zeros(), Vec3::y(), 0.8, 24, 24).unwrap();
    for time in [0.0, 0.4, 1.0] {
        let on = render_image(&model, &cam, time, &RenderOptions { weight_threshold: 0.0, ..Default::default() }).unwrap();
        let off = render_image(
            &model,
            &cam,
            time,
            &RenderOptions { weight_threshold: 0.0, use_mask: false, ..Default::default() },
        )
        .unwrap();
        for (a, b) in on.data().iter().zip(off.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn single_time_slice_ignores_time() {
    let model = RadianceModel::new(&model_spec(FactorKind::Cp, GridDims::new(6, 7, 5, 1).unwrap(), 3, 1)).unwrap();
    let cam = Camera::look_at(Vec3::new(2.0, 1.0, 2.5), Vec3::zeros(), Vec3::y(), 0.8, 16, 16).unwrap();
    let opts = RenderOptions::default();
    let a = render_image(&model, &cam, 0.0, &opts).unwrap();
    for t in [0.25, 0.5, 1.0] {
        assert_eq!(a, render_image(&model, &cam, t, &opts).unwrap());
    }
}

#[test]
fn renders_without_jitter_are_byte_identical() {
    let model = RadianceModel::new(&model_spec(FactorKind::Mm, GridDims::new(6, 6, 6, 3).unwrap(), 2, 4)).unwrap();
    let cam = Camera::look_at(Vec3::new(2.0, 1.0, 2.5), Vec3::zeros(), Vec3::y(), 0.8, 16, 12).unwrap();
    let opts = RenderOptions::default();
    let a = render_image(&model, &cam, 0.3, &opts).unwrap();
    let b = render_image(&model, &cam, 0.3, &opts).unwrap();
    assert_eq!(a.to_rgb8(), b.to_rgb8());
    assert_eq!(a.data(), b.data());
}
