use dtensorf::metrics::{psnr, ssim, EvalReport, FrameMetrics};
use dtensorf::render::Image;
use proptest::prelude::*;

fn wave(w: u32, h: u32) -> Image {
    let mut data = Vec::with_capacity((3 * w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push((0.5 + 0.4 * (0.31 * x as f64 + 0.17 * y as f64 + c as f64).sin()) as f32);
            }
        }
    }
    Image::from_rgb(w, h, data).unwrap()
}

fn noisy(base: &Image, amp: f64) -> Image {
    let data = base
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let n = ((i as f64 * 12.9898).sin() * 43758.5453).fract();
            (v as f64 + amp * n) as f32
        })
        .collect();
    Image::from_rgb(base.width(), base.height(), data).unwrap()
}

#[test]
fn ssim_matches_reference_implementation() {
    let a = wave(40, 32);
    let data = a
        .data()
        .chunks(3)
        .enumerate()
        .flat_map(|(i, p)| {
            let (x, y) = ((i % 40) as f64, (i / 40) as f64);
            let r = (p[0] as f64 + 0.1 * (0.5 * x * y / 7.0).cos()).clamp(0.0, 1.0) as f32;
            [r, p[1], p[2]]
        })
        .collect();
    let b = Image::from_rgb(40, 32, data).unwrap();
    // skimage.metrics.structural_similarity on the luma planes, gaussian_weights=True,
    // sigma=1.5, use_sample_covariance=False, data_range=1
    let reference = 0.977_218_769_849_254_4;
    assert!((ssim(&a, &b).unwrap() - reference).abs() < 1e-9);
}

#[test]
fn ssim_of_constant_pair() {
    let a = Image::new(16, 16, [0.2; 3]);
    let b = Image::new(16, 16, [0.8; 3]);
    let want = (2.0 * 0.16 + 1e-4) / (0.68 + 1e-4);
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-6);
}

#[test]
fn psnr_decreases_with_noise() {
    let base = wave(24, 24);
    let mut last = f64::INFINITY;
    for k in 1..12 {
        let p = psnr(&noisy(&base, 0.02 * k as f64), &base).unwrap();
        assert!(p < last, "amplitude step {k}: {p} >= {last}");
        last = p;
    }
    assert_eq!(psnr(&base, &base).unwrap(), f64::INFINITY);
}

#[test]
fn mismatched_sizes_are_rejected() {
    assert!(psnr(&Image::new(4, 4, [0.0; 3]), &Image::new(4, 5, [0.0; 3])).is_err());
    assert!(ssim(&Image::new(8, 8, [0.0; 3]), &Image::new(8, 8, [0.0; 3])).is_err());
}

#[test]
fn report_means_and_infinite_psnr_serialization() {
    let frames = vec![
        FrameMetrics { index: 0, time: 0.1, psnr: 20.0, ssim: 0.8 },
        FrameMetrics { index: 1, time: 0.6, psnr: 30.0, ssim: 0.9 },
    ];
    let r = EvalReport::from_frames(frames, serde_json::json!({"k": 1}), 1.5);
    assert!((r.mean_psnr - 25.0).abs() < 1e-12);
    assert!((r.mean_ssim - 0.85).abs() < 1e-12);
    assert!(r.lpips.is_none());
    assert!(r.to_table().contains("25.0"));
    let inf = EvalReport::from_frames(vec![FrameMetrics { index: 0, time: 0.0, psnr: f64::INFINITY, ssim: 1.0 }], serde_json::Value::Null, 0.0);
    let s = serde_json::to_string(&inf).unwrap();
    assert!(s.contains("\"inf\""), "{s}");
    let back: EvalReport = serde_json::from_str(&s).unwrap();
    assert_eq!(back.mean_psnr, f64::INFINITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn ssim_is_bounded_and_one_only_for_identical(amp in 0.0f64..0.5, seed in 0u32..50) {
        let base = wave(16 + seed % 5, 16);
        let other = noisy(&base, amp);
        let s = ssim(&base, &other).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((ssim(&base, &base).unwrap() - 1.0).abs() < 1e-9);
        if amp > 1e-3 {
            prop_assert!(s < 1.0 - 1e-9);
        }
    }
}
