//! PSNR and SSIM, and test-set evaluation reports.

use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::model::RadianceModel;
use crate::render::{Image, ModelEval, RenderOptions};

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10·log10(1/MSE)`; `+inf` for identical images.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    check_dims(pred, gt)?;
    let n = pred.data().len() as f64;
    let mse = pred.data().iter().zip(gt.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn luma(img: &Image) -> Vec<f64> {
    img.data().chunks_exact(3).map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
}

fn gaussian_window() -> [f64; SSIM_WIN] {
    let r = (SSIM_WIN / 2) as f64;
    let mut g: [f64; SSIM_WIN] = std::array::from_fn(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter over valid window positions only.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WIN + 1, h - SSIM_WIN + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WIN).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WIN).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Structural similarity of the Rec.601 luma of both images: 11×11
/// Gaussian window (σ = 1.5), `C1 = 0.01²`, `C2 = 0.03²`, averaged over
/// window positions fully inside the image.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    check_dims(pred, gt)?;
    let (w, h) = (pred.width() as usize, pred.height() as usize);
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::invalid(format!("SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")));
    }
    let g = gaussian_window();
    let a = luma(pred);
    let b = luma(gt);
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, w, h, &g);
    let mu_b = filter_valid(&b, w, h, &g);
    let aa = filter_valid(&prod(&a, &a), w, h, &g);
    let bb = filter_valid(&prod(&b, &b), w, h, &g);
    let ab = filter_valid(&prod(&a, &b), w, h, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Writes non-finite PSNR values as the string `"inf"`.
mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Db {
            Num(f64),
            Str(String),
        }
        match Db::deserialize(d)? {
            Db::Num(v) => Ok(v),
            Db::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Db::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub time: f64,
    #[serde(with = "db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    #[serde(with = "db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Not computed; it needs a pretrained network.
    pub lpips: Option<f64>,
    pub config: serde_json::Value,
    pub wall_clock_s: f64,
}

impl EvalReport {
    pub fn from_frames(frames: Vec<FrameMetrics>, config: serde_json::Value, wall_clock_s: f64) -> Self {
        let n = frames.len().max(1) as f64;
        let mean_psnr = frames.iter().map(|f| f.psnr).sum::<f64>() / n;
        let mean_ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / n;
        Self { frames, mean_psnr, mean_ssim, lpips: None, config, wall_clock_s }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>5}  {:>6}  {:>9}  {:>7}\n", "frame", "time", "PSNR(dB)", "SSIM");
        for f in &self.frames {
            s += &format!("{:>5}  {:>6.3}  {:>9.3}  {:>7.4}\n", f.index, f.time, f.psnr, f.ssim);
        }
        s += &format!("{:>5}  {:>6}  {:>9.3}  {:>7.4}\n", "mean", "", self.mean_psnr, self.mean_ssim);
        s += "LPIPS: unavailable\n";
        s
    }
}

/// Renders every frame at its pose and time and scores it.
pub fn evaluate(
    model: &RadianceModel,
    frames: &[Frame],
    opts: &RenderOptions,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let start = Instant::now();
    let eval = ModelEval::new(model, opts)?;
    let mut out = Vec::with_capacity(frames.len());
    for (index, f) in frames.iter().enumerate() {
        let img = eval.render(&f.camera, f.time);
        out.push(FrameMetrics { index, time: f.time, psnr: psnr(&img, &f.image)?, ssim: ssim(&img, &f.image)? });
    }
    Ok(EvalReport::from_frames(out, config, start.elapsed().as_secs_f64()))
}
