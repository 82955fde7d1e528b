//! Trains the oscillating-sphere scene and prints test PSNR.
//!
//! `cargo run --release -p dtensorf --example tiny_scene -- [cp|mm] [steps] [batch] [lambda_smooth] [amplitude] [mlp|sh] [n_t] [image_dir]`
//!
//! An `n_t` of 0 keeps the `N_t` rule.

use std::time::Instant;

use dtensorf::data::{make_synthetic, SynthSpec};
use dtensorf::factors::FactorKind;
use dtensorf::metrics::evaluate;
use dtensorf::model::DecoderKind;
use dtensorf::train::{TrainConfig, Trainer};

fn main() -> dtensorf::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let kind = if arg(1, "mm") == "cp" { FactorKind::Cp } else { FactorKind::Mm };
    let base = TrainConfig::tiny(kind);
    let steps: usize = arg(2, "2000").parse().unwrap();
    let batch: usize = arg(3, "1024").parse().unwrap();
    let lambda: f64 = arg(4, &base.lambda_smooth.to_string()).parse().unwrap();
    let amp: f64 = arg(5, "0.2").parse().unwrap();
    let decoder = if arg(6, "mlp") == "sh" { DecoderKind::Sh } else { DecoderKind::Mlp };
    let n_t: usize = arg(7, "0").parse().unwrap();

    let t0 = Instant::now();
    let (ds, _) = make_synthetic(&SynthSpec { amplitude: amp, ..Default::default() })?;
    println!("dataset {:.1}s", t0.elapsed().as_secs_f64());
    let scale = |v: usize| (v as f64 * steps as f64 / base.total_steps as f64) as usize;
    let cfg = TrainConfig {
        decoder,
        upsample_steps: base.upsample_steps.iter().map(|&v| scale(v)).collect(),
        mask_step: base.mask_step.map(scale),
        total_steps: steps,
        batch_size: batch,
        lambda_smooth: lambda,
        n_t: (n_t > 0).then_some(n_t),
        log_every: 100,
        ..base
    };
    let mut tr = Trainer::new(cfg, &ds)?;
    tr.run(|r| {
        println!(
            "step {:5} loss {:.5} smooth {:.3e} l1 {:.3e} psnr {:.2} dims {:?} {:.1}s {}",
            r.step, r.loss, r.smooth, r.l1, r.batch_psnr, r.dims, r.elapsed_s, r.event.clone().unwrap_or_default()
        )
    })?;
    let opts = tr.eval_opts();
    let model = tr.into_model();
    let rep = evaluate(&model, &ds.test, &opts, serde_json::Value::Null)?;
    print!("{}", rep.to_table());
    if let Some(dir) = args.get(8) {
        let dir = std::path::Path::new(dir);
        std::fs::create_dir_all(dir)?;
        let eval = dtensorf::render::ModelEval::new(&model, &opts)?;
        for (i, f) in ds.test.iter().enumerate() {
            eval.render(&f.camera, f.time).save_png(&dir.join(format!("pred_{i}.png")))?;
            f.image.save_png(&dir.join(format!("gt_{i}.png")))?;
        }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
