//! `dtensorf` command-line interface.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use dtensorf::data::{
    load_checkpoint, load_dnerf, make_synthetic, read_checkpoint_header, save_checkpoint, write_dnerf, Dataset,
    LoadOptions, SynthSpec,
};
use dtensorf::metrics::{evaluate, EvalReport};
use dtensorf::model::RadianceModel;
use dtensorf::render::{Camera, ModelEval, RenderOptions};
use dtensorf::train::{TrainConfig, Trainer};
use log::{info, warn};
use nalgebra::Matrix4;

use config::{Overrides, Preset, RunConfigFile};

#[derive(Parser)]
#[command(name = "dtensorf", version, about = "Factorized dynamic radiance fields on the command line")]
struct Cli {
    /// Worker threads (all cores when unset).
    #[arg(long, global = true, env = "DTRF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.dtrf, metrics.jsonl, report.json and config.toml.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// D-NeRF-layout dataset directory; replaces the config's dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Render one frame at a test pose or a 4×4 camera-to-world matrix.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        time: f64,
        /// Test-frame index, or a file holding a 4×4 camera-to-world matrix.
        #[arg(long)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset for index poses; the training dataset when unset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Image size and horizontal field of view for matrix poses.
        #[arg(long, default_value_t = 200)]
        width: u32,
        #[arg(long, default_value_t = 200)]
        height: u32,
        #[arg(long, default_value_t = 0.6911112070083618)]
        fov_x: f64,
    },
    /// Score a checkpoint on a dataset's test frames.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a procedural dataset in D-NeRF layout.
    MakeSynth {
        /// TOML scene spec; defaults for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dims, ranks, parameter counts and size accounting of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

/// Bad configuration, paths or input files.
fn input(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|_| match cli.command {
        Command::Train { config, out, seed, steps, dataset, preset } => {
            cmd_train(config.as_deref(), Overrides { preset, out, dataset, seed, steps })
        }
        Command::Render { checkpoint, time, pose, out, dataset, width, height, fov_x } => {
            cmd_render(&checkpoint, time, &pose, &out, dataset.as_deref(), (width, height, fov_x))
        }
        Command::Eval { checkpoint, dataset, out } => cmd_eval(&checkpoint, &dataset, out.as_deref()),
        Command::MakeSynth { spec, out } => cmd_make_synth(spec.as_deref(), &out),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = format!("{:#}", f.error);
            eprintln!("error: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "));
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Outcome {
    if let Some(n) = threads {
        if n == 0 {
            return Err(input(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)?;
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfigFile, out: &Path) -> Outcome<Dataset> {
    let dir = match (&cfg.dataset.path, &cfg.dataset.synthetic) {
        (Some(p), _) => p.clone(),
        (None, Some(spec)) => {
            let dir = out.join("data");
            let (ds, _) = make_synthetic(spec).map_err(input)?;
            write_dnerf(&ds, &dir).map_err(runtime)?;
            dir
        }
        (None, None) => return Err(input(anyhow!("no dataset configured"))),
    };
    load_dnerf(&dir, &cfg.dataset.load).map_err(input)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display())).map_err(runtime)
}

fn cmd_train(config: Option<&Path>, flags: Overrides) -> Outcome {
    let cfg = RunConfigFile::load(config, flags).map_err(input)?;
    let out = cfg.out.clone().expect("validated");
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display())).map_err(input)?;
    let dataset = load_dataset(&cfg, &out)?;
    let echo = serde_json::to_value(&cfg).map_err(runtime)?;
    std::fs::write(out.join("config.toml"), toml::to_string(&cfg).map_err(runtime)?).map_err(runtime)?;
    info!(
        "dataset {}: {} train / {} test frames; {} steps",
        dataset.name,
        dataset.train.len(),
        dataset.test.len(),
        cfg.train.total_steps
    );

    let mut trainer = Trainer::new(cfg.train.clone(), &dataset).map_err(input)?;
    let mut log = BufWriter::new(File::create(out.join("metrics.jsonl")).map_err(runtime)?);
    let mut log_err = None;
    let result = trainer.run(|rec| {
        if let Err(e) = serde_json::to_writer(&mut log, rec).map_err(std::io::Error::from).and_then(|_| writeln!(log)) {
            log_err.get_or_insert(e);
        }
        info!("step {:>6} loss {:.5} psnr {:.2} dims {:?}", rec.step, rec.loss, rec.batch_psnr, rec.dims);
    });
    log.flush().map_err(runtime)?;
    if let Some(e) = log_err {
        return Err(runtime(e));
    }
    let ckpt = out.join("checkpoint.dtrf");
    if let Err(e) = result {
        let code = match e {
            dtensorf::Error::NonFiniteLoss { .. } | dtensorf::Error::NonFiniteGradient { .. } => 3,
            _ => 1,
        };
        save_checkpoint(trainer.model(), echo, &ckpt).map_err(runtime)?;
        return Err(Failure {
            code,
            error: anyhow!(e).context(format!("training aborted; last good model saved to {}", ckpt.display())),
        });
    }
    let opts = trainer.eval_opts();
    let model = trainer.into_model();
    let bytes = save_checkpoint(&model, echo.clone(), &ckpt).map_err(runtime)?;
    info!("wrote {} ({bytes} bytes)", ckpt.display());
    if dataset.test.is_empty() {
        warn!("dataset has no test frames; no report written");
        return Ok(());
    }
    let report = evaluate(&model, &dataset.test, &opts, echo).map_err(runtime)?;
    write_json(&out.join("report.json"), &report)?;
    print!("{}", report.to_table());
    Ok(())
}

/// Render options stored with a checkpoint (jitter off), background from `load`.
fn checkpoint_render_options(config: &serde_json::Value, background: [f64; 3]) -> RenderOptions {
    let train: TrainConfig = config.get("train").and_then(|t| serde_json::from_value(t.clone()).ok()).unwrap_or_default();
    RenderOptions { jitter: false, background, ..train.render }
}

fn checkpoint_load_options(config: &serde_json::Value) -> LoadOptions {
    config
        .get("dataset")
        .and_then(|d| d.get("load"))
        .and_then(|l| serde_json::from_value(l.clone()).ok())
        .unwrap_or_default()
}

fn open_checkpoint(path: &Path) -> Outcome<(RadianceModel, serde_json::Value)> {
    load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display())).map_err(input)
}

fn parse_pose(path: &Path) -> anyhow::Result<Matrix4<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read pose file {}", path.display()))?;
    let values: Vec<f64> = match serde_json::from_str::<Vec<Vec<f64>>>(&text) {
        Ok(rows) => rows.into_iter().flatten().collect(),
        Err(_) => text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().with_context(|| format!("bad number `{s}` in pose file")))
            .collect::<anyhow::Result<_>>()?,
    };
    if values.len() != 16 {
        bail!("pose file {} must hold 16 numbers (a 4×4 matrix), found {}", path.display(), values.len());
    }
    Ok(Matrix4::from_row_slice(&values))
}

fn cmd_render(
    checkpoint: &Path,
    time: f64,
    pose: &str,
    out: &Path,
    dataset: Option<&Path>,
    (width, height, fov_x): (u32, u32, f64),
) -> Outcome {
    if !time.is_finite() {
        return Err(input(anyhow!("--time must be a finite number")));
    }
    let tau = time.clamp(0.0, 1.0);
    if tau != time {
        warn!("time {time} outside [0, 1]; clamped to {tau}");
    }
    let (model, config) = open_checkpoint(checkpoint)?;
    let load = checkpoint_load_options(&config);
    let camera = match pose.parse::<usize>() {
        Ok(index) => {
            let dir = match dataset {
                Some(d) => d.to_path_buf(),
                None => config
                    .get("dataset")
                    .and_then(|d| d.get("path"))
                    .and_then(|p| p.as_str())
                    .map(PathBuf::from)
                    .or_else(|| {
                        let out = config.get("out")?.as_str()?;
                        Some(Path::new(out).join("data"))
                    })
                    .ok_or_else(|| input(anyhow!("--pose {index} needs --dataset")))?,
            };
            let ds = load_dnerf(&dir, &load).map_err(input)?;
            let frame = ds.test.get(index).ok_or_else(|| {
                input(anyhow!("test index {index} out of range; {} has {} test frames", dir.display(), ds.test.len()))
            })?;
            frame.camera.clone()
        }
        Err(_) => {
            let c2w = parse_pose(Path::new(pose)).map_err(input)?;
            Camera::new(c2w, fov_x, width, height).map_err(input)?
        }
    };
    let opts = checkpoint_render_options(&config, load.background);
    let image = ModelEval::new(&model, &opts).map_err(runtime)?.render(&camera, tau);
    image.save_png(out).with_context(|| format!("cannot write {}", out.display())).map_err(runtime)?;
    info!("wrote {} at τ = {tau}", out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset: &Path, out: Option<&Path>) -> Outcome {
    let (model, config) = open_checkpoint(checkpoint)?;
    let load = checkpoint_load_options(&config);
    let ds = load_dnerf(dataset, &load).map_err(input)?;
    if ds.test.is_empty() {
        return Err(input(anyhow!("{} has no test frames", dataset.display())));
    }
    let opts = checkpoint_render_options(&config, ds.background);
    let report: EvalReport = evaluate(&model, &ds.test, &opts, config).map_err(runtime)?;
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    println!("{}", serde_json::to_string(&report).map_err(runtime)?);
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_make_synth(spec: Option<&Path>, out: &Path) -> Outcome {
    let spec: SynthSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read spec {}", p.display())).map_err(input)?;
            toml::from_str(&text).with_context(|| format!("invalid spec {}", p.display())).map_err(input)?
        }
        None => SynthSpec::default(),
    };
    let (ds, _) = make_synthetic(&spec).map_err(input)?;
    write_dnerf(&ds, out).with_context(|| format!("cannot write {}", out.display())).map_err(runtime)?;
    println!("wrote {} train / {} test frames to {}", ds.train.len(), ds.test.len(), out.display());
    Ok(())
}

fn cmd_inspect(checkpoint: &Path) -> Outcome {
    let header = read_checkpoint_header(checkpoint)
        .with_context(|| format!("cannot read checkpoint {}", checkpoint.display()))
        .map_err(input)?;
    let (model, config) = open_checkpoint(checkpoint)?;
    let raw_header = std::fs::metadata(checkpoint).map_err(input)?.len() as usize
        - 12
        - header.param_bytes()
        - header.mask_bytes();
    let stats = model.param_stats();
    let file_bytes = std::fs::metadata(checkpoint).map_err(input)?.len();
    println!("kind             {}", header.kind);
    println!("dims             {:?}", header.dims.axes());
    println!("geometry ranks   {:?}", header.geometry_ranks);
    println!("appearance ranks {:?}", header.appearance_ranks);
    println!("decoder          {:?} {:?}", header.decoder, header.decoder_shape);
    println!("aabb             {:?}..{:?}", header.aabb.min, header.aabb.max);
    match &header.mask {
        Some(m) => println!("mask             {:?} cells, {} bytes", m.res, header.mask_bytes()),
        None => println!("mask             none"),
    }
    println!("parameters       {}", stats.count);
    println!("parameter bytes  {}", stats.bytes);
    for (name, _, arr) in model.clone().param_groups_mut() {
        println!("  {name:<18} {}", arr.len());
    }
    println!(
        "file bytes       {file_bytes} = 12 + header {raw_header} + parameters {} + mask {}",
        header.param_bytes(),
        header.mask_bytes()
    );
    if let Some(train) = config.get("train") {
        let field = |k: &str| train.get(k).map_or_else(|| "-".to_string(), |v| v.to_string());
        println!(
            "schedule         steps {} upsample {} mask {} resolution {}→{} seed {}",
            field("total_steps"),
            field("upsample_steps"),
            field("mask_step"),
            field("initial_resolution"),
            field("final_resolution"),
            field("seed")
        );
    }
    Ok(())
}
