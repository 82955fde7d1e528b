//! Run configuration files: a preset, optional TOML overrides, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dtensorf::data::{LoadOptions, SynthSpec};
use dtensorf::factors::FactorKind;
use dtensorf::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Named starting points for `[train]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-scale schedule: 64³ to 150³ voxels over 30k steps.
    #[default]
    Default,
    /// 24³ to 48³ voxels, 2000 steps, MM with R_σ = 4.
    TinyMm,
    /// 24³ to 48³ voxels, 2000 steps, CP with R_σ = 12.
    TinyCp,
}

impl Preset {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Default => TrainConfig::default(),
            Preset::TinyMm => TrainConfig::tiny(FactorKind::Mm),
            Preset::TinyCp => TrainConfig::tiny(FactorKind::Cp),
        }
    }
}

/// Where training images come from: a D-NeRF-layout directory or a
/// procedural scene written to `<out>/data` before training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SynthSpec>,
    pub load: LoadOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub preset: Preset,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    pub train: TrainConfig,
}

#[derive(Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfigFile {
    /// Builds the effective configuration. `[train]` keys in the file are
    /// layered over the preset; relative paths resolve against the file's
    /// directory (or the working directory without a file).
    pub fn load(path: Option<&Path>, flags: Overrides) -> Result<Self> {
        let (mut file, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                let value: toml::Value = toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?;
                (value, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Value::Table(Default::default()), PathBuf::new()),
        };
        let table = file.as_table_mut().context("config root must be a table")?;
        let preset = match (flags.preset, table.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.clone().try_into().context("invalid `preset`")?,
            (None, None) => Preset::Default,
        };
        table.insert("preset".into(), toml::Value::try_from(preset)?);
        let mut train = toml::Value::try_from(preset.train_config()).context("preset does not serialize")?;
        if let Some(over) = table.remove("train") {
            merge(&mut train, over);
        }
        table.insert("train".into(), train);
        let mut cfg: RunConfigFile = file.try_into().context("invalid config")?;

        if let Some(out) = flags.out {
            cfg.out = Some(out);
        } else if let Some(out) = &cfg.out {
            cfg.out = Some(resolve(&base_dir, out));
        }
        if let Some(d) = flags.dataset {
            cfg.dataset.path = Some(d);
            cfg.dataset.synthetic = None;
        } else if let Some(d) = &cfg.dataset.path {
            cfg.dataset.path = Some(resolve(&base_dir, d));
        }
        if let Some(seed) = flags.seed {
            cfg.train.seed = seed;
        }
        if let Some(steps) = flags.steps {
            cfg.train.total_steps = steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => bail!("set only one of dataset.path and dataset.synthetic"),
            (None, None) => bail!("no dataset: set dataset.path, dataset.synthetic or pass --dataset"),
            _ => {}
        }
        if self.out.is_none() {
            bail!("no output directory: set `out` or pass --out");
        }
        self.train.validate().context("invalid [train] section")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn file_layers_over_preset() {
        let (_d, p) = write("preset = \"tiny-cp\"\nout = \"o\"\n[dataset]\npath = \"data\"\n[train]\nbatch_size = 64\n");
        let cfg = RunConfigFile::load(Some(&p), Overrides::default()).unwrap();
        assert_eq!(cfg.train.kind, FactorKind::Cp);
        assert_eq!(cfg.train.density_rank, 12);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.dataset.path.unwrap(), p.parent().unwrap().join("data"));
    }

    #[test]
    fn flags_override_file() {
        let (_d, p) = write("out = \"o\"\n[dataset]\npath = \"data\"\n[train]\nseed = 3\ntotal_steps = 50\nupsample_steps = []\nmask_step = 10\n");
        let flags = Overrides { seed: Some(9), steps: Some(20), preset: Some(Preset::TinyMm), ..Default::default() };
        let cfg = RunConfigFile::load(Some(&p), flags).unwrap();
        assert_eq!((cfg.train.seed, cfg.train.total_steps, cfg.preset), (9, 20, Preset::TinyMm));
        assert_eq!(cfg.train.density_rank, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "out = \"o\"\nbogus = 1\n[dataset]\npath = \"d\"\n",
            "out = \"o\"\n[dataset]\npath = \"d\"\n[train]\nlambda_smoth = 1.0\n",
            "out = \"o\"\n[dataset]\npath = \"d\"\nextra = 2\n",
        ] {
            let (_d, p) = write(text);
            assert!(RunConfigFile::load(Some(&p), Overrides::default()).is_err(), "{text}");
        }
    }

    #[test]
    fn dataset_and_out_required() {
        let (_d, p) = write("out = \"o\"\n");
        assert!(RunConfigFile::load(Some(&p), Overrides::default()).is_err());
        let (_d, p) = write("[dataset]\npath = \"d\"\n");
        assert!(RunConfigFile::load(Some(&p), Overrides::default()).is_err());
        let (_d, p) = write("out = \"o\"\n[dataset]\npath = \"d\"\n[dataset.synthetic]\n");
        assert!(RunConfigFile::load(Some(&p), Overrides::default()).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let (_d, p) = write("preset = \"tiny-mm\"\nout = \"o\"\n[dataset.synthetic]\namplitude = 0.3\n");
        let cfg = RunConfigFile::load(Some(&p), Overrides::default()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfigFile = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
