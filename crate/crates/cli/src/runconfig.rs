//! Run configuration: one JSON document drives every command.
//!
//! The document has a root `seed` plus sections `data`, `model`, `train`,
//! `ensemble`, `sampling`, `boundary`, and `io`. Every field has a default;
//! seeds default to the root seed so one value controls the whole run.
//! Unknown keys anywhere are rejected. Command line overrides take the form
//! `--set section.key=value` and are spliced into the document before
//! extraction, so a typo in an override fails like a typo in the file.

use std::path::{Path, PathBuf};

use kinecast_core::motion::{SyntheticConfig, TopologyPreset};
use kinecast_core::tgn::{TgnConfig, TrainConfig};
use serde_json::{Map, Value};

use crate::jsonio::{as_f64, as_object, as_str, as_u64, as_usize, parse_json, read_text};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed; every section seed that is not set explicitly inherits it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: TgnConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub sampling: SamplingConfig,
    pub boundary: BoundaryConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub synth: SyntheticConfig,
    /// Train, validation, test trajectory fractions; must sum to one.
    pub split: [f64; 3],
    /// Window stride in frames.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub members: usize,
    /// Member seeds are derived from this base.
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    /// Stochastic forecasts drawn per ensemble member.
    pub draws: usize,
    /// Dropout rate forced during sampling.
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConfig {
    /// Significance level: boundaries enclose `1 - alpha` of the fitted mass.
    pub alpha: f64,
    /// Surface and robot-segment grid density.
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoConfig {
    /// Where `synth` writes and `train` reads trajectories.
    pub data_dir: PathBuf,
    /// Where `train` writes and `predict`/`sample` read models.
    pub model_dir: PathBuf,
}

pub fn parse_preset(s: &str) -> CliResult<TopologyPreset> {
    if s == "arm3" {
        Ok(TopologyPreset::Arm3)
    } else if s == "biped17" {
        Ok(TopologyPreset::Biped17)
    } else if let Some(n) = s.strip_prefix("chain:") {
        let joints = n
            .parse::<usize>()
            .map_err(|_| CliError::Validation(format!("bad chain joint count \"{n}\"")))?;
        Ok(TopologyPreset::Chain { joints })
    } else {
        Err(CliError::Validation(format!(
            "unknown preset \"{s}\"; expected arm3, biped17, or chain:<joints>"
        )))
    }
}

// ---------------------------------------------------------------------------
// Optional typed fields.

fn opt<'a>(m: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    m.get(key)
}

fn opt_usize(m: &Map<String, Value>, key: &str, default: usize) -> CliResult<usize> {
    opt(m, key).map_or(Ok(default), |v| as_usize(v, key))
}

fn opt_u64(m: &Map<String, Value>, key: &str, default: u64) -> CliResult<u64> {
    opt(m, key).map_or(Ok(default), |v| as_u64(v, key))
}

fn opt_f64(m: &Map<String, Value>, key: &str, default: f64) -> CliResult<f64> {
    opt(m, key).map_or(Ok(default), |v| as_f64(v, key))
}

fn opt_str<'a>(m: &'a Map<String, Value>, key: &str, default: &'a str) -> CliResult<&'a str> {
    opt(m, key).map_or(Ok(default), |v| as_str(v, key))
}

fn opt_pair(m: &Map<String, Value>, key: &str, default: (f64, f64)) -> CliResult<(f64, f64)> {
    match opt(m, key) {
        None => Ok(default),
        Some(v) => {
            let xs = crate::jsonio::fixed_f64s(v, 2, key)?;
            Ok((xs[0], xs[1]))
        }
    }
}

fn opt_f64s(m: &Map<String, Value>, key: &str, n: usize, default: &[f64]) -> CliResult<Vec<f64>> {
    match opt(m, key) {
        None => Ok(default.to_vec()),
        Some(v) => crate::jsonio::fixed_f64s(v, n, key),
    }
}

fn opt_usizes(m: &Map<String, Value>, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
    match opt(m, key) {
        None => Ok(default.to_vec()),
        Some(v) => crate::jsonio::as_array(v, key)?.iter().map(|x| as_usize(x, key)).collect(),
    }
}

fn section<'a>(root: &'a Map<String, Value>, name: &str) -> CliResult<Map<String, Value>> {
    match root.get(name) {
        None => Ok(Map::new()),
        Some(v) => Ok(as_object(v, name)?.clone()),
    }
}

// ---------------------------------------------------------------------------
// Overrides.

/// Splices `section.key=value` into the document. The value is parsed as
/// JSON when possible and taken as a bare string otherwise, so
/// `train.lr=0.01`, `model.dilations=[1,2,4]`, and `data.preset=arm3` all
/// work without quoting.
fn apply_override(root: &mut Map<String, Value>, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override \"{spec}\" is not key=value")))?;
    let (sect, key) = path.split_once('.').ok_or_else(|| {
        CliError::Validation(format!("override key \"{path}\" must look like section.key"))
    })?;
    if sect.is_empty() || key.is_empty() {
        return Err(CliError::Validation(format!("override key \"{path}\" has an empty part")));
    }
    let value = serde_json::from_str::<Value>(raw).unwrap_or(Value::String(raw.to_string()));
    let entry = root.entry(sect.to_string()).or_insert_with(|| Value::Object(Map::new()));
    let obj = entry
        .as_object_mut()
        .ok_or_else(|| CliError::Validation(format!("section \"{sect}\" is not an object")))?;
    obj.insert(key.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Builds the effective config from an optional file, `--set` overrides
    /// in order, and an optional root-seed override.
    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
        let mut root = match path {
            None => Map::new(),
            Some(p) => {
                let what = p.display().to_string();
                as_object(&parse_json(&read_text(p)?, &what)?, &what)?.clone()
            }
        };
        for spec in sets {
            apply_override(&mut root, spec)?;
        }
        if let Some(s) = seed {
            root.insert("seed".into(), Value::from(s));
        }
        RunConfig::from_map(&root)
    }

    fn from_map(root: &Map<String, Value>) -> CliResult<RunConfig> {
        crate::jsonio::reject_unknown(
            root,
            &["seed", "data", "model", "train", "ensemble", "sampling", "boundary", "io"],
            "config",
        )?;
        let seed = opt_u64(root, "seed", 0)?;

        let d = section(root, "data")?;
        crate::jsonio::reject_unknown(
            &d,
            &[
                "preset",
                "trajectories",
                "frames",
                "fps",
                "freq",
                "amp",
                "noise_std",
                "seed",
                "split",
                "stride",
            ],
            "config.data",
        )?;
        let sd = SyntheticConfig::default();
        let split = opt_f64s(&d, "split", 3, &[0.7, 0.15, 0.15])?;
        let data = DataConfig {
            synth: SyntheticConfig {
                preset: parse_preset(opt_str(&d, "preset", "arm3")?)?,
                trajectories: opt_usize(&d, "trajectories", sd.trajectories)?,
                frames: opt_usize(&d, "frames", sd.frames)?,
                fps: opt_f64(&d, "fps", sd.fps)?,
                freq_range: opt_pair(&d, "freq", sd.freq_range)?,
                amp_range: opt_pair(&d, "amp", sd.amp_range)?,
                noise_std: opt_f64(&d, "noise_std", sd.noise_std)?,
                seed: opt_u64(&d, "seed", seed)?,
            },
            split: [split[0], split[1], split[2]],
            stride: opt_usize(&d, "stride", 1)?,
        };

        let m = section(root, "model")?;
        crate::jsonio::reject_unknown(
            &m,
            &[
                "history",
                "horizon",
                "joints",
                "robot_channels",
                "hidden",
                "heads",
                "dilations",
                "kernel",
                "gat_dropout",
                "tcn_dropout",
                "seed",
            ],
            "config.model",
        )?;
        let md = TgnConfig::default();
        let model = TgnConfig {
            history: opt_usize(&m, "history", md.history)?,
            horizon: opt_usize(&m, "horizon", md.horizon)?,
            joints: opt_usize(&m, "joints", md.joints)?,
            robot_channels: opt_usize(&m, "robot_channels", md.robot_channels)?,
            hidden: opt_usize(&m, "hidden", md.hidden)?,
            heads: opt_usize(&m, "heads", md.heads)?,
            dilations: opt_usizes(&m, "dilations", &md.dilations)?,
            kernel: opt_usize(&m, "kernel", md.kernel)?,
            gat_dropout: opt_f64(&m, "gat_dropout", md.gat_dropout)?,
            tcn_dropout: opt_f64(&m, "tcn_dropout", md.tcn_dropout)?,
            seed: opt_u64(&m, "seed", seed)?,
        };

        let t = section(root, "train")?;
        crate::jsonio::reject_unknown(
            &t,
            &["batch_size", "max_epochs", "lr", "beta1", "beta2", "eps", "patience", "seed"],
            "config.train",
        )?;
        let td = TrainConfig::default();
        let train = TrainConfig {
            batch_size: opt_usize(&t, "batch_size", td.batch_size)?,
            max_epochs: opt_usize(&t, "max_epochs", td.max_epochs)?,
            lr: opt_f64(&t, "lr", td.lr)?,
            beta1: opt_f64(&t, "beta1", td.beta1)?,
            beta2: opt_f64(&t, "beta2", td.beta2)?,
            eps: opt_f64(&t, "eps", td.eps)?,
            patience: opt_usize(&t, "patience", td.patience)?,
            seed: opt_u64(&t, "seed", seed)?,
        };

        let e = section(root, "ensemble")?;
        crate::jsonio::reject_unknown(&e, &["members", "base_seed"], "config.ensemble")?;
        let ensemble = EnsembleConfig {
            members: opt_usize(&e, "members", 3)?,
            base_seed: opt_u64(&e, "base_seed", seed)?,
        };

        let s = section(root, "sampling")?;
        crate::jsonio::reject_unknown(&s, &["draws", "rate", "seed"], "config.sampling")?;
        let sampling = SamplingConfig {
            draws: opt_usize(&s, "draws", 11)?,
            rate: opt_f64(&s, "rate", 0.1)?,
            seed: opt_u64(&s, "seed", seed)?,
        };

        let b = section(root, "boundary")?;
        crate::jsonio::reject_unknown(&b, &["alpha", "resolution"], "config.boundary")?;
        let boundary = BoundaryConfig {
            alpha: opt_f64(&b, "alpha", 0.05)?,
            resolution: opt_usize(&b, "resolution", 16)?,
        };

        let i = section(root, "io")?;
        crate::jsonio::reject_unknown(&i, &["data_dir", "model_dir"], "config.io")?;
        let io = IoConfig {
            data_dir: PathBuf::from(opt_str(&i, "data_dir", "data")?),
            model_dir: PathBuf::from(opt_str(&i, "model_dir", "models")?),
        };

        let cfg = RunConfig { seed, data, model, train, ensemble, sampling, boundary, io };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let total: f64 = self.data.split.iter().sum();
        if self.data.split.iter().any(|r| *r < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(CliError::Validation(format!(
                "data.split must be nonnegative and sum to 1, got {:?}",
                self.data.split
            )));
        }
        if self.data.stride == 0 {
            return Err(CliError::Validation("data.stride must be at least 1".into()));
        }
        if self.ensemble.members == 0 {
            return Err(CliError::Validation("ensemble.members must be at least 1".into()));
        }
        if self.sampling.draws == 0 {
            return Err(CliError::Validation("sampling.draws must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.sampling.rate) {
            return Err(CliError::Validation(format!(
                "sampling.rate must lie in [0, 1), got {}",
                self.sampling.rate
            )));
        }
        if !(0.0 < self.boundary.alpha && self.boundary.alpha < 1.0) {
            return Err(CliError::Validation(format!(
                "boundary.alpha must lie in (0, 1), got {}",
                self.boundary.alpha
            )));
        }
        if self.boundary.resolution == 0 {
            return Err(CliError::Validation("boundary.resolution must be at least 1".into()));
        }
        Ok(())
    }
}
