//! Full decomposition runs persisted to a checkpoint directory.
//!
//! ```text
//! <dir>/manifest          canonical config + config_hash + completed
//! <dir>/model_<i>.ckpt    final parameters of subproblem i (schedule order)
//! <dir>/model_<i>.ckpt.partial   latest epoch of the subproblem in progress
//! <dir>/metrics_<i>.csv   per-iteration training metrics
//! ```

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::decomposition::{run_schedule, WeightVector};
use crate::error::{Error, Result};
use crate::model::{serialize, ModelParameters};
use crate::rng::derive_seed;
use crate::trainer::{train_subproblem, TrainConfig};

pub const MANIFEST: &str = "manifest";
const BOOKKEEPING: &[&str] = &["config_hash", "completed"];

pub fn model_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("model_{i}.ckpt"))
}

pub fn metrics_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("metrics_{i}.csv"))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parsed manifest of a checkpoint directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub completed: usize,
}

impl Manifest {
    pub fn new(config: RunConfig) -> Self {
        let config_hash = config.hash();
        Self {
            config,
            config_hash,
            completed: 0,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}config_hash={}\ncompleted={}\n",
            self.config.canonical(),
            self.config_hash,
            self.completed
        )
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let config = RunConfig::parse_with(text, origin, BOOKKEEPING)?;
        let field = |key: &str| {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim().to_string())
                .ok_or_else(|| Error::parse(origin, 0, format!("manifest lacks {key}")))
        };
        let config_hash = field("config_hash")?;
        if config_hash != config.hash() {
            return Err(Error::contract(format!(
                "{}: config hash {config_hash} does not match its settings ({})",
                origin.display(),
                config.hash()
            )));
        }
        let completed = field("completed")?
            .parse()
            .map_err(|_| Error::parse(origin, 0, "bad completed count"))?;
        Ok(Self {
            config,
            config_hash,
            completed,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST), self.to_text().as_bytes())
    }
}

pub fn save_model(path: &Path, params: &ModelParameters) -> Result<()> {
    write_atomic(path, &serialize::encode(params))
}

pub fn load_model(path: &Path) -> Result<ModelParameters> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serialize::decode(&bytes).map_err(|e| match e {
        Error::Contract(msg) => Error::contract(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Starting parameters shared by every run with this config.
pub fn initial_parameters(cfg: &RunConfig) -> Result<ModelParameters> {
    ModelParameters::init(&cfg.model, derive_seed(cfg.seed, u64::MAX))?.quantized()
}

/// Training settings for schedule position `i`.
pub fn subproblem_train_config(cfg: &RunConfig, i: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: derive_seed(cfg.seed, i as u64),
        ..cfg.train.clone()
    }
}

/// Options for [`train_run`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Continue an existing directory instead of starting a new one.
    pub resume: bool,
    /// Stop after this many subproblems have completed (for testing interruption).
    pub stop_after: Option<usize>,
}

/// Trains every remaining subproblem of `cfg` into `dir` and returns the
/// parameters of the subproblems trained by this call.
pub fn train_run(cfg: &RunConfig, dir: &Path, opts: RunOptions) -> Result<Vec<ModelParameters>> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let mut manifest = if opts.resume {
        let m = Manifest::load(dir)?;
        if m.config_hash != cfg.hash() {
            return Err(Error::contract(format!(
                "{} was trained with config {} but {} was supplied",
                dir.display(),
                m.config_hash,
                cfg.hash()
            )));
        }
        m
    } else {
        if dir.join(MANIFEST).exists() {
            return Err(Error::contract(format!(
                "{} already holds a run; pass --resume to continue it",
                dir.display()
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = Manifest::new(cfg.clone());
        m.save(dir)?;
        m
    };

    let start = manifest.completed;
    let end = opts.stop_after.map_or(schedule.len(), |s| s.min(schedule.len()));
    if start >= end {
        return Ok(Vec::new());
    }
    let init = if start == 0 {
        initial_parameters(cfg)?
    } else {
        load_model(&model_path(dir, start - 1))?
    };
    let truncated = crate::decomposition::SubproblemSchedule::from_parts(
        schedule.weights()[..end].to_vec(),
        (0..end).map(|i| schedule.epochs(i)).collect(),
    )?;

    let mut trainer = |i: usize, w: &WeightVector, epochs: usize, params: ModelParameters| {
        let tcfg = subproblem_train_config(cfg, i, epochs);
        let mut partial = model_path(dir, i).into_os_string();
        partial.push(".partial");
        let partial = PathBuf::from(partial);
        let (trained, report) = train_subproblem(w, params, &tcfg, |epoch, p, _| {
            log::info!("subproblem {i}: epoch {epoch}/{epochs} done");
            save_model(&partial, p)
        })?;
        write_atomic(&metrics_path(dir, i), report.to_csv().as_bytes())?;
        if partial.exists() {
            std::fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
        }
        trained.quantized()
    };
    run_schedule(&truncated, start, init, &mut trainer, |i, p| {
        save_model(&model_path(dir, i), p)?;
        manifest.completed = i + 1;
        manifest.save(dir)?;
        log::info!("subproblem {}/{} complete", i + 1, schedule.len());
        Ok(())
    })
}

/// A checkpoint directory loaded for inference.
pub struct TrainedRun {
    pub manifest: Manifest,
    pub weights: Vec<WeightVector>,
    pub models: Vec<ModelParameters>,
}

/// Loads every completed model of `dir`, verifying each against the manifest.
pub fn load_run(dir: &Path) -> Result<TrainedRun> {
    let manifest = Manifest::load(dir)?;
    if manifest.completed == 0 {
        return Err(Error::contract(format!("{} holds no completed subproblem", dir.display())));
    }
    let schedule = manifest.config.schedule()?;
    if manifest.completed < schedule.len() {
        log::warn!(
            "{}: only {}/{} subproblems completed",
            dir.display(),
            manifest.completed,
            schedule.len()
        );
    }
    let mut models = Vec::with_capacity(manifest.completed);
    for i in 0..manifest.completed {
        let path = model_path(dir, i);
        let p = load_model(&path)?;
        if p.actor.config() != &manifest.config.model {
            return Err(Error::contract(format!(
                "{} does not match the architecture in the manifest",
                path.display()
            )));
        }
        models.push(p);
    }
    Ok(TrainedRun {
        weights: schedule.weights()[..manifest.completed].to_vec(),
        manifest,
        models,
    })
}
