//! Flat `key = value` run configuration.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::decomposition::{Direction, SubproblemSchedule};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_REFERENCE;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// `epochs` and `seed` are set per subproblem from the fields below.
    pub train: TrainConfig,
    pub subproblems: usize,
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub direction: Direction,
    pub reference: [f64; 2],
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            subproblems: 100,
            epochs_first: 5,
            epochs_rest: 1,
            direction: Direction::Forward,
            reference: DEFAULT_REFERENCE,
            seed: 1234,
        }
    }
}

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "actor_lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "bn_eps",
    "bn_momentum",
    "clip",
    "critic_lr",
    "d_ff",
    "d_h",
    "dataset_size",
    "direction",
    "dx",
    "epochs_first",
    "epochs_rest",
    "grad_clip",
    "heads",
    "layers",
    "nodes",
    "reference",
    "seed",
    "subproblems",
];

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::contract(format!("bad value {value:?} for {key}")))
        }
        match key {
            "dx" => self.model.dx = num(key, value)?,
            "d_h" => self.model.d_h = num(key, value)?,
            "layers" => self.model.layers = num(key, value)?,
            "heads" => self.model.heads = num(key, value)?,
            "d_ff" => self.model.d_ff = num(key, value)?,
            "clip" => self.model.clip = num(key, value)?,
            "bn_momentum" => self.model.bn_momentum = num(key, value)?,
            "bn_eps" => self.model.bn_eps = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "dataset_size" => self.train.dataset_size = num(key, value)?,
            "nodes" => self.train.nodes = num(key, value)?,
            "actor_lr" => self.train.actor_lr = num(key, value)?,
            "critic_lr" => self.train.critic_lr = num(key, value)?,
            "adam_beta1" => self.train.beta1 = num(key, value)?,
            "adam_beta2" => self.train.beta2 = num(key, value)?,
            "adam_eps" => self.train.adam_eps = num(key, value)?,
            "grad_clip" => self.train.grad_clip = num(key, value)?,
            "subproblems" => self.subproblems = num(key, value)?,
            "epochs_first" => self.epochs_first = num(key, value)?,
            "epochs_rest" => self.epochs_rest = num(key, value)?,
            "direction" => self.direction = value.parse()?,
            "reference" => self.reference = parse_pair(value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::contract(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "dx" => self.model.dx.to_string(),
            "d_h" => self.model.d_h.to_string(),
            "layers" => self.model.layers.to_string(),
            "heads" => self.model.heads.to_string(),
            "d_ff" => self.model.d_ff.to_string(),
            "clip" => self.model.clip.to_string(),
            "bn_momentum" => self.model.bn_momentum.to_string(),
            "bn_eps" => self.model.bn_eps.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "dataset_size" => self.train.dataset_size.to_string(),
            "nodes" => self.train.nodes.to_string(),
            "actor_lr" => self.train.actor_lr.to_string(),
            "critic_lr" => self.train.critic_lr.to_string(),
            "adam_beta1" => self.train.beta1.to_string(),
            "adam_beta2" => self.train.beta2.to_string(),
            "adam_eps" => self.train.adam_eps.to_string(),
            "grad_clip" => self.train.grad_clip.to_string(),
            "subproblems" => self.subproblems.to_string(),
            "epochs_first" => self.epochs_first.to_string(),
            "epochs_rest" => self.epochs_rest.to_string(),
            "direction" => self.direction.to_string(),
            "reference" => format!("{},{}", self.reference[0], self.reference[1]),
            "seed" => self.seed.to_string(),
            _ => unreachable!("key list and accessor disagree on {key}"),
        }
    }

    /// Parses config text on top of the defaults. Keys in `ignore` are
    /// skipped (used for manifest bookkeeping).
    pub fn parse_with(text: &str, origin: &Path, ignore: &[&str]) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if ignore.contains(&key) {
                continue;
            }
            cfg.set(key, value).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::parse_with(text, origin, &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// One `key=value` line per key, sorted by key.
    pub fn canonical(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k))).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.subproblems == 0 {
            return Err(Error::contract("need at least one subproblem"));
        }
        if self.model.dx != 4 {
            return Err(Error::contract(format!(
                "training instances are bi-objective (dx = 4), got dx = {}",
                self.model.dx
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<SubproblemSchedule> {
        SubproblemSchedule::new(self.subproblems, self.epochs_first, self.epochs_rest, self.direction)
    }
}

/// Parses `a,b` into two reals.
pub fn parse_pair(value: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok([a, b]),
            _ => Err(Error::contract(format!("bad number pair {value:?}"))),
        },
        _ => Err(Error::contract(format!("expected two comma-separated numbers, got {value:?}"))),
    }
}
