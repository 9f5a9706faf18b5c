//! Run configuration: one JSON document plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use deq_core::data::{load_dataset_csv, make_two_spirals, Dataset};
use deq_core::training::{ModelConfig, PretrainConfig, TrainConfig};
use deq_core::{SolverConfig, StrategyConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoSpirals {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        /// The test split uses `seed + 1`.
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
    },
}

fn default_n_train() -> usize {
    2000
}
fn default_n_test() -> usize {
    1000
}
fn default_noise() -> f64 {
    0.05
}
fn default_data_seed() -> u64 {
    1
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::TwoSpirals {
            n_train: default_n_train(),
            n_test: default_n_test(),
            noise: default_noise(),
            seed: default_data_seed(),
        }
    }
}

impl DatasetConfig {
    /// `(train, test)` splits.
    pub fn load(&self) -> Result<(Dataset, Dataset), CliError> {
        match self {
            DatasetConfig::TwoSpirals {
                n_train,
                n_test,
                noise,
                seed,
            } => Ok((
                make_two_spirals(*n_train, *noise, *seed).map_err(CliError::config)?,
                make_two_spirals(*n_test, *noise, seed.wrapping_add(1))
                    .map_err(CliError::config)?,
            )),
            DatasetConfig::Csv {
                train,
                test,
                num_classes,
            } => {
                let load = |p: &Path| {
                    load_dataset_csv(p, *num_classes)
                        .map_err(|e| CliError::Config(format!("dataset {}: {e}", p.display())))
                };
                let (train, test) = (load(train)?, load(test)?);
                if train.is_empty() || test.is_empty() {
                    return Err(CliError::Config("dataset splits must be non-empty".into()));
                }
                if train.dim() != test.dim() {
                    return Err(CliError::Config(format!(
                        "train and test feature dimensions differ ({} vs {})",
                        train.dim(),
                        test.dim()
                    )));
                }
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Model checkpoint written by `train`.
    pub checkpoint: Option<PathBuf>,
    pub trials: usize,
    /// Training samples per timed trial.
    pub batch_size: usize,
    /// Untimed passes before measuring.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            checkpoint: None,
            trials: 20,
            batch_size: 64,
            warmup: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoCell {
    /// `f(z) = 0.5 z + x` with `x = 1`.
    ScalarLinear,
    /// `W = 0`: the map ignores `z`.
    Constant,
    /// Random Tanh cell rescaled to `gamma`.
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub cell: DemoCell,
    pub d_z: usize,
    pub d_x: usize,
    pub gamma: f64,
    pub input_scale: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            cell: DemoCell::Tanh,
            d_z: 32,
            d_x: 2,
            gamma: 0.9,
            input_scale: 1.0,
            seed: 0,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Everything a command needs. Training fields sit at the top level so
/// overrides read `strategy.variant=gdeq`, `learning_rate=0.01`, etc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    pub solver: SolverConfig,
    pub pretrain: PretrainConfig,
    pub fidelity_every: usize,
    pub dataset: DatasetConfig,
    pub bench: BenchConfig,
    pub demo: DemoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_train(&TrainConfig::default())
    }
}

impl RunConfig {
    pub fn from_train(t: &TrainConfig) -> Self {
        RunConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            seed: t.seed,
            model: t.model,
            strategy: t.strategy,
            solver: t.solver,
            pretrain: t.pretrain,
            fidelity_every: t.fidelity_every,
            dataset: DatasetConfig::default(),
            bench: BenchConfig::default(),
            demo: DemoConfig::default(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed: self.seed,
            model: self.model,
            strategy: self.strategy,
            solver: self.solver,
            pretrain: self.pretrain,
            fidelity_every: self.fidelity_every,
        }
    }

    /// Reads `path` (or starts from defaults), applies `overrides` in order,
    /// then deserializes and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str::<Value>(&text).map_err(|e| {
                    CliError::Config(format!("config {} is not valid JSON: {e}", p.display()))
                })?
            }
            None => Value::Object(Default::default()),
        };
        let mut full = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        merge(&mut full, doc, "");
        for ov in overrides {
            let mut layer = Value::Object(Default::default());
            apply_override(&mut layer, ov)?;
            merge(&mut full, layer, "");
        }
        let cfg = Self::from_value(full)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(doc: Value) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(doc).map_err(
            |e: serde_path_to_error::Error<serde_json::Error>| {
                let path = e.path().to_string();
                if path == "." {
                    CliError::Config(format!("config: {}", e.inner()))
                } else {
                    CliError::Config(format!("config field `{path}`: {}", e.inner()))
                }
            },
        )
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(CliError::config)?;
        if self.bench.trials < 10 {
            return Err(CliError::Config(format!(
                "bench.trials must be at least 10, got {}",
                self.bench.trials
            )));
        }
        if self.bench.batch_size < 1 {
            return Err(CliError::Config(
                "bench.batch_size must be at least 1".into(),
            ));
        }
        if self.demo.d_z < 1 || self.demo.d_x < 1 {
            return Err(CliError::Config(
                "demo.d_z and demo.d_x must be at least 1".into(),
            ));
        }
        if !(self.demo.gamma > 0.0 && self.demo.gamma < 1.0) {
            return Err(CliError::Config(format!(
                "demo.gamma must lie in (0, 1), got {}",
                self.demo.gamma
            )));
        }
        Ok(())
    }
}

/// Sets a dotted path such as `strategy.variant=gdeq`. The value is parsed
/// as JSON when possible and taken as a plain string otherwise.
/// Object keys holding an internally tagged enum, with their tag field.
const TAGGED: [(&str, &str); 2] = [("dataset", "kind"), ("strategy", "variant")];

/// Overlays `top` onto `base`. Objects merge key by key; a tagged object whose tag
/// changes is replaced outright so the old variant's fields do not carry over.
fn merge(base: &mut Value, top: Value, path: &str) {
    let (Value::Object(b), Value::Object(t)) = (&mut *base, &top) else {
        *base = top;
        return;
    };
    if let Some((_, tag)) = TAGGED.iter().find(|(k, _)| *k == path) {
        if t.get(*tag).is_some_and(|v| b.get(*tag) != Some(v)) {
            *base = top;
            return;
        }
    }
    let Value::Object(t) = top else {
        unreachable!()
    };
    for (k, v) in t {
        let child = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match b.get_mut(&k) {
            Some(slot) => merge(slot, v, &child),
            None => {
                b.insert(k, v);
            }
        }
    }
}

pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Config(format!("override `{spec}` is not of the form key=value"))
    })?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!(
            "override `{spec}` has an empty key segment"
        )));
    }
    let value =
        serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

    let mut node = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if !node.is_object() {
            let parent = segments[..i].join(".");
            return Err(CliError::Config(format!(
                "override `{key}`: `{parent}` is not an object"
            )));
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == segments.len() {
            map.insert(seg.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one segment")
}
