//! Run configuration read from a TOML file.
//!
//! Every section is optional and every key falls back to its default:
//!
//! ```toml
//! schema = "dci_39.schema"   # relative to the config file
//!
//! [sim]                      # scheduler, see `SimConfig`
//! tti_count = 10000
//!
//! [split]
//! test_fraction = 0.03
//!
//! [train]
//! memory = 2
//! order = "descending"
//!
//! [eval]
//! methods = ["identity", "huffman", "adaptive", "rnn", "transformer", "joint"]
//!
//! [pdcch]                    # link simulation, see `PdcchConfig`
//! snr_db = [-3.0, -2.0, -1.0, 0.0, 1.0]
//! ```

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dcizip::coders::Method;
use dcizip::models::TrainConfig;
use dcizip::pdcch::PdcchConfig;
use dcizip::pipeline::{SortDirection, TrainSettings};
use dcizip::tracegen::SimConfig;
use dcizip::{DciSchema, Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Descending,
    Ascending,
}

impl From<Order> for SortDirection {
    fn from(o: Order) -> Self {
        match o {
            Order::Descending => SortDirection::Descending,
            Order::Ascending => SortDirection::Ascending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Tail fraction of every UE's stream used as the test set.
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub memory: usize,
    pub rnn_memory: usize,
    pub validation_fraction: f64,
    pub order: Order,
    pub epochs: usize,
    pub patience: usize,
    pub batch_fields: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub train_rnn: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = TrainSettings::default();
        let o = TrainConfig::default();
        TrainSection {
            memory: s.memory,
            rnn_memory: s.rnn_memory,
            validation_fraction: s.validation_fraction,
            order: Order::Descending,
            epochs: o.epochs,
            patience: o.patience,
            batch_fields: o.batch_fields,
            learning_rate: o.learning_rate,
            seed: s.seed,
            train_rnn: s.train_rnn,
        }
    }
}

impl TrainSection {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            memory: self.memory,
            rnn_memory: self.rnn_memory,
            validation_fraction: self.validation_fraction,
            direction: self.order.into(),
            optimizer: TrainConfig {
                epochs: self.epochs,
                patience: self.patience,
                batch_fields: self.batch_fields,
                learning_rate: self.learning_rate,
                seed: self.seed,
                ..TrainConfig::default()
            },
            seed: self.seed,
            train_rnn: self.train_rnn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub methods: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
        }
    }
}

impl EvalSection {
    pub fn methods(&self) -> Result<Vec<Method>> {
        let methods = self
            .methods
            .iter()
            .map(|s| s.parse::<Method>().map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if methods.is_empty() {
            return Err(Error::Config("no evaluation methods configured".into()));
        }
        Ok(methods)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Schema file; the bundled 39-bit layout when absent.
    pub schema: Option<PathBuf>,
    pub sim: SimConfig,
    pub split: SplitSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub pdcch: PdcchConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        Ok(cfg)
    }

    /// Reads `path`; a relative `schema` entry is resolved against the
    /// directory holding the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        if let (Some(schema), Some(dir)) = (&cfg.schema, path.parent()) {
            if schema.is_relative() {
                cfg.schema = Some(dir.join(schema));
            }
        }
        Ok(cfg)
    }

    /// Applies a global seed to every stage.
    pub fn reseed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.train.seed = seed;
        self.pdcch.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.pdcch.validate()?;
        self.eval.methods()?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if self.train.epochs == 0 || self.train.batch_fields == 0 {
            return Err(Error::Config("epochs and batch_fields must be positive".into()));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn load_schema(&self) -> Result<DciSchema> {
        match &self.schema {
            None => Ok(DciSchema::default_dci()),
            Some(p) => DciSchema::load(p).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read schema {}: {io}", p.display())),
                other => other,
            }),
        }
    }
}
