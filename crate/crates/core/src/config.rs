//! Experiment configuration and its `key = value` file format.
//!
//! A config file is a list of lines of the form `key = value`. Blank lines
//! and lines starting with `#` are ignored. Every key is optional; missing
//! keys keep the defaults of [`ExperimentConfig::default`]. Nested settings
//! use dotted keys such as `aggregator.mu` or `data.cluster_spread`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregatorConfig, AggregatorKind};
use crate::error::ConfigError;
use crate::model::{ModelKind, ModelSpec};
use crate::partition::{PartitionScheme, SyntheticSpec};
use crate::seed::{derive_seed, TAG_DATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Iid,
    LabelShard,
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "iid" => Ok(Distribution::Iid),
            "label_shard" | "non_iid" => Ok(Distribution::LabelShard),
            other => Err(format!("unknown distribution `{other}` (expected iid or label_shard)")),
        }
    }
}

impl std::fmt::Display for Distribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distribution::Iid => "iid",
            Distribution::LabelShard => "label_shard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub examples_per_class: usize,
    pub cluster_spread: f64,
    /// Explicit data seed; otherwise derived from the experiment seed.
    pub seed: Option<u64>,
}

/// Linear cost model used for simulated round durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Seconds to process one example for one local epoch.
    pub per_example_s: f64,
    /// Fixed per-round overhead in seconds.
    pub per_round_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        // dyadic so that per-round costs sum exactly
        Self {
            per_example_s: 1.0 / 128.0,
            per_round_s: 2.0,
        }
    }
}

/// Everything needed to reproduce one simulated federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub num_clients: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub local_lr: f64,
    pub eval_fraction: f64,
    /// Share of each client's examples held out for global evaluation.
    pub holdout_fraction: f64,
    pub aggregator: AggregatorConfig,
    pub distribution: Distribution,
    pub classes_per_client: usize,
    pub model_kind: ModelKind,
    pub hidden_dim: usize,
    pub data: DataConfig,
    pub cost: CostModel,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            num_clients: 20,
            fraction: 0.5,
            local_epochs: 8,
            batch_size: 4,
            local_lr: 0.001,
            eval_fraction: 1.0,
            holdout_fraction: 0.2,
            aggregator: AggregatorConfig::with_defaults(AggregatorKind::FedAdam),
            distribution: Distribution::LabelShard,
            classes_per_client: 2,
            model_kind: ModelKind::Mlp1,
            hidden_dim: 16,
            data: DataConfig {
                num_classes: 8,
                input_dim: 8,
                examples_per_class: 200,
                cluster_spread: 0.3,
                seed: None,
            },
            cost: CostModel::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model_kind,
            input_dim: self.data.input_dim,
            num_classes: self.data.num_classes,
            hidden_dim: match self.model_kind {
                ModelKind::LogisticRegression => 0,
                ModelKind::Mlp1 => self.hidden_dim,
            },
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.data.num_classes,
            input_dim: self.data.input_dim,
            examples_per_class: self.data.examples_per_class,
            cluster_spread: self.data.cluster_spread,
            seed: self.data.seed.unwrap_or_else(|| derive_seed(self.seed, &[TAG_DATA])),
        }
    }

    pub fn partition_scheme(&self) -> PartitionScheme {
        match self.distribution {
            Distribution::Iid => PartitionScheme::Iid,
            Distribution::LabelShard => PartitionScheme::LabelShard {
                classes_per_client: self.classes_per_client,
            },
        }
    }

    /// Checks every range constraint. Errors name the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, msg: &str| Err(ConfigError::at(None, key, msg));
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.rounds == 0 {
            return fail("rounds", "must be at least 1");
        }
        if self.num_clients == 0 {
            return fail("num_clients", "must be at least 1");
        }
        if !in_unit(self.fraction) {
            return fail("fraction", "must lie in (0, 1]");
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return fail("local_lr", "must be positive");
        }
        if !in_unit(self.eval_fraction) {
            return fail("eval_fraction", "must lie in (0, 1]");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return fail("holdout_fraction", "must lie in (0, 1)");
        }
        if self.classes_per_client == 0 {
            return fail("partition.classes_per_client", "must be at least 1");
        }
        if self.model_kind == ModelKind::Mlp1 && self.hidden_dim == 0 {
            return fail("model.hidden_dim", "must be at least 1");
        }
        if self.data.num_classes < 2 {
            return fail("data.num_classes", "must be at least 2");
        }
        if self.data.input_dim == 0 {
            return fail("data.input_dim", "must be at least 1");
        }
        if self.data.examples_per_class == 0 {
            return fail("data.examples_per_class", "must be at least 1");
        }
        if !(self.data.cluster_spread > 0.0 && self.data.cluster_spread.is_finite()) {
            return fail("data.cluster_spread", "must be positive");
        }
        if !(self.cost.per_example_s >= 0.0 && self.cost.per_example_s.is_finite()) {
            return fail("cost.per_example_s", "must be non-negative");
        }
        if !(self.cost.per_round_s >= 0.0 && self.cost.per_round_s.is_finite()) {
            return fail("cost.per_round_s", "must be non-negative");
        }
        let total = self.data.num_classes * self.data.examples_per_class;
        match self.distribution {
            Distribution::Iid if total < self.num_clients => {
                return fail("num_clients", "exceeds the number of examples");
            }
            Distribution::LabelShard if self.num_clients * self.classes_per_client < self.data.num_classes => {
                return fail(
                    "partition.classes_per_client",
                    "num_clients * classes_per_client must cover every class",
                );
            }
            _ => {}
        }
        self.aggregator.validate()
    }

    /// Parses a config file; see the module docs for the format.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let mut cfg = Self::default();
        let mut lines = HashMap::new();
        for e in &entries {
            cfg.set(&e.key, &e.value)
                .map_err(|msg| ConfigError::at(Some(e.line), &e.key, msg))?;
            lines.insert(e.key.clone(), e.line);
        }
        cfg.validate().map_err(|err| anchor(err, &lines))?;
        Ok(cfg)
    }

    /// Applies a single `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "rounds" => self.rounds = num(value)?,
            "num_clients" => self.num_clients = num(value)?,
            "fraction" => self.fraction = num(value)?,
            "local_epochs" => self.local_epochs = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "local_lr" => self.local_lr = num(value)?,
            "eval_fraction" => self.eval_fraction = num(value)?,
            "holdout_fraction" => self.holdout_fraction = num(value)?,
            "seed" => self.seed = num(value)?,
            "aggregator" => self.aggregator.kind = value.parse()?,
            "aggregator.mu" => self.aggregator.prox_mu = num(value)?,
            "aggregator.server_lr" => self.aggregator.server_lr = num(value)?,
            "aggregator.beta1" => self.aggregator.beta1 = num(value)?,
            "aggregator.beta2" => self.aggregator.beta2 = num(value)?,
            "aggregator.tau" => self.aggregator.tau = num(value)?,
            "partition" => self.distribution = value.parse()?,
            "partition.classes_per_client" => self.classes_per_client = num(value)?,
            "model" => {
                self.model_kind = match value {
                    "logistic" => ModelKind::LogisticRegression,
                    "mlp" => ModelKind::Mlp1,
                    other => return Err(format!("unknown model `{other}` (expected logistic or mlp)")),
                }
            }
            "model.hidden_dim" => self.hidden_dim = num(value)?,
            "data.num_classes" => self.data.num_classes = num(value)?,
            "data.input_dim" => self.data.input_dim = num(value)?,
            "data.examples_per_class" => self.data.examples_per_class = num(value)?,
            "data.cluster_spread" => self.data.cluster_spread = num(value)?,
            "data.seed" => self.data.seed = Some(num(value)?),
            "cost.per_example_s" => self.cost.per_example_s = num(value)?,
            "cost.per_round_s" => self.cost.per_round_s = num(value)?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Writes the fully resolved config in the file format accepted by
    /// [`ExperimentConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("rounds", self.rounds.to_string());
        kv("num_clients", self.num_clients.to_string());
        kv("fraction", self.fraction.to_string());
        kv("local_epochs", self.local_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("local_lr", self.local_lr.to_string());
        kv("eval_fraction", self.eval_fraction.to_string());
        kv("holdout_fraction", self.holdout_fraction.to_string());
        kv("seed", self.seed.to_string());
        kv("aggregator", self.aggregator.kind.to_string());
        kv("aggregator.mu", self.aggregator.prox_mu.to_string());
        kv("aggregator.server_lr", self.aggregator.server_lr.to_string());
        kv("aggregator.beta1", self.aggregator.beta1.to_string());
        kv("aggregator.beta2", self.aggregator.beta2.to_string());
        kv("aggregator.tau", self.aggregator.tau.to_string());
        kv("partition", self.distribution.to_string());
        kv("partition.classes_per_client", self.classes_per_client.to_string());
        kv(
            "model",
            match self.model_kind {
                ModelKind::LogisticRegression => "logistic",
                ModelKind::Mlp1 => "mlp",
            }
            .to_string(),
        );
        kv("model.hidden_dim", self.hidden_dim.to_string());
        kv("data.num_classes", self.data.num_classes.to_string());
        kv("data.input_dim", self.data.input_dim.to_string());
        kv("data.examples_per_class", self.data.examples_per_class.to_string());
        kv("data.cluster_spread", self.data.cluster_spread.to_string());
        if let Some(seed) = self.data.seed {
            kv("data.seed", seed.to_string());
        }
        kv("cost.per_example_s", self.cost.per_example_s.to_string());
        kv("cost.per_round_s", self.cost.per_round_s.to_string());
        out
    }
}

fn num<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{value}` is not a valid number"))
}

fn anchor(mut err: ConfigError, lines: &HashMap<String, usize>) -> ConfigError {
    if err.line.is_none() {
        err.line = err.key.as_ref().and_then(|k| lines.get(k).copied());
    }
    err
}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits a config file into entries, rejecting malformed and duplicate
/// lines.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| ConfigError::at(Some(line), trimmed, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError {
                line: Some(line),
                key: None,
                message: "missing key".into(),
            });
        }
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(ConfigError::at(Some(line), key, format!("already set on line {prev}")));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(out)
}

/// The experiment axis a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rounds,
    LocalEpochs,
    Fraction,
    Aggregator,
    Distribution,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rounds" => Ok(SweepAxis::Rounds),
            "local_epochs" | "epochs" => Ok(SweepAxis::LocalEpochs),
            "fraction" => Ok(SweepAxis::Fraction),
            "aggregator" => Ok(SweepAxis::Aggregator),
            "distribution" | "partition" => Ok(SweepAxis::Distribution),
            other => Err(format!(
                "unknown axis `{other}` (expected rounds, local_epochs, fraction, aggregator or distribution)"
            )),
        }
    }
}

impl SweepAxis {
    /// Config key the axis writes to.
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Rounds => "rounds",
            SweepAxis::LocalEpochs => "local_epochs",
            SweepAxis::Fraction => "fraction",
            SweepAxis::Aggregator => "aggregator",
            SweepAxis::Distribution => "partition",
        }
    }
}

/// A one-axis sweep over a base config, repeated for each listed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

/// One `(value, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub axis_value: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    /// Parses a sweep file: base config keys plus `sweep.axis`,
    /// `sweep.values` and `sweep.seeds` (comma-separated lists).
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let mut base = ExperimentConfig::default();
        let mut lines = HashMap::new();
        let (mut axis, mut values, mut seeds) = (None, None, None);
        for e in &entries {
            let at = |msg: String| ConfigError::at(Some(e.line), &e.key, msg);
            match e.key.as_str() {
                "sweep.axis" => axis = Some(e.value.parse::<SweepAxis>().map_err(at)?),
                "sweep.values" => values = Some(split_list(&e.value)),
                "sweep.seeds" => {
                    seeds = Some(
                        split_list(&e.value)
                            .iter()
                            .map(|s| num::<u64>(s))
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(at)?,
                    )
                }
                _ => base.set(&e.key, &e.value).map_err(at)?,
            }
            lines.insert(e.key.clone(), e.line);
        }
        let missing = |key: &str| ConfigError::at(None, key, "required for a sweep");
        let spec = SweepSpec {
            base,
            axis: axis.ok_or_else(|| missing("sweep.axis"))?,
            values: values.ok_or_else(|| missing("sweep.values"))?,
            seeds: seeds.ok_or_else(|| missing("sweep.seeds"))?,
        };
        spec.validate().map_err(|err| anchor(err, &lines))?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.values.is_empty() {
            return Err(ConfigError::at(None, "sweep.values", "must list at least one value"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::at(None, "sweep.seeds", "must list at least one seed"));
        }
        self.cells().map(|_| ())
    }

    /// Expands every `(value, seed)` combination, value-major.
    pub fn cells(&self) -> Result<Vec<SweepCell>, ConfigError> {
        let mut out = Vec::with_capacity(self.values.len() * self.seeds.len());
        for value in &self.values {
            for &seed in &self.seeds {
                let mut config = self.base.clone();
                config.seed = seed;
                config
                    .set(self.axis.key(), value)
                    .map_err(|msg| ConfigError::at(None, "sweep.values", format!("`{value}`: {msg}")))?;
                config.validate().map_err(|err| ConfigError {
                    message: format!("{} (sweep value `{value}`, seed {seed})", err.message),
                    ..err
                })?;
                out.push(SweepCell {
                    axis_value: value.clone(),
                    seed,
                    config,
                });
            }
        }
        Ok(out)
    }
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_reference() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.local_lr, cfg.batch_size, cfg.eval_fraction), (0.001, 4, 1.0));
        assert_eq!(cfg.model_spec().param_count(), (8 + 1) * 16 + (16 + 1) * 8);
    }

    #[test]
    fn parse_minimal_and_comments() {
        let cfg = ExperimentConfig::parse("# comment\nrounds = 3\n\naggregator = fedprox\naggregator.mu = 0.5\n").unwrap();
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.aggregator.kind, AggregatorKind::FedProx);
        assert_eq!(cfg.aggregator.prox_mu, 0.5);
        assert_eq!(cfg.num_clients, 20);
    }

    #[test]
    fn errors_are_line_anchored() {
        let err = ExperimentConfig::parse("rounds = 3\nfraction = 0\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert_eq!(err.key.as_deref(), Some("fraction"));
        let err = ExperimentConfig::parse("rounds = 3\n\nbogus = 1\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = ExperimentConfig::parse("rounds = x\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        let err = ExperimentConfig::parse("rounds = 1\nrounds = 2\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = ExperimentConfig::parse("local_epochs = 0\n").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("local_epochs"));
        let err = ExperimentConfig::parse("no equals sign\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(err.to_string().starts_with("line 1"));
    }

    #[test]
    fn shard_coverage_is_validated() {
        let err = ExperimentConfig::parse("num_clients = 3\npartition.classes_per_client = 2\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = ExperimentConfig::default();
        cfg.aggregator.tau = 3e-4;
        cfg.data.seed = Some(17);
        cfg.fraction = 0.1;
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn data_seed_follows_experiment_seed() {
        let mut cfg = ExperimentConfig::default();
        let a = cfg.synthetic_spec().seed;
        cfg.seed = 1;
        assert_ne!(a, cfg.synthetic_spec().seed);
        cfg.data.seed = Some(5);
        assert_eq!(cfg.synthetic_spec().seed, 5);
    }

    #[test]
    fn sweep_cells() {
        let text = "rounds = 2\nsweep.axis = rounds\nsweep.values = 2, 5, 10, 20\nsweep.seeds = 1,2,3\n";
        let spec = SweepSpec::parse(text).unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[3].config.rounds, 5);
        assert_eq!(cells[3].seed, 1);

        let text = "sweep.axis = aggregator\nsweep.values = fedavg,fedadam,fedprox\nsweep.seeds = 4\n";
        let cells = SweepSpec::parse(text).unwrap().cells().unwrap();
        for pair in cells.windows(2) {
            let mut a = pair[0].config.clone();
            a.aggregator.kind = pair[1].config.aggregator.kind;
            assert_eq!(a, pair[1].config);
        }

        assert!(SweepSpec::parse("sweep.axis = rounds\nsweep.seeds = 1\n").is_err());
        let err = SweepSpec::parse("sweep.axis = fraction\nsweep.values = 0.5,0\nsweep.seeds = 1\n").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("fraction"));
        assert!(SweepSpec::parse("sweep.axis = colour\n").is_err());
    }
}
