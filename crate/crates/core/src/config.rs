//! Experiment configuration: a declarative description of one run (or a
//! sweep grid) that fully determines its results, plus the seed derivation
//! rule shared by everything that draws randomness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{LossSpec, OptimizerKind, PredictorSpec};
use crate::metrics::CommCostModel;
use crate::streams::PartitionPolicy;
use crate::sync::{ProtocolKind, ProtocolSpec};

/// SplitMix64 finalizer. Fixed for all time: derived seeds are part of the
/// reproducibility contract.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic seed derivation: every random stream in a run gets
/// `splitmix64(splitmix64(master ^ domain) ^ index)`.
pub mod seeds {
    use super::splitmix64;

    const LEARNER_STREAM: u64 = 1;
    const CONCEPT: u64 = 2;
    const COORDINATOR: u64 = 3;
    const BASE_INIT: u64 = 4;
    const INIT_NOISE: u64 = 5;
    const PARTITION: u64 = 6;
    const MATERIALIZE: u64 = 7;

    fn derive(master: u64, domain: u64, index: u64) -> u64 {
        splitmix64(splitmix64(master ^ domain) ^ index)
    }

    /// Per-learner sample stream.
    pub fn learner_stream(master: u64, learner: u64) -> u64 {
        derive(master, LEARNER_STREAM, learner)
    }

    /// Concept evolution of a drift stream.
    pub fn concept(master: u64) -> u64 {
        derive(master, CONCEPT, 0)
    }

    /// Coordinator randomness: balancing draws and subsampling.
    pub fn coordinator(master: u64) -> u64 {
        derive(master, COORDINATOR, 0)
    }

    /// The shared starting model.
    pub fn base_init(master: u64) -> u64 {
        derive(master, BASE_INIT, 0)
    }

    /// Per-learner initialization noise.
    pub fn init_noise(master: u64, learner: u64) -> u64 {
        derive(master, INIT_NOISE, learner)
    }

    /// Dataset shuffling during partition.
    pub fn partition(master: u64) -> u64 {
        derive(master, PARTITION, 0)
    }

    /// Sampling of a materialized synthetic dataset.
    pub fn materialize(master: u64) -> u64 {
        derive(master, MATERIALIZE, 0)
    }
}

fn default_name() -> String {
    "run".into()
}

fn default_batch() -> usize {
    1
}

/// Per-learner training settings, shared by the whole fleet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Uniform batch size; ignored when `batch_sizes` is given.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Per-learner batch sizes, one entry per learner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<usize>>,
    /// Scale of per-learner noise around the shared starting model.
    #[serde(default)]
    pub epsilon_init: f64,
    pub predictor: PredictorSpec,
    pub loss: LossSpec,
}

impl LearnerConfig {
    /// The logical per-learner batch sizes for a fleet of `m`.
    pub fn resolve_batches(&self, m: usize) -> Result<Vec<usize>> {
        let sizes = match &self.batch_sizes {
            Some(sizes) => {
                if sizes.len() != m {
                    return Err(Error::config(
                        "learner.batch_sizes",
                        format!("{} entries for {m} learners", sizes.len()),
                    ));
                }
                sizes.clone()
            }
            None => vec![self.batch_size; m],
        };
        if sizes.iter().any(|&b| b == 0) {
            return Err(Error::config("learner.batch_sizes", "must be positive"));
        }
        Ok(sizes)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "learner.learning_rate",
                "must be positive and finite",
            ));
        }
        if !(self.epsilon_init.is_finite() && self.epsilon_init >= 0.0) {
            return Err(Error::config(
                "learner.epsilon_init",
                "must be nonnegative and finite",
            ));
        }
        self.resolve_batches(m)?;
        self.predictor.validate()?;
        self.loss.validate(self.predictor.output())?;
        Ok(())
    }
}

/// How a finite dataset is split across learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    ShuffledIid,
    Contiguous,
    Unbalanced,
}

impl Default for PartitionKind {
    fn default() -> Self {
        PartitionKind::ShuffledIid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default)]
    pub policy: PartitionKind,
    /// Relative shard rates for the unbalanced policy, one per learner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<usize>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            policy: PartitionKind::ShuffledIid,
            rates: None,
        }
    }
}

impl PartitionConfig {
    pub fn to_policy(&self) -> Result<PartitionPolicy> {
        match (&self.policy, &self.rates) {
            (PartitionKind::ShuffledIid, None) => Ok(PartitionPolicy::ShuffledIid),
            (PartitionKind::Contiguous, None) => Ok(PartitionPolicy::ContiguousShards),
            (PartitionKind::Unbalanced, Some(rates)) => {
                Ok(PartitionPolicy::Unbalanced(rates.clone()))
            }
            (PartitionKind::Unbalanced, None) => Err(Error::config(
                "stream.partition.rates",
                "unbalanced partition needs per-learner rates",
            )),
            _ => Err(Error::config(
                "stream.partition.rates",
                "rates only apply to the unbalanced policy",
            )),
        }
    }
}

fn default_label_noise() -> f64 {
    0.05
}

fn default_interactions() -> usize {
    5
}

/// Where samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSpec {
    /// Endless synthetic stream whose concept may drift between rounds.
    Drift {
        d_in: usize,
        #[serde(default)]
        drift_prob: f64,
        #[serde(default = "default_label_noise")]
        label_noise: f64,
        #[serde(default = "default_interactions")]
        interactions: usize,
    },
    /// A drift-free synthetic dataset sampled once up front, then
    /// partitioned like a file-backed dataset.
    Materialized {
        d_in: usize,
        rows: usize,
        #[serde(default = "default_label_noise")]
        label_noise: f64,
        #[serde(default = "default_interactions")]
        interactions: usize,
        #[serde(default)]
        partition: PartitionConfig,
    },
    /// Labeled rows from a CSV file (features then label).
    Csv {
        path: String,
        #[serde(default)]
        partition: PartitionConfig,
    },
    /// An image/label file pair in the big-endian ubyte tensor format.
    Idx {
        images: String,
        labels: String,
        #[serde(default)]
        partition: PartitionConfig,
    },
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            StreamSpec::Drift {
                d_in,
                drift_prob,
                label_noise,
                interactions: _,
            } => {
                if *d_in == 0 {
                    return Err(Error::config("stream.d_in", "must be positive"));
                }
                if !(*drift_prob >= 0.0 && *drift_prob < 1.0) {
                    return Err(Error::config("stream.drift_prob", "must lie in [0, 1)"));
                }
                if !(*label_noise >= 0.0 && *label_noise < 0.5) {
                    return Err(Error::config("stream.label_noise", "must lie in [0, 0.5)"));
                }
                Ok(())
            }
            StreamSpec::Materialized {
                d_in,
                rows,
                label_noise,
                partition,
                ..
            } => {
                if *d_in == 0 {
                    return Err(Error::config("stream.d_in", "must be positive"));
                }
                if *rows == 0 {
                    return Err(Error::config("stream.rows", "must be positive"));
                }
                if !(*label_noise >= 0.0 && *label_noise < 0.5) {
                    return Err(Error::config("stream.label_noise", "must lie in [0, 0.5)"));
                }
                partition.to_policy()?;
                Ok(())
            }
            StreamSpec::Csv { path, partition } => {
                if path.is_empty() {
                    return Err(Error::config("stream.path", "must not be empty"));
                }
                partition.to_policy()?;
                Ok(())
            }
            StreamSpec::Idx {
                images,
                labels,
                partition,
            } => {
                if images.is_empty() || labels.is_empty() {
                    return Err(Error::config(
                        "stream.images",
                        "image and label paths must not be empty",
                    ));
                }
                partition.to_policy()?;
                Ok(())
            }
        }
    }

    /// Feature width, when the stream spec itself pins one.
    pub fn declared_width(&self) -> Option<usize> {
        match self {
            StreamSpec::Drift { d_in, .. } | StreamSpec::Materialized { d_in, .. } => Some(*d_in),
            StreamSpec::Csv { .. } | StreamSpec::Idx { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { master: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl Default for ExportFormat {
    fn default() -> Self {
        ExportFormat::Csv
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::config(
                "output.format",
                format!("unknown format {other:?}, expected csv or json"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for exported files; nothing is written when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: ExportFormat,
}

fn default_max_cells() -> usize {
    512
}

fn default_tolerance() -> f64 {
    0.1
}

/// Grid axes for a sweep. Axes that do not apply to a protocol kind are
/// ignored for its cells; missing axes fall back to the base config value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Protocol kinds to compare. Defaults to the base protocol alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocols: Option<Vec<ProtocolKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learners: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_init: Option<Vec<f64>>,
    /// Master seeds; every cell with the same seed shares sample streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Refuse grids larger than this.
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    /// Loss ratio slack for the consistency flag in comparison reports.
    #[serde(default = "default_tolerance")]
    pub consistency_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            protocols: None,
            delta: None,
            period: None,
            fraction: None,
            learners: None,
            epsilon_init: None,
            seeds: None,
            max_cells: default_max_cells(),
            consistency_tolerance: default_tolerance(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        fn nonempty<T>(field: &str, axis: &Option<Vec<T>>) -> Result<()> {
            match axis {
                Some(v) if v.is_empty() => {
                    Err(Error::config(field, "axis must not be empty"))
                }
                _ => Ok(()),
            }
        }
        nonempty("sweep.protocols", &self.protocols)?;
        nonempty("sweep.delta", &self.delta)?;
        nonempty("sweep.period", &self.period)?;
        nonempty("sweep.fraction", &self.fraction)?;
        nonempty("sweep.learners", &self.learners)?;
        nonempty("sweep.epsilon_init", &self.epsilon_init)?;
        nonempty("sweep.seeds", &self.seeds)?;
        if let Some(deltas) = &self.delta {
            if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(Error::config("sweep.delta", "must be positive and finite"));
            }
        }
        if let Some(periods) = &self.period {
            if periods.iter().any(|&b| b == 0) {
                return Err(Error::config("sweep.period", "must be positive"));
            }
        }
        if let Some(fractions) = &self.fraction {
            if fractions.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
                return Err(Error::config("sweep.fraction", "must lie in (0, 1]"));
            }
        }
        if let Some(ms) = &self.learners {
            if ms.iter().any(|&m| m == 0) {
                return Err(Error::config("sweep.learners", "must be positive"));
            }
        }
        if let Some(eps) = &self.epsilon_init {
            if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(Error::config(
                    "sweep.epsilon_init",
                    "must be nonnegative and finite",
                ));
            }
        }
        if self.max_cells == 0 {
            return Err(Error::config("sweep.max_cells", "must be positive"));
        }
        if !(self.consistency_tolerance.is_finite() && self.consistency_tolerance >= 0.0) {
            return Err(Error::config(
                "sweep.consistency_tolerance",
                "must be nonnegative and finite",
            ));
        }
        Ok(())
    }
}

/// Everything one run needs. Two equal configs produce identical ledgers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Fleet size m.
    pub learners: usize,
    /// Horizon T in rounds.
    pub rounds: u64,
    pub protocol: ProtocolSpec,
    pub learner: LearnerConfig,
    pub stream: StreamSpec,
    #[serde(default)]
    pub cost: CommCostModel,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::config("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Data(format!("toml encoding: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.learners == 0 {
            return Err(Error::config("learners", "must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be positive"));
        }
        self.protocol.validate()?;
        self.learner.validate(self.learners)?;
        self.stream.validate()?;
        if let Some(width) = self.stream.declared_width() {
            let expect = self.learner.predictor.input_dim();
            if width != expect {
                return Err(Error::config(
                    "stream.d_in",
                    format!("stream serves {width} features, predictor expects {expect}"),
                ));
            }
        }
        self.cost.validate()?;
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        Ok(())
    }

    pub fn batch_sizes(&self) -> Result<Vec<usize>> {
        self.learner.resolve_batches(self.learners)
    }

    /// A deterministic description of the data this config's runs observe.
    /// Runs are comparable round for round exactly when it matches.
    pub fn stream_desc(&self) -> String {
        let master = self.seeds.master;
        let m = self.learners;
        match &self.stream {
            StreamSpec::Drift {
                d_in,
                drift_prob,
                label_noise,
                interactions,
            } => format!(
                "drift(d={d_in},p={drift_prob},noise={label_noise},k={interactions},m={m},master={master})"
            ),
            StreamSpec::Materialized {
                d_in,
                rows,
                label_noise,
                interactions,
                partition,
            } => format!(
                "materialized(d={d_in},rows={rows},noise={label_noise},k={interactions},{partition:?},m={m},master={master})"
            ),
            StreamSpec::Csv { path, partition } => {
                format!("csv({path},{partition:?},m={m},master={master})")
            }
            StreamSpec::Idx {
                images,
                labels,
                partition,
            } => format!("idx({images},{labels},{partition:?},m={m},master={master})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{LossKind, Output};

    const MINIMAL: &str = r#"
        learners = 4
        rounds = 100

        [protocol]
        kind = "dynamic"
        delta = 0.3
        period = 2

        [learner]
        optimizer = "sgd"
        learning_rate = 0.05
        batch_size = 2

        [learner.predictor]
        kind = "linear"
        input_dim = 8
        output = "scalar"

        [learner.loss]
        kind = "squared"

        [stream]
        kind = "drift"
        d_in = 8
        drift_prob = 0.001
    "#;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.name, "run");
        assert_eq!(config.learners, 4);
        assert_eq!(config.protocol.kind, ProtocolKind::Dynamic);
        assert_eq!(config.protocol.delta, Some(0.3));
        assert_eq!(config.learner.loss.kind, LossKind::Squared);
        assert_eq!(config.learner.loss.lambda, 0.0);
        assert_eq!(config.learner.epsilon_init, 0.0);
        assert_eq!(config.cost, CommCostModel::default());
        assert_eq!(config.seeds.master, 0);
        assert_eq!(config.output.format, ExportFormat::Csv);
        assert_eq!(config.batch_sizes().unwrap(), vec![2, 2, 2, 2]);
        match config.stream {
            StreamSpec::Drift {
                label_noise,
                interactions,
                ..
            } => {
                assert_eq!(label_noise, 0.05);
                assert_eq!(interactions, 5);
            }
            _ => panic!("expected drift stream"),
        }
    }

    #[test]
    fn errors_name_the_offending_field() {
        let cases = [
            ("learners = 4", "learners = 0", "learners"),
            ("rounds = 100", "rounds = 0", "rounds"),
            ("delta = 0.3", "delta = -1.0", "protocol.delta"),
            ("learning_rate = 0.05", "learning_rate = 0.0", "learner.learning_rate"),
            ("drift_prob = 0.001", "drift_prob = 1.0", "stream.drift_prob"),
            ("d_in = 8\n        drift_prob", "d_in = 9\n        drift_prob", "stream.d_in"),
        ];
        for (from, to, field) in cases {
            let text = MINIMAL.replace(from, to);
            let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
            assert!(err.is_config(), "{field}: wrong error kind: {err}");
            assert!(
                err.to_string().contains(field),
                "error {err:?} does not name {field}"
            );
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[learner]", "[learner]\n        typo_key = 1");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("typo_key"));
    }

    #[test]
    fn per_learner_batches_must_match_fleet() {
        let text = MINIMAL.replace("batch_size = 2", "batch_sizes = [1, 2, 3]");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("learner.batch_sizes"));

        let text = MINIMAL.replace("batch_size = 2", "batch_sizes = [1, 2, 3, 4]");
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config.batch_sizes().unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let text = config.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn seed_derivation_is_stable_and_separated() {
        // pinned values: the derivation rule must never change
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(42), 0xbdd732262feb6e95);

        let master = 42;
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..10 {
            assert!(seen.insert(seeds::learner_stream(master, i)));
            assert!(seen.insert(seeds::init_noise(master, i)));
        }
        assert!(seen.insert(seeds::concept(master)));
        assert!(seen.insert(seeds::coordinator(master)));
        assert!(seen.insert(seeds::base_init(master)));
        assert!(seen.insert(seeds::partition(master)));
        assert!(seen.insert(seeds::materialize(master)));
        // same inputs, same outputs
        assert_eq!(
            seeds::learner_stream(master, 3),
            seeds::learner_stream(master, 3)
        );
    }

    #[test]
    fn stream_desc_ignores_protocol_but_tracks_data_inputs() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.protocol = ProtocolSpec::periodic(4);
        assert_eq!(a.stream_desc(), b.stream_desc());
        let mut c = a.clone();
        c.seeds.master = 1;
        assert_ne!(a.stream_desc(), c.stream_desc());
    }

    #[test]
    fn sweep_axes_validate() {
        let with_sweep = format!(
            "{MINIMAL}\n[sweep]\ndelta = [0.1, 0.3]\nseeds = [1, 2]\nmax_cells = 16\n"
        );
        let config = ExperimentConfig::from_toml_str(&with_sweep).unwrap();
        let sweep = config.sweep.unwrap();
        assert_eq!(sweep.delta, Some(vec![0.1, 0.3]));
        assert_eq!(sweep.max_cells, 16);
        assert_eq!(sweep.consistency_tolerance, 0.1);

        let bad = format!("{MINIMAL}\n[sweep]\ndelta = []\n");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("sweep.delta"));
    }

    #[test]
    fn mlp_and_classes_parse() {
        let text = r#"
            learners = 2
            rounds = 10

            [protocol]
            kind = "periodic"
            period = 1

            [learner]
            optimizer = "adam"
            learning_rate = 0.01
            batch_size = 4

            [learner.predictor]
            kind = "mlp"
            input_dim = 6
            hidden_units = 5
            activation = "tanh"
            output = 3

            [learner.loss]
            kind = "cross_entropy"
            lambda = 0.001

            [stream]
            kind = "materialized"
            d_in = 6
            rows = 100

            [stream.partition]
            policy = "contiguous"
        "#;
        let config = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(config.learner.predictor.output(), Output::Classes(3));
        assert_eq!(config.learner.optimizer, OptimizerKind::Adam);
        match &config.stream {
            StreamSpec::Materialized { partition, .. } => {
                assert_eq!(partition.policy, PartitionKind::Contiguous);
                assert!(matches!(
                    partition.to_policy().unwrap(),
                    PartitionPolicy::ContiguousShards
                ));
            }
            _ => panic!("expected materialized stream"),
        }
    }
}
