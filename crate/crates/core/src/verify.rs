//! Randomized verification suites for the mathematical guarantees the
//! simulator is built on: serial equivalence of continuous averaging, the
//! averaging-operator contract, local-condition soundness, the divergence
//! growth bound of partial syncs, and analytic gradients.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learn::{
    loss_and_grad, Activation, Learner, LossKind, LossSpec, Optimizer, Output, PredictorSpec,
};
use crate::params::{average, divergence, sq_distance, weighted_average, ModelConfiguration,
    ModelParams};
use crate::streams::LabeledBatch;
use crate::sync::{Coordinator, ProtocolSpec, SyncOutcome};

/// Seed used when the caller does not pick one. Results are stable across
/// releases for a fixed seed.
pub const DEFAULT_SEED: u64 = 0x5eed_cafe;

const SERIAL_TRIALS: u64 = 1000;
const CONTRACT_TRIALS: u64 = 10_000;
const SOUNDNESS_TRIALS: u64 = 10_000;
const DISTANCE_TRIALS: u64 = 10_000;
const GRADCHECK_TRIALS_PER_COMBO: u64 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    /// Continuous averaging of per-learner SGD equals one serial step.
    SerialEquivalence,
    /// Balancing preserves the global mean and restores the local
    /// conditions.
    SyncContract,
    /// All local conditions holding bounds the divergence.
    ConditionSoundness,
    /// One balanced sync grows mean squared distances to a reference
    /// trajectory by at most the threshold.
    DistanceBound,
    /// Analytic gradients against central finite differences.
    GradCheck,
    All,
}

impl SuiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::SerialEquivalence => "serial-equivalence",
            SuiteKind::SyncContract => "sync-contract",
            SuiteKind::ConditionSoundness => "condition-soundness",
            SuiteKind::DistanceBound => "distance-bound",
            SuiteKind::GradCheck => "gradcheck",
            SuiteKind::All => "all",
        }
    }
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial-equivalence" => Ok(SuiteKind::SerialEquivalence),
            "sync-contract" => Ok(SuiteKind::SyncContract),
            "condition-soundness" => Ok(SuiteKind::ConditionSoundness),
            "distance-bound" => Ok(SuiteKind::DistanceBound),
            "gradcheck" => Ok(SuiteKind::GradCheck),
            "all" => Ok(SuiteKind::All),
            other => Err(Error::config(
                "suite",
                format!(
                    "unknown suite {other:?}; expected serial-equivalence, sync-contract, \
                     condition-soundness, distance-bound, gradcheck, or all"
                ),
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub trials: u64,
    pub failures: u64,
    /// Largest error observed by the suite's own metric; diagnostic only.
    pub max_error: f64,
    pub detail: String,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {}: trials={} failures={} max_err={:.3e} ({})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.failures,
            self.max_error,
            self.detail
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub outcomes: Vec<SuiteOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed())
    }

    pub fn total_failures(&self) -> u64 {
        self.outcomes.iter().map(|o| o.failures).sum()
    }
}

/// Runs one suite (or all of them) at the standard trial counts.
pub fn run_suite(kind: SuiteKind, seed: u64) -> VerifyReport {
    let mut report = VerifyReport::default();
    match kind {
        SuiteKind::SerialEquivalence => report
            .outcomes
            .push(serial_equivalence(SERIAL_TRIALS, seed)),
        SuiteKind::SyncContract => report.outcomes.push(sync_contract(CONTRACT_TRIALS, seed)),
        SuiteKind::ConditionSoundness => report
            .outcomes
            .push(condition_soundness(SOUNDNESS_TRIALS, seed)),
        SuiteKind::DistanceBound => report.outcomes.push(distance_bound(DISTANCE_TRIALS, seed)),
        SuiteKind::GradCheck => report
            .outcomes
            .push(gradcheck(GRADCHECK_TRIALS_PER_COMBO, seed)),
        SuiteKind::All => {
            report
                .outcomes
                .push(serial_equivalence(SERIAL_TRIALS, seed));
            report.outcomes.push(sync_contract(CONTRACT_TRIALS, seed));
            report
                .outcomes
                .push(condition_soundness(SOUNDNESS_TRIALS, seed));
            report.outcomes.push(distance_bound(DISTANCE_TRIALS, seed));
            report
                .outcomes
                .push(gradcheck(GRADCHECK_TRIALS_PER_COMBO, seed));
        }
    }
    report
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn uniform_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Continuous averaging of independent SGD steps from a common model vs one
/// serial step with the pooled batch and rate eta/m, checked to relative
/// 1e-12. Holds exactly only without ridge, so lambda stays 0 here.
#[doc(hidden)]
pub fn serial_equivalence(trials: u64, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_err = 0.0f64;
    for trial in 0..trials {
        let m = rng.random_range(2..=8usize);
        let batch = rng.random_range(1..=4usize);
        let d = rng.random_range(1..=100usize);
        let eta = rng.random_range(0.01..0.5);
        let kind = if trial % 2 == 0 {
            LossKind::Squared
        } else {
            LossKind::Logistic
        };
        let predictor = PredictorSpec::Linear {
            input_dim: d,
            output: Output::Scalar,
        };
        let loss = LossSpec::new(kind);
        let common = ModelParams::new(uniform_vec(&mut rng, d + 1, 1.0)).unwrap();

        let rows: Vec<Vec<f64>> = (0..m * batch)
            .map(|_| uniform_vec(&mut rng, d, 1.0))
            .collect();
        let labels: Vec<f64> = (0..m * batch)
            .map(|_| match kind {
                LossKind::Squared => rng.random_range(-1.0..1.0),
                _ => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
            .collect();

        let mut fleet_models = Vec::with_capacity(m);
        for i in 0..m {
            let mut learner = Learner::new(
                i,
                predictor.clone(),
                loss.clone(),
                Optimizer::sgd(eta).unwrap(),
                common.clone(),
            )
            .unwrap();
            let slice = LabeledBatch::from_rows(
                rows[i * batch..(i + 1) * batch].to_vec(),
                labels[i * batch..(i + 1) * batch].to_vec(),
            )
            .unwrap();
            learner.local_round(&slice).unwrap();
            fleet_models.push(learner.model().clone());
        }
        let averaged = average(&ModelConfiguration::new(fleet_models).unwrap());

        let mut serial = Learner::new(
            0,
            predictor.clone(),
            loss.clone(),
            Optimizer::sgd(eta / m as f64).unwrap(),
            common.clone(),
        )
        .unwrap();
        let pooled = LabeledBatch::from_rows(rows.clone(), labels.clone()).unwrap();
        serial.local_round(&pooled).unwrap();

        let worst = averaged
            .weights()
            .iter()
            .zip(serial.model().weights())
            .map(|(&a, &b)| rel_err(a, b))
            .fold(0.0f64, f64::max);
        max_err = max_err.max(worst);
        if worst > 1e-12 {
            failures += 1;
        }
    }
    SuiteOutcome {
        name: SuiteKind::SerialEquivalence.name(),
        trials,
        failures,
        max_error: max_err,
        detail: "averaged fleet step vs pooled-batch step, relative 1e-12".into(),
    }
}

struct ContractTrial {
    cfg: ModelConfiguration,
    reference: ModelParams,
    delta: f64,
    counts: Option<Vec<u64>>,
    violators: BTreeSet<usize>,
}

fn contract_trial(rng: &mut ChaCha8Rng, trial: u64) -> ContractTrial {
    let m = rng.random_range(2..=12usize);
    let d = rng.random_range(1..=16usize);
    let delta = 10f64.powf(rng.random_range(-6.0..0.5));
    let center = uniform_vec(rng, d, 1.0);
    let spread = delta.sqrt() * rng.random_range(0.2..2.5);
    let mut models = Vec::with_capacity(m);
    for _ in 0..m {
        let offset = uniform_vec(rng, d, spread.min(2.0));
        models.push(
            ModelParams::new(center.iter().zip(&offset).map(|(c, o)| c + o).collect()).unwrap(),
        );
    }
    let mut cfg = ModelConfiguration::new(models).unwrap();
    let reference = ModelParams::new(
        center
            .iter()
            .map(|c| c + rng.random_range(-0.1..0.1) * delta.sqrt())
            .collect(),
    )
    .unwrap();
    let mut violators: BTreeSet<usize> = (0..m)
        .filter(|&i| sq_distance(cfg.get(i), &reference).unwrap() > delta)
        .collect();
    if violators.is_empty() {
        // push one model out past the threshold so there is something to do
        let j = rng.random_range(0..m);
        let dir = uniform_vec(rng, d, 1.0);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let radius = (delta * rng.random_range(1.5..3.0)).sqrt();
        let bumped = ModelParams::new(
            reference
                .weights()
                .iter()
                .zip(&dir)
                .map(|(r, g)| r + g / norm * radius)
                .collect(),
        )
        .unwrap();
        cfg.set(j, bumped).unwrap();
        violators = (0..m)
            .filter(|&i| sq_distance(cfg.get(i), &reference).unwrap() > delta)
            .collect();
    }
    let counts = (trial % 3 == 0)
        .then(|| (0..m).map(|_| rng.random_range(1..=5u64)).collect());
    ContractTrial {
        cfg,
        reference,
        delta,
        counts,
        violators,
    }
}

/// The sync-contract harness with a pluggable resolver, so tests can verify
/// that a broken operator is caught. The public suite plugs in the real
/// coordinator.
#[doc(hidden)]
pub fn sync_contract_with<F>(trials: u64, seed: u64, mut resolve: F) -> SuiteOutcome
where
    F: FnMut(&mut Coordinator, &mut ModelConfiguration, &BTreeSet<usize>) -> Result<SyncOutcome>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_err = 0.0f64;
    for trial in 0..trials {
        let t = contract_trial(&mut rng, trial);
        let mean_before = match &t.counts {
            Some(counts) => {
                let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                weighted_average(&t.cfg, &weights).unwrap()
            }
            None => average(&t.cfg),
        };
        let mut coordinator = match &t.counts {
            Some(counts) => Coordinator::with_counts(
                ProtocolSpec::dynamic_weighted(t.delta, 1),
                t.reference.clone(),
                seed ^ trial,
                counts,
            )
            .unwrap(),
            None => Coordinator::new(
                ProtocolSpec::dynamic(t.delta, 1),
                t.reference.clone(),
                seed ^ trial,
            )
            .unwrap(),
        };
        let mut cfg = t.cfg.clone();
        let outcome = match resolve(&mut coordinator, &mut cfg, &t.violators) {
            Ok(outcome) => outcome,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        drop(outcome);

        let mean_after = match &t.counts {
            Some(counts) => {
                let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                weighted_average(&cfg, &weights).unwrap()
            }
            None => average(&cfg),
        };
        let mean_err = mean_before
            .weights()
            .iter()
            .zip(mean_after.weights())
            .map(|(&a, &b)| rel_err(a, b))
            .fold(0.0f64, f64::max);
        max_err = max_err.max(mean_err);

        let reference = coordinator.reference();
        let slack = t.delta + 1e-9 * t.delta.max(1.0);
        let conditions_hold = (0..cfg.len())
            .all(|i| sq_distance(cfg.get(i), reference).unwrap() <= slack);
        let divergence_ok = divergence(&cfg) <= slack;
        if mean_err > 1e-9 || !conditions_hold || !divergence_ok {
            failures += 1;
        }
    }
    SuiteOutcome {
        name: SuiteKind::SyncContract.name(),
        trials,
        failures,
        max_error: max_err,
        detail: "mean invariance (relative 1e-9), restored conditions, bounded divergence".into(),
    }
}

#[doc(hidden)]
pub fn sync_contract(trials: u64, seed: u64) -> SuiteOutcome {
    sync_contract_with(trials, seed, |coordinator, cfg, violators| {
        coordinator.resolve_violations(cfg, violators)
    })
}

/// Configurations built to satisfy every local condition must have bounded
/// divergence.
#[doc(hidden)]
pub fn condition_soundness(trials: u64, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let m = rng.random_range(1..=16usize);
        let d = rng.random_range(1..=32usize);
        let delta = 10f64.powf(rng.random_range(-6.0..1.0));
        let reference = ModelParams::new(uniform_vec(&mut rng, d, 2.0)).unwrap();
        let mut models = Vec::with_capacity(m);
        for _ in 0..m {
            let dir = uniform_vec(&mut rng, d, 1.0);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = (delta * rng.random_range(0.0..1.0)).sqrt();
            let model = if norm == 0.0 {
                reference.clone()
            } else {
                ModelParams::new(
                    reference
                        .weights()
                        .iter()
                        .zip(&dir)
                        .map(|(r, g)| r + g / norm * radius)
                        .collect(),
                )
                .unwrap()
            };
            models.push(model);
        }
        let cfg = ModelConfiguration::new(models).unwrap();
        let premise = (0..m).all(|i| sq_distance(cfg.get(i), &reference).unwrap() <= delta);
        if !premise {
            // construction guarantees the premise; reaching here is a bug
            failures += 1;
            continue;
        }
        let div = divergence(&cfg);
        max_ratio = max_ratio.max(div / delta);
        if div > delta {
            failures += 1;
        }
    }
    SuiteOutcome {
        name: SuiteKind::ConditionSoundness.name(),
        trials,
        failures,
        max_error: max_ratio,
        detail: "divergence/threshold ratio under satisfied local conditions".into(),
    }
}

/// One balanced sync against a fully averaged reference trajectory grows the
/// mean squared pairwise distance by at most the threshold (plus 1e-9).
#[doc(hidden)]
pub fn distance_bound(trials: u64, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for trial in 0..trials {
        let m = rng.random_range(2..=10usize);
        let d = rng.random_range(1..=16usize);
        let delta = 10f64.powf(rng.random_range(-6.0..0.6));
        let spread = rng.random_range(0.05..1.5);
        let center_d = uniform_vec(&mut rng, d, 1.0);
        let center_s = uniform_vec(&mut rng, d, 1.0);
        let make = |rng: &mut ChaCha8Rng, center: &[f64], spread: f64| {
            ModelParams::new(
                center
                    .iter()
                    .map(|c| c + rng.random_range(-spread..spread))
                    .collect(),
            )
            .unwrap()
        };
        let d_cfg = ModelConfiguration::new(
            (0..m).map(|_| make(&mut rng, &center_d, spread)).collect(),
        )
        .unwrap();
        let s_cfg = ModelConfiguration::new(
            (0..m).map(|_| make(&mut rng, &center_s, spread)).collect(),
        )
        .unwrap();
        let reference = ModelParams::new(uniform_vec(&mut rng, d, 2.0)).unwrap();

        let mut synced = d_cfg.clone();
        let mut coordinator =
            Coordinator::new(ProtocolSpec::dynamic(delta, 1), reference, seed ^ trial).unwrap();
        coordinator.sync_round(&mut synced, 1).unwrap();

        let s_mean = average(&s_cfg);
        let lhs = (0..m)
            .map(|i| sq_distance(synced.get(i), &s_mean).unwrap())
            .sum::<f64>()
            / m as f64;
        let rhs = (0..m)
            .map(|i| sq_distance(d_cfg.get(i), s_cfg.get(i)).unwrap())
            .sum::<f64>()
            / m as f64
            + delta
            + 1e-9;
        max_excess = max_excess.max(lhs - rhs);
        if lhs > rhs {
            failures += 1;
        }
    }
    SuiteOutcome {
        name: SuiteKind::DistanceBound.name(),
        trials,
        failures,
        max_error: max_excess,
        detail: "worst lhs-rhs gap; negative means slack remained".into(),
    }
}

fn fd_grad(
    predictor: &PredictorSpec,
    loss: &LossSpec,
    model: &ModelParams,
    batch: &LabeledBatch,
) -> Vec<f64> {
    let mut grad = vec![0.0; model.dim()];
    let base = model.weights();
    for j in 0..model.dim() {
        let h = 1e-6 * base[j].abs().max(1.0);
        let mut plus = base.to_vec();
        plus[j] += h;
        let mut minus = base.to_vec();
        minus[j] -= h;
        let lp = loss_and_grad(predictor, loss, &ModelParams::new(plus).unwrap(), batch)
            .unwrap()
            .0;
        let lm = loss_and_grad(predictor, loss, &ModelParams::new(minus).unwrap(), batch)
            .unwrap()
            .0;
        grad[j] = (lp - lm) / (2.0 * h);
    }
    grad
}

/// Analytic gradients vs central finite differences over every supported
/// predictor/loss pairing. The multilayer checks use the smooth activation;
/// a kink crossing would make the finite difference itself unreliable.
#[doc(hidden)]
pub fn gradcheck(trials_per_combo: u64, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_err = 0.0f64;
    let mut trials = 0;
    let combos: Vec<(bool, LossKind)> = vec![
        (false, LossKind::Squared),
        (false, LossKind::Logistic),
        (false, LossKind::CrossEntropy),
        (true, LossKind::Squared),
        (true, LossKind::Logistic),
        (true, LossKind::CrossEntropy),
    ];
    for (mlp, kind) in combos {
        for trial in 0..trials_per_combo {
            trials += 1;
            let classes = rng.random_range(2..=4usize);
            let output = match kind {
                LossKind::CrossEntropy => Output::Classes(classes),
                _ => Output::Scalar,
            };
            let predictor = if mlp {
                PredictorSpec::Mlp {
                    input_dim: rng.random_range(1..=4usize),
                    hidden_units: rng.random_range(1..=4usize),
                    activation: Activation::Tanh,
                    output,
                }
            } else {
                PredictorSpec::Linear {
                    input_dim: rng.random_range(1..=6usize),
                    output,
                }
            };
            let loss = if trial % 2 == 0 {
                LossSpec::new(kind)
            } else {
                LossSpec::with_lambda(kind, 0.01)
            };
            let model = ModelParams::new(uniform_vec(&mut rng, predictor.param_count(), 1.0))
                .unwrap();
            let batch_rows = rng.random_range(1..=5usize);
            let rows: Vec<Vec<f64>> = (0..batch_rows)
                .map(|_| uniform_vec(&mut rng, predictor.input_dim(), 1.0))
                .collect();
            let labels: Vec<f64> = (0..batch_rows)
                .map(|_| match kind {
                    LossKind::Squared => rng.random_range(-1.0..1.0),
                    LossKind::Logistic => {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    LossKind::CrossEntropy => rng.random_range(0..classes) as f64,
                })
                .collect();
            let batch = LabeledBatch::from_rows(rows, labels).unwrap();

            let analytic = loss_and_grad(&predictor, &loss, &model, &batch).unwrap().1;
            let numeric = fd_grad(&predictor, &loss, &model, &batch);
            let worst = analytic
                .weights()
                .iter()
                .zip(&numeric)
                .map(|(&a, &n)| rel_err(a, n))
                .fold(0.0f64, f64::max);
            max_err = max_err.max(worst);
            if worst > 1e-5 {
                failures += 1;
            }
        }
    }
    SuiteOutcome {
        name: SuiteKind::GradCheck.name(),
        trials,
        failures,
        max_error: max_err,
        detail: format!(
            "{trials_per_combo} instances per predictor/loss pairing, relative 1e-5"
        ),
    }
}
