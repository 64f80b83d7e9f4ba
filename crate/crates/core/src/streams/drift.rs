//! A drifting binary-classification stream shared by all learners.
//!
//! Features are uniform on `[-1, 1]^d` always; only the labeling concept
//! drifts. A concept is a random weight vector plus a few random pairwise
//! interaction terms; the label is the sign of its score, flipped with a
//! small noise probability. Replacement concepts are resampled until they
//! disagree with the old one on at least 10% of a fixed probe set, so every
//! logged drift is detectable in principle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::LabeledBatch;

pub const DEFAULT_INTERACTIONS: usize = 5;
const PROBE_ROWS: usize = 256;
const MIN_PROBE_DISAGREEMENT: f64 = 0.10;
const MAX_RESAMPLES: usize = 64;

fn default_interactions() -> usize {
    DEFAULT_INTERACTIONS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftStreamSpec {
    pub d_in: usize,
    pub drift_prob: f64,
    pub label_noise: f64,
    #[serde(default = "default_interactions")]
    pub interactions: usize,
}

impl DriftStreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::config("stream.d_in", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.drift_prob) {
            return Err(Error::config(
                "stream.drift_prob",
                format!("must lie in [0, 1), got {}", self.drift_prob),
            ));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config(
                "stream.label_noise",
                format!("must lie in [0, 0.5), got {}", self.label_noise),
            ));
        }
        Ok(())
    }
}

/// The labeling function: `score(x) = <w, x> + sum_j c_j * x_aj * x_bj`.
#[derive(Clone, Debug, PartialEq)]
pub struct Concept {
    weights: Vec<f64>,
    interactions: Vec<(usize, usize, f64)>,
}

impl Concept {
    fn sample<R: Rng>(d: usize, k: usize, rng: &mut R) -> Concept {
        let weights = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let interactions = (0..k)
            .map(|_| {
                let a = rng.random_range(0..d);
                let b = rng.random_range(0..d);
                let c = rng.random_range(-1.0..1.0);
                (a, b, c)
            })
            .collect();
        Concept {
            weights,
            interactions,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (w, xi) in self.weights.iter().zip(x) {
            s += w * xi;
        }
        for &(a, b, c) in &self.interactions {
            s += c * x[a] * x[b];
        }
        s
    }

    /// Noise-free label in {-1, 1}. A zero score maps to 1.
    pub fn bayes_label(&self, x: &[f64]) -> f64 {
        if self.score(x) < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DriftEvent {
    pub round: u64,
}

pub struct DriftStream {
    spec: DriftStreamSpec,
    concept: Concept,
    /// Drives drift checks and concept regeneration only.
    concept_rng: ChaCha8Rng,
    /// One sampler per learner; fed by per-learner seeds so sample draws are
    /// independent of protocol choice and of each other.
    samplers: Vec<ChaCha8Rng>,
    /// Fixed rows used to measure how much a candidate concept disagrees
    /// with the current one.
    probe: Vec<Vec<f64>>,
    events: Vec<u64>,
}

impl DriftStream {
    pub fn new(spec: DriftStreamSpec, concept_seed: u64, learner_seeds: &[u64]) -> Result<Self> {
        spec.validate()?;
        if learner_seeds.is_empty() {
            return Err(Error::Data("no learner seeds".into()));
        }
        let mut concept_rng = ChaCha8Rng::seed_from_u64(concept_seed);
        // probe rows come from a forked rng so the concept sequence does not
        // depend on the probe size
        let mut probe_rng = ChaCha8Rng::seed_from_u64(concept_rng.random());
        let probe = (0..PROBE_ROWS)
            .map(|_| {
                (0..spec.d_in)
                    .map(|_| probe_rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let concept = Concept::sample(spec.d_in, spec.interactions, &mut concept_rng);
        let samplers = learner_seeds
            .iter()
            .map(|&s| ChaCha8Rng::seed_from_u64(s))
            .collect();
        Ok(DriftStream {
            spec,
            concept,
            concept_rng,
            samplers,
            probe,
            events: Vec::new(),
        })
    }

    pub fn spec(&self) -> &DriftStreamSpec {
        &self.spec
    }

    pub fn learners(&self) -> usize {
        self.samplers.len()
    }

    pub fn concept(&self) -> &Concept {
        &self.concept
    }

    /// Rounds at which the concept changed, in order.
    pub fn events(&self) -> &[u64] {
        &self.events
    }

    fn probe_disagreement(&self, candidate: &Concept) -> f64 {
        let mut diff = 0usize;
        for x in &self.probe {
            if self.concept.bayes_label(x) != candidate.bayes_label(x) {
                diff += 1;
            }
        }
        diff as f64 / self.probe.len() as f64
    }

    /// Call once per round before sampling. With probability `drift_prob`
    /// replaces the concept by a fresh one that moves at least 10% of the
    /// probe set's labels, and records the event.
    pub fn maybe_drift(&mut self, t: u64) -> Result<Option<DriftEvent>> {
        if self.concept_rng.random::<f64>() >= self.spec.drift_prob {
            return Ok(None);
        }
        for _ in 0..MAX_RESAMPLES {
            let candidate =
                Concept::sample(self.spec.d_in, self.spec.interactions, &mut self.concept_rng);
            if self.probe_disagreement(&candidate) >= MIN_PROBE_DISAGREEMENT {
                self.concept = candidate;
                self.events.push(t);
                return Ok(Some(DriftEvent { round: t }));
            }
        }
        Err(Error::Numeric(format!(
            "no detectable replacement concept found after {MAX_RESAMPLES} attempts"
        )))
    }

    /// Draws `batch` iid samples from the current concept for one learner.
    pub fn next_batch(&mut self, learner: usize, batch: usize) -> Result<LabeledBatch> {
        if learner >= self.samplers.len() {
            return Err(Error::Data(format!(
                "learner {learner} out of range (m = {})",
                self.samplers.len()
            )));
        }
        if batch == 0 {
            return Err(Error::Data("zero batch size".into()));
        }
        let d = self.spec.d_in;
        let rng = &mut self.samplers[learner];
        let mut features = Vec::with_capacity(batch * d);
        let mut labels = Vec::with_capacity(batch);
        for _ in 0..batch {
            let start = features.len();
            for _ in 0..d {
                features.push(rng.random_range(-1.0..1.0));
            }
            let mut y = self.concept.bayes_label(&features[start..]);
            if self.spec.label_noise > 0.0 && rng.random::<f64>() < self.spec.label_noise {
                y = -y;
            }
            labels.push(y);
        }
        LabeledBatch::new(features, d, labels)
    }
}
