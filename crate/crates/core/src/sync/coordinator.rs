//! The coordinator side of synchronization: periodic and subsampled
//! averaging, the local violation condition, and violation balancing.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::params::{average, sq_distance, weighted_average, ModelConfiguration, ModelParams};
use crate::sync::{Message, ProtocolKind, ProtocolSpec, SyncOutcome};

/// Replaces every model by the configuration mean at rounds divisible by the
/// period. Off-period rounds return no outcome and cost nothing.
pub fn periodic_sync(
    cfg: &mut ModelConfiguration,
    t: u64,
    period: u64,
) -> Result<Option<SyncOutcome>> {
    if period == 0 {
        return Err(Error::config("protocol.period", "must be positive"));
    }
    if t % period != 0 {
        return Ok(None);
    }
    let m = cfg.len();
    let dim = cfg.dim();
    let mean = average(cfg);
    let mut messages = Vec::with_capacity(2 * m);
    for _ in 0..m {
        messages.push(Message::upload(dim));
    }
    for i in 0..m {
        cfg.set(i, mean.clone())?;
        messages.push(Message::download(dim));
    }
    Ok(Some(SyncOutcome {
        participants: (0..m).collect(),
        new_model: Some(mean),
        reference_updated: true,
        messages,
    }))
}

/// Periodic averaging over a uniformly sampled subset of
/// `max(1, round(fraction * m))` learners. Models outside the sample are
/// untouched.
pub fn fedavg_sync(
    cfg: &mut ModelConfiguration,
    t: u64,
    period: u64,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SyncOutcome>> {
    if period == 0 {
        return Err(Error::config("protocol.period", "must be positive"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(
            "protocol.fraction",
            format!("must lie in (0, 1], got {fraction}"),
        ));
    }
    if t % period != 0 {
        return Ok(None);
    }
    let m = cfg.len();
    let dim = cfg.dim();
    let take = ((fraction * m as f64).round() as usize).clamp(1, m);
    let sample: BTreeSet<usize> = rand::seq::index::sample(rng, m, take).into_iter().collect();

    // average over the sample only, accumulated in ascending index order
    let mut acc = vec![0.0; dim];
    for &i in &sample {
        for (a, w) in acc.iter_mut().zip(cfg.get(i).weights()) {
            *a += w;
        }
    }
    for a in &mut acc {
        *a /= take as f64;
    }
    let mean = ModelParams::new(acc)?;

    let mut messages = Vec::with_capacity(2 * take);
    for _ in 0..take {
        messages.push(Message::upload(dim));
    }
    for &i in &sample {
        cfg.set(i, mean.clone())?;
        messages.push(Message::download(dim));
    }
    let full = sample.len() == m;
    Ok(Some(SyncOutcome {
        participants: sample,
        new_model: Some(mean),
        reference_updated: full,
        messages,
    }))
}

/// The local check a learner runs at sync rounds: a violation is a model
/// farther than `sqrt(delta)` from the reference at a round divisible by the
/// period.
pub fn check_local_condition(
    f: &ModelParams,
    reference: &ModelParams,
    delta: f64,
    t: u64,
    period: u64,
) -> Result<bool> {
    if period == 0 {
        return Err(Error::config("protocol.period", "must be positive"));
    }
    if t % period != 0 {
        return Ok(false);
    }
    Ok(sq_distance(f, reference)? > delta)
}

/// Per-learner batch counts for the weighted protocol, reduced by their gcd
/// so that uniform counts become all-ones.
#[derive(Clone, Debug)]
struct CountSet {
    normalized: Vec<f64>,
}

impl CountSet {
    fn new(raw: &[u64]) -> Result<CountSet> {
        if raw.is_empty() {
            return Err(Error::config("learner.batch_sizes", "must be non-empty"));
        }
        if raw.contains(&0) {
            return Err(Error::config(
                "learner.batch_sizes",
                "batch counts must be positive",
            ));
        }
        fn gcd(mut a: u64, mut b: u64) -> u64 {
            while b != 0 {
                (a, b) = (b, a % b);
            }
            a
        }
        let g = raw.iter().fold(0, |acc, &c| gcd(acc, c));
        Ok(CountSet {
            normalized: raw.iter().map(|&c| (c / g) as f64).collect(),
        })
    }
}

/// Coordinator state for the dynamic kinds: the reference model, the
/// violation counter, and the RNG that picks balancing partners.
#[derive(Clone, Debug)]
pub struct Coordinator {
    protocol: ProtocolSpec,
    reference: ModelParams,
    violations: usize,
    rng: ChaCha8Rng,
    counts: Option<CountSet>,
}

impl Coordinator {
    /// Unweighted dynamic coordinator. The reference starts at the common
    /// initial model.
    pub fn new(protocol: ProtocolSpec, reference: ModelParams, seed: u64) -> Result<Self> {
        protocol.validate()?;
        if protocol.kind != ProtocolKind::Dynamic {
            return Err(Error::config(
                "protocol.kind",
                format!(
                    "coordinator without counts requires the dynamic kind, got {}",
                    protocol.kind.name()
                ),
            ));
        }
        Ok(Coordinator {
            protocol,
            reference,
            violations: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counts: None,
        })
    }

    /// Weighted dynamic coordinator with per-learner batch counts.
    pub fn with_counts(
        protocol: ProtocolSpec,
        reference: ModelParams,
        seed: u64,
        counts: &[u64],
    ) -> Result<Self> {
        protocol.validate()?;
        if protocol.kind != ProtocolKind::DynamicWeighted {
            return Err(Error::config(
                "protocol.kind",
                format!(
                    "coordinator with counts requires the dynamic_weighted kind, got {}",
                    protocol.kind.name()
                ),
            ));
        }
        Ok(Coordinator {
            protocol,
            reference,
            violations: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counts: Some(CountSet::new(counts)?),
        })
    }

    pub fn protocol(&self) -> &ProtocolSpec {
        &self.protocol
    }

    pub fn reference(&self) -> &ModelParams {
        &self.reference
    }

    pub fn violation_counter(&self) -> usize {
        self.violations
    }

    fn delta(&self) -> f64 {
        self.protocol
            .delta
            .expect("constructors validate that dynamic kinds carry delta")
    }

    /// One sync round: runs the local condition for every learner and, if
    /// any violate, balances. Returns the violator count and the outcome.
    pub fn sync_round(
        &mut self,
        cfg: &mut ModelConfiguration,
        t: u64,
    ) -> Result<(usize, Option<SyncOutcome>)> {
        let period = self.protocol.effective_period();
        let delta = self.delta();
        let mut violators = BTreeSet::new();
        for i in 0..cfg.len() {
            if check_local_condition(cfg.get(i), &self.reference, delta, t, period)? {
                violators.insert(i);
            }
        }
        if violators.is_empty() {
            return Ok((0, None));
        }
        let outcome = self.resolve_violations(cfg, &violators)?;
        Ok((violators.len(), Some(outcome)))
    }

    /// Balances a non-empty violation set.
    ///
    /// The violators form the initial balancing set B and bump the violation
    /// counter. If the counter reaches the fleet size, everyone is pulled in
    /// and the counter resets. Otherwise the coordinator keeps drawing
    /// uniformly random additional learners while the (count-weighted) mean
    /// of B is farther than `sqrt(delta)` from the reference. Members of B
    /// receive the mean of B; a full B also becomes the new reference.
    pub fn resolve_violations(
        &mut self,
        cfg: &mut ModelConfiguration,
        violators: &BTreeSet<usize>,
    ) -> Result<SyncOutcome> {
        let m = cfg.len();
        let dim = cfg.dim();
        if violators.is_empty() {
            return Err(Error::Data("empty violation set".into()));
        }
        if let Some(&bad) = violators.iter().find(|&&i| i >= m) {
            return Err(Error::Data(format!(
                "violator {bad} out of range (m = {m})"
            )));
        }
        if self.reference.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.reference.dim(),
            });
        }
        if let Some(cs) = &self.counts {
            if cs.normalized.len() != m {
                return Err(Error::Data(format!(
                    "{} batch counts for {m} learners",
                    cs.normalized.len()
                )));
            }
        }
        let delta = self.delta();
        let weighted = self.counts.is_some();
        let ones;
        let counts: &[f64] = match &self.counts {
            Some(cs) => &cs.normalized,
            None => {
                ones = vec![1.0; m];
                &ones
            }
        };
        let upload = if weighted {
            Message::upload_with_count(dim)
        } else {
            Message::upload(dim)
        };

        let mut in_b = vec![false; m];
        let mut members = 0usize;
        let mut sum = vec![0.0; dim];
        let mut total = 0.0;
        let mut messages = Vec::new();

        for &i in violators {
            in_b[i] = true;
            members += 1;
            total += counts[i];
            for (a, w) in sum.iter_mut().zip(cfg.get(i).weights()) {
                *a += counts[i] * w;
            }
            messages.push(upload);
        }

        self.violations += violators.len();
        let counter_fired = self.violations >= m;
        if counter_fired {
            self.violations = 0;
            for joined in in_b.iter_mut() {
                if !*joined {
                    *joined = true;
                    members += 1;
                    messages.push(Message::request());
                    messages.push(upload);
                }
            }
        } else {
            while members < m {
                let mut dist = 0.0;
                for (a, r) in sum.iter().zip(self.reference.weights()) {
                    let d = a / total - r;
                    dist += d * d;
                }
                if dist <= delta {
                    break;
                }
                let candidates: Vec<usize> =
                    (0..m).filter(|&i| !in_b[i]).collect();
                let pick = candidates[self.rng.random_range(0..candidates.len())];
                messages.push(Message::request());
                messages.push(upload);
                in_b[pick] = true;
                members += 1;
                total += counts[pick];
                for (a, w) in sum.iter_mut().zip(cfg.get(pick).weights()) {
                    *a += counts[pick] * w;
                }
            }
        }

        let full = members == m;
        // a full set uses the canonical index-order mean so that a full
        // dynamic sync is bit-identical to a periodic one
        let new_model = if full {
            if weighted {
                weighted_average(cfg, counts)?
            } else {
                average(cfg)
            }
        } else {
            ModelParams::new(sum.iter().map(|a| a / total).collect())?
        };

        let participants: BTreeSet<usize> = (0..m).filter(|&i| in_b[i]).collect();
        for &i in &participants {
            cfg.set(i, new_model.clone())?;
            messages.push(Message::download(dim));
        }
        let mut reference_updated = false;
        if full {
            self.reference = new_model.clone();
            reference_updated = true;
            if !counter_fired && self.protocol.reset_v_on_full_sync {
                self.violations = 0;
            }
        }
        assert!(
            self.violations < m,
            "violation counter {} escaped its bound m = {m}",
            self.violations
        );
        Ok(SyncOutcome {
            participants,
            new_model: Some(new_model),
            reference_updated,
            messages,
        })
    }
}
