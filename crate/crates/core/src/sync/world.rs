//! The round loop: draw data, run local updates, synchronize, account.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learn::Learner;
use crate::metrics::{CommCostModel, RunInfo, RunLedger};
use crate::params::{ModelConfiguration, ModelParams};
use crate::streams::{DatasetStreams, DriftEvent, DriftStream, LabeledBatch};
use crate::sync::{fedavg_sync, periodic_sync, Coordinator, ProtocolKind, ProtocolSpec};

/// Where each learner's per-round batches come from.
pub enum StreamSource {
    /// Synthetic stream with a shared, possibly drifting concept.
    Drift(DriftStream),
    /// A finite dataset partitioned into per-learner shards.
    Dataset(DatasetStreams),
    /// Serves the concatenation of an inner source's per-learner batches as
    /// one batch, in learner order. Used by the serial baseline so it sees
    /// exactly the fleet's combined data.
    Merged {
        inner: Box<StreamSource>,
        parts: Vec<usize>,
    },
}

impl StreamSource {
    pub fn merged(inner: StreamSource, parts: Vec<usize>) -> Result<Self> {
        if parts.len() != inner.learners() || parts.iter().any(|&b| b == 0) {
            return Err(Error::Data(format!(
                "merged source needs one positive batch size per inner learner, \
                 got {} sizes for {} learners",
                parts.len(),
                inner.learners()
            )));
        }
        Ok(StreamSource::Merged {
            inner: Box::new(inner),
            parts,
        })
    }

    /// How many per-round batches this source serves.
    pub fn learners(&self) -> usize {
        match self {
            StreamSource::Drift(s) => s.learners(),
            StreamSource::Dataset(s) => s.learners(),
            StreamSource::Merged { .. } => 1,
        }
    }

    /// Concept-drift check for round `t`. Finite datasets never drift.
    pub fn maybe_drift(&mut self, t: u64) -> Result<Option<DriftEvent>> {
        match self {
            StreamSource::Drift(s) => s.maybe_drift(t),
            StreamSource::Dataset(_) => Ok(None),
            StreamSource::Merged { inner, .. } => inner.maybe_drift(t),
        }
    }

    /// One batch per learner, or `None` once any shard cannot fill its
    /// batch. Nothing is consumed on `None`, so a run stops on whole-round
    /// boundaries.
    pub fn round_batches(&mut self, sizes: &[usize]) -> Result<Option<Vec<LabeledBatch>>> {
        match self {
            StreamSource::Drift(s) => {
                if sizes.len() != s.learners() {
                    return Err(Error::Data(format!(
                        "{} batch sizes for {} stream learners",
                        sizes.len(),
                        s.learners()
                    )));
                }
                let mut batches = Vec::with_capacity(sizes.len());
                for (i, &b) in sizes.iter().enumerate() {
                    batches.push(s.next_batch(i, b)?);
                }
                Ok(Some(batches))
            }
            StreamSource::Dataset(s) => {
                if sizes.len() != s.learners() {
                    return Err(Error::Data(format!(
                        "{} batch sizes for {} dataset shards",
                        sizes.len(),
                        s.learners()
                    )));
                }
                if !s.has_full_round(sizes) {
                    return Ok(None);
                }
                let mut batches = Vec::with_capacity(sizes.len());
                for (i, &b) in sizes.iter().enumerate() {
                    batches.push(s.next_batch(i, b)?);
                }
                Ok(Some(batches))
            }
            StreamSource::Merged { inner, parts } => {
                let total: usize = parts.iter().sum();
                if sizes.len() != 1 || sizes[0] != total {
                    return Err(Error::Data(format!(
                        "merged source serves one batch of {total} rows, asked for {sizes:?}"
                    )));
                }
                let parts = parts.clone();
                match inner.round_batches(&parts)? {
                    Some(batches) => Ok(Some(vec![LabeledBatch::concat(&batches)?])),
                    None => Ok(None),
                }
            }
        }
    }
}

enum SyncBackend {
    /// No communication at all.
    Passive,
    Periodic {
        period: u64,
    },
    Fedavg {
        period: u64,
        fraction: f64,
        rng: ChaCha8Rng,
    },
    Dynamic {
        coordinator: Coordinator,
    },
}

/// Whether a run can keep going.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundStatus {
    Continue,
    /// The data source could not fill a whole round.
    Exhausted,
}

/// A fleet of learners, their data source, and a sync protocol, advanced one
/// round at a time while a ledger records losses and traffic.
pub struct World {
    learners: Vec<Learner>,
    batch_sizes: Vec<usize>,
    source: StreamSource,
    backend: SyncBackend,
    cost: CommCostModel,
    ledger: RunLedger,
    completed: u64,
}

impl World {
    /// `sync_seed` drives coordinator randomness (balancing draws, fedavg
    /// sampling); `initial_reference` seeds the violation checks of the
    /// dynamic kinds and is ignored by the rest.
    pub fn new(
        protocol: ProtocolSpec,
        learners: Vec<Learner>,
        batch_sizes: Vec<usize>,
        source: StreamSource,
        cost: CommCostModel,
        info: RunInfo,
        sync_seed: u64,
        initial_reference: ModelParams,
    ) -> Result<Self> {
        protocol.validate()?;
        cost.validate()?;
        if learners.is_empty() {
            return Err(Error::config("learner.count", "need at least one learner"));
        }
        if batch_sizes.len() != learners.len() {
            return Err(Error::config(
                "learner.batch_sizes",
                format!(
                    "{} batch sizes for {} learners",
                    batch_sizes.len(),
                    learners.len()
                ),
            ));
        }
        if batch_sizes.iter().any(|&b| b == 0) {
            return Err(Error::config("learner.batch_sizes", "must be positive"));
        }
        if source.learners() != learners.len() {
            return Err(Error::Data(format!(
                "stream serves {} learners, world has {}",
                source.learners(),
                learners.len()
            )));
        }
        let dim = learners[0].model().dim();
        for l in &learners {
            if l.model().dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: l.model().dim(),
                });
            }
        }
        let backend = match protocol.kind {
            ProtocolKind::Nosync | ProtocolKind::Serial => SyncBackend::Passive,
            ProtocolKind::Periodic | ProtocolKind::Continuous => SyncBackend::Periodic {
                period: protocol.effective_period(),
            },
            ProtocolKind::Fedavg => SyncBackend::Fedavg {
                period: protocol.effective_period(),
                fraction: protocol
                    .fraction
                    .expect("validate guarantees fedavg carries a fraction"),
                rng: ChaCha8Rng::seed_from_u64(sync_seed),
            },
            ProtocolKind::Dynamic => {
                if initial_reference.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: initial_reference.dim(),
                    });
                }
                SyncBackend::Dynamic {
                    coordinator: Coordinator::new(protocol, initial_reference, sync_seed)?,
                }
            }
            ProtocolKind::DynamicWeighted => {
                if initial_reference.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: initial_reference.dim(),
                    });
                }
                let counts: Vec<u64> = batch_sizes.iter().map(|&b| b as u64).collect();
                SyncBackend::Dynamic {
                    coordinator: Coordinator::with_counts(
                        protocol,
                        initial_reference,
                        sync_seed,
                        &counts,
                    )?,
                }
            }
        };
        Ok(World {
            learners,
            batch_sizes,
            source,
            backend,
            cost,
            ledger: RunLedger::new(info),
            completed: 0,
        })
    }

    /// One round: drift check, batch draw, local updates, sync, accounting.
    pub fn run_round(&mut self) -> Result<RoundStatus> {
        let t = self.completed + 1;
        let drift = self.source.maybe_drift(t)?.is_some();
        let Some(batches) = self.source.round_batches(&self.batch_sizes)? else {
            return Ok(RoundStatus::Exhausted);
        };
        let mut losses = Vec::with_capacity(self.learners.len());
        for (learner, batch) in self.learners.iter_mut().zip(&batches) {
            losses.push(learner.local_round(batch)?);
        }
        let (bytes, msgs, full, partial, violations) = self.sync_step(t)?;
        self.ledger
            .push_round(losses, bytes, msgs, full, partial, violations, drift);
        self.completed = t;
        Ok(RoundStatus::Continue)
    }

    fn sync_step(&mut self, t: u64) -> Result<(u64, u64, u32, u32, u32)> {
        let m = self.learners.len();
        let mut cfg = ModelConfiguration::new(
            self.learners.iter().map(|l| l.model().clone()).collect(),
        )?;
        let (violations, outcome) = match &mut self.backend {
            SyncBackend::Passive => (0, None),
            SyncBackend::Periodic { period } => (0, periodic_sync(&mut cfg, t, *period)?),
            SyncBackend::Fedavg {
                period,
                fraction,
                rng,
            } => (0, fedavg_sync(&mut cfg, t, *period, *fraction, rng)?),
            SyncBackend::Dynamic { coordinator } => coordinator.sync_round(&mut cfg, t)?,
        };
        let Some(outcome) = outcome else {
            return Ok((0, 0, 0, 0, violations as u32));
        };
        let (bytes, msgs) = self.cost.charge(&outcome);
        for &i in &outcome.participants {
            self.learners[i].set_model(cfg.get(i).clone())?;
        }
        let (full, partial) = if outcome.is_full(m) { (1, 0) } else { (0, 1) };
        Ok((bytes, msgs, full, partial, violations as u32))
    }

    /// Runs until `rounds` rounds have completed or the source runs dry.
    pub fn run(&mut self, rounds: u64) -> Result<RoundStatus> {
        while self.completed < rounds {
            if self.run_round()? == RoundStatus::Exhausted {
                return Ok(RoundStatus::Exhausted);
            }
        }
        Ok(RoundStatus::Continue)
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn ledger(&self) -> &RunLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> RunLedger {
        self.ledger
    }

    /// The coordinator's current reference model, for the dynamic kinds.
    pub fn reference(&self) -> Option<&ModelParams> {
        match &self.backend {
            SyncBackend::Dynamic { coordinator } => Some(coordinator.reference()),
            _ => None,
        }
    }

    pub fn violation_counter(&self) -> Option<usize> {
        match &self.backend {
            SyncBackend::Dynamic { coordinator } => Some(coordinator.violation_counter()),
            _ => None,
        }
    }

    pub fn drift_events(&self) -> &[u64] {
        match &self.source {
            StreamSource::Drift(s) => s.events(),
            StreamSource::Merged { inner, .. } => match inner.as_ref() {
                StreamSource::Drift(s) => s.events(),
                _ => &[],
            },
            StreamSource::Dataset(_) => &[],
        }
    }
}
