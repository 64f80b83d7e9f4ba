//! Synchronization protocols: who talks to whom between rounds, and what it
//! costs.

mod coordinator;
mod world;

pub use coordinator::{check_local_condition, fedavg_sync, periodic_sync, Coordinator};
pub use world::{RoundStatus, StreamSource, World};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Nosync,
    Serial,
    Periodic,
    Continuous,
    Dynamic,
    DynamicWeighted,
    Fedavg,
}

impl ProtocolKind {
    pub fn is_dynamic(self) -> bool {
        matches!(self, ProtocolKind::Dynamic | ProtocolKind::DynamicWeighted)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Nosync => "nosync",
            ProtocolKind::Serial => "serial",
            ProtocolKind::Periodic => "periodic",
            ProtocolKind::Continuous => "continuous",
            ProtocolKind::Dynamic => "dynamic",
            ProtocolKind::DynamicWeighted => "dynamic_weighted",
            ProtocolKind::Fedavg => "fedavg",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nosync" => ProtocolKind::Nosync,
            "serial" => ProtocolKind::Serial,
            "periodic" => ProtocolKind::Periodic,
            "continuous" => ProtocolKind::Continuous,
            "dynamic" => ProtocolKind::Dynamic,
            "dynamic_weighted" => ProtocolKind::DynamicWeighted,
            "fedavg" => ProtocolKind::Fedavg,
            other => {
                return Err(Error::config(
                    "protocol.kind",
                    format!(
                        "unknown protocol {other:?}; expected one of nosync, serial, periodic, \
                         continuous, dynamic, dynamic_weighted, fedavg"
                    ),
                ))
            }
        })
    }
}

fn default_period() -> u64 {
    1
}

/// Which protocol runs and its knobs. `delta` applies only to the dynamic
/// kinds, `fraction` only to fedavg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Sync period b; the continuous kind pins it to 1.
    #[serde(default = "default_period")]
    pub period: u64,
    /// Divergence threshold for the dynamic kinds. Infinity disables
    /// violations entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Participating fraction C in (0, 1] for fedavg.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// Also reset the violation counter when balancing escalates to a full
    /// sync on its own. Off by default: the counter branch is the only reset.
    #[serde(default)]
    pub reset_v_on_full_sync: bool,
}

impl ProtocolSpec {
    pub fn new(kind: ProtocolKind) -> Self {
        ProtocolSpec {
            kind,
            period: 1,
            delta: None,
            fraction: None,
            reset_v_on_full_sync: false,
        }
    }

    pub fn periodic(period: u64) -> Self {
        ProtocolSpec {
            period,
            ..ProtocolSpec::new(ProtocolKind::Periodic)
        }
    }

    pub fn continuous() -> Self {
        ProtocolSpec::new(ProtocolKind::Continuous)
    }

    pub fn dynamic(delta: f64, period: u64) -> Self {
        ProtocolSpec {
            period,
            delta: Some(delta),
            ..ProtocolSpec::new(ProtocolKind::Dynamic)
        }
    }

    pub fn dynamic_weighted(delta: f64, period: u64) -> Self {
        ProtocolSpec {
            period,
            delta: Some(delta),
            ..ProtocolSpec::new(ProtocolKind::DynamicWeighted)
        }
    }

    pub fn fedavg(fraction: f64, period: u64) -> Self {
        ProtocolSpec {
            period,
            fraction: Some(fraction),
            ..ProtocolSpec::new(ProtocolKind::Fedavg)
        }
    }

    /// Sync period after resolving the continuous alias.
    pub fn effective_period(&self) -> u64 {
        match self.kind {
            ProtocolKind::Continuous => 1,
            _ => self.period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::config("protocol.period", "must be positive"));
        }
        if self.kind == ProtocolKind::Continuous && self.period != 1 {
            return Err(Error::config(
                "protocol.period",
                "continuous averaging syncs every round; use periodic for b > 1",
            ));
        }
        match (self.kind.is_dynamic(), self.delta) {
            (true, None) => {
                return Err(Error::config(
                    "protocol.delta",
                    "required for the dynamic kinds",
                ))
            }
            (true, Some(d)) if d.is_nan() || d <= 0.0 => {
                return Err(Error::config(
                    "protocol.delta",
                    format!("must be positive, got {d}"),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::config(
                    "protocol.delta",
                    format!("not applicable to {}", self.kind.name()),
                ))
            }
            _ => {}
        }
        match (self.kind == ProtocolKind::Fedavg, self.fraction) {
            (true, None) => {
                return Err(Error::config("protocol.fraction", "required for fedavg"))
            }
            (true, Some(c)) if !(c > 0.0 && c <= 1.0) => {
                return Err(Error::config(
                    "protocol.fraction",
                    format!("must lie in (0, 1], got {c}"),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::config(
                    "protocol.fraction",
                    format!("not applicable to {}", self.kind.name()),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `dynamic(delta=0.3,b=2)`.
    pub fn label(&self) -> String {
        match self.kind {
            ProtocolKind::Nosync | ProtocolKind::Serial | ProtocolKind::Continuous => {
                self.kind.name().to_string()
            }
            ProtocolKind::Periodic => format!("periodic(b={})", self.period),
            ProtocolKind::Dynamic | ProtocolKind::DynamicWeighted => format!(
                "{}(delta={},b={})",
                self.kind.name(),
                self.delta.unwrap_or(f64::NAN),
                self.period
            ),
            ProtocolKind::Fedavg => format!(
                "fedavg(C={},b={})",
                self.fraction.unwrap_or(f64::NAN),
                self.period
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToCoordinator,
    ToLearner,
}

/// What one message carries. Byte costs live in the metrics cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// A full model of the given dimension.
    Model { dim: usize },
    /// A model plus the sender's batch count (weighted protocol uploads).
    ModelWithCount { dim: usize },
    /// A coordinator query asking a learner for its model.
    Request,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Message {
    pub direction: Direction,
    pub payload: Payload,
}

impl Message {
    pub fn upload(dim: usize) -> Self {
        Message {
            direction: Direction::ToCoordinator,
            payload: Payload::Model { dim },
        }
    }

    pub fn upload_with_count(dim: usize) -> Self {
        Message {
            direction: Direction::ToCoordinator,
            payload: Payload::ModelWithCount { dim },
        }
    }

    pub fn download(dim: usize) -> Self {
        Message {
            direction: Direction::ToLearner,
            payload: Payload::Model { dim },
        }
    }

    pub fn request() -> Self {
        Message {
            direction: Direction::ToLearner,
            payload: Payload::Request,
        }
    }
}

/// Audit record of one synchronization event.
#[derive(Clone, Debug)]
pub struct SyncOutcome {
    pub participants: BTreeSet<usize>,
    /// The model sent to every participant, when one was computed.
    pub new_model: Option<ModelParams>,
    pub reference_updated: bool,
    pub messages: Vec<Message>,
}

impl SyncOutcome {
    /// True when every learner of an m-learner fleet participated.
    pub fn is_full(&self, m: usize) -> bool {
        self.participants.len() == m
    }
}
