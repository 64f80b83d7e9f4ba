//! Accounting: per-round loss and communication records, byte costing of
//! sync messages, regret, cross-protocol efficiency reports, and CSV/JSON
//! export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sync::{Payload, ProtocolKind, ProtocolSpec, SyncOutcome};

/// How message payloads translate to bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CommCostModel {
    /// Serialized size of one model weight.
    pub bytes_per_param: u64,
    /// Fixed per-message overhead.
    pub header_bytes: u64,
    /// Whether coordinator "send me your model" queries are charged.
    pub count_requests: bool,
}

impl Default for CommCostModel {
    fn default() -> Self {
        CommCostModel {
            bytes_per_param: 8,
            header_bytes: 64,
            count_requests: true,
        }
    }
}

impl CommCostModel {
    pub fn validate(&self) -> Result<()> {
        if self.bytes_per_param == 0 {
            return Err(Error::config("cost.bytes_per_param", "must be positive"));
        }
        Ok(())
    }

    pub fn message_bytes(&self, payload: Payload) -> u64 {
        match payload {
            Payload::Model { dim } => dim as u64 * self.bytes_per_param + self.header_bytes,
            // the count rides along as one extra 8-byte integer
            Payload::ModelWithCount { dim } => {
                dim as u64 * self.bytes_per_param + self.header_bytes + 8
            }
            Payload::Request => {
                if self.count_requests {
                    self.header_bytes
                } else {
                    0
                }
            }
        }
    }

    /// Total bytes and message count for one sync outcome.
    pub fn charge(&self, outcome: &SyncOutcome) -> (u64, u64) {
        let bytes = outcome
            .messages
            .iter()
            .map(|m| self.message_bytes(m.payload))
            .sum();
        (bytes, outcome.messages.len() as u64)
    }
}

/// Immutable description of a run, recorded next to its per-round records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunInfo {
    pub name: String,
    pub protocol: ProtocolSpec,
    /// Logical fleet size. The serial baseline trains one learner but keeps
    /// the fleet size it stands in for.
    pub learners: usize,
    pub rounds_planned: u64,
    pub master_seed: u64,
    pub model_dim: usize,
    /// Deterministic description of the data source, used to check that
    /// compared runs saw the same data.
    pub stream_desc: String,
    pub batch_sizes: Vec<usize>,
    /// For the serial baseline: bytes needed to centralize the raw samples,
    /// reported as information, never added to the communication columns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub serial_data_bytes: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: u64,
    #[serde(skip)]
    pub learner_losses: Vec<f64>,
    pub cum_loss: f64,
    pub inst_loss_mean: f64,
    pub cum_bytes: u64,
    pub msgs: u64,
    pub syncs_full: u32,
    pub syncs_partial: u32,
    pub violations: u32,
    pub drift: bool,
}

/// The full record of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunLedger {
    pub info: RunInfo,
    rounds: Vec<RoundRecord>,
}

impl RunLedger {
    pub fn new(info: RunInfo) -> Self {
        RunLedger {
            info,
            rounds: Vec::new(),
        }
    }

    /// Appends one round. Losses are summed into the cumulative loss; the
    /// instantaneous mean is their average over learners.
    pub fn push_round(
        &mut self,
        learner_losses: Vec<f64>,
        bytes: u64,
        msgs: u64,
        syncs_full: u32,
        syncs_partial: u32,
        violations: u32,
        drift: bool,
    ) {
        let t = self.rounds.len() as u64 + 1;
        let round_loss: f64 = learner_losses.iter().sum();
        let inst_loss_mean = round_loss / learner_losses.len() as f64;
        let cum_loss = self.rounds.last().map(|r| r.cum_loss).unwrap_or(0.0) + round_loss;
        let cum_bytes = self.rounds.last().map(|r| r.cum_bytes).unwrap_or(0) + bytes;
        self.rounds.push(RoundRecord {
            t,
            learner_losses,
            cum_loss,
            inst_loss_mean,
            cum_bytes,
            msgs,
            syncs_full,
            syncs_partial,
            violations,
            drift,
        });
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn rounds_run(&self) -> u64 {
        self.rounds.len() as u64
    }

    /// Cumulative loss after the last recorded round.
    pub fn final_loss(&self) -> f64 {
        self.rounds.last().map(|r| r.cum_loss).unwrap_or(0.0)
    }

    pub fn final_bytes(&self) -> u64 {
        self.rounds.last().map(|r| r.cum_bytes).unwrap_or(0)
    }

    pub fn total_msgs(&self) -> u64 {
        self.rounds.iter().map(|r| r.msgs).sum()
    }

    pub fn total_full_syncs(&self) -> u64 {
        self.rounds.iter().map(|r| r.syncs_full as u64).sum()
    }

    pub fn total_partial_syncs(&self) -> u64 {
        self.rounds.iter().map(|r| r.syncs_partial as u64).sum()
    }

    pub fn total_violations(&self) -> u64 {
        self.rounds.iter().map(|r| r.violations as u64).sum()
    }

    /// Rounds flagged as drift rounds, in order.
    pub fn drift_rounds(&self) -> Vec<u64> {
        self.rounds.iter().filter(|r| r.drift).map(|r| r.t).collect()
    }

    /// Errors unless two ledgers describe runs over the same data, seeds,
    /// horizon and fleet size, i.e. are comparable round for round.
    pub fn check_comparable(&self, other: &RunLedger) -> Result<()> {
        let a = &self.info;
        let b = &other.info;
        if a.master_seed != b.master_seed
            || a.stream_desc != b.stream_desc
            || a.rounds_planned != b.rounds_planned
            || a.learners != b.learners
            || self.rounds_run() != other.rounds_run()
        {
            return Err(Error::Data(format!(
                "runs are not comparable: ({}, seed {}, T {}, m {}, {} rounds) vs \
                 ({}, seed {}, T {}, m {}, {} rounds)",
                a.stream_desc,
                a.master_seed,
                a.rounds_planned,
                a.learners,
                self.rounds_run(),
                b.stream_desc,
                b.master_seed,
                b.rounds_planned,
                b.learners,
                other.rounds_run(),
            )));
        }
        Ok(())
    }
}

/// Cumulative loss difference against per-round per-learner reference
/// losses evaluated on the same samples.
pub fn regret(ledger: &RunLedger, reference_losses: &[Vec<f64>]) -> Result<f64> {
    if reference_losses.len() != ledger.rounds().len() {
        return Err(Error::Data(format!(
            "{} reference rounds for {} recorded rounds",
            reference_losses.len(),
            ledger.rounds().len()
        )));
    }
    let mut total = 0.0;
    for (record, refs) in ledger.rounds().iter().zip(reference_losses) {
        if refs.len() != record.learner_losses.len() {
            return Err(Error::Data(format!(
                "round {}: {} reference losses for {} learners",
                record.t,
                refs.len(),
                record.learner_losses.len()
            )));
        }
        for (own, reference) in record.learner_losses.iter().zip(refs) {
            total += own - reference;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyRow {
    pub label: String,
    pub kind: ProtocolKind,
    pub final_loss: f64,
    pub final_bytes: u64,
    pub total_msgs: u64,
    /// Final cumulative loss divided by the serial baseline's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_vs_serial: Option<f64>,
    /// Final bytes divided by the every-round-averaging baseline's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes_vs_continuous: Option<f64>,
    /// Loss within tolerance of serial. Only meaningful with a serial
    /// baseline present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistent: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyReport {
    pub tolerance: f64,
    pub rows: Vec<EfficiencyRow>,
}

fn is_continuous_baseline(p: &ProtocolSpec) -> bool {
    p.kind == ProtocolKind::Continuous
        || (p.kind == ProtocolKind::Periodic && p.period == 1)
}

/// Compares protocols run on identical data: loss ratios against the serial
/// baseline and communication ratios against every-round averaging, where
/// those baselines are present.
pub fn efficiency_report(
    ledgers: &BTreeMap<String, RunLedger>,
    tolerance: f64,
) -> Result<EfficiencyReport> {
    let Some(first) = ledgers.values().next() else {
        return Err(Error::Data("no runs to compare".into()));
    };
    for ledger in ledgers.values() {
        first.check_comparable(ledger)?;
    }
    let serial_loss = ledgers
        .values()
        .find(|l| l.info.protocol.kind == ProtocolKind::Serial)
        .map(|l| l.final_loss());
    let continuous_bytes = ledgers
        .values()
        .find(|l| is_continuous_baseline(&l.info.protocol))
        .map(|l| l.final_bytes());
    let rows = ledgers
        .iter()
        .map(|(label, ledger)| {
            let loss_vs_serial = serial_loss.map(|s| ledger.final_loss() / s);
            EfficiencyRow {
                label: label.clone(),
                kind: ledger.info.protocol.kind,
                final_loss: ledger.final_loss(),
                final_bytes: ledger.final_bytes(),
                total_msgs: ledger.total_msgs(),
                loss_vs_serial,
                bytes_vs_continuous: continuous_bytes
                    .map(|c| ledger.final_bytes() as f64 / c as f64),
                consistent: loss_vs_serial.map(|ratio| ratio <= 1.0 + tolerance),
            }
        })
        .collect();
    Ok(EfficiencyReport { tolerance, rows })
}

pub const CSV_HEADER: &str =
    "t,cum_loss,inst_loss_mean,cum_bytes,msgs,syncs_full,syncs_partial,violations,drift";

/// Writes the per-round table. Column order is part of the interface.
pub fn write_csv<W: Write>(ledger: &RunLedger, mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in ledger.rounds() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.cum_loss,
            r.inst_loss_mean,
            r.cum_bytes,
            r.msgs,
            r.syncs_full,
            r.syncs_partial,
            r.violations,
            u8::from(r.drift)
        )?;
    }
    Ok(())
}

pub fn csv_string(ledger: &RunLedger) -> String {
    let mut buf = Vec::new();
    write_csv(ledger, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv output is ascii")
}

pub fn export_csv(ledger: &RunLedger, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(ledger))?;
    Ok(())
}

/// JSON export: the same per-round columns plus the run info and
/// caller-supplied metadata (configuration, seeds, build description).
pub fn export_json(
    ledger: &RunLedger,
    path: &Path,
    metadata: &serde_json::Value,
) -> Result<()> {
    #[derive(Serialize)]
    struct JsonExport<'a> {
        metadata: &'a serde_json::Value,
        info: &'a RunInfo,
        rounds: &'a [RoundRecord],
    }
    let doc = JsonExport {
        metadata,
        info: &ledger.info,
        rounds: ledger.rounds(),
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Data(format!("json serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// One row of a re-imported CSV export.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub t: u64,
    pub cum_loss: f64,
    pub inst_loss_mean: f64,
    pub cum_bytes: u64,
    pub msgs: u64,
    pub syncs_full: u32,
    pub syncs_partial: u32,
    pub violations: u32,
    pub drift: bool,
}

/// Reads back an exported per-round table.
pub fn import_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "unexpected header {:?}, expected {CSV_HEADER:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Data(format!(
                "line {}: expected 9 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        fn num<T: std::str::FromStr>(i: usize, name: &str, tok: &str) -> Result<T> {
            tok.parse().map_err(|_| {
                Error::Data(format!("line {}: bad {name}: {tok:?}", i + 2))
            })
        }
        rows.push(CsvRow {
            t: num(i, "t", fields[0])?,
            cum_loss: num(i, "cum_loss", fields[1])?,
            inst_loss_mean: num(i, "inst_loss_mean", fields[2])?,
            cum_bytes: num(i, "cum_bytes", fields[3])?,
            msgs: num(i, "msgs", fields[4])?,
            syncs_full: num(i, "syncs_full", fields[5])?,
            syncs_partial: num(i, "syncs_partial", fields[6])?,
            violations: num(i, "violations", fields[7])?,
            drift: num::<u8>(i, "drift", fields[8])? != 0,
        });
    }
    Ok(rows)
}
