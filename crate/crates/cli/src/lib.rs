//! Shared plumbing for the `dynavg` binary: shipped presets, flag overrides,
//! and export helpers. Lives in a library so integration tests drive the
//! same code paths as the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use dynavg::config::{seeds, ExperimentConfig, ExportFormat};
use dynavg::error::{Error, Result};
use dynavg::metrics::{self, RunLedger};
use dynavg::sim::SweepOutput;
use dynavg::sync::{ProtocolKind, ProtocolSpec};

pub mod presets {
    //! Ready-to-run experiment configs compiled into the binary.

    pub const MNIST_LIKE: &str = include_str!("../presets/mnist-like.toml");
    pub const FEDAVG_CMP: &str = include_str!("../presets/fedavg-cmp.toml");
    pub const DRIFT: &str = include_str!("../presets/drift.toml");
    pub const DRIFT_DESK: &str = include_str!("../presets/drift-desk.toml");

    pub const NAMES: [&str; 4] = ["mnist-like", "fedavg-cmp", "drift", "drift-desk"];

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "mnist-like" => Some(MNIST_LIKE),
            "fedavg-cmp" => Some(FEDAVG_CMP),
            "drift" => Some(DRIFT),
            "drift-desk" => Some(DRIFT_DESK),
            _ => None,
        }
    }
}

/// Flag values that override keys of the loaded config. `None` means the
/// flag was not given and the config value stands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub protocol: Option<String>,
    pub delta: Option<f64>,
    pub period: Option<u64>,
    pub fraction: Option<f64>,
    pub learners: Option<usize>,
    pub rounds: Option<u64>,
    pub format: Option<String>,
}

/// Loads a config from a file or a shipped preset, exactly one of which must
/// be given.
pub fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    match (path, preset) {
        (Some(_), Some(_)) => Err(Error::config(
            "config",
            "--config and --preset are mutually exclusive",
        )),
        (None, None) => Err(Error::config(
            "config",
            "either --config <path> or --preset <name> is required",
        )),
        (Some(p), None) => ExperimentConfig::load(p),
        (None, Some(name)) => {
            let text = presets::by_name(name).ok_or_else(|| {
                Error::config(
                    "preset",
                    format!(
                        "unknown preset {name:?}; shipped presets: {}",
                        presets::NAMES.join(", ")
                    ),
                )
            })?;
            ExperimentConfig::from_toml_str(text)
        }
    }
}

/// Applies flag overrides on top of a loaded config and re-validates.
///
/// Switching `--protocol` to a different kind drops knobs that made sense
/// only for the old kind, so a leftover delta never silently constrains a
/// periodic run. The continuous kind pins its period to 1 unless `--period`
/// insists otherwise (which validation then rejects).
pub fn apply_overrides(cfg: &mut ExperimentConfig, ov: &Overrides) -> Result<()> {
    if let Some(kind_str) = &ov.protocol {
        let kind: ProtocolKind = kind_str.parse()?;
        if kind != cfg.protocol.kind {
            let mut spec = ProtocolSpec::new(kind);
            spec.period = cfg.protocol.period;
            spec.reset_v_on_full_sync = cfg.protocol.reset_v_on_full_sync;
            if kind == ProtocolKind::Continuous {
                spec.period = 1;
            }
            cfg.protocol = spec;
        }
    }
    if let Some(delta) = ov.delta {
        cfg.protocol.delta = Some(delta);
    }
    if let Some(period) = ov.period {
        cfg.protocol.period = period;
    }
    if let Some(fraction) = ov.fraction {
        cfg.protocol.fraction = Some(fraction);
    }
    if let Some(m) = ov.learners {
        cfg.learners = m;
    }
    if let Some(rounds) = ov.rounds {
        cfg.rounds = rounds;
    }
    if let Some(seed) = ov.seed {
        cfg.seeds.master = seed;
    }
    if let Some(out) = &ov.out {
        cfg.output.dir = Some(out.display().to_string());
    }
    if let Some(fmt) = &ov.format {
        cfg.output.format = fmt.parse()?;
    }
    cfg.validate()
}

/// Build identifier embedded in JSON exports: `git describe` when the binary
/// runs inside a checkout, the crate version otherwise.
pub fn build_id() -> String {
    let described = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    described.unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// Metadata block attached to JSON exports: the full effective config, the
/// master seed with every derived stream/init seed, and the build id.
pub fn run_metadata(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let config_value = serde_json::to_value(cfg)
        .map_err(|e| Error::Data(format!("config not serializable: {e}")))?;
    let master = cfg.seeds.master;
    let m = cfg.learners as u64;
    let learner_streams: Vec<u64> = (0..m).map(|i| seeds::learner_stream(master, i)).collect();
    let init_noise: Vec<u64> = (0..m).map(|i| seeds::init_noise(master, i)).collect();
    Ok(serde_json::json!({
        "config": config_value,
        "seeds": {
            "master": master,
            "learner_streams": learner_streams,
            "concept": seeds::concept(master),
            "coordinator": seeds::coordinator(master),
            "base_init": seeds::base_init(master),
            "init_noise": init_noise,
            "partition": seeds::partition(master),
            "materialize": seeds::materialize(master),
        },
        "build": build_id(),
    }))
}

/// Turns a run label into a filename-safe stem.
pub fn sanitize(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
            out.push(c);
        } else {
            out.push('_');
        }
    }
    if out.is_empty() {
        out.push('_');
    }
    out
}

/// Writes one run's ledger into `dir` under `stem`.{csv|json}, returning the
/// path.
pub fn export_run(
    cfg: &ExperimentConfig,
    ledger: &RunLedger,
    dir: &Path,
    stem: &str,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = sanitize(stem);
    match cfg.output.format {
        ExportFormat::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            metrics::export_csv(ledger, &path)?;
            Ok(path)
        }
        ExportFormat::Json => {
            let path = dir.join(format!("{stem}.json"));
            metrics::export_json(ledger, &path, &run_metadata(cfg)?)?;
            Ok(path)
        }
    }
}

/// One-paragraph result summary printed after a run.
pub fn run_summary(cfg: &ExperimentConfig, ledger: &RunLedger) -> String {
    let info = &ledger.info;
    let mut s = format!(
        "run {}: protocol {}, m={}, rounds {}/{}\n",
        cfg.name,
        info.protocol.label(),
        info.learners,
        ledger.rounds_run(),
        info.rounds_planned,
    );
    s.push_str(&format!(
        "  cum_loss={:.6} cum_bytes={} msgs={} syncs={}+{} violations={} drifts={}",
        ledger.final_loss(),
        ledger.final_bytes(),
        ledger.total_msgs(),
        ledger.total_full_syncs(),
        ledger.total_partial_syncs(),
        ledger.total_violations(),
        ledger.drift_rounds().len(),
    ));
    if let Some(serial_bytes) = info.serial_data_bytes {
        s.push_str(&format!("\n  serial_data_bytes={serial_bytes}"));
    }
    s
}

/// Sweep summary table, one CSV row per cell in grid order.
pub fn sweep_summary_csv(output: &SweepOutput) -> String {
    let mut s = String::from(
        "label,protocol,learners,epsilon_init,seed,rounds_run,final_loss,loss_per_learner,\
         final_bytes,total_msgs,syncs_full,syncs_partial,violations\n",
    );
    for c in &output.cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.label,
            c.protocol,
            c.learners,
            c.epsilon_init,
            c.seed,
            c.rounds_run,
            c.final_loss,
            c.loss_per_learner,
            c.final_bytes,
            c.total_msgs,
            c.syncs_full,
            c.syncs_partial,
            c.violations,
        ));
    }
    s
}

/// Writes all sweep artifacts under `dir`: the per-cell ledgers, the summary
/// table, and the per-group efficiency comparisons. Returns the files
/// written.
pub fn export_sweep(output: &SweepOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let cells_dir = dir.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    for (cfg, ledger) in &output.runs {
        written.push(export_run(cfg, ledger, &cells_dir, &cfg.name)?);
    }
    let summary = dir.join("summary.csv");
    std::fs::write(&summary, sweep_summary_csv(output))?;
    written.push(summary);
    let comparison = dir.join("comparison.json");
    let groups = serde_json::json!({ "groups": output.groups });
    let text = serde_json::to_string_pretty(&groups)
        .map_err(|e| Error::Data(format!("group report not serializable: {e}")))?;
    std::fs::write(&comparison, text + "\n")?;
    written.push(comparison);
    Ok(written)
}

/// Exit code for a finished verification report: 0 clean, 2 on any failure.
pub fn verify_exit_code(passed: bool) -> i32 {
    if passed {
        0
    } else {
        2
    }
}
