//! `dynavg`: run, sweep, verify, and export decentralized training
//! simulations from the command line.
//!
//! Exit codes: 0 on success, 1 on config or runtime errors, 2 when a
//! verification suite reports failures.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use dynavg::config::ExperimentConfig;
use dynavg::error::Result;
use dynavg::sim;
use dynavg::streams::csv as csv_io;
use dynavg::verify::{self, SuiteKind};
use dynavg_cli::{
    apply_overrides, build_id, export_run, export_sweep, load_config, run_summary, verify_exit_code,
    Overrides,
};

#[derive(Parser)]
#[command(
    name = "dynavg",
    version,
    about = "Simulator for communication-efficient decentralized online learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print a result summary.
    Run(ExperimentArgs),
    /// Run every cell of the config's sweep grid and compare protocols.
    Sweep(ExperimentArgs),
    /// Check the library's invariants; exits 2 when any suite fails.
    Verify(VerifyArgs),
    /// Export the exact sample sequence a run would observe.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Shipped preset name instead of a config file.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory override; nothing is written when absent from both
    /// flag and config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Protocol kind override (nosync, serial, periodic, continuous,
    /// dynamic, dynamic_weighted, fedavg).
    #[arg(long)]
    protocol: Option<String>,

    /// Divergence threshold override for the dynamic kinds.
    #[arg(long)]
    delta: Option<f64>,

    /// Sync period override.
    #[arg(long)]
    period: Option<u64>,

    /// Participation fraction override for fedavg.
    #[arg(long)]
    fraction: Option<f64>,

    /// Fleet size override.
    #[arg(long)]
    learners: Option<usize>,

    /// Round count override.
    #[arg(long)]
    rounds: Option<u64>,

    /// Export format override (csv or json).
    #[arg(long)]
    format: Option<String>,
}

impl ExperimentArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            protocol: self.protocol.clone(),
            delta: self.delta,
            period: self.period,
            fraction: self.fraction,
            learners: self.learners,
            rounds: self.rounds,
            format: self.format.clone(),
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.config.as_deref(), self.preset.as_deref())?;
        apply_overrides(&mut cfg, &self.overrides())?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite to run: serial-equivalence, sync-contract, condition-soundness,
    /// distance-bound, gradcheck, or all.
    #[arg(default_value = "all")]
    suite: String,

    /// Seed for the suite's generated instances.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

fn main() {
    // Die quietly when stdout closes early (e.g. piped into head) instead
    // of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::GenData(args) => cmd_gen_data(&args.experiment),
    }
}

fn cmd_run(args: &ExperimentArgs) -> Result<i32> {
    let cfg = args.load()?;
    let ledger = sim::run(&cfg)?;
    println!("{}", run_summary(&cfg, &ledger));
    if let Some(dir) = &cfg.output.dir {
        let path = export_run(&cfg, &ledger, std::path::Path::new(dir), &cfg.name)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_sweep(args: &ExperimentArgs) -> Result<i32> {
    let cfg = args.load()?;
    let output = sim::sweep(&cfg)?;
    println!("sweep {}: {} cells", cfg.name, output.cells.len());
    for cell in &output.cells {
        println!(
            "  {}: loss={:.6} loss/m={:.6} bytes={} msgs={} syncs={}+{}",
            cell.label,
            cell.final_loss,
            cell.loss_per_learner,
            cell.final_bytes,
            cell.total_msgs,
            cell.syncs_full,
            cell.syncs_partial,
        );
    }
    for group in &output.groups {
        println!(
            "  group m={} eps={} seed={}:",
            group.learners, group.epsilon_init, group.seed,
        );
        for row in &group.report.rows {
            println!(
                "    {}: loss_vs_serial={} bytes_vs_continuous={} consistent={}",
                row.label,
                fmt_ratio(row.loss_vs_serial),
                fmt_ratio(row.bytes_vs_continuous),
                row.consistent.map_or("n/a".into(), |c| c.to_string()),
            );
        }
    }
    if let Some(dir) = &cfg.output.dir {
        for path in export_sweep(&output, std::path::Path::new(dir))? {
            println!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let kind: SuiteKind = args.suite.parse()?;
    let seed = args.seed.unwrap_or(verify::DEFAULT_SEED);
    let report = verify::run_suite(kind, seed);
    for outcome in &report.outcomes {
        println!("{}", outcome.summary_line());
    }
    Ok(verify_exit_code(report.passed()))
}

fn cmd_gen_data(args: &ExperimentArgs) -> Result<i32> {
    let cfg = args.load()?;
    let dir = cfg.output.dir.clone().ok_or_else(|| {
        dynavg::error::Error::config("output.dir", "gen-data needs --out or output.dir")
    })?;
    let dir = PathBuf::from(dir);
    std::fs::create_dir_all(&dir)?;
    let data = sim::materialize(&cfg)?;
    let csv_path = dir.join(format!("{}-data.csv", dynavg_cli::sanitize(&cfg.name)));
    csv_io::write(&csv_path, &data.dataset)?;
    let meta = serde_json::json!({
        "config": serde_json::to_value(&cfg)
            .map_err(|e| dynavg::error::Error::Data(format!("config not serializable: {e}")))?,
        "master_seed": cfg.seeds.master,
        "rows": data.dataset.len(),
        "width": data.dataset.width(),
        "drift_rounds": data.drift_rounds,
        "build": build_id(),
    });
    let meta_path = dir.join(format!("{}-data.meta.json", dynavg_cli::sanitize(&cfg.name)));
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| dynavg::error::Error::Data(format!("metadata not serializable: {e}")))?;
    std::fs::write(&meta_path, text + "\n")?;
    println!(
        "wrote {} ({} rows, width {})",
        csv_path.display(),
        data.dataset.len(),
        data.dataset.width()
    );
    println!("wrote {}", meta_path.display());
    Ok(0)
}
