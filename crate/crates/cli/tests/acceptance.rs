//! Acceptance gate: eleven numbered criteria, one test (and so one pass or
//! fail line) each. Criteria 1-5 drive the verification suites at their
//! standard trial counts; 6-9 run the shipped presets end to end; 10 and 11
//! pin the weighted sync semantics and export reproducibility.
//!
//! Everything here runs on one core in a debug build in a few minutes; the
//! preset files document how their constants were picked.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dynavg::config::ExperimentConfig;
use dynavg::metrics::{csv_string, RunLedger};
use dynavg::params::{ModelConfiguration, ModelParams};
use dynavg::sim;
use dynavg::sync::{Coordinator, ProtocolSpec};
use dynavg::verify;
use dynavg_cli::load_config;

fn preset(name: &str) -> ExperimentConfig {
    load_config(None, Some(name)).expect("shipped preset loads")
}

fn run_with(base: &ExperimentConfig, protocol: ProtocolSpec, seed: u64) -> RunLedger {
    let mut cfg = base.clone();
    cfg.protocol = protocol;
    cfg.seeds.master = seed;
    cfg.validate().expect("derived config is valid");
    sim::run(&cfg).expect("run completes")
}

fn shipped_deltas(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.sweep
        .as_ref()
        .and_then(|s| s.delta.clone())
        .expect("preset ships a delta grid")
}

#[test]
fn criterion_01_fleet_step_matches_serial_step() {
    let started = Instant::now();
    let outcome = verify::serial_equivalence(1000, verify::DEFAULT_SEED);
    let elapsed = started.elapsed();
    assert_eq!(outcome.trials, 1000);
    assert!(outcome.passed(), "{}", outcome.summary_line());
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "1000 equivalence trials took {elapsed:?}, budget is 10s"
    );
}

#[test]
fn criterion_02_balancing_contract_holds() {
    let outcome = verify::sync_contract(10_000, verify::DEFAULT_SEED);
    assert_eq!(outcome.trials, 10_000);
    assert!(outcome.passed(), "{}", outcome.summary_line());
}

#[test]
fn criterion_03_quiet_conditions_bound_divergence() {
    let outcome = verify::condition_soundness(10_000, verify::DEFAULT_SEED);
    assert_eq!(outcome.trials, 10_000);
    assert!(outcome.passed(), "{}", outcome.summary_line());
}

#[test]
fn criterion_04_one_sync_step_distance_bound() {
    let outcome = verify::distance_bound(10_000, verify::DEFAULT_SEED);
    assert_eq!(outcome.trials, 10_000);
    assert!(outcome.passed(), "{}", outcome.summary_line());
}

#[test]
fn criterion_05_gradients_match_finite_differences() {
    let outcome = verify::gradcheck(200, verify::DEFAULT_SEED);
    assert_eq!(outcome.trials, 1200, "200 trials for each of 6 pairings");
    assert!(outcome.passed(), "{}", outcome.summary_line());
}

/// Dynamic averaging never spends more bytes than periodic averaging at the
/// same period, and becomes byte-identical to it when the threshold is so
/// tiny that every check round is a full sync.
#[test]
fn criterion_06_dynamic_never_outspends_periodic() {
    // (preset, periods, deltas, equality check at the first period)
    let grid: [(&str, &[u64], &[f64]); 4] = [
        ("mnist-like", &[1, 2, 4], &[0.05, 0.2, 0.5]),
        ("drift-desk", &[1], &[0.5, 1.0, 2.0]),
        ("drift", &[1], &[1.0]),
        ("fedavg-cmp", &[5], &[0.1, 0.8]),
    ];
    for (name, periods, deltas) in grid {
        let base = preset(name);
        for &b in periods {
            let periodic_bytes = run_with(&base, ProtocolSpec::periodic(b), 1).final_bytes();
            // At period > 1 only the chattiest threshold is re-checked; the
            // full grid runs at the base period.
            let checked: &[f64] = if b == periods[0] {
                deltas
            } else {
                &deltas[..1]
            };
            for &delta in checked {
                let dyn_bytes = run_with(&base, ProtocolSpec::dynamic(delta, b), 1).final_bytes();
                assert!(
                    dyn_bytes <= periodic_bytes,
                    "{name}: dynamic(delta={delta},b={b}) spent {dyn_bytes} > periodic {periodic_bytes}"
                );
            }
            if b == periods[0] {
                let tiny = run_with(&base, ProtocolSpec::dynamic(1e-12, b), 1).final_bytes();
                assert_eq!(
                    tiny, periodic_bytes,
                    "{name}: threshold 1e-12 should reduce to periodic byte for byte"
                );
            }
        }
    }
}

/// On the mnist-like preset some shipped threshold reaches the loss of
/// every-round averaging within 10% while spending at most half its bytes,
/// averaged over 5 seeds.
#[test]
fn criterion_07_half_the_bytes_within_ten_percent_loss() {
    let started = Instant::now();
    let base = preset("mnist-like");
    let seeds = [1u64, 2, 3, 4, 5];
    let mut periodic_loss = 0.0;
    let mut periodic_bytes = 0.0;
    for &s in &seeds {
        let ledger = run_with(&base, ProtocolSpec::periodic(1), s);
        periodic_loss += ledger.final_loss();
        periodic_bytes += ledger.final_bytes() as f64;
    }
    let mut best: Option<(f64, f64, f64)> = None;
    let mut winner = None;
    for delta in shipped_deltas(&base) {
        let mut loss = 0.0;
        let mut bytes = 0.0;
        for &s in &seeds {
            let ledger = run_with(&base, ProtocolSpec::dynamic(delta, 1), s);
            loss += ledger.final_loss();
            bytes += ledger.final_bytes() as f64;
        }
        let loss_ratio = loss / periodic_loss;
        let bytes_ratio = bytes / periodic_bytes;
        if best.is_none() || loss_ratio < best.unwrap().1 {
            best = Some((delta, loss_ratio, bytes_ratio));
        }
        if loss_ratio <= 1.10 && bytes_ratio <= 0.50 {
            winner = Some((delta, loss_ratio, bytes_ratio));
            break;
        }
    }
    let elapsed = started.elapsed();
    assert!(
        winner.is_some(),
        "no shipped threshold reached 110% loss at 50% bytes; closest was {best:?}"
    );
    let (delta, loss_ratio, bytes_ratio) = winner.unwrap();
    println!(
        "delta={delta}: loss {:.2}% of periodic b=1 at {:.1}% of its bytes",
        100.0 * loss_ratio,
        100.0 * bytes_ratio
    );
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "comparison took {elapsed:?}, budget is 5 minutes"
    );
}

/// Message counts over the 50 rounds before and after each isolated drift,
/// aggregated across seeds.
fn burst_windows(ledger: &RunLedger, w: u64) -> (u64, u64, usize) {
    let rounds = ledger.rounds();
    let t_max = rounds.len() as u64;
    let drifts = ledger.drift_rounds();
    let clean: Vec<u64> = drifts
        .iter()
        .copied()
        .filter(|&tau| {
            tau > w
                && tau + w - 1 <= t_max
                && drifts
                    .iter()
                    .all(|&o| o == tau || o.abs_diff(tau) > 2 * w)
        })
        .collect();
    let msgs_at = |t: u64| rounds[t as usize - 1].msgs;
    let pre: u64 = clean
        .iter()
        .flat_map(|&tau| (tau - w..tau).map(msgs_at))
        .sum();
    let post: u64 = clean
        .iter()
        .flat_map(|&tau| (tau..tau + w).map(msgs_at))
        .sum();
    (pre, post, clean.len())
}

/// On the drift-desk preset, dynamic averaging at least doubles its message
/// rate in the 50 rounds after a drift versus the 50 before, while periodic
/// averaging's rate is flat by construction. Ten seeds, aggregated.
#[test]
fn criterion_08_drift_triggers_message_bursts() {
    let base = preset("drift-desk");
    let delta = base.protocol.delta.expect("preset ships a threshold");
    let seeds: Vec<u64> = (1..=10).collect();
    let mut single_run = None;
    let (mut dyn_pre, mut dyn_post, mut windows) = (0u64, 0u64, 0usize);
    let (mut per_pre, mut per_post) = (0u64, 0u64);
    for &s in &seeds {
        let started = Instant::now();
        let dynamic = run_with(&base, ProtocolSpec::dynamic(delta, 1), s);
        single_run.get_or_insert(started.elapsed());
        let periodic = run_with(&base, ProtocolSpec::periodic(1), s);
        assert_eq!(
            dynamic.drift_rounds(),
            periodic.drift_rounds(),
            "seed {s}: both protocols must see the same drift schedule"
        );
        let (p, q, n) = burst_windows(&dynamic, 50);
        dyn_pre += p;
        dyn_post += q;
        windows += n;
        let (p, q, _) = burst_windows(&periodic, 50);
        per_pre += p;
        per_post += q;
    }
    assert!(
        windows >= 10,
        "only {windows} isolated drifts across 10 seeds; the preset should yield far more"
    );
    let dyn_ratio = dyn_post as f64 / dyn_pre as f64;
    let per_ratio = per_post as f64 / per_pre as f64;
    println!(
        "windows={windows} dynamic post/pre={dyn_ratio:.2} periodic post/pre={per_ratio:.2}"
    );
    assert!(
        dyn_ratio >= 2.0,
        "dynamic averaging post/pre message ratio {dyn_ratio:.2} < 2.0 \
         (pre={dyn_pre} post={dyn_post} over {windows} windows)"
    );
    assert!(
        (per_ratio - 1.0).abs() <= 0.05,
        "periodic post/pre ratio {per_ratio:.3} strayed from 1.0"
    );
    let single = single_run.unwrap();
    assert!(
        single.as_secs_f64() < 60.0,
        "one preset run took {single:?}, budget is 60s"
    );
}

/// On the fedavg-cmp preset some shipped threshold matches subsampled
/// averaging (fraction 0.3, period 5) on cumulative loss within 10% while
/// spending fewer bytes, averaged over 5 seeds.
#[test]
fn criterion_09_beats_subsampling_at_matched_loss() {
    let base = preset("fedavg-cmp");
    assert_eq!(base.protocol.fraction, Some(0.3));
    assert_eq!(base.protocol.period, 5);
    let seeds = [1u64, 2, 3, 4, 5];
    let mut fed_loss = 0.0;
    let mut fed_bytes = 0.0;
    for &s in &seeds {
        let ledger = run_with(&base, base.protocol.clone(), s);
        fed_loss += ledger.final_loss();
        fed_bytes += ledger.final_bytes() as f64;
    }
    let mut winner = None;
    for delta in shipped_deltas(&base) {
        let mut loss = 0.0;
        let mut bytes = 0.0;
        for &s in &seeds {
            let ledger = run_with(&base, ProtocolSpec::dynamic(delta, 5), s);
            loss += ledger.final_loss();
            bytes += ledger.final_bytes() as f64;
        }
        if loss <= 1.10 * fed_loss && bytes < fed_bytes {
            winner = Some((delta, loss / fed_loss, bytes / fed_bytes));
            break;
        }
    }
    assert!(
        winner.is_some(),
        "no shipped threshold matched subsampling's loss with fewer bytes"
    );
    let (delta, loss_ratio, bytes_ratio) = winner.unwrap();
    println!(
        "delta={delta}: loss {:.2}% of subsampling at {:.1}% of its bytes",
        100.0 * loss_ratio,
        100.0 * bytes_ratio
    );
}

/// A weighted full sync equals the count-weighted mean of the participating
/// models, and with uniform counts it is bit-identical to the unweighted
/// sync.
#[test]
fn criterion_10_weighted_sync_is_count_weighted_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce55);
    for trial in 0..200u64 {
        let m = 2 + (trial % 7) as usize;
        let dim = 1 + (trial % 13) as usize;
        let models: Vec<ModelParams> = (0..m)
            .map(|_| {
                ModelParams::new((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
            })
            .collect();
        let reference = ModelParams::new(
            (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let counts: Vec<u64> = (0..m).map(|_| rng.random_range(1..20)).collect();
        let all: BTreeSet<usize> = (0..m).collect();

        // Non-uniform counts: the sync must land on the count-weighted mean.
        let mut cfg = ModelConfiguration::new(models.clone()).unwrap();
        let mut weighted = Coordinator::with_counts(
            ProtocolSpec::dynamic_weighted(0.5, 1),
            reference.clone(),
            7,
            &counts,
        )
        .unwrap();
        let outcome = weighted.resolve_violations(&mut cfg, &all).unwrap();
        assert!(outcome.is_full(m));
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        for j in 0..dim {
            let expected: f64 = models
                .iter()
                .zip(&counts)
                .map(|(f, &c)| c as f64 * f.weights()[j])
                .sum::<f64>()
                / total;
            let got = cfg.get(0).weights()[j];
            let scale = expected.abs().max(1.0);
            assert!(
                (got - expected).abs() <= 1e-12 * scale,
                "trial {trial}: coordinate {j} got {got}, expected {expected}"
            );
        }
        for i in 1..m {
            assert_eq!(cfg.get(i).weights(), cfg.get(0).weights());
        }

        // Uniform counts: bit-identical to the unweighted protocol.
        let uniform = vec![counts[0]; m];
        let mut cfg_w = ModelConfiguration::new(models.clone()).unwrap();
        let mut cfg_u = ModelConfiguration::new(models).unwrap();
        let mut coord_w = Coordinator::with_counts(
            ProtocolSpec::dynamic_weighted(0.5, 1),
            reference.clone(),
            7,
            &uniform,
        )
        .unwrap();
        let mut coord_u = Coordinator::new(ProtocolSpec::dynamic(0.5, 1), reference, 7).unwrap();
        coord_w.resolve_violations(&mut cfg_w, &all).unwrap();
        coord_u.resolve_violations(&mut cfg_u, &all).unwrap();
        for i in 0..m {
            let bits_w: Vec<u64> = cfg_w.get(i).weights().iter().map(|v| v.to_bits()).collect();
            let bits_u: Vec<u64> = cfg_u.get(i).weights().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_w, bits_u, "trial {trial}: learner {i} differs in bits");
        }
    }

    // Whole trajectories with uniform counts: bit for bit the loss sequence
    // of the unweighted protocol (bytes differ, counted payloads cost more).
    let mut base = preset("drift-desk");
    base.rounds = 400;
    let delta = base.protocol.delta.unwrap();
    let unweighted = run_with(&base, ProtocolSpec::dynamic(delta, 1), 1);
    let weighted = run_with(&base, ProtocolSpec::dynamic_weighted(delta, 1), 1);
    assert_eq!(unweighted.rounds().len(), weighted.rounds().len());
    for (u, w) in unweighted.rounds().iter().zip(weighted.rounds()) {
        assert_eq!(
            u.cum_loss.to_bits(),
            w.cum_loss.to_bits(),
            "round {}: uniform-count weighted run diverged from unweighted",
            u.t
        );
        assert_eq!(u.syncs_full, w.syncs_full);
        assert_eq!(u.syncs_partial, w.syncs_partial);
        assert_eq!(u.violations, w.violations);
    }
    assert!(
        weighted.final_bytes() > unweighted.final_bytes(),
        "counted payloads must cost more bytes"
    );
}

/// The same preset run twice exports the same CSV, byte for byte.
#[test]
fn criterion_11_exports_are_byte_identical() {
    let cfg = preset("drift-desk");
    let first = csv_string(&sim::run(&cfg).unwrap());
    let second = csv_string(&sim::run(&cfg).unwrap());
    assert!(!first.is_empty());
    assert_eq!(
        first.as_bytes(),
        second.as_bytes(),
        "repeat run produced different CSV bytes"
    );
}
