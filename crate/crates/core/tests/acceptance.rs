//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! line fails. Run with `cargo test --release --test acceptance`.

use std::collections::BTreeMap;
use std::time::Instant;

use lft2::analysis::{check_run, expected_gamma, gamma_lower_bound};
use lft2::engine::spread_crashes;
use lft2::experiment::{
    csv_string, emit_table2, parse_config, preset, run_experiment, Preset, RunRow, CONVERGENCE_TOLERANCE,
};
use lft2::explore::{explore, DelayBranching, ExploreConfig};
use lft2::{run, Behavior, DelayModel, FaultSpec, OutcomeKind, QuorumParams, Scenario, SimTime, StopRule};

const SAFETY_SEEDS: u64 = 1000;
const SAFETY_ROUNDS: u64 = 50;
const LIVENESS_MIN_ROUNDS: usize = 500;
const GAMMA_TOL: f64 = 0.02;
const SHAPE_MONOTONE_EPS: f64 = 0.05;
const SHAPE_NEAR_ZERO: f64 = 0.05;
const SHAPE_CONVERGED: f64 = 0.99;
const SHAPE_AGREEMENT: f64 = 0.05;
const LOWER_BOUND_TOL: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Byzantine placements for a cluster of `n`: `f` nodes alternating between
/// equivocation and double voting, shifted by the seed.
fn byzantine(n: usize, seed: u64) -> Vec<FaultSpec> {
    let f = QuorumParams::new(n).unwrap().f;
    (0..f)
        .map(|i| {
            let node = ((seed as usize + i * n / f) % n) as u32;
            let b = if (seed as usize + i).is_multiple_of(2) {
                Behavior::Equivocate
            } else {
                Behavior::DoubleVote
            };
            FaultSpec::new(node, b)
        })
        .collect()
}

fn c1_safety() -> Outcome {
    let delay = DelayModel::uniform(0.0, 1.0).unwrap();
    let mut runs = 0;
    let mut commits = 0;
    let mut sibling_pairs = 0;
    let mut failures = Vec::new();
    for n in [4usize, 7, 10] {
        for seed in 0..SAFETY_SEEDS {
            // Timeouts between 0.4 and 2.4 s so some runs are badly out of sync.
            let t = SimTime::from_millis(400 + (seed * 37) % 2000);
            let s = Scenario::new(n, delay.clone())
                .with_faults(byzantine(n, seed))
                .with_timeout(t)
                .with_stop(StopRule::rounds(SAFETY_ROUNDS))
                .with_seed(seed);
            match run(&s) {
                Ok(stats) => {
                    runs += 1;
                    commits += stats.committed;
                    sibling_pairs += stats.conflicts.pairs().count();
                    let v = check_run(&stats);
                    if !v.ok || stats.diverged_commits > 0 {
                        failures.push(format!("n={n} seed={seed}: {:?}", v.violations.first()));
                    }
                }
                Err(e) => failures.push(format!("n={n} seed={seed}: {e}")),
            }
        }
    }
    outcome(
        failures.is_empty() && commits > 0 && sibling_pairs > 0,
        format!(
            "{runs} runs of {SAFETY_ROUNDS} rounds over n in {{4,7,10}}, {commits} commits, {sibling_pairs} conflicting pairs injected, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn c2_exhaustive() -> Outcome {
    let mut cfg = ExploreConfig::small(1);
    cfg.branching = DelayBranching::ProposalsPerCopy;
    let r = explore(&cfg, false);

    // The same search must find a fork once the quorum is too small.
    let mut control = ExploreConfig::small(1);
    control.faults = vec![FaultSpec::new(0, Behavior::Equivocate)];
    control.branching = DelayBranching::PerMessage;
    control.quorum = QuorumParams {
        n: 4,
        f: 1,
        threshold: 2,
    };
    let c = explore(&control, false);

    outcome(
        !r.truncated && r.violation.is_none() && r.max_height >= 2 && c.violation.is_some(),
        format!(
            "n=4, double voter n1, delays {{1,4}}, PT=VT=3, 3 rounds: {} states, {} terminal, max height {}, fork found: {}; control with quorum 2 found fork: {}",
            r.states,
            r.terminal,
            r.max_height,
            r.violation.is_some(),
            c.violation.is_some()
        ),
    )
}

fn c3_liveness() -> Outcome {
    let configs: [(usize, Vec<FaultSpec>); 4] = [
        (4, vec![FaultSpec::new(1, Behavior::SilentLeader)]),
        (
            7,
            vec![
                FaultSpec::new(0, Behavior::Crash),
                FaultSpec::new(4, Behavior::DoubleVote),
            ],
        ),
        (
            10,
            vec![
                FaultSpec::new(2, Behavior::Equivocate),
                FaultSpec::new(5, Behavior::Crash),
                FaultSpec::new(8, Behavior::SilentLeader),
            ],
        ),
        (
            13,
            vec![
                FaultSpec::new(3, Behavior::DoubleVote),
                FaultSpec::new(9, Behavior::Equivocate),
            ],
        ),
    ];
    let mut qualifying = 0usize;
    let mut total = 0usize;
    let mut misses = Vec::new();
    for (n, faults) in &configs {
        for seed in 0..10u64 {
            let t = SimTime::from_millis(800 + 100 * seed);
            let s = Scenario::new(*n, DelayModel::uniform(0.02, 0.4).unwrap())
                .with_faults(faults.iter().copied())
                .with_timeout(t)
                .with_stop(StopRule::rounds(60))
                .with_seed(seed);
            let stats = run(&s).unwrap();
            total += stats.per_round.len();
            for r in &stats.per_round {
                if r.leader_honest && r.conditions_held {
                    qualifying += 1;
                    if r.outcome != OutcomeKind::Committed {
                        misses.push(format!("n={n} seed={seed} round={} {:?}", r.round, r.outcome));
                    }
                }
            }
        }
    }
    outcome(
        qualifying >= LIVENESS_MIN_ROUNDS && misses.is_empty(),
        format!(
            "{qualifying} of {total} rounds had an honest leader and met d+delta<PT, 2delta<VT; {} did not commit{}",
            misses.len(),
            misses.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

/// Sweeps for n = 21 with 0, 2..6 crashes, shared by criteria 4 and 6.
fn failure_sweeps() -> Vec<(usize, Vec<RunRow>)> {
    let Preset::Table2(cfgs) = preset("table2").unwrap() else {
        unreachable!("table2 is a multi-sweep preset")
    };
    cfgs.iter()
        .map(|c| (c.failures(), run_experiment(c).unwrap()))
        .collect()
}

fn c4_gamma(sweeps: &[(usize, Vec<RunRow>)]) -> Outcome {
    let mut pass = sweeps.len() == 6;
    let mut parts = Vec::new();
    for (nu, rows) in sweeps {
        let at4 = rows.iter().find(|r| r.timeout == SimTime::from_millis(4000)).unwrap();
        let g = at4.gamma.unwrap_or(f64::NAN);
        let want = expected_gamma(21, *nu);
        let ok = (g - want).abs() <= GAMMA_TOL && at4.committed >= 200;
        pass &= ok;
        parts.push(format!("nu={nu}: {g:.4} vs {want:.4}"));
    }
    outcome(
        pass,
        format!("n=21, timeout 4 s, 200 blocks, tol {GAMMA_TOL}: {}", parts.join(", ")),
    )
}

fn c5_shape() -> Outcome {
    let mut curves: BTreeMap<usize, Vec<(SimTime, f64)>> = BTreeMap::new();
    for name in ["fig2_n4", "fig2_n10", "fig2_n50", "fig2_n100"] {
        let Preset::Sweep(cfg) = preset(name).unwrap() else {
            unreachable!()
        };
        let rows = run_experiment(&cfg).unwrap();
        curves.insert(
            cfg.nodes,
            rows.iter().map(|r| (r.timeout, r.gamma.unwrap_or(f64::NAN))).collect(),
        );
    }
    let mut problems = Vec::new();
    for (n, c) in &curves {
        let mut peak = f64::NEG_INFINITY;
        for &(t, g) in c {
            if g.is_nan() {
                problems.push(format!("n={n} t={t} failed"));
            }
            if g < peak - SHAPE_MONOTONE_EPS {
                problems.push(format!("n={n} drops to {g:.3} at {t}"));
            }
            peak = peak.max(g);
            if t <= SimTime::from_millis(200) && g > SHAPE_NEAR_ZERO {
                problems.push(format!("n={n} gamma {g:.3} at {t}"));
            }
            if t >= SimTime::from_millis(2000) && g < SHAPE_CONVERGED {
                problems.push(format!("n={n} gamma {g:.3} at {t}"));
            }
        }
    }
    let points = curves.values().next().map_or(0, Vec::len);
    let mut worst = (0.0f64, SimTime::ZERO);
    for i in 0..points {
        let gs: Vec<f64> = curves.values().map(|c| c[i].1).collect();
        let spread =
            gs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - gs.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > worst.0 {
            worst = (spread, curves.values().next().unwrap()[i].0);
        }
    }
    if worst.0 > SHAPE_AGREEMENT {
        problems.push(format!("curves differ by {:.3} at {}", worst.0, worst.1));
    }
    outcome(
        problems.is_empty() && points == 41,
        format!(
            "n in {{4,10,50,100}}, {points} points each; largest spread between sizes {:.3} at {} s{}",
            worst.0,
            worst.1,
            problems
                .first()
                .map(|p| format!("; first problem: {p}"))
                .unwrap_or_default()
        ),
    )
}

fn c6_table2(sweeps: &[(usize, Vec<RunRow>)]) -> Outcome {
    let t = emit_table2(21, sweeps, CONVERGENCE_TOLERANCE);
    let cells: Vec<String> = t
        .rows
        .iter()
        .map(|r| match r.convergence {
            Some(c) => format!("{}:{c}", r.failures),
            None => format!("{}:NA", r.failures),
        })
        .collect();
    let complete = t.rows.len() == 6 && t.rows.iter().all(|r| r.convergence.is_some());
    outcome(
        t.monotone && complete,
        format!(
            "convergence timeouts (failures:seconds) {}; monotone {}",
            cells.join(" "),
            t.monotone
        ),
    )
}

fn c7_lower_bound() -> Outcome {
    let bound = gamma_lower_bound(21).unwrap();
    let fault_sets: [Vec<FaultSpec>; 4] = [
        spread_crashes(21, 6),
        vec![
            FaultSpec::new(0, Behavior::Crash),
            FaultSpec::new(4, Behavior::Crash),
            FaultSpec::new(8, Behavior::SilentLeader),
            FaultSpec::new(11, Behavior::SilentLeader),
            FaultSpec::new(15, Behavior::Equivocate),
            FaultSpec::new(18, Behavior::DoubleVote),
        ],
        vec![
            FaultSpec::new(2, Behavior::Equivocate),
            FaultSpec::new(9, Behavior::Equivocate),
            FaultSpec::new(13, Behavior::SilentLeader),
        ],
        (0..6)
            .map(|i| FaultSpec::new(i * 3 + 1, Behavior::SilentLeader))
            .collect(),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut held = 0;
    let mut honest_rounds = 0;
    for (i, faults) in fault_sets.iter().enumerate() {
        let s = Scenario::new(21, DelayModel::uniform(0.05, 0.5).unwrap())
            .with_faults(faults.iter().copied())
            .with_timeout(SimTime::from_millis(2000))
            .with_stop(StopRule::blocks(200))
            .with_seed(100 + i as u64);
        let stats = run(&s).unwrap();
        let g = stats.gamma().unwrap_or(0.0);
        for r in stats.per_round.iter().filter(|r| r.leader_honest) {
            honest_rounds += 1;
            held += r.conditions_held as usize;
        }
        pass &= g >= bound - LOWER_BOUND_TOL && stats.committed >= 200;
        parts.push(format!("{} faulty: {g:.4}", faults.len()));
    }
    outcome(
        pass,
        format!(
            "n=21, bound 15/21 = {bound:.4} minus {LOWER_BOUND_TOL}: {}; conditions held in {held} of {honest_rounds} honest-leader rounds",
            parts.join(", ")
        ),
    )
}

fn c8_messages() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [4usize, 10, 21] {
        let s = Scenario::new(n, DelayModel::constant(0.1).unwrap())
            .with_timeout(SimTime::from_millis(1000))
            .with_stop(StopRule::blocks(30));
        let stats = run(&s).unwrap();
        let committed: Vec<_> = stats
            .per_round
            .iter()
            .filter(|r| r.outcome == OutcomeKind::Committed)
            .collect();
        let exact = !committed.is_empty()
            && committed
                .iter()
                .all(|r| r.new_block_msgs == (n - 1) as u64 && r.vote_msgs == (n * (n - 1)) as u64);
        pass &= exact;
        let nb: Vec<u64> = committed.iter().map(|r| r.new_block_msgs).collect();
        let v: Vec<u64> = committed.iter().map(|r| r.vote_msgs).collect();
        parts.push(format!(
            "n={n}: NEW-BLOCK {}..{} (want {}), VOTE {}..{} (want {})",
            nb.iter().min().unwrap_or(&0),
            nb.iter().max().unwrap_or(&0),
            n - 1,
            v.iter().min().unwrap_or(&0),
            v.iter().max().unwrap_or(&0),
            n * (n - 1)
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c9_determinism() -> Outcome {
    let text = "\
nodes = 7
faults = 1:equivocate, 5:double_vote
delay_uniform = 0.05:0.9
sweep = 0.5:2:0.5
stop_blocks = 40
max_rounds = 120
repetitions = 2
seed = 42
";
    let cfg = parse_config(text, None).unwrap();
    let a = csv_string(&run_experiment(&cfg).unwrap());
    let b = csv_string(&run_experiment(&cfg).unwrap());
    let Preset::Sweep(p) = preset("fig2_n4").unwrap() else {
        unreachable!()
    };
    let c = csv_string(&run_experiment(&p).unwrap());
    let d = csv_string(&run_experiment(&p).unwrap());
    let mut other = cfg.clone();
    other.seed = 43;
    let e = csv_string(&run_experiment(&other).unwrap());
    outcome(
        a == b && c == d && a != e,
        format!(
            "two configs run twice: {} and {} bytes identical: {}; changing the seed changes output: {}",
            a.len(),
            c.len(),
            a == b && c == d,
            a != e
        ),
    )
}

fn main() {
    let mut all = true;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        all &= o.pass;
        println!(
            "{} criterion {id} {name}: {} [{:.1?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
    };
    report(1, "safety", &mut c1_safety);
    report(2, "exhaustive-oracle", &mut c2_exhaustive);
    report(3, "liveness", &mut c3_liveness);
    let sweeps = failure_sweeps();
    report(4, "gamma-vs-failures", &mut || c4_gamma(&sweeps));
    report(5, "timeout-curve-shape", &mut c5_shape);
    report(6, "convergence-trend", &mut || c6_table2(&sweeps));
    report(7, "lower-bound", &mut c7_lower_bound);
    report(8, "message-complexity", &mut c8_messages);
    report(9, "determinism", &mut c9_determinism);
    if !all {
        std::process::exit(1);
    }
}
