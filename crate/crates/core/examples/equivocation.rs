//! Byzantine nodes try to split the cluster: an equivocating leader sends
//! different blocks to the two halves, a double voter votes for both. Safety
//! is checked over many seeds.
//!
//!     cargo run --release --example equivocation [seeds]

use lft2::analysis::check_run;
use lft2::{run, Behavior, DelayModel, FaultSpec, Scenario, SimTime, StopRule};

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let delay = DelayModel::uniform(0.0, 1.0).unwrap();
    let mut rounds = 0;
    let mut committed = 0;
    let mut siblings = 0;
    for seed in 0..seeds {
        let s = Scenario::new(7, delay.clone())
            .with_faults([
                FaultSpec::new(1, Behavior::Equivocate),
                FaultSpec::new(4, Behavior::DoubleVote),
            ])
            .with_timeout(SimTime::from_millis(1200))
            .with_stop(StopRule::rounds(50))
            .with_seed(seed);
        let stats = run(&s).unwrap();
        let verdict = check_run(&stats);
        if !verdict.ok {
            for v in &verdict.violations {
                eprintln!("seed {seed}: {v}");
            }
            std::process::exit(1);
        }
        rounds += stats.rounds;
        committed += stats.committed;
        siblings += stats.conflicts.pairs().count();
    }
    println!(
        "{seeds} seeds, {rounds} rounds, {committed} commits, {siblings} conflicting tx pairs injected, no violations"
    );
}
