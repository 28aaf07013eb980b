//! One node never proposes when it leads. Its rounds time out and the other
//! three keep committing, so gamma settles at 3/4.
//!
//!     cargo run --example silent_leader

use lft2::analysis::{expected_gamma, gamma_report};
use lft2::{run, Behavior, DelayModel, FaultSpec, OutcomeKind, Scenario, SimTime, StopRule};

fn main() {
    let s = Scenario::new(4, DelayModel::uniform(0.05, 0.3).unwrap())
        .with_faults([FaultSpec::new(2, Behavior::SilentLeader)])
        .with_timeout(SimTime::from_millis(1500))
        .with_stop(StopRule::blocks(60))
        .with_seed(7);
    let stats = run(&s).unwrap();

    let timed_out: Vec<u64> = stats
        .per_round
        .iter()
        .filter(|r| r.outcome != OutcomeKind::Committed)
        .map(|r| r.round)
        .collect();
    println!("rounds without a commit: {timed_out:?}");
    let rep = gamma_report(&stats, 1, 0.02).unwrap();
    println!(
        "gamma = {:.4}, theory (n-1)/n = {:.4}, within 0.02: {}",
        rep.gamma_hat,
        expected_gamma(4, 1),
        rep.within_tolerance
    );
}
