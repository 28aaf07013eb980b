//! Checks every round whose leader is honest and whose measured d and delta
//! satisfy d + delta < ProposeTimeout and 2 delta < VoteTimeout: all of them
//! must commit.
//!
//!     cargo run --release --example liveness_conditions

use lft2::{run, Behavior, DelayModel, FaultSpec, OutcomeKind, Scenario, SimTime, StopRule};

fn main() {
    let mut held = 0;
    let mut missed = 0;
    for seed in 0..20 {
        let s = Scenario::new(7, DelayModel::uniform(0.05, 0.6).unwrap())
            .with_faults([
                FaultSpec::new(0, Behavior::Crash),
                FaultSpec::new(3, Behavior::SilentLeader),
            ])
            .with_timeout(SimTime::from_millis(1400))
            .with_stop(StopRule::rounds(40))
            .with_seed(seed);
        for r in run(&s).unwrap().per_round {
            if r.leader_honest && r.conditions_held {
                held += 1;
                if r.outcome != OutcomeKind::Committed {
                    missed += 1;
                    println!("seed {seed} round {}: {:?}", r.round, r.outcome);
                }
            }
        }
    }
    println!("{held} rounds met the conditions, {missed} of them failed to commit");
}
