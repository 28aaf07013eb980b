//! Four honest nodes, constant 100 ms links, ten blocks.
//!
//!     cargo run --example honest_round

use lft2::analysis::check_run;
use lft2::{run, DelayModel, Scenario, SimTime, StopRule};

fn main() {
    let s = Scenario::new(4, DelayModel::constant(0.1).unwrap())
        .with_timeout(SimTime::from_millis(1000))
        .with_stop(StopRule::blocks(10));
    let stats = run(&s).expect("scenario is valid");

    println!("round leader outcome       d      delta  new_block votes");
    for r in &stats.per_round {
        let d = r.d.map_or("-".to_string(), |d| format!("{d}"));
        println!(
            "{:5} {:6} {:12} {:6} {:6} {:9} {:5}",
            r.round,
            r.leader.to_string(),
            format!("{:?}", r.outcome),
            d,
            r.max_delay.to_string(),
            r.new_block_msgs,
            r.vote_msgs
        );
    }
    println!(
        "{} blocks in {} rounds, {} of simulated time, gamma = {:.3}",
        stats.committed,
        stats.rounds,
        stats.end_time,
        stats.gamma().unwrap_or(0.0)
    );
    assert!(check_run(&stats).ok);
}
