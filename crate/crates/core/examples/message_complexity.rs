//! Deliveries per committed round: proposals grow linearly with n, votes
//! quadratically.
//!
//!     cargo run --release --example message_complexity

use lft2::analysis::message_complexity;
use lft2::engine::spread_crashes;
use lft2::{run, DelayModel, Scenario, SimTime, StopRule};

fn main() {
    println!("   n  crashed  new_block  votes   n-1  n(n-1)");
    for (n, crashed) in [(4, 0), (10, 0), (21, 0), (21, 6)] {
        let s = Scenario::new(n, DelayModel::uniform(0.01, 0.1).unwrap())
            .with_faults(spread_crashes(n, crashed))
            .with_timeout(SimTime::from_millis(1000))
            .with_stop(StopRule::blocks(30));
        let stats = run(&s).unwrap();
        let mc = message_complexity(&stats, n).unwrap();
        println!(
            "{n:4} {crashed:8} {:10.1} {:6.1} {:5} {:7}",
            mc.avg_new_block,
            mc.avg_vote,
            n - 1,
            n * (n - 1)
        );
    }
}
