//! Enumerates every schedule of four nodes with one double voter over three
//! rounds and checks that no height is committed twice.
//!
//!     cargo run --release --example exhaustive_check [double_voter_id]

use lft2::explore::{explore, ExploreConfig};

fn main() {
    let id: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = ExploreConfig::small(id);
    let t = std::time::Instant::now();
    let r = explore(&cfg, false);
    println!(
        "{} states, {} transitions, {} terminal, max height {}, {:.1?}",
        r.states,
        r.transitions,
        r.terminal,
        r.max_height,
        t.elapsed()
    );
    if r.truncated {
        println!("state limit hit, search incomplete");
    }
    match r.violation {
        None => println!("no fork reachable"),
        Some(cx) => {
            println!("fork at height {}: {:?} vs {:?}", cx.height, cx.blocks.0, cx.blocks.1);
            std::process::exit(1);
        }
    }
}
