//! gamma against timeout for several cluster sizes with the bundled delay
//! histogram, as CSV on stdout.
//!
//!     cargo run --release --example timeout_sweep -- 4,10,50

use lft2::experiment::{csv_string, run_experiment, ExperimentConfig, SweepSpec};
use lft2::StopRule;

fn main() {
    let sizes: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "4,10".into())
        .split(',')
        .map(|s| s.trim().parse().expect("node count"))
        .collect();
    for (i, n) in sizes.into_iter().enumerate() {
        let mut cfg = ExperimentConfig::new(n);
        cfg.sweep = Some(SweepSpec::STANDARD);
        cfg.stop = StopRule::blocks(200).with_max_rounds(600);
        let rows = run_experiment(&cfg).unwrap();
        let csv = csv_string(&rows);
        // One header for the whole output.
        let body = if i == 0 {
            &csv[..]
        } else {
            csv.split_once('\n').unwrap().1
        };
        print!("{body}");
    }
}
