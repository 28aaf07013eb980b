//! Convergence timeout per crash count at n = 21: one sweep per failure
//! count, then the summary table.
//!
//!     cargo run --release --example failure_sweep

use lft2::experiment::{emit_table2, preset, run_experiment, Preset, CONVERGENCE_TOLERANCE};

fn main() {
    let Preset::Table2(cfgs) = preset("table2").unwrap() else {
        unreachable!()
    };
    let mut sweeps = Vec::new();
    for cfg in &cfgs {
        let rows = run_experiment(cfg).unwrap();
        let last = rows.last().unwrap();
        eprintln!(
            "{} crashed: gamma at {} s = {:.4}",
            cfg.failures(),
            last.timeout,
            last.gamma.unwrap_or(f64::NAN)
        );
        sweeps.push((cfg.failures(), rows));
    }
    print!("{}", emit_table2(21, &sweeps, CONVERGENCE_TOLERANCE).to_csv());
}
