//! Runs a config file with a user-supplied delay histogram. Without
//! arguments it writes a small histogram and config to a temp dir first.
//!
//!     cargo run --example custom_histogram [config]

use std::path::PathBuf;

use lft2::experiment::{csv_string, parse_config_file, run_experiment};

fn main() {
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let dir = std::env::temp_dir().join("lft2-custom-histogram");
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(
                dir.join("hist.txt"),
                "# delay_s,probability\n0.05,0.5\n0.2,0.3\n0.9,0.2\n",
            )
            .unwrap();
            std::fs::write(
                dir.join("exp.cfg"),
                "nodes = 7\ndelay_file = hist.txt\nsweep = 0.5:2:0.5\nstop_blocks = 40\nrepetitions = 2\n",
            )
            .unwrap();
            dir.join("exp.cfg")
        }
    };
    let cfg = parse_config_file(&path).unwrap_or_else(|e| {
        eprintln!("{}: {e}", path.display());
        std::process::exit(1);
    });
    eprint!("{cfg}");
    print!("{}", csv_string(&run_experiment(&cfg).unwrap()));
}
