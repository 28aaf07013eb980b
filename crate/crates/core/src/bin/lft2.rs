use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lft2::experiment::{
    emit_table2, parse_config_file, preset, run_experiment, write_csv, ConfigError, ExperimentConfig, Preset, RunRow,
    CONVERGENCE_TOLERANCE, PRESETS,
};

/// Run LFT2 simulation sweeps and write CSV.
#[derive(Parser, Debug)]
#[command(name = "lft2", version)]
struct Args {
    /// Experiment config file (`key = value` lines).
    #[arg(long, value_name = "PATH", conflicts_with = "preset", required_unless_present_any = ["preset", "list_presets"])]
    config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output CSV; overrides `out` in the config. Defaults to stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 3 if any run commits conflicting blocks.
    #[arg(long)]
    check_safety: bool,
    /// Print preset names and exit.
    #[arg(long)]
    list_presets: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing output: {0}")]
    Io(#[from] io::Error),
}

fn open_out(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_one(cfg: &ExperimentConfig) -> Result<Vec<RunRow>, ConfigError> {
    log::info!("resolved config:\n{cfg}");
    run_experiment(cfg)
}

/// Counts runs that broke safety, logging each violation.
fn unsafe_runs(rows: &[RunRow]) -> usize {
    let mut bad = 0;
    for r in rows {
        if let Some(v) = r.safety.as_ref().filter(|v| !v.ok) {
            bad += 1;
            for x in &v.violations {
                log::error!("timeout {} s, seed {}: {x}", r.timeout, r.seed);
            }
        }
    }
    bad
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.list_presets {
        for p in PRESETS {
            println!("{p}");
        }
        return ExitCode::SUCCESS;
    }
    match real_main(&args) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(bad) => {
            log::error!("{bad} run(s) violated safety");
            ExitCode::from(3)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

/// Returns the number of unsafe runs when `--check-safety` is set.
fn real_main(args: &Args) -> Result<usize, CliError> {
    let plan = match (&args.config, &args.preset) {
        (Some(path), _) => Preset::Sweep(parse_config_file(path)?),
        (None, Some(name)) => preset(name)?,
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    let adjust = |mut cfg: ExperimentConfig| {
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if args.out.is_some() {
            cfg.out = args.out.clone();
        }
        cfg
    };
    let mut bad = 0;
    match plan {
        Preset::Sweep(cfg) => {
            let cfg = adjust(cfg);
            let rows = run_one(&cfg)?;
            bad += unsafe_runs(&rows);
            let mut w = open_out(cfg.out.as_ref())?;
            write_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Preset::Table2(cfgs) => {
            let mut sweeps = Vec::new();
            let mut n = 0;
            for cfg in cfgs {
                let cfg = adjust(cfg);
                n = cfg.nodes;
                let rows = run_one(&cfg)?;
                bad += unsafe_runs(&rows);
                sweeps.push((cfg.failures(), rows));
            }
            let table = emit_table2(n, &sweeps, CONVERGENCE_TOLERANCE);
            let mut w = open_out(args.out.as_ref())?;
            w.write_all(table.to_csv().as_bytes())?;
            w.flush()?;
        }
    }
    Ok(if args.check_safety { bad } else { 0 })
}
