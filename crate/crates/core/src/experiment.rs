//! Experiment configs, presets and CSV emission.
//!
//! A config file is a list of `key = value` lines. Blank lines and `#`
//! comments are ignored. Recognized keys:
//!
//! ```text
//! nodes             = 21                  (required)
//! faults            = 0:crash, 7:double_vote
//! propose_timeout_s = 2.0
//! vote_timeout_s    = 2.0
//! delay_file        = path/to/hist.txt    (or `bundled`)
//! delay_uniform     = 0.1:0.5
//! delay_constant    = 0.2
//! seed              = 0
//! stop_blocks       = 200                 (`none` disables the bound)
//! max_rounds        = 1000                (`none` disables the bound)
//! sweep             = 0:4:0.1
//! repetitions       = 1
//! out               = results.csv
//! ```
//!
//! With a `sweep`, both timeouts are set to each sweep point in turn and the
//! configured timeouts are ignored. Repetition `k` runs with `seed + k`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::adversary::{Behavior, FaultSpec};
use crate::analysis::{check_run, expected_gamma, find_convergence_timeout, SafetyVerdict};
use crate::engine::{run, spread_crashes, sweep_points, Scenario, SimError, StopRule};
use crate::network::{load_histogram, load_histogram_file, parse_histogram, DelayModel, NetError};
use crate::time::SimTime;

/// The delay histogram shipped with the crate.
pub const BUNDLED_HISTOGRAM: &str = include_str!("../data/delay_histogram.txt");

/// sha256 of [`BUNDLED_HISTOGRAM`]. Presets refuse to run if it changes.
pub const BUNDLED_HISTOGRAM_SHA256: &str = "f28d129ab5c7811bfa72aa1464f3205e5bd9ef5bcc8836671f49876f8b94fad3";

pub const CSV_HEADER: &str = "timeout_s,n,failures,gamma,committed,rounds,seed";

/// Default tolerance when locating the convergence timeout.
pub const CONVERGENCE_TOLERANCE: f64 = 0.02;

pub const PRESETS: [&str; 12] = [
    "fig2_n4",
    "fig2_n10",
    "fig2_n50",
    "fig2_n100",
    "fig3_f0",
    "fig3_f2",
    "fig3_f3",
    "fig3_f4",
    "fig3_f5",
    "fig3_f6",
    "table2",
    "smoke",
];

const TABLE2_FAILURES: [usize; 6] = [0, 2, 3, 4, 5, 6];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue {
        line: usize,
        key: &'static str,
        reason: String,
    },
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("line {line}: fault on node {node} but nodes = {n}")]
    FaultOutOfRange { line: usize, node: u32, n: usize },
    #[error("line {line}: only one of delay_file, delay_uniform, delay_constant may be set")]
    ConflictingDelay { line: usize },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("bundled histogram digest is {found}, expected {BUNDLED_HISTOGRAM_SHA256}")]
    DigestMismatch { found: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DelaySpec {
    Bundled,
    File(PathBuf),
    Uniform(f64, f64),
    Constant(f64),
}

impl DelaySpec {
    pub fn load(&self) -> Result<DelayModel, ConfigError> {
        match self {
            DelaySpec::Bundled => bundled_histogram(),
            DelaySpec::File(p) => Ok(load_histogram_file(p)?),
            DelaySpec::Uniform(lo, hi) => Ok(DelayModel::uniform(*lo, *hi)?),
            DelaySpec::Constant(d) => Ok(DelayModel::constant(*d)?),
        }
    }
}

pub fn bundled_histogram_digest() -> String {
    hex::encode(Sha256::digest(BUNDLED_HISTOGRAM.as_bytes()))
}

/// Loads the bundled histogram after checking its digest.
pub fn bundled_histogram() -> Result<DelayModel, ConfigError> {
    let found = bundled_histogram_digest();
    if found != BUNDLED_HISTOGRAM_SHA256 {
        return Err(ConfigError::DigestMismatch { found });
    }
    Ok(load_histogram(&parse_histogram(BUNDLED_HISTOGRAM)?)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSpec {
    pub lo: SimTime,
    pub hi: SimTime,
    pub step: SimTime,
}

impl SweepSpec {
    /// The 0 to 4 s grid in 0.1 s steps used by every preset.
    pub const STANDARD: SweepSpec = SweepSpec {
        lo: SimTime::ZERO,
        hi: SimTime::from_millis(4000),
        step: SimTime::from_millis(100),
    };

    pub fn points(&self) -> Result<Vec<SimTime>, SimError> {
        sweep_points(self.lo, self.hi, self.step)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub nodes: usize,
    pub faults: Vec<FaultSpec>,
    pub propose_timeout: SimTime,
    pub vote_timeout: SimTime,
    pub delay: DelaySpec,
    pub seed: u64,
    pub stop: StopRule,
    pub sweep: Option<SweepSpec>,
    pub repetitions: u32,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for everything except the node count.
    pub fn new(nodes: usize) -> Self {
        ExperimentConfig {
            nodes,
            faults: Vec::new(),
            propose_timeout: SimTime::from_millis(2000),
            vote_timeout: SimTime::from_millis(2000),
            delay: DelaySpec::Bundled,
            seed: 0,
            stop: StopRule::blocks(200).with_max_rounds(1000),
            sweep: None,
            repetitions: 1,
            out: None,
        }
    }

    pub fn failures(&self) -> usize {
        self.faults.len()
    }

    /// The scenario for one run, before the sweep point and seed are applied.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let s = Scenario::new(self.nodes, self.delay.load()?)
            .with_faults(self.faults.iter().copied())
            .with_timeouts(self.propose_timeout, self.vote_timeout)
            .with_seed(self.seed)
            .with_stop(self.stop);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario().map(|_| ())?;
        if let Some(sw) = &self.sweep {
            sw.points()?;
        }
        if self.repetitions == 0 {
            return Err(ConfigError::Invalid("repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Prints the config in the file format, defaults included, so a logged
/// config can be fed back in.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes = {}", self.nodes)?;
        let faults: Vec<String> = self.faults.iter().map(|x| x.to_string()).collect();
        writeln!(f, "faults = {}", faults.join(", "))?;
        writeln!(f, "propose_timeout_s = {}", self.propose_timeout)?;
        writeln!(f, "vote_timeout_s = {}", self.vote_timeout)?;
        match &self.delay {
            DelaySpec::Bundled => writeln!(f, "delay_file = bundled")?,
            DelaySpec::File(p) => writeln!(f, "delay_file = {}", p.display())?,
            DelaySpec::Uniform(lo, hi) => writeln!(f, "delay_uniform = {lo}:{hi}")?,
            DelaySpec::Constant(d) => writeln!(f, "delay_constant = {d}")?,
        }
        writeln!(f, "seed = {}", self.seed)?;
        let bound = |b: Option<u64>| b.map_or("none".to_string(), |x| x.to_string());
        writeln!(f, "stop_blocks = {}", bound(self.stop.min_committed_blocks))?;
        writeln!(f, "max_rounds = {}", bound(self.stop.max_rounds))?;
        if let Some(sw) = &self.sweep {
            writeln!(f, "sweep = {}:{}:{}", sw.lo, sw.hi, sw.step)?;
        }
        writeln!(f, "repetitions = {}", self.repetitions)?;
        if let Some(out) = &self.out {
            writeln!(f, "out = {}", out.display())?;
        }
        Ok(())
    }
}

fn secs(line: usize, key: &'static str, v: &str) -> Result<SimTime, ConfigError> {
    let x: f64 = v.parse().map_err(|_| ConfigError::BadValue {
        line,
        key,
        reason: format!("{v:?} is not a number"),
    })?;
    SimTime::from_secs_f64(x).ok_or_else(|| ConfigError::BadValue {
        line,
        key,
        reason: format!("{v} must be a finite, non-negative number of seconds"),
    })
}

fn int<T: std::str::FromStr>(line: usize, key: &'static str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        line,
        key,
        reason: format!("{v:?} is not a non-negative integer"),
    })
}

/// A bound that may be switched off with `none`.
fn optional(line: usize, key: &'static str, v: &str) -> Result<Option<u64>, ConfigError> {
    if v == "none" {
        Ok(None)
    } else {
        int(line, key, v).map(Some)
    }
}

fn float(line: usize, key: &'static str, v: &str) -> Result<f64, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        line,
        key,
        reason: format!("{v:?} is not a number"),
    })
}

fn parse_faults(line: usize, v: &str) -> Result<Vec<FaultSpec>, ConfigError> {
    let bad = |reason: String| ConfigError::BadValue {
        line,
        key: "faults",
        reason,
    };
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (id, b) = item
                .split_once(':')
                .ok_or_else(|| bad(format!("{item:?} is not `id:behavior`")))?;
            let id: u32 = id.trim().parse().map_err(|_| bad(format!("bad node id {id:?}")))?;
            let b: Behavior = b.trim().parse().map_err(bad)?;
            Ok(FaultSpec::new(id, b))
        })
        .collect()
}

const KEYS: [&str; 13] = [
    "nodes",
    "faults",
    "propose_timeout_s",
    "vote_timeout_s",
    "delay_file",
    "delay_uniform",
    "delay_constant",
    "seed",
    "stop_blocks",
    "max_rounds",
    "sweep",
    "repetitions",
    "out",
];

/// Parses config text. Relative `delay_file` and `out` paths are resolved
/// against `base_dir` when given.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let mut seen: Vec<(&'static str, usize)> = Vec::new();
    let mut entries: Vec<(&'static str, usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let k = k.trim();
        let key = KEYS
            .into_iter()
            .find(|x| *x == k)
            .ok_or_else(|| ConfigError::UnknownKey {
                line,
                key: k.to_string(),
            })?;
        if seen.iter().any(|(s, _)| *s == key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: k.to_string(),
            });
        }
        seen.push((key, line));
        entries.push((key, line, v.trim().to_string()));
    }

    let nodes_line = seen
        .iter()
        .find(|(k, _)| *k == "nodes")
        .map(|(_, l)| *l)
        .ok_or(ConfigError::MissingKey("nodes"))?;
    let nodes_value = &entries.iter().find(|e| e.0 == "nodes").unwrap().2;
    let mut cfg = ExperimentConfig::new(int(nodes_line, "nodes", nodes_value)?);
    let resolve = |p: &str| match base_dir {
        Some(dir) if Path::new(p).is_relative() => dir.join(p),
        _ => PathBuf::from(p),
    };

    let mut delay_line = None;
    let mut stop_blocks = cfg.stop.min_committed_blocks;
    let mut max_rounds = cfg.stop.max_rounds;
    for (key, line, v) in &entries {
        let (line, v) = (*line, v.as_str());
        if key.starts_with("delay_") {
            if delay_line.is_some() {
                return Err(ConfigError::ConflictingDelay { line });
            }
            delay_line = Some(line);
        }
        match *key {
            "nodes" => {}
            "faults" => {
                cfg.faults = parse_faults(line, v)?;
                if let Some(f) = cfg.faults.iter().find(|f| f.node.index() >= cfg.nodes) {
                    return Err(ConfigError::FaultOutOfRange {
                        line,
                        node: f.node.0,
                        n: cfg.nodes,
                    });
                }
            }
            "propose_timeout_s" => cfg.propose_timeout = secs(line, key, v)?,
            "vote_timeout_s" => cfg.vote_timeout = secs(line, key, v)?,
            "delay_file" if v == "bundled" => cfg.delay = DelaySpec::Bundled,
            "delay_file" => cfg.delay = DelaySpec::File(resolve(v)),
            "delay_uniform" => {
                let (lo, hi) = v.split_once(':').ok_or_else(|| ConfigError::BadValue {
                    line,
                    key,
                    reason: "expected `lo:hi`".into(),
                })?;
                cfg.delay = DelaySpec::Uniform(float(line, key, lo.trim())?, float(line, key, hi.trim())?);
            }
            "delay_constant" => cfg.delay = DelaySpec::Constant(float(line, key, v)?),
            "seed" => cfg.seed = int(line, key, v)?,
            "stop_blocks" => stop_blocks = optional(line, key, v)?,
            "max_rounds" => max_rounds = optional(line, key, v)?,
            "sweep" => {
                let parts: Vec<&str> = v.split(':').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(ConfigError::BadValue {
                        line,
                        key,
                        reason: "expected `lo:hi:step`".into(),
                    });
                }
                let sw = SweepSpec {
                    lo: secs(line, key, parts[0])?,
                    hi: secs(line, key, parts[1])?,
                    step: secs(line, key, parts[2])?,
                };
                sw.points().map_err(|e| ConfigError::BadValue {
                    line,
                    key,
                    reason: e.to_string(),
                })?;
                cfg.sweep = Some(sw);
            }
            "repetitions" => {
                cfg.repetitions = int(line, key, v)?;
                if cfg.repetitions == 0 {
                    return Err(ConfigError::BadValue {
                        line,
                        key,
                        reason: "must be at least 1".into(),
                    });
                }
            }
            "out" => cfg.out = Some(resolve(v)),
            _ => unreachable!("key list and match arms disagree"),
        }
    }
    cfg.stop = StopRule {
        min_committed_blocks: stop_blocks,
        max_rounds,
    };
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, path.parent())
}

/// What a preset name expands to.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    Sweep(ExperimentConfig),
    /// One sweep per failure count at n = 21, summarized by [`emit_table2`].
    Table2(Vec<ExperimentConfig>),
}

fn figure_sweep(n: usize, failures: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(n);
    cfg.faults = spread_crashes(n, failures);
    cfg.sweep = Some(SweepSpec::STANDARD);
    // Short timeouts never commit; cap those runs at three times the
    // block target so the sweep stays bounded.
    cfg.stop = StopRule::blocks(200).with_max_rounds(600);
    cfg
}

pub fn preset(name: &str) -> Result<Preset, ConfigError> {
    let cfg = match name {
        "fig2_n4" => figure_sweep(4, 0),
        "fig2_n10" => figure_sweep(10, 0),
        "fig2_n50" => figure_sweep(50, 0),
        "fig2_n100" => figure_sweep(100, 0),
        "fig3_f0" => figure_sweep(21, 0),
        "fig3_f2" => figure_sweep(21, 2),
        "fig3_f3" => figure_sweep(21, 3),
        "fig3_f4" => figure_sweep(21, 4),
        "fig3_f5" => figure_sweep(21, 5),
        "fig3_f6" => figure_sweep(21, 6),
        "table2" => {
            return Ok(Preset::Table2(
                TABLE2_FAILURES.iter().map(|&f| figure_sweep(21, f)).collect(),
            ))
        }
        "smoke" => {
            let mut cfg = ExperimentConfig::new(4);
            cfg.sweep = Some(SweepSpec {
                lo: SimTime::ZERO,
                hi: SimTime::from_millis(1000),
                step: SimTime::from_millis(500),
            });
            cfg.stop = StopRule::blocks(20).with_max_rounds(60);
            cfg
        }
        _ => return Err(ConfigError::UnknownPreset(name.to_string())),
    };
    Ok(Preset::Sweep(cfg))
}

/// One CSV row plus what the CSV does not show.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub timeout: SimTime,
    pub n: usize,
    pub failures: usize,
    /// `None` when the run failed or ran no rounds.
    pub gamma: Option<f64>,
    pub committed: u64,
    pub rounds: u64,
    pub seed: u64,
    pub safety: Option<SafetyVerdict>,
    pub error: Option<String>,
}

impl RunRow {
    pub fn csv_line(&self) -> String {
        let gamma = match self.gamma {
            Some(g) => format!("{g:.6}"),
            None => "nan".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.timeout, self.n, self.failures, gamma, self.committed, self.rounds, self.seed
        )
    }
}

/// Runs every sweep point and repetition. Simulation errors land in their
/// row and the sweep continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRow>, ConfigError> {
    cfg.validate()?;
    let base = cfg.scenario()?;
    let points = match &cfg.sweep {
        Some(sw) => sw.points()?,
        None => vec![cfg.propose_timeout],
    };
    let mut rows = Vec::with_capacity(points.len() * cfg.repetitions as usize);
    for &t in &points {
        for k in 0..cfg.repetitions {
            let seed = cfg.seed.wrapping_add(k as u64);
            let mut s = base.clone().with_seed(seed);
            if cfg.sweep.is_some() {
                s = s.with_timeout(t);
            }
            let mut row = RunRow {
                timeout: t,
                n: cfg.nodes,
                failures: cfg.failures(),
                gamma: None,
                committed: 0,
                rounds: 0,
                seed,
                safety: None,
                error: None,
            };
            match run(&s) {
                Ok(stats) => {
                    row.gamma = stats.gamma();
                    row.committed = stats.committed;
                    row.rounds = stats.rounds;
                    row.safety = Some(check_run(&stats));
                }
                Err(e) => {
                    if let SimError::SimulationTimeout { committed, rounds, .. } = e {
                        row.committed = committed;
                        row.rounds = rounds;
                    }
                    log::warn!("timeout {t} s, seed {seed}: {e}");
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
    }
    rows.sort_by_key(|r| (r.timeout, r.seed));
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[RunRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

pub fn csv_string(rows: &[RunRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv is ascii")
}

/// Mean γ̂ per timeout over the successful repetitions, sorted by timeout.
/// Timeouts where every repetition failed are left out.
pub fn mean_gamma_by_timeout(rows: &[RunRow]) -> Vec<(f64, f64)> {
    let mut acc: Vec<(SimTime, f64, u32)> = Vec::new();
    for r in rows {
        let Some(g) = r.gamma else { continue };
        match acc.iter_mut().find(|a| a.0 == r.timeout) {
            Some(a) => {
                a.1 += g;
                a.2 += 1;
            }
            None => acc.push((r.timeout, g, 1)),
        }
    }
    acc.sort_by_key(|a| a.0);
    acc.into_iter()
        .map(|(t, s, k)| (t.as_secs_f64(), s / k as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table2Row {
    pub failures: usize,
    pub target: f64,
    /// `None` when the sweep never reached the target, or was empty.
    pub convergence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table2 {
    pub n: usize,
    pub rows: Vec<Table2Row>,
    /// Convergence timeouts never decrease as failures grow. A sweep that
    /// never converged counts as converging beyond its last point.
    pub monotone: bool,
}

/// Summarizes sweeps, one per failure count, into convergence timeouts.
/// `sweeps` holds `(failures, rows)`; rows may hold several seeds per point.
pub fn emit_table2(n: usize, sweeps: &[(usize, Vec<RunRow>)], tolerance: f64) -> Table2 {
    let mut sorted: Vec<&(usize, Vec<RunRow>)> = sweeps.iter().collect();
    sorted.sort_by_key(|s| s.0);
    let rows: Vec<Table2Row> = sorted
        .into_iter()
        .map(|(failures, rows)| {
            let target = expected_gamma(n, *failures);
            let table = mean_gamma_by_timeout(rows);
            let convergence = find_convergence_timeout(&table, target, tolerance).ok().flatten();
            Table2Row {
                failures: *failures,
                target,
                convergence,
            }
        })
        .collect();
    let keys: Vec<f64> = rows.iter().map(|r| r.convergence.unwrap_or(f64::INFINITY)).collect();
    let monotone = keys.windows(2).all(|w| w[0] <= w[1]);
    Table2 { n, rows, monotone }
}

impl Table2 {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("failures,target_gamma,convergence_timeout_s\n");
        for r in &self.rows {
            let t = match r.convergence {
                Some(t) => format!("{t}"),
                None => "NA".to_string(),
            };
            s.push_str(&format!("{},{:.6},{}\n", r.failures, r.target, t));
        }
        s.push_str(&format!("# monotone_non_decreasing={}\n", self.monotone));
        s
    }
}
