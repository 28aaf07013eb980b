//! The multicast channel: a pending set of `(message, destinations)` entries
//! with a per-destination delivery time drawn from a [`DelayModel`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::model::{Message, NodeId};
use crate::time::SimTime;

/// Samples above this are discarded when a histogram is loaded.
pub const MAX_DELAY: SimTime = SimTime::from_micros(4 * SimTime::MICROS_PER_SEC);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("message has no destinations")]
    NoDestinations,
    #[error("node {node} is not a pending destination of entry {entry}")]
    NotAddressed { entry: u64, node: NodeId },
    #[error("no pending entry {0}")]
    UnknownEntry(u64),
    #[error("delay {0} s is negative, non-finite or above the 4 s cap")]
    BadDelay(f64),
    #[error("uniform delay bounds {lo}..{hi} are inverted")]
    InvertedBounds { lo: f64, hi: f64 },
    #[error("row {row}: negative delay {delay}")]
    NegativeDelay { row: usize, delay: f64 },
    #[error("row {row}: probability {p} is negative or not finite")]
    BadProbability { row: usize, p: f64 },
    #[error("histogram has no probability mass at or below 4 s")]
    EmptyHistogram,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `(delay, probability)` with probabilities summing to one.
    bins: Vec<(SimTime, f64)>,
    cumulative: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> &[(SimTime, f64)] {
        &self.bins
    }

    pub fn mean(&self) -> f64 {
        self.bins.iter().map(|(d, p)| d.as_secs_f64() * p).sum()
    }
}

/// Source of one-hop delays.
#[derive(Clone, Debug, PartialEq)]
pub enum DelayModel {
    Constant(SimTime),
    /// Uniform over `[lo, hi]` at microsecond resolution.
    Uniform {
        lo: SimTime,
        hi: SimTime,
    },
    Histogram(Histogram),
}

fn checked_secs(s: f64) -> Result<SimTime, NetError> {
    match SimTime::from_secs_f64(s) {
        Some(t) if t <= MAX_DELAY => Ok(t),
        _ => Err(NetError::BadDelay(s)),
    }
}

impl DelayModel {
    pub fn constant(secs: f64) -> Result<Self, NetError> {
        Ok(DelayModel::Constant(checked_secs(secs)?))
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, NetError> {
        let (l, h) = (checked_secs(lo)?, checked_secs(hi)?);
        if l > h {
            return Err(NetError::InvertedBounds { lo, hi });
        }
        Ok(DelayModel::Uniform { lo: l, hi: h })
    }

    /// The largest delay this model can produce (Δ).
    pub fn delta_cap(&self) -> SimTime {
        match self {
            DelayModel::Constant(d) => *d,
            DelayModel::Uniform { hi, .. } => *hi,
            DelayModel::Histogram(h) => h.bins.iter().map(|b| b.0).max().unwrap_or_default(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimTime {
        match self {
            DelayModel::Constant(d) => *d,
            DelayModel::Uniform { lo, hi } => SimTime::from_micros(rng.gen_range(lo.as_micros()..=hi.as_micros())),
            DelayModel::Histogram(h) => {
                let u: f64 = rng.gen();
                let i = h.cumulative.partition_point(|&c| c <= u);
                h.bins[i.min(h.bins.len() - 1)].0
            }
        }
    }
}

/// Builds a histogram model from `(delay_seconds, probability)` rows.
///
/// Rows above 4 s are dropped. The remaining mass is renormalized; a warning
/// is logged if it was off by more than 1e-6.
pub fn load_histogram(rows: &[(f64, f64)]) -> Result<DelayModel, NetError> {
    let mut kept: BTreeMap<SimTime, f64> = BTreeMap::new();
    for (i, &(delay, p)) in rows.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(NetError::BadProbability { row: i + 1, p });
        }
        if delay.is_nan() || delay < 0.0 {
            return Err(NetError::NegativeDelay { row: i + 1, delay });
        }
        if delay > MAX_DELAY.as_secs_f64() {
            log::debug!("dropping histogram row {} ({delay} s > 4 s)", i + 1);
            continue;
        }
        let t = SimTime::from_secs_f64(delay).ok_or(NetError::BadDelay(delay))?;
        *kept.entry(t).or_insert(0.0) += p;
    }
    kept.retain(|_, p| *p > 0.0);
    let total: f64 = kept.values().sum();
    if kept.is_empty() || total <= 0.0 {
        return Err(NetError::EmptyHistogram);
    }
    if (total - 1.0).abs() > 1e-6 {
        log::warn!("histogram mass is {total}, renormalizing");
    }
    let bins: Vec<(SimTime, f64)> = kept.into_iter().map(|(d, p)| (d, p / total)).collect();
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = bins
        .iter()
        .map(|(_, p)| {
            acc += p;
            acc
        })
        .collect();
    *cumulative.last_mut().unwrap() = 1.0;
    Ok(DelayModel::Histogram(Histogram { bins, cumulative }))
}

/// Parses `delay,probability` lines. Blank lines and `#` comments are skipped.
pub fn parse_histogram(text: &str) -> Result<Vec<(f64, f64)>, NetError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| NetError::Parse { line: i + 1, msg };
        let (d, p) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `delay,probability`, got {line:?}")))?;
        let d: f64 = d.trim().parse().map_err(|_| err(format!("bad delay {:?}", d.trim())))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| err(format!("bad probability {:?}", p.trim())))?;
        rows.push((d, p));
    }
    Ok(rows)
}

pub fn load_histogram_file(path: &Path) -> Result<DelayModel, NetError> {
    let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_histogram(&parse_histogram(&text)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingEntry {
    pub message: Arc<Message>,
    pub sent_at: SimTime,
    /// Remaining destinations and when each one receives the message.
    pub destinations: BTreeMap<NodeId, SimTime>,
}

/// Counters for the conservation check: every addressed pair is delivered,
/// dropped, or still pending.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetCounters {
    pub addressed: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetState {
    pending: BTreeMap<EntryId, PendingEntry>,
    next_id: u64,
    counters: NetCounters,
}

impl NetState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `(message, destinations)` and samples one delay per destination,
    /// in ascending node order. Returns the scheduled deliveries.
    pub fn send<R: Rng + ?Sized>(
        &mut self,
        message: Arc<Message>,
        destinations: &BTreeSet<NodeId>,
        now: SimTime,
        delay: &DelayModel,
        rng: &mut R,
    ) -> Result<(EntryId, Vec<(NodeId, SimTime)>), NetError> {
        if destinations.is_empty() {
            return Err(NetError::NoDestinations);
        }
        let id = EntryId(self.next_id);
        self.next_id += 1;
        let dests: BTreeMap<NodeId, SimTime> = destinations.iter().map(|&n| (n, now + delay.sample(rng))).collect();
        let scheduled = dests.iter().map(|(n, t)| (*n, *t)).collect();
        self.counters.addressed += dests.len() as u64;
        self.pending.insert(
            id,
            PendingEntry {
                message,
                sent_at: now,
                destinations: dests,
            },
        );
        Ok((id, scheduled))
    }

    /// Removes `node` from the entry's destinations and hands back the message.
    pub fn receive(&mut self, entry: EntryId, node: NodeId) -> Result<Arc<Message>, NetError> {
        let e = self
            .pending
            .get_mut(&entry)
            .ok_or(NetError::NotAddressed { entry: entry.0, node })?;
        if e.destinations.remove(&node).is_none() {
            return Err(NetError::NotAddressed { entry: entry.0, node });
        }
        let msg = e.message.clone();
        if e.destinations.is_empty() {
            self.pending.remove(&entry);
        }
        self.counters.delivered += 1;
        Ok(msg)
    }

    /// Replaces the destination set of a pending entry. Nodes that stay keep
    /// their delivery time; added nodes get a fresh sample from `now`.
    pub fn misbehave<R: Rng + ?Sized>(
        &mut self,
        entry: EntryId,
        new_destinations: &BTreeSet<NodeId>,
        now: SimTime,
        delay: &DelayModel,
        rng: &mut R,
    ) -> Result<Vec<(NodeId, SimTime)>, NetError> {
        let Some(e) = self.pending.get_mut(&entry) else {
            log::debug!("misbehave on absent entry {}", entry.0);
            return Err(NetError::UnknownEntry(entry.0));
        };
        let before = e.destinations.len();
        e.destinations.retain(|n, _| new_destinations.contains(n));
        self.counters.dropped += (before - e.destinations.len()) as u64;
        let mut added = Vec::new();
        for &n in new_destinations {
            if let std::collections::btree_map::Entry::Vacant(v) = e.destinations.entry(n) {
                let t = now + delay.sample(rng);
                v.insert(t);
                self.counters.addressed += 1;
                added.push((n, t));
            }
        }
        if e.destinations.is_empty() {
            self.pending.remove(&entry);
        }
        Ok(added)
    }

    pub fn is_addressed(&self, entry: EntryId, node: NodeId) -> bool {
        self.pending
            .get(&entry)
            .is_some_and(|e| e.destinations.contains_key(&node))
    }

    pub fn entry(&self, entry: EntryId) -> Option<&PendingEntry> {
        self.pending.get(&entry)
    }

    pub fn pending_pairs(&self) -> u64 {
        self.pending.values().map(|e| e.destinations.len() as u64).sum()
    }

    pub fn counters(&self) -> NetCounters {
        self.counters
    }
}
