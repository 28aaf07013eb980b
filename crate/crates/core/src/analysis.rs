//! Verdicts over finished runs: safety, γ estimates, convergence timeouts
//! and per-phase message counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::engine::{CommitEntry, RunStats};
use crate::model::{quorum_params, BlockStore, ConflictRelation, Digest, ModelError, NodeId, Tx};
use crate::replica::OutcomeKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("run has no finished rounds")]
    NoRounds,
    #[error("sweep table is empty")]
    EmptyTable,
    #[error("sweep table is not sorted by timeout")]
    Unsorted,
    #[error("no committed round with an honest leader")]
    NoSuccessfulRounds,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Two honest nodes committed different blocks at one height.
    SameHeightFork {
        height: u64,
        digests: BTreeSet<Digest>,
        witnesses: BTreeSet<NodeId>,
    },
    /// Two committed transactions are related by the conflict relation.
    ConflictingTx {
        txs: (Tx, Tx),
        digests: BTreeSet<Digest>,
        witnesses: BTreeSet<NodeId>,
    },
    /// A node's log skips or repeats a height, or a block does not extend
    /// the one before it.
    BrokenChain { node: NodeId, height: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |d: &BTreeSet<Digest>| d.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        match self {
            Violation::SameHeightFork {
                height,
                digests,
                witnesses,
            } => write!(
                f,
                "fork at height {height}: {} seen by {} node(s)",
                list(digests),
                witnesses.len()
            ),
            Violation::ConflictingTx { txs, digests, .. } => write!(
                f,
                "conflicting transactions {:?} and {:?} committed in {}",
                String::from_utf8_lossy(&txs.0 .0),
                String::from_utf8_lossy(&txs.1 .0),
                list(digests)
            ),
            Violation::BrokenChain { node, height } => write!(f, "{node} has a broken chain at height {height}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SafetyVerdict {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Checks honest commit logs for forks, conflicting transactions and chains
/// that do not link up. The order in which logs are supplied is irrelevant.
pub fn check_safety<'a, I>(logs: I, blocks: &BlockStore, conflicts: &ConflictRelation) -> SafetyVerdict
where
    I: IntoIterator<Item = (NodeId, &'a [CommitEntry])>,
{
    let logs: BTreeMap<NodeId, &[CommitEntry]> = logs.into_iter().collect();
    let mut violations = Vec::new();

    for (&node, log) in &logs {
        let mut prev: Option<&CommitEntry> = None;
        for e in log.iter() {
            let expected = prev.map_or(1, |p| p.height + 1);
            let links = match (prev, blocks.get(&e.block)) {
                (Some(p), Some(b)) => b.parent_hash == p.block,
                _ => true,
            };
            if e.height != expected || !links {
                violations.push(Violation::BrokenChain { node, height: e.height });
                break;
            }
            prev = Some(e);
        }
    }

    let mut by_height: BTreeMap<u64, BTreeMap<Digest, BTreeSet<NodeId>>> = BTreeMap::new();
    for (&node, log) in &logs {
        for e in log.iter() {
            by_height
                .entry(e.height)
                .or_default()
                .entry(e.block)
                .or_default()
                .insert(node);
        }
    }
    for (height, digests) in &by_height {
        if digests.len() > 1 {
            violations.push(Violation::SameHeightFork {
                height: *height,
                digests: digests.keys().copied().collect(),
                witnesses: digests.values().flatten().copied().collect(),
            });
        }
    }

    if !conflicts.is_empty() {
        let mut holders: BTreeMap<&Tx, BTreeMap<Digest, BTreeSet<NodeId>>> = BTreeMap::new();
        for digests in by_height.values() {
            for (digest, nodes) in digests {
                if let Some(b) = blocks.get(digest) {
                    for tx in &b.txs {
                        holders.entry(tx).or_default().entry(*digest).or_default().extend(nodes);
                    }
                }
            }
        }
        for (a, b) in conflicts.pairs() {
            if let (Some(ha), Some(hb)) = (holders.get(a), holders.get(b)) {
                violations.push(Violation::ConflictingTx {
                    txs: (a.clone(), b.clone()),
                    digests: ha.keys().chain(hb.keys()).copied().collect(),
                    witnesses: ha.values().chain(hb.values()).flatten().copied().collect(),
                });
            }
        }
    }

    SafetyVerdict {
        ok: violations.is_empty(),
        violations,
    }
}

/// [`check_safety`] over a run's honest commit logs.
pub fn check_run(stats: &RunStats) -> SafetyVerdict {
    check_safety(
        stats.commit_log.iter().map(|(n, l)| (*n, l.as_slice())),
        &stats.blocks,
        &stats.conflicts,
    )
}

pub fn gamma_ratio(committed: u64, rounds: u64) -> Result<f64, AnalysisError> {
    if rounds == 0 {
        return Err(AnalysisError::NoRounds);
    }
    Ok(committed as f64 / rounds as f64)
}

/// Committed blocks per leader change.
pub fn gamma_estimate(stats: &RunStats) -> Result<f64, AnalysisError> {
    gamma_ratio(stats.committed, stats.rounds)
}

/// `(n - ν) / n`: the share of rounds led by a non-faulty node.
pub fn expected_gamma(n: usize, nu: usize) -> f64 {
    assert!(nu <= n, "more faulty nodes ({nu}) than nodes ({n})");
    (n - nu) as f64 / n as f64
}

/// `expected_gamma(n, f)` with `f` the tolerated fault count.
pub fn gamma_lower_bound(n: usize) -> Result<f64, ModelError> {
    Ok(expected_gamma(n, quorum_params(n)?.f))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaReport {
    pub gamma_hat: f64,
    pub expected: f64,
    pub n: usize,
    pub nu: usize,
    pub within_tolerance: bool,
}

pub fn gamma_report(stats: &RunStats, nu: usize, tolerance: f64) -> Result<GammaReport, AnalysisError> {
    let gamma_hat = gamma_estimate(stats)?;
    let expected = expected_gamma(stats.n, nu);
    Ok(GammaReport {
        gamma_hat,
        expected,
        n: stats.n,
        nu,
        within_tolerance: (gamma_hat - expected).abs() <= tolerance,
    })
}

/// The smallest timeout whose γ̂ reaches `target - tolerance`.
/// `table` holds `(timeout_s, gamma)` sorted by timeout.
pub fn find_convergence_timeout(
    table: &[(f64, f64)],
    target: f64,
    tolerance: f64,
) -> Result<Option<f64>, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    if table.windows(2).any(|w| w[0].0 > w[1].0) {
        return Err(AnalysisError::Unsorted);
    }
    Ok(table.iter().find(|(_, g)| *g >= target - tolerance).map(|(t, _)| *t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MessageComplexity {
    /// Committed rounds with an honest leader that were averaged.
    pub rounds_used: usize,
    pub avg_new_block: f64,
    pub avg_vote: f64,
    /// Every averaged round sent exactly `n - 1` proposal deliveries.
    pub propose_is_linear: bool,
    /// Vote deliveries lie between `threshold·(n-1)` and `n·(n-1)`.
    pub vote_is_quadratic: bool,
}

pub fn message_complexity(stats: &RunStats, n: usize) -> Result<MessageComplexity, AnalysisError> {
    let q = quorum_params(n).map_err(|_| AnalysisError::NoSuccessfulRounds)?;
    let rounds: Vec<_> = stats
        .per_round
        .iter()
        .filter(|r| r.outcome == OutcomeKind::Committed && r.leader_honest)
        .collect();
    if rounds.is_empty() {
        return Err(AnalysisError::NoSuccessfulRounds);
    }
    let k = rounds.len() as f64;
    let avg_new_block = rounds.iter().map(|r| r.new_block_msgs as f64).sum::<f64>() / k;
    let avg_vote = rounds.iter().map(|r| r.vote_msgs as f64).sum::<f64>() / k;
    let link = (n - 1) as f64;
    Ok(MessageComplexity {
        rounds_used: rounds.len(),
        avg_new_block,
        avg_vote,
        propose_is_linear: rounds.iter().all(|r| r.new_block_msgs == (n - 1) as u64),
        vote_is_quadratic: avg_vote >= q.threshold as f64 * link && avg_vote <= n as f64 * link,
    })
}
