//! Exhaustive state-space search over small clusters.
//!
//! Every delivery takes one of two delays, and every ordering of events that
//! fall due at the same instant is tried. [`DelayBranching`] sets which
//! deliveries choose their delay independently. Replicas stop participating
//! once they reach `max_rounds`. Visited states are deduplicated by a 128-bit
//! fingerprint.
//!
//! Events at different nodes commute: a delivery or timer touches one
//! replica, and anything it sends arrives strictly later. So at each instant
//! only the lowest-numbered node with due events is expanded, in every
//! order. This reaches the same set of states
//! as expanding all nodes at once.

use std::collections::{BTreeMap, HashSet};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use sha2::{Digest as _, Sha256};

use crate::adversary::{Behavior, FaultSpec};
use crate::engine::{Cluster, StepOutput};
use crate::model::{Digest, Message, NodeId, QuorumParams};
use crate::replica::{ReplicaEvent, TimerRequest};
use crate::time::SimTime;

/// Which deliveries share a delay choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayBranching {
    /// Every copy of every message picks its own delay.
    PerCopy,
    /// Each proposal copy picks its own delay; all copies of a vote share one.
    ProposalsPerCopy,
    /// All copies of one message share a delay.
    PerMessage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExploreConfig {
    pub quorum: QuorumParams,
    pub faults: Vec<FaultSpec>,
    /// One time unit.
    pub unit: SimTime,
    /// The two possible delays, in units.
    pub delays: [u64; 2],
    pub branching: DelayBranching,
    pub propose_timeout: u64,
    pub vote_timeout: u64,
    pub max_rounds: u64,
    /// Abort after this many distinct states.
    pub state_limit: usize,
}

impl ExploreConfig {
    /// Four nodes, one double voter, delays of 1 or 4 units, timeouts of 3
    /// units, three rounds.
    pub fn small(double_voter: u32) -> Self {
        ExploreConfig {
            quorum: QuorumParams::new(4).expect("four nodes"),
            faults: vec![FaultSpec::new(double_voter, Behavior::DoubleVote)],
            unit: SimTime::from_millis(1000),
            delays: [1, 4],
            branching: DelayBranching::ProposalsPerCopy,
            propose_timeout: 3,
            vote_timeout: 3,
            max_rounds: 3,
            state_limit: 20_000_000,
        }
    }
}

/// Two honest nodes committed different blocks at one height.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub height: u64,
    pub blocks: (Digest, Digest),
    /// Events from the initial state, in order.
    pub trace: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExploreReport {
    pub states: usize,
    pub transitions: u64,
    /// States with nothing left to do.
    pub terminal: u64,
    pub max_depth: usize,
    /// Highest height committed by an honest node in any state.
    pub max_height: u64,
    /// Terminal states where every honest node reached `max_rounds`.
    pub completed: u64,
    pub truncated: bool,
    pub violation: Option<Counterexample>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Pending {
    Delivery {
        due: SimTime,
        to: NodeId,
        msg: Arc<Message>,
    },
    Timer {
        node: NodeId,
        timer: TimerRequest,
    },
}

impl Pending {
    fn node(&self) -> NodeId {
        match self {
            Pending::Delivery { to, .. } => *to,
            Pending::Timer { node, .. } => *node,
        }
    }

    fn due(&self) -> SimTime {
        match self {
            Pending::Delivery { due, .. } => *due,
            Pending::Timer { timer, .. } => timer.deadline,
        }
    }
}

#[derive(Clone)]
struct State {
    cluster: Cluster,
    now: SimTime,
    pending: Vec<Pending>,
    /// First honest commit seen at each height.
    commits: BTreeMap<u64, Digest>,
    trace: Vec<String>,
}

/// Feeds `Hash` output into sha256 so the fingerprint is wider than 64 bits.
struct ShaHasher(Sha256);

impl Hasher for ShaHasher {
    fn write(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    fn finish(&self) -> u64 {
        unreachable!("use the full digest")
    }
}

impl ShaHasher {
    fn new() -> Self {
        ShaHasher(Sha256::new())
    }

    fn digest(self) -> u128 {
        let d = self.0.finalize();
        u128::from_le_bytes(d[..16].try_into().expect("16 bytes"))
    }
}

struct Explorer<'a> {
    cfg: &'a ExploreConfig,
    report: ExploreReport,
    seen: HashSet<u128>,
    keep_trace: bool,
}

impl Explorer<'_> {
    fn at(&self, units: u64) -> SimTime {
        self.cfg.unit.checked_mul(units).expect("time fits")
    }

    /// Times enter only relative to `now`, so states that differ by a time
    /// shift are merged.
    fn fingerprint(&self, s: &State) -> u128 {
        let mut items: Vec<u128> = s
            .pending
            .iter()
            .map(|p| {
                let mut h = ShaHasher::new();
                (p.due() - s.now, p.node()).hash(&mut h);
                match p {
                    Pending::Delivery { msg, .. } => msg.hash(&mut h),
                    Pending::Timer { timer, .. } => (timer.kind, timer.round).hash(&mut h),
                }
                h.digest()
            })
            .collect();
        items.sort_unstable();
        let mut h = ShaHasher::new();
        items.hash(&mut h);
        for r in s.cluster.replicas() {
            r.hash_shifted(s.now, &mut h);
        }
        s.cluster.store().iter().for_each(|b| b.hash.hash(&mut h));
        s.commits.hash(&mut h);
        h.digest()
    }

    /// Whether `node` has stopped participating.
    fn retired(&self, s: &State, node: NodeId) -> bool {
        s.cluster.replica(node).is_none_or(|r| r.round() >= self.cfg.max_rounds)
    }

    /// Records honest commits. Returns a counterexample if one disagrees with
    /// an earlier commit at the same height.
    fn record_commits(&mut self, s: &mut State, out: &StepOutput) -> Option<Counterexample> {
        let mut bad = None;
        for (node, e) in &out.events {
            if s.cluster.adversary().is_faulty(*node) {
                continue;
            }
            if let ReplicaEvent::Committed { block, height, .. } = e {
                self.report.max_height = self.report.max_height.max(*height);
                let first = *s.commits.entry(*height).or_insert(*block);
                if first != *block && bad.is_none() {
                    bad = Some(Counterexample {
                        height: *height,
                        blocks: (first, *block),
                        trace: s.trace.clone(),
                    });
                }
            }
        }
        bad
    }

    /// Folds a step into `s`, branching once per combination of delay
    /// choices for the messages it sent.
    fn absorb(&mut self, mut s: State, out: StepOutput) -> Vec<State> {
        if let Some(cx) = self.record_commits(&mut s, &out) {
            self.report.violation.get_or_insert(cx);
        }
        for (node, timer) in &out.timers {
            s.pending.push(Pending::Timer {
                node: *node,
                timer: *timer,
            });
        }
        // Each group is a set of copies that share one delay choice.
        let mut groups: Vec<Vec<(NodeId, Arc<Message>)>> = Vec::new();
        for (_, t) in &out.transmissions {
            if t.message.round() >= self.cfg.max_rounds {
                continue;
            }
            let copies: Vec<(NodeId, Arc<Message>)> = t
                .receivers()
                .iter()
                .filter(|to| !self.retired(&s, **to))
                .map(|to| (*to, t.message.clone()))
                .collect();
            let split = match self.cfg.branching {
                DelayBranching::PerCopy => true,
                DelayBranching::ProposalsPerCopy => t.message.as_block().is_some(),
                DelayBranching::PerMessage => false,
            };
            if split {
                groups.extend(copies.into_iter().map(|c| vec![c]));
            } else if !copies.is_empty() {
                groups.push(copies);
            }
        }
        let mut states = vec![s];
        for g in groups {
            let mut next = Vec::with_capacity(states.len() * 2);
            for st in states {
                for &d in &self.cfg.delays {
                    let mut v = st.clone();
                    let due = v.now + self.at(d);
                    for (to, msg) in &g {
                        v.pending.push(Pending::Delivery {
                            due,
                            to: *to,
                            msg: msg.clone(),
                        });
                    }
                    next.push(v);
                }
            }
            states = next;
        }
        for st in &mut states {
            self.prune(st);
        }
        states
    }

    /// Drops timers that were superseded and deliveries the receiver is
    /// bound to reject.
    fn prune(&self, s: &mut State) {
        let pending = std::mem::take(&mut s.pending);
        s.pending = pending
            .into_iter()
            .filter(|p| {
                if self.retired(s, p.node()) {
                    return false;
                }
                match p {
                    Pending::Timer { node, timer } => s.cluster.timer_is_live(*node, timer),
                    Pending::Delivery { to, msg, .. } => !s
                        .cluster
                        .replica(*to)
                        .is_some_and(|r| r.would_always_reject(msg, s.cluster.store())),
                }
            })
            .collect();
    }

    fn successors(&mut self, s: &State) -> Vec<State> {
        let Some(t) = s.pending.iter().map(Pending::due).min() else {
            return Vec::new();
        };
        let node = s
            .pending
            .iter()
            .filter(|p| p.due() == t)
            .map(Pending::node)
            .min()
            .expect("some event is due");
        let mut next = Vec::new();
        for (i, p) in s.pending.iter().enumerate() {
            if p.due() != t || p.node() != node {
                continue;
            }
            // Identical copies lead to identical states.
            if s.pending[..i].contains(p) {
                continue;
            }
            let mut d = s.clone();
            d.pending.swap_remove(i);
            d.now = t;
            let out = match p {
                Pending::Delivery { to, msg, .. } => {
                    if self.keep_trace {
                        d.trace.push(format!(
                            "t={t}: {} -> {to} {:?} r{}",
                            msg.sender,
                            msg.kind(),
                            msg.round()
                        ));
                    }
                    d.cluster.deliver(*to, msg, t)
                }
                Pending::Timer { node, timer } => {
                    if self.keep_trace {
                        d.trace
                            .push(format!("t={t}: {node} {:?} timer r{}", timer.kind, timer.round));
                    }
                    d.cluster.fire(*node, *timer, t)
                }
            };
            next.extend(self.absorb(d, out));
        }
        next
    }
}

/// Explores every reachable state of `cfg`. Stops at the first safety
/// violation or when `state_limit` is hit. `keep_trace` records the path to
/// each state, which makes counterexamples readable but costs memory.
pub fn explore(cfg: &ExploreConfig, keep_trace: bool) -> ExploreReport {
    let mut ex = Explorer {
        cfg,
        report: ExploreReport::default(),
        seen: HashSet::new(),
        keep_trace,
    };
    let init = State {
        cluster: Cluster::new(
            cfg.quorum,
            &cfg.faults,
            ex.at(cfg.propose_timeout),
            ex.at(cfg.vote_timeout),
            1,
        ),
        now: SimTime::ZERO,
        pending: Vec::new(),
        commits: BTreeMap::new(),
        trace: Vec::new(),
    };
    // Starting the nodes one by one branches on the delays of what each
    // sends.
    let mut roots = vec![init];
    for node in cfg.quorum.nodes() {
        let mut next = Vec::new();
        for mut s in roots {
            let out = s.cluster.start(node, SimTime::ZERO);
            next.extend(ex.absorb(s, out));
        }
        roots = next;
    }

    let mut stack = Vec::new();
    for s in roots {
        if ex.seen.insert(ex.fingerprint(&s)) {
            stack.push((s, 0usize));
        }
    }
    while let Some((s, depth)) = stack.pop() {
        ex.report.max_depth = ex.report.max_depth.max(depth);
        let next = ex.successors(&s);
        if ex.report.violation.is_some() {
            break;
        }
        if next.is_empty() {
            ex.report.terminal += 1;
            if s.cluster.honest().all(|n| ex.retired(&s, n)) {
                ex.report.completed += 1;
            }
            continue;
        }
        for d in next {
            ex.report.transitions += 1;
            if ex.seen.insert(ex.fingerprint(&d)) {
                stack.push((d, depth + 1));
            }
        }
        if ex.seen.len() >= cfg.state_limit {
            ex.report.truncated = true;
            break;
        }
    }
    ex.report.states = ex.seen.len();
    ex.report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_round_fault_free_commits_nothing_but_finishes() {
        let mut cfg = ExploreConfig::small(0);
        cfg.faults.clear();
        cfg.max_rounds = 1;
        let r = explore(&cfg, false);
        assert!(!r.truncated);
        assert!(r.violation.is_none());
        assert!(r.completed > 0);
        // A single round only makes a candidate; nothing can commit yet.
        assert_eq!(r.max_height, 0);
    }

    #[test]
    fn two_rounds_can_commit() {
        let mut cfg = ExploreConfig::small(3);
        cfg.branching = DelayBranching::PerMessage;
        cfg.max_rounds = 2;
        let r = explore(&cfg, false);
        assert!(!r.truncated);
        assert!(r.violation.is_none(), "{:?}", r.violation);
        assert_eq!(r.max_height, 1);
    }

    #[test]
    fn undersized_quorum_forks() {
        // With a quorum of 2 out of 4, two pairs can certify different
        // blocks. The search must find that.
        let mut cfg = ExploreConfig::small(1);
        cfg.faults = vec![FaultSpec::new(0, Behavior::Equivocate)];
        cfg.branching = DelayBranching::PerMessage;
        cfg.quorum = QuorumParams {
            n: 4,
            f: 1,
            threshold: 2,
        };
        let r = explore(&cfg, true);
        let cx = r.violation.expect("a fork is reachable with quorum 2");
        assert_ne!(cx.blocks.0, cx.blocks.1);
        assert!(!cx.trace.is_empty());
    }
}
