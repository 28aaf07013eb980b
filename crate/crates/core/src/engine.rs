//! Deterministic discrete-event driver.
//!
//! A run owns one seeded RNG, the channel, the replicas and the adversary.
//! Events are processed in `(time, sequence)` order; the sequence number is
//! assigned at scheduling time, so simultaneous events fire in the order they
//! were created.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::{Adversary, Behavior, FaultSpec, Transmission};
use crate::model::{
    quorum_params, Block, BlockStore, ConflictRelation, Digest, Message, MessageKind, NodeId, QuorumParams,
};
use crate::network::{DelayModel, EntryId, NetCounters, NetError, NetState};
use crate::replica::{OutcomeKind, Replica, ReplicaConfig, ReplicaEvent, TimerKind, TimerRequest};
use crate::time::SimTime;

/// Hard bound on processed events per run.
pub const MAX_EVENTS: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("simulation timed out after {events} events ({committed} committed in {rounds} rounds)")]
    SimulationTimeout { events: u64, committed: u64, rounds: u64 },
    #[error("no events left after {rounds} rounds")]
    Stalled { rounds: u64 },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// When to end a run. Whichever bound is reached first wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopRule {
    pub min_committed_blocks: Option<u64>,
    pub max_rounds: Option<u64>,
}

impl StopRule {
    pub fn blocks(n: u64) -> Self {
        StopRule {
            min_committed_blocks: Some(n),
            max_rounds: None,
        }
    }

    pub fn rounds(n: u64) -> Self {
        StopRule {
            min_committed_blocks: None,
            max_rounds: Some(n),
        }
    }

    pub fn with_max_rounds(mut self, n: u64) -> Self {
        self.max_rounds = Some(n);
        self
    }

    fn reached(&self, committed: u64, rounds: u64) -> bool {
        self.min_committed_blocks.is_some_and(|b| committed >= b) || self.max_rounds.is_some_and(|m| rounds >= m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub faults: Vec<FaultSpec>,
    pub propose_timeout: SimTime,
    pub vote_timeout: SimTime,
    pub delay: DelayModel,
    pub seed: u64,
    pub stop: StopRule,
    pub txs_per_block: usize,
    pub max_events: u64,
}

impl Scenario {
    /// `n` nodes, no faults, 2 s timeouts, seed 0, stop after 200 blocks.
    pub fn new(n: usize, delay: DelayModel) -> Self {
        Scenario {
            n,
            faults: Vec::new(),
            propose_timeout: SimTime::from_millis(2000),
            vote_timeout: SimTime::from_millis(2000),
            delay,
            seed: 0,
            stop: StopRule::blocks(200),
            txs_per_block: 2,
            max_events: MAX_EVENTS,
        }
    }

    pub fn with_faults(mut self, faults: impl IntoIterator<Item = FaultSpec>) -> Self {
        self.faults = faults.into_iter().collect();
        self
    }

    pub fn with_timeouts(mut self, propose: SimTime, vote: SimTime) -> Self {
        self.propose_timeout = propose;
        self.vote_timeout = vote;
        self
    }

    /// Sets both timeouts to the same value, as the sweeps do.
    pub fn with_timeout(self, t: SimTime) -> Self {
        self.with_timeouts(t, t)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn validate(&self) -> Result<QuorumParams, SimError> {
        let q = quorum_params(self.n).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for f in &self.faults {
            if f.node.index() >= self.n {
                return Err(SimError::InvalidScenario(format!(
                    "fault on node {} but n = {}",
                    f.node.0, self.n
                )));
            }
            if !seen.insert(f.node) {
                return Err(SimError::InvalidScenario(format!(
                    "node {} has two fault specs",
                    f.node.0
                )));
            }
        }
        if self.stop.min_committed_blocks.is_none() && self.stop.max_rounds.is_none() {
            return Err(SimError::InvalidScenario("stop rule has no bound".into()));
        }
        Ok(q)
    }

    pub fn faulty(&self) -> BTreeSet<NodeId> {
        self.faults.iter().map(|f| f.node).collect()
    }

    pub fn failures(&self) -> usize {
        self.faults.len()
    }
}

/// Everything a step of the cluster produced.
#[derive(Debug, Default)]
pub struct StepOutput {
    pub transmissions: Vec<(NodeId, Transmission)>,
    pub timers: Vec<(NodeId, TimerRequest)>,
    pub events: Vec<(NodeId, ReplicaEvent)>,
}

/// Replicas plus adversary plus block store. Time and the channel belong to
/// whoever drives it.
#[derive(Clone, Debug)]
pub struct Cluster {
    quorum: QuorumParams,
    replicas: Vec<Option<Replica>>,
    adversary: Adversary,
    store: BlockStore,
}

impl Cluster {
    pub fn new(
        quorum: QuorumParams,
        faults: &[FaultSpec],
        propose_timeout: SimTime,
        vote_timeout: SimTime,
        txs_per_block: usize,
    ) -> Self {
        let genesis = Arc::new(Block::genesis());
        let adversary = Adversary::new(quorum.n, faults);
        let replicas = quorum
            .nodes()
            .map(|id| {
                if adversary.is_crashed(id) {
                    return None;
                }
                let mut cfg = ReplicaConfig::new(id, quorum, propose_timeout, vote_timeout);
                cfg.txs_per_block = txs_per_block;
                Some(Replica::new(cfg, genesis.clone()))
            })
            .collect();
        Cluster {
            quorum,
            replicas,
            adversary,
            store: BlockStore::with_genesis(genesis),
        }
    }

    pub fn quorum(&self) -> QuorumParams {
        self.quorum
    }

    pub fn replica(&self, node: NodeId) -> Option<&Replica> {
        self.replicas.get(node.index()).and_then(|r| r.as_ref())
    }

    pub fn replicas(&self) -> impl Iterator<Item = &Replica> {
        self.replicas.iter().flatten()
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    /// Nodes with no fault spec.
    pub fn honest(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.quorum.nodes().filter(|n| !self.adversary.is_faulty(*n))
    }

    pub fn start(&mut self, node: NodeId, now: SimTime) -> StepOutput {
        if let Some(r) = self.replicas[node.index()].as_mut() {
            r.start(now, &mut self.store);
        }
        self.collect(node)
    }

    pub fn deliver(&mut self, node: NodeId, msg: &Message, now: SimTime) -> StepOutput {
        if let Some(r) = self.replicas[node.index()].as_mut() {
            if let Err(why) = r.handle_message(msg, now, &mut self.store) {
                log::trace!("{node} dropped {:?} r{}: {why}", msg.kind(), msg.round());
            }
        }
        self.collect(node)
    }

    pub fn fire(&mut self, node: NodeId, timer: TimerRequest, now: SimTime) -> StepOutput {
        if let Some(r) = self.replicas[node.index()].as_mut() {
            match timer.kind {
                TimerKind::Propose => r.on_propose_timer(timer.round, timer.deadline, now, &mut self.store),
                TimerKind::Vote => r.on_vote_timer(timer.round, timer.deadline, now, &mut self.store),
            }
        }
        self.collect(node)
    }

    /// Whether firing `timer` now could change anything.
    pub fn timer_is_live(&self, node: NodeId, timer: &TimerRequest) -> bool {
        self.replica(node).is_some_and(|r| {
            r.round() == timer.round
                && match timer.kind {
                    TimerKind::Propose => r.propose_deadline() == Some(timer.deadline),
                    TimerKind::Vote => r.vote_deadline() == Some(timer.deadline),
                }
        })
    }

    fn collect(&mut self, node: NodeId) -> StepOutput {
        let mut out = StepOutput::default();
        let Some(r) = self.replicas[node.index()].as_mut() else {
            return out;
        };
        let outbound = r.drain_out();
        out.timers = r.drain_timers().into_iter().map(|t| (node, t)).collect();
        out.events = r.drain_events().into_iter().map(|e| (node, e)).collect();
        for o in outbound {
            for t in self.adversary.transform(node, o, &mut self.store) {
                out.transmissions.push((node, t));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Delivery { entry: EntryId, node: NodeId },
    Timer { node: NodeId, timer: TimerRequest },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

/// Per-round measurements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: u64,
    pub leader: NodeId,
    pub leader_honest: bool,
    pub outcome: OutcomeKind,
    /// Spread of honest ready times; `None` if some honest node skipped the
    /// round or entered it with a different candidate.
    pub d: Option<SimTime>,
    /// Largest sampled delay of any message sent for this round.
    pub max_delay: SimTime,
    pub conditions_held: bool,
    pub new_block_msgs: u64,
    pub vote_msgs: u64,
    pub timeout_msgs: u64,
    /// Honest replicas that committed through this round's quorum.
    pub honest_commits: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundMeasure {
    pub d: Option<SimTime>,
    pub max_delay: SimTime,
    pub conditions_held: bool,
}

/// Computes `d` and checks `d + Δ < ProposeTimeout` and `2Δ < VoteTimeout`.
/// `ready_times` is `None` when the honest nodes were not all ready together.
pub fn measure_round(
    ready_times: Option<&[SimTime]>,
    max_delay: SimTime,
    propose_timeout: SimTime,
    vote_timeout: SimTime,
) -> RoundMeasure {
    let d = ready_times.and_then(|ts| {
        let lo = ts.iter().min()?;
        let hi = ts.iter().max()?;
        Some(*hi - *lo)
    });
    let conditions_held = d.is_some_and(|d| d + max_delay < propose_timeout && max_delay + max_delay < vote_timeout);
    RoundMeasure {
        d,
        max_delay,
        conditions_held,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitEntry {
    pub height: u64,
    pub block: Digest,
    pub at: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub n: usize,
    pub failures: usize,
    pub seed: u64,
    /// Finished rounds (leader changes).
    pub rounds: u64,
    /// Finished rounds whose block gathered a quorum.
    pub committed: u64,
    pub per_round: Vec<RoundRecord>,
    /// Honest nodes' commits in order.
    pub commit_log: BTreeMap<NodeId, Vec<CommitEntry>>,
    pub blocks: BlockStore,
    pub conflicts: ConflictRelation,
    /// Commit requests that did not extend a replica's chain.
    pub diverged_commits: u64,
    pub events: u64,
    pub end_time: SimTime,
    pub net: NetCounters,
}

impl RunStats {
    pub fn gamma(&self) -> Option<f64> {
        (self.rounds > 0).then(|| self.committed as f64 / self.rounds as f64)
    }
}

#[derive(Default)]
struct RoundAcc {
    ready: BTreeMap<NodeId, (SimTime, Digest)>,
    accepted_any: bool,
    honest_commits: usize,
    max_delay: SimTime,
    new_block_msgs: u64,
    vote_msgs: u64,
    timeout_msgs: u64,
}

struct Tracker {
    n: usize,
    honest: BTreeSet<NodeId>,
    tracked: Vec<NodeId>,
    open: BTreeMap<u64, RoundAcc>,
    finished: Vec<RoundRecord>,
    committed: u64,
    propose_timeout: SimTime,
    vote_timeout: SimTime,
}

impl Tracker {
    fn acc(&mut self, round: u64) -> Option<&mut RoundAcc> {
        if (round as usize) < self.finished.len() {
            None
        } else {
            Some(self.open.entry(round).or_default())
        }
    }

    fn on_transmission(&mut self, t: &Transmission, now: SimTime, scheduled: &[(NodeId, SimTime)]) {
        let round = t.message.round();
        let kind = t.message.kind();
        let receivers = t.receivers();
        let delay = scheduled
            .iter()
            .filter(|(n, _)| receivers.contains(n))
            .map(|(_, at)| *at - now)
            .max()
            .unwrap_or_default();
        if let Some(acc) = self.acc(round) {
            acc.max_delay = acc.max_delay.max(delay);
            let k = receivers.len() as u64;
            match kind {
                MessageKind::NewBlock => acc.new_block_msgs += k,
                MessageKind::Vote => acc.vote_msgs += k,
                MessageKind::Timeout => acc.timeout_msgs += k,
            }
        }
    }

    fn on_event(&mut self, node: NodeId, e: &ReplicaEvent) {
        if !self.honest.contains(&node) {
            return;
        }
        match e {
            ReplicaEvent::Ready { round, candidate, at } => {
                if let Some(acc) = self.acc(*round) {
                    acc.ready.insert(node, (*at, *candidate));
                }
            }
            ReplicaEvent::Accepted { round, .. } => {
                if let Some(acc) = self.acc(*round) {
                    acc.accepted_any = true;
                }
            }
            ReplicaEvent::Outcome { outcome, .. } if outcome.kind == OutcomeKind::Committed => {
                let r = outcome.round as usize;
                if r < self.finished.len() {
                    let rec = &mut self.finished[r];
                    rec.honest_commits += 1;
                    if rec.outcome != OutcomeKind::Committed {
                        rec.outcome = OutcomeKind::Committed;
                        self.committed += 1;
                    }
                } else if let Some(acc) = self.acc(outcome.round) {
                    acc.honest_commits += 1;
                }
            }
            _ => {}
        }
    }

    /// Closes every round below `min_round`.
    fn finish_below(&mut self, min_round: u64) {
        while (self.finished.len() as u64) < min_round {
            let round = self.finished.len() as u64;
            let acc = self.open.remove(&round).unwrap_or_default();
            let leader = NodeId((round % self.n as u64) as u32);
            let outcome = if acc.honest_commits > 0 {
                OutcomeKind::Committed
            } else if acc.accepted_any {
                OutcomeKind::VoteFailed
            } else {
                OutcomeKind::VoteTimedOut
            };
            let synced = acc.ready.len() == self.tracked.len()
                && acc.ready.values().map(|(_, c)| c).collect::<BTreeSet<_>>().len() == 1;
            let times: Vec<SimTime> = acc.ready.values().map(|(t, _)| *t).collect();
            let m = measure_round(
                synced.then_some(times.as_slice()),
                acc.max_delay,
                self.propose_timeout,
                self.vote_timeout,
            );
            if outcome == OutcomeKind::Committed {
                self.committed += 1;
            }
            self.finished.push(RoundRecord {
                round,
                leader,
                leader_honest: self.honest.contains(&leader),
                outcome,
                d: m.d,
                max_delay: m.max_delay,
                conditions_held: m.conditions_held,
                new_block_msgs: acc.new_block_msgs,
                vote_msgs: acc.vote_msgs,
                timeout_msgs: acc.timeout_msgs,
                honest_commits: acc.honest_commits,
            });
        }
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    cluster: Cluster,
    net: NetState,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: SimTime,
    tracker: Tracker,
    commit_log: BTreeMap<NodeId, Vec<CommitEntry>>,
    diverged_commits: u64,
}

impl Sim<'_> {
    fn push(&mut self, time: SimTime, kind: EventKind) {
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
        self.seq += 1;
    }

    fn absorb(&mut self, out: StepOutput) -> Result<bool, SimError> {
        let mut round_moved = false;
        for (node, e) in &out.events {
            self.tracker.on_event(*node, e);
            match e {
                ReplicaEvent::Committed { block, height, at } if self.tracker.honest.contains(node) => {
                    self.commit_log.entry(*node).or_default().push(CommitEntry {
                        height: *height,
                        block: *block,
                        at: *at,
                    });
                }
                ReplicaEvent::Conflict { .. } => self.diverged_commits += 1,
                ReplicaEvent::Ready { .. } => round_moved = true,
                _ => {}
            }
        }
        for (node, t) in out.timers {
            self.push(t.deadline, EventKind::Timer { node, timer: t });
        }
        for (_, t) in out.transmissions {
            let (entry, mut scheduled) = self.net.send(
                t.message.clone(),
                &t.destinations,
                self.now,
                &self.scenario.delay,
                &mut self.rng,
            )?;
            if let Some(keep) = &t.restrict_to {
                let added = self
                    .net
                    .misbehave(entry, keep, self.now, &self.scenario.delay, &mut self.rng)
                    .unwrap_or_default();
                scheduled.retain(|(n, _)| keep.contains(n));
                scheduled.extend(added);
            }
            self.tracker.on_transmission(&t, self.now, &scheduled);
            for (node, at) in scheduled {
                self.push(at, EventKind::Delivery { entry, node });
            }
        }
        Ok(round_moved)
    }

    fn min_round(&self) -> u64 {
        self.tracker
            .tracked
            .iter()
            .filter_map(|n| self.cluster.replica(*n))
            .map(|r| r.round())
            .min()
            .unwrap_or(0)
    }
}

/// Runs `scenario` to its stop rule.
pub fn run(scenario: &Scenario) -> Result<RunStats, SimError> {
    let quorum = scenario.validate()?;
    let cluster = Cluster::new(
        quorum,
        &scenario.faults,
        scenario.propose_timeout,
        scenario.vote_timeout,
        scenario.txs_per_block,
    );
    let honest: BTreeSet<NodeId> = cluster.honest().collect();
    let tracked: Vec<NodeId> = if honest.is_empty() {
        cluster.replicas().map(|r| r.id()).collect()
    } else {
        honest.iter().copied().collect()
    };
    if tracked.is_empty() {
        return Err(SimError::Stalled { rounds: 0 });
    }
    let mut sim = Sim {
        scenario,
        cluster,
        net: NetState::new(),
        rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        queue: BinaryHeap::new(),
        seq: 0,
        now: SimTime::ZERO,
        tracker: Tracker {
            n: scenario.n,
            honest,
            tracked,
            open: BTreeMap::new(),
            finished: Vec::new(),
            committed: 0,
            propose_timeout: scenario.propose_timeout,
            vote_timeout: scenario.vote_timeout,
        },
        commit_log: BTreeMap::new(),
        diverged_commits: 0,
    };

    for node in quorum.nodes() {
        let out = sim.cluster.start(node, SimTime::ZERO);
        sim.absorb(out)?;
    }

    let mut events = 0u64;
    loop {
        let rounds = sim.tracker.finished.len() as u64;
        if scenario.stop.reached(sim.tracker.committed, rounds) {
            break;
        }
        if events >= scenario.max_events {
            return Err(SimError::SimulationTimeout {
                events,
                committed: sim.tracker.committed,
                rounds,
            });
        }
        let Some(Reverse(ev)) = sim.queue.pop() else {
            return Err(SimError::Stalled { rounds });
        };
        debug_assert!(ev.time >= sim.now);
        sim.now = ev.time;
        events += 1;
        let out = match ev.kind {
            EventKind::Delivery { entry, node } => {
                let msg = sim.net.receive(entry, node)?;
                sim.cluster.deliver(node, &msg, sim.now)
            }
            EventKind::Timer { node, timer } => sim.cluster.fire(node, timer, sim.now),
        };
        if sim.absorb(out)? {
            let m = sim.min_round();
            sim.tracker.finish_below(m);
        }
    }

    let per_round = std::mem::take(&mut sim.tracker.finished);
    Ok(RunStats {
        n: scenario.n,
        failures: scenario.failures(),
        seed: scenario.seed,
        rounds: per_round.len() as u64,
        committed: sim.tracker.committed,
        per_round,
        commit_log: sim.commit_log,
        blocks: sim.cluster.store().clone(),
        conflicts: sim.cluster.adversary().conflicts().clone(),
        diverged_commits: sim.diverged_commits,
        events,
        end_time: sim.now,
        net: sim.net.counters(),
    })
}

/// Timeout values `lo, lo+step, ..., hi` on the microsecond grid.
pub fn sweep_points(lo: SimTime, hi: SimTime, step: SimTime) -> Result<Vec<SimTime>, SimError> {
    if step == SimTime::ZERO {
        return Err(SimError::InvalidScenario("sweep step must be positive".into()));
    }
    if lo > hi {
        return Err(SimError::InvalidScenario(
            "sweep lower bound exceeds upper bound".into(),
        ));
    }
    let (lo, hi, step) = (lo.as_micros(), hi.as_micros(), step.as_micros());
    Ok((0..=(hi - lo) / step)
        .map(|k| SimTime::from_micros(lo + k * step))
        .collect())
}

pub type SweepResult = Vec<(SimTime, Result<RunStats, SimError>)>;

/// One run per timeout value, with both timeouts set to that value.
pub fn sweep_timeouts(base: &Scenario, lo: SimTime, hi: SimTime, step: SimTime) -> Result<SweepResult, SimError> {
    let points = sweep_points(lo, hi, step)?;
    Ok(points
        .into_iter()
        .map(|t| (t, run(&base.clone().with_timeout(t))))
        .collect())
}

/// Crash specs for `count` nodes spread evenly over `[0, n)`.
pub fn spread_crashes(n: usize, count: usize) -> Vec<FaultSpec> {
    (0..count)
        .map(|i| FaultSpec::new((i * n / count.max(1)) as u32, Behavior::Crash))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(ms: u64) -> DelayModel {
        DelayModel::Constant(SimTime::from_millis(ms))
    }

    #[test]
    fn fault_free_ten_blocks() {
        let s = Scenario::new(4, constant(100)).with_stop(StopRule::blocks(10));
        let stats = run(&s).unwrap();
        assert_eq!(stats.rounds, 10);
        assert_eq!(stats.committed, 10);
        assert_eq!(stats.gamma(), Some(1.0));
        assert!(stats.per_round.iter().all(|r| r.conditions_held));
    }

    #[test]
    fn silent_leader_loses_its_round() {
        let s = Scenario::new(4, constant(100))
            .with_faults([FaultSpec::new(0, Behavior::SilentLeader)])
            .with_stop(StopRule::rounds(4));
        let stats = run(&s).unwrap();
        let outcomes: Vec<_> = stats.per_round.iter().map(|r| r.outcome).collect();
        assert_eq!(
            outcomes,
            vec![
                OutcomeKind::VoteTimedOut,
                OutcomeKind::Committed,
                OutcomeKind::Committed,
                OutcomeKind::Committed
            ]
        );
    }

    #[test]
    fn crashed_leader_emits_nothing() {
        let s = Scenario::new(4, constant(100))
            .with_faults([FaultSpec::new(0, Behavior::Crash)])
            .with_stop(StopRule::rounds(4));
        let stats = run(&s).unwrap();
        let r0 = &stats.per_round[0];
        assert_eq!(r0.new_block_msgs, 0);
        assert_eq!(r0.vote_msgs, 0);
        assert!(!stats.commit_log.contains_key(&NodeId(0)));
    }

    #[test]
    fn measure_round_examples() {
        let two = SimTime::from_millis(2000);
        let t = SimTime::from_millis(1234);
        let m = measure_round(Some(&[t, t, t]), SimTime::from_millis(300), two, two);
        assert_eq!(m.d, Some(SimTime::ZERO));
        assert!(m.conditions_held);

        let short = SimTime::from_millis(100);
        let m = measure_round(Some(&[t, t]), SimTime::from_millis(300), short, short);
        assert!(!m.conditions_held);

        let m = measure_round(None, SimTime::ZERO, two, two);
        assert_eq!(m.d, None);
        assert!(!m.conditions_held);
    }

    #[test]
    fn sweep_grid() {
        let p = sweep_points(SimTime::ZERO, SimTime::from_millis(4000), SimTime::from_millis(100)).unwrap();
        assert_eq!(p.len(), 41);
        assert_eq!(p[40], SimTime::from_millis(4000));
        let one = sweep_points(
            SimTime::from_millis(700),
            SimTime::from_millis(700),
            SimTime::from_millis(100),
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert!(sweep_points(SimTime::ZERO, SimTime::ZERO, SimTime::ZERO).is_err());
    }

    #[test]
    fn invalid_scenarios() {
        assert!(Scenario::new(3, constant(1)).validate().is_err());
        let s = Scenario::new(4, constant(1)).with_faults([FaultSpec::new(4, Behavior::Crash)]);
        assert!(s.validate().is_err());
        let s = Scenario::new(4, constant(1)).with_faults([
            FaultSpec::new(1, Behavior::Crash),
            FaultSpec::new(1, Behavior::DoubleVote),
        ]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn spread_crash_ids() {
        let ids: Vec<u32> = spread_crashes(21, 6).iter().map(|f| f.node.0).collect();
        assert_eq!(ids, vec![0, 3, 7, 10, 14, 17]);
        assert!(spread_crashes(21, 0).is_empty());
    }
}
