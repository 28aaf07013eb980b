//! One replica's automaton.
//!
//! The replica is sans-io: handlers take the current virtual time and the
//! shared block store, mutate state, and leave outbound messages, timer
//! requests and observable events in queues that the driver drains.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    check_hash, largest_class, Block, BlockStore, Body, Digest, Message, NodeId, QuorumParams, Tx, VoteClass, VoteKind,
    VotePayload,
};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ReplicaConfig {
    pub id: NodeId,
    pub quorum: QuorumParams,
    pub propose_timeout: SimTime,
    pub vote_timeout: SimTime,
    pub txs_per_block: usize,
    /// Check that a proposal's justification is a quorum for its parent.
    pub verify_justification: bool,
}

impl ReplicaConfig {
    pub fn new(id: NodeId, quorum: QuorumParams, propose_timeout: SimTime, vote_timeout: SimTime) -> Self {
        ReplicaConfig {
            id,
            quorum,
            propose_timeout,
            vote_timeout,
            txs_per_block: 2,
            verify_justification: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Ready,
    Process,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    Propose,
    Vote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerRequest {
    pub kind: TimerKind,
    pub round: u64,
    pub deadline: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutcomeKind {
    Committed,
    VoteFailed,
    VoteTimedOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RoundOutcome {
    pub round: u64,
    pub kind: OutcomeKind,
    pub committed_block: Option<Digest>,
    pub new_candidate: Option<Digest>,
}

/// Things a driver may want to record. Emitted in the order they happen.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ReplicaEvent {
    /// Entered `ready` for `round`, or re-entered it after the candidate
    /// changed through a late quorum.
    Ready {
        round: u64,
        candidate: Digest,
        at: SimTime,
    },
    Accepted {
        round: u64,
        block: Digest,
        at: SimTime,
    },
    Committed {
        block: Digest,
        height: u64,
        at: SimTime,
    },
    Outcome {
        outcome: RoundOutcome,
        at: SimTime,
    },
    /// A quorum asked this replica to commit a block that does not extend its
    /// chain. Only reachable when the fault assumptions are broken.
    Conflict {
        height: u64,
        ours: Digest,
        theirs: Digest,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub message: Message,
    pub destinations: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplicaError {
    #[error("round {round} started while a block is being processed")]
    NotReady { round: u64 },
    #[error("{id} is not the leader of round {round}")]
    NotLeader { id: NodeId, round: u64 },
}

/// Why an incoming message was not stored.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("proposal not from the round's leader")]
    WrongProposer,
    #[error("block hash does not match its contents")]
    BadHash,
    #[error("justification is not a quorum for the parent")]
    BadJustification,
    #[error("message for round {got} arrived in round {current}")]
    StaleRound { got: u64, current: u64 },
    #[error("already accepted a block this round")]
    AlreadyAccepted,
    #[error("already sent a timeout vote this round")]
    RoundTimedOut,
    #[error("block height {got}, expected {expected}")]
    WrongHeight { got: u64, expected: u64 },
    #[error("block does not extend the candidate")]
    WrongParent,
    #[error("malformed vote")]
    Malformed,
    #[error("sender does not match voter")]
    ForgedSender,
    #[error("duplicate")]
    Duplicate,
    #[error("vote names an unknown block")]
    UnknownBlock,
    #[error("vote is for a block at or below the candidate height")]
    StaleVote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Handled {
    Accepted,
    Stored,
    /// Kept aside until the replica reaches the block's round or height.
    Parked,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Replica {
    cfg: ReplicaConfig,
    round: u64,
    phase: Phase,
    candidate: Arc<Block>,
    candidate_qc: Vec<VotePayload>,
    committed: Vec<Arc<Block>>,
    in_set: BTreeSet<Message>,
    tally: BTreeMap<VoteClass, BTreeSet<NodeId>>,
    parked: BTreeSet<Message>,
    out_set: Vec<Message>,
    propose_deadline: Option<SimTime>,
    vote_deadline: Option<SimTime>,
    accepted: Option<Digest>,
    timed_out: bool,
    started: bool,
    diverged: bool,
    timers: Vec<TimerRequest>,
    events: Vec<ReplicaEvent>,
}

impl Replica {
    /// A replica at round 0 with `genesis` as both committed tip and candidate.
    pub fn new(cfg: ReplicaConfig, genesis: Arc<Block>) -> Self {
        Replica {
            cfg,
            round: 0,
            phase: Phase::Ready,
            candidate: genesis.clone(),
            candidate_qc: Vec::new(),
            committed: vec![genesis],
            in_set: BTreeSet::new(),
            tally: BTreeMap::new(),
            parked: BTreeSet::new(),
            out_set: Vec::new(),
            propose_deadline: None,
            vote_deadline: None,
            accepted: None,
            timed_out: false,
            started: false,
            diverged: false,
            timers: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.cfg.id
    }
    pub fn config(&self) -> &ReplicaConfig {
        &self.cfg
    }
    pub fn round(&self) -> u64 {
        self.round
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn candidate(&self) -> &Arc<Block> {
        &self.candidate
    }
    pub fn candidate_height(&self) -> u64 {
        self.candidate.height
    }
    pub fn committed(&self) -> &[Arc<Block>] {
        &self.committed
    }
    pub fn in_set(&self) -> &BTreeSet<Message> {
        &self.in_set
    }
    pub fn out_set(&self) -> &[Message] {
        &self.out_set
    }
    pub fn propose_deadline(&self) -> Option<SimTime> {
        self.propose_deadline
    }
    pub fn vote_deadline(&self) -> Option<SimTime> {
        self.vote_deadline
    }
    pub fn accepted(&self) -> Option<Digest> {
        self.accepted
    }
    pub fn has_timed_out(&self) -> bool {
        self.timed_out
    }
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Whether `msg` would be rejected now and at every later point. Rounds
    /// and the candidate height never decrease, so a stale message stays
    /// stale, and a message already held is either still held or pruned as
    /// stale.
    pub fn would_always_reject(&self, msg: &Message, store: &BlockStore) -> bool {
        if self.in_set.contains(msg) {
            return true;
        }
        match &msg.body {
            Body::NewBlock(b) => b.round < self.round,
            Body::Vote(v) => match v.kind {
                VoteKind::Timeout => v.round < self.round,
                VoteKind::Block => {
                    v.round < self.round
                        && v.candidate_target
                            .and_then(|d| store.get(&d))
                            .is_some_and(|b| b.height <= self.candidate.height)
                }
            },
        }
    }

    /// Hashes the replica's state with deadlines taken relative to `now`, so
    /// that states differing only by a time shift hash alike.
    pub fn hash_shifted<H: Hasher>(&self, now: SimTime, h: &mut H) {
        let rel = |d: Option<SimTime>| d.map(|d| d.saturating_sub(now));
        (
            self.round,
            self.phase,
            &self.candidate.hash,
            &self.candidate_qc,
            self.committed.iter().map(|b| b.hash).collect::<Vec<_>>(),
            &self.in_set,
            &self.parked,
            &self.out_set,
        )
            .hash(h);
        (
            rel(self.propose_deadline),
            rel(self.vote_deadline),
            self.accepted,
            self.timed_out,
            self.started,
            self.diverged,
            &self.timers,
            &self.events,
        )
            .hash(h);
    }

    fn is_leader(&self, round: u64) -> bool {
        self.cfg.quorum.leader(round) == self.cfg.id
    }

    /// Enters round 0. Idempotent.
    pub fn start(&mut self, now: SimTime, store: &mut BlockStore) {
        if self.started {
            return;
        }
        self.started = true;
        self.start_round(now, store).expect("a fresh replica is ready");
        self.progress(now, store);
    }

    /// Arms the propose timer, or proposes when this replica leads the round.
    pub fn start_round(&mut self, now: SimTime, store: &mut BlockStore) -> Result<(), ReplicaError> {
        if self.phase != Phase::Ready {
            return Err(ReplicaError::NotReady { round: self.round });
        }
        self.events.push(ReplicaEvent::Ready {
            round: self.round,
            candidate: self.candidate.hash,
            at: now,
        });
        if self.is_leader(self.round) {
            let block = self.propose(store)?;
            self.accept(block, now);
        } else {
            self.arm(TimerKind::Propose, now);
        }
        Ok(())
    }

    /// Builds the next block on the candidate and queues its NEW-BLOCK.
    pub fn propose(&mut self, store: &mut BlockStore) -> Result<Arc<Block>, ReplicaError> {
        if !self.is_leader(self.round) {
            log::debug!(
                "{} asked to propose in round {} it does not lead",
                self.cfg.id,
                self.round
            );
            return Err(ReplicaError::NotLeader {
                id: self.cfg.id,
                round: self.round,
            });
        }
        if self.phase != Phase::Ready {
            return Err(ReplicaError::NotReady { round: self.round });
        }
        let height = self.candidate.height + 1;
        let txs = (0..self.cfg.txs_per_block).map(|i| Tx::workload(height, i)).collect();
        let block = Arc::new(Block::new(
            height,
            self.round,
            self.cfg.id,
            self.candidate.hash,
            txs,
            self.candidate_qc.clone(),
        ));
        store.insert(block.clone());
        self.out_set.push(Message::new_block(block.clone()));
        Ok(block)
    }

    fn arm(&mut self, kind: TimerKind, now: SimTime) {
        let (timeout, slot) = match kind {
            TimerKind::Propose => (self.cfg.propose_timeout, &mut self.propose_deadline),
            TimerKind::Vote => (self.cfg.vote_timeout, &mut self.vote_deadline),
        };
        let deadline = now + timeout;
        *slot = Some(deadline);
        self.timers.push(TimerRequest {
            kind,
            round: self.round,
            deadline,
        });
    }

    /// Dispatches on message kind and then runs any transitions it enabled.
    pub fn handle_message(
        &mut self,
        msg: &Message,
        now: SimTime,
        store: &mut BlockStore,
    ) -> Result<Handled, Rejection> {
        let r = match &msg.body {
            Body::NewBlock(_) => self.handle_new_block(msg, now, store),
            Body::Vote(v) if v.kind == VoteKind::Timeout => self.handle_timeout_msg(msg),
            Body::Vote(_) => self.handle_vote(msg, store),
        };
        self.progress(now, store);
        r
    }

    /// Validates a proposal and, if it is acceptable now, votes for it.
    pub fn handle_new_block(
        &mut self,
        msg: &Message,
        now: SimTime,
        store: &mut BlockStore,
    ) -> Result<Handled, Rejection> {
        let Body::NewBlock(block) = &msg.body else {
            return Err(Rejection::Malformed);
        };
        if msg.sender != block.proposer || !self.is_leader_of(block.proposer, block.round) {
            return Err(Rejection::WrongProposer);
        }
        if !check_hash(block) {
            return Err(Rejection::BadHash);
        }
        if block.round < self.round {
            return Err(Rejection::StaleRound {
                got: block.round,
                current: self.round,
            });
        }
        if self.cfg.verify_justification && !self.justifies(block, store) {
            return Err(Rejection::BadJustification);
        }
        store.insert(block.clone());
        if block.round > self.round {
            self.parked.insert(msg.clone());
            return Ok(Handled::Parked);
        }
        if self.accepted.is_some() {
            return Err(Rejection::AlreadyAccepted);
        }
        if self.timed_out {
            return Err(Rejection::RoundTimedOut);
        }
        let expected = self.candidate.height + 1;
        if block.height > expected {
            self.parked.insert(msg.clone());
            return Ok(Handled::Parked);
        }
        if block.height < expected {
            return Err(Rejection::WrongHeight {
                got: block.height,
                expected,
            });
        }
        if block.parent_hash != self.candidate.hash {
            return Err(Rejection::WrongParent);
        }
        self.accept(block.clone(), now);
        Ok(Handled::Accepted)
    }

    fn is_leader_of(&self, node: NodeId, round: u64) -> bool {
        self.cfg.quorum.leader(round) == node
    }

    fn justifies(&self, block: &Block, store: &BlockStore) -> bool {
        if store.get(&block.parent_hash).is_some_and(|p| p.is_genesis()) {
            return true;
        }
        let mut classes: BTreeMap<VoteClass, BTreeSet<NodeId>> = BTreeMap::new();
        for v in &block.justification {
            if v.kind == VoteKind::Block && v.is_well_formed() && v.candidate_target == Some(block.parent_hash) {
                classes.entry(v.class()).or_default().insert(v.voter);
            }
        }
        classes.values().any(|s| s.len() >= self.cfg.quorum.threshold)
    }

    fn accept(&mut self, block: Arc<Block>, now: SimTime) {
        debug_assert_eq!(self.phase, Phase::Ready);
        let vote = VotePayload::block(self.cfg.id, self.round, self.candidate.hash, block.hash);
        self.events.push(ReplicaEvent::Accepted {
            round: self.round,
            block: block.hash,
            at: now,
        });
        self.in_set.insert(Message::new_block(block.clone()));
        self.phase = Phase::Process;
        self.accepted = Some(block.hash);
        self.propose_deadline = None;
        self.record(Message::vote(vote));
        self.out_set.push(Message::vote(vote));
        self.arm(TimerKind::Vote, now);
    }

    fn record(&mut self, msg: Message) {
        if let Body::Vote(v) = &msg.body {
            self.tally.entry(v.class()).or_default().insert(v.voter);
        }
        self.in_set.insert(msg);
    }

    /// Stores a block vote for the current round's block or for any block
    /// above the candidate height (the catch-up path).
    pub fn handle_vote(&mut self, msg: &Message, store: &BlockStore) -> Result<Handled, Rejection> {
        let Body::Vote(v) = &msg.body else {
            return Err(Rejection::Malformed);
        };
        if !v.is_well_formed() || v.kind != VoteKind::Block {
            return Err(Rejection::Malformed);
        }
        if v.voter != msg.sender {
            return Err(Rejection::ForgedSender);
        }
        if self.in_set.contains(msg) {
            return Err(Rejection::Duplicate);
        }
        let target = v.candidate_target.expect("well-formed block vote");
        let Some(block) = store.get(&target) else {
            return Err(Rejection::UnknownBlock);
        };
        let for_accepted = v.round == self.round && self.accepted == Some(target);
        if !for_accepted && block.height <= self.candidate.height {
            return Err(Rejection::StaleVote);
        }
        self.record(msg.clone());
        Ok(Handled::Stored)
    }

    /// Stores a timeout vote unless this replica already accepted a block in
    /// that round.
    pub fn handle_timeout_msg(&mut self, msg: &Message) -> Result<Handled, Rejection> {
        let Body::Vote(v) = &msg.body else {
            return Err(Rejection::Malformed);
        };
        if !v.is_well_formed() || v.kind != VoteKind::Timeout {
            return Err(Rejection::Malformed);
        }
        if v.voter != msg.sender {
            return Err(Rejection::ForgedSender);
        }
        if self.in_set.contains(msg) {
            return Err(Rejection::Duplicate);
        }
        if v.round < self.round {
            return Err(Rejection::StaleRound {
                got: v.round,
                current: self.round,
            });
        }
        if v.round == self.round && self.accepted.is_some() {
            return Err(Rejection::AlreadyAccepted);
        }
        self.record(msg.clone());
        Ok(Handled::Stored)
    }

    /// Propose timer expiry: vote TIMEOUT if no proposal was accepted.
    pub fn on_propose_timer(&mut self, round: u64, deadline: SimTime, now: SimTime, store: &mut BlockStore) {
        if round != self.round || self.propose_deadline != Some(deadline) {
            return;
        }
        self.propose_deadline = None;
        if self.phase == Phase::Ready && self.accepted.is_none() && !self.timed_out {
            let vote = VotePayload::timeout(self.cfg.id, self.round);
            self.timed_out = true;
            self.record(Message::vote(vote));
            self.out_set.push(Message::vote(vote));
            // Without this timer a replica whose TIMEOUT never reaches a
            // quorum would wait forever.
            self.arm(TimerKind::Vote, now);
        }
        self.progress(now, store);
    }

    /// Vote timer expiry: give up on the round without committing.
    pub fn on_vote_timer(&mut self, round: u64, deadline: SimTime, now: SimTime, store: &mut BlockStore) {
        if round != self.round || self.vote_deadline != Some(deadline) {
            return;
        }
        self.vote_deadline = None;
        let kind = if self.accepted.is_some() {
            OutcomeKind::VoteFailed
        } else if self.timed_out {
            OutcomeKind::VoteTimedOut
        } else {
            return;
        };
        self.finish(
            RoundOutcome {
                round,
                kind,
                committed_block: None,
                new_candidate: None,
            },
            now,
        );
        self.advance(round + 1, now, store);
        self.progress(now, store);
    }

    /// Applies quorums and parked proposals until nothing changes.
    fn progress(&mut self, now: SimTime, store: &mut BlockStore) {
        loop {
            if let Some((class, voters)) = self.best_quorum(store) {
                match class.kind {
                    VoteKind::Block => self.commit_quorum(class, voters, now, store),
                    VoteKind::Timeout => {
                        self.finish(
                            RoundOutcome {
                                round: class.round,
                                kind: OutcomeKind::VoteTimedOut,
                                committed_block: None,
                                new_candidate: None,
                            },
                            now,
                        );
                        self.advance(class.round + 1, now, store);
                    }
                }
                continue;
            }
            if self.retry_parked(now) {
                continue;
            }
            break;
        }
    }

    /// The largest vote class that reaches the threshold and can still act.
    pub fn try_commit(&self, store: &BlockStore) -> Option<(VoteClass, BTreeSet<NodeId>)> {
        self.best_quorum(store)
    }

    fn best_quorum(&self, store: &BlockStore) -> Option<(VoteClass, BTreeSet<NodeId>)> {
        let threshold = self.cfg.quorum.threshold;
        let actionable = self.tally.iter().filter(|(class, voters)| {
            voters.len() >= threshold
                && match class.kind {
                    VoteKind::Block => {
                        let block = class.candidate_target.and_then(|d| store.get(&d));
                        block.is_some_and(|b| {
                            b.height > self.candidate.height && class.commit_target == Some(b.parent_hash)
                        })
                    }
                    VoteKind::Timeout => {
                        class.round > self.round || (class.round == self.round && self.accepted.is_none())
                    }
                }
        });
        largest_class(actionable).map(|(c, s)| (*c, s.clone()))
    }

    fn commit_quorum(&mut self, class: VoteClass, voters: BTreeSet<NodeId>, now: SimTime, store: &mut BlockStore) {
        let new_candidate = store
            .get(&class.candidate_target.expect("block class"))
            .expect("actionable class names a stored block")
            .clone();
        let target = store
            .get(&new_candidate.parent_hash)
            .expect("parent of a stored block is stored")
            .clone();
        self.commit(&target, now, store);
        self.candidate = new_candidate.clone();
        self.candidate_qc = voters.iter().map(|v| class.vote_from(*v)).collect();
        self.finish(
            RoundOutcome {
                round: class.round,
                kind: OutcomeKind::Committed,
                committed_block: Some(target.hash),
                new_candidate: Some(new_candidate.hash),
            },
            now,
        );
        if class.round >= self.round {
            self.advance(class.round + 1, now, store);
        } else {
            // A late quorum for an earlier round moved the candidate while
            // this replica already sits in a later round.
            self.prune(store);
            if self.phase == Phase::Ready && !self.timed_out && self.accepted.is_none() {
                self.events.push(ReplicaEvent::Ready {
                    round: self.round,
                    candidate: self.candidate.hash,
                    at: now,
                });
                if !self.is_leader(self.round) {
                    self.arm(TimerKind::Propose, now);
                }
            }
        }
    }

    /// Appends `target` and any missing ancestors to the committed chain.
    fn commit(&mut self, target: &Arc<Block>, now: SimTime, store: &BlockStore) {
        let tip = self.committed.last().expect("genesis is committed").clone();
        let mut path = Vec::new();
        let mut cursor = target.clone();
        while cursor.height > tip.height {
            path.push(cursor.clone());
            match store.get(&cursor.parent_hash) {
                Some(p) => cursor = p.clone(),
                None => break,
            }
        }
        if cursor.hash != tip.hash {
            self.diverged = true;
            self.events.push(ReplicaEvent::Conflict {
                height: tip.height,
                ours: tip.hash,
                theirs: cursor.hash,
            });
            log::error!(
                "{} asked to commit {} which does not extend {}",
                self.cfg.id,
                target.hash,
                tip.hash
            );
            // Report what a quorum forced on us so the safety checker sees it,
            // but never rewrite the local chain.
            for b in path.iter().rev() {
                self.events.push(ReplicaEvent::Committed {
                    block: b.hash,
                    height: b.height,
                    at: now,
                });
            }
            return;
        }
        for b in path.into_iter().rev() {
            self.events.push(ReplicaEvent::Committed {
                block: b.hash,
                height: b.height,
                at: now,
            });
            self.committed.push(b);
        }
    }

    fn finish(&mut self, outcome: RoundOutcome, now: SimTime) {
        self.events.push(ReplicaEvent::Outcome { outcome, at: now });
    }

    fn advance(&mut self, round: u64, now: SimTime, store: &mut BlockStore) {
        debug_assert!(round > self.round);
        self.round = round;
        self.phase = Phase::Ready;
        self.accepted = None;
        self.timed_out = false;
        self.propose_deadline = None;
        self.vote_deadline = None;
        self.prune(store);
        self.start_round(now, store).expect("advance leaves the replica ready");
    }

    /// Drops messages that can no longer matter.
    fn prune(&mut self, store: &BlockStore) {
        let round = self.round;
        let height = self.candidate.height;
        self.in_set.retain(|m| match &m.body {
            Body::NewBlock(b) => b.round >= round,
            Body::Vote(v) => match v.kind {
                VoteKind::Timeout => v.round >= round,
                VoteKind::Block => v
                    .candidate_target
                    .and_then(|d| store.get(&d))
                    .is_some_and(|b| b.height > height),
            },
        });
        self.tally.clear();
        for m in &self.in_set {
            if let Body::Vote(v) = &m.body {
                self.tally.entry(v.class()).or_default().insert(v.voter);
            }
        }
        self.parked.retain(|m| m.round() >= round);
    }

    fn retry_parked(&mut self, now: SimTime) -> bool {
        if self.phase != Phase::Ready || self.timed_out {
            return false;
        }
        let due: Vec<Message> = self
            .parked
            .iter()
            .filter(|m| m.round() == self.round)
            .cloned()
            .collect();
        for m in due {
            let Body::NewBlock(b) = &m.body else { continue };
            if b.height > self.candidate.height + 1 {
                continue;
            }
            self.parked.remove(&m);
            if b.height == self.candidate.height + 1 && b.parent_hash == self.candidate.hash {
                self.accept(b.clone(), now);
                return true;
            }
        }
        false
    }

    /// Hands every queued message to the network, addressed to all other nodes.
    pub fn drain_out(&mut self) -> Vec<Outbound> {
        let others: BTreeSet<NodeId> = self.cfg.quorum.nodes().filter(|n| *n != self.cfg.id).collect();
        self.out_set
            .drain(..)
            .map(|message| Outbound {
                message,
                destinations: others.clone(),
            })
            .collect()
    }

    pub fn drain_timers(&mut self) -> Vec<TimerRequest> {
        std::mem::take(&mut self.timers)
    }

    pub fn drain_events(&mut self) -> Vec<ReplicaEvent> {
        std::mem::take(&mut self.events)
    }

    /// Largest vote class in `in_set`, ignoring whether it can act.
    pub fn same_vote(&self) -> crate::model::SameVote {
        crate::model::same_vote(self.in_set.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quorum_params;

    const PT: SimTime = SimTime::from_millis(2000);

    struct Rig {
        store: BlockStore,
        replicas: Vec<Replica>,
    }

    fn rig(n: usize) -> Rig {
        let genesis = Arc::new(Block::genesis());
        let q = quorum_params(n).unwrap();
        Rig {
            store: BlockStore::with_genesis(genesis.clone()),
            replicas: (0..n as u32)
                .map(|i| Replica::new(ReplicaConfig::new(NodeId(i), q, PT, PT), genesis.clone()))
                .collect(),
        }
    }

    fn vote_from(r: &Replica) -> Message {
        r.out_set()
            .iter()
            .find(|m| m.as_vote().is_some())
            .cloned()
            .expect("a vote")
    }

    #[test]
    fn leader_proposes_and_others_arm_timers() {
        let mut rig = rig(4);
        rig.replicas[0].start(SimTime::ZERO, &mut rig.store);
        let out = rig.replicas[0].out_set();
        assert_eq!(out.len(), 2);
        let block = out[0].as_block().unwrap();
        assert_eq!(block.height, 1);
        assert_eq!(block.parent_hash, Block::genesis().hash);
        assert_eq!(rig.replicas[0].phase(), Phase::Process);

        rig.replicas[1].start(SimTime::ZERO, &mut rig.store);
        assert!(rig.replicas[1].out_set().is_empty());
        assert_eq!(rig.replicas[1].propose_deadline(), Some(PT));
        assert_eq!(
            rig.replicas[1].propose(&mut rig.store),
            Err(ReplicaError::NotLeader {
                id: NodeId(1),
                round: 0
            })
        );
    }

    #[test]
    fn start_round_while_processing_is_rejected() {
        let mut rig = rig(4);
        rig.replicas[0].start(SimTime::ZERO, &mut rig.store);
        assert_eq!(
            rig.replicas[0].start_round(SimTime::ZERO, &mut rig.store),
            Err(ReplicaError::NotReady { round: 0 })
        );
    }

    #[test]
    fn one_round_commits_with_three_of_four() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        for r in rig.replicas.iter_mut() {
            r.start(SimTime::ZERO, st);
        }
        let proposal = rig.replicas[0].out_set()[0].clone();
        let t = SimTime::from_millis(100);
        for i in 1..4 {
            assert_eq!(rig.replicas[i].handle_message(&proposal, t, st), Ok(Handled::Accepted));
        }
        let votes: Vec<Message> = rig.replicas.iter().map(vote_from).collect();

        // Two votes (own plus one) are not enough.
        let r1 = &mut rig.replicas[1];
        r1.handle_message(&votes[0], t, st).unwrap();
        assert_eq!(r1.round(), 0);
        assert_eq!(r1.handle_message(&votes[0], t, st), Err(Rejection::Duplicate));
        // The third distinct voter completes the quorum.
        r1.handle_message(&votes[2], t, st).unwrap();
        assert_eq!(r1.round(), 1);
        assert_eq!(r1.candidate().hash, proposal.as_block().unwrap().hash);
        assert_eq!(r1.committed().len(), 1, "genesis only: pipelined commit");
        let outcome = r1
            .drain_events()
            .into_iter()
            .find_map(|e| match e {
                ReplicaEvent::Outcome { outcome, .. } => Some(outcome),
                _ => None,
            })
            .unwrap();
        assert_eq!(outcome.kind, OutcomeKind::Committed);
        assert_eq!(outcome.committed_block, Some(Block::genesis().hash));
    }

    #[test]
    fn block_from_non_leader_is_rejected() {
        let mut rig = rig(4);
        let g = Block::genesis();
        let b = Arc::new(Block::new(1, 0, NodeId(2), g.hash, vec![], vec![]));
        let m = Message::new_block(b);
        let r = &mut rig.replicas[1];
        r.start(SimTime::ZERO, &mut rig.store);
        assert_eq!(
            r.handle_message(&m, SimTime::ZERO, &mut rig.store),
            Err(Rejection::WrongProposer)
        );
    }

    #[test]
    fn second_proposal_in_a_round_is_rejected() {
        let mut rig = rig(4);
        let g = Block::genesis();
        let b1 = Arc::new(Block::new(1, 0, NodeId(0), g.hash, vec![Tx::new("a")], vec![]));
        let b2 = Arc::new(Block::new(1, 0, NodeId(0), g.hash, vec![Tx::new("b")], vec![]));
        let r = &mut rig.replicas[1];
        r.start(SimTime::ZERO, &mut rig.store);
        let st = &mut rig.store;
        r.handle_message(&Message::new_block(b1), SimTime::ZERO, st).unwrap();
        assert_eq!(
            r.handle_message(&Message::new_block(b2), SimTime::ZERO, st),
            Err(Rejection::AlreadyAccepted)
        );
        let votes = r.out_set().iter().filter(|m| m.as_vote().is_some()).count();
        assert_eq!(votes, 1);
    }

    #[test]
    fn tampered_block_fails_hash_check() {
        let mut rig = rig(4);
        let g = Block::genesis();
        let mut b = Block::new(1, 0, NodeId(0), g.hash, vec![Tx::new("a")], vec![]);
        b.txs.push(Tx::new("evil"));
        let r = &mut rig.replicas[1];
        r.start(SimTime::ZERO, &mut rig.store);
        assert_eq!(
            r.handle_message(&Message::new_block(Arc::new(b)), SimTime::ZERO, &mut rig.store),
            Err(Rejection::BadHash)
        );
    }

    #[test]
    fn silent_leader_leads_to_timeout_quorum() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        for r in rig.replicas.iter_mut().skip(1) {
            r.start(SimTime::ZERO, st);
            r.on_propose_timer(0, PT, PT, st);
            assert!(r.has_timed_out());
        }
        let timeouts: Vec<Message> = rig.replicas[1..].iter().map(vote_from).collect();
        let r1 = &mut rig.replicas[1];
        r1.handle_message(&timeouts[1], PT, st).unwrap();
        assert_eq!(r1.round(), 0);
        r1.handle_message(&timeouts[2], PT, st).unwrap();
        assert_eq!(r1.round(), 1);
        assert!(r1.drain_events().iter().any(|e| matches!(
            e,
            ReplicaEvent::Outcome {
                outcome: RoundOutcome {
                    kind: OutcomeKind::VoteTimedOut,
                    round: 0,
                    ..
                },
                ..
            }
        )));
    }

    #[test]
    fn timeout_after_accept_is_dropped() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        rig.replicas[0].start(SimTime::ZERO, st);
        let proposal = rig.replicas[0].out_set()[0].clone();
        let r = &mut rig.replicas[1];
        r.start(SimTime::ZERO, st);
        r.handle_message(&proposal, SimTime::ZERO, st).unwrap();
        let t = Message::vote(VotePayload::timeout(NodeId(2), 0));
        assert_eq!(r.handle_message(&t, SimTime::ZERO, st), Err(Rejection::AlreadyAccepted));
    }

    #[test]
    fn vote_timer_fails_the_round_and_keeps_the_candidate() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        rig.replicas[0].start(SimTime::ZERO, st);
        let proposal = rig.replicas[0].out_set()[0].clone();
        let r = &mut rig.replicas[2];
        r.start(SimTime::ZERO, st);
        r.handle_message(&proposal, SimTime::ZERO, st).unwrap();
        r.on_vote_timer(0, PT, PT, st);
        assert_eq!(r.round(), 1);
        assert_eq!(r.candidate().hash, Block::genesis().hash);
        // Round 1 is led by node 1, so node 2 waits for a proposal again.
        assert_eq!(r.propose_deadline(), Some(PT + PT));
    }

    #[test]
    fn late_votes_catch_a_lagging_replica_up() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        for r in rig.replicas.iter_mut() {
            r.start(SimTime::ZERO, st);
        }
        let proposal = rig.replicas[0].out_set()[0].clone();
        for i in 1..3 {
            rig.replicas[i].handle_message(&proposal, SimTime::ZERO, st).unwrap();
        }
        let votes: Vec<Message> = rig.replicas[..3].iter().map(vote_from).collect();
        // Replica 3 never saw the proposal and timed out.
        let r3 = &mut rig.replicas[3];
        r3.on_propose_timer(0, PT, PT, st);
        for v in &votes {
            r3.handle_message(v, PT, st).unwrap();
        }
        assert_eq!(r3.round(), 1);
        assert_eq!(r3.candidate().hash, proposal.as_block().unwrap().hash);
    }

    #[test]
    fn future_proposal_is_parked_until_its_round() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        for r in rig.replicas.iter_mut() {
            r.start(SimTime::ZERO, st);
        }
        // Round 0 commits at replicas 0..3 except replica 2.
        let proposal = rig.replicas[0].out_set()[0].clone();
        for i in [1, 3] {
            rig.replicas[i].handle_message(&proposal, SimTime::ZERO, st).unwrap();
        }
        let votes: Vec<Message> = [0, 1, 3].iter().map(|&i| vote_from(&rig.replicas[i])).collect();
        let r1 = &mut rig.replicas[1];
        for v in &votes {
            let _ = r1.handle_message(v, SimTime::ZERO, st);
        }
        assert_eq!(r1.round(), 1);
        let next = r1
            .out_set()
            .iter()
            .find_map(|m| m.as_block().filter(|b| b.round == 1).cloned())
            .unwrap();
        assert_eq!(next.height, 2);
        assert_eq!(next.justification.len(), 3);

        let r2 = &mut rig.replicas[2];
        let t = SimTime::from_millis(10);
        assert_eq!(
            r2.handle_message(&Message::new_block(next.clone()), t, st),
            Ok(Handled::Parked)
        );
        r2.handle_message(&proposal, t, st).unwrap();
        for v in &votes {
            let _ = r2.handle_message(v, t, st);
        }
        assert_eq!(r2.round(), 1);
        assert_eq!(r2.accepted(), Some(next.hash));
    }

    #[test]
    fn forged_vote_and_unjustified_block_are_rejected() {
        let mut rig = rig(4);
        let st = &mut rig.store;
        let r = &mut rig.replicas[1];
        r.start(SimTime::ZERO, st);
        let g = Block::genesis();
        let forged = Message {
            sender: NodeId(3),
            body: Body::Vote(VotePayload::block(NodeId(2), 0, g.hash, g.hash)),
        };
        assert_eq!(
            r.handle_message(&forged, SimTime::ZERO, st),
            Err(Rejection::ForgedSender)
        );

        let b1 = Arc::new(Block::new(1, 0, NodeId(0), g.hash, vec![], vec![]));
        st.insert(b1.clone());
        let b2 = Arc::new(Block::new(2, 1, NodeId(1), b1.hash, vec![], vec![]));
        let m = Message::new_block(b2);
        assert_eq!(
            r.handle_message(&m, SimTime::ZERO, st),
            Err(Rejection::BadJustification)
        );
    }
}
