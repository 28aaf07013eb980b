//! Fault behaviors applied to a replica's outbound messages.
//!
//! Faulty nodes run the ordinary replica automaton; what they send is then
//! rewritten here. They never emit a message under another node's id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::model::{Block, BlockStore, Body, ConflictRelation, Digest, Message, NodeId, Tx, VoteKind, VotePayload};
use crate::replica::Outbound;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Behavior {
    /// Sends nothing for the whole run.
    Crash,
    /// Withholds its own proposals; otherwise honest.
    SilentLeader,
    /// As leader, sends one block to the lower half of the ids and a
    /// conflicting one to the upper half.
    Equivocate,
    /// Votes for every block it accepts and also for a conflicting sibling.
    DoubleVote,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [
        Behavior::Crash,
        Behavior::SilentLeader,
        Behavior::Equivocate,
        Behavior::DoubleVote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Crash => "crash",
            Behavior::SilentLeader => "silent_leader",
            Behavior::Equivocate => "equivocate",
            Behavior::DoubleVote => "double_vote",
        }
    }

    /// Whether the node can sign two conflicting statements.
    pub fn is_byzantine(self) -> bool {
        matches!(self, Behavior::Equivocate | Behavior::DoubleVote)
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown behavior {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FaultSpec {
    pub node: NodeId,
    pub behavior: Behavior,
}

impl FaultSpec {
    pub fn new(node: u32, behavior: Behavior) -> Self {
        FaultSpec {
            node: NodeId(node),
            behavior,
        }
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node.0, self.behavior)
    }
}

/// A message ready for the channel. When `restrict_to` is set the driver
/// sends to `destinations` and then narrows delivery with MISBEHAVE.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub message: Arc<Message>,
    pub destinations: BTreeSet<NodeId>,
    pub restrict_to: Option<BTreeSet<NodeId>>,
}

impl Transmission {
    fn plain(message: Message, destinations: BTreeSet<NodeId>) -> Self {
        Transmission {
            message: Arc::new(message),
            destinations,
            restrict_to: None,
        }
    }

    /// Who actually receives the message.
    pub fn receivers(&self) -> &BTreeSet<NodeId> {
        self.restrict_to.as_ref().unwrap_or(&self.destinations)
    }
}

fn double_spend(tx: &Tx) -> Tx {
    let mut payload = b"double-spend/".to_vec();
    payload.extend_from_slice(&tx.0);
    Tx(payload)
}

/// A block at the same height, round and parent as `block` whose first
/// transaction spends the same input. Returns the conflicting pair too.
pub fn conflicting_sibling(block: &Block) -> (Block, Option<(Tx, Tx)>) {
    let mut txs = block.txs.clone();
    let pair = match txs.first_mut() {
        Some(first) => {
            let other = double_spend(first);
            let pair = (first.clone(), other.clone());
            *first = other;
            Some(pair)
        }
        None => {
            txs.push(Tx(
                format!("double-spend/h{}/r{}", block.height, block.round).into_bytes()
            ));
            None
        }
    };
    let sibling = Block::new(
        block.height,
        block.round,
        block.proposer,
        block.parent_hash,
        txs,
        block.justification.clone(),
    );
    (sibling, pair)
}

/// Splits the other nodes by id into `[0, n/2)` and `[n/2, n)`.
pub fn equivocation_halves(n: usize, leader: NodeId) -> (BTreeSet<NodeId>, BTreeSet<NodeId>) {
    let half = (n / 2) as u32;
    let others = (0..n as u32).map(NodeId).filter(|x| *x != leader);
    others.partition(|x| x.0 < half)
}

/// What a leader's proposal turns into. `sibling` is needed for
/// [`Behavior::Equivocate`].
pub fn apply_on_propose(
    behavior: Option<Behavior>,
    proposal: &Arc<Block>,
    sibling: Option<&Arc<Block>>,
    n: usize,
) -> Vec<Transmission> {
    let others: BTreeSet<NodeId> = (0..n as u32).map(NodeId).filter(|x| *x != proposal.proposer).collect();
    match behavior {
        Some(Behavior::Crash) | Some(Behavior::SilentLeader) => Vec::new(),
        Some(Behavior::Equivocate) => {
            let sibling = sibling.expect("equivocation needs a sibling block");
            let (low, high) = equivocation_halves(n, proposal.proposer);
            vec![
                Transmission {
                    message: Arc::new(Message::new_block(proposal.clone())),
                    destinations: others.clone(),
                    restrict_to: Some(low),
                },
                Transmission {
                    message: Arc::new(Message::new_block(sibling.clone())),
                    destinations: others,
                    restrict_to: Some(high),
                },
            ]
        }
        Some(Behavior::DoubleVote) | None => {
            vec![Transmission::plain(Message::new_block(proposal.clone()), others)]
        }
    }
}

/// The votes actually sent in place of `vote`.
pub fn apply_on_vote(behavior: Option<Behavior>, vote: VotePayload, conflicting: Option<Digest>) -> Vec<VotePayload> {
    match behavior {
        Some(Behavior::Crash) => Vec::new(),
        Some(Behavior::DoubleVote) if vote.kind == VoteKind::Block => {
            let mut second = vote;
            second.candidate_target = Some(conflicting.expect("double vote needs a conflicting block"));
            vec![vote, second]
        }
        _ => vec![vote],
    }
}

/// Run-wide adversary state: who is faulty, which sibling blocks were made,
/// and the conflict relation they induce.
#[derive(Clone, Debug, Default)]
pub struct Adversary {
    n: usize,
    faults: BTreeMap<NodeId, Behavior>,
    siblings: BTreeMap<Digest, Digest>,
    conflicts: ConflictRelation,
}

impl Adversary {
    pub fn new(n: usize, faults: &[FaultSpec]) -> Self {
        Adversary {
            n,
            faults: faults.iter().map(|f| (f.node, f.behavior)).collect(),
            siblings: BTreeMap::new(),
            conflicts: ConflictRelation::default(),
        }
    }

    pub fn behavior(&self, node: NodeId) -> Option<Behavior> {
        self.faults.get(&node).copied()
    }

    pub fn is_faulty(&self, node: NodeId) -> bool {
        self.faults.contains_key(&node)
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.behavior(node) == Some(Behavior::Crash)
    }

    pub fn conflicts(&self) -> &ConflictRelation {
        &self.conflicts
    }

    fn sibling_of(&mut self, block: &Arc<Block>, store: &mut BlockStore) -> Arc<Block> {
        if let Some(d) = self.siblings.get(&block.hash) {
            return store.get(d).expect("siblings are stored").clone();
        }
        let (sibling, pair) = conflicting_sibling(block);
        let sibling = Arc::new(sibling);
        if let Some((a, b)) = pair {
            self.conflicts.insert(a, b);
        }
        store.insert(sibling.clone());
        self.siblings.insert(block.hash, sibling.hash);
        self.siblings.insert(sibling.hash, block.hash);
        sibling
    }

    /// Rewrites one outbound message of `from`.
    pub fn transform(&mut self, from: NodeId, out: Outbound, store: &mut BlockStore) -> Vec<Transmission> {
        let behavior = self.behavior(from);
        match (&out.message.body, behavior) {
            (_, Some(Behavior::Crash)) => Vec::new(),
            (Body::NewBlock(b), Some(Behavior::Equivocate)) => {
                let sibling = self.sibling_of(b, store);
                apply_on_propose(behavior, b, Some(&sibling), self.n)
            }
            (Body::NewBlock(b), _) => apply_on_propose(behavior, b, None, self.n),
            (Body::Vote(v), Some(Behavior::SilentLeader)) => {
                // Keep quiet about the block it withheld as well.
                let own_round = (v.round % self.n as u64) as u32 == from.0;
                if own_round {
                    Vec::new()
                } else {
                    vec![Transmission::plain(out.message, out.destinations)]
                }
            }
            (Body::Vote(v), Some(Behavior::DoubleVote)) if v.kind == VoteKind::Block => {
                let target = store
                    .get(&v.candidate_target.expect("block vote"))
                    .expect("voted block is stored")
                    .clone();
                let sibling = self.sibling_of(&target, store);
                apply_on_vote(behavior, *v, Some(sibling.hash))
                    .into_iter()
                    .map(|v| Transmission::plain(Message::vote(v), out.destinations.clone()))
                    .collect()
            }
            (Body::Vote(_), _) => vec![Transmission::plain(out.message, out.destinations)],
        }
    }
}
