//! Protocol-wide value types: node ids, quorum arithmetic, blocks, votes,
//! wire messages, and the same-vote grouping used for quorum detection.
//!
//! Everything here is immutable once built and cheap to share behind `Arc`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("node count must be at least 1")]
    NoNodes,
    #[error("byzantine tolerance needs at least 4 nodes, got {0}")]
    TooFewNodes(usize),
}

/// Index of a replica in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Node count, tolerated byzantine count and the vote threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QuorumParams {
    pub n: usize,
    pub f: usize,
    pub threshold: usize,
}

impl QuorumParams {
    pub fn new(n: usize) -> Result<Self, ModelError> {
        if n < 4 {
            return Err(ModelError::TooFewNodes(n));
        }
        let f = (n - 1) / 3;
        Ok(QuorumParams {
            n,
            f,
            threshold: 2 * f + 1,
        })
    }

    /// Round-robin leader of `round`.
    pub fn leader(&self, round: u64) -> NodeId {
        NodeId((round % self.n as u64) as u32)
    }

    /// Minimum overlap of any two threshold-sized vote sets.
    pub fn quorum_intersection(&self) -> usize {
        (2 * self.threshold).saturating_sub(self.n)
    }

    /// Largest number of byzantine voters for which two quorums always share
    /// an honest member. Equals `f` exactly when `n = 3f + 1`.
    pub fn max_safe_byzantine(&self) -> usize {
        self.quorum_intersection().saturating_sub(1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n as u32).map(NodeId)
    }
}

pub fn quorum_params(n: usize) -> Result<QuorumParams, ModelError> {
    QuorumParams::new(n)
}

pub fn leader_of(round: u64, n: usize) -> Result<NodeId, ModelError> {
    if n == 0 {
        return Err(ModelError::NoNodes);
    }
    Ok(NodeId((round % n as u64) as u32))
}

/// SHA-256 block digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

/// Opaque transaction payload.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tx(pub Vec<u8>);

impl Tx {
    pub fn new(payload: impl Into<Vec<u8>>) -> Self {
        Tx(payload.into())
    }

    /// The deterministic workload transaction `index` for a block at `height`.
    /// Failed rounds re-propose the same height, so pending transactions are
    /// carried over automatically.
    pub fn workload(height: u64, index: usize) -> Self {
        Tx(format!("tx/h{height}/{index}").into_bytes())
    }
}

impl fmt::Debug for Tx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tx({})", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VoteKind {
    Block,
    Timeout,
}

/// A vote `V(voter, B', B)`: commit the voter's candidate `B'` and make the
/// new block `B` the candidate. A timeout vote carries neither target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VotePayload {
    pub voter: NodeId,
    pub round: u64,
    pub kind: VoteKind,
    pub commit_target: Option<Digest>,
    pub candidate_target: Option<Digest>,
}

impl VotePayload {
    pub fn block(voter: NodeId, round: u64, commit_target: Digest, candidate_target: Digest) -> Self {
        VotePayload {
            voter,
            round,
            kind: VoteKind::Block,
            commit_target: Some(commit_target),
            candidate_target: Some(candidate_target),
        }
    }

    pub fn timeout(voter: NodeId, round: u64) -> Self {
        VotePayload {
            voter,
            round,
            kind: VoteKind::Timeout,
            commit_target: None,
            candidate_target: None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            VoteKind::Block => self.commit_target.is_some() && self.candidate_target.is_some(),
            VoteKind::Timeout => self.commit_target.is_none() && self.candidate_target.is_none(),
        }
    }

    pub fn class(&self) -> VoteClass {
        VoteClass {
            kind: self.kind,
            round: self.round,
            commit_target: self.commit_target,
            candidate_target: self.candidate_target,
        }
    }
}

/// The equality class of a vote: everything except the voter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoteClass {
    pub kind: VoteKind,
    pub round: u64,
    pub commit_target: Option<Digest>,
    pub candidate_target: Option<Digest>,
}

impl VoteClass {
    pub fn vote_from(&self, voter: NodeId) -> VotePayload {
        VotePayload {
            voter,
            round: self.round,
            kind: self.kind,
            commit_target: self.commit_target,
            candidate_target: self.candidate_target,
        }
    }

    /// Sort key for choosing among vote classes: larger first, then lower
    /// round, then the lexicographically smaller candidate digest.
    pub(crate) fn precedence(&self, size: usize) -> impl Ord {
        (
            std::cmp::Reverse(size),
            self.round,
            self.candidate_target,
            self.kind,
            self.commit_target,
        )
    }
}

/// A proposal at `height`, extending the block `parent_hash`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Block {
    pub hash: Digest,
    pub height: u64,
    pub round: u64,
    pub proposer: NodeId,
    pub parent_hash: Digest,
    pub txs: Vec<Tx>,
    /// The quorum of votes that made the parent a candidate.
    pub justification: Vec<VotePayload>,
}

impl Block {
    /// Builds a block and fills in its hash.
    pub fn new(
        height: u64,
        round: u64,
        proposer: NodeId,
        parent_hash: Digest,
        txs: Vec<Tx>,
        justification: Vec<VotePayload>,
    ) -> Self {
        let mut block = Block {
            hash: Digest::ZERO,
            height,
            round,
            proposer,
            parent_hash,
            txs,
            justification,
        };
        block.hash = compute_hash(&block);
        block
    }

    pub fn genesis() -> Self {
        Block::new(0, 0, NodeId(0), Digest::ZERO, Vec::new(), Vec::new())
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.parent_hash == Digest::ZERO
    }
}

/// Digest over a canonical serialization of every block field except `hash`.
pub fn compute_hash(block: &Block) -> Digest {
    let mut h = Sha256::new();
    h.update(b"lft2/block/v1");
    h.update(block.height.to_le_bytes());
    h.update(block.round.to_le_bytes());
    h.update(block.proposer.0.to_le_bytes());
    h.update(block.parent_hash.0);
    h.update((block.txs.len() as u64).to_le_bytes());
    for tx in &block.txs {
        h.update((tx.0.len() as u64).to_le_bytes());
        h.update(&tx.0);
    }
    h.update((block.justification.len() as u64).to_le_bytes());
    for v in &block.justification {
        h.update(v.voter.0.to_le_bytes());
        h.update(v.round.to_le_bytes());
        h.update([v.kind as u8]);
        for target in [v.commit_target, v.candidate_target] {
            match target {
                Some(d) => {
                    h.update([1]);
                    h.update(d.0);
                }
                None => h.update([0]),
            }
        }
    }
    Digest(h.finalize().into())
}

pub fn check_hash(block: &Block) -> bool {
    block.hash == compute_hash(block)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    NewBlock,
    Vote,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Body {
    NewBlock(Arc<Block>),
    /// Both block votes and timeout votes.
    Vote(VotePayload),
}

/// A signed wire message. `sender` stands in for the signature: the
/// simulation never lets one node emit a message under another's id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Message {
    pub sender: NodeId,
    pub body: Body,
}

impl Message {
    pub fn new_block(block: Arc<Block>) -> Self {
        Message {
            sender: block.proposer,
            body: Body::NewBlock(block),
        }
    }

    pub fn vote(vote: VotePayload) -> Self {
        Message {
            sender: vote.voter,
            body: Body::Vote(vote),
        }
    }

    pub fn kind(&self) -> MessageKind {
        match &self.body {
            Body::NewBlock(_) => MessageKind::NewBlock,
            Body::Vote(v) if v.kind == VoteKind::Block => MessageKind::Vote,
            Body::Vote(_) => MessageKind::Timeout,
        }
    }

    pub fn round(&self) -> u64 {
        match &self.body {
            Body::NewBlock(b) => b.round,
            Body::Vote(v) => v.round,
        }
    }

    pub fn as_vote(&self) -> Option<&VotePayload> {
        match &self.body {
            Body::Vote(v) => Some(v),
            Body::NewBlock(_) => None,
        }
    }

    pub fn as_block(&self) -> Option<&Arc<Block>> {
        match &self.body {
            Body::NewBlock(b) => Some(b),
            Body::Vote(_) => None,
        }
    }
}

/// Result of [`same_vote`]: the winning class and its distinct voters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SameVote {
    pub class: Option<VoteClass>,
    pub voters: BTreeSet<NodeId>,
}

impl SameVote {
    pub fn len(&self) -> usize {
        self.voters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voters.is_empty()
    }

    pub fn votes(&self) -> Vec<VotePayload> {
        match self.class {
            Some(c) => self.voters.iter().map(|v| c.vote_from(*v)).collect(),
            None => Vec::new(),
        }
    }
}

/// The largest set of identical votes among `messages`, counting each voter
/// once per class. Ties go to the lower round, then the smaller candidate
/// digest.
pub fn same_vote<'a, I>(messages: I) -> SameVote
where
    I: IntoIterator<Item = &'a Message>,
{
    let mut classes: BTreeMap<VoteClass, BTreeSet<NodeId>> = BTreeMap::new();
    for m in messages {
        if let Some(v) = m.as_vote() {
            classes.entry(v.class()).or_default().insert(v.voter);
        }
    }
    largest_class(classes.iter())
        .map(|(class, voters)| SameVote {
            class: Some(*class),
            voters: voters.clone(),
        })
        .unwrap_or_default()
}

pub(crate) fn largest_class<'a, I>(classes: I) -> Option<(&'a VoteClass, &'a BTreeSet<NodeId>)>
where
    I: IntoIterator<Item = (&'a VoteClass, &'a BTreeSet<NodeId>)>,
{
    classes
        .into_iter()
        .min_by_key(|(class, voters)| class.precedence(voters.len()))
}

/// Content-addressed block bodies. Stands in for block sync: any replica can
/// fetch a block it has seen referenced by digest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockStore {
    blocks: BTreeMap<Digest, Arc<Block>>,
}

impl BlockStore {
    pub fn with_genesis(genesis: Arc<Block>) -> Self {
        let mut s = BlockStore::default();
        s.insert(genesis);
        s
    }

    pub fn insert(&mut self, block: Arc<Block>) {
        debug_assert!(check_hash(&block));
        self.blocks.entry(block.hash).or_insert(block);
    }

    pub fn get(&self, hash: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(hash)
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values()
    }
}

/// Symmetric "conflicts-with" relation over transactions, e.g. two spends of
/// the same coin.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConflictRelation {
    pairs: BTreeSet<(Tx, Tx)>,
}

impl ConflictRelation {
    pub fn insert(&mut self, a: Tx, b: Tx) {
        if a <= b {
            self.pairs.insert((a, b));
        } else {
            self.pairs.insert((b, a));
        }
    }

    pub fn conflicts(&self, a: &Tx, b: &Tx) -> bool {
        let key = if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        self.pairs.contains(&key)
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(Tx, Tx)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_block() -> Block {
        let g = Block::genesis();
        Block::new(
            1,
            0,
            NodeId(0),
            g.hash,
            vec![Tx::workload(1, 0), Tx::workload(1, 1)],
            Vec::new(),
        )
    }

    #[test]
    fn hash_is_deterministic() {
        assert_eq!(sample_block().hash, sample_block().hash);
        assert_eq!(Block::genesis().hash, Block::genesis().hash);
        assert_ne!(Block::genesis().hash, Digest::ZERO);
    }

    #[test]
    fn one_transaction_changes_the_digest() {
        let a = sample_block();
        let mut txs = a.txs.clone();
        txs[1] = Tx::new("tx/h1/other");
        let b = Block::new(a.height, a.round, a.proposer, a.parent_hash, txs, Vec::new());
        assert_ne!(a.hash, b.hash);
    }

    #[test]
    fn check_hash_detects_tampering() {
        let b = sample_block();
        assert!(check_hash(&b));

        let mut tampered = b.clone();
        tampered.txs.push(Tx::new("injected"));
        assert!(!check_hash(&tampered));

        let mut reparented = b.clone();
        reparented.parent_hash = Digest([7; 32]);
        assert!(!check_hash(&reparented));
    }

    #[test]
    fn leader_schedule() {
        assert_eq!(leader_of(0, 4).unwrap(), NodeId(0));
        assert_eq!(leader_of(5, 4).unwrap(), NodeId(1));
        assert_eq!(leader_of(21, 21).unwrap(), NodeId(0));
        assert_eq!(leader_of(3, 0), Err(ModelError::NoNodes));
    }

    #[test]
    fn quorum_arithmetic() {
        let p = quorum_params(4).unwrap();
        assert_eq!((p.f, p.threshold), (1, 3));
        let p = quorum_params(21).unwrap();
        assert_eq!((p.f, p.threshold), (6, 13));
        let p = quorum_params(100).unwrap();
        assert_eq!((p.f, p.threshold), (33, 67));
        assert_eq!(quorum_params(3), Err(ModelError::TooFewNodes(3)));
    }

    #[test]
    fn intersection_bound_holds_only_for_3f_plus_1() {
        // Two quorums of 2f+1 share an honest node iff n = 3f+1.
        for n in 4..200 {
            let p = quorum_params(n).unwrap();
            let holds = p.quorum_intersection() > p.f;
            assert_eq!(holds, n == 3 * p.f + 1, "n={n}");
        }
        assert_eq!(quorum_params(21).unwrap().max_safe_byzantine(), 4);
        assert_eq!(quorum_params(10).unwrap().max_safe_byzantine(), 3);
    }

    fn vote_msg(voter: u32, round: u64, b1: u8, b2: u8) -> Message {
        Message::vote(VotePayload::block(
            NodeId(voter),
            round,
            Digest([b1; 32]),
            Digest([b2; 32]),
        ))
    }

    #[test]
    fn same_vote_examples() {
        assert!(same_vote(std::iter::empty()).is_empty());

        let msgs = vec![
            vote_msg(0, 1, 1, 2),
            vote_msg(1, 1, 1, 2),
            vote_msg(2, 1, 1, 2),
            vote_msg(3, 1, 1, 9),
        ];
        let g = same_vote(&msgs);
        assert_eq!(g.len(), 3);
        assert_eq!(g.class.unwrap().candidate_target, Some(Digest([2; 32])));

        let dup = vec![vote_msg(0, 1, 1, 2), vote_msg(0, 1, 1, 2)];
        assert_eq!(same_vote(&dup).len(), 1);
    }

    #[test]
    fn same_vote_tie_break_prefers_low_round_then_small_digest() {
        let msgs = vec![vote_msg(0, 2, 1, 1), vote_msg(1, 1, 1, 9)];
        assert_eq!(same_vote(&msgs).class.unwrap().round, 1);
        let msgs = vec![vote_msg(0, 1, 1, 9), vote_msg(1, 1, 1, 3)];
        assert_eq!(same_vote(&msgs).class.unwrap().candidate_target, Some(Digest([3; 32])));
    }

    #[test]
    fn timeout_votes_form_one_class_per_round() {
        let msgs: Vec<_> = (0..3)
            .map(|i| Message::vote(VotePayload::timeout(NodeId(i), 4)))
            .collect();
        let g = same_vote(&msgs);
        assert_eq!(g.len(), 3);
        assert_eq!(g.class.unwrap().kind, VoteKind::Timeout);
    }

    proptest! {
        #[test]
        fn leader_rotation_is_a_bijection(r in 0u64..1_000_000, n in 1usize..128) {
            let leaders: BTreeSet<_> = (r..r + n as u64).map(|x| leader_of(x, n).unwrap()).collect();
            prop_assert_eq!(leaders.len(), n);
            prop_assert!(leaders.iter().all(|l| l.index() < n));
        }

        #[test]
        fn same_vote_never_double_counts(
            votes in proptest::collection::vec((0u32..7, 0u64..3, 0u8..3, 0u8..3, any::<bool>()), 0..60)
        ) {
            let n = 7;
            let msgs: Vec<Message> = votes.iter().map(|&(voter, round, a, b, timeout)| {
                if timeout {
                    Message::vote(VotePayload::timeout(NodeId(voter), round))
                } else {
                    vote_msg(voter, round, a, b)
                }
            }).collect();
            let g = same_vote(&msgs);
            prop_assert!(g.len() <= n);
            // Brute force: no class has more distinct voters than the winner.
            for m in &msgs {
                let c = m.as_vote().unwrap().class();
                let distinct: BTreeSet<_> = msgs.iter()
                    .filter_map(|x| x.as_vote())
                    .filter(|v| v.class() == c)
                    .map(|v| v.voter)
                    .collect();
                prop_assert!(distinct.len() <= g.len());
            }
        }

        #[test]
        fn check_hash_true_iff_unmodified(extra in proptest::collection::vec(any::<u8>(), 0..16), h in 1u64..50) {
            let b = Block::new(h, h, NodeId(1), Digest([3; 32]), vec![Tx::workload(h, 0)], Vec::new());
            prop_assert!(check_hash(&b));
            let mut m = b.clone();
            m.txs.push(Tx(extra));
            prop_assert!(!check_hash(&m));
        }
    }
}
