use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::crypto::SymKey;
use crate::lower::parse_data;
use crate::model::{MessageKind, NodeId, Outcome, SimTime, WireMessage};

/// Tally of how receivers handled a class of frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FrameCounts {
    pub accepted: u64,
    pub answered: u64,
    pub ignored: u64,
    pub rejected: u64,
}

impl FrameCounts {
    pub fn record(&mut self, outcome: &Outcome) {
        match outcome {
            Outcome::Accepted => self.accepted += 1,
            Outcome::Answered => self.answered += 1,
            Outcome::Ignored(_) => self.ignored += 1,
            Outcome::Rejected(_) => self.rejected += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.accepted + self.answered + self.ignored + self.rejected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SecurityStats {
    pub frames_injected: u64,
    pub frames_replayed: u64,
    pub frames_eavesdropped: u64,
    /// Adversary frames that changed protocol state at an honest node.
    pub forged_acceptances: u64,
    pub forged_by_kind: BTreeMap<String, u64>,
    /// Forged acceptances while the adversary held no harvested keys.
    pub forged_without_compromise: u64,
    pub adversary_outcomes: BTreeMap<String, FrameCounts>,
    pub compromised: Vec<String>,
    pub revoked: Vec<String>,
    pub harvested_keys: u64,
    /// Harvested keys tried against frames sent after the victim's revocation.
    pub post_revocation_attempts: u64,
    pub post_revocation_decrypts: u64,
    pub incidents: u64,
    /// Pair-wise keys honest nodes hold with identities no real node owns.
    pub fake_identity_keys: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct Captured {
    pub to: NodeId,
    pub msg: WireMessage,
    pub deliver_at: SimTime,
}

#[derive(Debug, Default)]
pub(crate) struct Adversary {
    pub eavesdrop_all: bool,
    pub links: BTreeSet<(NodeId, NodeId)>,
    pub captured: Vec<Captured>,
    pub fakes: BTreeMap<usize, NodeId>,
    pub used_ids: BTreeSet<NodeId>,
    pub compromised: BTreeMap<NodeId, SimTime>,
    pub harvested: BTreeMap<NodeId, Vec<SymKey>>,
    pub stats: SecurityStats,
}

fn link(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl Adversary {
    pub fn listen(&mut self, a: NodeId, b: NodeId) {
        self.links.insert(link(a, b));
    }

    pub fn hears(&self, a: NodeId, b: NodeId) -> bool {
        self.eavesdrop_all || self.links.contains(&link(a, b))
    }

    pub fn capture(&mut self, to: NodeId, msg: &WireMessage, deliver_at: SimTime) {
        self.stats.frames_eavesdropped += 1;
        self.captured.push(Captured { to, msg: msg.clone(), deliver_at });
    }

    /// Captured frames whose original delivery has already happened.
    pub fn replayable(&self, now: SimTime, kind: Option<MessageKind>) -> Vec<(NodeId, WireMessage)> {
        self.captured
            .iter()
            .filter(|c| c.deliver_at < now && kind.is_none_or(|k| c.msg.kind == k))
            .map(|c| (c.to, c.msg.clone()))
            .collect()
    }

    /// Nonce of the latest Hello overheard from `node`.
    pub fn overheard_hello_nonce(&self, node: NodeId) -> Option<crate::crypto::Nonce> {
        self.captured
            .iter()
            .rev()
            .filter(|c| c.msg.kind == MessageKind::Hello && c.msg.src == node)
            .find_map(|c| crate::lower::parse_hello(&c.msg.payload).ok().map(|(_, n)| n))
    }

    pub fn record_outcome(&mut self, kind: MessageKind, outcome: &Outcome) {
        self.stats.adversary_outcomes.entry(kind.name().to_string()).or_default().record(outcome);
        if *outcome == Outcome::Accepted {
            self.stats.forged_acceptances += 1;
            *self.stats.forged_by_kind.entry(kind.name().to_string()).or_default() += 1;
            if self.harvested.is_empty() {
                self.stats.forged_without_compromise += 1;
            }
        }
    }
}

/// The symmetric ciphertext a frame carries, if any.
pub(crate) fn ciphertext_of(msg: &WireMessage) -> Option<&[u8]> {
    match msg.kind {
        MessageKind::NodeKeyRequest
        | MessageKind::NodeKeyReply
        | MessageKind::RegionKeyDistribute
        | MessageKind::PairwiseVouch => Some(&msg.payload),
        MessageKind::Data => parse_data(&msg.payload).ok().map(|(_, _, ct)| ct),
        _ => None,
    }
}
