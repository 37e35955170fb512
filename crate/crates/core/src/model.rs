//! Identities, key stores, binding tables and the wire vocabulary shared by
//! both protocol layers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostLedger, CostPhase};
use crate::crypto::{CryptoSuite, KeyKind, MacTag, Nonce, SymKey, KEY_LEN, NONCE_LEN, TAG_LEN};
use crate::lower::{ActorState, LowerState, RegionKeyRecord};
use crate::upper::{CertificateAuthority, SinkState, UpperState};

/// Simulation time in integer ticks.
pub type SimTime = u64;

/// 32-bit network-wide node identifier, rendered as `0xB42DA56E`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn to_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08X}", self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub u32);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

impl fmt::Debug for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Sensor,
    Actor,
    Sink,
}

/// Pre-loaded bootstrap keys. Both are deleted once used.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InitialKeys {
    pub k_ip: Option<SymKey>,
    pub k_in: Option<SymKey>,
}

impl InitialKeys {
    pub fn is_empty(&self) -> bool {
        self.k_ip.is_none() && self.k_in.is_none()
    }
}

/// Everything a node keeps in key memory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyStore {
    pub master: Option<SymKey>,
    pub pairwise: BTreeMap<NodeId, SymKey>,
    pub node_key: Option<SymKey>,
    pub region_key: Option<RegionKeyRecord>,
    pub initial: InitialKeys,
    pub session_keys: BTreeMap<NodeId, SymKey>,
}

impl KeyStore {
    /// Lower-layer keys in the storage itemization: pairwise keys, the node
    /// key and the region key. The retained master key is not included.
    pub fn lower_layer_key_count(&self) -> usize {
        self.pairwise.len() + usize::from(self.node_key.is_some()) + usize::from(self.region_key.is_some())
    }

    /// Setup material still held besides the counted keys (master and any
    /// initial keys).
    pub fn retained_setup_count(&self) -> usize {
        usize::from(self.master.is_some())
            + usize::from(self.initial.k_ip.is_some())
            + usize::from(self.initial.k_in.is_some())
    }

    /// All symmetric keys currently held, for compromise and audit.
    pub fn all_symmetric(&self) -> Vec<SymKey> {
        let mut out = Vec::new();
        out.extend(self.master.clone());
        out.extend(self.pairwise.values().cloned());
        out.extend(self.node_key.clone());
        out.extend(self.region_key.as_ref().map(|r| r.key.clone()));
        out.extend(self.initial.k_ip.clone());
        out.extend(self.initial.k_in.clone());
        out.extend(self.session_keys.values().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingEntry {
    pub number: u32,
    pub node_id: NodeId,
    pub key_info: SymKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("node {0} already present in binding table")]
    Duplicate(NodeId),
    #[error("no binding table for region {0}")]
    UnknownRegion(RegionId),
}

/// Result of [`BindingTable::remove`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoveOutcome {
    Removed,
    /// The id was not present; the table is unchanged.
    Absent,
}

/// Actor- and sink-held map from sensor id to node key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingTable {
    pub owner: NodeId,
    pub region: RegionId,
    entries: Vec<BindingEntry>,
}

impl BindingTable {
    pub fn new(owner: NodeId, region: RegionId) -> Self {
        BindingTable { owner, region, entries: Vec::new() }
    }

    pub fn entries(&self) -> &[BindingEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.entries.iter().any(|e| e.node_id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.node_id)
    }

    /// Appends `(id, key)` with the next ordinal.
    pub fn insert(&mut self, id: NodeId, key: SymKey) -> Result<u32, BindingError> {
        if self.contains(id) {
            return Err(BindingError::Duplicate(id));
        }
        let number = self.entries.last().map_or(1, |e| e.number + 1);
        self.entries.push(BindingEntry { number, node_id: id, key_info: key });
        Ok(number)
    }

    pub fn lookup(&self, id: NodeId) -> Option<&SymKey> {
        self.entries.iter().find(|e| e.node_id == id).map(|e| &e.key_info)
    }

    pub fn remove(&mut self, id: NodeId) -> RemoveOutcome {
        match self.entries.iter().position(|e| e.node_id == id) {
            Some(i) => {
                self.entries.remove(i);
                RemoveOutcome::Removed
            }
            None => RemoveOutcome::Absent,
        }
    }

    /// CSV with columns `Number,Node_ID,Key_Info`; keys appear as fingerprints.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Number,Node_ID,Key_Info\n");
        for e in &self.entries {
            s.push_str(&format!("{:03},{},{}\n", e.number, e.node_id, e.key_info.fingerprint()));
        }
        s
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_u32(self.owner.0);
        w.put_u32(self.region.0);
        w.put_u32(self.entries.len() as u32);
        for e in &self.entries {
            w.put_u32(e.number);
            w.put_u32(e.node_id.0);
            w.put_raw(e.key_info.bytes());
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, ParseError> {
        let owner = NodeId(r.u32("table.owner")?);
        let region = RegionId(r.u32("table.region")?);
        let n = r.u32("table.len")? as usize;
        if n > r.remaining() / (8 + KEY_LEN) {
            return Err(ParseError::new("table.len", "entry count exceeds buffer"));
        }
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let number = r.u32("table.entry.number")?;
            let node_id = NodeId(r.u32("table.entry.node_id")?);
            let key = SymKey::new(r.array::<KEY_LEN>("table.entry.key")?, KeyKind::Node);
            entries.push(BindingEntry { number, node_id, key_info: key });
        }
        Ok(BindingTable { owner, region, entries })
    }
}

/// Value copy of the sink's table for `region`, handed to a new actor.
pub fn binding_clone_for_actor(
    sink_tables: &BTreeMap<RegionId, BindingTable>,
    region: RegionId,
) -> Result<BindingTable, BindingError> {
    sink_tables.get(&region).cloned().ok_or(BindingError::UnknownRegion(region))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Hello,
    MacResponse,
    ActorAnnounce,
    NodeKeyRequest,
    NodeKeyReply,
    RegionKeyDistribute,
    RegionKeyAck,
    RegionKeyRenewalNotice,
    PairwiseVouch,
    BindingSync,
    BindingTransfer,
    CertExchange,
    CertChallenge,
    SessionKeyMsg,
    Data,
}

impl MessageKind {
    pub const ALL: [MessageKind; 15] = [
        MessageKind::Hello,
        MessageKind::MacResponse,
        MessageKind::ActorAnnounce,
        MessageKind::NodeKeyRequest,
        MessageKind::NodeKeyReply,
        MessageKind::RegionKeyDistribute,
        MessageKind::RegionKeyAck,
        MessageKind::RegionKeyRenewalNotice,
        MessageKind::PairwiseVouch,
        MessageKind::BindingSync,
        MessageKind::BindingTransfer,
        MessageKind::CertExchange,
        MessageKind::CertChallenge,
        MessageKind::SessionKeyMsg,
        MessageKind::Data,
    ];

    pub fn code(self) -> u8 {
        MessageKind::ALL.iter().position(|k| *k == self).unwrap() as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        MessageKind::ALL.get((code as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "Hello",
            MessageKind::MacResponse => "MacResponse",
            MessageKind::ActorAnnounce => "ActorAnnounce",
            MessageKind::NodeKeyRequest => "NodeKeyRequest",
            MessageKind::NodeKeyReply => "NodeKeyReply",
            MessageKind::RegionKeyDistribute => "RegionKeyDistribute",
            MessageKind::RegionKeyAck => "RegionKeyAck",
            MessageKind::RegionKeyRenewalNotice => "RegionKeyRenewalNotice",
            MessageKind::PairwiseVouch => "PairwiseVouch",
            MessageKind::BindingSync => "BindingSync",
            MessageKind::BindingTransfer => "BindingTransfer",
            MessageKind::CertExchange => "CertExchange",
            MessageKind::CertChallenge => "CertChallenge",
            MessageKind::SessionKeyMsg => "SessionKeyMsg",
            MessageKind::Data => "Data",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MessageKind::ALL.iter().copied().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// Ledger phase a frame of this kind is metered under.
    pub fn cost_phase(self) -> CostPhase {
        match self {
            MessageKind::Hello | MessageKind::MacResponse => CostPhase::Pairwise,
            MessageKind::ActorAnnounce | MessageKind::NodeKeyRequest | MessageKind::NodeKeyReply => {
                CostPhase::NodeKey
            }
            MessageKind::RegionKeyDistribute | MessageKind::RegionKeyAck => CostPhase::RegionKey,
            MessageKind::RegionKeyRenewalNotice => CostPhase::Renewal,
            MessageKind::PairwiseVouch => CostPhase::Addition,
            MessageKind::BindingSync | MessageKind::BindingTransfer => CostPhase::BindingSync,
            MessageKind::CertExchange | MessageKind::CertChallenge | MessageKind::SessionKeyMsg => {
                CostPhase::Upper
            }
            MessageKind::Data => CostPhase::Data,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Node(id) => write!(f, "{id}"),
            Destination::Broadcast => f.write_str("*"),
        }
    }
}

/// A typed protocol frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: Destination,
    pub payload: Vec<u8>,
    pub mac: Option<MacTag>,
}

const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed frame: field `{field}`: {reason}")]
pub struct ParseError {
    pub field: &'static str,
    pub reason: &'static str,
}

impl ParseError {
    pub fn new(field: &'static str, reason: &'static str) -> Self {
        ParseError { field, reason }
    }
}

/// Big-endian byte writer used for frames and payloads.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn put_u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn put_u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_raw(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    /// Length-prefixed (u32) octet string.
    pub fn put_bytes(&mut self, b: &[u8]) -> &mut Self {
        self.put_u32(b.len() as u32);
        self.put_raw(b)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Counterpart of [`Writer`]; every read names the field it was parsing.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], ParseError> {
        if self.remaining() < n {
            return Err(ParseError::new(field, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, field: &'static str) -> Result<u8, ParseError> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32, ParseError> {
        Ok(u32::from_be_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64, ParseError> {
        Ok(u64::from_be_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], ParseError> {
        Ok(self.take(N, field)?.try_into().unwrap())
    }

    pub fn bytes(&mut self, field: &'static str) -> Result<Vec<u8>, ParseError> {
        let n = self.u32(field)? as usize;
        Ok(self.take(n, field)?.to_vec())
    }

    pub fn nonce(&mut self, field: &'static str) -> Result<Nonce, ParseError> {
        Ok(Nonce(self.array::<NONCE_LEN>(field)?))
    }

    pub fn node_id(&mut self, field: &'static str) -> Result<NodeId, ParseError> {
        Ok(NodeId(self.u32(field)?))
    }

    pub fn finish(&self, field: &'static str) -> Result<(), ParseError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(ParseError::new(field, "trailing bytes"))
        }
    }
}

impl WireMessage {
    pub fn new(kind: MessageKind, src: NodeId, dst: Destination, payload: Vec<u8>) -> Self {
        WireMessage { kind, src, dst, payload, mac: None }
    }

    pub fn with_mac(mut self, tag: MacTag) -> Self {
        self.mac = Some(tag);
        self
    }

    /// Canonical encoding:
    /// `version | kind | src | dst-tag [dst] | len payload | mac-flag [mac]`.
    pub fn serialize(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u8(WIRE_VERSION).put_u8(self.kind.code()).put_u32(self.src.0);
        match self.dst {
            Destination::Node(id) => w.put_u8(0).put_u32(id.0),
            Destination::Broadcast => w.put_u8(1),
        };
        w.put_bytes(&self.payload);
        match &self.mac {
            Some(tag) => w.put_u8(1).put_raw(&tag.0),
            None => w.put_u8(0),
        };
        w.finish()
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, ParseError> {
        let mut r = Reader::new(bytes);
        if r.u8("version")? != WIRE_VERSION {
            return Err(ParseError::new("version", "unsupported version"));
        }
        let kind = MessageKind::from_code(r.u8("kind")?).ok_or(ParseError::new("kind", "unknown kind"))?;
        let src = r.node_id("src")?;
        let dst = match r.u8("dst")? {
            0 => Destination::Node(r.node_id("dst")?),
            1 => Destination::Broadcast,
            _ => return Err(ParseError::new("dst", "bad destination tag")),
        };
        let payload = r.bytes("payload")?;
        let mac = match r.u8("mac")? {
            0 => None,
            1 => Some(MacTag(r.array::<TAG_LEN>("mac")?)),
            _ => return Err(ParseError::new("mac", "bad flag")),
        };
        r.finish("mac")?;
        Ok(WireMessage { kind, src, dst, payload, mac })
    }
}

/// Timers a node can arm on itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timer {
    StartDiscovery,
    DeleteSetupKeys,
    AnnounceNodeKey,
    StartRegionKey,
    ReleaseInitialKey,
    RegionExpiry { issued_at: SimTime },
}

impl Timer {
    pub fn name(&self) -> &'static str {
        match self {
            Timer::StartDiscovery => "start-discovery",
            Timer::DeleteSetupKeys => "delete-setup-keys",
            Timer::AnnounceNodeKey => "announce-node-key",
            Timer::StartRegionKey => "start-region-key",
            Timer::ReleaseInitialKey => "release-initial-key",
            Timer::RegionExpiry { .. } => "region-expiry",
        }
    }

    /// Background timers do not hold [`crate::netsim::Network::settle`] open.
    pub fn is_background(&self) -> bool {
        matches!(self, Timer::RegionExpiry { .. })
    }
}

/// A node's full state, owned by the simulator loop.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    pub keys: KeyStore,
    pub lower: LowerState,
    pub actor: Option<ActorState>,
    pub upper: Option<UpperState>,
    pub sink: Option<SinkState>,
    /// Taken over by the adversary; runs no honest code.
    pub malicious: bool,
    /// Excluded from the network by the revocation procedure.
    pub revoked: bool,
}

impl Node {
    pub fn new(id: NodeId, role: Role) -> Self {
        Node {
            id,
            role,
            keys: KeyStore::default(),
            lower: LowerState::default(),
            actor: None,
            upper: None,
            sink: None,
            malicious: false,
            revoked: false,
        }
    }

    pub fn is_honest(&self) -> bool {
        !self.malicious && !self.revoked
    }

    pub fn is_active_actor(&self) -> bool {
        self.actor.as_ref().is_some_and(|a| a.is_active())
    }
}

/// How a node handled one delivered frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Protocol state changed because of the frame.
    Accepted,
    /// Replied without changing protocol state.
    Answered,
    Ignored(&'static str),
    Rejected(&'static str),
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Accepted => "accepted".into(),
            Outcome::Answered => "answered".into(),
            Outcome::Ignored(r) => format!("ignored:{r}"),
            Outcome::Rejected(r) => format!("rejected:{r}"),
        }
    }
}

/// Protocol parameters the handlers need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolParams {
    pub t_discovery: SimTime,
    pub region_key_ttl: SimTime,
}

/// Everything a handler may touch besides the node itself.
///
/// Frames and timers are collected here and dispatched by the simulator.
pub struct Ctx<'a> {
    pub suite: &'a dyn CryptoSuite,
    pub ledger: &'a mut CostLedger,
    pub rng: &'a mut ChaCha8Rng,
    pub ca: &'a CertificateAuthority,
    pub params: ProtocolParams,
    pub now: SimTime,
    /// Send time of the frame being handled (`now` for timers and calls).
    pub sent_at: SimTime,
    pub outbox: Vec<WireMessage>,
    pub timers: Vec<(SimTime, Timer)>,
    pub notes: Vec<String>,
}

impl<'a> Ctx<'a> {
    pub fn new(
        suite: &'a dyn CryptoSuite,
        ledger: &'a mut CostLedger,
        rng: &'a mut ChaCha8Rng,
        ca: &'a CertificateAuthority,
        params: ProtocolParams,
        now: SimTime,
    ) -> Self {
        Ctx {
            suite,
            ledger,
            rng,
            ca,
            params,
            now,
            sent_at: now,
            outbox: Vec::new(),
            timers: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn send(&mut self, msg: WireMessage) {
        self.outbox.push(msg);
    }

    pub fn compute(&mut self, node: NodeId, phase: CostPhase, units: u64) {
        self.ledger.add_computation(node, phase, units);
    }

    pub fn schedule(&mut self, at: SimTime, timer: Timer) {
        self.timers.push((at, timer));
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

/// Set of node ids; convenience alias used across modules.
pub type IdSet = BTreeSet<NodeId>;

#[cfg(test)]
mod tests {
    use super::*;

    fn key(prefix: [u8; 4]) -> SymKey {
        let mut b = [0u8; KEY_LEN];
        b[..4].copy_from_slice(&prefix);
        SymKey::new(b, KeyKind::Node)
    }

    fn sample_table() -> BindingTable {
        let mut t = BindingTable::new(NodeId(1), RegionId(0));
        t.insert(NodeId(0xB42DA56E), key([0xcd, 0x4f, 0x12, 0xa3])).unwrap();
        t.insert(NodeId(0x49EB19F8), key([0x8b, 0x49, 0xd7, 0x1a])).unwrap();
        t.insert(NodeId(0x7D3B4821), key([0x20, 0xb4, 0x7a, 0x3f])).unwrap();
        t
    }

    #[test]
    fn first_insert_gets_ordinal_one() {
        let mut t = BindingTable::new(NodeId(1), RegionId(0));
        assert_eq!(t.insert(NodeId(0xB42DA56E), key([0xcd, 0x4f, 0x12, 0xa3])).unwrap(), 1);
        assert_eq!(t.len(), 1);
        assert_eq!(t.to_csv(), "Number,Node_ID,Key_Info\n001,0xB42DA56E,0xcd4f12a3\n");
    }

    #[test]
    fn insert_lookup_duplicate() {
        let mut t = BindingTable::new(NodeId(1), RegionId(0));
        let k = key([1, 2, 3, 4]);
        t.insert(NodeId(5), k.clone()).unwrap();
        assert_eq!(t.lookup(NodeId(5)), Some(&k));
        assert_eq!(t.insert(NodeId(5), k), Err(BindingError::Duplicate(NodeId(5))));
        assert_eq!(t.lookup(NodeId(6)), None);
    }

    #[test]
    fn remove_middle_of_sample_table() {
        let mut t = sample_table();
        assert_eq!(t.remove(NodeId(0x49EB19F8)), RemoveOutcome::Removed);
        assert_eq!(t.lookup(NodeId(0x49EB19F8)), None);
        let rows: Vec<(u32, NodeId)> = t.entries().iter().map(|e| (e.number, e.node_id)).collect();
        assert_eq!(rows, vec![(1, NodeId(0xB42DA56E)), (3, NodeId(0x7D3B4821))]);
        assert_eq!(t.remove(NodeId(0x49EB19F8)), RemoveOutcome::Absent);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn clone_for_actor_has_value_semantics() {
        let mut tables = BTreeMap::new();
        tables.insert(RegionId(0), sample_table());
        tables.insert(RegionId(1), BindingTable::new(NodeId(2), RegionId(1)));
        let clone = binding_clone_for_actor(&tables, RegionId(0)).unwrap();
        assert_eq!(clone, tables[&RegionId(0)]);
        tables.get_mut(&RegionId(0)).unwrap().remove(NodeId(0xB42DA56E));
        assert_eq!(clone.len(), 3);
        assert!(binding_clone_for_actor(&tables, RegionId(1)).unwrap().is_empty());
        assert_eq!(
            binding_clone_for_actor(&tables, RegionId(9)),
            Err(BindingError::UnknownRegion(RegionId(9)))
        );
    }

    #[test]
    fn table_codec_round_trip() {
        let t = sample_table();
        let mut w = Writer::new();
        t.encode(&mut w);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes);
        assert_eq!(BindingTable::decode(&mut r).unwrap(), t);
        assert!(BindingTable::decode(&mut Reader::new(&bytes[..bytes.len() - 1])).is_err());
    }

    #[test]
    fn truncated_frame_names_field() {
        let m = WireMessage::new(MessageKind::Hello, NodeId(7), Destination::Broadcast, vec![1, 2, 3])
            .with_mac(MacTag([9; TAG_LEN]));
        let bytes = m.serialize();
        assert_eq!(WireMessage::deserialize(&bytes).unwrap(), m);
        let err = WireMessage::deserialize(&bytes[..bytes.len() - 2]).unwrap_err();
        assert_eq!(err.field, "mac");
        let err = WireMessage::deserialize(&bytes[..3]).unwrap_err();
        assert_eq!(err.field, "src");
        let mut bad = bytes.clone();
        bad[1] = 0xEE;
        assert_eq!(WireMessage::deserialize(&bad).unwrap_err().field, "kind");
        let mut long = bytes;
        long.push(0);
        assert_eq!(WireMessage::deserialize(&long).unwrap_err().reason, "trailing bytes");
    }

    #[test]
    fn node_id_renders_eight_hex_digits() {
        assert_eq!(NodeId(0xB42DA56E).to_string(), "0xB42DA56E");
        assert_eq!(NodeId(0x1).to_string(), "0x00000001");
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in MessageKind::ALL {
            assert_eq!(MessageKind::from_code(k.code()), Some(k));
            assert_eq!(MessageKind::parse(k.name()), Some(k));
        }
        assert_eq!(MessageKind::from_code(0), None);
    }
}
