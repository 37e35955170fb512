//! Symmetric-key protocol engine for the actor-sensor layer.
//!
//! Handlers in this module act on a single [`Node`] and talk to the rest of
//! the network only through the [`Ctx`] outbox, so they can be driven by the
//! simulator or called directly in tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cost::CostPhase;
use crate::crypto::{CryptoSuite, KeyKind, Nonce, SymKey, KEY_LEN, TAG_LEN};
use crate::model::{
    BindingTable, Ctx, Destination, MessageKind, Node, NodeId, Outcome, ParseError, Reader, RegionId, SimTime,
    Timer, WireMessage, Writer,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("node {0} was already pre-distributed")]
    AlreadyPredistributed(NodeId),
    #[error("node {0} holds no pre-distributed keys")]
    NotPredistributed(NodeId),
    #[error("node {0} has closed its discovery window")]
    DiscoveryClosed(NodeId),
    #[error("node {node} has not verified {peer}")]
    NotVerified { node: NodeId, peer: NodeId },
    #[error("discovery deadline {deadline} not reached at {now}")]
    DeadlineNotReached { deadline: SimTime, now: SimTime },
    #[error("node {node} is missing {what}")]
    MissingKey { node: NodeId, what: &'static str },
    #[error("node {0} is not an active actor")]
    NotAnActor(NodeId),
    #[error("node {0} is unknown")]
    UnknownNode(NodeId),
    #[error("actors are assumed uncompromised; cannot revoke actor {0}")]
    ActorRevocation(NodeId),
    #[error("node {node} is not bound to actor {actor}")]
    NotBound { node: NodeId, actor: NodeId },
    #[error("phase regression from {from:?} to {to:?}")]
    PhaseRegression { from: DiscoveryPhase, to: DiscoveryPhase },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
pub enum DiscoveryPhase {
    #[default]
    PreDistribution,
    Discovery,
    PairwiseGeneration,
    KeyDeletion,
    Done,
}

/// Progress of pair-wise key discovery on one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiscoveryState {
    phase: DiscoveryPhase,
    /// Nonce of this node's Hello still awaiting responses. Cleared at
    /// key deletion.
    pub outstanding_nonce: Option<Nonce>,
    pub discovery_deadline: Option<SimTime>,
}

impl DiscoveryState {
    pub fn phase(&self) -> DiscoveryPhase {
        self.phase
    }

    /// Moves forward to `to`; staying put is allowed, going back is not.
    pub fn advance(&mut self, to: DiscoveryPhase) -> Result<(), ProtocolError> {
        if to < self.phase {
            return Err(ProtocolError::PhaseRegression { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }
}

/// Region key as held by sensors and actors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionKeyRecord {
    pub key: SymKey,
    pub region_id: RegionId,
    pub issued_at: SimTime,
    pub expires_at: SimTime,
}

impl RegionKeyRecord {
    pub fn new(key: SymKey, region_id: RegionId, issued_at: SimTime, expires_at: SimTime) -> Result<Self, ProtocolError> {
        if expires_at <= issued_at {
            return Err(ProtocolError::Other(format!(
                "region key must expire after issue ({expires_at} <= {issued_at})"
            )));
        }
        Ok(RegionKeyRecord { key, region_id, issued_at, expires_at })
    }

    /// Expiry is closed: the key is expired at exactly `expires_at`.
    pub fn is_expired(&self, now: SimTime) -> bool {
        now >= self.expires_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimingAssumptions {
    pub t_exposure: SimTime,
    pub t_discovery: SimTime,
}

impl TimingAssumptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_exposure <= self.t_discovery {
            return Err(format!(
                "t_exposure ({}) must exceed t_discovery ({})",
                self.t_exposure, self.t_discovery
            ));
        }
        Ok(())
    }
}

/// Lower-layer protocol state carried by every node.
#[derive(Debug, Clone, Default)]
pub struct LowerState {
    pub discovery: DiscoveryState,
    /// Neighbour master keys derived from `K_IP` while verifying responses.
    pub neighbor_masters: BTreeMap<NodeId, SymKey>,
    pub verified: BTreeSet<NodeId>,
    /// Newcomer master keys vouched for by this node's actor.
    pub vouched: BTreeMap<NodeId, SymKey>,
    /// Actor -> (announce nonce, our request nonce) for open node-key requests.
    pub pending_node_key: BTreeMap<NodeId, (Nonce, Nonce)>,
    /// Announce nonces already answered; each is answered once.
    pub answered_announces: BTreeSet<(NodeId, Nonce)>,
    pub actor: Option<NodeId>,
    pub region: Option<RegionId>,
    pub last_region_issue: Option<SimTime>,
    /// Peers this node must never key with again.
    pub revoked_peers: BTreeSet<NodeId>,
    pub data_seq: u64,
    pub data_seen: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActorStatus {
    /// Provisioned spare waiting for a region handover.
    Standby,
    Active,
    Retired,
}

/// Lower-layer state specific to actors.
#[derive(Debug, Clone)]
pub struct ActorState {
    pub status: ActorStatus,
    pub region: RegionId,
    pub sink: NodeId,
    pub binding: BindingTable,
    pub binding_version: u64,
    pub k_in: Option<SymKey>,
    pub announce_nonce: Option<Nonce>,
    pub served: BTreeSet<NodeId>,
    pub region_key: Option<RegionKeyRecord>,
    pub region_history: Vec<RegionKeyRecord>,
    /// Sensor -> tag of the distribute frame it must echo back.
    pub pending_acks: BTreeMap<NodeId, [u8; TAG_LEN]>,
    pub initial_region_done: bool,
    pub revoked: BTreeSet<NodeId>,
    /// Sensors the actor expects to serve.
    pub members: BTreeSet<NodeId>,
}

impl ActorState {
    pub fn new(owner: NodeId, region: RegionId, sink: NodeId, status: ActorStatus) -> Self {
        ActorState {
            status,
            region,
            sink,
            binding: BindingTable::new(owner, region),
            binding_version: 0,
            k_in: None,
            announce_nonce: None,
            served: BTreeSet::new(),
            region_key: None,
            region_history: Vec::new(),
            pending_acks: BTreeMap::new(),
            initial_region_done: false,
            revoked: BTreeSet::new(),
            members: BTreeSet::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == ActorStatus::Active
    }
}

// ---------------------------------------------------------------------------
// Key derivations

/// `K_node = F_{K_IP}(ID_node)`.
pub fn master_key(suite: &dyn CryptoSuite, k_ip: &SymKey, id: NodeId) -> SymKey {
    suite.prf(k_ip, &id.to_bytes(), KeyKind::Master)
}

/// `K_{S1 S2} = F_{K_S1}(ID_S2)` where S1 is the numerically smaller id.
pub fn pairwise_key(suite: &dyn CryptoSuite, lower_master: &SymKey, higher: NodeId) -> SymKey {
    suite.prf(lower_master, &higher.to_bytes(), KeyKind::PairWise)
}

/// Node key from the actor's random seed and the sensor id.
pub fn derive_node_key(suite: &dyn CryptoSuite, seed: &SymKey, sensor: NodeId) -> SymKey {
    let inner = suite.prf(seed, &sensor.to_bytes(), KeyKind::Node);
    suite.prf(&inner, b"nodekey", KeyKind::Node)
}

fn mac_input(origin: NodeId, responder: NodeId, nonce: &Nonce) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(origin.0).put_u32(responder.0).put_raw(&nonce.0);
    w.finish()
}

fn tag_of(ct: &[u8]) -> [u8; TAG_LEN] {
    ct[ct.len() - TAG_LEN..].try_into().unwrap()
}

// ---------------------------------------------------------------------------
// Pair-wise keys

/// Loads `K_IP` and `K_IN` and derives the master key (one computation).
pub fn predistribute(node: &mut Node, k_ip: SymKey, k_in: SymKey, ctx: &mut Ctx<'_>) -> Result<(), ProtocolError> {
    if node.keys.master.is_some() || !node.keys.initial.is_empty() {
        return Err(ProtocolError::AlreadyPredistributed(node.id));
    }
    node.keys.master = Some(master_key(ctx.suite, &k_ip, node.id));
    ctx.compute(node.id, CostPhase::Pairwise, 1);
    node.keys.initial.k_ip = Some(k_ip);
    node.keys.initial.k_in = Some(k_in);
    Ok(())
}

pub fn hello_payload(id: NodeId, nonce: &Nonce) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(id.0).put_raw(&nonce.0);
    w.finish()
}

pub fn parse_hello(payload: &[u8]) -> Result<(NodeId, Nonce), ParseError> {
    let mut r = Reader::new(payload);
    let id = r.node_id("hello.id")?;
    let nonce = r.nonce("hello.nonce")?;
    r.finish("hello")?;
    Ok((id, nonce))
}

/// Broadcasts `Hello{ID, nonce}` with a fresh nonce.
pub fn start_discovery(node: &mut Node, ctx: &mut Ctx<'_>) -> Result<WireMessage, ProtocolError> {
    if node.keys.master.is_none() {
        return Err(ProtocolError::NotPredistributed(node.id));
    }
    if node.keys.initial.k_ip.is_none() {
        return Err(ProtocolError::DiscoveryClosed(node.id));
    }
    let nonce = Nonce::random(ctx.rng);
    node.lower.discovery.advance(node.lower.discovery.phase().max(DiscoveryPhase::Discovery))?;
    node.lower.discovery.outstanding_nonce = Some(nonce);
    if node.lower.discovery.discovery_deadline.is_none() {
        node.lower.discovery.discovery_deadline = Some(ctx.now + ctx.params.t_discovery);
    }
    let msg = WireMessage::new(MessageKind::Hello, node.id, Destination::Broadcast, hello_payload(node.id, &nonce));
    ctx.send(msg.clone());
    Ok(msg)
}

/// Replies to a neighbour's Hello with `MAC(K_self, ID_origin || ID_self || nonce)`.
pub fn answer_hello(node: &mut Node, hello: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Ok((origin, nonce)) = parse_hello(&hello.payload) else {
        return Outcome::Rejected("malformed hello");
    };
    if origin != hello.src {
        return Outcome::Rejected("hello id mismatch");
    }
    if origin == node.id {
        return Outcome::Ignored("own hello");
    }
    let Some(master) = node.keys.master.clone() else {
        return Outcome::Ignored("no master key");
    };
    let in_window = node.keys.initial.k_ip.is_some();
    let vouched = node.lower.vouched.contains_key(&origin);
    if !in_window && !vouched {
        return Outcome::Ignored("past key deletion");
    }
    if node.lower.revoked_peers.contains(&origin) {
        return Outcome::Ignored("revoked peer");
    }
    let tag = ctx.suite.mac(&master, &mac_input(origin, node.id, &nonce));
    ctx.compute(node.id, CostPhase::Pairwise, 1);
    ctx.send(
        WireMessage::new(MessageKind::MacResponse, node.id, Destination::Node(origin), node.id.to_bytes().to_vec())
            .with_mac(tag),
    );
    if !in_window && vouched && !node.keys.pairwise.contains_key(&origin) {
        node.lower.verified.insert(origin);
        if derive_pairwise(node, origin, ctx).is_ok() {
            node.lower.vouched.remove(&origin);
            return Outcome::Accepted;
        }
    }
    Outcome::Answered
}

/// Verifies a neighbour's MAC response and, on success, derives the
/// pair-wise key. Verification and derivation together cost one unit.
pub fn handle_mac_response(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Some(k_ip) = node.keys.initial.k_ip.clone() else {
        return Outcome::Ignored("no K_IP");
    };
    let Some(nonce) = node.lower.discovery.outstanding_nonce else {
        return Outcome::Rejected("no outstanding hello");
    };
    let mut r = Reader::new(&msg.payload);
    let responder = match r.node_id("response.id").and_then(|id| r.finish("response").map(|_| id)) {
        Ok(id) => id,
        Err(_) => return Outcome::Rejected("malformed response"),
    };
    if responder != msg.src {
        return Outcome::Rejected("response id mismatch");
    }
    if node.lower.revoked_peers.contains(&responder) {
        return Outcome::Rejected("revoked peer");
    }
    if node.keys.pairwise.contains_key(&responder) {
        return Outcome::Rejected("duplicate response");
    }
    let Some(tag) = msg.mac else {
        return Outcome::Rejected("missing mac");
    };
    let responder_master = master_key(ctx.suite, &k_ip, responder);
    if !ctx.suite.mac_verify(&responder_master, &mac_input(node.id, responder, &nonce), &tag) {
        return Outcome::Rejected("bad mac");
    }
    node.lower.neighbor_masters.insert(responder, responder_master);
    node.lower.verified.insert(responder);
    if node.lower.discovery.advance(DiscoveryPhase::PairwiseGeneration).is_err() {
        return Outcome::Rejected("discovery closed");
    }
    match derive_pairwise(node, responder, ctx) {
        Ok(_) => Outcome::Accepted,
        Err(_) => Outcome::Rejected("pairwise derivation failed"),
    }
}

fn derive_pairwise(node: &mut Node, peer: NodeId, ctx: &mut Ctx<'_>) -> Result<SymKey, ProtocolError> {
    if !node.lower.verified.contains(&peer) {
        return Err(ProtocolError::NotVerified { node: node.id, peer });
    }
    let own = node.keys.master.clone().ok_or(ProtocolError::MissingKey { node: node.id, what: "master key" })?;
    let key = if node.id < peer {
        pairwise_key(ctx.suite, &own, peer)
    } else {
        let peer_master = node
            .lower
            .neighbor_masters
            .get(&peer)
            .or_else(|| node.lower.vouched.get(&peer))
            .ok_or(ProtocolError::MissingKey { node: node.id, what: "peer master key" })?;
        pairwise_key(ctx.suite, peer_master, node.id)
    };
    ctx.compute(node.id, CostPhase::Pairwise, 1);
    node.keys.pairwise.insert(peer, key.clone());
    Ok(key)
}

/// Derives and stores the pair-wise key with an already verified `peer`.
pub fn establish_pairwise(node: &mut Node, peer: NodeId, ctx: &mut Ctx<'_>) -> Result<SymKey, ProtocolError> {
    derive_pairwise(node, peer, ctx)
}

/// Key deletion phase: drops `K_IP` and every cached neighbour master key.
/// The node's own master key and `K_IN` stay.
pub fn delete_setup_keys(node: &mut Node, ctx: &mut Ctx<'_>) -> Result<(), ProtocolError> {
    if let Some(deadline) = node.lower.discovery.discovery_deadline {
        if ctx.now < deadline {
            return Err(ProtocolError::DeadlineNotReached { deadline, now: ctx.now });
        }
    }
    node.lower.discovery.advance(DiscoveryPhase::KeyDeletion)?;
    node.keys.initial.k_ip = None;
    node.lower.neighbor_masters.clear();
    node.lower.verified.clear();
    node.lower.discovery.outstanding_nonce = None;
    node.lower.discovery.advance(DiscoveryPhase::Done)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Node keys

fn actor_mut(node: &mut Node) -> Result<&mut ActorState, ProtocolError> {
    let id = node.id;
    node.actor.as_mut().filter(|a| a.is_active()).ok_or(ProtocolError::NotAnActor(id))
}

/// Actor announces its presence and id, opening a node-key round.
pub fn announce(node: &mut Node, dst: Destination, ctx: &mut Ctx<'_>) -> Result<WireMessage, ProtocolError> {
    let id = node.id;
    let actor = actor_mut(node)?;
    if actor.k_in.is_none() {
        return Err(ProtocolError::MissingKey { node: id, what: "K_IN" });
    }
    let nonce = Nonce::random(ctx.rng);
    actor.announce_nonce = Some(nonce);
    actor.served.clear();
    let msg = WireMessage::new(MessageKind::ActorAnnounce, id, dst, hello_payload(id, &nonce));
    ctx.send(msg.clone());
    Ok(msg)
}

/// Sensor answers an actor announcement with `E_{K_IN}[ID || nonce_A || nonce_S]`.
pub fn handle_announce(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Some(k_in) = node.keys.initial.k_in.clone() else {
        return Outcome::Ignored("no K_IN");
    };
    let Ok((actor, announce_nonce)) = parse_hello(&msg.payload) else {
        return Outcome::Rejected("malformed announce");
    };
    if actor != msg.src {
        return Outcome::Rejected("announce id mismatch");
    }
    if !node.lower.answered_announces.insert((actor, announce_nonce)) {
        return Outcome::Ignored("announce already answered");
    }
    let mine = Nonce::random(ctx.rng);
    let mut w = Writer::new();
    w.put_u32(node.id.0).put_raw(&announce_nonce.0).put_raw(&mine.0);
    let ct = ctx.suite.sym_encrypt(&k_in, &w.finish());
    ctx.compute(node.id, CostPhase::NodeKey, 1);
    node.lower.pending_node_key.insert(actor, (announce_nonce, mine));
    ctx.send(WireMessage::new(MessageKind::NodeKeyRequest, node.id, Destination::Node(actor), ct));
    Outcome::Answered
}

/// Actor side: decrypts the sensor id, issues `K_Ni`, records the binding.
pub fn handle_node_key_request(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let id = node.id;
    let Ok(actor) = actor_mut(node) else {
        return Outcome::Ignored("not an active actor");
    };
    let Some(k_in) = actor.k_in.clone() else {
        return Outcome::Ignored("no K_IN");
    };
    let plain = ctx.suite.sym_decrypt(&k_in, &msg.payload);
    ctx.compute(id, CostPhase::NodeKey, 1);
    let Ok(plain) = plain else {
        ctx.note(format!("incident: undecryptable node-key request claiming {}", msg.src));
        return Outcome::Rejected("undecryptable request");
    };
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let s = r.node_id("request.id")?;
        let a = r.nonce("request.announce_nonce")?;
        let n = r.nonce("request.sensor_nonce")?;
        r.finish("request")?;
        Ok::<_, ParseError>((s, a, n))
    })();
    let Ok((sensor, announce_nonce, sensor_nonce)) = parsed else {
        return Outcome::Rejected("malformed request");
    };
    if sensor != msg.src {
        return Outcome::Rejected("request id mismatch");
    }
    if actor.announce_nonce != Some(announce_nonce) {
        return Outcome::Rejected("stale announce nonce");
    }
    if actor.served.contains(&sensor) {
        return Outcome::Rejected("replayed request");
    }
    if actor.revoked.contains(&sensor) {
        return Outcome::Rejected("revoked sensor");
    }
    let seed = SymKey::random(ctx.rng, KeyKind::Node);
    let k_n = derive_node_key(ctx.suite, &seed, sensor);
    let mut w = Writer::new();
    w.put_raw(&sensor_nonce.0).put_raw(k_n.bytes()).put_u32(actor.region.0);
    let ct = ctx.suite.sym_encrypt(&k_in, &w.finish());
    ctx.compute(id, CostPhase::NodeKey, 1);
    actor.binding.remove(sensor);
    actor.binding.insert(sensor, k_n).expect("entry removed above");
    actor.served.insert(sensor);
    actor.members.insert(sensor);
    ctx.send(WireMessage::new(MessageKind::NodeKeyReply, id, Destination::Node(sensor), ct));
    let _ = sync_binding(node, None, ctx);
    Outcome::Accepted
}

/// Sensor installs its node key and deletes `K_IN`.
pub fn handle_node_key_reply(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Some(k_in) = node.keys.initial.k_in.clone() else {
        return Outcome::Ignored("no K_IN");
    };
    let Some((_, mine)) = node.lower.pending_node_key.get(&msg.src).copied() else {
        return Outcome::Rejected("no pending request");
    };
    let plain = ctx.suite.sym_decrypt(&k_in, &msg.payload);
    ctx.compute(node.id, CostPhase::NodeKey, 1);
    let Ok(plain) = plain else {
        return Outcome::Rejected("undecryptable reply");
    };
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let n = r.nonce("reply.nonce")?;
        let k = r.array::<KEY_LEN>("reply.key")?;
        let region = r.u32("reply.region")?;
        r.finish("reply")?;
        Ok::<_, ParseError>((n, k, region))
    })();
    let Ok((nonce, key, region)) = parsed else {
        return Outcome::Rejected("malformed reply");
    };
    if nonce != mine {
        return Outcome::Rejected("stale reply");
    }
    node.keys.node_key = Some(SymKey::new(key, KeyKind::Node));
    node.lower.actor = Some(msg.src);
    node.lower.region = Some(RegionId(region));
    node.keys.initial.k_in = None;
    node.lower.pending_node_key.clear();
    Outcome::Accepted
}

// ---------------------------------------------------------------------------
// Region keys

/// Generates a fresh region key and unicasts it to every bound sensor under
/// its node key.
pub fn establish_region_key(node: &mut Node, ctx: &mut Ctx<'_>) -> Result<RegionKeyRecord, ProtocolError> {
    let id = node.id;
    let actor = actor_mut(node)?;
    let key = SymKey::random(ctx.rng, KeyKind::Region);
    let record = RegionKeyRecord::new(key, actor.region, ctx.now, ctx.now + ctx.params.region_key_ttl)?;
    actor.pending_acks.clear();
    let mut sends = Vec::new();
    for entry in actor.binding.entries() {
        if actor.revoked.contains(&entry.node_id) {
            continue;
        }
        let mut w = Writer::new();
        w.put_raw(record.key.bytes())
            .put_u32(record.region_id.0)
            .put_u64(record.issued_at)
            .put_u64(record.expires_at);
        let ct = ctx.suite.sym_encrypt(&entry.key_info, &w.finish());
        sends.push((entry.node_id, ct));
    }
    for (sensor, ct) in sends {
        ctx.compute(id, CostPhase::RegionKey, 1);
        actor.pending_acks.insert(sensor, tag_of(&ct));
        ctx.send(WireMessage::new(MessageKind::RegionKeyDistribute, id, Destination::Node(sensor), ct));
    }
    let skipped: Vec<NodeId> = actor
        .members
        .iter()
        .filter(|m| !actor.binding.contains(**m) && !actor.revoked.contains(m))
        .copied()
        .collect();
    for s in skipped {
        ctx.notes.push(format!("region key skipped {s}: no node key"));
    }
    if actor.pending_acks.is_empty() {
        actor.initial_region_done = true;
    }
    actor.region_key = Some(record.clone());
    actor.region_history.push(record.clone());
    ctx.schedule(record.expires_at, Timer::RegionExpiry { issued_at: record.issued_at });
    Ok(record)
}

pub fn handle_region_distribute(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Some(k_n) = node.keys.node_key.clone() else {
        return Outcome::Ignored("no node key");
    };
    let plain = ctx.suite.sym_decrypt(&k_n, &msg.payload);
    ctx.compute(node.id, CostPhase::RegionKey, 1);
    let Ok(plain) = plain else {
        return Outcome::Rejected("undecryptable region key");
    };
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let k = r.array::<KEY_LEN>("region.key")?;
        let region = r.u32("region.id")?;
        let issued = r.u64("region.issued_at")?;
        let expires = r.u64("region.expires_at")?;
        r.finish("region")?;
        Ok::<_, ParseError>((k, region, issued, expires))
    })();
    let Ok((k, region, issued, expires)) = parsed else {
        return Outcome::Rejected("malformed region key");
    };
    if node.lower.last_region_issue.is_some_and(|last| issued <= last) {
        return Outcome::Rejected("stale region key");
    }
    let Ok(record) = RegionKeyRecord::new(SymKey::new(k, KeyKind::Region), RegionId(region), issued, expires) else {
        return Outcome::Rejected("bad validity window");
    };
    node.keys.region_key = Some(record);
    node.lower.last_region_issue = Some(issued);
    node.lower.region = Some(RegionId(region));
    node.lower.actor = Some(msg.src);
    let mut w = Writer::new();
    w.put_u32(region).put_u64(issued).put_raw(&tag_of(&msg.payload));
    ctx.send(WireMessage::new(MessageKind::RegionKeyAck, node.id, Destination::Node(msg.src), w.finish()));
    Outcome::Accepted
}

pub fn handle_region_ack(node: &mut Node, msg: &WireMessage, _ctx: &mut Ctx<'_>) -> Outcome {
    let Ok(actor) = actor_mut(node) else {
        return Outcome::Ignored("not an active actor");
    };
    let mut r = Reader::new(&msg.payload);
    let parsed = (|| {
        let region = r.u32("ack.region")?;
        let issued = r.u64("ack.issued_at")?;
        let echo = r.array::<TAG_LEN>("ack.echo")?;
        r.finish("ack")?;
        Ok::<_, ParseError>((region, issued, echo))
    })();
    let Ok((region, issued, echo)) = parsed else {
        return Outcome::Rejected("malformed ack");
    };
    let current = actor.region_key.as_ref().map(|r| (r.region_id.0, r.issued_at));
    if current != Some((region, issued)) || actor.pending_acks.get(&msg.src) != Some(&echo) {
        return Outcome::Rejected("unexpected ack");
    }
    actor.pending_acks.remove(&msg.src);
    if actor.pending_acks.is_empty() {
        actor.initial_region_done = true;
    }
    Outcome::Accepted
}

fn notice_payload(region: RegionId, issued_at: SimTime, revoked: Option<NodeId>) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(region.0).put_u64(issued_at);
    match revoked {
        Some(id) => w.put_u8(1).put_u32(id.0),
        None => w.put_u8(0),
    };
    w.finish()
}

/// Region-wide renewal notice, authenticated under the current region key.
pub fn send_renewal_notice(node: &mut Node, revoked: Option<NodeId>, ctx: &mut Ctx<'_>) -> Result<(), ProtocolError> {
    let id = node.id;
    let actor = actor_mut(node)?;
    let Some(current) = actor.region_key.clone() else {
        return Ok(());
    };
    let payload = notice_payload(current.region_id, current.issued_at, revoked);
    let tag = ctx.suite.mac(&current.key, &payload);
    ctx.compute(id, CostPhase::Renewal, 1);
    ctx.send(WireMessage::new(MessageKind::RegionKeyRenewalNotice, id, Destination::Broadcast, payload).with_mac(tag));
    Ok(())
}

pub fn handle_renewal_notice(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Some(current) = node.keys.region_key.clone() else {
        return Outcome::Ignored("no region key");
    };
    let mut r = Reader::new(&msg.payload);
    let parsed = (|| {
        let region = r.u32("notice.region")?;
        let issued = r.u64("notice.issued_at")?;
        let revoked = match r.u8("notice.flag")? {
            0 => None,
            _ => Some(r.node_id("notice.revoked")?),
        };
        r.finish("notice")?;
        Ok::<_, ParseError>((region, issued, revoked))
    })();
    let Ok((region, issued, revoked)) = parsed else {
        return Outcome::Rejected("malformed notice");
    };
    if region != current.region_id.0 || issued != current.issued_at {
        return Outcome::Ignored("notice for another key");
    }
    let Some(tag) = msg.mac else {
        return Outcome::Rejected("missing mac");
    };
    let ok = ctx.suite.mac_verify(&current.key, &msg.payload, &tag);
    ctx.compute(node.id, CostPhase::Renewal, 1);
    if !ok {
        return Outcome::Rejected("bad mac");
    }
    node.keys.region_key = None;
    if let Some(id) = revoked {
        node.lower.revoked_peers.insert(id);
        node.keys.pairwise.remove(&id);
    }
    Outcome::Accepted
}

/// Renews the region key if it has expired (closed bound). Returns whether
/// a renewal fired.
pub fn expire_and_renew_region_key(node: &mut Node, ctx: &mut Ctx<'_>) -> Result<bool, ProtocolError> {
    let now = ctx.now;
    let actor = actor_mut(node)?;
    match &actor.region_key {
        Some(rec) if !rec.is_expired(now) => Ok(false),
        _ => {
            send_renewal_notice(node, None, ctx)?;
            establish_region_key(node, ctx)?;
            Ok(true)
        }
    }
}

/// Immediate renewal regardless of expiry (used after membership changes).
pub fn renew_region_key_now(node: &mut Node, revoked: Option<NodeId>, ctx: &mut Ctx<'_>) -> Result<RegionKeyRecord, ProtocolError> {
    send_renewal_notice(node, revoked, ctx)?;
    establish_region_key(node, ctx)
}

// ---------------------------------------------------------------------------
// Revocation

/// Phase B on one neighbour: forget the pair-wise key shared with `peer`.
pub fn drop_pairwise(node: &mut Node, peer: NodeId) -> bool {
    node.lower.revoked_peers.insert(peer);
    node.lower.vouched.remove(&peer);
    node.keys.pairwise.remove(&peer).is_some()
}

/// Phases C and D at the actor: renewal notice, binding removal, sink sync,
/// then a fresh region key unicast to every remaining member.
pub fn revoke_member(node: &mut Node, compromised: NodeId, ctx: &mut Ctx<'_>) -> Result<RegionKeyRecord, ProtocolError> {
    send_renewal_notice(node, Some(compromised), ctx)?;
    let actor = actor_mut(node)?;
    actor.revoked.insert(compromised);
    actor.members.remove(&compromised);
    actor.binding.remove(compromised);
    sync_binding(node, None, ctx)?;
    establish_region_key(node, ctx)
}

// ---------------------------------------------------------------------------
// Node addition

/// Actor hands a bound neighbour the newcomer's master key under `K_Ni`.
pub fn vouch_for_newcomer(
    node: &mut Node,
    neighbor: NodeId,
    newcomer: NodeId,
    newcomer_master: &SymKey,
    ctx: &mut Ctx<'_>,
) -> Result<(), ProtocolError> {
    let id = node.id;
    let actor = actor_mut(node)?;
    let k_n = actor
        .binding
        .lookup(neighbor)
        .cloned()
        .ok_or(ProtocolError::NotBound { node: neighbor, actor: id })?;
    let mut w = Writer::new();
    w.put_u32(newcomer.0).put_raw(newcomer_master.bytes());
    let ct = ctx.suite.sym_encrypt(&k_n, &w.finish());
    ctx.compute(id, CostPhase::Addition, 1);
    ctx.send(WireMessage::new(MessageKind::PairwiseVouch, id, Destination::Node(neighbor), ct));
    Ok(())
}

pub fn handle_vouch(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Some(k_n) = node.keys.node_key.clone() else {
        return Outcome::Ignored("no node key");
    };
    if node.lower.actor != Some(msg.src) {
        return Outcome::Rejected("vouch from foreign actor");
    }
    let plain = ctx.suite.sym_decrypt(&k_n, &msg.payload);
    ctx.compute(node.id, CostPhase::Addition, 1);
    let Ok(plain) = plain else {
        return Outcome::Rejected("undecryptable vouch");
    };
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let id = r.node_id("vouch.id")?;
        let k = r.array::<KEY_LEN>("vouch.master")?;
        r.finish("vouch")?;
        Ok::<_, ParseError>((id, k))
    })();
    let Ok((newcomer, master)) = parsed else {
        return Outcome::Rejected("malformed vouch");
    };
    if node.keys.pairwise.contains_key(&newcomer) || node.lower.revoked_peers.contains(&newcomer) {
        return Outcome::Rejected("already keyed");
    }
    if node.lower.vouched.contains_key(&newcomer) {
        return Outcome::Rejected("duplicate vouch");
    }
    node.lower.vouched.insert(newcomer, SymKey::new(master, KeyKind::Master));
    Outcome::Accepted
}

// ---------------------------------------------------------------------------
// Binding-table synchronization with the sink

/// Sensors leaving an actor's region for another actor's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handover {
    pub to: NodeId,
    pub moved: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// Whole region handed to a replacement actor.
    Full,
    /// Entries merged into an existing region.
    Merge,
}

/// Pushes the actor's binding table to the sink: encrypted to the CA key,
/// signed with the actor's secret key.
pub fn sync_binding(node: &mut Node, handover: Option<Handover>, ctx: &mut Ctx<'_>) -> Result<(), ProtocolError> {
    let id = node.id;
    let secret = node
        .upper
        .as_ref()
        .map(|u| u.keypair.secret.clone())
        .ok_or(ProtocolError::MissingKey { node: id, what: "actor secret key" })?;
    let actor = actor_mut(node)?;
    actor.binding_version += 1;
    let mut w = Writer::new();
    w.put_u64(actor.binding_version);
    actor.binding.encode(&mut w);
    match &handover {
        Some(h) => {
            w.put_u8(1).put_u32(h.to.0).put_u32(h.moved.len() as u32);
            for m in &h.moved {
                w.put_u32(m.0);
            }
        }
        None => {
            w.put_u8(0);
        }
    }
    let mut seed = [0u8; 16];
    rand::RngCore::fill_bytes(ctx.rng, &mut seed);
    let ct = ctx.suite.pk_encrypt(ctx.ca.public(), &w.finish(), &seed);
    let sink = actor.sink;
    let sig = ctx.suite.sign(&secret, &[ct.as_slice(), &sink.to_bytes()].concat());
    ctx.compute(id, CostPhase::BindingSync, 2);
    let mut p = Writer::new();
    p.put_bytes(&ct).put_bytes(&sig.0);
    ctx.send(WireMessage::new(MessageKind::BindingSync, id, Destination::Node(sink), p.finish()));
    Ok(())
}

/// Sink side of a sync; also forwards handed-over entries to their new actor.
pub fn handle_binding_sync(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let sink_id = node.id;
    let Some(sink) = node.sink.as_mut() else {
        return Outcome::Ignored("not the sink");
    };
    let Some(actor_public) = sink.directory.get(&msg.src).cloned() else {
        return Outcome::Rejected("unknown actor");
    };
    if ctx.ca.is_subject_revoked(msg.src) {
        return Outcome::Rejected("revoked actor");
    }
    let mut r = Reader::new(&msg.payload);
    let Ok((ct, sig)) = r.bytes("sync.ct").and_then(|c| Ok((c, r.bytes("sync.sig")?))) else {
        return Outcome::Rejected("malformed sync");
    };
    let signed = [ct.as_slice(), &sink_id.to_bytes()].concat();
    let ok = ctx.suite.verify(&actor_public, &signed, &crate::crypto::Signature(sig));
    ctx.compute(sink_id, CostPhase::BindingSync, 1);
    if !ok {
        return Outcome::Rejected("bad signature");
    }
    let Ok(plain) = ctx.suite.pk_decrypt(ctx.ca.secret(), &ct) else {
        return Outcome::Rejected("undecryptable sync");
    };
    ctx.compute(sink_id, CostPhase::BindingSync, 1);
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let version = r.u64("sync.version")?;
        let table = BindingTable::decode(&mut r)?;
        let handover = match r.u8("sync.handover")? {
            0 => None,
            _ => {
                let to = r.node_id("sync.handover.to")?;
                let n = r.u32("sync.handover.len")? as usize;
                if n > r.remaining() / 4 {
                    return Err(ParseError::new("sync.handover.len", "count exceeds buffer"));
                }
                let mut moved = Vec::with_capacity(n);
                for _ in 0..n {
                    moved.push(r.node_id("sync.handover.id")?);
                }
                Some(Handover { to, moved })
            }
        };
        r.finish("sync")?;
        Ok::<_, ParseError>((version, table, handover))
    })();
    let Ok((version, table, handover)) = parsed else {
        return Outcome::Rejected("malformed sync");
    };
    if table.owner != msg.src {
        return Outcome::Rejected("table owner mismatch");
    }
    let region = table.region;
    if sink.versions.get(&region).is_some_and(|v| version <= *v) {
        return Outcome::Rejected("stale sync");
    }
    let previous = sink.tables.insert(region, table);
    sink.versions.insert(region, version);
    if let (Some(h), Some(prev)) = (handover, previous) {
        let mut moved = BindingTable::new(h.to, region);
        for e in prev.entries() {
            if h.moved.contains(&e.node_id) {
                let _ = moved.insert(e.node_id, e.key_info.clone());
            }
        }
        if let Err(e) = send_binding_transfer(node, h.to, TransferMode::Merge, &moved, 0, ctx) {
            ctx.note(format!("handover to {} failed: {e}", h.to));
        }
    }
    Outcome::Accepted
}

/// Sink sends a table to an actor: encrypted to the actor, signed by the CA.
pub fn send_binding_transfer(
    node: &mut Node,
    to: NodeId,
    mode: TransferMode,
    table: &BindingTable,
    version: u64,
    ctx: &mut Ctx<'_>,
) -> Result<(), ProtocolError> {
    let sink_id = node.id;
    let sink = node.sink.as_ref().ok_or(ProtocolError::Other("not the sink".into()))?;
    let public = sink.directory.get(&to).cloned().ok_or(ProtocolError::UnknownNode(to))?;
    let mut w = Writer::new();
    w.put_u8(match mode {
        TransferMode::Full => 0,
        TransferMode::Merge => 1,
    })
    .put_u64(version);
    table.encode(&mut w);
    let mut seed = [0u8; 16];
    rand::RngCore::fill_bytes(ctx.rng, &mut seed);
    let ct = ctx.suite.pk_encrypt(&public, &w.finish(), &seed);
    let sig = ctx.suite.sign(ctx.ca.secret(), &[ct.as_slice(), &to.to_bytes()].concat());
    ctx.compute(sink_id, CostPhase::BindingSync, 2);
    let mut p = Writer::new();
    p.put_bytes(&ct).put_bytes(&sig.0);
    ctx.send(WireMessage::new(MessageKind::BindingTransfer, sink_id, Destination::Node(to), p.finish()));
    Ok(())
}

/// New or receiving actor installs a table from the sink. A full transfer
/// activates a standby actor and cuts the region over to a fresh key; a
/// merge adds sensors and renews the region key to include them.
pub fn handle_binding_transfer(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let id = node.id;
    let Some(secret) = node.upper.as_ref().map(|u| u.keypair.secret.clone()) else {
        return Outcome::Ignored("no upper-layer keys");
    };
    let Some(actor) = node.actor.as_ref() else {
        return Outcome::Ignored("not an actor");
    };
    if msg.src != actor.sink {
        return Outcome::Rejected("transfer not from sink");
    }
    let mut r = Reader::new(&msg.payload);
    let Ok((ct, sig)) = r.bytes("transfer.ct").and_then(|c| Ok((c, r.bytes("transfer.sig")?))) else {
        return Outcome::Rejected("malformed transfer");
    };
    let ok = ctx.suite.verify(
        ctx.ca.public(),
        &[ct.as_slice(), &id.to_bytes()].concat(),
        &crate::crypto::Signature(sig),
    );
    ctx.compute(id, CostPhase::BindingSync, 1);
    if !ok {
        return Outcome::Rejected("bad signature");
    }
    let Ok(plain) = ctx.suite.pk_decrypt(&secret, &ct) else {
        return Outcome::Rejected("undecryptable transfer");
    };
    ctx.compute(id, CostPhase::BindingSync, 1);
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let mode = r.u8("transfer.mode")?;
        let version = r.u64("transfer.version")?;
        let table = BindingTable::decode(&mut r)?;
        r.finish("transfer")?;
        Ok::<_, ParseError>((mode, version, table))
    })();
    let Ok((mode, version, table)) = parsed else {
        return Outcome::Rejected("malformed transfer");
    };
    let actor = node.actor.as_mut().unwrap();
    match mode {
        0 => {
            if actor.status != ActorStatus::Standby {
                return Outcome::Rejected("already installed");
            }
            actor.status = ActorStatus::Active;
            actor.region = table.region;
            actor.members = table.ids().collect();
            actor.binding = table;
            actor.binding.owner = id;
            actor.binding_version = version;
            actor.initial_region_done = true;
            match establish_region_key(node, ctx) {
                Ok(_) => Outcome::Accepted,
                Err(_) => Outcome::Rejected("region key failed"),
            }
        }
        _ => {
            if !actor.is_active() {
                return Outcome::Rejected("inactive actor");
            }
            if table.ids().all(|s| actor.binding.contains(s)) {
                return Outcome::Rejected("already merged");
            }
            for e in table.entries() {
                actor.binding.remove(e.node_id);
                actor.binding.insert(e.node_id, e.key_info.clone()).expect("entry removed above");
                actor.members.insert(e.node_id);
                actor.revoked.remove(&e.node_id);
            }
            if sync_binding(node, None, ctx).is_err() {
                return Outcome::Rejected("sync failed");
            }
            match renew_region_key_now(node, None, ctx) {
                Ok(_) => Outcome::Accepted,
                Err(_) => Outcome::Rejected("region key failed"),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Data traffic

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DataChannel {
    /// Actor broadcast under the region key.
    Region,
    /// Sensor <-> actor under the node key.
    Node,
    /// Neighbour <-> neighbour under the pair-wise key.
    Pairwise,
    /// Upper-layer peers under the session key.
    Session,
}

impl DataChannel {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        [DataChannel::Region, DataChannel::Node, DataChannel::Pairwise, DataChannel::Session]
            .get(c as usize)
            .copied()
    }
}

fn sender_key(node: &Node, channel: DataChannel, peer: Option<NodeId>) -> Option<(SymKey, Destination)> {
    match channel {
        DataChannel::Region => {
            let a = node.actor.as_ref().filter(|a| a.is_active())?;
            Some((a.region_key.as_ref()?.key.clone(), Destination::Broadcast))
        }
        DataChannel::Node => match (&node.actor, peer) {
            (Some(a), Some(p)) if a.is_active() => Some((a.binding.lookup(p)?.clone(), Destination::Node(p))),
            _ => Some((node.keys.node_key.clone()?, Destination::Node(node.lower.actor?))),
        },
        DataChannel::Pairwise => {
            let p = peer?;
            Some((node.keys.pairwise.get(&p)?.clone(), Destination::Node(p)))
        }
        DataChannel::Session => {
            let p = peer?;
            Some((node.keys.session_keys.get(&p)?.clone(), Destination::Node(p)))
        }
    }
}

/// Encrypts `body` on `channel` and queues the frame.
pub fn send_data(
    node: &mut Node,
    channel: DataChannel,
    peer: Option<NodeId>,
    body: &[u8],
    ctx: &mut Ctx<'_>,
) -> Result<WireMessage, ProtocolError> {
    let (key, dst) = sender_key(node, channel, peer).ok_or(ProtocolError::MissingKey {
        node: node.id,
        what: "channel key",
    })?;
    node.lower.data_seq += 1;
    let seq = node.lower.data_seq;
    let mut inner = Writer::new();
    inner.put_u32(node.id.0).put_u64(seq).put_bytes(body);
    let ct = ctx.suite.sym_encrypt(&key, &inner.finish());
    ctx.compute(node.id, CostPhase::Data, 1);
    let mut w = Writer::new();
    w.put_u8(channel.code()).put_u64(seq).put_raw(&ct);
    let msg = WireMessage::new(MessageKind::Data, node.id, dst, w.finish());
    ctx.send(msg.clone());
    Ok(msg)
}

/// Splits a data frame into channel, sequence number and ciphertext.
pub fn parse_data(payload: &[u8]) -> Result<(DataChannel, u64, &[u8]), ParseError> {
    let mut r = Reader::new(payload);
    let channel = DataChannel::from_code(r.u8("data.channel")?).ok_or(ParseError::new("data.channel", "unknown"))?;
    let seq = r.u64("data.seq")?;
    Ok((channel, seq, &payload[9..]))
}

pub fn handle_data(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let Ok((channel, seq, ct)) = parse_data(&msg.payload) else {
        return Outcome::Rejected("malformed data");
    };
    let key = match channel {
        DataChannel::Region => node.keys.region_key.as_ref().map(|r| r.key.clone()),
        DataChannel::Node => match &node.actor {
            Some(a) if a.is_active() => a.binding.lookup(msg.src).cloned(),
            _ if node.lower.actor == Some(msg.src) => node.keys.node_key.clone(),
            _ => None,
        },
        DataChannel::Pairwise => node.keys.pairwise.get(&msg.src).cloned(),
        DataChannel::Session => {
            if !crate::upper::peer_certificate_valid(node, msg.src, ctx) {
                return Outcome::Rejected("peer certificate invalid at send time");
            }
            node.keys.session_keys.get(&msg.src).cloned()
        }
    };
    let Some(key) = key else {
        return Outcome::Rejected("no key for channel");
    };
    let plain = ctx.suite.sym_decrypt(&key, ct);
    ctx.compute(node.id, CostPhase::Data, 1);
    let Ok(plain) = plain else {
        return Outcome::Rejected("undecryptable data");
    };
    let mut r = Reader::new(&plain);
    let (Ok(src), Ok(inner_seq)) = (r.node_id("data.src"), r.u64("data.seq")) else {
        return Outcome::Rejected("malformed data");
    };
    if src != msg.src || inner_seq != seq {
        return Outcome::Rejected("data header mismatch");
    }
    if node.lower.data_seen.get(&src).is_some_and(|last| seq <= *last) {
        return Outcome::Rejected("replayed data");
    }
    node.lower.data_seen.insert(src, seq);
    Outcome::Accepted
}
