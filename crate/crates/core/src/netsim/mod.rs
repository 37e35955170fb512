//! Deterministic discrete-event simulator.
//!
//! A [`Network`] owns every node, the cost ledger and the adversary. Frames
//! travel through a single time-ordered queue; handlers from
//! [`crate::lower`] and [`crate::upper`] run one node at a time. At every
//! quiescent point (no frame in flight and nothing else due in the current
//! tick) the invariant suite is audited.
//!
//! ```
//! use wsan_core::config::{ScenarioConfig, TopologyMode};
//! use wsan_core::netsim::Network;
//!
//! let cfg = ScenarioConfig::baseline(1, 20, 4, TopologyMode::ExactRegular);
//! let mut net = Network::new(&cfg).unwrap();
//! net.run();
//! assert_eq!(net.setup_ledger().unwrap().setup_totals().messages_sent, 260);
//! ```

mod adversary;
mod audit;
mod report;
pub mod topology;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AdversaryAction, EventAction, NodeRef, ScenarioConfig, TopologyMode};
use crate::cost::{reconcile, CostLedger, DegreeModel, LeapBaseline, ReconciliationReport, SetupShape, StorageCount};
use crate::crypto::{suite_by_name, CryptoSuite, KeyKind, MacTag, Nonce, SymKey};
use crate::lower::{self, ActorState, ActorStatus, DataChannel, Handover};
use crate::model::{
    Ctx, Destination, MessageKind, Node, NodeId, Outcome, ProtocolParams, RegionId, Role, SimTime, Timer,
    WireMessage, Writer,
};
use crate::upper::{self, Certificate, CertificateAuthority, RenewalPolicy, SinkState, UpperState};

use adversary::{ciphertext_of, Adversary};
use audit::AuditState;

pub use adversary::{FrameCounts, SecurityStats};
pub use audit::{Invariant, InvariantStatus};
pub use report::{run, ActorSummary, Artifacts, ReconciliationStatus, RunOutput, SensorStorage, SimError, SimReport, UpperStats};
pub use topology::{Topology, TopologyError};

const STREAM_TOPOLOGY: u64 = 0;
const STREAM_PROTOCOL: u64 = 1;
const STREAM_ADVERSARY: u64 = 2;
const STREAM_LOSS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Honest,
    Adversary,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { to: NodeId, msg: WireMessage, sent_at: SimTime, origin: Origin },
    Timer { node: NodeId, timer: Timer },
    Script(usize),
    Adversary(usize),
    Harvest(NodeId),
}

impl Event {
    /// Tie-break inside a tick: frames land before timers fire, timers
    /// before scripted actions.
    fn priority(&self) -> u8 {
        match self {
            Event::Deliver { .. } => 0,
            Event::Timer { .. } => 1,
            Event::Script(_) => 2,
            Event::Adversary(_) => 3,
            Event::Harvest(_) => 4,
        }
    }

    fn is_background(&self) -> bool {
        matches!(self, Event::Timer { timer, .. } if timer.is_background())
    }
}

/// Cost ledger and reconciliation captured once initial setup completes.
#[derive(Debug, Clone)]
pub struct SetupSnapshot {
    pub time: SimTime,
    pub ledger: CostLedger,
    pub shape: SetupShape,
    pub applicable: bool,
    pub reason: Option<String>,
    pub reconciliation: ReconciliationReport,
}

pub struct Network {
    config: ScenarioConfig,
    hash: String,
    suite: Box<dyn CryptoSuite>,
    topology: Topology,
    nodes: BTreeMap<NodeId, Node>,
    ca: CertificateAuthority,
    ledger: CostLedger,
    rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    adv_rng: ChaCha8Rng,
    adversary: Adversary,
    queue: BTreeMap<(SimTime, u8, u64), Event>,
    seq: u64,
    in_flight: usize,
    foreground: usize,
    now: SimTime,
    events_processed: u64,
    trace: Vec<String>,
    params: ProtocolParams,
    k_ip: SymKey,
    k_in: SymKey,
    sensor_ids: Vec<NodeId>,
    lost: u64,
    revoked: BTreeSet<NodeId>,
    revoked_at: BTreeMap<NodeId, SimTime>,
    unkeyed: BTreeSet<(NodeId, NodeId)>,
    audit: AuditState,
    setup: Option<SetupSnapshot>,
    script_errors: Vec<String>,
    halted: Option<String>,
    issued: Vec<Certificate>,
    upper_stats: UpperStats,
    frames: BTreeMap<String, FrameCounts>,
}

fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl Network {
    /// Validates the scenario, builds the topology and pre-distributes keys.
    /// The initial setup timeline is queued; nothing runs until [`Network::run`].
    pub fn new(config: &ScenarioConfig) -> Result<Self, SimError> {
        let errors = config.validate();
        if !errors.is_empty() {
            return Err(SimError::Config(errors));
        }
        let suite = suite_by_name(&config.suite)?;
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(k);
            r
        };
        let mut topo_rng = stream(STREAM_TOPOLOGY);
        let topology = Topology::build(&config.topology, &mut topo_rng)?;
        let mut rng = stream(STREAM_PROTOCOL);
        let t = &config.timing;
        let params = ProtocolParams { t_discovery: t.t_discovery, region_key_ttl: t.region_key_ttl };
        let k_ip = SymKey::random(&mut rng, KeyKind::InitialPairwise);
        let k_in = SymKey::random(&mut rng, KeyKind::InitialNode);
        let mut ca_seed = b"ca".to_vec();
        ca_seed.extend_from_slice(&config.seed.to_be_bytes());
        let mut ca = CertificateAuthority::new(
            &*suite,
            topology.sink,
            &ca_seed,
            t.cert_validity,
            RenewalPolicy { t_refresh: t.t_refresh },
        );

        let mut net = Network {
            config: config.clone(),
            hash: config.hash(),
            suite,
            sensor_ids: topology.sensors.clone(),
            nodes: BTreeMap::new(),
            ca: ca.clone(),
            ledger: CostLedger::new(),
            rng,
            loss_rng: stream(STREAM_LOSS),
            adv_rng: stream(STREAM_ADVERSARY),
            adversary: Adversary::default(),
            queue: BTreeMap::new(),
            seq: 0,
            in_flight: 0,
            foreground: 0,
            now: 0,
            events_processed: 0,
            trace: Vec::new(),
            params,
            k_ip,
            k_in,
            lost: 0,
            revoked: BTreeSet::new(),
            revoked_at: BTreeMap::new(),
            unkeyed: BTreeSet::new(),
            audit: AuditState::new(),
            setup: None,
            script_errors: Vec::new(),
            halted: None,
            issued: Vec::new(),
            upper_stats: UpperStats::default(),
            frames: BTreeMap::new(),
            topology,
        };

        let sink = net.topology.sink;
        let sink_cert = ca.issue(&*net.suite, sink, ca.public().clone(), 0);
        net.issued.push(sink_cert.clone());
        let mut sink_node = Node::new(sink, Role::Sink);
        sink_node.upper = Some(UpperState::new(ca.keypair().clone(), sink_cert));
        let mut sink_state = SinkState::default();

        let actors: Vec<(NodeId, ActorStatus, RegionId)> = net
            .topology
            .actors
            .iter()
            .enumerate()
            .map(|(i, a)| (*a, ActorStatus::Active, RegionId(i as u32)))
            .chain(
                net.topology
                    .spares
                    .iter()
                    .enumerate()
                    .map(|(i, a)| (*a, ActorStatus::Standby, RegionId((net.topology.actors.len() + i) as u32))),
            )
            .collect();
        for (id, status, region) in actors {
            let mut seed = [0u8; 16];
            net.rng.fill(&mut seed);
            let keypair = net.suite.gen_keypair(&seed);
            let cert = ca.issue(&*net.suite, id, keypair.public.clone(), 0);
            net.issued.push(cert.clone());
            let mut node = Node::new(id, Role::Actor);
            let mut state = ActorState::new(id, region, sink, status);
            if status == ActorStatus::Active {
                state.members = net.topology.members(id);
                state.k_in = Some(net.k_in.clone());
                sink_state.directory.insert(id, keypair.public.clone());
            }
            node.actor = Some(state);
            node.upper = Some(UpperState::new(keypair, cert));
            net.nodes.insert(id, node);
        }
        sink_node.sink = Some(sink_state);
        net.nodes.insert(sink, sink_node);
        net.ca = ca;

        for s in net.topology.sensors.clone() {
            net.nodes.insert(s, Node::new(s, Role::Sensor));
        }
        let mut participants = net.topology.sensors.clone();
        if config.topology.actor_pairwise {
            participants.extend(net.topology.actors.iter().copied());
        }
        for id in &participants {
            let (k_ip, k_in) = (net.k_ip.clone(), net.k_in.clone());
            net.with_node(*id, 0, |n, ctx| lower::predistribute(n, k_ip, k_in, ctx))
                .expect("node exists")
                .expect("fresh node");
            net.schedule(0, Event::Timer { node: *id, timer: Timer::StartDiscovery });
            net.schedule(t.t_discovery, Event::Timer { node: *id, timer: Timer::DeleteSetupKeys });
        }
        let announce_at = t.t_discovery + 1;
        let region_at = announce_at + 2 * net.topology.max_route_len() as SimTime + 2;
        for a in net.topology.actors.clone() {
            net.schedule(announce_at, Event::Timer { node: a, timer: Timer::AnnounceNodeKey });
            net.schedule(region_at, Event::Timer { node: a, timer: Timer::StartRegionKey });
        }
        for i in 0..config.events.len() {
            net.schedule(config.events[i].at, Event::Script(i));
        }
        for i in 0..config.adversary.len() {
            net.schedule(config.adversary[i].at, Event::Adversary(i));
        }
        Ok(net)
    }

    // -----------------------------------------------------------------
    // Accessors

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Sensors in `sensor:i` order, including ones added at run time.
    pub fn sensor_ids(&self) -> &[NodeId] {
        &self.sensor_ids
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn ca(&self) -> &CertificateAuthority {
        &self.ca
    }

    pub fn setup(&self) -> Option<&SetupSnapshot> {
        self.setup.as_ref()
    }

    /// Ledger as it stood when initial setup completed.
    pub fn setup_ledger(&self) -> Option<&CostLedger> {
        self.setup.as_ref().map(|s| &s.ledger)
    }

    pub fn security(&self) -> &SecurityStats {
        &self.adversary.stats
    }

    pub fn invariants(&self) -> &BTreeMap<Invariant, InvariantStatus> {
        &self.audit.status
    }

    pub fn halted(&self) -> Option<&str> {
        self.halted.as_deref()
    }

    pub fn script_errors(&self) -> &[String] {
        &self.script_errors
    }

    pub fn trace_lines(&self) -> &[String] {
        &self.trace
    }

    pub fn issued_certificates(&self) -> &[Certificate] {
        &self.issued
    }

    pub fn upper_stats(&self) -> &UpperStats {
        &self.upper_stats
    }

    pub fn frame_counts(&self) -> &BTreeMap<String, FrameCounts> {
        &self.frames
    }

    pub fn lost(&self) -> u64 {
        self.lost
    }

    pub fn revoked(&self) -> &BTreeSet<NodeId> {
        &self.revoked
    }

    pub(crate) fn is_unkeyed(&self, a: NodeId, b: NodeId) -> bool {
        self.unkeyed.contains(&pair(a, b))
    }

    /// Degree that the storage law is measured against: one-hop links minus
    /// revoked neighbours and links left unkeyed at node addition.
    pub fn realized_degree(&self, id: NodeId) -> usize {
        self.effective_degree(id)
    }

    /// Maps a scenario node reference to an id. Fake references draw a
    /// fresh identity on first use.
    pub fn resolve(&mut self, r: NodeRef) -> Option<NodeId> {
        match r {
            NodeRef::Sensor(i) => self.sensor_ids.get(i).copied(),
            NodeRef::Actor(i) => self.topology.actors.get(i).copied(),
            NodeRef::Spare(i) => self.topology.spares.get(i).copied(),
            NodeRef::Sink => Some(self.topology.sink),
            NodeRef::Fake(i) => {
                if let Some(id) = self.adversary.fakes.get(&i) {
                    return Some(*id);
                }
                let id = self.fresh_fake();
                self.adversary.fakes.insert(i, id);
                Some(id)
            }
        }
    }

    fn fresh_fake(&mut self) -> NodeId {
        loop {
            let id = NodeId(self.adv_rng.random());
            if id.0 != 0 && !self.nodes.contains_key(&id) && self.adversary.used_ids.insert(id) {
                return id;
            }
        }
    }

    // -----------------------------------------------------------------
    // Event loop

    fn schedule(&mut self, at: SimTime, ev: Event) {
        if matches!(ev, Event::Deliver { .. }) {
            self.in_flight += 1;
        }
        if !ev.is_background() {
            self.foreground += 1;
        }
        self.seq += 1;
        self.queue.insert((at, ev.priority(), self.seq), ev);
    }

    /// Processes events until only background timers remain, the horizon
    /// is passed, or (lossless mode) an invariant fails.
    pub fn run(&mut self) {
        self.advance(None);
    }

    /// Processes every event due at or before `t`, then stops. A later
    /// [`Network::run`] continues from there.
    pub fn run_until(&mut self, t: SimTime) {
        self.advance(Some(t));
    }

    fn advance(&mut self, until: Option<SimTime>) {
        let horizon = self.config.timing.horizon;
        while self.halted.is_none() {
            let Some((&(at, _, _), _)) = self.queue.first_key_value() else { break };
            if until.is_some_and(|u| at > u) {
                break;
            }
            match horizon {
                Some(h) if at > h => break,
                None if self.foreground == 0 => break,
                _ => {}
            }
            let (_, ev) = self.queue.pop_first().unwrap();
            if matches!(ev, Event::Deliver { .. }) {
                self.in_flight -= 1;
            }
            if !ev.is_background() {
                self.foreground -= 1;
            }
            self.now = at;
            self.events_processed += 1;
            self.handle(ev);
            let tick_done = self.queue.first_key_value().is_none_or(|(k, _)| k.0 > self.now);
            if self.in_flight == 0 && tick_done {
                self.quiescent_point();
            }
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Deliver { to, msg, sent_at, origin } => self.deliver(to, msg, sent_at, origin),
            Event::Timer { node, timer } => self.fire_timer(node, timer),
            Event::Script(i) => {
                let action = self.config.events[i].action.clone();
                self.script(action);
            }
            Event::Adversary(i) => {
                let action = self.config.adversary[i].action.clone();
                self.adversary_action(action);
            }
            Event::Harvest(id) => {
                let keys = self.nodes.get(&id).map(|n| n.keys.all_symmetric()).unwrap_or_default();
                self.adversary.stats.harvested_keys += keys.len() as u64;
                self.trace_line(id, "harvest", None, "", &format!("{} keys", keys.len()));
                self.adversary.harvested.insert(id, keys);
            }
        }
    }

    fn trace_line(&mut self, node: NodeId, event: &str, peer: Option<NodeId>, kind: &str, outcome: &str) {
        let peer = peer.map(|p| p.to_string()).unwrap_or_default();
        self.trace.push(format!(
            "{},{},{},{},{},{}",
            self.now,
            node,
            sanitize(event),
            peer,
            sanitize(kind),
            sanitize(outcome)
        ));
    }

    /// Runs `f` on node `id` with a fresh handler context, then dispatches
    /// whatever it queued.
    fn with_node<R>(&mut self, id: NodeId, sent_at: SimTime, f: impl FnOnce(&mut Node, &mut Ctx<'_>) -> R) -> Option<R> {
        let mut node = self.nodes.remove(&id)?;
        let mut ctx = Ctx::new(&*self.suite, &mut self.ledger, &mut self.rng, &self.ca, self.params, self.now);
        ctx.sent_at = sent_at;
        let r = f(&mut node, &mut ctx);
        let Ctx { outbox, timers, notes, .. } = ctx;
        self.nodes.insert(id, node);
        for n in notes {
            if n.starts_with("incident") {
                self.adversary.stats.incidents += 1;
            }
            self.trace_line(id, "note", None, "", &n);
        }
        for (at, timer) in timers {
            self.schedule(at, Event::Timer { node: id, timer });
        }
        for m in outbox {
            self.transmit(m, Origin::Honest);
        }
        Some(r)
    }

    fn recipients(&self, msg: &WireMessage, origin: Origin) -> Vec<NodeId> {
        match msg.dst {
            Destination::Node(to) => vec![to],
            Destination::Broadcast => {
                let src = msg.src;
                let sender = self.nodes.get(&src);
                if origin == Origin::Adversary || sender.is_none() {
                    return self
                        .nodes
                        .values()
                        .filter(|n| n.role != Role::Sink && n.id != src)
                        .map(|n| n.id)
                        .collect();
                }
                let sender = sender.unwrap();
                if msg.kind == MessageKind::Hello || sender.role == Role::Sensor {
                    return self.topology.neighbors(src).collect();
                }
                match &sender.actor {
                    Some(a) => a.members.iter().copied().collect(),
                    None => Vec::new(),
                }
            }
        }
    }

    fn latency(&self, src: NodeId, to: NodeId, origin: Origin) -> SimTime {
        if origin == Origin::Adversary || self.topology.adjacency.get(&src).is_some_and(|s| s.contains(&to)) {
            return 1;
        }
        let src_sensor = self.nodes.get(&src).is_some_and(|n| n.role == Role::Sensor);
        let to_actor = self.nodes.get(&to).is_some_and(|n| n.role == Role::Actor);
        if src_sensor && to_actor {
            self.topology.route(src, to).len() as SimTime
        } else {
            1
        }
    }

    fn transmit(&mut self, msg: WireMessage, origin: Origin) {
        let phase = msg.kind.cost_phase();
        if origin == Origin::Honest {
            self.check_post_revocation(&msg);
        } else {
            self.adversary.stats.frames_injected += 1;
        }
        for to in self.recipients(&msg, origin) {
            if origin == Origin::Honest {
                self.ledger.add_sent(msg.src, phase, 1);
            }
            if !self.nodes.contains_key(&to) {
                if origin == Origin::Honest {
                    self.ledger.add_undeliverable(1);
                    self.trace_line(to, "undeliverable", Some(msg.src), msg.kind.name(), "");
                }
                continue;
            }
            if origin == Origin::Honest && self.config.lossy > 0.0 && self.loss_rng.random::<f64>() < self.config.lossy {
                self.lost += 1;
                self.trace_line(to, "lost", Some(msg.src), msg.kind.name(), "");
                continue;
            }
            let at = self.now + self.latency(msg.src, to, origin);
            if origin == Origin::Honest && self.adversary.hears(msg.src, to) {
                self.adversary.capture(to, &msg, at);
            }
            self.schedule(at, Event::Deliver { to, msg: msg.clone(), sent_at: self.now, origin });
        }
    }

    /// Tries every revoked victim's keys on an honest frame sent after the
    /// victim's revocation.
    fn check_post_revocation(&mut self, msg: &WireMessage) {
        let Some(ct) = ciphertext_of(msg) else { return };
        for (victim, at) in &self.revoked_at {
            if *at > self.now {
                continue;
            }
            let Some(node) = self.nodes.get(victim).filter(|n| n.malicious) else { continue };
            for key in node.keys.all_symmetric() {
                self.adversary.stats.post_revocation_attempts += 1;
                if self.suite.sym_decrypt(&key, ct).is_ok() {
                    self.adversary.stats.post_revocation_decrypts += 1;
                }
            }
        }
    }

    fn deliver(&mut self, to: NodeId, msg: WireMessage, sent_at: SimTime, origin: Origin) {
        if origin == Origin::Honest {
            self.ledger.add_received(to, msg.kind.cost_phase(), 1);
        }
        let honest = self.nodes.get(&to).is_some_and(|n| n.is_honest());
        let outcome = if honest {
            self.with_node(to, sent_at, |n, ctx| dispatch(n, &msg, ctx)).unwrap()
        } else {
            Outcome::Ignored("node excluded")
        };
        self.frames.entry(msg.kind.name().to_string()).or_default().record(&outcome);
        let tag = match origin {
            Origin::Honest => "deliver",
            Origin::Adversary => "adversary-deliver",
        };
        self.trace_line(to, tag, Some(msg.src), msg.kind.name(), &outcome.label());
        if origin == Origin::Adversary && honest {
            self.adversary.record_outcome(msg.kind, &outcome);
        }
        if outcome == Outcome::Accepted && attributable(&msg) {
            self.check_attribution(&msg, sent_at);
        }
    }

    fn check_attribution(&mut self, msg: &WireMessage, sent_at: SimTime) {
        let crl = self.ca.crl();
        let ok = self.issued.iter().any(|c| {
            c.subject == msg.src
                && c.is_valid_at(sent_at)
                && !crl.entries().any(|e| e.serial == c.serial && e.revoked_at <= sent_at)
        });
        let st = self.audit.status.entry(Invariant::UpperAttribution).or_default();
        st.checks += 1;
        if !ok {
            let detail = format!("{} accepted from {} without a valid certificate at {sent_at}", msg.kind, msg.src);
            self.violation(Invariant::UpperAttribution, detail);
        }
    }

    fn violation(&mut self, inv: Invariant, detail: String) {
        let at = format!("invariant `{}` violated at event #{} (t={}): {detail}", inv.name(), self.events_processed, self.now);
        let st = self.audit.status.entry(inv).or_default();
        st.violations += 1;
        if st.first_violation.is_none() {
            st.first_violation = Some(at.clone());
        }
        self.trace.push(format!("{},-,violation,,{},{}", self.now, inv.name(), sanitize(&detail)));
        if self.config.lossy == 0.0 && self.halted.is_none() {
            self.halted = Some(at);
        }
    }

    fn quiescent_point(&mut self) {
        let sensors: Vec<NodeId> = self.sensor_ids.clone();
        for s in sensors {
            if let Some(n) = self.nodes.get(&s) {
                let count = StorageCount {
                    stored_keys: n.keys.lower_layer_key_count() as u64,
                    retained_setup: n.keys.retained_setup_count() as u64,
                };
                self.ledger.record_storage(s, count);
            }
        }
        for (inv, detail) in self.audit() {
            self.violation(inv, detail);
        }
        if self.setup.is_none() && self.setup_complete() {
            self.take_setup_snapshot();
        }
    }

    fn setup_complete(&self) -> bool {
        self.topology.actors.iter().all(|a| {
            self.nodes[a].actor.as_ref().is_some_and(|s| {
                !s.is_active() || (s.region_key.is_some() && s.pending_acks.is_empty() && s.initial_region_done)
            })
        })
    }

    fn take_setup_snapshot(&mut self) {
        let t = self.now;
        let topo = &self.topology;
        let exact = topo.mode == TopologyMode::ExactRegular && !self.config.topology.actor_pairwise;
        let model = if exact {
            DegreeModel::ExactRegular { d: self.config.topology.degree as u64 }
        } else {
            DegreeModel::Realized
        };
        let mut participants: Vec<NodeId> = topo.sensors.clone();
        if self.config.topology.actor_pairwise {
            participants.extend(topo.actors.iter().copied());
        }
        let discovery_degrees = participants.iter().map(|p| (*p, topo.degree(*p) as u64)).collect();
        let regions = topo.actors.iter().map(|a| (*a, topo.members(*a))).collect();
        let storage = topo
            .sensors
            .iter()
            .map(|s| (*s, (topo.degree(*s) as u64, self.nodes[s].keys.lower_layer_key_count() as u64)))
            .collect();
        let shape = SetupShape { model, discovery_degrees, regions, storage };
        let reconciliation = reconcile(&self.ledger, &shape, &LeapBaseline::default());

        let reason = if self.config.lossy > 0.0 {
            Some("lossy channel".to_string())
        } else if self.config.events.iter().any(|e| e.at <= t) {
            Some("scripted events ran during setup".to_string())
        } else if self
            .config
            .adversary
            .iter()
            .any(|a| a.at <= t && !matches!(a.action, AdversaryAction::EavesdropAll | AdversaryAction::EavesdropLink(..)))
        {
            Some("adversary acted during setup".to_string())
        } else {
            None
        };
        let outcome = if reason.is_some() {
            "not applicable".to_string()
        } else if reconciliation.pass {
            "pass".to_string()
        } else {
            "fail".to_string()
        };
        self.trace.push(format!("{t},-,setup-complete,,,reconciliation {outcome}"));
        self.setup = Some(SetupSnapshot {
            time: t,
            ledger: self.ledger.clone(),
            shape,
            applicable: reason.is_none(),
            reason,
            reconciliation,
        });
    }

    // -----------------------------------------------------------------
    // Timers

    fn fire_timer(&mut self, id: NodeId, timer: Timer) {
        let Some(node) = self.nodes.get(&id) else { return };
        // Key erasure is automatic; every other timer needs honest code.
        if !node.is_honest() && timer != Timer::DeleteSetupKeys {
            return;
        }
        if let Timer::RegionExpiry { issued_at } = timer {
            let current = node.actor.as_ref().filter(|a| a.is_active()).and_then(|a| a.region_key.as_ref());
            if current.is_none_or(|r| r.issued_at != issued_at) {
                return;
            }
        }
        self.trace_line(id, "timer", None, timer.name(), "");
        let result = self.with_node(id, self.now, |n, ctx| -> Result<(), lower::ProtocolError> {
            match timer {
                Timer::StartDiscovery => lower::start_discovery(n, ctx).map(|_| ()),
                Timer::DeleteSetupKeys => lower::delete_setup_keys(n, ctx),
                Timer::AnnounceNodeKey => lower::announce(n, Destination::Broadcast, ctx).map(|_| ()),
                Timer::StartRegionKey => {
                    if let Some(a) = n.actor.as_mut() {
                        a.k_in = None;
                    }
                    n.keys.initial.k_in = None;
                    lower::establish_region_key(n, ctx).map(|_| ())
                }
                Timer::ReleaseInitialKey => {
                    let has_key = match n.actor.as_mut() {
                        Some(a) => {
                            a.k_in = None;
                            a.region_key.is_some()
                        }
                        None => false,
                    };
                    if has_key {
                        lower::renew_region_key_now(n, None, ctx).map(|_| ())
                    } else {
                        Ok(())
                    }
                }
                Timer::RegionExpiry { .. } => lower::expire_and_renew_region_key(n, ctx).map(|_| ()),
            }
        });
        if let Some(Err(e)) = result {
            self.trace_line(id, "timer-error", None, timer.name(), &e.to_string());
        }
    }

    // -----------------------------------------------------------------
    // Scripted events

    fn script_error(&mut self, what: String) {
        self.trace.push(format!("{},-,script-error,,,{}", self.now, sanitize(&what)));
        self.script_errors.push(format!("t={}: {what}", self.now));
    }

    fn resolve_all(&mut self, refs: &[NodeRef]) -> Option<Vec<NodeId>> {
        let mut out = Vec::new();
        for r in refs {
            match self.resolve(*r) {
                Some(id) => out.push(id),
                None => {
                    self.script_error(format!("unknown node `{r}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn script(&mut self, action: EventAction) {
        match action {
            EventAction::Compromise(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.compromise(id);
                }
            }
            EventAction::Detect(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.detect(id);
                }
            }
            EventAction::RegionData(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.scripted_data(id, DataChannel::Region, None);
                }
            }
            EventAction::Report(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.scripted_data(id, DataChannel::Node, None);
                }
            }
            EventAction::NeighborData(a, b) => {
                if let Some(ids) = self.resolve_all(&[a, b]) {
                    self.scripted_data(ids[0], DataChannel::Pairwise, Some(ids[1]));
                }
            }
            EventAction::AddNode(refs) => {
                if let Some(ids) = self.resolve_all(&refs) {
                    self.add_node(&ids);
                }
            }
            EventAction::ActorMove { from, to, sensors } => {
                let mut refs = vec![from, to];
                refs.extend(sensors);
                if let Some(ids) = self.resolve_all(&refs) {
                    self.actor_move(ids[0], ids[1], &ids[2..]);
                }
            }
            EventAction::ReplaceActor { old, new } => {
                if let Some(ids) = self.resolve_all(&[old, new]) {
                    self.replace_actor(ids[0], ids[1]);
                }
            }
            EventAction::Authenticate(a, b) => {
                if let Some(ids) = self.resolve_all(&[a, b]) {
                    self.upper_stats.auth_started += 1;
                    let r = self.with_node(ids[0], self.now, |n, ctx| upper::start_auth(n, ids[1], ctx));
                    if let Some(Err(e)) = r {
                        self.upper_stats.auth_refused += 1;
                        self.trace_line(ids[0], "auth-refused", Some(ids[1]), "", &e.to_string());
                    }
                }
            }
            EventAction::Session(a, b) => {
                if let Some(ids) = self.resolve_all(&[a, b]) {
                    self.upper_stats.sessions_started += 1;
                    let r = self.with_node(ids[0], self.now, |n, ctx| upper::start_session(n, ids[1], ctx));
                    if let Some(Err(e)) = r {
                        self.upper_stats.sessions_refused += 1;
                        self.trace_line(ids[0], "session-refused", Some(ids[1]), "", &e.to_string());
                    }
                }
            }
            EventAction::EndSession(a, b) => {
                if let Some(ids) = self.resolve_all(&[a, b]) {
                    let x = self.nodes.get_mut(&ids[0]).is_some_and(|n| upper::end_session(n, ids[1]));
                    let y = self.nodes.get_mut(&ids[1]).is_some_and(|n| upper::end_session(n, ids[0]));
                    if x || y {
                        self.upper_stats.sessions_ended += 1;
                        self.trace_line(ids[0], "end-session", Some(ids[1]), "", "ended");
                    } else {
                        self.upper_stats.end_session_noops += 1;
                        self.trace_line(ids[0], "end-session", Some(ids[1]), "", "no session");
                    }
                }
            }
            EventAction::SessionData(a, b) => {
                if let Some(ids) = self.resolve_all(&[a, b]) {
                    self.upper_stats.session_data_sent += 1;
                    let body = format!("t={}", self.now).into_bytes();
                    let r = self.with_node(ids[0], self.now, |n, ctx| {
                        lower::send_data(n, DataChannel::Session, Some(ids[1]), &body, ctx)
                    });
                    if let Some(Err(e)) = r {
                        self.upper_stats.session_data_refused += 1;
                        self.trace_line(ids[0], "session-data-refused", Some(ids[1]), "", &e.to_string());
                    }
                }
            }
            EventAction::RenewCert(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.renew_cert(id);
                }
            }
            EventAction::RevokeCert(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.revoke_cert(id);
                }
            }
        }
    }

    fn resolve_one(&mut self, r: NodeRef) -> Option<NodeId> {
        self.resolve_all(&[r]).map(|v| v[0])
    }

    fn scripted_data(&mut self, id: NodeId, channel: DataChannel, peer: Option<NodeId>) {
        if !self.nodes.get(&id).is_some_and(|n| n.is_honest()) {
            self.script_error(format!("{id} cannot send data: node excluded"));
            return;
        }
        let body = format!("t={}", self.now).into_bytes();
        let r = self.with_node(id, self.now, |n, ctx| lower::send_data(n, channel, peer, &body, ctx));
        if let Some(Err(e)) = r {
            self.script_error(format!("{id} data on {channel:?}: {e}"));
        }
    }

    /// Marks `id` malicious; its key store leaks once the exposure time
    /// has passed.
    pub(crate) fn compromise(&mut self, id: NodeId) {
        let Some(node) = self.nodes.get_mut(&id) else { return };
        if node.malicious {
            return;
        }
        node.malicious = true;
        self.adversary.compromised.insert(id, self.now);
        self.adversary.stats.compromised.push(id.to_string());
        self.trace_line(id, "compromise", None, "", "");
        let at = self.now.max(self.config.timing.t_exposure);
        self.schedule(at, Event::Harvest(id));
    }

    /// Revocation: exclusion, neighbour key removal, then renewal notice,
    /// binding removal and region-key redistribution at the actor.
    fn detect(&mut self, id: NodeId) {
        if self.revoked.contains(&id) {
            self.script_error(format!("{id} already revoked"));
            return;
        }
        self.trace_line(id, "detect", None, "", "phase A");
        if let Some(n) = self.nodes.get_mut(&id) {
            n.revoked = true;
        }
        self.revoked.insert(id);
        self.revoked_at.insert(id, self.now);
        self.adversary.stats.revoked.push(id.to_string());

        let neighbours: Vec<NodeId> = self.topology.neighbors(id).collect();
        for nb in neighbours {
            if let Some(n) = self.nodes.get_mut(&nb).filter(|n| n.is_honest()) {
                if lower::drop_pairwise(n, id) {
                    self.trace_line(nb, "revoke-pairwise", Some(id), "", "phase B");
                }
            }
        }
        let actor = self.nodes.values().find_map(|n| {
            let a = n.actor.as_ref().filter(|a| a.is_active())?;
            (a.binding.contains(id) || a.members.contains(&id)).then_some(n.id)
        });
        if let Some(a) = actor {
            self.trace_line(a, "revoke-member", Some(id), "", "phase C/D");
            if let Some(Err(e)) = self.with_node(a, self.now, |n, ctx| lower::revoke_member(n, id, ctx)) {
                self.script_error(format!("revocation of {id} at {a}: {e}"));
            }
        }
        for n in self.nodes.values_mut() {
            if let Some(a) = n.actor.as_mut().filter(|a| a.is_active()) {
                a.revoked.insert(id);
            }
        }
    }

    fn fresh_node_id(&mut self) -> NodeId {
        loop {
            let id = NodeId(self.rng.random());
            if id.0 != 0 && !self.nodes.contains_key(&id) && !self.adversary.used_ids.contains(&id) {
                return id;
            }
        }
    }

    /// Deploys a new sensor next to `neighbors`. The actor vouches for it
    /// to each bound neighbour and runs a unicast node-key round.
    fn add_node(&mut self, neighbors: &[NodeId]) {
        let actor = neighbors
            .iter()
            .find_map(|n| self.current_actor_of(*n))
            .or_else(|| self.topology.actors.iter().copied().find(|a| self.nodes[a].is_active_actor()));
        let Some(actor) = actor else {
            self.script_error("add_node: no active actor".into());
            return;
        };
        let id = self.fresh_node_id();
        let mut node = Node::new(id, Role::Sensor);
        node.lower.revoked_peers = self.revoked.clone();
        self.nodes.insert(id, node);
        let (k_ip, k_in) = (self.k_ip.clone(), self.k_in.clone());
        let _ = self.with_node(id, self.now, |n, ctx| lower::predistribute(n, k_ip, k_in, ctx));
        self.sensor_ids.push(id);
        self.topology.attach_sensor(id, neighbors, actor);
        self.trace_line(id, "add-node", Some(actor), "", &format!("{} neighbours", neighbors.len()));
        if let Some(a) = self.nodes.get_mut(&actor).and_then(|n| n.actor.as_mut()) {
            a.k_in = Some(self.k_in.clone());
            a.members.insert(id);
        }
        let master = lower::master_key(&*self.suite, &self.k_ip, id);
        for nb in neighbors {
            let voucher = self.nodes.values().find_map(|n| {
                let a = n.actor.as_ref().filter(|a| a.is_active())?;
                a.binding.contains(*nb).then_some(n.id)
            });
            let honest = self.nodes.get(nb).is_some_and(|n| n.is_honest());
            match voucher {
                Some(v) if honest => {
                    let nb = *nb;
                    let master = master.clone();
                    if let Some(Err(e)) =
                        self.with_node(v, self.now, |n, ctx| lower::vouch_for_newcomer(n, nb, id, &master, ctx))
                    {
                        self.script_error(format!("vouch for {id} to {nb}: {e}"));
                        self.unkeyed.insert(pair(id, nb));
                    }
                }
                _ => {
                    self.unkeyed.insert(pair(id, *nb));
                    self.trace_line(id, "unkeyed-link", Some(*nb), "", "");
                }
            }
        }
        if let Some(Err(e)) = self.with_node(actor, self.now, |n, ctx| lower::announce(n, Destination::Node(id), ctx)) {
            self.script_error(format!("announce to {id}: {e}"));
        }
        let t_disc = self.config.timing.t_discovery;
        let start = self.now + 1;
        self.schedule(start, Event::Timer { node: id, timer: Timer::StartDiscovery });
        self.schedule(start + t_disc, Event::Timer { node: id, timer: Timer::DeleteSetupKeys });
        let route = self.topology.route(id, actor).len() as SimTime;
        self.schedule(start + t_disc + 2 * route + 2, Event::Timer { node: actor, timer: Timer::ReleaseInitialKey });
    }

    fn current_actor_of(&self, sensor: NodeId) -> Option<NodeId> {
        self.nodes.values().find_map(|n| {
            let a = n.actor.as_ref().filter(|a| a.is_active())?;
            (a.binding.contains(sensor) || a.members.contains(&sensor)).then_some(n.id)
        })
    }

    /// Moves `sensors` from one actor's region to another's through a
    /// binding-table handover at the sink.
    fn actor_move(&mut self, from: NodeId, to: NodeId, sensors: &[NodeId]) {
        if sensors.is_empty() {
            self.trace_line(from, "actor-move", Some(to), "", "empty reassignment");
            return;
        }
        let active = |id: &NodeId| self.nodes.get(id).is_some_and(|n| n.is_active_actor());
        let members_ok = sensors.iter().all(|s| {
            !self.revoked.contains(s)
                && self.nodes[&from].actor.as_ref().is_some_and(|a| a.members.contains(s) && a.binding.contains(*s))
        });
        if !active(&from) || !active(&to) || !members_ok {
            self.script_error(format!("actor_move {from} -> {to}: partition violated"));
            return;
        }
        for s in sensors {
            self.topology.reassign(*s, to);
        }
        self.topology.recompute_routes();
        self.trace_line(from, "actor-move", Some(to), "", &format!("{} sensors", sensors.len()));
        let moved = sensors.to_vec();
        let r = self.with_node(from, self.now, |n, ctx| {
            let a = n.actor.as_mut().unwrap();
            for s in &moved {
                a.binding.remove(*s);
                a.members.remove(s);
            }
            lower::sync_binding(n, Some(Handover { to, moved: moved.clone() }), ctx)?;
            lower::renew_region_key_now(n, None, ctx).map(|_| ())
        });
        if let Some(Err(e)) = r {
            self.script_error(format!("actor_move {from} -> {to}: {e}"));
        }
    }

    /// Retires `old` and hands its region to a standby actor through the
    /// sink's copy of the binding table.
    fn replace_actor(&mut self, old: NodeId, spare: NodeId) {
        let region = self.nodes.get(&old).and_then(|n| n.actor.as_ref()).filter(|a| a.is_active()).map(|a| a.region);
        let standby = self
            .nodes
            .get(&spare)
            .and_then(|n| n.actor.as_ref())
            .is_some_and(|a| a.status == ActorStatus::Standby);
        let sink = self.topology.sink;
        let Some(region) = region.filter(|_| standby) else {
            self.script_error(format!("replace_actor {old} -> {spare}: needs an active actor and a standby spare"));
            return;
        };
        let has_table = self.nodes[&sink].sink.as_ref().is_some_and(|s| s.tables.contains_key(&region));
        if !has_table {
            self.script_error(format!("replace_actor {old} -> {spare}: sink holds no table for {region}"));
            return;
        }
        if let Some(a) = self.nodes.get_mut(&old).and_then(|n| n.actor.as_mut()) {
            a.status = ActorStatus::Retired;
        }
        self.topology.hand_over(old, spare);
        if let Some(s) = self.nodes.get_mut(&sink).and_then(|n| n.sink.as_mut()) {
            s.pending_handover.insert(spare, region);
        }
        self.trace_line(old, "replace-actor", Some(spare), "", &region.to_string());
        if let Some(Err(e)) = self.with_node(spare, self.now, |n, ctx| upper::start_auth(n, sink, ctx)) {
            self.script_error(format!("replace_actor {old} -> {spare}: {e}"));
        }
    }

    fn renew_cert(&mut self, id: NodeId) {
        let Some(cert) = self.nodes.get(&id).and_then(|n| n.upper.as_ref()).map(|u| u.cert.clone()) else {
            self.script_error(format!("{id} holds no certificate"));
            return;
        };
        match self.ca.renew(&*self.suite, &cert, self.now) {
            Ok(new) => {
                self.upper_stats.renewals += 1;
                self.trace_line(id, "renew-cert", None, "", &format!("serial {}", new.serial));
                let n = self.nodes.get_mut(&id).unwrap();
                upper::install_certificate(n, new.clone());
                let sink = self.topology.sink;
                if let Some(s) = self.nodes.get_mut(&sink).and_then(|n| n.sink.as_mut()) {
                    if s.directory.contains_key(&id) {
                        s.directory.insert(id, new.public.clone());
                    }
                }
                self.issued.push(new);
            }
            Err(e) => {
                self.upper_stats.renewals_denied += 1;
                self.trace_line(id, "renew-cert", None, "", &format!("denied: {e}"));
            }
        }
    }

    fn revoke_cert(&mut self, id: NodeId) {
        let Some(cert) = self.ca.current(id).cloned() else {
            self.script_error(format!("{id} holds no certificate"));
            return;
        };
        self.ca.revoke(&cert, self.now, "scripted");
        self.upper_stats.revocations += 1;
        self.trace_line(id, "revoke-cert", None, "", &format!("serial {}", cert.serial));
        let peers: Vec<NodeId> = self.nodes.values().filter(|n| n.upper.is_some() && n.id != id).map(|n| n.id).collect();
        for p in peers {
            for (a, b) in [(p, id), (id, p)] {
                if let Some(n) = self.nodes.get_mut(&a) {
                    upper::end_session(n, b);
                    if let Some(u) = n.upper.as_mut() {
                        u.authenticated.remove(&b);
                        u.handshakes.remove(&b);
                    }
                }
            }
        }
    }

    // -----------------------------------------------------------------
    // Adversary

    fn inject(&mut self, msg: WireMessage) {
        self.trace_line(msg.src, "inject", None, msg.kind.name(), &msg.dst.to_string());
        self.transmit(msg, Origin::Adversary);
    }

    fn adversary_action(&mut self, action: AdversaryAction) {
        match action {
            AdversaryAction::EavesdropAll => {
                self.adversary.eavesdrop_all = true;
                self.trace.push(format!("{},-,eavesdrop,,,all", self.now));
            }
            AdversaryAction::EavesdropLink(a, b) => {
                if let Some(ids) = self.resolve_all(&[a, b]) {
                    self.adversary.listen(ids[0], ids[1]);
                    self.trace_line(ids[0], "eavesdrop", Some(ids[1]), "", "");
                }
            }
            AdversaryAction::ReplayAll => self.replay(None),
            AdversaryAction::ReplayKind(k) => self.replay(Some(k)),
            AdversaryAction::HelloFlood(n) => {
                for _ in 0..n {
                    let fake = self.fresh_fake();
                    let nonce = Nonce::random(&mut self.adv_rng);
                    let msg = WireMessage::new(
                        MessageKind::Hello,
                        fake,
                        Destination::Broadcast,
                        lower::hello_payload(fake, &nonce),
                    );
                    self.inject(msg);
                }
            }
            AdversaryAction::Sybil { claimed, target } => {
                let Some(ids) = self.resolve_all(&[claimed, target]) else { return };
                let (claimed, target) = (ids[0], ids[1]);
                let nonce = Nonce::random(&mut self.adv_rng);
                self.inject(WireMessage::new(
                    MessageKind::Hello,
                    claimed,
                    Destination::Broadcast,
                    lower::hello_payload(claimed, &nonce),
                ));
                let key = self
                    .adversary
                    .harvested
                    .contains_key(&claimed)
                    .then(|| self.nodes.get(&claimed).and_then(|n| n.keys.master.clone()))
                    .flatten()
                    .unwrap_or_else(|| SymKey::random(&mut self.adv_rng, KeyKind::Master));
                let heard = self
                    .adversary
                    .overheard_hello_nonce(target)
                    .unwrap_or_else(|| Nonce::random(&mut self.adv_rng));
                let mut w = Writer::new();
                w.put_u32(target.0).put_u32(claimed.0).put_raw(&heard.0);
                let tag: MacTag = self.suite.mac(&key, &w.finish());
                self.inject(
                    WireMessage::new(MessageKind::MacResponse, claimed, Destination::Node(target), claimed.to_bytes().to_vec())
                        .with_mac(tag),
                );
            }
            AdversaryAction::ImpostorRequest(r) => {
                let Some(actor) = self.resolve_one(r) else { return };
                let fake = self.fresh_fake();
                let key = SymKey::random(&mut self.adv_rng, KeyKind::InitialNode);
                let mut w = Writer::new();
                w.put_u32(fake.0)
                    .put_raw(&Nonce::random(&mut self.adv_rng).0)
                    .put_raw(&Nonce::random(&mut self.adv_rng).0);
                let ct = self.suite.sym_encrypt(&key, &w.finish());
                self.inject(WireMessage::new(MessageKind::NodeKeyRequest, fake, Destination::Node(actor), ct));
            }
            AdversaryAction::Raw(bytes) => match WireMessage::deserialize(&bytes) {
                Ok(msg) => self.inject(msg),
                Err(e) => self.script_error(format!("raw frame: {e}")),
            },
            AdversaryAction::Compromise(r) => {
                if let Some(id) = self.resolve_one(r) {
                    self.compromise(id);
                }
            }
        }
    }

    /// Re-delivers captured frames whose original delivery already
    /// happened, each to its original recipient.
    fn replay(&mut self, kind: Option<MessageKind>) {
        let frames = self.adversary.replayable(self.now, kind);
        self.adversary.stats.frames_replayed += frames.len() as u64;
        self.trace.push(format!(
            "{},-,replay,,{},{} frames",
            self.now,
            kind.map_or("all", |k| k.name()),
            frames.len()
        ));
        for (to, msg) in frames {
            self.schedule(self.now + 1, Event::Deliver { to, msg, sent_at: self.now, origin: Origin::Adversary });
        }
    }

    /// Pair-wise keys honest nodes hold with identities no node owns.
    fn fake_identity_keys(&self) -> u64 {
        self.nodes
            .values()
            .filter(|n| n.is_honest())
            .flat_map(|n| n.keys.pairwise.keys())
            .filter(|p| !self.nodes.contains_key(p))
            .count() as u64
    }
}

fn attributable(msg: &WireMessage) -> bool {
    match msg.kind {
        MessageKind::CertChallenge
        | MessageKind::SessionKeyMsg
        | MessageKind::BindingSync
        | MessageKind::BindingTransfer => true,
        MessageKind::Data => lower::parse_data(&msg.payload).is_ok_and(|(c, _, _)| c == DataChannel::Session),
        _ => false,
    }
}

fn dispatch(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let sensor = node.role == Role::Sensor;
    match msg.kind {
        MessageKind::Hello => lower::answer_hello(node, msg, ctx),
        MessageKind::MacResponse => lower::handle_mac_response(node, msg, ctx),
        MessageKind::ActorAnnounce if sensor => lower::handle_announce(node, msg, ctx),
        MessageKind::NodeKeyRequest => lower::handle_node_key_request(node, msg, ctx),
        MessageKind::NodeKeyReply if sensor => lower::handle_node_key_reply(node, msg, ctx),
        MessageKind::RegionKeyDistribute if sensor => lower::handle_region_distribute(node, msg, ctx),
        MessageKind::RegionKeyAck => lower::handle_region_ack(node, msg, ctx),
        MessageKind::RegionKeyRenewalNotice if sensor => lower::handle_renewal_notice(node, msg, ctx),
        MessageKind::PairwiseVouch if sensor => lower::handle_vouch(node, msg, ctx),
        MessageKind::BindingSync => lower::handle_binding_sync(node, msg, ctx),
        MessageKind::BindingTransfer => lower::handle_binding_transfer(node, msg, ctx),
        MessageKind::CertExchange => upper::handle_cert_exchange(node, msg, ctx),
        MessageKind::CertChallenge => upper::handle_cert_challenge(node, msg, ctx),
        MessageKind::SessionKeyMsg => upper::handle_session_msg(node, msg, ctx),
        MessageKind::Data => lower::handle_data(node, msg, ctx),
        _ => Outcome::Ignored("not for this role"),
    }
}
