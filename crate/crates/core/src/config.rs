//! Scenario files: a flat sectioned `key = value` format.
//!
//! ```text
//! [scenario]
//! seed = 7
//!
//! [topology]
//! n_sensors = 20
//! degree = 4
//! mode = exact-regular
//!
//! [timing]
//! t_exposure = 20
//! t_discovery = 5
//!
//! [events]
//! event = 40 compromise sensor:3
//! event = 45 detect sensor:3
//!
//! [adversary]
//! action = 0 eavesdrop all
//! ```
//!
//! Repeated `event` and `action` keys keep file order. Node references are
//! `sensor:i`, `actor:i`, `spare:i`, `sink` and `fake:i`; sensors added at
//! run time continue the `sensor:` numbering in the order they are added.

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::crypto::known_suites;
use crate::model::{MessageKind, SimTime, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TopologyMode {
    /// Circulant graph in which every sensor has exactly `degree` neighbours.
    ExactRegular,
    /// Random geometric graph tuned to a mean degree of `degree`.
    Geometric,
}

impl TopologyMode {
    pub fn name(self) -> &'static str {
        match self {
            TopologyMode::ExactRegular => "exact-regular",
            TopologyMode::Geometric => "geometric",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact-regular" => Some(TopologyMode::ExactRegular),
            "geometric" => Some(TopologyMode::Geometric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyParams {
    pub n_sensors: usize,
    pub n_actors: usize,
    pub spare_actors: usize,
    pub degree: usize,
    pub mode: TopologyMode,
    /// Actors run pair-wise discovery with their one-hop sensors.
    pub actor_pairwise: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Timing {
    pub t_exposure: SimTime,
    pub t_discovery: SimTime,
    pub region_key_ttl: SimTime,
    pub cert_validity: SimTime,
    pub t_refresh: SimTime,
    pub horizon: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NodeRef {
    Sensor(usize),
    Actor(usize),
    Spare(usize),
    Sink,
    Fake(usize),
}

impl NodeRef {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "sink" {
            return Some(NodeRef::Sink);
        }
        let (kind, idx) = s.split_once(':')?;
        let i: usize = idx.parse().ok()?;
        match kind {
            "sensor" => Some(NodeRef::Sensor(i)),
            "actor" => Some(NodeRef::Actor(i)),
            "spare" => Some(NodeRef::Spare(i)),
            "fake" => Some(NodeRef::Fake(i)),
            _ => None,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Sensor(i) => write!(f, "sensor:{i}"),
            NodeRef::Actor(i) => write!(f, "actor:{i}"),
            NodeRef::Spare(i) => write!(f, "spare:{i}"),
            NodeRef::Sink => f.write_str("sink"),
            NodeRef::Fake(i) => write!(f, "fake:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum EventAction {
    /// Capture: the node turns malicious and its keys leak.
    Compromise(NodeRef),
    /// Intrusion-detection verdict; starts revocation.
    Detect(NodeRef),
    RegionData(NodeRef),
    Report(NodeRef),
    NeighborData(NodeRef, NodeRef),
    /// New sensor whose one-hop neighbours are listed.
    AddNode(Vec<NodeRef>),
    ActorMove { from: NodeRef, to: NodeRef, sensors: Vec<NodeRef> },
    ReplaceActor { old: NodeRef, new: NodeRef },
    Authenticate(NodeRef, NodeRef),
    Session(NodeRef, NodeRef),
    EndSession(NodeRef, NodeRef),
    SessionData(NodeRef, NodeRef),
    RenewCert(NodeRef),
    RevokeCert(NodeRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum AdversaryAction {
    EavesdropAll,
    EavesdropLink(NodeRef, NodeRef),
    ReplayAll,
    ReplayKind(MessageKind),
    HelloFlood(u32),
    Sybil { claimed: NodeRef, target: NodeRef },
    ImpostorRequest(NodeRef),
    Raw(Vec<u8>),
    Compromise(NodeRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Timed<T> {
    pub at: SimTime,
    pub action: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputPaths {
    pub trace: String,
    pub report: String,
    pub reconciliation: String,
    pub curves: String,
    pub crl: String,
    pub binding_prefix: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            trace: "trace.log".into(),
            report: "report.json".into(),
            reconciliation: "reconciliation.json".into(),
            curves: "curves.csv".into(),
            crl: "crl.csv".into(),
            binding_prefix: "binding_".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub suite: String,
    pub seed: u64,
    /// Per-delivery drop probability; 0 is lossless.
    pub lossy: f64,
    pub topology: TopologyParams,
    pub timing: Timing,
    pub events: Vec<Timed<EventAction>>,
    pub adversary: Vec<Timed<AdversaryAction>>,
    pub output: OutputPaths,
}

impl ScenarioConfig {
    /// A lossless full-setup scenario with no script.
    pub fn baseline(seed: u64, n_sensors: usize, degree: usize, mode: TopologyMode) -> Self {
        ScenarioConfig {
            name: "baseline".into(),
            suite: "toy".into(),
            seed,
            lossy: 0.0,
            topology: TopologyParams {
                n_sensors,
                n_actors: 1,
                spare_actors: 0,
                degree,
                mode,
                actor_pairwise: false,
            },
            timing: Timing {
                t_exposure: 20,
                t_discovery: 5,
                region_key_ttl: 1000,
                cert_validity: 1000,
                t_refresh: 500,
                horizon: None,
            },
            events: Vec::new(),
            adversary: Vec::new(),
            output: OutputPaths::default(),
        }
    }

    /// Parses and validates a scenario file.
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigError>> {
        let cfg = parse_raw(text)?;
        let errors = cfg.validate();
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Number of sensors once every scripted `add_node` has run.
    pub fn total_sensors(&self) -> usize {
        self.topology.n_sensors + self.events.iter().filter(|e| matches!(e.action, EventAction::AddNode(_))).count()
    }

    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let t = &self.timing;
        let topo = &self.topology;
        if !known_suites().contains(&self.suite.as_str()) {
            errs.push(ConfigError::new("scenario.suite", format!("unknown suite `{}`", self.suite)));
        }
        if !(0.0..1.0).contains(&self.lossy) {
            errs.push(ConfigError::new("scenario.lossy", "drop probability must lie in [0, 1)"));
        }
        if t.t_exposure <= t.t_discovery {
            errs.push(ConfigError::new(
                "timing.t_exposure",
                format!(
                    "T_exposure > T_discovery assumption violated ({} <= {})",
                    t.t_exposure, t.t_discovery
                ),
            ));
        }
        if t.t_discovery < 2 {
            errs.push(ConfigError::new("timing.t_discovery", "discovery needs at least 2 ticks (hello and response)"));
        }
        if t.cert_validity == 0 {
            errs.push(ConfigError::new("timing.cert_validity", "must be positive"));
        }
        if t.region_key_ttl == 0 {
            errs.push(ConfigError::new("timing.region_key_ttl", "must be positive"));
        }
        if t.t_refresh > t.cert_validity {
            errs.push(ConfigError::new(
                "timing.t_refresh",
                format!("T_refresh ({}) exceeds certificate validity ({})", t.t_refresh, t.cert_validity),
            ));
        }
        if topo.n_actors == 0 {
            errs.push(ConfigError::new("topology.n_actors", "at least one actor is required"));
        }
        if topo.degree > 0 && topo.degree >= topo.n_sensors {
            errs.push(ConfigError::new(
                "topology.degree",
                format!("degree {} infeasible with {} sensors", topo.degree, topo.n_sensors),
            ));
        }
        if topo.mode == TopologyMode::ExactRegular && (topo.n_sensors * topo.degree) % 2 == 1 {
            errs.push(ConfigError::new("topology.degree", "exact-regular mode needs n_sensors * degree even"));
        }

        let sensors = self.total_sensors();
        let check = |r: &NodeRef, field: &str, errs: &mut Vec<ConfigError>| {
            let ok = match *r {
                NodeRef::Sensor(i) => i < sensors,
                NodeRef::Actor(i) => i < topo.n_actors,
                NodeRef::Spare(i) => i < topo.spare_actors,
                NodeRef::Sink | NodeRef::Fake(_) => true,
            };
            if !ok {
                errs.push(ConfigError::new(field, format!("unknown node `{r}`")));
            }
        };
        let mut compromised_at: Vec<(NodeRef, SimTime)> = self
            .adversary
            .iter()
            .filter_map(|a| match a.action {
                AdversaryAction::Compromise(r) => Some((r, a.at)),
                _ => None,
            })
            .collect();
        let mut sorted_events: Vec<(usize, &Timed<EventAction>)> = self.events.iter().enumerate().collect();
        sorted_events.sort_by_key(|(i, e)| (e.at, *i));
        for (i, ev) in &sorted_events {
            let field = format!("events[{i}]");
            if let Some(h) = t.horizon {
                if ev.at > h {
                    errs.push(ConfigError::new(&field, format!("time {} beyond horizon {h}", ev.at)));
                }
            }
            let sensor_only = |r: &NodeRef, errs: &mut Vec<ConfigError>| {
                if !matches!(r, NodeRef::Sensor(_)) {
                    errs.push(ConfigError::new(&field, format!("`{r}` must be a sensor (actors are assumed uncompromised)")));
                }
            };
            let upper_only = |r: &NodeRef, errs: &mut Vec<ConfigError>| {
                if !matches!(r, NodeRef::Actor(_) | NodeRef::Spare(_) | NodeRef::Sink) {
                    errs.push(ConfigError::new(&field, format!("`{r}` is not an upper-layer node")));
                }
            };
            let actor_only = |r: &NodeRef, errs: &mut Vec<ConfigError>| {
                if !matches!(r, NodeRef::Actor(_) | NodeRef::Spare(_)) {
                    errs.push(ConfigError::new(&field, format!("`{r}` must be an actor")));
                }
            };
            for r in event_refs(&ev.action) {
                check(r, &field, &mut errs);
                if matches!(r, NodeRef::Fake(_)) {
                    errs.push(ConfigError::new(&field, "scripted events cannot reference fake nodes"));
                }
            }
            match &ev.action {
                EventAction::Compromise(r) => {
                    sensor_only(r, &mut errs);
                    compromised_at.push((*r, ev.at));
                }
                EventAction::Detect(r) => {
                    sensor_only(r, &mut errs);
                    match compromised_at.iter().filter(|(c, at)| c == r && *at <= ev.at).max_by_key(|(_, at)| *at) {
                        None => errs.push(ConfigError::new(&field, format!("detect of `{r}` without prior compromise"))),
                        Some((_, at)) if ev.at - at > t.t_exposure => errs.push(ConfigError::new(
                            &field,
                            format!("detection {} ticks after compromise exceeds t_exposure {}", ev.at - at, t.t_exposure),
                        )),
                        _ => {}
                    }
                }
                EventAction::RegionData(r) => actor_only(r, &mut errs),
                EventAction::Report(r) => sensor_only(r, &mut errs),
                EventAction::NeighborData(a, b) => {
                    sensor_only(a, &mut errs);
                    sensor_only(b, &mut errs);
                }
                EventAction::AddNode(ns) => {
                    for r in ns {
                        sensor_only(r, &mut errs);
                    }
                }
                EventAction::ActorMove { from, to, sensors } => {
                    actor_only(from, &mut errs);
                    actor_only(to, &mut errs);
                    if from == to {
                        errs.push(ConfigError::new(&field, "actor_move needs two distinct actors"));
                    }
                    for r in sensors {
                        sensor_only(r, &mut errs);
                    }
                }
                EventAction::ReplaceActor { old, new } => {
                    actor_only(old, &mut errs);
                    if old == new {
                        errs.push(ConfigError::new(&field, "replace_actor needs two distinct actors"));
                    }
                    if !matches!(new, NodeRef::Spare(_)) {
                        errs.push(ConfigError::new(&field, format!("replacement `{new}` must be a spare actor")));
                    }
                }
                EventAction::Authenticate(a, b)
                | EventAction::Session(a, b)
                | EventAction::EndSession(a, b)
                | EventAction::SessionData(a, b) => {
                    upper_only(a, &mut errs);
                    upper_only(b, &mut errs);
                    if a == b {
                        errs.push(ConfigError::new(&field, "peers must differ"));
                    }
                }
                EventAction::RenewCert(r) | EventAction::RevokeCert(r) => upper_only(r, &mut errs),
            }
        }
        for (i, step) in self.adversary.iter().enumerate() {
            let field = format!("adversary[{i}]");
            if let Some(h) = t.horizon {
                if step.at > h {
                    errs.push(ConfigError::new(&field, format!("time {} beyond horizon {h}", step.at)));
                }
            }
            for r in adversary_refs(&step.action) {
                check(r, &field, &mut errs);
            }
            match &step.action {
                AdversaryAction::Compromise(r) if !matches!(r, NodeRef::Sensor(_)) => {
                    errs.push(ConfigError::new(&field, format!("`{r}` must be a sensor (actors are assumed uncompromised)")));
                }
                AdversaryAction::ImpostorRequest(r) if !matches!(r, NodeRef::Actor(_)) => {
                    errs.push(ConfigError::new(&field, format!("impostor request target `{r}` must be an actor")));
                }
                AdversaryAction::Raw(bytes) => {
                    if let Err(e) = WireMessage::deserialize(bytes) {
                        errs.push(ConfigError::new(&field, format!("raw frame does not parse: {e}")));
                    }
                }
                _ => {}
            }
        }
        errs
    }

    /// Canonical rendering with every default spelled out; parses back to
    /// an equal configuration.
    pub fn canonical(&self) -> String {
        let t = &self.timing;
        let topo = &self.topology;
        let mut s = String::new();
        s.push_str("[scenario]\n");
        s.push_str(&format!("name = {}\n", self.name));
        s.push_str(&format!("suite = {}\n", self.suite));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("lossy = {}\n", self.lossy));
        s.push_str("\n[topology]\n");
        s.push_str(&format!("n_sensors = {}\n", topo.n_sensors));
        s.push_str(&format!("n_actors = {}\n", topo.n_actors));
        s.push_str(&format!("spare_actors = {}\n", topo.spare_actors));
        s.push_str(&format!("degree = {}\n", topo.degree));
        s.push_str(&format!("mode = {}\n", topo.mode.name()));
        s.push_str(&format!("actor_pairwise = {}\n", topo.actor_pairwise));
        s.push_str("\n[timing]\n");
        s.push_str(&format!("t_exposure = {}\n", t.t_exposure));
        s.push_str(&format!("t_discovery = {}\n", t.t_discovery));
        s.push_str(&format!("region_key_ttl = {}\n", t.region_key_ttl));
        s.push_str(&format!("cert_validity = {}\n", t.cert_validity));
        s.push_str(&format!("t_refresh = {}\n", t.t_refresh));
        if let Some(h) = t.horizon {
            s.push_str(&format!("horizon = {h}\n"));
        }
        s.push_str("\n[events]\n");
        for e in &self.events {
            s.push_str(&format!("event = {} {}\n", e.at, render_event(&e.action)));
        }
        s.push_str("\n[adversary]\n");
        for a in &self.adversary {
            s.push_str(&format!("action = {} {}\n", a.at, render_adversary(&a.action)));
        }
        let o = &self.output;
        s.push_str("\n[output]\n");
        s.push_str(&format!("trace = {}\n", o.trace));
        s.push_str(&format!("report = {}\n", o.report));
        s.push_str(&format!("reconciliation = {}\n", o.reconciliation));
        s.push_str(&format!("curves = {}\n", o.curves));
        s.push_str(&format!("crl = {}\n", o.crl));
        s.push_str(&format!("binding_prefix = {}\n", o.binding_prefix));
        s
    }

    /// SHA-256 of the canonical rendering, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn event_refs(a: &EventAction) -> Vec<&NodeRef> {
    match a {
        EventAction::Compromise(r)
        | EventAction::Detect(r)
        | EventAction::RegionData(r)
        | EventAction::Report(r)
        | EventAction::RenewCert(r)
        | EventAction::RevokeCert(r) => vec![r],
        EventAction::NeighborData(a, b)
        | EventAction::Authenticate(a, b)
        | EventAction::Session(a, b)
        | EventAction::EndSession(a, b)
        | EventAction::SessionData(a, b) => vec![a, b],
        EventAction::AddNode(ns) => ns.iter().collect(),
        EventAction::ActorMove { from, to, sensors } => [from, to].into_iter().chain(sensors.iter()).collect(),
        EventAction::ReplaceActor { old, new } => vec![old, new],
    }
}

fn adversary_refs(a: &AdversaryAction) -> Vec<&NodeRef> {
    match a {
        AdversaryAction::EavesdropLink(a, b) => vec![a, b],
        AdversaryAction::Sybil { claimed, target } => vec![claimed, target],
        AdversaryAction::ImpostorRequest(r) | AdversaryAction::Compromise(r) => vec![r],
        _ => Vec::new(),
    }
}

fn join(refs: &[NodeRef]) -> String {
    refs.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ")
}

fn render_event(a: &EventAction) -> String {
    match a {
        EventAction::Compromise(r) => format!("compromise {r}"),
        EventAction::Detect(r) => format!("detect {r}"),
        EventAction::RegionData(r) => format!("region_data {r}"),
        EventAction::Report(r) => format!("report {r}"),
        EventAction::NeighborData(a, b) => format!("neighbor_data {a} {b}"),
        EventAction::AddNode(ns) if ns.is_empty() => "add_node".to_string(),
        EventAction::AddNode(ns) => format!("add_node {}", join(ns)),
        EventAction::ActorMove { from, to, sensors } => format!("actor_move {from} {to} {}", join(sensors)).trim_end().to_string(),
        EventAction::ReplaceActor { old, new } => format!("replace_actor {old} {new}"),
        EventAction::Authenticate(a, b) => format!("authenticate {a} {b}"),
        EventAction::Session(a, b) => format!("session {a} {b}"),
        EventAction::EndSession(a, b) => format!("end_session {a} {b}"),
        EventAction::SessionData(a, b) => format!("session_data {a} {b}"),
        EventAction::RenewCert(r) => format!("renew_cert {r}"),
        EventAction::RevokeCert(r) => format!("revoke_cert {r}"),
    }
}

fn render_adversary(a: &AdversaryAction) -> String {
    match a {
        AdversaryAction::EavesdropAll => "eavesdrop all".into(),
        AdversaryAction::EavesdropLink(a, b) => format!("eavesdrop {a} {b}"),
        AdversaryAction::ReplayAll => "replay all".into(),
        AdversaryAction::ReplayKind(k) => format!("replay {k}"),
        AdversaryAction::HelloFlood(n) => format!("inject hello_flood {n}"),
        AdversaryAction::Sybil { claimed, target } => format!("inject sybil {claimed} {target}"),
        AdversaryAction::ImpostorRequest(r) => format!("inject impostor_request {r}"),
        AdversaryAction::Raw(b) => format!("inject raw {}", b.iter().map(|x| format!("{x:02x}")).collect::<String>()),
        AdversaryAction::Compromise(r) => format!("compromise {r}"),
    }
}

fn parse_refs(words: &[&str], field: &str) -> Result<Vec<NodeRef>, ConfigError> {
    words
        .iter()
        .map(|w| NodeRef::parse(w).ok_or_else(|| ConfigError::new(field, format!("bad node reference `{w}`"))))
        .collect()
}

fn parse_time_and_rest<'a>(value: &'a str, field: &str) -> Result<(SimTime, Vec<&'a str>), ConfigError> {
    let mut words = value.split_whitespace();
    let at = words
        .next()
        .ok_or_else(|| ConfigError::new(field, "missing time"))?
        .parse::<SimTime>()
        .map_err(|_| ConfigError::new(field, "time must be a non-negative integer"))?;
    let rest: Vec<&str> = words.collect();
    if rest.is_empty() {
        return Err(ConfigError::new(field, "missing action"));
    }
    Ok((at, rest))
}

fn parse_event(value: &str, field: &str) -> Result<Timed<EventAction>, ConfigError> {
    let (at, w) = parse_time_and_rest(value, field)?;
    let args = parse_refs(&w[1..], field)?;
    let arity = |n: usize| -> Result<(), ConfigError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(ConfigError::new(field, format!("`{}` takes {n} node argument(s), got {}", w[0], args.len())))
        }
    };
    let action = match w[0] {
        "compromise" => arity(1).map(|_| EventAction::Compromise(args[0]))?,
        "detect" => arity(1).map(|_| EventAction::Detect(args[0]))?,
        "region_data" => arity(1).map(|_| EventAction::RegionData(args[0]))?,
        "report" => arity(1).map(|_| EventAction::Report(args[0]))?,
        "neighbor_data" => arity(2).map(|_| EventAction::NeighborData(args[0], args[1]))?,
        "add_node" => EventAction::AddNode(args),
        "actor_move" => {
            if args.len() < 2 {
                return Err(ConfigError::new(field, "`actor_move` takes <from> <to> [sensors...]"));
            }
            EventAction::ActorMove { from: args[0], to: args[1], sensors: args[2..].to_vec() }
        }
        "replace_actor" => arity(2).map(|_| EventAction::ReplaceActor { old: args[0], new: args[1] })?,
        "authenticate" => arity(2).map(|_| EventAction::Authenticate(args[0], args[1]))?,
        "session" => arity(2).map(|_| EventAction::Session(args[0], args[1]))?,
        "end_session" => arity(2).map(|_| EventAction::EndSession(args[0], args[1]))?,
        "session_data" => arity(2).map(|_| EventAction::SessionData(args[0], args[1]))?,
        "renew_cert" => arity(1).map(|_| EventAction::RenewCert(args[0]))?,
        "revoke_cert" => arity(1).map(|_| EventAction::RevokeCert(args[0]))?,
        other => return Err(ConfigError::new(field, format!("unknown event `{other}`"))),
    };
    Ok(Timed { at, action })
}

fn parse_hex(s: &str, field: &str) -> Result<Vec<u8>, ConfigError> {
    if s.len() % 2 != 0 {
        return Err(ConfigError::new(field, "odd-length hex"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| ConfigError::new(field, "bad hex digit")))
        .collect()
}

fn parse_adversary(value: &str, field: &str) -> Result<Timed<AdversaryAction>, ConfigError> {
    let (at, w) = parse_time_and_rest(value, field)?;
    let bad = || ConfigError::new(field, format!("cannot parse adversary action `{}`", w.join(" ")));
    let action = match (w[0], &w[1..]) {
        ("eavesdrop", ["all"]) => AdversaryAction::EavesdropAll,
        ("eavesdrop", [a, b]) => {
            let r = parse_refs(&[a, b], field)?;
            AdversaryAction::EavesdropLink(r[0], r[1])
        }
        ("replay", ["all"]) => AdversaryAction::ReplayAll,
        ("replay", [kind]) => AdversaryAction::ReplayKind(
            MessageKind::parse(kind).ok_or_else(|| ConfigError::new(field, format!("unknown message kind `{kind}`")))?,
        ),
        ("inject", ["hello_flood", n]) => {
            AdversaryAction::HelloFlood(n.parse().map_err(|_| ConfigError::new(field, "flood size must be an integer"))?)
        }
        ("inject", ["sybil", c, t]) => {
            let r = parse_refs(&[c, t], field)?;
            AdversaryAction::Sybil { claimed: r[0], target: r[1] }
        }
        ("inject", ["impostor_request", a]) => AdversaryAction::ImpostorRequest(parse_refs(&[a], field)?[0]),
        ("inject", ["raw", hex]) => AdversaryAction::Raw(parse_hex(hex, field)?),
        ("compromise", [r]) => AdversaryAction::Compromise(parse_refs(&[r], field)?[0]),
        _ => return Err(bad()),
    };
    Ok(Timed { at, action })
}

fn parse_raw(text: &str) -> Result<ScenarioConfig, Vec<ConfigError>> {
    let mut cfg = ScenarioConfig::baseline(0, 0, 0, TopologyMode::Geometric);
    cfg.name = "scenario".into();
    let mut seed: Option<u64> = None;
    let mut errs = Vec::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !["scenario", "topology", "timing", "events", "adversary", "output"].contains(&section.as_str()) {
                errs.push(ConfigError::new(format!("line {}", lineno + 1), format!("unknown section [{section}]")));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errs.push(ConfigError::new(format!("line {}", lineno + 1), "expected `key = value`"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        let field = format!("{section}.{key}");
        macro_rules! num {
            ($t:ty) => {
                match value.parse::<$t>() {
                    Ok(v) => v,
                    Err(_) => {
                        errs.push(ConfigError::new(&field, format!("`{value}` is not a valid number")));
                        continue;
                    }
                }
            };
        }
        match (section.as_str(), key) {
            ("scenario", "name") => cfg.name = value.to_string(),
            ("scenario", "suite") => cfg.suite = value.to_string(),
            ("scenario", "seed") => seed = Some(num!(u64)),
            ("scenario", "lossy") => cfg.lossy = num!(f64),
            ("topology", "n_sensors") => cfg.topology.n_sensors = num!(usize),
            ("topology", "n_actors") => cfg.topology.n_actors = num!(usize),
            ("topology", "spare_actors") => cfg.topology.spare_actors = num!(usize),
            ("topology", "degree") => cfg.topology.degree = num!(usize),
            ("topology", "mode") => match TopologyMode::parse(value) {
                Some(m) => cfg.topology.mode = m,
                None => errs.push(ConfigError::new(&field, format!("unknown mode `{value}` (exact-regular | geometric)"))),
            },
            ("topology", "actor_pairwise") => match value {
                "true" => cfg.topology.actor_pairwise = true,
                "false" => cfg.topology.actor_pairwise = false,
                _ => errs.push(ConfigError::new(&field, "expected true or false")),
            },
            ("timing", "t_exposure") => cfg.timing.t_exposure = num!(u64),
            ("timing", "t_discovery") => cfg.timing.t_discovery = num!(u64),
            ("timing", "region_key_ttl") => cfg.timing.region_key_ttl = num!(u64),
            ("timing", "cert_validity") => cfg.timing.cert_validity = num!(u64),
            ("timing", "t_refresh") => cfg.timing.t_refresh = num!(u64),
            ("timing", "horizon") => cfg.timing.horizon = Some(num!(u64)),
            ("events", "event") => match parse_event(value, &format!("events[{}]", cfg.events.len())) {
                Ok(e) => cfg.events.push(e),
                Err(e) => errs.push(e),
            },
            ("adversary", "action") => match parse_adversary(value, &format!("adversary[{}]", cfg.adversary.len())) {
                Ok(a) => cfg.adversary.push(a),
                Err(e) => errs.push(e),
            },
            ("output", "trace") => cfg.output.trace = value.to_string(),
            ("output", "report") => cfg.output.report = value.to_string(),
            ("output", "reconciliation") => cfg.output.reconciliation = value.to_string(),
            ("output", "curves") => cfg.output.curves = value.to_string(),
            ("output", "crl") => cfg.output.crl = value.to_string(),
            ("output", "binding_prefix") => cfg.output.binding_prefix = value.to_string(),
            _ => errs.push(ConfigError::new(&field, "unknown key")),
        }
    }
    match seed {
        Some(s) => cfg.seed = s,
        None => errs.push(ConfigError::new("scenario.seed", "seed is mandatory")),
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}
