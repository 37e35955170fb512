//! Operation and message metering, the closed-form cost laws, and the
//! analytic LEAP baseline used for the comparison curves.
//!
//! Unit conventions (these are what make the closed forms reproducible):
//!
//! * one *computation unit* per keyed primitive invocation on a protocol
//!   path: master-key derivation, MAC generation, MAC verification fused
//!   with the pair-wise key derivation it unlocks, each encrypt and each
//!   decrypt in the node-key and region-key exchanges;
//! * one *message unit* per delivered copy of a frame, charged to the
//!   sender (a broadcast heard by `d` neighbours costs `d` units) and, on
//!   arrival, to the receiver.
//!
//! With those conventions a node of degree `d` spends `2d + 1` computation
//! units and `2d` message units on pair-wise keys, each sensor's node key
//! costs 4 and 3, and each region-key delivery costs 2 and 2.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CostPhase {
    Pairwise,
    NodeKey,
    RegionKey,
    Renewal,
    Revocation,
    Addition,
    BindingSync,
    Upper,
    Data,
}

impl CostPhase {
    /// Phases covered by the lower-layer setup cost laws.
    pub const SETUP: [CostPhase; 3] = [CostPhase::Pairwise, CostPhase::NodeKey, CostPhase::RegionKey];

    pub fn name(self) -> &'static str {
        match self {
            CostPhase::Pairwise => "pairwise",
            CostPhase::NodeKey => "node_key",
            CostPhase::RegionKey => "region_key",
            CostPhase::Renewal => "renewal",
            CostPhase::Revocation => "revocation",
            CostPhase::Addition => "addition",
            CostPhase::BindingSync => "binding_sync",
            CostPhase::Upper => "upper",
            CostPhase::Data => "data",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub computations: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
}

impl Counters {
    fn add(&mut self, o: &Counters) {
        self.computations += o.computations;
        self.messages_sent += o.messages_sent;
        self.messages_received += o.messages_received;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StorageCount {
    /// Lower-layer keys: pair-wise + node + region.
    pub stored_keys: u64,
    /// Master key and any initial keys still held.
    pub retained_setup: u64,
}

/// Per-node, per-phase counters with running network totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    per_node: BTreeMap<NodeId, BTreeMap<CostPhase, Counters>>,
    totals: Counters,
    phase_totals: BTreeMap<CostPhase, Counters>,
    undeliverable: u64,
    storage: BTreeMap<NodeId, StorageCount>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    fn bump(&mut self, node: NodeId, phase: CostPhase, delta: Counters) {
        self.per_node.entry(node).or_default().entry(phase).or_default().add(&delta);
        self.phase_totals.entry(phase).or_default().add(&delta);
        self.totals.add(&delta);
    }

    pub fn add_computation(&mut self, node: NodeId, phase: CostPhase, units: u64) {
        self.bump(node, phase, Counters { computations: units, ..Default::default() });
    }

    pub fn add_sent(&mut self, node: NodeId, phase: CostPhase, units: u64) {
        self.bump(node, phase, Counters { messages_sent: units, ..Default::default() });
    }

    pub fn add_received(&mut self, node: NodeId, phase: CostPhase, units: u64) {
        self.bump(node, phase, Counters { messages_received: units, ..Default::default() });
    }

    /// A unit sent toward an address no node answers to (e.g. a reply to a
    /// forged identity).
    pub fn add_undeliverable(&mut self, units: u64) {
        self.undeliverable += units;
    }

    pub fn undeliverable(&self) -> u64 {
        self.undeliverable
    }

    pub fn record_storage(&mut self, node: NodeId, count: StorageCount) {
        self.storage.insert(node, count);
    }

    pub fn storage(&self) -> &BTreeMap<NodeId, StorageCount> {
        &self.storage
    }

    pub fn totals(&self) -> Counters {
        self.totals
    }

    pub fn phase_total(&self, phase: CostPhase) -> Counters {
        self.phase_totals.get(&phase).copied().unwrap_or_default()
    }

    pub fn phase_totals(&self) -> &BTreeMap<CostPhase, Counters> {
        &self.phase_totals
    }

    pub fn setup_totals(&self) -> Counters {
        let mut c = Counters::default();
        for p in CostPhase::SETUP {
            c.add(&self.phase_total(p));
        }
        c
    }

    pub fn node_phase(&self, node: NodeId, phase: CostPhase) -> Counters {
        self.per_node
            .get(&node)
            .and_then(|m| m.get(&phase))
            .copied()
            .unwrap_or_default()
    }

    pub fn node_total(&self, node: NodeId) -> Counters {
        let mut c = Counters::default();
        if let Some(m) = self.per_node.get(&node) {
            for v in m.values() {
                c.add(v);
            }
        }
        c
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.per_node.keys().copied()
    }

    /// Running totals equal the per-node sums (phase-wise and overall).
    pub fn is_consistent(&self) -> bool {
        let mut sum = Counters::default();
        let mut by_phase: BTreeMap<CostPhase, Counters> = BTreeMap::new();
        for m in self.per_node.values() {
            for (p, c) in m {
                sum.add(c);
                by_phase.entry(*p).or_default().add(c);
            }
        }
        sum == self.totals && by_phase == self.phase_totals
    }

    /// Every delivered unit was received exactly once.
    pub fn is_conserved(&self) -> bool {
        self.totals.messages_sent == self.totals.messages_received + self.undeliverable
    }

    /// Counters of `self` minus an earlier snapshot, per phase.
    pub fn phase_delta(&self, earlier: &CostLedger, phase: CostPhase) -> Counters {
        let a = self.phase_total(phase);
        let b = earlier.phase_total(phase);
        Counters {
            computations: a.computations - b.computations,
            messages_sent: a.messages_sent - b.messages_sent,
            messages_received: a.messages_received - b.messages_received,
        }
    }
}

/// Total setup computations on `n` sensors of uniform degree `d`:
/// `(2d+1)N + 4N + 2N`.
pub fn expected_computation(n: u64, d: u64) -> u64 {
    (2 * d + 1) * n + 4 * n + 2 * n
}

/// Total setup message units: `2dN + 3N + 2N`.
pub fn expected_messages(n: u64, d: u64) -> u64 {
    2 * d * n + 3 * n + 2 * n
}

/// Lower-layer keys on a sensor with `d` neighbours: `D + 2`.
pub fn expected_storage(d: u64) -> u64 {
    d + 2
}

/// LEAP's per-node key storage: `3D + 2 + L`.
pub fn leap_storage(d: u64, l: u64) -> u64 {
    3 * d + 2 + l
}

/// Analytic LEAP cost model. Only the growth order of its computation cost
/// is known, so the constant is a free parameter and comparisons against
/// it are shape checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LeapBaseline {
    /// Key-chain storage `L`.
    pub key_chain_len: u64,
    /// Constant `c` in `c * d^2 * N`.
    pub computation_scale: u64,
}

impl Default for LeapBaseline {
    fn default() -> Self {
        LeapBaseline { key_chain_len: 0, computation_scale: 1 }
    }
}

impl LeapBaseline {
    pub fn computation(&self, n: u64, d: u64) -> u64 {
        self.computation_scale * d * d * n
    }

    pub fn storage(&self, d: u64) -> u64 {
        leap_storage(d, self.key_chain_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub d: u64,
    pub n: u64,
    pub ours_computation: u64,
    pub leap_computation: u64,
    pub ours_storage: f64,
    pub leap_storage: f64,
}

impl CurveRow {
    pub fn computation_ratio(&self) -> f64 {
        self.leap_computation as f64 / self.ours_computation as f64
    }

    pub fn storage_ratio(&self) -> f64 {
        self.ours_storage / self.leap_storage
    }
}

/// Closed-form comparison curves over a degree sweep.
pub fn curve_table(n: u64, degrees: impl IntoIterator<Item = u64>, baseline: &LeapBaseline) -> Vec<CurveRow> {
    degrees
        .into_iter()
        .map(|d| CurveRow {
            d,
            n,
            ours_computation: expected_computation(n, d),
            leap_computation: baseline.computation(n, d),
            ours_storage: expected_storage(d) as f64,
            leap_storage: baseline.storage(d) as f64,
        })
        .collect()
}

/// CSV with columns `d,N,ours_computation,leap_computation,ours_storage,leap_storage`
/// followed by the two ratio columns. `header` lines are emitted as `# ...`.
pub fn curves_to_csv(rows: &[CurveRow], header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        s.push_str(&format!("# {h}\n"));
    }
    s.push_str("d,N,ours_computation,leap_computation,ours_storage,leap_storage,leap_over_ours_computation,ours_over_leap_storage\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6}\n",
            r.d,
            r.n,
            r.ours_computation,
            r.leap_computation,
            r.ours_storage,
            r.leap_storage,
            r.computation_ratio(),
            r.storage_ratio()
        ));
    }
    s
}

/// How the degree term of the cost laws is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DegreeModel {
    /// Every participant has degree `d`: the closed forms apply literally.
    ExactRegular { d: u64 },
    /// Per-node realized degrees are summed.
    Realized,
}

/// What the setup phase should have cost, described independently of the
/// ledger: who ran discovery with how many neighbours, and which sensors
/// each actor keyed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetupShape {
    pub model: DegreeModel,
    /// Discovery participant -> number of neighbours it keyed with.
    pub discovery_degrees: BTreeMap<NodeId, u64>,
    /// Actor -> sensors it issued node and region keys to.
    pub regions: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Sensor -> (realized degree D, lower-layer keys actually stored).
    pub storage: BTreeMap<NodeId, (u64, u64)>,
}

impl SetupShape {
    pub fn sensor_count(&self) -> u64 {
        self.regions.values().map(|s| s.len() as u64).sum()
    }

    pub fn expected_computation(&self) -> u64 {
        let pairwise: u64 = self.discovery_degrees.values().map(|d| 2 * d + 1).sum();
        pairwise + 6 * self.sensor_count()
    }

    pub fn expected_messages(&self) -> u64 {
        let pairwise: u64 = self.discovery_degrees.values().map(|d| 2 * d).sum();
        pairwise + 5 * self.sensor_count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub node: Option<NodeId>,
    pub counter: String,
    pub expected: u64,
    pub actual: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconciliationReport {
    pub model: DegreeModel,
    pub sensors: u64,
    pub degree_sum: u64,
    pub closed_form_computation: Option<u64>,
    pub closed_form_messages: Option<u64>,
    pub expected_computation: u64,
    pub actual_computation: u64,
    pub expected_messages: u64,
    pub actual_messages: u64,
    pub storage_checked: u64,
    pub mismatches: Vec<Mismatch>,
    pub curve: Vec<CurveRow>,
    pub pass: bool,
}

fn per_node_expectations(shape: &SetupShape) -> BTreeMap<(NodeId, &'static str), u64> {
    let mut exp: BTreeMap<(NodeId, &'static str), u64> = BTreeMap::new();
    for (id, d) in &shape.discovery_degrees {
        *exp.entry((*id, "pairwise.computations")).or_default() += 2 * d + 1;
        *exp.entry((*id, "pairwise.messages_sent")).or_default() += 2 * d;
    }
    for (actor, sensors) in &shape.regions {
        let m = sensors.len() as u64;
        *exp.entry((*actor, "node_key.computations")).or_default() += 2 * m;
        *exp.entry((*actor, "node_key.messages_sent")).or_default() += 2 * m;
        *exp.entry((*actor, "region_key.computations")).or_default() += m;
        *exp.entry((*actor, "region_key.messages_sent")).or_default() += m;
        for s in sensors {
            *exp.entry((*s, "node_key.computations")).or_default() += 2;
            *exp.entry((*s, "node_key.messages_sent")).or_default() += 1;
            *exp.entry((*s, "region_key.computations")).or_default() += 1;
            *exp.entry((*s, "region_key.messages_sent")).or_default() += 1;
        }
    }
    exp
}

fn actual_counter(ledger: &CostLedger, node: NodeId, counter: &str) -> u64 {
    let (phase, field) = counter.split_once('.').unwrap();
    let phase = match phase {
        "pairwise" => CostPhase::Pairwise,
        "node_key" => CostPhase::NodeKey,
        _ => CostPhase::RegionKey,
    };
    let c = ledger.node_phase(node, phase);
    match field {
        "computations" => c.computations,
        _ => c.messages_sent,
    }
}

/// Checks a post-setup ledger against the cost laws, node by node.
pub fn reconcile(ledger: &CostLedger, shape: &SetupShape, baseline: &LeapBaseline) -> ReconciliationReport {
    let totals = ledger.setup_totals();
    let n = shape.sensor_count();
    let mut mismatches = Vec::new();

    let summed_computation = shape.expected_computation();
    let summed_messages = shape.expected_messages();
    let (closed_c, closed_m) = match shape.model {
        DegreeModel::ExactRegular { d } => (Some(expected_computation(n, d)), Some(expected_messages(n, d))),
        DegreeModel::Realized => (None, None),
    };
    let target_c = closed_c.unwrap_or(summed_computation);
    let target_m = closed_m.unwrap_or(summed_messages);
    if totals.computations != target_c {
        mismatches.push(Mismatch {
            node: None,
            counter: "total.computations".into(),
            expected: target_c,
            actual: totals.computations,
        });
    }
    if totals.messages_sent != target_m {
        mismatches.push(Mismatch {
            node: None,
            counter: "total.messages_sent".into(),
            expected: target_m,
            actual: totals.messages_sent,
        });
    }

    let exp = per_node_expectations(shape);
    let mut nodes: BTreeSet<NodeId> = exp.keys().map(|(id, _)| *id).collect();
    nodes.extend(ledger.nodes());
    const COUNTERS: [&str; 6] = [
        "pairwise.computations",
        "pairwise.messages_sent",
        "node_key.computations",
        "node_key.messages_sent",
        "region_key.computations",
        "region_key.messages_sent",
    ];
    for node in nodes {
        for counter in COUNTERS {
            let expected = exp.get(&(node, counter)).copied().unwrap_or(0);
            let actual = actual_counter(ledger, node, counter);
            if expected != actual {
                mismatches.push(Mismatch { node: Some(node), counter: counter.into(), expected, actual });
            }
        }
    }

    for (id, (d, stored)) in &shape.storage {
        let expected = expected_storage(*d);
        if *stored != expected {
            mismatches.push(Mismatch {
                node: Some(*id),
                counter: "storage.stored_keys".into(),
                expected,
                actual: *stored,
            });
        }
    }

    let curve_n = n.max(1);
    let curve = curve_table(curve_n, (2..=20).step_by(2), baseline);
    ReconciliationReport {
        model: shape.model,
        sensors: n,
        degree_sum: shape.discovery_degrees.values().sum(),
        closed_form_computation: closed_c,
        closed_form_messages: closed_m,
        expected_computation: summed_computation,
        actual_computation: totals.computations,
        expected_messages: summed_messages,
        actual_messages: totals.messages_sent,
        storage_checked: shape.storage.len() as u64,
        pass: mismatches.is_empty(),
        mismatches,
        curve,
    }
}
