use std::collections::BTreeSet;

use wsan_core::config::{AdversaryAction, EventAction, NodeRef, ScenarioConfig, Timed, TopologyMode};
use wsan_core::crypto::SymKey;
use wsan_core::model::NodeId;
use wsan_core::netsim::{run, Invariant, Network};

fn geometric(seed: u64, n: usize, d: usize, actors: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::baseline(seed, n, d, TopologyMode::Geometric);
    cfg.topology.n_actors = actors;
    cfg
}

fn event(at: u64, action: EventAction) -> Timed<EventAction> {
    Timed { at, action }
}

fn attack(at: u64, action: AdversaryAction) -> Timed<AdversaryAction> {
    Timed { at, action }
}

/// `sensor:i` references for the members of actor `a`.
fn region_refs(cfg: &ScenarioConfig, a: usize) -> Vec<NodeRef> {
    let net = Network::new(cfg).unwrap();
    let members = net.topology().members(net.topology().actors[a]);
    net.sensor_ids()
        .iter()
        .enumerate()
        .filter(|(_, s)| members.contains(s))
        .map(|(i, _)| NodeRef::Sensor(i))
        .collect()
}

fn assert_green(net: &Network) {
    assert!(net.halted().is_none(), "{:?}", net.halted());
    for (inv, st) in net.invariants() {
        assert!(st.holds(), "{}: {:?}", inv.name(), st.first_violation);
        if *inv != Invariant::UpperAttribution {
            assert!(st.checks > 0, "{} never checked", inv.name());
        }
    }
}

type KeyBytes = [u8; 16];

fn bytes_of(keys: Vec<SymKey>) -> BTreeSet<KeyBytes> {
    keys.iter().map(|k| *k.bytes()).collect()
}

fn all_honest_keys(net: &Network) -> BTreeSet<KeyBytes> {
    net.nodes().filter(|n| n.is_honest()).flat_map(|n| bytes_of(n.keys.all_symmetric())).collect()
}

#[test]
fn empty_network_costs_nothing() {
    let cfg = ScenarioConfig::baseline(1, 0, 0, TopologyMode::Geometric);
    let out = run(&cfg).unwrap();
    assert_eq!(out.report.totals, Default::default());
    assert!(out.report.pass);
}

#[test]
fn full_setup_message_total() {
    let (n, d) = (20u64, 4u64);
    let cfg = ScenarioConfig::baseline(3, n as usize, d as usize, TopologyMode::ExactRegular);
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    let broadcasts_and_responses = 2 * d * n;
    let node_key = 3 * n;
    let region_key = 2 * n;
    assert_eq!(net.setup_ledger().unwrap().setup_totals().messages_sent, broadcasts_and_responses + node_key + region_key);
}

#[test]
fn same_seed_same_trace() {
    let cfg = geometric(8, 40, 4, 2);
    assert_eq!(run(&cfg).unwrap().trace, run(&cfg).unwrap().trace);
    let other = geometric(9, 40, 4, 2);
    assert_ne!(run(&cfg).unwrap().trace, run(&other).unwrap().trace);
}

#[test]
fn single_actor_owns_every_sensor() {
    let net = Network::new(&geometric(2, 30, 4, 1)).unwrap();
    let t = net.topology();
    assert_eq!(t.members(t.actors[0]).len(), 30);
    assert!(t.is_symmetric());
}

#[test]
fn trace_and_artifacts_carry_the_config_hash() {
    let cfg = geometric(4, 20, 3, 2);
    let out = run(&cfg).unwrap();
    let hash = cfg.hash();
    assert!(out.trace.starts_with(&format!("# config-hash: {hash}\n")));
    for (name, body) in &out.artifacts {
        assert!(body.contains(&hash), "{name} lacks the hash");
    }
    assert!(out.artifacts.contains_key("binding_0.csv"));
    assert!(out.artifacts.contains_key("binding_1.csv"));
}

#[test]
fn hello_flood_establishes_nothing() {
    let mut cfg = geometric(5, 30, 4, 1);
    cfg.adversary.push(attack(2, AdversaryAction::HelloFlood(10)));
    cfg.adversary.push(attack(40, AdversaryAction::HelloFlood(10)));
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    let ids: BTreeSet<NodeId> = net.nodes().map(|n| n.id).collect();
    for n in net.nodes() {
        assert!(n.keys.pairwise.keys().all(|p| ids.contains(p)));
    }
    let sec = net.security();
    assert_eq!(sec.forged_acceptances, 0);
    assert_eq!(sec.frames_injected, 20);
}

#[test]
fn sybil_without_master_key_fails() {
    let mut cfg = geometric(6, 30, 4, 1);
    cfg.adversary.push(attack(0, AdversaryAction::EavesdropAll));
    cfg.adversary.push(attack(1, AdversaryAction::Sybil { claimed: NodeRef::Fake(0), target: NodeRef::Sensor(2) }));
    cfg.adversary.push(attack(30, AdversaryAction::Sybil { claimed: NodeRef::Sensor(5), target: NodeRef::Sensor(2) }));
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    let fake = net.resolve(NodeRef::Fake(0)).unwrap();
    let target = net.resolve(NodeRef::Sensor(2)).unwrap();
    assert!(!net.node(target).unwrap().keys.pairwise.contains_key(&fake));
    let macs = &net.security().adversary_outcomes["MacResponse"];
    assert_eq!(macs.accepted, 0);
}

#[test]
fn replayed_transcripts_are_never_accepted() {
    let mut cfg = geometric(7, 30, 4, 2);
    cfg.adversary.push(attack(0, AdversaryAction::EavesdropAll));
    cfg.adversary.push(attack(3, AdversaryAction::ReplayAll));
    cfg.adversary.push(attack(12, AdversaryAction::ReplayAll));
    cfg.adversary.push(attack(60, AdversaryAction::ReplayAll));
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    assert!(net.security().frames_replayed > 100);
    assert_eq!(net.security().forged_acceptances, 0);
}

#[test]
fn impostor_node_key_request_is_rejected() {
    let mut cfg = geometric(8, 20, 3, 1);
    cfg.adversary.push(attack(9, AdversaryAction::ImpostorRequest(NodeRef::Actor(0))));
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    let actor = net.topology().actors[0];
    assert_eq!(net.node(actor).unwrap().actor.as_ref().unwrap().binding.len(), 20);
}

#[test]
fn revocation_leaves_harvested_keys_useless() {
    let cfg0 = ScenarioConfig::baseline(10, 10, 3, TopologyMode::ExactRegular);
    let region = region_refs(&cfg0, 0);
    assert_eq!(region.len(), 10);
    let mut cfg = cfg0.clone();
    cfg.events.push(event(40, EventAction::Compromise(region[0])));
    cfg.events.push(event(50, EventAction::Detect(region[0])));
    cfg.events.push(event(60, EventAction::RegionData(NodeRef::Actor(0))));
    cfg.events.push(event(61, EventAction::Report(region[1])));
    let mut net = Network::new(&cfg).unwrap();
    net.run_until(40);
    let victim = net.resolve(region[0]).unwrap();
    let stolen = bytes_of(net.node(victim).unwrap().keys.all_symmetric());
    assert!(stolen.len() >= 5);
    net.run();
    assert_green(&net);
    assert!(all_honest_keys(&net).is_disjoint(&stolen));
    for nb in net.topology().neighbors(victim) {
        assert!(!net.node(nb).unwrap().keys.pairwise.contains_key(&victim));
    }
    let actor = net.node(net.topology().actors[0]).unwrap().actor.as_ref().unwrap();
    assert!(!actor.binding.contains(victim));
    assert!(!stolen.contains(actor.region_key.as_ref().unwrap().key.bytes()));
    let sec = net.security();
    assert!(sec.post_revocation_attempts > 0);
    assert_eq!(sec.post_revocation_decrypts, 0);
    assert_eq!(sec.harvested_keys, stolen.len() as u64);
}

#[test]
fn actor_move_rekeys_both_regions() {
    let mut found = false;
    for seed in 0..20 {
        let cfg0 = geometric(seed, 40, 5, 2);
        let from = region_refs(&cfg0, 1);
        if from.len() < 6 {
            continue;
        }
        found = true;
        let moved = from[..5].to_vec();
        let mut cfg = cfg0.clone();
        cfg.events.push(event(50, EventAction::ActorMove { from: NodeRef::Actor(1), to: NodeRef::Actor(0), sensors: moved.clone() }));
        cfg.events.push(event(80, EventAction::RegionData(NodeRef::Actor(1))));
        let mut net = Network::new(&cfg).unwrap();
        net.run();
        assert_green(&net);
        let a0 = net.node(net.topology().actors[0]).unwrap().actor.clone().unwrap();
        let a1 = net.node(net.topology().actors[1]).unwrap().actor.clone().unwrap();
        for r in &moved {
            let s = net.resolve(*r).unwrap();
            let node = net.node(s).unwrap();
            assert!(a0.binding.contains(s) && !a1.binding.contains(s));
            assert_eq!(node.keys.region_key.as_ref().unwrap().key, a0.region_key.as_ref().unwrap().key);
            assert_ne!(node.keys.region_key.as_ref().unwrap().key, a1.region_key.as_ref().unwrap().key);
        }
        break;
    }
    assert!(found);
}

#[test]
fn empty_actor_move_is_a_no_op() {
    let mut cfg = geometric(1, 30, 4, 2);
    cfg.events.push(event(50, EventAction::ActorMove { from: NodeRef::Actor(0), to: NodeRef::Actor(1), sensors: vec![] }));
    let mut base = Network::new(&geometric(1, 30, 4, 2)).unwrap();
    base.run();
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    assert_eq!(net.ledger().totals(), base.ledger().totals());
    assert!(net.script_errors().is_empty());
}

#[test]
fn moving_a_foreign_sensor_is_refused() {
    let cfg0 = geometric(2, 30, 4, 2);
    let foreign = region_refs(&cfg0, 1);
    let mut cfg = cfg0.clone();
    cfg.events.push(event(50, EventAction::ActorMove { from: NodeRef::Actor(0), to: NodeRef::Actor(1), sensors: vec![foreign[0]] }));
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    assert!(net.script_errors()[0].contains("partition violated"));
}

#[test]
fn added_node_keys_with_its_neighbours() {
    let mut cfg = geometric(11, 30, 4, 1);
    cfg.events.push(event(60, EventAction::AddNode(vec![NodeRef::Sensor(0), NodeRef::Sensor(1), NodeRef::Sensor(2)])));
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    let id = *net.sensor_ids().last().unwrap();
    let neighbours: Vec<NodeId> = (0..3).map(|i| net.resolve(NodeRef::Sensor(i)).unwrap()).collect();
    let node = net.node(id).unwrap();
    assert_eq!(node.keys.pairwise.len(), 3);
    assert_eq!(node.keys.lower_layer_key_count(), 3 + 2);
    assert!(node.keys.initial.is_empty());
    for nb in neighbours {
        assert_eq!(net.node(nb).unwrap().keys.pairwise.get(&id), node.keys.pairwise.get(&nb));
    }
}

#[test]
fn lossy_runs_record_instead_of_halting() {
    let mut cfg = geometric(12, 40, 4, 2);
    cfg.lossy = 0.1;
    let out = run(&cfg).unwrap();
    let r = &out.report;
    assert!(r.halted.is_none());
    assert!(r.network.lost > 0);
    assert_eq!(r.network.sent, r.network.received + r.network.lost + r.network.undeliverable);
    assert!(!r.reconciliation.applicable);
    if let Some(first) = r.invariants.values().find_map(|s| s.first_violation.as_ref()) {
        assert!(first.starts_with("invariant `") && first.contains("violated at event #"), "{first}");
    }
}

#[test]
fn horizon_bounds_the_run() {
    let mut cfg = geometric(13, 20, 3, 1);
    cfg.timing.region_key_ttl = 30;
    cfg.timing.horizon = Some(150);
    let mut net = Network::new(&cfg).unwrap();
    net.run();
    assert_green(&net);
    assert!(net.now() <= 150);
    let actor = net.node(net.topology().actors[0]).unwrap().actor.as_ref().unwrap();
    assert!(actor.region_key.as_ref().unwrap().issued_at > 100);
}
