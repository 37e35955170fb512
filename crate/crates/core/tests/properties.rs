use proptest::prelude::*;

use wsan_core::config::{EventAction, NodeRef, ScenarioConfig, Timed, TopologyMode};
use wsan_core::cost::{expected_storage, leap_storage};
use wsan_core::crypto::{CryptoSuite, KeyKind, MacTag, SymKey, ToySuite};
use wsan_core::model::{BindingTable, Destination, MessageKind, NodeId, RegionId, WireMessage};
use wsan_core::netsim::{Invariant, Network};

fn sym_key() -> impl Strategy<Value = SymKey> {
    any::<[u8; 16]>().prop_map(|b| SymKey::new(b, KeyKind::Session))
}

fn wire_message() -> impl Strategy<Value = WireMessage> {
    (
        0..MessageKind::ALL.len(),
        any::<u32>(),
        prop::option::of(any::<u32>()),
        prop::collection::vec(any::<u8>(), 0..300),
        prop::option::of(any::<[u8; 8]>()),
    )
        .prop_map(|(k, src, dst, payload, mac)| WireMessage {
            kind: MessageKind::ALL[k],
            src: NodeId(src),
            dst: dst.map_or(Destination::Broadcast, |d| Destination::Node(NodeId(d))),
            payload,
            mac: mac.map(MacTag),
        })
}

fn mode() -> impl Strategy<Value = TopologyMode> {
    prop_oneof![Just(TopologyMode::ExactRegular), Just(TopologyMode::Geometric)]
}

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    (
        any::<u64>(),
        10usize..60,
        2usize..5,
        mode(),
        1u64..10,
        1u64..20,
        prop::collection::vec((30u64..200, 0usize..10), 0..5),
        prop_oneof![Just(0.0), Just(0.125)],
    )
        .prop_map(|(seed, n, d, mode, t_disc, extra, reports, lossy)| {
            let mut cfg = ScenarioConfig::baseline(seed, n, d, mode);
            cfg.name = format!("p{seed}");
            cfg.lossy = lossy;
            cfg.timing.t_discovery = t_disc;
            cfg.timing.t_exposure = t_disc + extra;
            cfg.events = reports
                .into_iter()
                .map(|(at, i)| Timed { at, action: EventAction::Report(NodeRef::Sensor(i)) })
                .collect();
            cfg
        })
}

proptest! {
    #[test]
    fn decrypt_inverts_encrypt(key in sym_key(), pt in prop::collection::vec(any::<u8>(), 0..=4096)) {
        let suite = ToySuite;
        let ct = suite.sym_encrypt(&key, &pt);
        prop_assert_eq!(suite.sym_decrypt(&key, &ct).unwrap(), pt);
    }

    #[test]
    fn decrypt_rejects_other_keys_and_tampering(
        k1 in sym_key(),
        k2 in sym_key(),
        pt in prop::collection::vec(any::<u8>(), 0..512),
        flip in any::<prop::sample::Index>(),
    ) {
        prop_assume!(k1 != k2);
        let suite = ToySuite;
        let mut ct = suite.sym_encrypt(&k1, &pt);
        prop_assert!(suite.sym_decrypt(&k2, &ct).is_err());
        let i = flip.index(ct.len());
        ct[i] ^= 0x01;
        prop_assert!(suite.sym_decrypt(&k1, &ct).is_err());
    }

    #[test]
    fn wire_encoding_round_trips(msg in wire_message()) {
        let bytes = msg.serialize();
        let back = WireMessage::deserialize(&bytes).unwrap();
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(back.serialize(), bytes);
    }

    #[test]
    fn wire_decoding_is_canonical(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        if let Ok(msg) = WireMessage::deserialize(&bytes) {
            prop_assert_eq!(msg.serialize(), bytes);
        }
    }

    #[test]
    fn canonical_config_round_trips(cfg in scenario()) {
        prop_assume!(cfg.validate().is_empty());
        let text = cfg.canonical();
        let back = ScenarioConfig::parse(&text).unwrap();
        prop_assert_eq!(back.canonical(), text);
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn binding_table_tracks_inserts_and_removals(ops in prop::collection::vec((any::<bool>(), 0u32..20), 0..60)) {
        let mut table = BindingTable::new(NodeId(1), RegionId(0));
        let mut model = std::collections::BTreeSet::new();
        for (insert, id) in ops {
            let id = NodeId(id + 100);
            if insert {
                let fresh = model.insert(id);
                prop_assert_eq!(table.insert(id, SymKey::new([id.0 as u8; 16], KeyKind::Node)).is_ok(), fresh);
            } else {
                model.remove(&id);
                table.remove(id);
            }
            prop_assert_eq!(table.ids().collect::<std::collections::BTreeSet<_>>(), model.clone());
        }
    }

    #[test]
    fn leap_storage_dominates(d in 1u64..10_000, l in 0u64..1000) {
        prop_assert!(leap_storage(d, l) > expected_storage(d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn setup_keeps_every_invariant(seed in any::<u64>(), n in 10usize..60, d in 2usize..6, actors in 1usize..4) {
        let mut cfg = ScenarioConfig::baseline(seed, n, d, TopologyMode::Geometric);
        cfg.topology.n_actors = actors;
        let mut net = Network::new(&cfg).unwrap();
        net.run();
        for (inv, st) in net.invariants() {
            prop_assert!(st.holds(), "{}: {:?}", inv.name(), st.first_violation);
        }
        prop_assert!(net.invariants()[&Invariant::BindingMirror].checks > 0);
        for s in net.sensor_ids() {
            let node = net.node(*s).unwrap();
            prop_assert_eq!(node.keys.lower_layer_key_count(), net.topology().degree(*s) + 2);
        }
        let t = net.ledger().totals();
        prop_assert_eq!(t.messages_sent, t.messages_received);
    }

    #[test]
    fn sensor_broadcasts_reach_only_neighbours(seed in any::<u64>(), n in 10usize..40) {
        let cfg = ScenarioConfig::baseline(seed, n, 3, TopologyMode::Geometric);
        let mut net = Network::new(&cfg).unwrap();
        net.run();
        let ledger = net.setup_ledger().unwrap();
        for s in net.sensor_ids() {
            let sent = ledger.node_phase(*s, wsan_core::cost::CostPhase::Pairwise).messages_sent;
            prop_assert_eq!(sent, 2 * net.topology().degree(*s) as u64);
        }
    }

    #[test]
    fn runs_are_deterministic(cfg in scenario()) {
        prop_assume!(cfg.validate().is_empty());
        let a = wsan_core::netsim::run(&cfg);
        let b = wsan_core::netsim::run(&cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.artifacts, b.artifacts),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "one run failed and the other did not"),
        }
    }
}
