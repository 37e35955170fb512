//! Checks run at every quiescent point of the event loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::cost::Counters;
use crate::lower::DiscoveryPhase;
use crate::model::{Node, NodeId, Role};

use super::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Invariant {
    KeyAgreement,
    StorageLaw,
    BindingMirror,
    SessionHygiene,
    PhaseMonotonicity,
    LedgerConservation,
    TDiscoveryCompliance,
    RenewalPolicy,
    AuthSymmetry,
    AdversaryContainment,
    UpperAttribution,
}

impl Invariant {
    pub const ALL: [Invariant; 11] = [
        Invariant::KeyAgreement,
        Invariant::StorageLaw,
        Invariant::BindingMirror,
        Invariant::SessionHygiene,
        Invariant::PhaseMonotonicity,
        Invariant::LedgerConservation,
        Invariant::TDiscoveryCompliance,
        Invariant::RenewalPolicy,
        Invariant::AuthSymmetry,
        Invariant::AdversaryContainment,
        Invariant::UpperAttribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Invariant::KeyAgreement => "key_agreement",
            Invariant::StorageLaw => "storage_law",
            Invariant::BindingMirror => "binding_mirror",
            Invariant::SessionHygiene => "session_hygiene",
            Invariant::PhaseMonotonicity => "phase_monotonicity",
            Invariant::LedgerConservation => "ledger_conservation",
            Invariant::TDiscoveryCompliance => "t_discovery_compliance",
            Invariant::RenewalPolicy => "renewal_policy",
            Invariant::AuthSymmetry => "auth_symmetry",
            Invariant::AdversaryContainment => "adversary_containment",
            Invariant::UpperAttribution => "upper_attribution",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InvariantStatus {
    pub checks: u64,
    pub violations: u64,
    pub first_violation: Option<String>,
}

impl InvariantStatus {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Default)]
pub(crate) struct AuditState {
    pub status: BTreeMap<Invariant, InvariantStatus>,
    pub phase_seen: BTreeMap<NodeId, DiscoveryPhase>,
    pub last_totals: Counters,
}

impl AuditState {
    pub fn new() -> Self {
        AuditState {
            status: Invariant::ALL.iter().map(|i| (*i, InvariantStatus::default())).collect(),
            ..Default::default()
        }
    }
}

type Check = Result<(), String>;

fn honest(n: &Node) -> bool {
    n.is_honest()
}

impl Network {
    /// Runs every invariant; returns the violations found.
    pub(crate) fn audit(&mut self) -> Vec<(Invariant, String)> {
        let checks: Vec<(Invariant, Check)> = vec![
            (Invariant::KeyAgreement, self.check_key_agreement()),
            (Invariant::StorageLaw, self.check_storage_law()),
            (Invariant::BindingMirror, self.check_binding_mirror()),
            (Invariant::SessionHygiene, self.check_session_hygiene()),
            (Invariant::PhaseMonotonicity, self.check_phases()),
            (Invariant::LedgerConservation, self.check_ledger()),
            (Invariant::TDiscoveryCompliance, self.check_discovery_deadline()),
            (Invariant::RenewalPolicy, self.check_renewal_policy()),
            (Invariant::AuthSymmetry, self.check_auth_symmetry()),
            (Invariant::AdversaryContainment, self.check_containment()),
        ];
        let mut failed = Vec::new();
        for (inv, res) in checks {
            if let Err(e) = res {
                failed.push((inv, e));
            }
            let st = self.audit.status.entry(inv).or_default();
            st.checks += 1;
        }
        failed
    }

    /// Excluded from the D count: revoked neighbours and links the
    /// newcomer procedure could not key.
    pub(crate) fn effective_degree(&self, id: NodeId) -> usize {
        self.topology
            .neighbors(id)
            .filter(|n| !self.revoked.contains(n) && !self.is_unkeyed(id, *n))
            .count()
    }

    fn check_key_agreement(&self) -> Check {
        for (id, node) in self.nodes.iter().filter(|(_, n)| honest(n)) {
            for (peer, key) in &node.keys.pairwise {
                if self.revoked.contains(peer) {
                    return Err(format!("{id} still holds a pair-wise key with revoked {peer}"));
                }
                let Some(other) = self.nodes.get(peer) else {
                    return Err(format!("{id} holds a pair-wise key with unknown identity {peer}"));
                };
                if other.malicious {
                    continue;
                }
                if other.keys.pairwise.get(id) != Some(key) {
                    return Err(format!("pair-wise key {id} <-> {peer} disagrees"));
                }
            }
            for (peer, key) in &node.keys.session_keys {
                if let Some(other) = self.nodes.get(peer).filter(|o| honest(o)) {
                    if other.keys.session_keys.get(id) != Some(key) {
                        return Err(format!("session key {id} <-> {peer} disagrees"));
                    }
                }
            }
        }
        let mut bound: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (aid, anode) in &self.nodes {
            let Some(actor) = anode.actor.as_ref().filter(|a| a.is_active()) else { continue };
            for e in actor.binding.entries() {
                bound.entry(e.node_id).or_default().push(*aid);
                let Some(s) = self.nodes.get(&e.node_id).filter(|s| honest(s)) else { continue };
                if s.keys.node_key.as_ref() != Some(&e.key_info) {
                    return Err(format!("node key of {} disagrees with actor {aid}", e.node_id));
                }
                if let (Some(rec), Some(mine)) = (&actor.region_key, &s.keys.region_key) {
                    if rec.key != mine.key || rec.region_id != mine.region_id {
                        return Err(format!("region key of {} disagrees with actor {aid}", e.node_id));
                    }
                }
            }
        }
        for (id, node) in self.nodes.iter().filter(|(_, n)| n.role == Role::Sensor && honest(n)) {
            if node.keys.node_key.is_none() {
                continue;
            }
            match bound.get(id).map(Vec::len).unwrap_or(0) {
                1 => {}
                0 => return Err(format!("sensor {id} holds a node key no active actor binds")),
                k => return Err(format!("sensor {id} bound by {k} actors")),
            }
        }
        Ok(())
    }

    fn check_storage_law(&self) -> Check {
        for (id, node) in self.nodes.iter().filter(|(_, n)| n.role == Role::Sensor && honest(n)) {
            let done = node.keys.node_key.is_some()
                && node.keys.region_key.is_some()
                && node.keys.initial.is_empty()
                && node.lower.discovery.phase() == DiscoveryPhase::Done;
            if !done {
                continue;
            }
            let d = self.effective_degree(*id);
            let stored = node.keys.lower_layer_key_count();
            if stored != d + 2 {
                return Err(format!("sensor {id} stores {stored} lower-layer keys with D = {d}"));
            }
        }
        Ok(())
    }

    fn check_binding_mirror(&self) -> Check {
        let Some(sink) = self.nodes.get(&self.topology.sink).and_then(|n| n.sink.as_ref()) else {
            return Ok(());
        };
        for (aid, anode) in &self.nodes {
            let Some(actor) = anode.actor.as_ref().filter(|a| a.is_active()) else { continue };
            // The sink stops mirroring an actor once its certificate is revoked.
            if self.ca.is_subject_revoked(*aid) {
                continue;
            }
            match sink.tables.get(&actor.region) {
                None if actor.binding.is_empty() => {}
                None => return Err(format!("sink holds no table for {} of actor {aid}", actor.region)),
                Some(t) if t != &actor.binding => {
                    return Err(format!("sink table for {} differs from actor {aid}", actor.region));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn check_session_hygiene(&self) -> Check {
        for (id, node) in &self.nodes {
            let established: BTreeSet<NodeId> = node
                .upper
                .as_ref()
                .map(|u| u.sessions.iter().filter(|(_, s)| s.established).map(|(p, _)| *p).collect())
                .unwrap_or_default();
            let keyed: BTreeSet<NodeId> = node.keys.session_keys.keys().copied().collect();
            if established != keyed {
                return Err(format!("{id}: session keys {keyed:?} vs active sessions {established:?}"));
            }
            for peer in &keyed {
                if self.ca.is_subject_revoked(*peer) {
                    return Err(format!("{id} keeps a session with revoked {peer}"));
                }
            }
        }
        Ok(())
    }

    fn check_phases(&mut self) -> Check {
        let mut err = None;
        for (id, node) in &self.nodes {
            let phase = node.lower.discovery.phase();
            let seen = self.audit.phase_seen.entry(*id).or_insert(phase);
            if phase < *seen && err.is_none() {
                err = Some(format!("{id} regressed from {seen:?} to {phase:?}"));
            }
            *seen = phase;
            if phase == DiscoveryPhase::Done && node.lower.discovery.outstanding_nonce.is_some() && err.is_none() {
                err = Some(format!("{id} is done but keeps an outstanding nonce"));
            }
        }
        err.map_or(Ok(()), Err)
    }

    fn check_ledger(&mut self) -> Check {
        if !self.ledger.is_consistent() {
            return Err("running totals differ from per-node sums".into());
        }
        let t = self.ledger.totals();
        let last = self.audit.last_totals;
        if t.computations < last.computations || t.messages_sent < last.messages_sent || t.messages_received < last.messages_received {
            return Err("ledger counters decreased".into());
        }
        self.audit.last_totals = t;
        if t.messages_sent != t.messages_received + self.ledger.undeliverable() + self.lost {
            return Err(format!(
                "sent {} != received {} + undeliverable {} + lost {}",
                t.messages_sent,
                t.messages_received,
                self.ledger.undeliverable(),
                self.lost
            ));
        }
        Ok(())
    }

    fn check_discovery_deadline(&self) -> Check {
        for (id, node) in self.nodes.iter().filter(|(_, n)| honest(n)) {
            if let Some(deadline) = node.lower.discovery.discovery_deadline {
                if deadline <= self.now
                    && (node.lower.discovery.phase() != DiscoveryPhase::Done || node.keys.initial.k_ip.is_some())
                {
                    return Err(format!("{id} still discovering past its deadline {deadline}"));
                }
            }
        }
        Ok(())
    }

    fn check_renewal_policy(&self) -> Check {
        let t_refresh = self.ca.policy.t_refresh;
        for c in &self.issued {
            if c.t_expire <= c.t_sign || t_refresh > c.t_expire - c.t_sign {
                return Err(format!("certificate {} violates T_refresh <= T_expire - T_sign", c.serial));
            }
        }
        Ok(())
    }

    fn check_auth_symmetry(&self) -> Check {
        for (id, node) in &self.nodes {
            let Some(upper) = node.upper.as_ref() else { continue };
            for peer in &upper.authenticated {
                let back = self
                    .nodes
                    .get(peer)
                    .and_then(|p| p.upper.as_ref())
                    .is_some_and(|u| u.authenticated.contains(id));
                if !back {
                    return Err(format!("{id} authenticated {peer} but not the reverse"));
                }
            }
        }
        Ok(())
    }

    fn check_containment(&self) -> Check {
        let s = &self.adversary.stats;
        if s.forged_without_compromise > 0 {
            return Err(format!("{} adversary frames accepted ({:?})", s.forged_without_compromise, s.forged_by_kind));
        }
        if s.post_revocation_decrypts > 0 {
            return Err(format!("{} post-revocation frames decrypted with harvested keys", s.post_revocation_decrypts));
        }
        Ok(())
    }
}
