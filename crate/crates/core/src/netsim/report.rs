use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::cost::{curve_table, curves_to_csv, Counters, LeapBaseline, ReconciliationReport};
use crate::crypto::CryptoError;
use crate::model::SimTime;

use super::{FrameCounts, Invariant, InvariantStatus, Network, SecurityStats, TopologyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<ConfigError>),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UpperStats {
    pub auth_started: u64,
    pub auth_refused: u64,
    pub sessions_started: u64,
    pub sessions_refused: u64,
    pub sessions_ended: u64,
    pub end_session_noops: u64,
    pub session_data_sent: u64,
    pub session_data_refused: u64,
    pub renewals: u64,
    pub renewals_denied: u64,
    pub revocations: u64,
    /// Authenticated peer pairs at the end of the run.
    pub authenticated_pairs: u64,
    pub established_sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SensorStorage {
    pub id: String,
    pub degree: u64,
    pub stored_keys: u64,
    pub retained_setup: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActorSummary {
    pub id: String,
    pub region: String,
    pub status: String,
    pub bound: u64,
    pub binding_version: u64,
    pub region_key_issued_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconciliationStatus {
    pub applicable: bool,
    pub reason: Option<String>,
    pub pass: Option<bool>,
    pub snapshot_time: Option<SimTime>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NetworkCounts {
    pub sent: u64,
    pub received: u64,
    pub undeliverable: u64,
    pub lost: u64,
}

/// Machine-readable summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config_hash: String,
    pub name: String,
    pub seed: u64,
    pub pass: bool,
    pub halted: Option<String>,
    pub final_time: SimTime,
    pub events_processed: u64,
    pub totals: Counters,
    pub setup_totals: Option<Counters>,
    pub phase_totals: BTreeMap<String, Counters>,
    pub network: NetworkCounts,
    pub storage: Vec<SensorStorage>,
    pub invariants: BTreeMap<String, InvariantStatus>,
    pub reconciliation: ReconciliationStatus,
    pub security: SecurityStats,
    pub upper: UpperStats,
    pub frames: BTreeMap<String, FrameCounts>,
    pub script_errors: Vec<String>,
    pub crl_entries: u64,
    pub certificates_issued: u64,
    pub actors: Vec<ActorSummary>,
}

/// Output files keyed by file name.
pub type Artifacts = BTreeMap<String, String>;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SimReport,
    pub reconciliation: Option<ReconciliationReport>,
    pub trace: String,
    pub artifacts: Artifacts,
}

impl Network {
    pub fn report(&self) -> SimReport {
        let t = self.ledger.totals();
        let invariants: BTreeMap<String, InvariantStatus> =
            self.audit.status.iter().map(|(k, v)| (k.name().to_string(), v.clone())).collect();
        let reconciliation = match &self.setup {
            Some(s) => ReconciliationStatus {
                applicable: s.applicable,
                reason: s.reason.clone(),
                pass: s.applicable.then_some(s.reconciliation.pass),
                snapshot_time: Some(s.time),
            },
            None => ReconciliationStatus {
                applicable: false,
                reason: Some(if self.config.lossy > 0.0 { "lossy channel" } else { "setup did not complete" }.into()),
                pass: None,
                snapshot_time: None,
            },
        };
        let storage = self
            .sensor_ids
            .iter()
            .filter_map(|id| {
                let n = self.nodes.get(id)?;
                n.is_honest().then(|| SensorStorage {
                    id: id.to_string(),
                    degree: self.effective_degree(*id) as u64,
                    stored_keys: n.keys.lower_layer_key_count() as u64,
                    retained_setup: n.keys.retained_setup_count() as u64,
                })
            })
            .collect();
        let mut upper = self.upper_stats.clone();
        let mut pairs = 0;
        let mut sessions = 0;
        for n in self.nodes.values() {
            if let Some(u) = &n.upper {
                pairs += u.authenticated.iter().filter(|p| **p > n.id).count() as u64;
                sessions += u.sessions.iter().filter(|(p, s)| **p > n.id && s.established).count() as u64;
            }
        }
        upper.authenticated_pairs = pairs;
        upper.established_sessions = sessions;
        let mut security = self.adversary.stats.clone();
        security.fake_identity_keys = self.fake_identity_keys();
        let actors = self
            .nodes
            .values()
            .filter_map(|n| {
                let a = n.actor.as_ref()?;
                Some(ActorSummary {
                    id: n.id.to_string(),
                    region: a.region.to_string(),
                    status: format!("{:?}", a.status),
                    bound: a.binding.len() as u64,
                    binding_version: a.binding_version,
                    region_key_issued_at: a.region_key.as_ref().map(|r| r.issued_at),
                })
            })
            .collect();
        let violations = self.audit.status.values().any(|s| !s.holds());
        let pass = self.halted.is_none() && !violations && reconciliation.pass != Some(false);
        SimReport {
            config_hash: self.hash.clone(),
            name: self.config.name.clone(),
            seed: self.config.seed,
            pass,
            halted: self.halted.clone(),
            final_time: self.now,
            events_processed: self.events_processed,
            totals: t,
            setup_totals: self.setup.as_ref().map(|s| s.ledger.setup_totals()),
            phase_totals: self.ledger.phase_totals().iter().map(|(p, c)| (p.name().to_string(), *c)).collect(),
            network: NetworkCounts {
                sent: t.messages_sent,
                received: t.messages_received,
                undeliverable: self.ledger.undeliverable(),
                lost: self.lost,
            },
            storage,
            invariants,
            reconciliation,
            security,
            upper,
            frames: self.frames.clone(),
            script_errors: self.script_errors.clone(),
            crl_entries: self.ca.crl().len() as u64,
            certificates_issued: self.issued.len() as u64,
            actors,
        }
    }

    /// The trace log with its config-hash header.
    pub fn trace(&self) -> String {
        let mut s = format!("# config-hash: {}\ntime,node,event,peer,kind,outcome\n", self.hash);
        for l in &self.trace {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    fn artifacts(&self, report: &SimReport) -> Artifacts {
        let out = &self.config.output;
        let hash_line = format!("# config-hash: {}\n", self.hash);
        let mut a = Artifacts::new();
        a.insert(out.trace.clone(), self.trace());
        a.insert(out.report.clone(), serde_json::to_string_pretty(report).expect("report serializes") + "\n");
        let rec = serde_json::json!({
            "config_hash": self.hash,
            "applicable": report.reconciliation.applicable,
            "reason": report.reconciliation.reason,
            "report": self.setup.as_ref().map(|s| &s.reconciliation),
        });
        a.insert(out.reconciliation.clone(), serde_json::to_string_pretty(&rec).expect("json") + "\n");
        let n = self.config.topology.n_sensors as u64;
        let rows = curve_table(n, 1..=30, &LeapBaseline::default());
        a.insert(out.curves.clone(), curves_to_csv(&rows, &[format!("config-hash: {}", self.hash)]));
        a.insert(out.crl.clone(), hash_line.clone() + &self.ca.crl().to_csv());
        for node in self.nodes.values() {
            if let Some(actor) = node.actor.as_ref().filter(|a| a.is_active()) {
                let name = format!("{}{}.csv", out.binding_prefix, actor.region.0);
                a.insert(name, hash_line.clone() + &actor.binding.to_csv());
            }
        }
        a
    }

    /// Invariant names whose check failed at least once.
    pub fn violated(&self) -> Vec<Invariant> {
        self.audit.status.iter().filter(|(_, s)| !s.holds()).map(|(k, _)| *k).collect()
    }
}

/// Builds the network, runs it to completion and collects every artifact.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, SimError> {
    let mut net = Network::new(config)?;
    net.run();
    let report = net.report();
    let artifacts = net.artifacts(&report);
    Ok(RunOutput {
        reconciliation: net.setup.as_ref().map(|s| s.reconciliation.clone()),
        trace: net.trace(),
        report,
        artifacts,
    })
}
