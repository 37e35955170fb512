//! Public-key layer between actors and the sink: certificates, the
//! revocation list, mutual authentication and session keys.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cost::CostPhase;
use crate::crypto::{AsymKeyPair, CryptoSuite, KeyKind, Nonce, PublicKey, SecretKey, Signature, SymKey, DIGEST_LEN};
use crate::lower::{send_binding_transfer, TransferMode};
use crate::model::{
    BindingTable, Ctx, Destination, MessageKind, Node, NodeId, Outcome, ParseError, Reader, RegionId, SimTime,
    WireMessage, Writer,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertError {
    #[error("certificate signature does not verify")]
    BadSignature,
    #[error("certificate not valid before {t_sign} (at {at})")]
    NotYetValid { t_sign: SimTime, at: SimTime },
    #[error("certificate expired at {t_expire} (at {at})")]
    Expired { t_expire: SimTime, at: SimTime },
    #[error("certificate {0} is revoked")]
    Revoked(u64),
    #[error("renewal window closed: {elapsed} ticks since signing exceeds {t_refresh}")]
    RefreshWindowPassed { elapsed: SimTime, t_refresh: SimTime },
    #[error("no certificate on file for {0}")]
    Unknown(NodeId),
    #[error("certificate subject {claimed} does not match sender {sender}")]
    SubjectMismatch { claimed: NodeId, sender: NodeId },
}

/// CA-signed binding of a node id to its public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub serial: u64,
    pub subject: NodeId,
    pub public: PublicKey,
    pub t_sign: SimTime,
    pub t_expire: SimTime,
    pub signature: Signature,
}

impl Certificate {
    fn signed_body(serial: u64, subject: NodeId, public: &PublicKey, t_sign: SimTime, t_expire: SimTime) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(serial).put_u32(subject.0).put_bytes(&public.0).put_u64(t_sign).put_u64(t_expire);
        w.finish()
    }

    /// Validity is half-open: `[t_sign, t_expire)`.
    pub fn is_valid_at(&self, t: SimTime) -> bool {
        self.t_sign <= t && t < self.t_expire
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.serial)
            .put_u32(self.subject.0)
            .put_bytes(&self.public.0)
            .put_u64(self.t_sign)
            .put_u64(self.t_expire)
            .put_bytes(&self.signature.0);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ParseError> {
        let mut r = Reader::new(bytes);
        let cert = Certificate {
            serial: r.u64("cert.serial")?,
            subject: r.node_id("cert.subject")?,
            public: PublicKey(r.bytes("cert.public")?),
            t_sign: r.u64("cert.t_sign")?,
            t_expire: r.u64("cert.t_expire")?,
            signature: Signature(r.bytes("cert.signature")?),
        };
        r.finish("cert")?;
        Ok(cert)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RevocationEntry {
    pub serial: u64,
    pub subject: NodeId,
    pub t_sign: SimTime,
    pub revoked_at: SimTime,
    pub reason: String,
}

/// Certificate revocation list held by the CA.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RevocationList {
    entries: BTreeMap<u64, RevocationEntry>,
}

impl RevocationList {
    pub fn is_revoked(&self, serial: u64) -> bool {
        self.entries.contains_key(&serial)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RevocationEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("serial,subject,t_sign,revoked_at,reason\n");
        for e in self.entries.values() {
            s.push_str(&format!("{},{},{},{},{}\n", e.serial, e.subject, e.t_sign, e.revoked_at, e.reason));
        }
        s
    }
}

/// Certificates may be renewed only while `now - t_sign <= t_refresh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RenewalPolicy {
    pub t_refresh: SimTime,
}

impl RenewalPolicy {
    pub fn allows(&self, cert: &Certificate, now: SimTime) -> Result<(), CertError> {
        let elapsed = now.saturating_sub(cert.t_sign);
        if elapsed > self.t_refresh {
            return Err(CertError::RefreshWindowPassed { elapsed, t_refresh: self.t_refresh });
        }
        Ok(())
    }
}

/// The sink acting as certificate authority.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    keypair: AsymKeyPair,
    pub id: NodeId,
    pub validity: SimTime,
    pub policy: RenewalPolicy,
    crl: RevocationList,
    current: BTreeMap<NodeId, Certificate>,
    next_serial: u64,
}

impl CertificateAuthority {
    pub fn new(suite: &dyn CryptoSuite, id: NodeId, seed: &[u8], validity: SimTime, policy: RenewalPolicy) -> Self {
        CertificateAuthority {
            keypair: suite.gen_keypair(seed),
            id,
            validity,
            policy,
            crl: RevocationList::default(),
            current: BTreeMap::new(),
            next_serial: 1,
        }
    }

    pub fn public(&self) -> &PublicKey {
        &self.keypair.public
    }

    pub fn secret(&self) -> &SecretKey {
        &self.keypair.secret
    }

    pub fn keypair(&self) -> &AsymKeyPair {
        &self.keypair
    }

    pub fn crl(&self) -> &RevocationList {
        &self.crl
    }

    /// Latest certificate issued to `subject`.
    pub fn current(&self, subject: NodeId) -> Option<&Certificate> {
        self.current.get(&subject)
    }

    pub fn issue(&mut self, suite: &dyn CryptoSuite, subject: NodeId, public: PublicKey, now: SimTime) -> Certificate {
        let serial = self.next_serial;
        self.next_serial += 1;
        let t_expire = now + self.validity;
        let body = Certificate::signed_body(serial, subject, &public, now, t_expire);
        let cert = Certificate {
            serial,
            subject,
            public,
            t_sign: now,
            t_expire,
            signature: suite.sign(&self.keypair.secret, &body),
        };
        self.current.insert(subject, cert.clone());
        cert
    }

    /// Reissues `cert` with a fresh window if the renewal policy allows it.
    pub fn renew(&mut self, suite: &dyn CryptoSuite, cert: &Certificate, now: SimTime) -> Result<Certificate, CertError> {
        if self.crl.is_revoked(cert.serial) {
            return Err(CertError::Revoked(cert.serial));
        }
        self.policy.allows(cert, now)?;
        Ok(self.issue(suite, cert.subject, cert.public.clone(), now))
    }

    pub fn revoke(&mut self, cert: &Certificate, now: SimTime, reason: &str) {
        self.crl.entries.insert(
            cert.serial,
            RevocationEntry {
                serial: cert.serial,
                subject: cert.subject,
                t_sign: cert.t_sign,
                revoked_at: now,
                reason: reason.to_string(),
            },
        );
    }

    pub fn is_revoked(&self, serial: u64) -> bool {
        self.crl.is_revoked(serial)
    }

    /// Whether the subject's latest certificate is on the CRL.
    pub fn is_subject_revoked(&self, subject: NodeId) -> bool {
        self.current.get(&subject).is_some_and(|c| self.crl.is_revoked(c.serial))
    }

    /// Signature, window and CRL check at time `at`.
    pub fn check(&self, suite: &dyn CryptoSuite, cert: &Certificate, at: SimTime) -> Result<(), CertError> {
        verify_certificate(suite, &self.keypair.public, cert, at)?;
        if self.crl.is_revoked(cert.serial) {
            return Err(CertError::Revoked(cert.serial));
        }
        Ok(())
    }
}

/// Checks the CA signature and validity window, without the CRL.
pub fn verify_certificate(
    suite: &dyn CryptoSuite,
    ca_public: &PublicKey,
    cert: &Certificate,
    at: SimTime,
) -> Result<(), CertError> {
    let body = Certificate::signed_body(cert.serial, cert.subject, &cert.public, cert.t_sign, cert.t_expire);
    if !suite.verify(ca_public, &body, &cert.signature) {
        return Err(CertError::BadSignature);
    }
    if at < cert.t_sign {
        return Err(CertError::NotYetValid { t_sign: cert.t_sign, at });
    }
    if at >= cert.t_expire {
        return Err(CertError::Expired { t_expire: cert.t_expire, at });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeRole {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub role: HandshakeRole,
    pub my_nonce: Nonce,
    pub peer_nonce: Option<Nonce>,
    pub peer_cert: Option<Certificate>,
}

/// Session with one authenticated peer. The key lives in the node's
/// [`crate::model::KeyStore::session_keys`] once both nonces are known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    pub peer: NodeId,
    pub initiator: bool,
    pub my_nonce: [u8; DIGEST_LEN],
    pub established: bool,
}

/// Upper-layer state of an actor or the sink.
#[derive(Debug, Clone)]
pub struct UpperState {
    pub keypair: AsymKeyPair,
    pub cert: Certificate,
    pub peer_certs: BTreeMap<NodeId, Certificate>,
    pub handshakes: BTreeMap<NodeId, Handshake>,
    pub authenticated: BTreeSet<NodeId>,
    pub sessions: BTreeMap<NodeId, SessionState>,
    /// Our nonce from the last handshake completed with each peer.
    completed: BTreeMap<NodeId, Nonce>,
    seen_offers: BTreeSet<[u8; DIGEST_LEN]>,
}

impl UpperState {
    pub fn new(keypair: AsymKeyPair, cert: Certificate) -> Self {
        UpperState {
            keypair,
            cert,
            peer_certs: BTreeMap::new(),
            handshakes: BTreeMap::new(),
            authenticated: BTreeSet::new(),
            sessions: BTreeMap::new(),
            completed: BTreeMap::new(),
            seen_offers: BTreeSet::new(),
        }
    }
}

/// Sink-only state: the actor directory and the mirrored binding tables.
#[derive(Debug, Clone, Default)]
pub struct SinkState {
    pub directory: BTreeMap<NodeId, PublicKey>,
    pub tables: BTreeMap<RegionId, BindingTable>,
    pub versions: BTreeMap<RegionId, u64>,
    /// Replacement actor -> region it takes over once authenticated.
    pub pending_handover: BTreeMap<NodeId, RegionId>,
}

const STAGE_INIT: u8 = 0;
const STAGE_REPLY: u8 = 1;
const STAGE_ABORT: u8 = 2;

fn challenge_body(peer_nonce: &Nonce, signer: NodeId, peer: NodeId) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_raw(&peer_nonce.0).put_u32(signer.0).put_u32(peer.0);
    w.finish()
}

fn upper_mut(node: &mut Node) -> Option<&mut UpperState> {
    node.upper.as_mut()
}

/// Whether `peer`'s current certificate was valid and unrevoked when the
/// frame being handled was sent.
pub fn peer_certificate_valid(node: &Node, peer: NodeId, ctx: &Ctx<'_>) -> bool {
    let Some(upper) = node.upper.as_ref() else {
        return false;
    };
    if !upper.authenticated.contains(&peer) {
        return false;
    }
    match ctx.ca.current(peer) {
        Some(cert) => cert.is_valid_at(ctx.sent_at) && !ctx.ca.is_revoked(cert.serial),
        None => false,
    }
}

/// Opens mutual authentication with `peer` by sending our certificate.
pub fn start_auth(node: &mut Node, peer: NodeId, ctx: &mut Ctx<'_>) -> Result<(), CertError> {
    let id = node.id;
    let upper = upper_mut(node).ok_or(CertError::Unknown(id))?;
    ctx.ca.check(ctx.suite, &upper.cert, ctx.now)?;
    let nonce = Nonce::random(ctx.rng);
    upper.authenticated.remove(&peer);
    upper.handshakes.insert(
        peer,
        Handshake { role: HandshakeRole::Initiator, my_nonce: nonce, peer_nonce: None, peer_cert: None },
    );
    let mut w = Writer::new();
    w.put_u8(STAGE_INIT).put_bytes(&upper.cert.encode()).put_raw(&nonce.0);
    ctx.send(WireMessage::new(MessageKind::CertExchange, id, Destination::Node(peer), w.finish()));
    Ok(())
}

/// Tears down our side and tells the peer, echoing the peer's nonce so the
/// abort only cancels the handshake it belongs to.
fn abort(node: &mut Node, peer: NodeId, peer_nonce: Nonce, reason: &'static str, ctx: &mut Ctx<'_>) -> Outcome {
    if let Some(upper) = upper_mut(node) {
        upper.handshakes.remove(&peer);
        upper.authenticated.remove(&peer);
        upper.completed.remove(&peer);
    }
    let mut w = Writer::new();
    w.put_u8(STAGE_ABORT).put_raw(&peer_nonce.0);
    ctx.send(WireMessage::new(MessageKind::CertChallenge, node.id, Destination::Node(peer), w.finish()));
    Outcome::Rejected(reason)
}

pub fn handle_cert_exchange(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let id = node.id;
    let Some(upper) = upper_mut(node) else {
        return Outcome::Ignored("no upper layer");
    };
    let mut r = Reader::new(&msg.payload);
    let parsed = (|| {
        let stage = r.u8("exchange.stage")?;
        let cert = Certificate::decode(&r.bytes("exchange.cert")?)?;
        let nonce = r.nonce("exchange.nonce")?;
        r.finish("exchange")?;
        Ok::<_, ParseError>((stage, cert, nonce))
    })();
    let Ok((stage, cert, peer_nonce)) = parsed else {
        return Outcome::Rejected("malformed certificate exchange");
    };
    let check = ctx.ca.check(ctx.suite, &cert, ctx.sent_at);
    ctx.compute(id, CostPhase::Upper, 1);
    let check = check.and_then(|_| {
        if cert.subject == msg.src {
            Ok(())
        } else {
            Err(CertError::SubjectMismatch { claimed: cert.subject, sender: msg.src })
        }
    });
    match stage {
        STAGE_INIT => {
            if check.is_err() {
                return abort(node, msg.src, peer_nonce, "peer certificate invalid", ctx);
            }
            let nonce = Nonce::random(ctx.rng);
            upper.handshakes.insert(
                msg.src,
                Handshake {
                    role: HandshakeRole::Responder,
                    my_nonce: nonce,
                    peer_nonce: Some(peer_nonce),
                    peer_cert: Some(cert),
                },
            );
            let mut w = Writer::new();
            w.put_u8(STAGE_REPLY).put_bytes(&upper.cert.encode()).put_raw(&nonce.0);
            ctx.send(WireMessage::new(MessageKind::CertExchange, id, Destination::Node(msg.src), w.finish()));
            Outcome::Answered
        }
        STAGE_REPLY => {
            let Some(hs) = upper.handshakes.get_mut(&msg.src) else {
                return Outcome::Rejected("no handshake in progress");
            };
            if hs.role != HandshakeRole::Initiator || hs.peer_nonce.is_some() {
                return Outcome::Rejected("unexpected certificate reply");
            }
            if check.is_err() {
                return abort(node, msg.src, peer_nonce, "peer certificate invalid", ctx);
            }
            hs.peer_nonce = Some(peer_nonce);
            hs.peer_cert = Some(cert);
            let sig = ctx.suite.sign(&upper.keypair.secret, &challenge_body(&peer_nonce, id, msg.src));
            ctx.compute(id, CostPhase::Upper, 1);
            let mut w = Writer::new();
            w.put_u8(STAGE_INIT).put_bytes(&sig.0);
            ctx.send(WireMessage::new(MessageKind::CertChallenge, id, Destination::Node(msg.src), w.finish()));
            Outcome::Answered
        }
        _ => Outcome::Rejected("unknown exchange stage"),
    }
}

pub fn handle_cert_challenge(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let id = node.id;
    let Some(upper) = upper_mut(node) else {
        return Outcome::Ignored("no upper layer");
    };
    let mut r = Reader::new(&msg.payload);
    let Ok(stage) = r.u8("challenge.stage") else {
        return Outcome::Rejected("malformed challenge");
    };
    if stage == STAGE_ABORT {
        let Ok(nonce) = r.nonce("challenge.nonce").and_then(|n| r.finish("challenge").map(|_| n)) else {
            return Outcome::Rejected("malformed abort");
        };
        if upper.handshakes.get(&msg.src).is_some_and(|h| h.my_nonce == nonce) {
            upper.handshakes.remove(&msg.src);
            return Outcome::Ignored("peer aborted");
        }
        if upper.completed.get(&msg.src) == Some(&nonce) {
            upper.completed.remove(&msg.src);
            upper.authenticated.remove(&msg.src);
            return Outcome::Ignored("peer aborted");
        }
        return Outcome::Rejected("stray abort");
    }
    let Ok(sig) = r.bytes("challenge.sig").and_then(|s| r.finish("challenge").map(|_| Signature(s))) else {
        return Outcome::Rejected("malformed challenge");
    };
    let Some(hs) = upper.handshakes.get(&msg.src).cloned() else {
        return Outcome::Rejected("no handshake in progress");
    };
    let (Some(peer_cert), true) = (hs.peer_cert.clone(), hs.peer_nonce.is_some()) else {
        return Outcome::Rejected("handshake incomplete");
    };
    let expected_stage = match hs.role {
        HandshakeRole::Responder => STAGE_INIT,
        HandshakeRole::Initiator => STAGE_REPLY,
    };
    if stage != expected_stage {
        return Outcome::Rejected("unexpected challenge stage");
    }
    if ctx.ca.check(ctx.suite, &peer_cert, ctx.sent_at).is_err() {
        return abort(node, msg.src, hs.peer_nonce.unwrap(), "peer certificate lapsed during handshake", ctx);
    }
    let ok = ctx.suite.verify(&peer_cert.public, &challenge_body(&hs.my_nonce, msg.src, id), &sig);
    ctx.compute(id, CostPhase::Upper, 1);
    if !ok {
        return abort(node, msg.src, hs.peer_nonce.unwrap(), "bad challenge signature", ctx);
    }
    upper.handshakes.remove(&msg.src);
    upper.authenticated.insert(msg.src);
    upper.completed.insert(msg.src, hs.my_nonce);
    upper.peer_certs.insert(msg.src, peer_cert.clone());
    if hs.role == HandshakeRole::Responder {
        let sig = ctx.suite.sign(&upper.keypair.secret, &challenge_body(&hs.peer_nonce.unwrap(), id, msg.src));
        ctx.compute(id, CostPhase::Upper, 1);
        let mut w = Writer::new();
        w.put_u8(STAGE_REPLY).put_bytes(&sig.0);
        ctx.send(WireMessage::new(MessageKind::CertChallenge, id, Destination::Node(msg.src), w.finish()));
        on_authenticated_by_sink(node, msg.src, &peer_cert, ctx);
    }
    Outcome::Accepted
}

fn on_authenticated_by_sink(node: &mut Node, peer: NodeId, cert: &Certificate, ctx: &mut Ctx<'_>) {
    let Some(sink) = node.sink.as_mut() else {
        return;
    };
    sink.directory.insert(peer, cert.public.clone());
    let Some(region) = sink.pending_handover.remove(&peer) else {
        return;
    };
    let Some(mut table) = sink.tables.get(&region).cloned() else {
        ctx.note(format!("handover of {region} to {peer}: sink holds no table"));
        return;
    };
    table.owner = peer;
    let version = sink.versions.get(&region).copied().unwrap_or(0);
    sink.tables.insert(region, table.clone());
    if let Err(e) = send_binding_transfer(node, peer, TransferMode::Full, &table, version, ctx) {
        ctx.note(format!("handover of {region} to {peer} failed: {e}"));
    }
}

/// Offers a session key contribution to an authenticated peer.
pub fn start_session(node: &mut Node, peer: NodeId, ctx: &mut Ctx<'_>) -> Result<(), CertError> {
    let id = node.id;
    let upper = upper_mut(node).ok_or(CertError::Unknown(id))?;
    if !upper.authenticated.contains(&peer) {
        return Err(CertError::Unknown(peer));
    }
    let cert = ctx.ca.current(peer).cloned().ok_or(CertError::Unknown(peer))?;
    ctx.ca.check(ctx.suite, &cert, ctx.now)?;
    let mut nonce = [0u8; DIGEST_LEN];
    rand::RngCore::fill_bytes(ctx.rng, &mut nonce);
    let mut seed = [0u8; 16];
    rand::RngCore::fill_bytes(ctx.rng, &mut seed);
    let mut plain = Writer::new();
    plain.put_u32(id.0).put_u32(peer.0).put_raw(&nonce);
    let ct = ctx.suite.pk_encrypt(&cert.public, &plain.finish(), &seed);
    ctx.compute(id, CostPhase::Upper, 1);
    upper.sessions.insert(peer, SessionState { peer, initiator: true, my_nonce: nonce, established: false });
    node.keys.session_keys.remove(&peer);
    let mut w = Writer::new();
    w.put_u8(STAGE_INIT).put_raw(&ct);
    ctx.send(WireMessage::new(MessageKind::SessionKeyMsg, id, Destination::Node(peer), w.finish()));
    Ok(())
}

/// `K_sess = H(n_initiator || n_responder)`.
pub fn session_key(suite: &dyn CryptoSuite, n_initiator: &[u8], n_responder: &[u8]) -> SymKey {
    let d = suite.hash(&[n_initiator, n_responder].concat());
    SymKey::new(d, KeyKind::Session)
}

pub fn handle_session_msg(node: &mut Node, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Outcome {
    let id = node.id;
    if !peer_certificate_valid(node, msg.src, ctx) {
        return Outcome::Rejected("peer not authenticated or certificate invalid");
    }
    let upper = node.upper.as_mut().unwrap();
    let Some((&stage, ct)) = msg.payload.split_first() else {
        return Outcome::Rejected("malformed session message");
    };
    let plain = ctx.suite.pk_decrypt(&upper.keypair.secret, ct);
    ctx.compute(id, CostPhase::Upper, 1);
    let Ok(plain) = plain else {
        return Outcome::Rejected("undecryptable session message");
    };
    let mut r = Reader::new(&plain);
    let parsed = (|| {
        let from = r.node_id("session.from")?;
        let to = r.node_id("session.to")?;
        let n = r.array::<DIGEST_LEN>("session.nonce")?;
        r.finish("session")?;
        Ok::<_, ParseError>((from, to, n))
    })();
    let Ok((from, to, peer_nonce)) = parsed else {
        return Outcome::Rejected("malformed session message");
    };
    if from != msg.src || to != id {
        return Outcome::Rejected("session header mismatch");
    }
    match stage {
        STAGE_INIT => {
            let digest = ctx.suite.hash(ct);
            if !upper.seen_offers.insert(digest) {
                return Outcome::Rejected("replayed session offer");
            }
            let Some(cert) = ctx.ca.current(msg.src).cloned() else {
                return Outcome::Rejected("unknown peer");
            };
            let mut nonce = [0u8; DIGEST_LEN];
            rand::RngCore::fill_bytes(ctx.rng, &mut nonce);
            let mut seed = [0u8; 16];
            rand::RngCore::fill_bytes(ctx.rng, &mut seed);
            let mut reply = Writer::new();
            reply.put_u32(id.0).put_u32(msg.src.0).put_raw(&nonce);
            let reply_ct = ctx.suite.pk_encrypt(&cert.public, &reply.finish(), &seed);
            let key = session_key(ctx.suite, &peer_nonce, &nonce);
            ctx.compute(id, CostPhase::Upper, 2);
            upper
                .sessions
                .insert(msg.src, SessionState { peer: msg.src, initiator: false, my_nonce: nonce, established: true });
            node.keys.session_keys.insert(msg.src, key);
            let mut w = Writer::new();
            w.put_u8(STAGE_REPLY).put_raw(&reply_ct);
            ctx.send(WireMessage::new(MessageKind::SessionKeyMsg, id, Destination::Node(msg.src), w.finish()));
            Outcome::Accepted
        }
        STAGE_REPLY => {
            let Some(session) = upper.sessions.get_mut(&msg.src) else {
                return Outcome::Rejected("no session offered");
            };
            if !session.initiator || session.established {
                return Outcome::Rejected("unexpected session reply");
            }
            let key = session_key(ctx.suite, &session.my_nonce, &peer_nonce);
            ctx.compute(id, CostPhase::Upper, 1);
            session.established = true;
            node.keys.session_keys.insert(msg.src, key);
            Outcome::Accepted
        }
        _ => Outcome::Rejected("unknown session stage"),
    }
}

/// Ends the session with `peer` and erases its key. Returns whether one existed.
pub fn end_session(node: &mut Node, peer: NodeId) -> bool {
    let had_key = node.keys.session_keys.remove(&peer).is_some();
    let had_state = node.upper.as_mut().is_some_and(|u| u.sessions.remove(&peer).is_some());
    had_key || had_state
}

/// Swaps in a renewed certificate.
pub fn install_certificate(node: &mut Node, cert: Certificate) -> bool {
    match node.upper.as_mut() {
        Some(u) if u.cert.subject == cert.subject => {
            u.cert = cert;
            true
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::ToySuite;

    fn ca() -> CertificateAuthority {
        CertificateAuthority::new(&ToySuite, NodeId(0), b"ca", 100, RenewalPolicy { t_refresh: 30 })
    }

    #[test]
    fn window_is_half_open() {
        let suite = ToySuite;
        let mut ca = ca();
        let kp = suite.gen_keypair(b"a");
        let cert = ca.issue(&suite, NodeId(1), kp.public, 10);
        assert!(ca.check(&suite, &cert, 9).is_err());
        assert!(ca.check(&suite, &cert, 10).is_ok());
        assert!(ca.check(&suite, &cert, 109).is_ok());
        assert_eq!(ca.check(&suite, &cert, 110), Err(CertError::Expired { t_expire: 110, at: 110 }));
    }

    #[test]
    fn renewal_bound_is_closed() {
        let suite = ToySuite;
        let mut ca = ca();
        let cert = ca.issue(&suite, NodeId(1), suite.gen_keypair(b"a").public, 0);
        assert!(ca.clone().renew(&suite, &cert, 30).is_ok());
        assert_eq!(
            ca.renew(&suite, &cert, 31),
            Err(CertError::RefreshWindowPassed { elapsed: 31, t_refresh: 30 })
        );
    }

    #[test]
    fn revoked_certificate_fails_check_and_renewal() {
        let suite = ToySuite;
        let mut ca = ca();
        let cert = ca.issue(&suite, NodeId(1), suite.gen_keypair(b"a").public, 0);
        ca.revoke(&cert, 5, "compromise");
        assert_eq!(ca.check(&suite, &cert, 6), Err(CertError::Revoked(cert.serial)));
        assert!(ca.is_subject_revoked(NodeId(1)));
        assert!(ca.renew(&suite, &cert, 6).is_err());
        assert_eq!(ca.crl().to_csv(), "serial,subject,t_sign,revoked_at,reason\n1,0x00000001,0,5,compromise\n");
    }

    #[test]
    fn tampered_certificate_fails() {
        let suite = ToySuite;
        let mut ca = ca();
        let mut cert = ca.issue(&suite, NodeId(1), suite.gen_keypair(b"a").public, 0);
        cert.t_expire += 1;
        assert_eq!(ca.check(&suite, &cert, 1), Err(CertError::BadSignature));
        let enc = ca.issue(&suite, NodeId(2), suite.gen_keypair(b"b").public, 0).encode();
        assert!(Certificate::decode(&enc).is_ok());
        assert!(Certificate::decode(&enc[..enc.len() - 1]).is_err());
    }

    #[test]
    fn session_key_depends_on_both_nonces() {
        let s = ToySuite;
        let k = session_key(&s, &[1; 16], &[2; 16]);
        assert_ne!(k, session_key(&s, &[1; 16], &[3; 16]));
        assert_ne!(k, session_key(&s, &[2; 16], &[1; 16]));
    }
}
