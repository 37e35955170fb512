//! Pluggable cryptographic primitives.
//!
//! Every protocol step goes through the [`CryptoSuite`] trait. The default
//! [`ToySuite`] is deterministic and built from HMAC-SHA-256 plus a small
//! discrete-log group; it exists to make protocol logic and cost counts
//! reproducible, not to resist a real attacker.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Symmetric key length in octets.
pub const KEY_LEN: usize = 16;
/// Nonce length in octets.
pub const NONCE_LEN: usize = 8;
/// MAC tag length in octets.
pub const TAG_LEN: usize = 8;
/// Digest length of [`CryptoSuite::hash`].
pub const DIGEST_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("ciphertext too short ({0} octets)")]
    Truncated(usize),
    #[error("integrity check failed")]
    IntegrityFailure,
    #[error("malformed key material: {0}")]
    BadKeyMaterial(&'static str),
    #[error("unknown crypto suite `{0}`")]
    UnknownSuite(String),
}

/// Role a symmetric key plays in the key hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    InitialPairwise,
    InitialNode,
    Master,
    PairWise,
    Node,
    Region,
    Session,
}

impl KeyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyKind::InitialPairwise => "initial-pairwise",
            KeyKind::InitialNode => "initial-node",
            KeyKind::Master => "master",
            KeyKind::PairWise => "pairwise",
            KeyKind::Node => "node",
            KeyKind::Region => "region",
            KeyKind::Session => "session",
        }
    }
}

/// A fixed-length symmetric key tagged with its role.
///
/// The kind is fixed at construction; there is no setter.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymKey {
    bytes: [u8; KEY_LEN],
    kind: KeyKind,
}

impl SymKey {
    pub fn new(bytes: [u8; KEY_LEN], kind: KeyKind) -> Self {
        SymKey { bytes, kind }
    }

    pub fn from_slice(bytes: &[u8], kind: KeyKind) -> Result<Self, CryptoError> {
        let bytes: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::BadKeyMaterial("symmetric key must be 16 octets"))?;
        Ok(SymKey { bytes, kind })
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R, kind: KeyKind) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        SymKey { bytes, kind }
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    /// Same key material re-labelled; used when a derived value changes role
    /// (for example a session digest becoming a session key).
    pub fn with_kind(&self, kind: KeyKind) -> Self {
        SymKey { bytes: self.bytes, kind }
    }

    /// First four octets as `0x????????`, the `Key_Info` column of a binding table.
    pub fn fingerprint(&self) -> String {
        format!(
            "0x{:02x}{:02x}{:02x}{:02x}",
            self.bytes[0], self.bytes[1], self.bytes[2], self.bytes[3]
        )
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey({}, {})", self.kind.as_str(), self.fingerprint())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut b);
        Nonce(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacTag(pub [u8; TAG_LEN]);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey(pub Vec<u8>);

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKey(pub Vec<u8>);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(pub Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsymKeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// The primitive set the protocol layers are written against.
///
/// Implementations must be pure: no interior state, all randomness passed in.
pub trait CryptoSuite: Send + Sync {
    fn name(&self) -> &'static str;

    /// Keyed pseudo-random function; the output is labelled with `kind`.
    fn prf(&self, key: &SymKey, input: &[u8], kind: KeyKind) -> SymKey;

    fn hash(&self, input: &[u8]) -> [u8; DIGEST_LEN];

    fn mac(&self, key: &SymKey, message: &[u8]) -> MacTag;

    fn mac_verify(&self, key: &SymKey, message: &[u8], tag: &MacTag) -> bool {
        self.mac(key, message) == *tag
    }

    /// Authenticated encryption; wrong-key decryption is reported, never silent.
    fn sym_encrypt(&self, key: &SymKey, plaintext: &[u8]) -> Vec<u8>;

    fn sym_decrypt(&self, key: &SymKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError>;

    fn gen_keypair(&self, seed: &[u8]) -> AsymKeyPair;

    fn sign(&self, secret: &SecretKey, message: &[u8]) -> Signature;

    fn verify(&self, public: &PublicKey, message: &[u8], signature: &Signature) -> bool;

    /// Public-key encryption; `ephemeral_seed` supplies the encryptor's randomness.
    fn pk_encrypt(&self, public: &PublicKey, plaintext: &[u8], ephemeral_seed: &[u8]) -> Vec<u8>;

    fn pk_decrypt(&self, secret: &SecretKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError>;
}

/// Looks up a suite by the name used in scenario files.
pub fn suite_by_name(name: &str) -> Result<Box<dyn CryptoSuite>, CryptoError> {
    match name {
        "toy" => Ok(Box::new(ToySuite)),
        other => Err(CryptoError::UnknownSuite(other.to_string())),
    }
}

pub fn known_suites() -> &'static [&'static str] {
    &["toy"]
}

type HmacSha256 = Hmac<Sha256>;

// Domain-separation prefixes for the HMAC-based primitives.
const DS_PRF: u8 = 0x01;
const DS_MAC: u8 = 0x02;
const DS_SIV: u8 = 0x03;
const DS_TAG: u8 = 0x04;

/// Modulus of the toy discrete-log group: the Mersenne prime 2^61 - 1.
pub const GROUP_P: u64 = (1u64 << 61) - 1;
/// Order of the multiplicative group; exponents are reduced modulo this.
pub const GROUP_ORDER: u64 = GROUP_P - 1;
/// Group generator (a primitive root of `GROUP_P`).
pub const GROUP_G: u64 = 37;

/// Deterministic toy suite.
///
/// * PRF: `HMAC-SHA256(key, 0x01 || input)[..16]`
/// * MAC: `HMAC-SHA256(key, 0x02 || msg)[..8]`
/// * hash: `SHA256(input)[..16]`
/// * symmetric: synthetic-IV stream cipher, `siv || (pt ^ keystream) || tag`
/// * asymmetric: Schnorr signatures and hashed-ElGamal encryption mod 2^61 - 1
#[derive(Debug, Clone, Copy, Default)]
pub struct ToySuite;

fn hmac16(key: &[u8], domain: u8, parts: &[&[u8]]) -> [u8; 32] {
    let mut m = <HmacSha256 as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    m.update(&[domain]);
    for p in parts {
        m.update(p);
    }
    m.finalize().into_bytes().into()
}

fn keystream_xor(key: &[u8; KEY_LEN], siv: &[u8], data: &mut [u8]) {
    for (block, chunk) in data.chunks_mut(32).enumerate() {
        let mut h = Sha256::new();
        h.update(key);
        h.update(siv);
        h.update((block as u32).to_be_bytes());
        let ks: [u8; 32] = h.finalize().into();
        for (b, k) in chunk.iter_mut().zip(ks.iter()) {
            *b ^= k;
        }
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

/// Modular exponentiation in the toy group.
pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

fn scalar_from(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let d: [u8; 32] = h.finalize().into();
    u64::from_be_bytes(d[..8].try_into().unwrap()) % GROUP_ORDER
}

fn decode_u64(bytes: &[u8]) -> Option<u64> {
    Some(u64::from_be_bytes(bytes.try_into().ok()?))
}

impl CryptoSuite for ToySuite {
    fn name(&self) -> &'static str {
        "toy"
    }

    fn prf(&self, key: &SymKey, input: &[u8], kind: KeyKind) -> SymKey {
        let d = hmac16(key.bytes(), DS_PRF, &[input]);
        SymKey::new(d[..KEY_LEN].try_into().unwrap(), kind)
    }

    fn hash(&self, input: &[u8]) -> [u8; DIGEST_LEN] {
        let d: [u8; 32] = Sha256::digest(input).into();
        d[..DIGEST_LEN].try_into().unwrap()
    }

    fn mac(&self, key: &SymKey, message: &[u8]) -> MacTag {
        let d = hmac16(key.bytes(), DS_MAC, &[message]);
        MacTag(d[..TAG_LEN].try_into().unwrap())
    }

    fn sym_encrypt(&self, key: &SymKey, plaintext: &[u8]) -> Vec<u8> {
        let siv = &hmac16(key.bytes(), DS_SIV, &[plaintext])[..NONCE_LEN];
        let mut out = Vec::with_capacity(NONCE_LEN + plaintext.len() + TAG_LEN);
        out.extend_from_slice(siv);
        out.extend_from_slice(plaintext);
        keystream_xor(key.bytes(), siv, &mut out[NONCE_LEN..]);
        let tag = hmac16(key.bytes(), DS_TAG, &[&out]);
        out.extend_from_slice(&tag[..TAG_LEN]);
        out
    }

    fn sym_decrypt(&self, key: &SymKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if ciphertext.len() < NONCE_LEN + TAG_LEN {
            return Err(CryptoError::Truncated(ciphertext.len()));
        }
        let (body, tag) = ciphertext.split_at(ciphertext.len() - TAG_LEN);
        let expected = hmac16(key.bytes(), DS_TAG, &[body]);
        if expected[..TAG_LEN] != *tag {
            return Err(CryptoError::IntegrityFailure);
        }
        let (siv, ct) = body.split_at(NONCE_LEN);
        let mut pt = ct.to_vec();
        keystream_xor(key.bytes(), siv, &mut pt);
        Ok(pt)
    }

    fn gen_keypair(&self, seed: &[u8]) -> AsymKeyPair {
        // secret in [1, order - 1]
        let x = scalar_from(&[b"keypair", seed]) % (GROUP_ORDER - 1) + 1;
        let y = pow_mod(GROUP_G, x, GROUP_P);
        AsymKeyPair {
            public: PublicKey(y.to_be_bytes().to_vec()),
            secret: SecretKey(x.to_be_bytes().to_vec()),
        }
    }

    fn sign(&self, secret: &SecretKey, message: &[u8]) -> Signature {
        let x = decode_u64(&secret.0).expect("toy secret keys are 8 octets");
        // deterministic per-message nonce
        let k = scalar_from(&[b"sign-nonce", &secret.0, message]) % (GROUP_ORDER - 1) + 1;
        let r = pow_mod(GROUP_G, k, GROUP_P);
        let e = scalar_from(&[b"challenge", &r.to_be_bytes(), message]);
        let xe = ((x as u128 * e as u128) % GROUP_ORDER as u128) as u64;
        let s = (k + GROUP_ORDER - xe) % GROUP_ORDER;
        let mut sig = Vec::with_capacity(16);
        sig.extend_from_slice(&e.to_be_bytes());
        sig.extend_from_slice(&s.to_be_bytes());
        Signature(sig)
    }

    fn verify(&self, public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
        let (Some(y), true) = (decode_u64(&public.0), signature.0.len() == 16) else {
            return false;
        };
        let e = decode_u64(&signature.0[..8]).unwrap();
        let s = decode_u64(&signature.0[8..]).unwrap();
        if e >= GROUP_ORDER || s >= GROUP_ORDER || y == 0 || y >= GROUP_P {
            return false;
        }
        let r = mul_mod(pow_mod(GROUP_G, s, GROUP_P), pow_mod(y, e, GROUP_P), GROUP_P);
        scalar_from(&[b"challenge", &r.to_be_bytes(), message]) == e
    }

    fn pk_encrypt(&self, public: &PublicKey, plaintext: &[u8], ephemeral_seed: &[u8]) -> Vec<u8> {
        let y = decode_u64(&public.0).expect("toy public keys are 8 octets");
        let k = scalar_from(&[b"ephemeral", ephemeral_seed]) % (GROUP_ORDER - 1) + 1;
        let c1 = pow_mod(GROUP_G, k, GROUP_P);
        let shared = pow_mod(y, k, GROUP_P);
        let key = SymKey::new(
            self.hash(&[b"pke".as_slice(), &shared.to_be_bytes()].concat()),
            KeyKind::Session,
        );
        let mut out = c1.to_be_bytes().to_vec();
        out.extend(self.sym_encrypt(&key, plaintext));
        out
    }

    fn pk_decrypt(&self, secret: &SecretKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let x = decode_u64(&secret.0).ok_or(CryptoError::BadKeyMaterial("toy secret keys are 8 octets"))?;
        if ciphertext.len() < 8 {
            return Err(CryptoError::Truncated(ciphertext.len()));
        }
        let c1 = decode_u64(&ciphertext[..8]).unwrap();
        let shared = pow_mod(c1, x, GROUP_P);
        let key = SymKey::new(
            self.hash(&[b"pke".as_slice(), &shared.to_be_bytes()].concat()),
            KeyKind::Session,
        );
        self.sym_decrypt(&key, &ciphertext[8..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(b: u8, kind: KeyKind) -> SymKey {
        SymKey::new([b; KEY_LEN], kind)
    }

    #[test]
    fn prf_is_deterministic_and_kind_labelled() {
        let s = ToySuite;
        let k = key(7, KeyKind::InitialPairwise);
        let a = s.prf(&k, b"node", KeyKind::Master);
        let b = s.prf(&k, b"node", KeyKind::Master);
        assert_eq!(a, b);
        assert_eq!(a.kind(), KeyKind::Master);
    }

    #[test]
    fn prf_distinct_inputs_never_collide() {
        let s = ToySuite;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = SymKey::random(&mut rng, KeyKind::InitialPairwise);
        for _ in 0..1000 {
            let mut x1 = [0u8; 12];
            let mut x2 = [0u8; 12];
            rng.fill_bytes(&mut x1);
            rng.fill_bytes(&mut x2);
            if x1 == x2 {
                continue;
            }
            assert_ne!(
                s.prf(&k, &x1, KeyKind::Master).bytes(),
                s.prf(&k, &x2, KeyKind::Master).bytes()
            );
        }
    }

    #[test]
    fn hash_collision_scan() {
        let s = ToySuite;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut seen = std::collections::HashSet::new();
        for i in 0..2000u32 {
            let mut m = vec![0u8; 1 + (i as usize % 40)];
            rng.fill_bytes(&mut m);
            m.extend_from_slice(&i.to_be_bytes());
            assert!(seen.insert(s.hash(&m)));
        }
    }

    #[test]
    fn mac_wrong_key_mismatch() {
        let s = ToySuite;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = SymKey::random(&mut rng, KeyKind::Master);
        let tag = s.mac(&k, b"hello");
        assert!(s.mac_verify(&k, b"hello", &tag));
        for _ in 0..100 {
            let wrong = SymKey::random(&mut rng, KeyKind::Master);
            assert_ne!(s.mac(&wrong, b"hello"), tag);
        }
    }

    #[test]
    fn wrong_key_decrypt_is_detected() {
        let s = ToySuite;
        let ct = s.sym_encrypt(&key(1, KeyKind::Node), b"0xB42DA56E");
        assert_eq!(s.sym_decrypt(&key(2, KeyKind::Node), &ct), Err(CryptoError::IntegrityFailure));
        assert_eq!(s.sym_decrypt(&key(1, KeyKind::Node), &ct).unwrap(), b"0xB42DA56E");
        assert!(matches!(s.sym_decrypt(&key(1, KeyKind::Node), &ct[..5]), Err(CryptoError::Truncated(5))));
    }

    #[test]
    fn generator_is_primitive_root() {
        let factors = [2u64, 3, 5, 7, 11, 13, 31, 41, 61, 151, 331, 1321];
        let product: u128 = [2u128, 9, 25, 7, 11, 13, 31, 41, 61, 151, 331, 1321].iter().product();
        assert_eq!(product, GROUP_ORDER as u128);
        for q in factors {
            assert_ne!(pow_mod(GROUP_G, GROUP_ORDER / q, GROUP_P), 1, "factor {q}");
        }
    }

    #[test]
    fn signatures() {
        let s = ToySuite;
        let kp = s.gen_keypair(b"actor-1");
        let other = s.gen_keypair(b"actor-2");
        let sig = s.sign(&kp.secret, b"cert body");
        assert!(s.verify(&kp.public, b"cert body", &sig));
        assert!(!s.verify(&other.public, b"cert body", &sig));
        assert!(!s.verify(&kp.public, b"cert bodY", &sig));
    }

    #[test]
    fn single_bit_flips_break_signatures() {
        let s = ToySuite;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let kp = s.gen_keypair(b"ca");
        let msg = b"A || PK_A || T_sign || T_expire".to_vec();
        let sig = s.sign(&kp.secret, &msg);
        for _ in 0..100 {
            let mut m = msg.clone();
            let bit = (rng.next_u32() as usize) % (m.len() * 8);
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!s.verify(&kp.public, &m, &sig));
        }
        for bit in 0..sig.0.len() * 8 {
            let mut bad = sig.clone();
            bad.0[bit / 8] ^= 1 << (bit % 8);
            assert!(!s.verify(&kp.public, &msg, &bad), "signature bit {bit}");
        }
    }

    #[test]
    fn public_key_encryption_round_trip() {
        let s = ToySuite;
        let kp = s.gen_keypair(b"sink");
        let eve = s.gen_keypair(b"eve");
        let ct = s.pk_encrypt(&kp.public, b"session nonce", b"eph");
        assert_eq!(s.pk_decrypt(&kp.secret, &ct).unwrap(), b"session nonce");
        assert!(s.pk_decrypt(&eve.secret, &ct).is_err());
    }

    #[test]
    fn unknown_suite_rejected() {
        assert!(suite_by_name("toy").is_ok());
        assert_eq!(suite_by_name("aes").err(), Some(CryptoError::UnknownSuite("aes".into())));
    }

    #[test]
    fn fingerprint_renders_first_four_octets() {
        let mut b = [0u8; KEY_LEN];
        b[..4].copy_from_slice(&[0xcd, 0x4f, 0x12, 0xa3]);
        assert_eq!(SymKey::new(b, KeyKind::Node).fingerprint(), "0xcd4f12a3");
    }
}
