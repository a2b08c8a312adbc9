//! Simulated remote attestation.
//!
//! The enclave proves its identity with a report signed by a long-term P-256
//! ECDSA key that clients pin out of band. The report binds the enclave's
//! measurement, a fresh ephemeral P-256 ECDH public key and the client's
//! nonce. Both sides then run ECDH and expand the shared secret with
//! HKDF-SHA256 into one key per direction.
//!
//! ```text
//! client                                   server
//!   HELLO { nonce[16], client_kx_pub }  ->
//!                                       <-  RA_REPORT { measurement, enclave_kx_pub, nonce, sig }
//!   verify sig (pinned key), nonce, measurement
//!   keys = HKDF(ECDH(client, enclave))      keys = HKDF(ECDH(enclave, client))
//! ```

use std::fmt;

use hkdf::Hkdf;
use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use p256::elliptic_curve::sec1::ToEncodedPoint;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{Reader, Writer};

pub const PROTOCOL_VERSION: u8 = 1;
pub const NONCE_LEN: usize = 16;
pub const KEY_LEN: usize = 32;
/// Uncompressed SEC1 P-256 point.
pub const KX_PUBLIC_LEN: usize = 65;
pub const SIGNATURE_LEN: usize = 64;

const C2S_LABEL: &[u8] = b"dynsgx c2s";
const S2C_LABEL: &[u8] = b"dynsgx s2c";
const SALT_LABEL: &[u8] = b"dynsgx-session-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttestationError {
    #[error("invalid key-agreement public key")]
    InvalidPublicKey,
    #[error("nonce must be {NONCE_LEN} bytes, got {0}")]
    InvalidNonce(usize),
    #[error("report signature does not verify under the pinned key")]
    BadSignature,
    #[error("report does not echo our nonce (replayed report?)")]
    NonceMismatch,
    #[error("enclave measurement {got} differs from expected {expected}")]
    MeasurementMismatch { expected: String, got: String },
    #[error("degenerate shared secret")]
    DegenerateSecret,
    #[error("malformed attestation message: {0}")]
    Malformed(String),
    #[error("invalid key material: {0}")]
    InvalidKey(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Measurement(pub [u8; 32]);

impl Measurement {
    /// SHA-256 over `len(id) ‖ id ‖ version ‖ capacity`, integers big-endian.
    pub fn compute(core_image_id: &[u8], arena_capacity: usize) -> Self {
        let mut h = Sha256::new();
        h.update((core_image_id.len() as u32).to_be_bytes());
        h.update(core_image_id);
        h.update([PROTOCOL_VERSION]);
        h.update((arena_capacity as u64).to_be_bytes());
        Self(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, AttestationError> {
        let bytes = hex::decode(s.trim()).map_err(|e| AttestationError::InvalidKey(format!("measurement: {e}")))?;
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| AttestationError::InvalidKey("measurement must be 32 bytes".into()))
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({})", self.to_hex())
    }
}

/// The enclave's long-term report signing key.
#[derive(Clone)]
pub struct SigningIdentity {
    key: SigningKey,
}

impl SigningIdentity {
    pub fn generate() -> Self {
        Self {
            key: SigningKey::random(&mut OsRng),
        }
    }

    pub fn from_bytes(secret: &[u8]) -> Result<Self, AttestationError> {
        SigningKey::from_slice(secret)
            .map(|key| Self { key })
            .map_err(|_| AttestationError::InvalidKey("signing key must be a 32-byte P-256 scalar".into()))
    }

    pub fn from_hex(s: &str) -> Result<Self, AttestationError> {
        let bytes = hex::decode(s.trim()).map_err(|e| AttestationError::InvalidKey(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.key.to_bytes())
    }

    pub fn verify_key(&self) -> VerifyKey {
        VerifyKey(*self.key.verifying_key())
    }

    fn sign(&self, msg: &[u8]) -> [u8; SIGNATURE_LEN] {
        let sig: Signature = self.key.sign(msg);
        sig.to_bytes().into()
    }
}

impl fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningIdentity")
            .field("verify_key", &self.verify_key().to_hex())
            .finish_non_exhaustive()
    }
}

/// The pinned public half of [`SigningIdentity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyKey(VerifyingKey);

impl VerifyKey {
    pub fn from_sec1(bytes: &[u8]) -> Result<Self, AttestationError> {
        VerifyingKey::from_sec1_bytes(bytes)
            .map(Self)
            .map_err(|_| AttestationError::InvalidKey("not a SEC1-encoded P-256 point".into()))
    }

    pub fn from_hex(s: &str) -> Result<Self, AttestationError> {
        let bytes = hex::decode(s.trim()).map_err(|e| AttestationError::InvalidKey(e.to_string()))?;
        Self::from_sec1(&bytes)
    }

    /// Compressed SEC1 encoding, hex.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_encoded_point(true).as_bytes())
    }

    fn verify(&self, msg: &[u8], sig: &[u8]) -> bool {
        Signature::from_slice(sig).is_ok_and(|s| self.0.verify(msg, &s).is_ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub nonce: Vec<u8>,
    pub kx_public: Vec<u8>,
}

impl ClientHello {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.nonce).bytes(&self.kx_public);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AttestationError> {
        let mut r = Reader::new(bytes);
        let hello = (|| {
            let nonce = r.bytes()?.to_vec();
            let kx_public = r.bytes()?.to_vec();
            r.end()?;
            Ok(Self { nonce, kx_public })
        })();
        hello.map_err(|e: crate::wire::WireError| AttestationError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub measurement: Measurement,
    pub enclave_kx_public: Vec<u8>,
    pub client_nonce: [u8; NONCE_LEN],
    pub signature: [u8; SIGNATURE_LEN],
}

impl AttestationReport {
    fn signed_message(measurement: &Measurement, kx_public: &[u8], nonce: &[u8]) -> Vec<u8> {
        [&measurement.0[..], kx_public, nonce].concat()
    }

    /// Length-prefixed fields in order: measurement, enclave_kx_public,
    /// client_nonce, signature.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.measurement.0)
            .bytes(&self.enclave_kx_public)
            .bytes(&self.client_nonce)
            .bytes(&self.signature);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AttestationError> {
        let malformed = |e: crate::wire::WireError| AttestationError::Malformed(e.to_string());
        let mut r = Reader::new(bytes);
        let measurement = r.fixed::<32>().map_err(malformed)?;
        let enclave_kx_public = r.bytes().map_err(malformed)?.to_vec();
        let client_nonce = r.fixed::<NONCE_LEN>().map_err(malformed)?;
        let signature = r.fixed::<SIGNATURE_LEN>().map_err(malformed)?;
        r.end().map_err(malformed)?;
        Ok(Self {
            measurement: Measurement(measurement),
            enclave_kx_public,
            client_nonce,
            signature,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

/// Direction of a frame on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn label(self) -> u8 {
        match self {
            Direction::ClientToServer => 0x01,
            Direction::ServerToClient => 0x02,
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub send_key: [u8; KEY_LEN],
    pub recv_key: [u8; KEY_LEN],
    pub role: Role,
}

impl SessionKeys {
    pub fn send_direction(&self) -> Direction {
        match self.role {
            Role::Client => Direction::ClientToServer,
            Role::Server => Direction::ServerToClient,
        }
    }

    pub fn recv_direction(&self) -> Direction {
        match self.role {
            Role::Client => Direction::ServerToClient,
            Role::Server => Direction::ClientToServer,
        }
    }
}

impl fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKeys")
            .field("role", &self.role)
            .finish_non_exhaustive()
    }
}

/// HKDF-SHA256 over the ECDH secret. The salt binds both public keys; the
/// info strings separate the two directions.
pub fn derive_session_keys(
    shared_secret: &[u8],
    client_kx_public: &[u8],
    enclave_kx_public: &[u8],
    role: Role,
) -> Result<SessionKeys, AttestationError> {
    if shared_secret.is_empty() || shared_secret.iter().all(|&b| b == 0) {
        return Err(AttestationError::DegenerateSecret);
    }
    let mut salt = Sha256::new();
    salt.update(SALT_LABEL);
    salt.update((client_kx_public.len() as u32).to_be_bytes());
    salt.update(client_kx_public);
    salt.update((enclave_kx_public.len() as u32).to_be_bytes());
    salt.update(enclave_kx_public);
    let salt = salt.finalize();

    let hk = Hkdf::<Sha256>::new(Some(&salt), shared_secret);
    let mut c2s = [0u8; KEY_LEN];
    let mut s2c = [0u8; KEY_LEN];
    hk.expand(C2S_LABEL, &mut c2s).expect("32 bytes is a valid HKDF length");
    hk.expand(S2C_LABEL, &mut s2c).expect("32 bytes is a valid HKDF length");
    Ok(match role {
        Role::Client => SessionKeys {
            send_key: c2s,
            recv_key: s2c,
            role,
        },
        Role::Server => SessionKeys {
            send_key: s2c,
            recv_key: c2s,
            role,
        },
    })
}

fn parse_kx_public(bytes: &[u8]) -> Result<p256::PublicKey, AttestationError> {
    p256::PublicKey::from_sec1_bytes(bytes).map_err(|_| AttestationError::InvalidPublicKey)
}

fn encode_kx_public(pk: &p256::PublicKey) -> Vec<u8> {
    pk.to_encoded_point(false).as_bytes().to_vec()
}

/// Server-side attestation state: the signing identity and the measurement it
/// vouches for.
#[derive(Debug, Clone)]
pub struct Attester {
    identity: SigningIdentity,
    measurement: Measurement,
}

impl Attester {
    pub fn new(identity: SigningIdentity, measurement: Measurement) -> Self {
        Self { identity, measurement }
    }

    pub fn verify_key(&self) -> VerifyKey {
        self.identity.verify_key()
    }

    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }
}

/// Answers a client hello: fresh ephemeral key pair, signed report, and the
/// server's session keys.
pub fn enclave_ra_init(
    attester: &Attester,
    client_nonce: &[u8],
    client_kx_public: &[u8],
) -> Result<(AttestationReport, SessionKeys), AttestationError> {
    let nonce: [u8; NONCE_LEN] = client_nonce
        .try_into()
        .map_err(|_| AttestationError::InvalidNonce(client_nonce.len()))?;
    let client_pk = parse_kx_public(client_kx_public)?;

    let secret = p256::ecdh::EphemeralSecret::random(&mut OsRng);
    let enclave_kx_public = encode_kx_public(&secret.public_key());
    let shared = secret.diffie_hellman(&client_pk);
    let keys = derive_session_keys(
        shared.raw_secret_bytes(),
        client_kx_public,
        &enclave_kx_public,
        Role::Server,
    )?;

    let msg = AttestationReport::signed_message(&attester.measurement, &enclave_kx_public, &nonce);
    let report = AttestationReport {
        measurement: attester.measurement,
        signature: attester.identity.sign(&msg),
        enclave_kx_public,
        client_nonce: nonce,
    };
    Ok((report, keys))
}

/// Checks signature, then nonce, then measurement; the first failure wins.
pub fn client_verify_report(
    report: &AttestationReport,
    pinned: &VerifyKey,
    expected_measurement: &Measurement,
    sent_nonce: &[u8],
) -> Result<(), AttestationError> {
    let msg = AttestationReport::signed_message(&report.measurement, &report.enclave_kx_public, &report.client_nonce);
    if !pinned.verify(&msg, &report.signature) {
        return Err(AttestationError::BadSignature);
    }
    if report.client_nonce[..] != *sent_nonce {
        return Err(AttestationError::NonceMismatch);
    }
    if report.measurement != *expected_measurement {
        return Err(AttestationError::MeasurementMismatch {
            expected: expected_measurement.to_hex(),
            got: report.measurement.to_hex(),
        });
    }
    Ok(())
}

/// Client side of one attestation run.
pub struct ClientHandshake {
    nonce: [u8; NONCE_LEN],
    secret: p256::ecdh::EphemeralSecret,
    kx_public: Vec<u8>,
}

impl ClientHandshake {
    pub fn new() -> Self {
        let mut nonce = [0u8; NONCE_LEN];
        OsRng.fill_bytes(&mut nonce);
        let secret = p256::ecdh::EphemeralSecret::random(&mut OsRng);
        let kx_public = encode_kx_public(&secret.public_key());
        Self {
            nonce,
            secret,
            kx_public,
        }
    }

    pub fn nonce(&self) -> &[u8; NONCE_LEN] {
        &self.nonce
    }

    pub fn hello(&self) -> ClientHello {
        ClientHello {
            nonce: self.nonce.to_vec(),
            kx_public: self.kx_public.clone(),
        }
    }

    pub fn finish(
        self,
        report: &AttestationReport,
        pinned: &VerifyKey,
        expected_measurement: &Measurement,
    ) -> Result<SessionKeys, AttestationError> {
        client_verify_report(report, pinned, expected_measurement, &self.nonce)?;
        let enclave_pk = parse_kx_public(&report.enclave_kx_public)?;
        let shared = self.secret.diffie_hellman(&enclave_pk);
        derive_session_keys(
            shared.raw_secret_bytes(),
            &self.kx_public,
            &report.enclave_kx_public,
            Role::Client,
        )
    }
}

impl Default for ClientHandshake {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attester() -> Attester {
        Attester::new(SigningIdentity::generate(), Measurement::compute(b"core", 128 << 20))
    }

    #[test]
    fn honest_round_trip() {
        let a = attester();
        let hs = ClientHandshake::new();
        let hello = hs.hello();
        let (report, server) = enclave_ra_init(&a, &hello.nonce, &hello.kx_public).unwrap();
        let client = hs.finish(&report, &a.verify_key(), a.measurement()).unwrap();
        assert_eq!(client.send_key, server.recv_key);
        assert_eq!(client.recv_key, server.send_key);
        assert_ne!(client.send_key, client.recv_key);
    }

    #[test]
    fn malformed_inputs() {
        let a = attester();
        let hs = ClientHandshake::new();
        let mut pk = hs.hello().kx_public;
        pk[10] ^= 1; // off the curve
        assert_eq!(
            enclave_ra_init(&a, hs.nonce(), &pk).unwrap_err(),
            AttestationError::InvalidPublicKey
        );
        assert_eq!(
            enclave_ra_init(&a, hs.nonce(), &[4u8; 12]).unwrap_err(),
            AttestationError::InvalidPublicKey
        );
        assert_eq!(
            enclave_ra_init(&a, &[0u8; 15], &hs.hello().kx_public).unwrap_err(),
            AttestationError::InvalidNonce(15)
        );
    }

    #[test]
    fn sessions_use_fresh_enclave_keys() {
        let a = attester();
        let hs = ClientHandshake::new();
        let hello = hs.hello();
        let keys: std::collections::HashSet<Vec<u8>> = (0..20)
            .map(|_| {
                enclave_ra_init(&a, &hello.nonce, &hello.kx_public)
                    .unwrap()
                    .0
                    .enclave_kx_public
            })
            .collect();
        assert_eq!(keys.len(), 20);
    }

    #[test]
    fn verification_failures_are_distinct() {
        let a = attester();
        let hs = ClientHandshake::new();
        let hello = hs.hello();
        let (report, _) = enclave_ra_init(&a, &hello.nonce, &hello.kx_public).unwrap();
        let vk = a.verify_key();
        client_verify_report(&report, &vk, a.measurement(), &hello.nonce).unwrap();

        let mut bad_sig = report.clone();
        bad_sig.signature[5] ^= 0x01;
        assert_eq!(
            client_verify_report(&bad_sig, &vk, a.measurement(), &hello.nonce),
            Err(AttestationError::BadSignature)
        );
        assert_eq!(
            client_verify_report(&report, &vk, a.measurement(), &[0u8; 16]),
            Err(AttestationError::NonceMismatch)
        );
        assert!(matches!(
            client_verify_report(&report, &vk, &Measurement::compute(b"other", 128 << 20), &hello.nonce),
            Err(AttestationError::MeasurementMismatch { .. })
        ));
        let other = SigningIdentity::generate().verify_key();
        assert_eq!(
            client_verify_report(&report, &other, a.measurement(), &hello.nonce),
            Err(AttestationError::BadSignature)
        );
    }

    #[test]
    fn measurement_depends_on_every_input() {
        let base = Measurement::compute(b"core", 4096);
        assert_eq!(base, Measurement::compute(b"core", 4096));
        assert_ne!(base, Measurement::compute(b"core2", 4096));
        assert_ne!(base, Measurement::compute(b"core", 8192));
        assert_eq!(Measurement::from_hex(&base.to_hex()).unwrap(), base);
    }

    #[test]
    fn report_and_hello_encoding() {
        let a = attester();
        let hs = ClientHandshake::new();
        let hello = hs.hello();
        assert_eq!(ClientHello::decode(&hello.encode()).unwrap(), hello);
        let (report, _) = enclave_ra_init(&a, &hello.nonce, &hello.kx_public).unwrap();
        let enc = report.encode();
        assert_eq!(AttestationReport::decode(&enc).unwrap(), report);
        assert!(AttestationReport::decode(&enc[..enc.len() - 1]).is_err());
        let mut extra = enc.clone();
        extra.push(0);
        assert!(AttestationReport::decode(&extra).is_err());
    }

    #[test]
    fn degenerate_secret() {
        assert_eq!(
            derive_session_keys(&[0u8; 32], b"c", b"e", Role::Client),
            Err(AttestationError::DegenerateSecret)
        );
        assert_eq!(
            derive_session_keys(&[], b"c", b"e", Role::Client),
            Err(AttestationError::DegenerateSecret)
        );
    }

    #[test]
    fn kdf_mirrors_and_separates() {
        let c = derive_session_keys(&[7u8; 32], b"client", b"enclave", Role::Client).unwrap();
        let s = derive_session_keys(&[7u8; 32], b"client", b"enclave", Role::Server).unwrap();
        assert_eq!((c.send_key, c.recv_key), (s.recv_key, s.send_key));
        let other = derive_session_keys(&[7u8; 32], b"client", b"enclave2", Role::Client).unwrap();
        assert_ne!(other.send_key, c.send_key);
        assert_ne!(other.recv_key, c.recv_key);
    }

    #[test]
    fn identity_hex_roundtrip() {
        let id = SigningIdentity::generate();
        let back = SigningIdentity::from_hex(&id.to_hex()).unwrap();
        assert_eq!(back.verify_key(), id.verify_key());
        assert_eq!(VerifyKey::from_hex(&id.verify_key().to_hex()).unwrap(), id.verify_key());
        assert!(SigningIdentity::from_hex("00").is_err());
        assert!(VerifyKey::from_hex("0203").is_err());
    }
}
