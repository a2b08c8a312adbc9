//! Framed, sequence-numbered, authenticated-encryption channel.
//!
//! Frame layout (integers big-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DSGX"
//! 4       1     version 0x01
//! 5       1     msg_type
//! 6       8     seq
//! 14      4     payload_len
//! 18      n     payload (ChaCha20-Poly1305 ciphertext ‖ 16-byte tag,
//!               or plaintext for HELLO / RA_REPORT)
//! ```
//!
//! The AEAD nonce is `direction ‖ 0x000000 ‖ seq` (12 bytes) under a
//! per-direction key, and the 18 header bytes are the associated data. Each
//! direction counts its own sequence numbers; the receiver accepts exactly
//! the next one.

use std::io::{Read, Write};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use thiserror::Error;

use crate::attestation::{Direction, SessionKeys};

pub const MAGIC: [u8; 4] = *b"DSGX";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 18;
pub const TAG_LEN: usize = 16;
/// Largest payload accepted from a peer: a full default arena plus framing.
pub const MAX_PAYLOAD: usize = (128 << 20) + 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    RaReport = 0x02,
    AddrMap = 0x10,
    LoadFn = 0x11,
    LoadAck = 0x12,
    ExecFn = 0x13,
    ExecResult = 0x14,
    UnloadFn = 0x15,
    ClearFns = 0x16,
    ListFns = 0x17,
    Error = 0x7f,
}

impl MsgType {
    pub const ALL: [MsgType; 11] = [
        MsgType::Hello,
        MsgType::RaReport,
        MsgType::AddrMap,
        MsgType::LoadFn,
        MsgType::LoadAck,
        MsgType::ExecFn,
        MsgType::ExecResult,
        MsgType::UnloadFn,
        MsgType::ClearFns,
        MsgType::ListFns,
        MsgType::Error,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    /// Types exchanged before keys exist.
    pub fn is_plaintext(self) -> bool {
        matches!(self, MsgType::Hello | MsgType::RaReport)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn plain(msg_type: MsgType, seq: u64, payload: Vec<u8>) -> Self {
        Self { msg_type, seq, payload }
    }
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("frame failed authentication")]
    AuthFailure,
    #[error("expected sequence number {expected}, got {got}")]
    ReplayOrReorder { expected: u64, got: u64 },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("sequence numbers exhausted")]
    SequenceExhausted,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

fn header(msg_type: MsgType, seq: u64, payload_len: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4] = VERSION;
    h[5] = msg_type as u8;
    h[6..14].copy_from_slice(&seq.to_be_bytes());
    h[14..18].copy_from_slice(&(payload_len as u32).to_be_bytes());
    h
}

/// Parses the fixed header, returning (type, seq, payload_len).
fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, u64, usize), ChannelError> {
    if h[..4] != MAGIC {
        return Err(ChannelError::MalformedFrame("bad magic".into()));
    }
    if h[4] != VERSION {
        return Err(ChannelError::MalformedFrame(format!(
            "unsupported version {:#04x}",
            h[4]
        )));
    }
    let msg_type = MsgType::from_u8(h[5]).ok_or(ChannelError::UnknownType(h[5]))?;
    let seq = u64::from_be_bytes(h[6..14].try_into().unwrap());
    let len = u32::from_be_bytes(h[14..18].try_into().unwrap()) as usize;
    Ok((msg_type, seq, len))
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&header(frame.msg_type, frame.seq, frame.payload.len()));
    out.extend_from_slice(&frame.payload);
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, ChannelError> {
    let h: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| ChannelError::MalformedFrame(format!("{} bytes is shorter than a header", bytes.len())))?;
    let (msg_type, seq, len) = parse_header(h)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(ChannelError::MalformedFrame(format!(
            "payload_len says {len}, frame carries {}",
            payload.len()
        )));
    }
    Ok(Frame {
        msg_type,
        seq,
        payload: payload.to_vec(),
    })
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, ChannelError> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    let (msg_type, seq, len) = parse_header(&h)?;
    if len > MAX_PAYLOAD {
        return Err(ChannelError::MalformedFrame(format!(
            "payload of {len} bytes exceeds limit"
        )));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Frame { msg_type, seq, payload })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), ChannelError> {
    w.write_all(&encode_frame(frame))?;
    w.flush()?;
    Ok(())
}

fn nonce(direction: Direction, seq: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[0] = direction.label();
    n[4..].copy_from_slice(&seq.to_be_bytes());
    n.into()
}

pub fn seal(keys: &SessionKeys, seq: u64, msg_type: MsgType, plaintext: &[u8]) -> Result<Frame, ChannelError> {
    if seq == u64::MAX {
        return Err(ChannelError::SequenceExhausted);
    }
    let aad = header(msg_type, seq, plaintext.len() + TAG_LEN);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&keys.send_key));
    let payload = cipher
        .encrypt(
            &nonce(keys.send_direction(), seq),
            Payload {
                msg: plaintext,
                aad: &aad,
            },
        )
        .map_err(|_| ChannelError::MalformedFrame("plaintext too large".into()))?;
    Ok(Frame { msg_type, seq, payload })
}

pub fn open(keys: &SessionKeys, expected_seq: u64, frame: &Frame) -> Result<(MsgType, Vec<u8>), ChannelError> {
    if frame.seq != expected_seq {
        return Err(ChannelError::ReplayOrReorder {
            expected: expected_seq,
            got: frame.seq,
        });
    }
    if frame.payload.len() < TAG_LEN {
        return Err(ChannelError::AuthFailure);
    }
    let aad = header(frame.msg_type, frame.seq, frame.payload.len());
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&keys.recv_key));
    let plaintext = cipher
        .decrypt(
            &nonce(keys.recv_direction(), frame.seq),
            Payload {
                msg: &frame.payload,
                aad: &aad,
            },
        )
        .map_err(|_| ChannelError::AuthFailure)?;
    Ok((frame.msg_type, plaintext))
}

/// One endpoint of an established channel, tracking both sequence counters.
#[derive(Debug)]
pub struct SecureChannel {
    keys: SessionKeys,
    send_seq: u64,
    recv_seq: u64,
}

impl SecureChannel {
    /// Sequence numbers continue after the plaintext handshake frame each side
    /// already sent (seq 0).
    pub fn after_handshake(keys: SessionKeys) -> Self {
        Self {
            keys,
            send_seq: 1,
            recv_seq: 1,
        }
    }

    pub fn seal_next(&mut self, msg_type: MsgType, plaintext: &[u8]) -> Result<Frame, ChannelError> {
        let frame = seal(&self.keys, self.send_seq, msg_type, plaintext)?;
        self.send_seq += 1;
        Ok(frame)
    }

    pub fn open_next(&mut self, frame: &Frame) -> Result<(MsgType, Vec<u8>), ChannelError> {
        let out = open(&self.keys, self.recv_seq, frame)?;
        self.recv_seq += 1;
        Ok(out)
    }

    pub fn send<W: Write>(&mut self, w: &mut W, msg_type: MsgType, plaintext: &[u8]) -> Result<(), ChannelError> {
        let frame = self.seal_next(msg_type, plaintext)?;
        write_frame(w, &frame)
    }

    pub fn recv<R: Read>(&mut self, r: &mut R) -> Result<(MsgType, Vec<u8>), ChannelError> {
        let frame = read_frame(r)?;
        self.open_next(&frame)
    }

    pub fn send_seq(&self) -> u64 {
        self.send_seq
    }

    pub fn recv_seq(&self) -> u64 {
        self.recv_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{derive_session_keys, Role};
    use proptest::prelude::*;

    fn pair() -> (SessionKeys, SessionKeys) {
        let c = derive_session_keys(&[9u8; 32], b"c", b"e", Role::Client).unwrap();
        let s = derive_session_keys(&[9u8; 32], b"c", b"e", Role::Server).unwrap();
        (c, s)
    }

    #[test]
    fn seal_open_round_trip() {
        let (c, s) = pair();
        let f = seal(&c, 1, MsgType::LoadFn, b"hello").unwrap();
        assert_eq!(f.payload.len(), 5 + TAG_LEN);
        assert_ne!(&f.payload[..5], b"hello");
        assert_eq!(open(&s, 1, &f).unwrap(), (MsgType::LoadFn, b"hello".to_vec()));
        // the sender cannot open its own frames: direction keys differ
        assert!(matches!(open(&c, 1, &f), Err(ChannelError::AuthFailure)));
    }

    #[test]
    fn wrong_sequence() {
        let (c, s) = pair();
        let f = seal(&c, 5, MsgType::ExecFn, b"x").unwrap();
        assert!(matches!(
            open(&s, 6, &f),
            Err(ChannelError::ReplayOrReorder { expected: 6, got: 5 })
        ));
        let mut forged = f.clone();
        forged.seq = 6;
        assert!(matches!(open(&s, 6, &forged), Err(ChannelError::AuthFailure)));
    }

    #[test]
    fn header_is_authenticated() {
        let (c, s) = pair();
        let mut f = seal(&c, 1, MsgType::LoadFn, b"payload").unwrap();
        f.msg_type = MsgType::ExecFn;
        assert!(matches!(open(&s, 1, &f), Err(ChannelError::AuthFailure)));
    }

    #[test]
    fn sequence_exhausted() {
        let (c, _) = pair();
        assert!(matches!(
            seal(&c, u64::MAX, MsgType::ListFns, b""),
            Err(ChannelError::SequenceExhausted)
        ));
    }

    #[test]
    fn decode_errors() {
        let bytes = encode_frame(&Frame::plain(MsgType::Hello, 0, b"abc".to_vec()));
        assert_eq!(bytes.len(), HEADER_LEN + 3);
        assert_eq!(&bytes[..6], b"DSGX\x01\x01");
        assert!(matches!(
            decode_frame(&bytes[..10]),
            Err(ChannelError::MalformedFrame(_))
        ));
        assert!(matches!(
            decode_frame(&bytes[..20]),
            Err(ChannelError::MalformedFrame(_))
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_frame(&bad_magic), Err(ChannelError::MalformedFrame(_))));
        let mut unknown = bytes.clone();
        unknown[5] = 0x55;
        assert!(matches!(decode_frame(&unknown), Err(ChannelError::UnknownType(0x55))));
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(decode_frame(&version), Err(ChannelError::MalformedFrame(_))));
    }

    #[test]
    fn exact_layout() {
        let f = Frame::plain(MsgType::Error, 0x0102030405060708, vec![0xaa; 2]);
        assert_eq!(
            encode_frame(&f),
            [b'D', b'S', b'G', b'X', 1, 0x7f, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 2, 0xaa, 0xaa]
        );
    }

    #[test]
    fn stream_read_write() {
        let (c, s) = pair();
        let mut tx = SecureChannel::after_handshake(c);
        let mut rx = SecureChannel::after_handshake(s);
        let mut buf = Vec::new();
        tx.send(&mut buf, MsgType::ListFns, b"").unwrap();
        tx.send(&mut buf, MsgType::ExecFn, b"two").unwrap();
        let mut cur = std::io::Cursor::new(buf);
        assert_eq!(rx.recv(&mut cur).unwrap(), (MsgType::ListFns, vec![]));
        assert_eq!(rx.recv(&mut cur).unwrap(), (MsgType::ExecFn, b"two".to_vec()));
        assert!(matches!(rx.recv(&mut cur), Err(ChannelError::Io(_))));
    }

    fn any_type() -> impl Strategy<Value = MsgType> {
        proptest::sample::select(MsgType::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn frame_codec_bijective(t in any_type(), seq in any::<u64>(),
                                 payload in proptest::collection::vec(any::<u8>(), 0..256)) {
            let f = Frame { msg_type: t, seq, payload };
            prop_assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
        }
    }
}
