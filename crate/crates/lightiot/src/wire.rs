//! Bit-exact wire codec for the six protocol frames.
//!
//! Every frame is a fixed-width big-endian concatenation of its fields in
//! declaration order. The six sizes are part of the wire contract:
//! M1 544, M2 288, M3 544, M4 672, M5 800, M6 576 bits (3424 bits per
//! full handshake, 1088 of them client-originated). All fields are
//! byte-aligned, so frames are carried as byte buffers; transcripts log
//! them as lowercase hex.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, IdBits, Timestamp};

/// Frame discriminator. The numbering is the protocol's message order:
/// M1/M2 form the pairing exchange, M3..M6 the authentication exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

pub const ALL_KINDS: [MessageKind; 6] = [
    MessageKind::M1,
    MessageKind::M2,
    MessageKind::M3,
    MessageKind::M4,
    MessageKind::M5,
    MessageKind::M6,
];

impl MessageKind {
    /// Exact encoded size in bits.
    pub fn bits(&self) -> usize {
        match self {
            MessageKind::M1 => 544,
            MessageKind::M2 => 288,
            MessageKind::M3 => 544,
            MessageKind::M4 => 672,
            MessageKind::M5 => 800,
            MessageKind::M6 => 576,
        }
    }

    pub fn bytes(&self) -> usize {
        self.bits() / 8
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::M1 => "M1",
            MessageKind::M2 => "M2",
            MessageKind::M3 => "M3",
            MessageKind::M4 => "M4",
            MessageKind::M5 => "M5",
            MessageKind::M6 => "M6",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Some(MessageKind::M1),
            "M2" => Some(MessageKind::M2),
            "M3" => Some(MessageKind::M3),
            "M4" => Some(MessageKind::M4),
            "M5" => Some(MessageKind::M5),
            "M6" => Some(MessageKind::M6),
            _ => None,
        }
    }
}

impl std::fmt::Display for MessageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Total bits across one full handshake (M1..M6).
pub const HANDSHAKE_TOTAL_BITS: usize = 3424;
/// Bits originated by the wearable client per full handshake (M1 + M3).
pub const CLIENT_ORIGINATED_BITS: usize = 1088;

// The frame layouts are load-bearing: field-width sums must equal the
// published sizes, or the build fails here.
const _: () = {
    const ID: usize = 128;
    const DIGEST: usize = 256;
    const TS: usize = 32;
    assert!(ID + ID + TS + DIGEST == 544); // M1
    assert!(ID + ID + TS == 288); // M2 (blinded id || tag || ts)
    assert!(DIGEST + ID + TS + ID == 544); // M3
    assert!(ID + ID + DIGEST + ID + TS == 672); // M4
    assert!(TS + DIGEST + DIGEST + DIGEST == 800); // M5
    assert!(DIGEST + DIGEST + TS + TS == 576); // M6
    assert!(544 + 288 + 544 + 672 + 800 + 576 == HANDSHAKE_TOTAL_BITS);
    assert!(544 + 544 == CLIENT_ORIGINATED_BITS);
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    /// Malformed or truncated traffic: the buffer length does not match
    /// the fixed size for the frame kind.
    #[error("{kind} frame must be {expected} bits, got {got}")]
    LengthMismatch {
        kind: MessageKind,
        expected: usize,
        got: usize,
    },
}

/// M1, pairing request, client -> server, masked under the client's
/// current pseudonym: `{client_id, nonce, client_ts, proof}`.
///
/// `proof` is h(pseudonym || nonce || secret) and shows the requester
/// holds the client secret bound to that pseudonym.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRequest {
    pub client_id: IdBits,
    pub nonce: IdBits,
    pub client_ts: Timestamp,
    pub proof: Digest,
}

/// M2, pairing response, server -> client, plaintext:
/// `{masked_gateway_id, response_tag, server_ts}`.
///
/// The first half blinds the assigned gateway identity under
/// h(new_pseudonym || server_ts); the tag authenticates the blinding so
/// the client can verify the recovered gateway identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairResponse {
    pub masked_gateway_id: IdBits,
    pub response_tag: IdBits,
    pub server_ts: Timestamp,
}

/// M3, authentication request, client -> gateway, masked under the
/// gateway identity: `{client_proof, nonce, client_ts, client_pseudo}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthRequest {
    pub client_proof: Digest,
    pub nonce: IdBits,
    pub client_ts: Timestamp,
    pub client_pseudo: IdBits,
}

/// M4, authentication relay, gateway -> server, masked under the
/// gateway's current pseudonym:
/// `{client_nonce, gateway_nonce, proof, client_pseudo, client_ts}`.
///
/// The relay forwards both session nonces and the client timestamp so
/// the server can recompute every authenticator; `proof` is the XOR of
/// the client proof (as received in M3) with the gateway proof
/// h(gateway_id || gateway_secret || gateway_nonce), verifying both
/// principals in a single comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthRelay {
    pub client_nonce: IdBits,
    pub gateway_nonce: IdBits,
    pub proof: Digest,
    pub client_pseudo: IdBits,
    pub client_ts: Timestamp,
}

/// M5, authentication grant, server -> gateway, plaintext:
/// `{server_ts, binding, server_proof, session_proof}`.
///
/// `binding` ties the client identity to both end timestamps;
/// `server_proof` authenticates the server to the gateway via the server
/// key; `session_proof` is relayed onward for the client's check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthGrant {
    pub server_ts: Timestamp,
    pub binding: Digest,
    pub server_proof: Digest,
    pub session_proof: Digest,
}

/// M6, authentication confirm, gateway -> client:
/// `{session_proof, key_confirm, server_ts, gateway_ts}`.
///
/// The two digests travel masked under a keystream derived from the
/// binding digest; the timestamps travel in clear so the client can
/// derive the binding before unmasking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthConfirm {
    pub session_proof: Digest,
    pub key_confirm: Digest,
    pub server_ts: Timestamp,
    pub gateway_ts: Timestamp,
}

/// Byte offset where the masked region of M6 ends and the clear
/// timestamps begin.
pub const M6_MASKED_BYTES: usize = 64;
/// Bit width of M6's masked region (session_proof || key_confirm).
pub const M6_MASKED_BITS: usize = 512;

fn check_len(kind: MessageKind, bits: &[u8]) -> Result<(), WireError> {
    if bits.len() != kind.bytes() {
        return Err(WireError::LengthMismatch {
            kind,
            expected: kind.bits(),
            got: bits.len() * 8,
        });
    }
    Ok(())
}

fn take_id(bits: &[u8], at: &mut usize) -> IdBits {
    let mut v = [0u8; 16];
    v.copy_from_slice(&bits[*at..*at + 16]);
    *at += 16;
    IdBits(v)
}

fn take_digest(bits: &[u8], at: &mut usize) -> Digest {
    let mut v = [0u8; 32];
    v.copy_from_slice(&bits[*at..*at + 32]);
    *at += 32;
    Digest(v)
}

fn take_ts(bits: &[u8], at: &mut usize) -> Timestamp {
    let mut v = [0u8; 4];
    v.copy_from_slice(&bits[*at..*at + 4]);
    *at += 4;
    Timestamp(u32::from_be_bytes(v))
}

impl PairRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MessageKind::M1.bytes());
        out.extend_from_slice(&self.client_id.0);
        out.extend_from_slice(&self.nonce.0);
        out.extend_from_slice(&self.client_ts.to_be_bytes());
        out.extend_from_slice(&self.proof.0);
        out
    }

    pub fn decode(bits: &[u8]) -> Result<Self, WireError> {
        check_len(MessageKind::M1, bits)?;
        let mut at = 0;
        Ok(PairRequest {
            client_id: take_id(bits, &mut at),
            nonce: take_id(bits, &mut at),
            client_ts: take_ts(bits, &mut at),
            proof: take_digest(bits, &mut at),
        })
    }
}

impl PairResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MessageKind::M2.bytes());
        out.extend_from_slice(&self.masked_gateway_id.0);
        out.extend_from_slice(&self.response_tag.0);
        out.extend_from_slice(&self.server_ts.to_be_bytes());
        out
    }

    pub fn decode(bits: &[u8]) -> Result<Self, WireError> {
        check_len(MessageKind::M2, bits)?;
        let mut at = 0;
        Ok(PairResponse {
            masked_gateway_id: take_id(bits, &mut at),
            response_tag: take_id(bits, &mut at),
            server_ts: take_ts(bits, &mut at),
        })
    }
}

impl AuthRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MessageKind::M3.bytes());
        out.extend_from_slice(&self.client_proof.0);
        out.extend_from_slice(&self.nonce.0);
        out.extend_from_slice(&self.client_ts.to_be_bytes());
        out.extend_from_slice(&self.client_pseudo.0);
        out
    }

    pub fn decode(bits: &[u8]) -> Result<Self, WireError> {
        check_len(MessageKind::M3, bits)?;
        let mut at = 0;
        Ok(AuthRequest {
            client_proof: take_digest(bits, &mut at),
            nonce: take_id(bits, &mut at),
            client_ts: take_ts(bits, &mut at),
            client_pseudo: take_id(bits, &mut at),
        })
    }
}

impl AuthRelay {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MessageKind::M4.bytes());
        out.extend_from_slice(&self.client_nonce.0);
        out.extend_from_slice(&self.gateway_nonce.0);
        out.extend_from_slice(&self.proof.0);
        out.extend_from_slice(&self.client_pseudo.0);
        out.extend_from_slice(&self.client_ts.to_be_bytes());
        out
    }

    pub fn decode(bits: &[u8]) -> Result<Self, WireError> {
        check_len(MessageKind::M4, bits)?;
        let mut at = 0;
        Ok(AuthRelay {
            client_nonce: take_id(bits, &mut at),
            gateway_nonce: take_id(bits, &mut at),
            proof: take_digest(bits, &mut at),
            client_pseudo: take_id(bits, &mut at),
            client_ts: take_ts(bits, &mut at),
        })
    }
}

impl AuthGrant {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MessageKind::M5.bytes());
        out.extend_from_slice(&self.server_ts.to_be_bytes());
        out.extend_from_slice(&self.binding.0);
        out.extend_from_slice(&self.server_proof.0);
        out.extend_from_slice(&self.session_proof.0);
        out
    }

    pub fn decode(bits: &[u8]) -> Result<Self, WireError> {
        check_len(MessageKind::M5, bits)?;
        let mut at = 0;
        Ok(AuthGrant {
            server_ts: take_ts(bits, &mut at),
            binding: take_digest(bits, &mut at),
            server_proof: take_digest(bits, &mut at),
            session_proof: take_digest(bits, &mut at),
        })
    }
}

impl AuthConfirm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MessageKind::M6.bytes());
        out.extend_from_slice(&self.session_proof.0);
        out.extend_from_slice(&self.key_confirm.0);
        out.extend_from_slice(&self.server_ts.to_be_bytes());
        out.extend_from_slice(&self.gateway_ts.to_be_bytes());
        out
    }

    pub fn decode(bits: &[u8]) -> Result<Self, WireError> {
        check_len(MessageKind::M6, bits)?;
        let mut at = 0;
        Ok(AuthConfirm {
            session_proof: take_digest(bits, &mut at),
            key_confirm: take_digest(bits, &mut at),
            server_ts: take_ts(bits, &mut at),
            gateway_ts: take_ts(bits, &mut at),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(seed: u8) -> IdBits {
        IdBits([seed; 16])
    }

    fn dg(seed: u8) -> Digest {
        Digest([seed; 32])
    }

    #[test]
    fn sizes_match_the_wire_contract() {
        assert_eq!(MessageKind::M1.bits(), 544);
        assert_eq!(MessageKind::M2.bits(), 288);
        assert_eq!(MessageKind::M3.bits(), 544);
        assert_eq!(MessageKind::M4.bits(), 672);
        assert_eq!(MessageKind::M5.bits(), 800);
        assert_eq!(MessageKind::M6.bits(), 576);
        let total: usize = ALL_KINDS.iter().map(|k| k.bits()).sum();
        assert_eq!(total, HANDSHAKE_TOTAL_BITS);
        assert_eq!(
            MessageKind::M1.bits() + MessageKind::M3.bits(),
            CLIENT_ORIGINATED_BITS
        );
    }

    #[test]
    fn encoded_lengths_are_exact() {
        let m1 = PairRequest {
            client_id: id(1),
            nonce: id(2),
            client_ts: Timestamp(77),
            proof: dg(3),
        };
        assert_eq!(m1.encode().len() * 8, 544);

        let m2 = PairResponse {
            masked_gateway_id: id(0),
            response_tag: id(0),
            server_ts: Timestamp(0),
        };
        let enc = m2.encode();
        assert_eq!(enc.len() * 8, 288);
        assert!(enc.iter().all(|&b| b == 0), "zero fields encode to zeros");
    }

    #[test]
    fn decode_rejects_wrong_lengths() {
        let err = AuthGrant::decode(&[0u8; 99]).unwrap_err();
        assert_eq!(
            err,
            WireError::LengthMismatch {
                kind: MessageKind::M5,
                expected: 800,
                got: 792
            }
        );
        assert!(PairRequest::decode(&[0u8; 69]).is_err());
        assert!(AuthConfirm::decode(&[]).is_err());
    }

    #[test]
    fn m6_gateway_ts_occupies_the_final_word() {
        // Brute-force the field offset: vary gateway_ts alone and confirm
        // only the last 32 bits move.
        let base = AuthConfirm {
            session_proof: dg(0xa5),
            key_confirm: dg(0x5a),
            server_ts: Timestamp(0x01020304),
            gateway_ts: Timestamp(0),
        };
        let reference = base.encode();
        for ts in [1u32, 0xdead_beef, u32::MAX] {
            let enc = AuthConfirm {
                gateway_ts: Timestamp(ts),
                ..base
            }
            .encode();
            assert_eq!(enc[..68], reference[..68]);
            assert_eq!(u32::from_be_bytes(enc[68..72].try_into().unwrap()), ts);
        }
    }

    fn arb_id() -> impl Strategy<Value = IdBits> {
        prop::array::uniform16(any::<u8>()).prop_map(IdBits)
    }

    fn arb_digest() -> impl Strategy<Value = Digest> {
        prop::array::uniform32(any::<u8>()).prop_map(Digest)
    }

    proptest! {
        #[test]
        fn m1_round_trips(a in arb_id(), b in arb_id(), t in any::<u32>(), d in arb_digest()) {
            let f = PairRequest { client_id: a, nonce: b, client_ts: Timestamp(t), proof: d };
            prop_assert_eq!(PairRequest::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn m2_round_trips(a in arb_id(), b in arb_id(), t in any::<u32>()) {
            let f = PairResponse { masked_gateway_id: a, response_tag: b, server_ts: Timestamp(t) };
            prop_assert_eq!(PairResponse::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn m3_round_trips(d in arb_digest(), n in arb_id(), t in any::<u32>(), p in arb_id()) {
            let f = AuthRequest { client_proof: d, nonce: n, client_ts: Timestamp(t), client_pseudo: p };
            prop_assert_eq!(AuthRequest::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn m4_round_trips(a in arb_id(), b in arb_id(), d in arb_digest(), p in arb_id(), t in any::<u32>()) {
            let f = AuthRelay {
                client_nonce: a,
                gateway_nonce: b,
                proof: d,
                client_pseudo: p,
                client_ts: Timestamp(t),
            };
            prop_assert_eq!(AuthRelay::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn m5_round_trips(t in any::<u32>(), a in arb_digest(), b in arb_digest(), c in arb_digest()) {
            let f = AuthGrant { server_ts: Timestamp(t), binding: a, server_proof: b, session_proof: c };
            prop_assert_eq!(AuthGrant::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn m6_round_trips(a in arb_digest(), b in arb_digest(), t1 in any::<u32>(), t2 in any::<u32>()) {
            let f = AuthConfirm {
                session_proof: a,
                key_confirm: b,
                server_ts: Timestamp(t1),
                gateway_ts: Timestamp(t2),
            };
            prop_assert_eq!(AuthConfirm::decode(&f.encode()).unwrap(), f);
        }
    }
}
