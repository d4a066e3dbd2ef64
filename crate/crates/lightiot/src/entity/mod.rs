//! Protocol state machines for the three principals.
//!
//! [`Client`] pairs directly with the [`Server`] (M1/M2), learning its
//! gateway's identity and a fresh pseudonym. Authentication (M3..M6)
//! runs client -> gateway -> server -> gateway -> client and ends with
//! the client and gateway holding the same session key. Every receive
//! path checks timestamp freshness first, then the message's
//! authenticator digests; pseudonyms rotate on every successful exchange.

pub mod client;
pub mod gateway;
pub mod server;

pub use client::{Client, ClientPhase};
pub use gateway::Gateway;
pub use server::Server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, IdBits, Timestamp};
use crate::registry::RegistryError;
use crate::wire::WireError;

/// Rejection reasons surfaced by entity receive paths. The simulator
/// records these as receiver verdicts; none of them abort a run.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    /// Sender timestamp outside the legal delay window (replay or delay).
    #[error("timestamp outside the freshness window")]
    StaleTimestamp,
    /// No registered client authenticates the frame.
    #[error("no registered client matches this frame")]
    UnknownClient,
    /// No registered gateway authenticates the frame.
    #[error("no registered gateway matches this frame")]
    UnknownGateway,
    /// An authenticator digest failed recomputation.
    #[error("authenticator mismatch")]
    BadAuthenticator,
    /// The server proof in M5 failed recomputation at the gateway.
    #[error("server proof mismatch")]
    BadServerAuthenticator,
    /// The key-confirmation digest in M6 failed recomputation.
    #[error("key confirmation failed")]
    KeyConfirmFailed,
    /// Authentication attempted before pairing supplied a gateway id.
    #[error("client holds no gateway identity; pair first")]
    NotPaired,
    /// A response arrived with no matching exchange in progress.
    #[error("no exchange in progress for this message")]
    UnexpectedMessage,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("registry rejected a state update: {0}")]
    Registry(String),
}

impl From<RegistryError> for ProtocolError {
    fn from(e: RegistryError) -> Self {
        ProtocolError::Registry(e.to_string())
    }
}

impl ProtocolError {
    /// Short verdict code used in transcripts.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::StaleTimestamp => "StaleTimestamp",
            ProtocolError::UnknownClient => "UnknownClient",
            ProtocolError::UnknownGateway => "UnknownGateway",
            ProtocolError::BadAuthenticator => "BadAuthenticator",
            ProtocolError::BadServerAuthenticator => "BadServerAuthenticator",
            ProtocolError::KeyConfirmFailed => "KeyConfirmFailed",
            ProtocolError::NotPaired => "NotPaired",
            ProtocolError::UnexpectedMessage => "UnexpectedMessage",
            ProtocolError::Wire(_) => "LengthMismatch",
            ProtocolError::Registry(_) => "RegistryInvariant",
        }
    }
}

/// Inputs that produced a session key, kept for auditability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyProvenance {
    /// The client's pre-session pseudonym (as carried in M3).
    pub client_pseudo: IdBits,
    pub gateway_id: IdBits,
    pub client_nonce: IdBits,
    pub server_ts: Timestamp,
}

/// A derived session key. Client-side and gateway-side keys for the same
/// completed handshake are bitwise equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionKey {
    pub key: Digest,
    pub derived_from: KeyProvenance,
}

pub(crate) fn xor_digests(a: &Digest, b: &Digest) -> Digest {
    let mut out = [0u8; 32];
    for (o, (x, y)) in out.iter_mut().zip(a.0.iter().zip(b.0.iter())) {
        *o = x ^ y;
    }
    Digest(out)
}
