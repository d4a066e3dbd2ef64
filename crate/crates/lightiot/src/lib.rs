//! LightIoT: a three-party pairing and authentication protocol for
//! resource-constrained wearables, gateways, and a backend server.
//!
//! The protocol uses only SHA3-256 digests and XOR keystream masking. A
//! wearable client first pairs directly with the server (two messages),
//! then authenticates through its gateway (four messages) to establish a
//! session key shared with the gateway. Principals are referenced on the
//! wire by rotating 128-bit pseudonyms; real identities never travel in
//! clear.
//!
//! The crate ships the protocol state machines ([`entity`]), the
//! bit-exact wire codec ([`wire`]), the server-side credential store
//! ([`registry`]), a deterministic discrete-event network simulator with
//! a scriptable adversary ([`sim`]), and per-entity operation accounting
//! ([`metrics`]).

pub mod crypto;
pub mod entity;
pub mod metrics;
pub mod registry;
pub mod rng;
pub mod sim;
pub mod wire;

pub use crypto::{Digest, IdBits, Timestamp};
pub use entity::{Client, Gateway, ProtocolError, Server, SessionKey};
pub use metrics::{OpCounters, OverheadReport, Phase, PhaseCounters};
pub use registry::{CredentialTuple, Registry, RegistryError, Role};
pub use sim::{RunConfig, RunOutcome, Transcript};
