//! The wearable client state machine.

use crate::crypto::{IdBits, Ops, Timestamp};
use crate::metrics::{Phase, PhaseCounters};
use crate::rng::DetRng;
use crate::wire::{AuthConfirm, AuthRequest, PairRequest, PairResponse, M6_MASKED_BYTES};

use super::{KeyProvenance, ProtocolError, SessionKey};

/// Client lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClientPhase {
    /// Provisioned offline; no gateway identity yet.
    Provisioned,
    /// Pairing completed; gateway identity known.
    Paired,
    /// M3 sent, waiting for M6.
    AuthPending,
    /// Session key established with the gateway.
    SessionEstablished,
}

#[derive(Debug, Clone, Copy)]
struct PendingPairing {
    nonce: IdBits,
    sent_at: Timestamp,
}

#[derive(Debug, Clone, Copy)]
struct PendingAuth {
    nonce: IdBits,
    sent_at: Timestamp,
}

/// A wearable client: holds `(identity, secret, pseudonym)` plus the
/// gateway identity learned during pairing.
#[derive(Debug, Clone)]
pub struct Client {
    id: IdBits,
    secret: IdBits,
    pseudo: IdBits,
    pseudo_prev: Option<IdBits>,
    gateway_id: Option<IdBits>,
    phase: ClientPhase,
    delta_t: u32,
    pending_pairing: Option<PendingPairing>,
    pending_auth: Option<PendingAuth>,
    session_key: Option<SessionKey>,
    pub counters: PhaseCounters,
}

impl Client {
    pub fn new(id: IdBits, secret: IdBits, pseudo: IdBits, delta_t: u32) -> Self {
        debug_assert_ne!(id, pseudo, "pseudonym must differ from the identity");
        Client {
            id,
            secret,
            pseudo,
            pseudo_prev: None,
            gateway_id: None,
            phase: ClientPhase::Provisioned,
            delta_t,
            pending_pairing: None,
            pending_auth: None,
            session_key: None,
            counters: PhaseCounters::default(),
        }
    }

    pub fn id(&self) -> IdBits {
        self.id
    }

    pub fn pseudo(&self) -> IdBits {
        self.pseudo
    }

    pub fn previous_pseudo(&self) -> Option<IdBits> {
        self.pseudo_prev
    }

    pub fn gateway_id(&self) -> Option<IdBits> {
        self.gateway_id
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.session_key.as_ref()
    }

    /// Builds the masked pairing request M1 and records the pending
    /// exchange. Allowed from any phase; re-pairing refreshes state.
    pub fn start_pairing(&mut self, now: Timestamp, rng: &mut DetRng) -> Vec<u8> {
        let nonce = rng.next_id();
        let mut ops = Ops::new(self.counters.phase_mut(Phase::Pairing));
        // proof = h(pseudonym || nonce || secret)
        let proof = ops.digest(&[&self.pseudo.0, &nonce.0, &self.secret.0]);
        let mut frame = PairRequest {
            client_id: self.id,
            nonce,
            client_ts: now,
            proof,
        }
        .encode();
        ops.mask(&mut frame, &self.pseudo.0);
        self.pending_pairing = Some(PendingPairing {
            nonce,
            sent_at: now,
        });
        frame
    }

    /// Processes the plaintext pairing response M2: freshness, gateway
    /// identity recovery, tag verification, then pseudonym rotation.
    pub fn finish_pairing(&mut self, bits: &[u8], now: Timestamp) -> Result<(), ProtocolError> {
        let pending = self
            .pending_pairing
            .ok_or(ProtocolError::UnexpectedMessage)?;
        let m2 = PairResponse::decode(bits)?;
        if !now.within(m2.server_ts, self.delta_t) {
            return Err(ProtocolError::StaleTimestamp);
        }
        let mut ops = Ops::new(self.counters.phase_mut(Phase::Pairing));
        // Same derivation the server performed:
        //   new_pseudo = trunc(h(id || nonce || sent_at || server_ts))
        let new_pseudo = ops.pseudonym(&[
            &self.id.0,
            &pending.nonce.0,
            &pending.sent_at.to_be_bytes(),
            &m2.server_ts.to_be_bytes(),
        ]);
        let blind = ops.pseudonym(&[&new_pseudo.0, &m2.server_ts.to_be_bytes()]);
        let gateway_id = m2.masked_gateway_id.xor(&blind);
        let tag = ops.pseudonym(&[&gateway_id.0, &new_pseudo.0, &m2.server_ts.to_be_bytes()]);
        if tag != m2.response_tag {
            return Err(ProtocolError::BadAuthenticator);
        }
        self.gateway_id = Some(gateway_id);
        self.rotate_pseudo(new_pseudo);
        self.phase = ClientPhase::Paired;
        self.pending_pairing = None;
        Ok(())
    }

    /// Builds the masked authentication request M3.
    pub fn start_auth(
        &mut self,
        now: Timestamp,
        rng: &mut DetRng,
    ) -> Result<Vec<u8>, ProtocolError> {
        let gateway_id = self.gateway_id.ok_or(ProtocolError::NotPaired)?;
        let nonce = rng.next_id();
        let mut ops = Ops::new(self.counters.phase_mut(Phase::Authentication));
        // client_proof = h(id || secret || nonce)
        let client_proof = ops.digest(&[&self.id.0, &self.secret.0, &nonce.0]);
        let mut frame = AuthRequest {
            client_proof,
            nonce,
            client_ts: now,
            client_pseudo: self.pseudo,
        }
        .encode();
        ops.mask(&mut frame, &gateway_id.0);
        self.pending_auth = Some(PendingAuth {
            nonce,
            sent_at: now,
        });
        // A session key exists only while the phase says so.
        self.session_key = None;
        self.phase = ClientPhase::AuthPending;
        Ok(frame)
    }

    /// Processes the confirm message M6 closing the handshake: verifies
    /// the session proof and the key confirmation, rotates the pseudonym,
    /// and returns the established session key.
    pub fn finish_auth(
        &mut self,
        bits: &[u8],
        now: Timestamp,
    ) -> Result<SessionKey, ProtocolError> {
        let pending = self.pending_auth.ok_or(ProtocolError::UnexpectedMessage)?;
        let gateway_id = self.gateway_id.ok_or(ProtocolError::NotPaired)?;
        // Timestamps travel in clear after the masked digests; the
        // binding digest derived from them is the unmask key.
        let probe = AuthConfirm::decode(bits)?;
        if !now.within(probe.gateway_ts, self.delta_t) {
            return Err(ProtocolError::StaleTimestamp);
        }
        let mut ops = Ops::new(self.counters.phase_mut(Phase::Authentication));
        // binding = h(id || sent_at || server_ts)
        let binding = ops.digest(&[
            &self.id.0,
            &pending.sent_at.to_be_bytes(),
            &probe.server_ts.to_be_bytes(),
        ]);
        let mut clear = bits.to_vec();
        ops.mask(&mut clear[..M6_MASKED_BYTES], &binding.0);
        let m6 = AuthConfirm::decode(&clear).expect("length already checked");

        // session_proof = h(binding || nonce): authenticates the
        // gateway+server path to the client.
        let session_proof = ops.digest(&[&binding.0, &pending.nonce.0]);
        if session_proof != m6.session_proof {
            return Err(ProtocolError::BadAuthenticator);
        }
        let new_pseudo = ops.pseudonym(&[
            &self.id.0,
            &self.secret.0,
            &pending.nonce.0,
            &pending.sent_at.to_be_bytes(),
            &probe.server_ts.to_be_bytes(),
        ]);
        // Session key over the pre-session pseudonym, gateway identity,
        // client nonce, and the server's fresh timestamp.
        let key = ops.digest(&[
            &self.pseudo.0,
            &gateway_id.0,
            &pending.nonce.0,
            &probe.server_ts.to_be_bytes(),
        ]);
        // key_confirm = h(key || binding || gateway_ts): confirms key
        // agreement and binds the final clear timestamp.
        let key_confirm = ops.digest(&[&key.0, &binding.0, &probe.gateway_ts.to_be_bytes()]);
        if key_confirm != m6.key_confirm {
            return Err(ProtocolError::KeyConfirmFailed);
        }

        let session_key = SessionKey {
            key,
            derived_from: KeyProvenance {
                client_pseudo: self.pseudo,
                gateway_id,
                client_nonce: pending.nonce,
                server_ts: probe.server_ts,
            },
        };
        self.rotate_pseudo(new_pseudo);
        self.phase = ClientPhase::SessionEstablished;
        self.session_key = Some(session_key);
        self.pending_auth = None;
        Ok(session_key)
    }

    fn rotate_pseudo(&mut self, new_pseudo: IdBits) {
        debug_assert_ne!(new_pseudo, self.id);
        self.pseudo_prev = Some(self.pseudo);
        self.pseudo = new_pseudo;
    }
}
