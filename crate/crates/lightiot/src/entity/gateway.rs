//! The gateway state machine.
//!
//! The gateway relays the client's authentication request to the server,
//! contributing its own nonce and proof, then turns the server's grant
//! into the confirm message for the client while deriving the session
//! key itself.

use crate::crypto::{IdBits, Ops, Timestamp};
use crate::metrics::{Phase, PhaseCounters};
use crate::rng::DetRng;
use crate::wire::{
    AuthConfirm, AuthGrant, AuthRelay, AuthRequest, MessageKind, WireError, M6_MASKED_BYTES,
};

use super::{xor_digests, KeyProvenance, ProtocolError, SessionKey};

/// Per-exchange scratch carried between M3 and M5 processing.
#[derive(Debug, Clone, Copy)]
struct RelayStash {
    client_nonce: IdBits,
    client_ts: Timestamp,
    client_pseudo: IdBits,
    gateway_nonce: IdBits,
}

/// A gateway: holds `(identity, secret, pseudonym)` and relays between
/// its clients and the server.
#[derive(Debug, Clone)]
pub struct Gateway {
    id: IdBits,
    secret: IdBits,
    pseudo: IdBits,
    pseudo_prev: Option<IdBits>,
    delta_t: u32,
    stash: Option<RelayStash>,
    session_key: Option<SessionKey>,
    pub counters: PhaseCounters,
}

impl Gateway {
    pub fn new(id: IdBits, secret: IdBits, pseudo: IdBits, delta_t: u32) -> Self {
        debug_assert_ne!(id, pseudo, "pseudonym must differ from the identity");
        Gateway {
            id,
            secret,
            pseudo,
            pseudo_prev: None,
            delta_t,
            stash: None,
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

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.session_key.as_ref()
    }

    /// Peek at the stashed client nonce (test and audit support).
    pub fn stashed_client_nonce(&self) -> Option<IdBits> {
        self.stash.map(|s| s.client_nonce)
    }

    /// Unmasks M3, checks freshness, and builds the masked relay M4.
    ///
    /// The relay forwards the client nonce, the gateway nonce, the
    /// client timestamp, and the XOR of the received client proof with
    /// the gateway's own proof, so the server can verify both principals.
    pub fn handle_auth_request(
        &mut self,
        bits: &[u8],
        now: Timestamp,
        rng: &mut DetRng,
    ) -> Result<Vec<u8>, ProtocolError> {
        if bits.len() != MessageKind::M3.bytes() {
            return Err(WireError::LengthMismatch {
                kind: MessageKind::M3,
                expected: MessageKind::M3.bits(),
                got: bits.len() * 8,
            }
            .into());
        }
        let mut ops = Ops::new(self.counters.phase_mut(Phase::Authentication));
        let mut clear = bits.to_vec();
        ops.mask(&mut clear, &self.id.0);
        let m3 = AuthRequest::decode(&clear)?;
        if !now.within(m3.client_ts, self.delta_t) {
            return Err(ProtocolError::StaleTimestamp);
        }
        let gateway_nonce = rng.next_id();
        // gateway_proof = h(id || secret || gateway_nonce)
        let gateway_proof = ops.digest(&[&self.id.0, &self.secret.0, &gateway_nonce.0]);
        let mut frame = AuthRelay {
            client_nonce: m3.nonce,
            gateway_nonce,
            proof: xor_digests(&m3.client_proof, &gateway_proof),
            client_pseudo: m3.client_pseudo,
            client_ts: m3.client_ts,
        }
        .encode();
        ops.mask(&mut frame, &self.pseudo.0);
        self.stash = Some(RelayStash {
            client_nonce: m3.nonce,
            client_ts: m3.client_ts,
            client_pseudo: m3.client_pseudo,
            gateway_nonce,
        });
        // The key belongs to the completed exchange; a new one is now in
        // flight.
        self.session_key = None;
        Ok(frame)
    }

    /// Verifies the server grant M5, derives the session key, rotates
    /// the pseudonym, and builds the confirm message M6 with its digest
    /// fields masked under the binding keystream.
    pub fn handle_auth_grant(
        &mut self,
        bits: &[u8],
        now: Timestamp,
    ) -> Result<(Vec<u8>, SessionKey), ProtocolError> {
        let stash = self.stash.ok_or(ProtocolError::UnexpectedMessage)?;
        let m5 = AuthGrant::decode(bits)?;
        if !m5.server_ts.within(now, self.delta_t) {
            return Err(ProtocolError::StaleTimestamp);
        }
        let mut ops = Ops::new(self.counters.phase_mut(Phase::Authentication));
        // Recompute the server key with the pre-rotation pseudonym; a
        // match on server_proof authenticates the server.
        let server_key = ops.digest(&[
            &self.id.0,
            &self.secret.0,
            &stash.gateway_nonce.0,
            &self.pseudo.0,
            &m5.server_ts.to_be_bytes(),
        ]);
        let server_proof = ops.digest(&[&server_key.0, &m5.binding.0, &self.pseudo.0]);
        if server_proof != m5.server_proof {
            return Err(ProtocolError::BadServerAuthenticator);
        }
        let new_pseudo = ops.pseudonym(&[
            &self.id.0,
            &self.secret.0,
            &stash.gateway_nonce.0,
            &stash.client_ts.to_be_bytes(),
            &m5.server_ts.to_be_bytes(),
        ]);
        // Session key over the client's pre-session pseudonym, this
        // gateway's identity, the client nonce, and the server timestamp.
        let key = ops.digest(&[
            &stash.client_pseudo.0,
            &self.id.0,
            &stash.client_nonce.0,
            &m5.server_ts.to_be_bytes(),
        ]);
        let key_confirm = ops.digest(&[&key.0, &m5.binding.0, &now.to_be_bytes()]);

        let mut frame = AuthConfirm {
            session_proof: m5.session_proof,
            key_confirm,
            server_ts: m5.server_ts,
            gateway_ts: now,
        }
        .encode();
        ops.mask(&mut frame[..M6_MASKED_BYTES], &m5.binding.0);

        self.pseudo_prev = Some(self.pseudo);
        self.pseudo = new_pseudo;
        let session_key = SessionKey {
            key,
            derived_from: KeyProvenance {
                client_pseudo: stash.client_pseudo,
                gateway_id: self.id,
                client_nonce: stash.client_nonce,
                server_ts: m5.server_ts,
            },
        };
        self.session_key = Some(session_key);
        self.stash = None;
        Ok((frame, session_key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::mask_in_place as unmask;
    use crate::entity::testkit::{trio, DELTA_T};
    use crate::rng::DetRng;

    #[test]
    fn fresh_request_produces_a_672_bit_relay() {
        let mut t = trio(20);
        t.pair();
        let m3 = t.m3().unwrap();
        let m4 = t.m4(&m3).unwrap();
        assert_eq!(m4.len() * 8, MessageKind::M4.bits());
    }

    #[test]
    fn stale_request_is_discarded_at_the_boundary() {
        for (delay, ok) in [(DELTA_T - 1, true), (DELTA_T, false), (DELTA_T + 1, false)] {
            let mut t = trio(21);
            t.pair();
            let m3 = t.m3().unwrap();
            let arrives = Timestamp(t.now.0 + delay);
            let res = t.gateway.handle_auth_request(&m3, arrives, &mut t.rng);
            assert_eq!(res.is_ok(), ok, "delay {delay}");
            if !ok {
                assert_eq!(res.unwrap_err(), ProtocolError::StaleTimestamp);
            }
        }
    }

    #[test]
    fn stash_holds_the_nonce_the_client_drew() {
        let mut t = trio(22);
        t.pair();
        let gw_id = t.gateway.id();
        let m3 = t.m3().unwrap();
        let mut clear = m3.clone();
        unmask(&mut clear, &gw_id.0);
        let sent = AuthRequest::decode(&clear).unwrap().nonce;
        t.m4(&m3).unwrap();
        assert_eq!(t.gateway.stashed_client_nonce(), Some(sent));
    }

    #[test]
    fn honest_grant_yields_576_bit_confirm_and_a_key() {
        let mut t = trio(23);
        t.pair();
        let before = t.gateway.pseudo();
        let m3 = t.m3().unwrap();
        let m4 = t.m4(&m3).unwrap();
        let m5 = t.m5(&m4).unwrap();
        let (m6, key) = t.m6(&m5).unwrap();
        assert_eq!(m6.len() * 8, MessageKind::M6.bits());
        assert_eq!(t.gateway.session_key().unwrap().key, key.key);
        assert_ne!(t.gateway.pseudo(), before, "pseudonym must rotate");
        assert_eq!(t.gateway.previous_pseudo(), Some(before));
    }

    #[test]
    fn tampered_server_proof_is_rejected() {
        let mut rejected = 0;
        for trial in 0..100u64 {
            let mut t = trio(3000 + trial);
            t.pair();
            let m3 = t.m3().unwrap();
            let m4 = t.m4(&m3).unwrap();
            let mut m5 = t.m5(&m4).unwrap();
            // server_proof occupies bytes 36..68 of M5.
            let bit = 36 * 8 + (DetRng::new(trial).next_u64() % 256) as usize;
            m5[bit / 8] ^= 0x80 >> (bit % 8);
            match t.m6(&m5) {
                Err(ProtocolError::BadServerAuthenticator) => rejected += 1,
                other => panic!("tampered M5 produced {other:?}"),
            }
        }
        assert_eq!(rejected, 100);
    }

    #[test]
    fn grant_freshness_boundary() {
        for (age, ok) in [(DELTA_T - 1, true), (DELTA_T, false), (DELTA_T + 1, false)] {
            let mut t = trio(26);
            t.pair();
            let m3 = t.m3().unwrap();
            let m4 = t.m4(&m3).unwrap();
            let m5 = t.m5(&m4).unwrap();
            let arrives = Timestamp(t.now.0 + age);
            let res = t.gateway.handle_auth_grant(&m5, arrives);
            assert_eq!(res.is_ok(), ok, "age {age}");
            if !ok {
                assert_eq!(res.unwrap_err(), ProtocolError::StaleTimestamp);
            }
        }
    }

    #[test]
    fn grant_without_a_pending_relay_is_unexpected() {
        let mut t = trio(24);
        t.pair();
        let m5 = vec![0u8; MessageKind::M5.bytes()];
        assert_eq!(t.m6(&m5).unwrap_err(), ProtocolError::UnexpectedMessage);
    }

    #[test]
    fn auth_phase_hash_and_xor_counts() {
        let mut t = trio(25);
        t.pair();
        t.authenticate();
        let auth = t.gateway.counters.authentication;
        assert_eq!(auth.protocol_hashes, 6);
        assert_eq!(auth.xor_masks, 3);
        assert_eq!(t.gateway.counters.pairing.protocol_hashes, 0);
    }
}
