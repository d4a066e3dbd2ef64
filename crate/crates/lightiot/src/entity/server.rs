//! The backend server state machine.
//!
//! The server owns the credential registry. Incoming masked frames carry
//! no key identifier, so M1 and M4 are located by trial unmasking over
//! the registered pseudonyms (current, then previous). Every accepted
//! exchange rotates the sender's pseudonym in the registry, keeping the
//! old value for one generation so a principal that missed the update
//! can still authenticate.

use std::collections::BTreeMap;

use crate::crypto::{IdBits, Ops, Timestamp};
use crate::metrics::{Phase, PhaseCounters};
use crate::registry::{PseudoSlot, Registry, Role};
use crate::wire::{AuthGrant, AuthRelay, MessageKind, PairRequest, PairResponse, WireError};

use super::{xor_digests, ProtocolError};

/// The trusted server: registry, freshness window, and per-client
/// gateway assignments established during offline registration.
#[derive(Debug, Clone)]
pub struct Server {
    registry: Registry,
    delta_t: u32,
    assignments: BTreeMap<IdBits, IdBits>,
    pub counters: PhaseCounters,
}

impl Server {
    pub fn new(registry: Registry, delta_t: u32) -> Self {
        assert!(delta_t > 0, "freshness window must be positive");
        Server {
            registry,
            delta_t,
            assignments: BTreeMap::new(),
            counters: PhaseCounters::default(),
        }
    }

    pub fn delta_t(&self) -> u32 {
        self.delta_t
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Declares which gateway serves a client; the pairing response
    /// discloses this gateway's identity to the client.
    pub fn assign_gateway(&mut self, client_real_id: IdBits, gateway_real_id: IdBits) {
        self.assignments.insert(client_real_id, gateway_real_id);
    }

    /// Processes a masked pairing request M1 and answers with the
    /// plaintext pairing response M2.
    ///
    /// Trial-unmasks against every registered client pseudonym; a
    /// candidate is accepted when the recovered client identity matches
    /// the tuple and the request proof recomputes. Freshness is judged
    /// against this server's clock.
    pub fn handle_pair_request(
        &mut self,
        bits: &[u8],
        now: Timestamp,
    ) -> Result<Vec<u8>, ProtocolError> {
        if bits.len() != MessageKind::M1.bytes() {
            return Err(WireError::LengthMismatch {
                kind: MessageKind::M1,
                expected: MessageKind::M1.bits(),
                got: bits.len() * 8,
            }
            .into());
        }
        let mut saw_bad_proof = false;
        let counters = self.counters.phase_mut(Phase::Pairing);
        let hit = self
            .registry
            .find_by_trial_unmask(Role::Client, |tuple, _slot, key| {
                let mut ops = Ops::new(&mut *counters);
                let mut clear = bits.to_vec();
                ops.mask(&mut clear, &key.0);
                let m1 = PairRequest::decode(&clear).expect("length checked above");
                if m1.client_id != tuple.real_id {
                    return None;
                }
                // proof = h(pseudonym || nonce || secret)
                let proof = ops.digest(&[&key.0, &m1.nonce.0, &tuple.secret.0]);
                if proof != m1.proof {
                    saw_bad_proof = true;
                    return None;
                }
                Some(m1)
            });
        let Some((tuple, slot, m1)) = hit else {
            return Err(if saw_bad_proof {
                ProtocolError::BadAuthenticator
            } else {
                ProtocolError::UnknownClient
            });
        };
        if !now.within(m1.client_ts, self.delta_t) {
            return Err(ProtocolError::StaleTimestamp);
        }

        let gateway_id = *self
            .assignments
            .get(&tuple.real_id)
            .ok_or(ProtocolError::UnknownGateway)?;

        let mut ops = Ops::new(self.counters.phase_mut(Phase::Pairing));
        // new_pseudo = trunc(h(id || nonce || client_ts || server_ts))
        let new_pseudo = ops.pseudonym(&[
            &tuple.real_id.0,
            &m1.nonce.0,
            &m1.client_ts.to_be_bytes(),
            &now.to_be_bytes(),
        ]);
        // The gateway identity travels blinded under a digest only the
        // paired client can derive, plus a tag it can verify.
        let blind = ops.pseudonym(&[&new_pseudo.0, &now.to_be_bytes()]);
        let masked_gateway_id = gateway_id.xor(&blind);
        let response_tag = ops.pseudonym(&[&gateway_id.0, &new_pseudo.0, &now.to_be_bytes()]);

        self.registry
            .rotate_pseudo(Role::Client, tuple.real_id, new_pseudo, slot)?;

        Ok(PairResponse {
            masked_gateway_id,
            response_tag,
            server_ts: now,
        }
        .encode())
    }

    /// Processes a masked relay M4 and answers with the plaintext grant
    /// M5.
    ///
    /// Trial-unmasks against every registered gateway pseudonym. A
    /// candidate wins when the carried client pseudonym resolves in the
    /// registry and the relayed combined proof recomputes from both
    /// tuples' secrets; that single comparison authenticates client and
    /// gateway at once.
    pub fn handle_auth_relay(
        &mut self,
        bits: &[u8],
        now: Timestamp,
    ) -> Result<Vec<u8>, ProtocolError> {
        if bits.len() != MessageKind::M4.bytes() {
            return Err(WireError::LengthMismatch {
                kind: MessageKind::M4,
                expected: MessageKind::M4.bits(),
                got: bits.len() * 8,
            }
            .into());
        }
        let mut saw_bad_proof = false;
        let mut saw_unknown_client = false;
        let counters = self.counters.phase_mut(Phase::Authentication);
        let registry = &self.registry;
        let delta_t = self.delta_t;
        let hit = registry.find_by_trial_unmask(Role::Gateway, |gw_tuple, _slot, key| {
            let mut ops = Ops::new(&mut *counters);
            let mut clear = bits.to_vec();
            ops.mask(&mut clear, &key.0);
            let m4 = AuthRelay::decode(&clear).expect("length checked above");
            let Some((client_tuple, client_slot)) =
                registry.find_by_pseudo(Role::Client, m4.client_pseudo)
            else {
                // A wrong unmask key yields a uniformly random timestamp
                // field, so a fresh-looking parse that resolves no client
                // is treated as a genuinely unknown client.
                if now.within(m4.client_ts, delta_t) {
                    saw_unknown_client = true;
                }
                return None;
            };
            let client_proof = ops.digest(&[
                &client_tuple.real_id.0,
                &client_tuple.secret.0,
                &m4.client_nonce.0,
            ]);
            let gateway_proof =
                ops.digest(&[&gw_tuple.real_id.0, &gw_tuple.secret.0, &m4.gateway_nonce.0]);
            if xor_digests(&client_proof, &gateway_proof) != m4.proof {
                saw_bad_proof = true;
                return None;
            }
            Some((m4, client_tuple.clone(), client_slot))
        });
        let Some((gw_tuple, gw_slot, (m4, client_tuple, client_slot))) = hit else {
            return Err(if saw_bad_proof {
                ProtocolError::BadAuthenticator
            } else if saw_unknown_client {
                ProtocolError::UnknownClient
            } else {
                ProtocolError::UnknownGateway
            });
        };
        if !now.within(m4.client_ts, self.delta_t) {
            return Err(ProtocolError::StaleTimestamp);
        }
        // The pseudonym that unmasked M4 is the one the gateway holds;
        // the server key must be derived from it, not from the registry
        // head, or a desynchronized gateway could never verify M5.
        let matched_pseudo = match gw_slot {
            PseudoSlot::Current => gw_tuple.pseudo_current,
            PseudoSlot::Previous => gw_tuple
                .pseudo_previous
                .expect("previous slot matched, so it exists"),
        };

        let mut ops = Ops::new(self.counters.phase_mut(Phase::Authentication));
        let new_client_pseudo = ops.pseudonym(&[
            &client_tuple.real_id.0,
            &client_tuple.secret.0,
            &m4.client_nonce.0,
            &m4.client_ts.to_be_bytes(),
            &now.to_be_bytes(),
        ]);
        let new_gateway_pseudo = ops.pseudonym(&[
            &gw_tuple.real_id.0,
            &gw_tuple.secret.0,
            &m4.gateway_nonce.0,
            &m4.client_ts.to_be_bytes(),
            &now.to_be_bytes(),
        ]);
        // binding = h(client_id || client_ts || server_ts)
        let binding = ops.digest(&[
            &client_tuple.real_id.0,
            &m4.client_ts.to_be_bytes(),
            &now.to_be_bytes(),
        ]);
        let server_key = ops.digest(&[
            &gw_tuple.real_id.0,
            &gw_tuple.secret.0,
            &m4.gateway_nonce.0,
            &matched_pseudo.0,
            &now.to_be_bytes(),
        ]);
        let server_proof = ops.digest(&[&server_key.0, &binding.0, &matched_pseudo.0]);
        let session_proof = ops.digest(&[&binding.0, &m4.client_nonce.0]);

        self.registry.rotate_pseudo(
            Role::Client,
            client_tuple.real_id,
            new_client_pseudo,
            client_slot,
        )?;
        self.registry.rotate_pseudo(
            Role::Gateway,
            gw_tuple.real_id,
            new_gateway_pseudo,
            gw_slot,
        )?;

        Ok(AuthGrant {
            server_ts: now,
            binding,
            server_proof,
            session_proof,
        }
        .encode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Timestamp;
    use crate::entity::testkit::{trio, DELTA_T};
    use crate::entity::Gateway;
    use crate::rng::DetRng;

    #[test]
    fn fresh_pair_request_yields_a_288_bit_response() {
        let mut t = trio(40);
        let m1 = t.m1();
        let m2 = t.m2(&m1).unwrap();
        assert_eq!(m2.len() * 8, MessageKind::M2.bits());
    }

    #[test]
    fn pair_request_freshness_boundary() {
        for (age, ok) in [(DELTA_T - 1, true), (DELTA_T, false), (DELTA_T + 1, false)] {
            let mut t = trio(41);
            let m1 = t.m1();
            let arrives = Timestamp(t.now.0 + age);
            let res = t.server.handle_pair_request(&m1, arrives);
            assert_eq!(res.is_ok(), ok, "age {age}");
            if !ok {
                assert_eq!(res.unwrap_err(), ProtocolError::StaleTimestamp);
            }
        }
    }

    #[test]
    fn replayed_pair_request_goes_stale_after_the_window() {
        let mut t = trio(42);
        let m1 = t.m1();
        t.m2(&m1).unwrap();
        // Same frame again, long after the window: the registry still
        // holds the old pseudonym in the previous slot, so the frame
        // authenticates and is then rejected on freshness alone.
        let late = t.tick(DELTA_T + 500);
        let verdict = t.server.handle_pair_request(&m1, late);
        assert_eq!(verdict.unwrap_err(), ProtocolError::StaleTimestamp);
    }

    #[test]
    fn flipped_proof_bits_are_rejected() {
        let mut rejected = 0;
        for trial in 0..100u64 {
            let mut t = trio(4000 + trial);
            let mut m1 = t.m1();
            // proof occupies the final 256 bits of M1.
            let bit = 288 + (DetRng::new(trial).next_u64() % 256) as usize;
            m1[bit / 8] ^= 0x80 >> (bit % 8);
            match t.m2(&m1) {
                Err(ProtocolError::BadAuthenticator) => rejected += 1,
                other => panic!("flipped proof produced {other:?}"),
            }
        }
        assert_eq!(rejected, 100);
    }

    #[test]
    fn unprovisioned_client_is_unknown() {
        let mut t = trio(43);
        let mut stranger = crate::entity::Client::new(
            DetRng::new(7).next_id(),
            DetRng::new(8).next_id(),
            DetRng::new(9).next_id(),
            DELTA_T,
        );
        let now = t.tick(10);
        let m1 = stranger.start_pairing(now, &mut t.rng);
        assert_eq!(t.m2(&m1).unwrap_err(), ProtocolError::UnknownClient);
    }

    #[test]
    fn honest_relay_yields_an_800_bit_grant() {
        let mut t = trio(44);
        t.pair();
        let m3 = t.m3().unwrap();
        let m4 = t.m4(&m3).unwrap();
        let m5 = t.m5(&m4).unwrap();
        assert_eq!(m5.len() * 8, MessageKind::M5.bits());
    }

    #[test]
    fn relay_masked_under_unregistered_pseudonym_is_unknown_gateway() {
        let mut t = trio(45);
        t.pair();
        // An impostor gateway with the right identity and secret but an
        // unregistered pseudonym cannot even be located.
        let mut impostor = Gateway::new(
            t.gateway.id(),
            t.gateway_secret,
            DetRng::new(99).next_id(),
            DELTA_T,
        );
        let m3 = t.m3().unwrap();
        let now = t.tick(10);
        let m4 = impostor.handle_auth_request(&m3, now, &mut t.rng).unwrap();
        assert_eq!(t.m5(&m4).unwrap_err(), ProtocolError::UnknownGateway);
    }

    #[test]
    fn relay_with_wrong_gateway_secret_fails_the_proof() {
        let mut t = trio(46);
        t.pair();
        // Registered pseudonym, wrong secret: locates the tuple but the
        // combined proof cannot recompute.
        let mut impostor = Gateway::new(
            t.gateway.id(),
            DetRng::new(100).next_id(),
            t.gateway.pseudo(),
            DELTA_T,
        );
        let m3 = t.m3().unwrap();
        let now = t.tick(10);
        let m4 = impostor.handle_auth_request(&m3, now, &mut t.rng).unwrap();
        assert_eq!(t.m5(&m4).unwrap_err(), ProtocolError::BadAuthenticator);
    }

    #[test]
    fn relay_freshness_boundary_uses_the_client_timestamp() {
        for (age, ok) in [(DELTA_T - 1 - 10, true), (DELTA_T + 10, false)] {
            let mut t = trio(47);
            t.pair();
            let m3 = t.m3().unwrap();
            let m4 = t.m4(&m3).unwrap(); // ticks 10ms after M3
            let arrives = Timestamp(t.now.0 + age);
            let res = t.server.handle_auth_relay(&m4, arrives);
            assert_eq!(res.is_ok(), ok, "age {age}");
        }
    }

    #[test]
    fn server_rotates_both_pseudonyms_on_grant() {
        let mut t = trio(48);
        t.pair();
        let client_before = t
            .server
            .registry()
            .get(Role::Client, t.client.id())
            .unwrap()
            .pseudo_current;
        let gw_before = t
            .server
            .registry()
            .get(Role::Gateway, t.gateway.id())
            .unwrap()
            .pseudo_current;
        t.authenticate();
        let client_tuple = t
            .server
            .registry()
            .get(Role::Client, t.client.id())
            .unwrap();
        let gw_tuple = t
            .server
            .registry()
            .get(Role::Gateway, t.gateway.id())
            .unwrap();
        assert_ne!(client_tuple.pseudo_current, client_before);
        assert_eq!(client_tuple.pseudo_previous, Some(client_before));
        assert_ne!(gw_tuple.pseudo_current, gw_before);
        assert_eq!(gw_tuple.pseudo_previous, Some(gw_before));
        // Both sides converged on the same rotation.
        assert_eq!(client_tuple.pseudo_current, t.client.pseudo());
        assert_eq!(gw_tuple.pseudo_current, t.gateway.pseudo());
    }

    #[test]
    fn losing_the_confirm_twice_never_strands_the_client() {
        let mut t = trio(50);
        t.pair();
        // The closing confirm is lost twice in a row: the server rotates
        // each time but must retain the pseudonym the client still holds.
        for _ in 0..2 {
            let m3 = t.m3().unwrap();
            let m4 = t.m4(&m3).unwrap();
            let m5 = t.m5(&m4).unwrap();
            let (_lost_m6, _) = t.m6(&m5).unwrap();
        }
        let (ck, gk) = t.authenticate();
        assert_eq!(ck.key, gk.key);
    }

    #[test]
    fn losing_the_grant_twice_never_strands_the_gateway() {
        let mut t = trio(51);
        t.pair();
        // M5 vanishes twice: the gateway never rotates while the server
        // rotates twice; the third exchange must still succeed.
        for _ in 0..2 {
            let m3 = t.m3().unwrap();
            let m4 = t.m4(&m3).unwrap();
            let _lost_m5 = t.m5(&m4).unwrap();
        }
        let (ck, gk) = t.authenticate();
        assert_eq!(ck.key, gk.key);
    }

    #[test]
    fn auth_phase_hash_count_is_exactly_eight() {
        let mut t = trio(49);
        t.pair();
        t.authenticate();
        let auth = t.server.counters.authentication;
        assert_eq!(auth.protocol_hashes, 8);
        assert_eq!(auth.xor_masks, 1);
        let pairing = t.server.counters.pairing;
        assert_eq!(pairing.protocol_hashes, 4);
        assert_eq!(pairing.xor_masks, 1);
    }
}
