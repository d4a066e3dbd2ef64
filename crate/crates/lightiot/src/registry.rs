//! Server-side credential store.
//!
//! The server holds one tuple per provisioned principal: real identity,
//! secret key, current pseudonym, and at most one previous pseudonym.
//! Retaining the previous pseudonym lets a principal that missed an
//! identity-update message authenticate on its next attempt, recovering
//! from de-synchronization without re-provisioning.
//!
//! Persistence is versioned JSON-lines, one tuple per line with
//! hex-encoded fields, modeling the server's trusted offline database.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::IdBits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Gateway,
}

/// Which pseudonym slot authenticated an incoming frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoSlot {
    Current,
    Previous,
}

/// One provisioned principal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialTuple {
    pub role: Role,
    pub real_id: IdBits,
    /// The principal's long-term secret key.
    pub secret: IdBits,
    pub pseudo_current: IdBits,
    pub pseudo_previous: Option<IdBits>,
}

impl CredentialTuple {
    /// Pseudonym candidates in trial order: current first, then previous.
    pub fn candidates(&self) -> impl Iterator<Item = (IdBits, PseudoSlot)> + '_ {
        std::iter::once((self.pseudo_current, PseudoSlot::Current)).chain(
            self.pseudo_previous
                .iter()
                .map(|p| (*p, PseudoSlot::Previous)),
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("identity already provisioned for this role")]
    DuplicateIdentity,
    #[error("identity not present in the registry")]
    UnknownIdentity,
    #[error("pseudonym update violates a registry invariant: {0}")]
    InvariantViolation(&'static str),
    #[error("registry file i/o: {0}")]
    Io(String),
    #[error("registry line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Persistence schema version for `registry.jsonl`.
const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TupleLine {
    v: u32,
    #[serde(flatten)]
    tuple: CredentialTuple,
}

/// In-memory credential registry. Tuples keep insertion order so trial
/// unmasking and persistence are deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    tuples: Vec<CredentialTuple>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Registers a principal. The pseudonym history starts empty.
    pub fn provision(
        &mut self,
        role: Role,
        real_id: IdBits,
        secret: IdBits,
        pseudo: IdBits,
    ) -> Result<(), RegistryError> {
        if real_id == pseudo {
            return Err(RegistryError::InvariantViolation(
                "pseudonym must differ from the real identity",
            ));
        }
        if self
            .tuples
            .iter()
            .any(|t| t.role == role && t.real_id == real_id)
        {
            return Err(RegistryError::DuplicateIdentity);
        }
        self.tuples.push(CredentialTuple {
            role,
            real_id,
            secret,
            pseudo_current: pseudo,
            pseudo_previous: None,
        });
        Ok(())
    }

    pub fn tuples(&self, role: Role) -> impl Iterator<Item = &CredentialTuple> {
        self.tuples.iter().filter(move |t| t.role == role)
    }

    pub fn get(&self, role: Role, real_id: IdBits) -> Option<&CredentialTuple> {
        self.tuples
            .iter()
            .find(|t| t.role == role && t.real_id == real_id)
    }

    /// Finds the tuple whose current or previous pseudonym equals
    /// `pseudo` (used for lookups keyed by a pseudonym carried in a
    /// frame field rather than by trial unmasking).
    pub fn find_by_pseudo(
        &self,
        role: Role,
        pseudo: IdBits,
    ) -> Option<(&CredentialTuple, PseudoSlot)> {
        for t in self.tuples(role) {
            for (candidate, slot) in t.candidates() {
                if candidate == pseudo {
                    return Some((t, slot));
                }
            }
        }
        None
    }

    /// Trial-unmasking scan: offers every pseudonym of every tuple of
    /// `role` (current before previous, insertion order across tuples)
    /// to `attempt`, which unmasks the frame under the offered key and
    /// runs the kind-specific authenticator check. The first candidate
    /// for which `attempt` returns `Some` wins.
    ///
    /// Frames carry no key identifier, so this linear scan is the only
    /// way to locate the sender; cost is linear in registry size.
    pub fn find_by_trial_unmask<V>(
        &self,
        role: Role,
        mut attempt: impl FnMut(&CredentialTuple, PseudoSlot, IdBits) -> Option<V>,
    ) -> Option<(CredentialTuple, PseudoSlot, V)> {
        for t in self.tuples(role) {
            for (key, slot) in t.candidates() {
                if let Some(v) = attempt(t, slot, key) {
                    return Some((t.clone(), slot, v));
                }
            }
        }
        None
    }

    /// Rotates a principal's pseudonym: the current value becomes the
    /// previous, the new value becomes current. Exactly one generation
    /// of history is retained.
    pub fn stage_and_commit_pseudo(
        &mut self,
        role: Role,
        real_id: IdBits,
        new_pseudo: IdBits,
    ) -> Result<(), RegistryError> {
        self.rotate_pseudo(role, real_id, new_pseudo, PseudoSlot::Current)
    }

    /// Slot-aware rotation. `matched` names the slot that authenticated
    /// the exchange triggering this update. When the counterparty proved
    /// it still holds the *previous* pseudonym (it missed an earlier
    /// update), that value is retained so the retained slot always
    /// contains what the counterparty holds; only the current slot is
    /// replaced. A counterparty can therefore miss any number of
    /// consecutive updates without being stranded.
    pub fn rotate_pseudo(
        &mut self,
        role: Role,
        real_id: IdBits,
        new_pseudo: IdBits,
        matched: PseudoSlot,
    ) -> Result<(), RegistryError> {
        let t = self
            .tuples
            .iter_mut()
            .find(|t| t.role == role && t.real_id == real_id)
            .ok_or(RegistryError::UnknownIdentity)?;
        if new_pseudo == t.pseudo_current {
            return Err(RegistryError::InvariantViolation(
                "new pseudonym equals the current one",
            ));
        }
        if new_pseudo == t.real_id {
            return Err(RegistryError::InvariantViolation(
                "pseudonym must differ from the real identity",
            ));
        }
        if matched == PseudoSlot::Current {
            t.pseudo_previous = Some(t.pseudo_current);
        }
        t.pseudo_current = new_pseudo;
        Ok(())
    }

    /// Writes the registry as versioned JSON-lines.
    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        let mut out = Vec::new();
        for t in &self.tuples {
            let line = TupleLine {
                v: SCHEMA_VERSION,
                tuple: t.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(|e| RegistryError::Io(e.to_string()))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| RegistryError::Io(e.to_string()))?;
        f.write_all(&out)
            .map_err(|e| RegistryError::Io(e.to_string()))
    }

    /// Loads a registry previously written by [`Registry::save`].
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path).map_err(|e| RegistryError::Io(e.to_string()))?;
        let mut reg = Registry::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TupleLine =
                serde_json::from_str(line).map_err(|e| RegistryError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if parsed.v != SCHEMA_VERSION {
                return Err(RegistryError::Parse {
                    line: i + 1,
                    msg: format!("unsupported schema version {}", parsed.v),
                });
            }
            reg.tuples.push(parsed.tuple);
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::mask_in_place;
    use crate::rng::DetRng;

    fn id(n: u8) -> IdBits {
        IdBits([n; 16])
    }

    fn sample() -> Registry {
        let mut r = Registry::new();
        r.provision(Role::Client, id(1), id(2), id(3)).unwrap();
        r.provision(Role::Gateway, id(4), id(5), id(6)).unwrap();
        r
    }

    #[test]
    fn provision_then_lookup_returns_the_tuple() {
        let r = sample();
        let (t, slot) = r.find_by_pseudo(Role::Client, id(3)).unwrap();
        assert_eq!(t.real_id, id(1));
        assert_eq!(slot, PseudoSlot::Current);
    }

    #[test]
    fn duplicate_identity_is_rejected() {
        let mut r = sample();
        assert_eq!(
            r.provision(Role::Client, id(1), id(9), id(10)),
            Err(RegistryError::DuplicateIdentity)
        );
        // Same id under the other role is a different principal.
        assert!(r.provision(Role::Gateway, id(1), id(9), id(10)).is_ok());
    }

    #[test]
    fn commit_retains_exactly_one_previous_value() {
        let mut r = sample();
        r.stage_and_commit_pseudo(Role::Client, id(1), id(7))
            .unwrap();
        assert!(r.find_by_pseudo(Role::Client, id(7)).is_some());
        assert!(matches!(
            r.find_by_pseudo(Role::Client, id(3)),
            Some((_, PseudoSlot::Previous))
        ));

        r.stage_and_commit_pseudo(Role::Client, id(1), id(8))
            .unwrap();
        assert!(r.find_by_pseudo(Role::Client, id(8)).is_some());
        assert!(r.find_by_pseudo(Role::Client, id(7)).is_some());
        assert!(r.find_by_pseudo(Role::Client, id(3)).is_none());
    }

    #[test]
    fn previous_slot_match_retains_the_counterparty_value() {
        let mut r = sample();
        // Ladder rotation: the counterparty held the current value.
        r.rotate_pseudo(Role::Client, id(1), id(7), PseudoSlot::Current)
            .unwrap();
        // It missed that update and authenticated via the previous slot:
        // id(3) stays pinned while current advances.
        r.rotate_pseudo(Role::Client, id(1), id(8), PseudoSlot::Previous)
            .unwrap();
        r.rotate_pseudo(Role::Client, id(1), id(9), PseudoSlot::Previous)
            .unwrap();
        assert!(matches!(
            r.find_by_pseudo(Role::Client, id(3)),
            Some((_, PseudoSlot::Previous))
        ));
        assert!(matches!(
            r.find_by_pseudo(Role::Client, id(9)),
            Some((_, PseudoSlot::Current))
        ));
        assert!(r.find_by_pseudo(Role::Client, id(7)).is_none());
        assert!(r.find_by_pseudo(Role::Client, id(8)).is_none());
    }

    #[test]
    fn commit_with_unchanged_pseudo_is_an_invariant_violation() {
        let mut r = sample();
        assert!(matches!(
            r.stage_and_commit_pseudo(Role::Client, id(1), id(3)),
            Err(RegistryError::InvariantViolation(_))
        ));
        assert_eq!(
            r.stage_and_commit_pseudo(Role::Client, id(99), id(7)),
            Err(RegistryError::UnknownIdentity)
        );
    }

    fn try_unmask(masked: &[u8], key: &IdBits, want: &[u8]) -> Option<Vec<u8>> {
        let mut v = masked.to_vec();
        mask_in_place(&mut v, &key.0);
        (v == want).then_some(v)
    }

    #[test]
    fn trial_unmask_finds_current_and_previous_keys() {
        let mut r = sample();
        r.stage_and_commit_pseudo(Role::Client, id(1), id(7))
            .unwrap();

        let plain = b"frame payload under test 12345678".to_vec();

        // Masked under the retained previous pseudonym (post-desync path).
        let mut masked = plain.clone();
        mask_in_place(&mut masked, &id(3).0);
        let hit =
            r.find_by_trial_unmask(Role::Client, |_, _, key| try_unmask(&masked, &key, &plain));
        let (t, slot, clear) = hit.unwrap();
        assert_eq!(t.real_id, id(1));
        assert_eq!(slot, PseudoSlot::Previous);
        assert_eq!(clear, plain);

        // Masked under the current pseudonym.
        let mut masked = plain.clone();
        mask_in_place(&mut masked, &id(7).0);
        let (_, slot, _) = r
            .find_by_trial_unmask(Role::Client, |_, _, key| try_unmask(&masked, &key, &plain))
            .unwrap();
        assert_eq!(slot, PseudoSlot::Current);
    }

    #[test]
    fn trial_unmask_rejects_random_keys() {
        let r = sample();
        let plain = b"another frame payload 0123456789".to_vec();
        let mut rng = DetRng::new(1234);
        for _ in 0..100 {
            let key = rng.next_id();
            let mut masked = plain.clone();
            mask_in_place(&mut masked, &key.0);
            let hit =
                r.find_by_trial_unmask(Role::Client, |_, _, k| try_unmask(&masked, &k, &plain));
            assert!(hit.is_none(), "random key {key:?} must not authenticate");
        }
    }

    #[test]
    fn persistence_round_trips_bit_identically() {
        let mut r = Registry::new();
        let mut rng = DetRng::new(99);
        for i in 0..8 {
            let role = if i % 2 == 0 {
                Role::Client
            } else {
                Role::Gateway
            };
            r.provision(role, rng.next_id(), rng.next_id(), rng.next_id())
                .unwrap();
        }
        let first_client = r.tuples(Role::Client).next().unwrap().real_id;
        r.stage_and_commit_pseudo(Role::Client, first_client, rng.next_id())
            .unwrap();

        let dir = std::env::temp_dir().join("lightiot-registry-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("registry.jsonl");
        r.save(&path).unwrap();
        let loaded = Registry::load(&path).unwrap();
        assert_eq!(r, loaded);
        assert_eq!(loaded.len(), 8);
    }
}
