//! Scriptable in-path adversary.
//!
//! The attacker owns the channel: it can pass, drop, delay, tamper with,
//! replace (replay), or inject frames, but cannot break the hash
//! primitive. Scripts are declarative rule lists keyed by
//! `(session index, message kind)` and can be loaded from a JSON file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::wire::MessageKind;

use super::ConfigError;

/// What the adversary does to a matched frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AdversaryAction {
    /// Deliver unchanged (explicit no-op rule).
    Pass,
    /// Swallow the frame.
    Drop,
    /// Deliver after an extra delay.
    Delay { ms: u64 },
    /// Flip the listed bit positions in flight.
    Tamper { bits: Vec<usize> },
    /// Replace the frame with the copy captured from an earlier session
    /// (a replay staged against a receptive receiver).
    Replay { from_session: usize },
    /// Deliver the original and additionally inject these raw bytes to
    /// the same receiver.
    Inject { raw_hex: String },
}

/// One script entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryRule {
    pub session: usize,
    pub message: MessageKind,
    #[serde(flatten)]
    pub action: AdversaryAction,
}

/// Ordered rule list; the first rule matching a frame applies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdversaryScript {
    pub rules: Vec<AdversaryRule>,
}

impl AdversaryScript {
    pub fn empty() -> Self {
        AdversaryScript::default()
    }

    pub fn single(session: usize, message: MessageKind, action: AdversaryAction) -> Self {
        AdversaryScript {
            rules: vec![AdversaryRule {
                session,
                message,
                action,
            }],
        }
    }

    /// Loads a JSON array of rules.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Script(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for r in &self.rules {
            if let AdversaryAction::Tamper { bits } = &r.action {
                if bits.is_empty() {
                    return Err(ConfigError::Script(
                        "tamper rule lists no bit positions".into(),
                    ));
                }
                for &b in bits {
                    if b >= r.message.bits() {
                        return Err(ConfigError::Script(format!(
                            "tamper bit {b} outside {} ({} bits)",
                            r.message,
                            r.message.bits()
                        )));
                    }
                }
            }
            if let AdversaryAction::Inject { raw_hex } = &r.action {
                if hex::decode(raw_hex).is_err() {
                    return Err(ConfigError::Script("inject payload is not hex".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rule_for(&self, session: usize, message: MessageKind) -> Option<&AdversaryAction> {
        self.rules
            .iter()
            .find(|r| r.session == session && r.message == message)
            .map(|r| &r.action)
    }
}

/// Runtime adversary state: the script plus the capture log of every
/// frame seen on the wire, keyed by `(session, kind)`.
#[derive(Debug, Default)]
pub struct Adversary {
    script: AdversaryScript,
    captures: BTreeMap<(usize, MessageKind), Vec<u8>>,
}

impl Adversary {
    pub fn new(script: AdversaryScript) -> Self {
        Adversary {
            script,
            captures: BTreeMap::new(),
        }
    }

    /// Records a frame for later replay (first copy wins).
    pub fn capture(&mut self, session: usize, kind: MessageKind, bytes: &[u8]) {
        self.captures
            .entry((session, kind))
            .or_insert_with(|| bytes.to_vec());
    }

    pub fn captured(&self, session: usize, kind: MessageKind) -> Option<&Vec<u8>> {
        self.captures.get(&(session, kind))
    }

    pub fn action(&self, session: usize, kind: MessageKind) -> Option<&AdversaryAction> {
        self.script.rule_for(session, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_round_trips_through_json() {
        let script = AdversaryScript {
            rules: vec![
                AdversaryRule {
                    session: 1,
                    message: MessageKind::M5,
                    action: AdversaryAction::Drop,
                },
                AdversaryRule {
                    session: 2,
                    message: MessageKind::M1,
                    action: AdversaryAction::Replay { from_session: 0 },
                },
                AdversaryRule {
                    session: 0,
                    message: MessageKind::M6,
                    action: AdversaryAction::Tamper {
                        bits: vec![17, 400],
                    },
                },
            ],
        };
        let json = serde_json::to_string(&script).unwrap();
        let back: AdversaryScript = serde_json::from_str(&json).unwrap();
        assert_eq!(back, script);
    }

    #[test]
    fn tamper_positions_are_validated_against_frame_width() {
        let bad = AdversaryScript::single(
            0,
            MessageKind::M2,
            AdversaryAction::Tamper { bits: vec![288] },
        );
        assert!(bad.validate().is_err());
        let ok = AdversaryScript::single(
            0,
            MessageKind::M2,
            AdversaryAction::Tamper { bits: vec![287] },
        );
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn capture_log_keeps_the_first_copy() {
        let mut adv = Adversary::new(AdversaryScript::empty());
        adv.capture(0, MessageKind::M1, b"first");
        adv.capture(0, MessageKind::M1, b"second");
        assert_eq!(adv.captured(0, MessageKind::M1).unwrap(), b"first");
        assert!(adv.captured(1, MessageKind::M1).is_none());
    }
}
