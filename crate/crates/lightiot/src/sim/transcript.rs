//! Run transcripts: every frame on the wire, every session outcome, and
//! final per-entity counters. Serialized as JSON-lines, one record per
//! line.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::PhaseCounters;
use crate::wire::MessageKind;

/// Cumulative operation counts of the receiving entity at event time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountersSnapshot {
    pub protocol_hashes: u64,
    pub pad_hashes: u64,
    pub xor_masks: u64,
}

/// One frame observed on a link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEvent {
    /// Simulation time (ms) when the verdict became known.
    pub time: u64,
    /// Index of the session this frame belongs to.
    pub session: usize,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    /// Exact wire bytes, lowercase hex.
    pub raw_hex: String,
    /// Adversary annotation, when an action touched this frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary: Option<String>,
    /// Receiver verdict: `accepted`, `rejected:<code>`, or `dropped:<why>`.
    pub verdict: String,
    /// Receiver counters after processing (absent for drops).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receiver_ops: Option<CountersSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Pairing,
    Authentication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum SessionOutcome {
    Completed,
    Failed { reason: String },
}

/// Outcome record for one pairing or authentication exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub index: usize,
    pub kind: SessionKind,
    pub client: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gateway: Option<String>,
    pub started_at: u64,
    pub ended_at: u64,
    /// End-to-end latency; present only for completed sessions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    pub outcome: SessionOutcome,
    /// Established session keys (hex), for audit; present only on
    /// completed authentications.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gateway_key: Option<String>,
    /// Pseudonyms held after the session, for rotation audits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_pseudo_after: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gateway_pseudo_after: Option<String>,
}

impl SessionRecord {
    pub fn completed(&self) -> bool {
        self.outcome == SessionOutcome::Completed
    }
}

/// Final counters for one entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTally {
    pub name: String,
    pub counters: PhaseCounters,
}

/// Complete record of one simulation run. Event times are
/// non-decreasing; the transcript is a pure function of the run inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<WireEvent>,
    pub sessions: Vec<SessionRecord>,
    pub entities: Vec<EntityTally>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Event(WireEvent),
    Session(SessionRecord),
    Entity(EntityTally),
}

impl Transcript {
    /// Writes the transcript as JSON-lines.
    pub fn write_jsonl(&self, mut w: impl Write) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, &Line::Event(e.clone()))?;
            w.write_all(b"\n")?;
        }
        for s in &self.sessions {
            serde_json::to_writer(&mut w, &Line::Session(s.clone()))?;
            w.write_all(b"\n")?;
        }
        for t in &self.entities {
            serde_json::to_writer(&mut w, &Line::Entity(t.clone()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(io::BufWriter::new(f))
    }

    pub fn load_jsonl(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut out = Transcript::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("transcript line {}: {e}", i + 1),
                )
            })?;
            match parsed {
                Line::Event(e) => out.events.push(e),
                Line::Session(s) => out.sessions.push(s),
                Line::Entity(t) => out.entities.push(t),
            }
        }
        Ok(out)
    }

    /// Conservation audit: every emitted frame appears exactly once,
    /// with a delivery verdict or a drop verdict.
    pub fn frames_conserved(&self) -> bool {
        self.events.iter().all(|e| {
            e.verdict == "accepted"
                || e.verdict.starts_with("rejected:")
                || e.verdict.starts_with("dropped:")
        })
    }

    /// Event times never decrease.
    pub fn times_monotone(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time <= w[1].time)
    }
}
