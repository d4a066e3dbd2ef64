//! Deterministic discrete-event network simulation.
//!
//! Entities exchange frames over configurable links (fixed or uniform
//! delay, loss probability, per-role clock skew) with a scriptable
//! adversary sitting on every link. Identical inputs and seed produce
//! bit-identical transcripts: one seeded generator per run, split into
//! labeled streams per entity and per link. Processing time is zero, so
//! end-to-end latency is exactly the sum of link delays, and a stalled
//! session fails after `timeout_factor` freshness windows.

pub mod adversary;
pub mod transcript;

pub use adversary::{Adversary, AdversaryAction, AdversaryRule, AdversaryScript};
pub use transcript::{
    CountersSnapshot, EntityTally, SessionKind, SessionOutcome, SessionRecord, Transcript,
    WireEvent,
};

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Timestamp;
use crate::entity::{Client, Gateway, Server, SessionKey};
use crate::metrics::Phase;
use crate::registry::{Registry, Role};
use crate::rng::DetRng;
use crate::wire::MessageKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("topology needs at least one {0}")]
    MissingEntity(&'static str),
    #[error("loss probability {0} is outside [0, 1]")]
    InvalidLoss(f64),
    #[error("freshness window must be positive")]
    InvalidWindow,
    #[error("adversary script: {0}")]
    Script(String),
    #[error("{0}")]
    Invalid(String),
}

/// Link delay model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModel {
    Fixed { ms: u64 },
    Uniform { lo_ms: u64, hi_ms: u64 },
}

impl DelayModel {
    fn sample(&self, rng: &mut DetRng) -> u64 {
        match *self {
            DelayModel::Fixed { ms } => ms,
            DelayModel::Uniform { lo_ms, hi_ms } => rng.range(lo_ms, hi_ms.max(lo_ms)),
        }
    }
}

/// One directed link class (delay plus loss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub delay: DelayModel,
    pub loss_prob: f64,
}

impl LinkConfig {
    pub fn fixed(ms: u64) -> Self {
        LinkConfig {
            delay: DelayModel::Fixed { ms },
            loss_prob: 0.0,
        }
    }
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig::fixed(10)
    }
}

/// Full run configuration. The seed is mandatory: nothing in a run draws
/// from ambient randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub clients: usize,
    pub gateways: usize,
    /// Pairing rounds per client (re-pairing is legal).
    pub pairings: usize,
    /// Authentication sessions per client after pairing.
    pub sessions: usize,
    /// Freshness window, milliseconds.
    pub delta_t_ms: u32,
    pub client_gateway: LinkConfig,
    pub gateway_server: LinkConfig,
    pub client_server: LinkConfig,
    pub client_skew_ms: i64,
    pub gateway_skew_ms: i64,
    pub server_skew_ms: i64,
    pub seed: u64,
    /// Idle gap between consecutive scheduled sessions.
    pub inter_session_gap_ms: u64,
    /// A session that has not completed after
    /// `timeout_factor * delta_t_ms` is marked failed.
    pub timeout_factor: u64,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            clients: 1,
            gateways: 1,
            pairings: 1,
            sessions: 1,
            delta_t_ms: 2000,
            client_gateway: LinkConfig::default(),
            gateway_server: LinkConfig::default(),
            client_server: LinkConfig::default(),
            client_skew_ms: 0,
            gateway_skew_ms: 0,
            server_skew_ms: 0,
            seed,
            inter_session_gap_ms: 10,
            timeout_factor: 10,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.clients == 0 {
            return Err(ConfigError::MissingEntity("client"));
        }
        if self.gateways == 0 {
            return Err(ConfigError::MissingEntity("gateway"));
        }
        if self.pairings == 0 {
            return Err(ConfigError::Invalid(
                "at least one pairing round is required".into(),
            ));
        }
        if self.delta_t_ms == 0 {
            return Err(ConfigError::InvalidWindow);
        }
        if self.timeout_factor == 0 {
            return Err(ConfigError::Invalid(
                "timeout factor must be positive".into(),
            ));
        }
        for link in [
            &self.client_gateway,
            &self.gateway_server,
            &self.client_server,
        ] {
            if !(0.0..=1.0).contains(&link.loss_prob) {
                return Err(ConfigError::InvalidLoss(link.loss_prob));
            }
        }
        Ok(())
    }
}

/// Simulation-level addressing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EntityId {
    Client(usize),
    Gateway(usize),
    Server,
}

impl EntityId {
    fn name(&self) -> String {
        match self {
            EntityId::Client(i) => format!("client-{i}"),
            EntityId::Gateway(i) => format!("gateway-{i}"),
            EntityId::Server => "server".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SessionPlan {
    kind: SessionKind,
    client: usize,
    gateway: usize,
}

#[derive(Debug, Clone)]
struct Flight {
    session: usize,
    kind: MessageKind,
    bytes: Vec<u8>,
    from: EntityId,
    to: EntityId,
    note: Option<String>,
    /// Adversary-injected duplicate: processed and recorded, but its
    /// rejection does not fail the session it references.
    extra: bool,
}

#[derive(Debug)]
enum EventKind {
    StartSession(usize),
    Deliver(Flight),
    Deadline(usize),
}

struct QueuedEvent {
    time: u64,
    seq: u64,
    what: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap, we need earliest-first.
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default, Clone)]
struct SessionState {
    started_at: u64,
    done: bool,
    outcome: Option<SessionOutcome>,
    ended_at: u64,
    client_key: Option<SessionKey>,
    gateway_key: Option<SessionKey>,
    client_pseudo_after: Option<String>,
    gateway_pseudo_after: Option<String>,
}

/// Everything a finished run exposes: the transcript plus final entity
/// states for in-process assertions.
#[derive(Debug)]
pub struct RunOutcome {
    pub transcript: Transcript,
    pub clients: Vec<Client>,
    pub gateways: Vec<Gateway>,
    pub server: Server,
}

impl World {
    /// Splits a preloaded registry into entity credentials. Tuple order
    /// in the file fixes entity numbering.
    fn entities_from_registry(
        cfg: &RunConfig,
        registry: &Registry,
    ) -> Result<(Vec<Client>, Vec<Gateway>), ConfigError> {
        let clients: Vec<Client> = registry
            .tuples(Role::Client)
            .map(|t| Client::new(t.real_id, t.secret, t.pseudo_current, cfg.delta_t_ms))
            .collect();
        let gateways: Vec<Gateway> = registry
            .tuples(Role::Gateway)
            .map(|t| Gateway::new(t.real_id, t.secret, t.pseudo_current, cfg.delta_t_ms))
            .collect();
        if clients.len() != cfg.clients {
            return Err(ConfigError::Invalid(format!(
                "registry holds {} clients, config expects {}",
                clients.len(),
                cfg.clients
            )));
        }
        if gateways.len() != cfg.gateways {
            return Err(ConfigError::Invalid(format!(
                "registry holds {} gateways, config expects {}",
                gateways.len(),
                cfg.gateways
            )));
        }
        Ok((clients, gateways))
    }
}

struct World {
    cfg: RunConfig,
    plan: Vec<SessionPlan>,
    clients: Vec<Client>,
    gateways: Vec<Gateway>,
    server: Server,
    client_rngs: Vec<DetRng>,
    gateway_rngs: Vec<DetRng>,
    cs_rngs: Vec<DetRng>,
    cg_rngs: Vec<DetRng>,
    gs_rngs: Vec<DetRng>,
    adversary: Adversary,
    queue: BinaryHeap<QueuedEvent>,
    seq: u64,
    events: Vec<WireEvent>,
    states: Vec<SessionState>,
}

impl World {
    fn build(
        cfg: &RunConfig,
        script: &AdversaryScript,
        preset: Option<&Registry>,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        script.validate()?;

        let (registry, clients, gateways) = match preset {
            Some(reg) => {
                let (clients, gateways) = World::entities_from_registry(cfg, reg)?;
                (reg.clone(), clients, gateways)
            }
            None => {
                let mut registry = Registry::new();
                let mut clients = Vec::with_capacity(cfg.clients);
                let mut gateways = Vec::with_capacity(cfg.gateways);
                for g in 0..cfg.gateways {
                    let mut prov = DetRng::stream(cfg.seed, &format!("provision-gateway-{g}"));
                    let (id, secret, pseudo) = (prov.next_id(), prov.next_id(), prov.next_id());
                    registry
                        .provision(Role::Gateway, id, secret, pseudo)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    gateways.push(Gateway::new(id, secret, pseudo, cfg.delta_t_ms));
                }
                for c in 0..cfg.clients {
                    let mut prov = DetRng::stream(cfg.seed, &format!("provision-client-{c}"));
                    let (id, secret, pseudo) = (prov.next_id(), prov.next_id(), prov.next_id());
                    registry
                        .provision(Role::Client, id, secret, pseudo)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    clients.push(Client::new(id, secret, pseudo, cfg.delta_t_ms));
                }
                (registry, clients, gateways)
            }
        };

        let mut server = Server::new(registry, cfg.delta_t_ms);
        for (c, client) in clients.iter().enumerate() {
            server.assign_gateway(client.id(), gateways[c % cfg.gateways].id());
        }

        let mut plan = Vec::new();
        for _round in 0..cfg.pairings {
            for c in 0..cfg.clients {
                plan.push(SessionPlan {
                    kind: SessionKind::Pairing,
                    client: c,
                    gateway: c % cfg.gateways,
                });
            }
        }
        for _round in 0..cfg.sessions {
            for c in 0..cfg.clients {
                plan.push(SessionPlan {
                    kind: SessionKind::Authentication,
                    client: c,
                    gateway: c % cfg.gateways,
                });
            }
        }

        let states = vec![SessionState::default(); plan.len()];
        Ok(World {
            client_rngs: (0..cfg.clients)
                .map(|c| DetRng::stream(cfg.seed, &format!("client-{c}")))
                .collect(),
            gateway_rngs: (0..cfg.gateways)
                .map(|g| DetRng::stream(cfg.seed, &format!("gateway-{g}")))
                .collect(),
            cs_rngs: (0..cfg.clients)
                .map(|c| DetRng::stream(cfg.seed, &format!("link-client-server-{c}")))
                .collect(),
            cg_rngs: (0..cfg.clients)
                .map(|c| DetRng::stream(cfg.seed, &format!("link-client-gateway-{c}")))
                .collect(),
            gs_rngs: (0..cfg.gateways)
                .map(|g| DetRng::stream(cfg.seed, &format!("link-gateway-server-{g}")))
                .collect(),
            cfg: cfg.clone(),
            plan,
            clients,
            gateways,
            server,
            adversary: Adversary::new(script.clone()),
            queue: BinaryHeap::new(),
            seq: 0,
            events: Vec::new(),
            states,
        })
    }

    fn clock(&self, id: EntityId, time: u64) -> Timestamp {
        let skew = match id {
            EntityId::Client(_) => self.cfg.client_skew_ms,
            EntityId::Gateway(_) => self.cfg.gateway_skew_ms,
            EntityId::Server => self.cfg.server_skew_ms,
        };
        Timestamp((time as i64 + skew).clamp(0, u32::MAX as i64) as u32)
    }

    fn push(&mut self, time: u64, what: EventKind) {
        self.seq += 1;
        self.queue.push(QueuedEvent {
            time,
            seq: self.seq,
            what,
        });
    }

    fn snapshot_of(&self, id: EntityId) -> CountersSnapshot {
        let total = match id {
            EntityId::Client(i) => self.clients[i].counters.total(),
            EntityId::Gateway(i) => self.gateways[i].counters.total(),
            EntityId::Server => self.server.counters.total(),
        };
        CountersSnapshot {
            protocol_hashes: total.protocol_hashes,
            pad_hashes: total.pad_hashes,
            xor_masks: total.xor_masks,
        }
    }

    fn record(&mut self, time: u64, f: &Flight, verdict: String, with_ops: bool) {
        self.events.push(WireEvent {
            time,
            session: f.session,
            from: f.from.name(),
            to: f.to.name(),
            kind: f.kind,
            raw_hex: hex::encode(&f.bytes),
            adversary: f.note.clone(),
            verdict,
            receiver_ops: with_ops.then(|| self.snapshot_of(f.to)),
        });
    }

    /// Puts a frame on the wire: counts it for the sender, lets the
    /// adversary act, rolls link loss, and schedules delivery.
    fn send(
        &mut self,
        now: u64,
        session: usize,
        kind: MessageKind,
        from: EntityId,
        to: EntityId,
        bytes: Vec<u8>,
    ) {
        let phase = match kind {
            MessageKind::M1 | MessageKind::M2 => Phase::Pairing,
            _ => Phase::Authentication,
        };
        {
            let counters = match from {
                EntityId::Client(i) => &mut self.clients[i].counters,
                EntityId::Gateway(i) => &mut self.gateways[i].counters,
                EntityId::Server => &mut self.server.counters,
            };
            let c = counters.phase_mut(phase);
            c.frames_sent += 1;
            c.bits_sent += (bytes.len() * 8) as u64;
        }

        let mut flight = Flight {
            session,
            kind,
            bytes,
            from,
            to,
            note: None,
            extra: false,
        };
        let mut extra_delay = 0u64;
        let mut dropped = false;
        let mut inject: Option<Vec<u8>> = None;

        match self.adversary.action(session, kind).cloned() {
            None | Some(AdversaryAction::Pass) => {}
            Some(AdversaryAction::Drop) => {
                flight.note = Some("drop".into());
                dropped = true;
            }
            Some(AdversaryAction::Delay { ms }) => {
                flight.note = Some(format!("delay(+{ms}ms)"));
                extra_delay = ms;
            }
            Some(AdversaryAction::Tamper { bits }) => {
                for b in &bits {
                    flight.bytes[b / 8] ^= 0x80 >> (b % 8);
                }
                flight.note = Some(format!("tamper(bits={bits:?})"));
            }
            Some(AdversaryAction::Replay { from_session }) => {
                if let Some(captured) = self.adversary.captured(from_session, kind) {
                    flight.bytes = captured.clone();
                    flight.note = Some(format!("replay(from_session={from_session})"));
                } else {
                    flight.note = Some(format!("replay-miss(from_session={from_session})"));
                }
            }
            Some(AdversaryAction::Inject { raw_hex }) => {
                inject = Some(hex::decode(&raw_hex).expect("script validated"));
            }
        }

        // The attacker sees every frame that reaches the wire.
        self.adversary.capture(session, kind, &flight.bytes);

        if dropped {
            self.record(now, &flight, "dropped:adversary".into(), false);
            return;
        }

        let (link, rng) = match kind {
            MessageKind::M1 | MessageKind::M2 => {
                let c = self.plan[session].client;
                (self.cfg.client_server, &mut self.cs_rngs[c])
            }
            MessageKind::M3 | MessageKind::M6 => {
                let c = self.plan[session].client;
                (self.cfg.client_gateway, &mut self.cg_rngs[c])
            }
            MessageKind::M4 | MessageKind::M5 => {
                let g = self.plan[session].gateway;
                (self.cfg.gateway_server, &mut self.gs_rngs[g])
            }
        };
        if rng.chance(link.loss_prob) {
            self.record(now, &flight, "dropped:loss".into(), false);
            return;
        }
        let delay = link.delay.sample(rng) + extra_delay;

        if let Some(raw) = inject {
            let injected = Flight {
                bytes: raw,
                note: Some("inject".into()),
                extra: true,
                ..flight.clone()
            };
            self.push(now + delay, EventKind::Deliver(injected));
        }
        self.push(now + delay, EventKind::Deliver(flight));
    }

    fn start_session(&mut self, idx: usize, time: u64) {
        self.states[idx].started_at = time;
        let deadline = time + self.cfg.timeout_factor * self.cfg.delta_t_ms as u64;
        self.push(deadline, EventKind::Deadline(idx));

        let plan = self.plan[idx];
        let c = plan.client;
        match plan.kind {
            SessionKind::Pairing => {
                let now = self.clock(EntityId::Client(c), time);
                let m1 = self.clients[c].start_pairing(now, &mut self.client_rngs[c]);
                self.send(
                    time,
                    idx,
                    MessageKind::M1,
                    EntityId::Client(c),
                    EntityId::Server,
                    m1,
                );
            }
            SessionKind::Authentication => {
                let now = self.clock(EntityId::Client(c), time);
                match self.clients[c].start_auth(now, &mut self.client_rngs[c]) {
                    Ok(m3) => self.send(
                        time,
                        idx,
                        MessageKind::M3,
                        EntityId::Client(c),
                        EntityId::Gateway(plan.gateway),
                        m3,
                    ),
                    Err(e) => self.fail_session(idx, e.code().to_string(), time),
                }
            }
        }
    }

    fn close_session(&mut self, idx: usize, outcome: SessionOutcome, time: u64) {
        if self.states[idx].done {
            return;
        }
        let plan = self.plan[idx];
        let state = &mut self.states[idx];
        state.done = true;
        state.ended_at = time;
        state.outcome = Some(outcome);
        state.client_pseudo_after = Some(self.clients[plan.client].pseudo().to_hex());
        if plan.kind == SessionKind::Authentication {
            state.gateway_pseudo_after = Some(self.gateways[plan.gateway].pseudo().to_hex());
        }
        self.schedule_next(idx, time);
    }

    fn fail_session(&mut self, idx: usize, reason: String, time: u64) {
        self.close_session(idx, SessionOutcome::Failed { reason }, time);
    }

    fn complete_session(&mut self, idx: usize, time: u64) {
        self.close_session(idx, SessionOutcome::Completed, time);
    }

    fn schedule_next(&mut self, idx: usize, time: u64) {
        let next = idx + 1;
        if next < self.plan.len() {
            self.push(
                time + self.cfg.inter_session_gap_ms,
                EventKind::StartSession(next),
            );
        }
    }

    fn deliver(&mut self, time: u64, f: Flight) {
        let session = f.session;
        let plan = self.plan[session];
        let now = self.clock(f.to, time);

        enum Advance {
            None,
            Send(MessageKind, EntityId, EntityId, Vec<u8>),
            PairingDone,
            AuthDone,
        }

        let (verdict, advance) = match (f.kind, f.to) {
            (MessageKind::M1, EntityId::Server) => {
                match self.server.handle_pair_request(&f.bytes, now) {
                    Ok(m2) => (
                        "accepted".to_string(),
                        Advance::Send(
                            MessageKind::M2,
                            EntityId::Server,
                            EntityId::Client(plan.client),
                            m2,
                        ),
                    ),
                    Err(e) => (format!("rejected:{}", e.code()), Advance::None),
                }
            }
            (MessageKind::M2, EntityId::Client(i)) => {
                match self.clients[i].finish_pairing(&f.bytes, now) {
                    Ok(()) => ("accepted".to_string(), Advance::PairingDone),
                    Err(e) => (format!("rejected:{}", e.code()), Advance::None),
                }
            }
            (MessageKind::M3, EntityId::Gateway(g)) => {
                let rng = &mut self.gateway_rngs[g];
                match self.gateways[g].handle_auth_request(&f.bytes, now, rng) {
                    Ok(m4) => (
                        "accepted".to_string(),
                        Advance::Send(MessageKind::M4, EntityId::Gateway(g), EntityId::Server, m4),
                    ),
                    Err(e) => (format!("rejected:{}", e.code()), Advance::None),
                }
            }
            (MessageKind::M4, EntityId::Server) => {
                match self.server.handle_auth_relay(&f.bytes, now) {
                    Ok(m5) => (
                        "accepted".to_string(),
                        Advance::Send(
                            MessageKind::M5,
                            EntityId::Server,
                            EntityId::Gateway(plan.gateway),
                            m5,
                        ),
                    ),
                    Err(e) => (format!("rejected:{}", e.code()), Advance::None),
                }
            }
            (MessageKind::M5, EntityId::Gateway(g)) => {
                match self.gateways[g].handle_auth_grant(&f.bytes, now) {
                    Ok((m6, key)) => {
                        if !f.extra {
                            self.states[session].gateway_key = Some(key);
                        }
                        (
                            "accepted".to_string(),
                            Advance::Send(
                                MessageKind::M6,
                                EntityId::Gateway(g),
                                EntityId::Client(plan.client),
                                m6,
                            ),
                        )
                    }
                    Err(e) => (format!("rejected:{}", e.code()), Advance::None),
                }
            }
            (MessageKind::M6, EntityId::Client(i)) => {
                match self.clients[i].finish_auth(&f.bytes, now) {
                    Ok(key) => {
                        if !f.extra {
                            self.states[session].client_key = Some(key);
                        }
                        ("accepted".to_string(), Advance::AuthDone)
                    }
                    Err(e) => (format!("rejected:{}", e.code()), Advance::None),
                }
            }
            // Misrouted injections land here.
            _ => ("rejected:UnexpectedMessage".to_string(), Advance::None),
        };

        let rejected = verdict.starts_with("rejected:");
        self.record(time, &f, verdict.clone(), true);

        if rejected && !f.extra {
            let reason = verdict.trim_start_matches("rejected:").to_string();
            self.fail_session(session, reason, time);
            return;
        }

        match advance {
            Advance::None => {}
            Advance::Send(kind, from, to, bytes) => {
                // Responses to injected duplicates keep the extra flag so
                // they cannot complete or fail the session they mimic.
                if f.extra {
                    // Responses to injected traffic still travel the
                    // normal links but stay flagged as extra.
                    let delay = match kind {
                        MessageKind::M1 | MessageKind::M2 => self
                            .cfg
                            .client_server
                            .delay
                            .sample(&mut self.cs_rngs[plan.client]),
                        MessageKind::M3 | MessageKind::M6 => self
                            .cfg
                            .client_gateway
                            .delay
                            .sample(&mut self.cg_rngs[plan.client]),
                        MessageKind::M4 | MessageKind::M5 => self
                            .cfg
                            .gateway_server
                            .delay
                            .sample(&mut self.gs_rngs[plan.gateway]),
                    };
                    let dup = Flight {
                        session,
                        kind,
                        bytes,
                        from,
                        to,
                        note: Some("response-to-injected".into()),
                        extra: true,
                    };
                    self.push(time + delay, EventKind::Deliver(dup));
                } else {
                    self.send(time, session, kind, from, to, bytes);
                }
            }
            Advance::PairingDone if !f.extra => self.complete_session(session, time),
            Advance::AuthDone if !f.extra => self.complete_session(session, time),
            _ => {}
        }
    }

    fn run(mut self) -> RunOutcome {
        if !self.plan.is_empty() {
            self.push(0, EventKind::StartSession(0));
        }
        while let Some(ev) = self.queue.pop() {
            match ev.what {
                EventKind::StartSession(i) => self.start_session(i, ev.time),
                EventKind::Deliver(f) => self.deliver(ev.time, f),
                EventKind::Deadline(i) => {
                    if !self.states[i].done {
                        self.fail_session(i, "timeout".into(), ev.time);
                    }
                }
            }
        }
        self.finish()
    }

    fn finish(self) -> RunOutcome {
        let mut sessions = Vec::with_capacity(self.plan.len());
        for (i, (plan, state)) in self.plan.iter().zip(self.states.iter()).enumerate() {
            let completed = state.outcome == Some(SessionOutcome::Completed);
            let auth = plan.kind == SessionKind::Authentication;
            sessions.push(SessionRecord {
                index: i,
                kind: plan.kind,
                client: EntityId::Client(plan.client).name(),
                gateway: auth.then(|| EntityId::Gateway(plan.gateway).name()),
                started_at: state.started_at,
                ended_at: state.ended_at,
                latency_ms: completed.then(|| state.ended_at - state.started_at),
                outcome: state.outcome.clone().unwrap_or(SessionOutcome::Failed {
                    reason: "unfinished".into(),
                }),
                client_key: state.client_key.map(|k| k.key.to_hex()),
                gateway_key: state.gateway_key.map(|k| k.key.to_hex()),
                client_pseudo_after: state.client_pseudo_after.clone(),
                gateway_pseudo_after: state.gateway_pseudo_after.clone(),
            });
        }

        let mut entities = Vec::new();
        for (i, c) in self.clients.iter().enumerate() {
            entities.push(EntityTally {
                name: EntityId::Client(i).name(),
                counters: c.counters,
            });
        }
        for (i, g) in self.gateways.iter().enumerate() {
            entities.push(EntityTally {
                name: EntityId::Gateway(i).name(),
                counters: g.counters,
            });
        }
        entities.push(EntityTally {
            name: "server".into(),
            counters: self.server.counters,
        });

        RunOutcome {
            transcript: Transcript {
                events: self.events,
                sessions,
                entities,
            },
            clients: self.clients,
            gateways: self.gateways,
            server: self.server,
        }
    }
}

/// Runs one scenario: pairing rounds then authentication sessions for
/// every client, under the given adversary script. Identical inputs
/// produce bit-identical transcripts.
pub fn run_scenario(
    config: &RunConfig,
    script: &AdversaryScript,
) -> Result<RunOutcome, ConfigError> {
    Ok(World::build(config, script, None)?.run())
}

/// Same as [`run_scenario`] but with credentials loaded from an existing
/// registry instead of seed-derived provisioning.
pub fn run_scenario_with_registry(
    config: &RunConfig,
    script: &AdversaryScript,
    registry: &Registry,
) -> Result<RunOutcome, ConfigError> {
    Ok(World::build(config, script, Some(registry))?.run())
}

/// Captures `kind` from an honest exchange and replays it into the next
/// exchange of the same kind, `staleness_ms` later (the inter-session
/// gap). The receiver is mid-exchange and receptive, so the verdict
/// isolates the freshness defense.
pub fn adversary_replay_scenario(
    kind: MessageKind,
    staleness_ms: u64,
    seed: u64,
) -> Result<RunOutcome, ConfigError> {
    let mut cfg = RunConfig::new(seed);
    cfg.client_gateway = LinkConfig::fixed(1);
    cfg.gateway_server = LinkConfig::fixed(1);
    cfg.client_server = LinkConfig::fixed(1);
    cfg.inter_session_gap_ms = staleness_ms;
    let (source, target) = match kind {
        MessageKind::M1 | MessageKind::M2 => {
            cfg.pairings = 2;
            cfg.sessions = 0;
            (0, 1)
        }
        _ => {
            cfg.pairings = 1;
            cfg.sessions = 2;
            (1, 2)
        }
    };
    let script = AdversaryScript::single(
        target,
        kind,
        AdversaryAction::Replay {
            from_session: source,
        },
    );
    run_scenario(&cfg, &script)
}

/// Flips one bit of `kind` in flight during an honest exchange.
pub fn adversary_tamper_scenario(
    kind: MessageKind,
    bit: usize,
    seed: u64,
) -> Result<RunOutcome, ConfigError> {
    let mut cfg = RunConfig::new(seed);
    cfg.sessions = 1;
    let session = match kind {
        MessageKind::M1 | MessageKind::M2 => 0,
        _ => 1,
    };
    let script =
        AdversaryScript::single(session, kind, AdversaryAction::Tamper { bits: vec![bit] });
    run_scenario(&cfg, &script)
}

/// Drops one protocol-closing message, then attempts a follow-up honest
/// exchange; the transcript shows whether recovery succeeded.
pub fn adversary_block_scenario(kind: MessageKind, seed: u64) -> Result<RunOutcome, ConfigError> {
    let mut cfg = RunConfig::new(seed);
    let blocked = match kind {
        MessageKind::M2 => {
            cfg.pairings = 2;
            cfg.sessions = 1;
            0
        }
        MessageKind::M5 | MessageKind::M6 => {
            cfg.pairings = 1;
            cfg.sessions = 2;
            1
        }
        other => {
            return Err(ConfigError::Script(format!(
                "block scenario targets M2, M5, or M6, not {other}"
            )))
        }
    };
    let script = AdversaryScript::single(blocked, kind, AdversaryAction::Drop);
    run_scenario(&cfg, &script)
}

/// Untraceability audit over a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceAudit {
    pub frames_scanned: usize,
    /// Windows of any on-wire frame equal to a real identity.
    pub real_id_hits: usize,
    /// Windows of any on-wire frame equal to a long-term secret key.
    pub secret_hits: usize,
    /// Repeated (principal, pseudonym) observations across sessions.
    pub pseudo_repeats: usize,
}

pub fn untraceability_audit(outcome: &RunOutcome) -> TraceAudit {
    let mut real_ids: Vec<[u8; 16]> = Vec::new();
    for c in &outcome.clients {
        real_ids.push(*c.id().as_bytes());
    }
    for g in &outcome.gateways {
        real_ids.push(*g.id().as_bytes());
    }
    let secrets: Vec<[u8; 16]> = outcome
        .server
        .registry()
        .tuples(Role::Client)
        .chain(outcome.server.registry().tuples(Role::Gateway))
        .map(|t| *t.secret.as_bytes())
        .collect();

    let mut hits = 0;
    let mut secret_hits = 0;
    for ev in &outcome.transcript.events {
        let bytes = hex::decode(&ev.raw_hex).expect("transcript stores valid hex");
        for window in bytes.windows(16) {
            if real_ids.iter().any(|id| id == window) {
                hits += 1;
            }
            if secrets.iter().any(|s| s == window) {
                secret_hits += 1;
            }
        }
    }

    let mut pseudo_repeats = 0;
    let mut seen: std::collections::BTreeMap<&str, Vec<&str>> = std::collections::BTreeMap::new();
    for s in &outcome.transcript.sessions {
        if let Some(p) = &s.client_pseudo_after {
            let hist = seen.entry(s.client.as_str()).or_default();
            if hist.contains(&p.as_str()) {
                pseudo_repeats += 1;
            } else {
                hist.push(p.as_str());
            }
        }
        if let (Some(gw), Some(p)) = (&s.gateway, &s.gateway_pseudo_after) {
            let hist = seen.entry(gw.as_str()).or_default();
            if hist.contains(&p.as_str()) {
                pseudo_repeats += 1;
            } else {
                hist.push(p.as_str());
            }
        }
    }

    TraceAudit {
        frames_scanned: outcome.transcript.events.len(),
        real_id_hits: hits,
        secret_hits,
        pseudo_repeats,
    }
}
