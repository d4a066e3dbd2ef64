//! Command-line driver: provision credentials, run handshakes, stage
//! attacks, and emit overhead/audit reports.
//!
//! Exit codes: 0 when every checked property holds, 1 on a protocol
//! property violation, 2 on configuration or usage errors. All output is
//! reproducible under a fixed `--seed`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lightiot::metrics;
use lightiot::registry::{Registry, Role};
use lightiot::rng::DetRng;
use lightiot::sim::{
    adversary_block_scenario, adversary_replay_scenario, adversary_tamper_scenario, run_scenario,
    run_scenario_with_registry, untraceability_audit, AdversaryScript, LinkConfig, RunConfig,
    RunOutcome, SessionOutcome, Transcript,
};
use lightiot::wire::MessageKind;

#[derive(Parser)]
#[command(
    name = "lightiot",
    about = "Three-party wearable/gateway/server authentication protocol simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a credential registry file (offline registration).
    Provision(ProvisionArgs),
    /// Run pairing exchanges only and report.
    Pair(RunArgs),
    /// Run pairing plus authentication sessions and report.
    Auth(RunArgs),
    /// Run a full scenario, optionally under an adversary script.
    Simulate(SimulateArgs),
    /// Stage a canned attack scenario and report the verdicts.
    Attack(AttackArgs),
    /// Rebuild the overhead report from a stored transcript.
    Report(ReportArgs),
}

#[derive(Args)]
struct ProvisionArgs {
    #[arg(long, default_value_t = 1)]
    clients: usize,
    #[arg(long, default_value_t = 1)]
    gateways: usize,
    /// Deterministic seed (mandatory; no ambient randomness).
    #[arg(long)]
    seed: u64,
    /// Output path for the registry file.
    #[arg(long, default_value = "registry.jsonl")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct CommonRunArgs {
    /// Deterministic seed (mandatory; no ambient randomness).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    gateways: Option<usize>,
    /// Freshness window in milliseconds.
    #[arg(long)]
    delta_t_ms: Option<u32>,
    /// Fixed client-gateway link delay (ms).
    #[arg(long)]
    cg_delay_ms: Option<u64>,
    /// Fixed gateway-server link delay (ms).
    #[arg(long)]
    gs_delay_ms: Option<u64>,
    /// Fixed client-server link delay (ms), used by pairing.
    #[arg(long)]
    cs_delay_ms: Option<u64>,
    #[arg(long)]
    cg_loss: Option<f64>,
    #[arg(long)]
    gs_loss: Option<f64>,
    #[arg(long)]
    cs_loss: Option<f64>,
    /// Registry file to load (default: $LIGHTIOT_REGISTRY if set,
    /// otherwise seed-derived provisioning).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// key=value config file applied underneath explicit flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the overhead report as JSON here.
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// Write the full transcript (JSON-lines) here.
    #[arg(long)]
    transcript_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Authentication sessions per client (ignored by `pair`).
    #[arg(long)]
    sessions: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Authentication sessions per client (default 1).
    #[arg(long)]
    sessions: Option<usize>,
    /// Adversary script (JSON rule list).
    #[arg(long)]
    adversary: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Scenario {
    Replay,
    Tamper,
    Block,
    Trace,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    scenario: Scenario,
    /// Target message kind (M1..M6); required by replay/tamper/block.
    #[arg(long)]
    message: Option<String>,
    /// Replay staleness in milliseconds.
    #[arg(long, default_value_t = 5000)]
    staleness: u64,
    /// Bit position to flip (tamper).
    #[arg(long)]
    bit: Option<usize>,
    /// Sessions to run (trace).
    #[arg(long, default_value_t = 100)]
    sessions: usize,
    /// Deterministic seed (mandatory; no ambient randomness).
    #[arg(long)]
    seed: u64,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Transcript file written by `--transcript-out`.
    #[arg(long)]
    transcript: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Anything that should terminate with exit code 2.
#[derive(Debug)]
struct ConfigFailure(String);

impl<E: std::fmt::Display> From<E> for ConfigFailure {
    fn from(e: E) -> Self {
        ConfigFailure(e.to_string())
    }
}

fn parse_config_file(
    path: &Path,
    cfg: &mut RunConfig,
    sessions: &mut usize,
) -> Result<(), ConfigFailure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigFailure(format!("{}: {e}", path.display())))?;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigFailure(format!(
                "{} line {}: expected key=value",
                path.display(),
                i + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |e: &dyn std::fmt::Display| {
            ConfigFailure(format!("{} line {}: {key}: {e}", path.display(), i + 1))
        };
        match key {
            "clients" => cfg.clients = value.parse().map_err(|e| bad(&e))?,
            "gateways" => cfg.gateways = value.parse().map_err(|e| bad(&e))?,
            "sessions" => *sessions = value.parse().map_err(|e| bad(&e))?,
            "delta_t_ms" => cfg.delta_t_ms = value.parse().map_err(|e| bad(&e))?,
            "cg_delay_ms" => {
                cfg.client_gateway = LinkConfig::fixed(value.parse().map_err(|e| bad(&e))?)
            }
            "gs_delay_ms" => {
                cfg.gateway_server = LinkConfig::fixed(value.parse().map_err(|e| bad(&e))?)
            }
            "cs_delay_ms" => {
                cfg.client_server = LinkConfig::fixed(value.parse().map_err(|e| bad(&e))?)
            }
            "cg_loss" => cfg.client_gateway.loss_prob = value.parse().map_err(|e| bad(&e))?,
            "gs_loss" => cfg.gateway_server.loss_prob = value.parse().map_err(|e| bad(&e))?,
            "cs_loss" => cfg.client_server.loss_prob = value.parse().map_err(|e| bad(&e))?,
            "gap_ms" => cfg.inter_session_gap_ms = value.parse().map_err(|e| bad(&e))?,
            other => {
                return Err(ConfigFailure(format!(
                    "{} line {}: unknown key '{other}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(())
}

fn registry_path(explicit: &Option<PathBuf>) -> Option<PathBuf> {
    explicit.clone().or_else(|| {
        std::env::var("LIGHTIOT_REGISTRY")
            .ok()
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
    })
}

fn build_config(
    common: &CommonRunArgs,
    sessions_flag: Option<usize>,
) -> Result<(RunConfig, Option<Registry>), ConfigFailure> {
    let mut cfg = RunConfig::new(common.seed);
    let mut sessions = 1usize;
    if let Some(path) = &common.config {
        parse_config_file(path, &mut cfg, &mut sessions)?;
    }
    // Explicit flags override the config file.
    if let Some(v) = sessions_flag {
        sessions = v;
    }
    if let Some(v) = common.clients {
        cfg.clients = v;
    }
    if let Some(v) = common.gateways {
        cfg.gateways = v;
    }
    if let Some(v) = common.delta_t_ms {
        cfg.delta_t_ms = v;
    }
    if let Some(v) = common.cg_delay_ms {
        cfg.client_gateway.delay = lightiot::sim::DelayModel::Fixed { ms: v };
    }
    if let Some(v) = common.gs_delay_ms {
        cfg.gateway_server.delay = lightiot::sim::DelayModel::Fixed { ms: v };
    }
    if let Some(v) = common.cs_delay_ms {
        cfg.client_server.delay = lightiot::sim::DelayModel::Fixed { ms: v };
    }
    if let Some(v) = common.cg_loss {
        cfg.client_gateway.loss_prob = v;
    }
    if let Some(v) = common.gs_loss {
        cfg.gateway_server.loss_prob = v;
    }
    if let Some(v) = common.cs_loss {
        cfg.client_server.loss_prob = v;
    }
    cfg.sessions = sessions;

    let registry = match registry_path(&common.registry) {
        Some(path) => {
            let reg = Registry::load(&path)?;
            // Entity counts follow the file unless flags insist.
            if common.clients.is_none() {
                cfg.clients = reg.tuples(Role::Client).count();
            }
            if common.gateways.is_none() {
                cfg.gateways = reg.tuples(Role::Gateway).count();
            }
            Some(reg)
        }
        None => None,
    };
    Ok((cfg, registry))
}

fn execute(
    cfg: &RunConfig,
    script: &AdversaryScript,
    registry: &Option<Registry>,
) -> Result<RunOutcome, ConfigFailure> {
    match registry {
        Some(reg) => Ok(run_scenario_with_registry(cfg, script, reg)?),
        None => Ok(run_scenario(cfg, script)?),
    }
}

fn emit_outputs(out: &RunOutcome, common: &CommonRunArgs) -> Result<(), ConfigFailure> {
    if let Some(path) = &common.transcript_out {
        out.transcript.save_jsonl(path)?;
    }
    let report = metrics::snapshot(&out.transcript);
    if let Some(path) = &common.json_out {
        std::fs::write(path, report.to_json())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_provision(args: &ProvisionArgs) -> Result<ExitCode, ConfigFailure> {
    let mut registry = Registry::new();
    for g in 0..args.gateways {
        let mut rng = DetRng::stream(args.seed, &format!("provision-gateway-{g}"));
        registry.provision(Role::Gateway, rng.next_id(), rng.next_id(), rng.next_id())?;
    }
    for c in 0..args.clients {
        let mut rng = DetRng::stream(args.seed, &format!("provision-client-{c}"));
        registry.provision(Role::Client, rng.next_id(), rng.next_id(), rng.next_id())?;
    }
    registry.save(&args.out)?;
    println!(
        "provisioned {} clients and {} gateways into {}",
        args.clients,
        args.gateways,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: &RunArgs, pairing_only: bool) -> Result<ExitCode, ConfigFailure> {
    let sessions = if pairing_only { Some(0) } else { args.sessions };
    let (cfg, registry) = build_config(&args.common, sessions)?;
    let out = execute(&cfg, &AdversaryScript::empty(), &registry)?;
    emit_outputs(&out, &args.common)?;
    let ok = out.transcript.sessions.iter().all(|s| s.completed());
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode, ConfigFailure> {
    let (cfg, registry) = build_config(&args.common, args.sessions)?;
    let script = match &args.adversary {
        Some(path) => AdversaryScript::load(path)?,
        None => AdversaryScript::empty(),
    };
    let out = execute(&cfg, &script, &registry)?;
    emit_outputs(&out, &args.common)?;

    let report = metrics::snapshot(&out.transcript);
    let sizes_ok = report
        .frames
        .iter()
        .all(|f| f.count == 0 || f.bits_each == f.reference_bits);
    let honest_ok =
        !script.rules.is_empty() || out.transcript.sessions.iter().all(|s| s.completed());
    Ok(if sizes_ok && honest_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn need_message(args: &AttackArgs) -> Result<MessageKind, ConfigFailure> {
    let m = args
        .message
        .as_deref()
        .ok_or_else(|| ConfigFailure("--message is required for this scenario".into()))?;
    MessageKind::parse(m).ok_or_else(|| ConfigFailure(format!("unknown message kind '{m}'")))
}

fn cmd_attack(args: &AttackArgs) -> Result<ExitCode, ConfigFailure> {
    let (out, ok, summary) = match args.scenario {
        Scenario::Replay => {
            let kind = need_message(args)?;
            let out = adversary_replay_scenario(kind, args.staleness, args.seed)?;
            let verdict = out
                .transcript
                .events
                .iter()
                .find(|e| {
                    e.kind == kind
                        && e.adversary
                            .as_deref()
                            .is_some_and(|n| n.starts_with("replay("))
                })
                .map(|e| e.verdict.clone())
                .unwrap_or_else(|| "not-staged".into());
            let delta_t = 2000u64; // scenario default window
            let ok = if args.staleness > delta_t {
                verdict == "rejected:StaleTimestamp"
            } else {
                true // within-window outcome is reported, not asserted
            };
            let summary = format!(
                "replay {kind} staleness {}ms -> verdict {verdict}",
                args.staleness
            );
            (out, ok, summary)
        }
        Scenario::Tamper => {
            let kind = need_message(args)?;
            let bit = args
                .bit
                .ok_or_else(|| ConfigFailure("--bit is required for tamper".into()))?;
            if bit >= kind.bits() {
                return Err(ConfigFailure(format!(
                    "bit {bit} outside {kind} ({} bits)",
                    kind.bits()
                )));
            }
            let out = adversary_tamper_scenario(kind, bit, args.seed)?;
            let mismatched =
                out.transcript.sessions.iter().any(
                    |s| matches!((&s.client_key, &s.gateway_key), (Some(a), Some(b)) if a != b),
                );
            let rejected = out
                .transcript
                .events
                .iter()
                .any(|e| e.verdict.starts_with("rejected:"));
            let ok = !mismatched && rejected;
            let summary = format!(
                "tamper {kind} bit {bit} -> rejected somewhere: {rejected}, mismatched keys: {mismatched}"
            );
            (out, ok, summary)
        }
        Scenario::Block => {
            let kind = need_message(args)?;
            let out = adversary_block_scenario(kind, args.seed)?;
            let recovered = out
                .transcript
                .sessions
                .last()
                .is_some_and(|s| s.completed());
            let blocked_failed = out
                .transcript
                .sessions
                .iter()
                .any(|s| matches!(s.outcome, SessionOutcome::Failed { .. }));
            let ok = recovered && blocked_failed;
            let summary = format!("block {kind} -> blocked exchange failed: {blocked_failed}, next exchange recovered: {recovered}");
            (out, ok, summary)
        }
        Scenario::Trace => {
            let mut cfg = RunConfig::new(args.seed);
            cfg.sessions = args.sessions;
            cfg.inter_session_gap_ms = 1;
            let out = run_scenario(&cfg, &AdversaryScript::empty())?;
            let audit = untraceability_audit(&out);
            let ok = audit.real_id_hits == 0 && audit.pseudo_repeats == 0;
            let summary = format!(
                "trace over {} sessions -> real-id hits {}, pseudonym repeats {}",
                args.sessions, audit.real_id_hits, audit.pseudo_repeats
            );
            (out, ok, summary)
        }
    };

    let report = metrics::snapshot(&out.transcript);
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    println!("{summary}");
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode, ConfigFailure> {
    let transcript = Transcript::load_jsonl(&args.transcript)?;
    let report = metrics::snapshot(&transcript);
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Provision(args) => cmd_provision(args),
        Command::Pair(args) => cmd_run(args, true),
        Command::Auth(args) => cmd_run(args, false),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(ConfigFailure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
