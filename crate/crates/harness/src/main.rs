//! `govgw` — one-shot management CLI for the governance gateway.
//!
//! Commands are persisted to a replay log; every invocation rebuilds the
//! deployment by replaying the log, applies the new command, and saves.
//! That keeps each command deterministic without a resident daemon.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use govgw_core::manager::Middleware;
use govgw_core::registry::CapabilityDescriptor;
use govgw_core::store::ProfileStore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use govgw::ops::{self, OpClass, OpError};
use govgw::providers::MockProviders;
use govgw::fixtures;

#[derive(Parser, Debug)]
#[command(
    name = "govgw",
    about = "Security governance gateway management CLI",
    arg_required_else_help = true
)]
struct Cli {
    /// deposit | validate | instantiate | enact | adapt | snapshot |
    /// restore | status | audit | run-scenario
    command: String,
    /// JSON input file (profile document, enact context, adapt details).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Profile id the command applies to.
    #[arg(long)]
    profile: Option<String>,
    /// Adaptation kind: S1..S6.
    #[arg(long)]
    kind: Option<String>,
    /// Snapshot id for `restore`.
    #[arg(long)]
    snapshot: Option<String>,
    /// Registry seed file (JSON list of capability descriptors);
    /// defaults to the built-in Virtual Music Store seed.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Config file path; the GOVGW_CONFIG environment variable overrides.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
struct Config {
    /// Where the replay-log state lives.
    state_path: Option<PathBuf>,
    /// Registry seed file applied on every rebuild.
    registry_seed: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default)]
struct StateFile {
    /// Verbs already applied, replayed in order on load.
    log: Vec<LogEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogEntry {
    verb: String,
    args: Value,
}

fn load_config(cli: &Cli) -> Result<Config, OpsFailure> {
    let path = std::env::var_os("GOVGW_CONFIG")
        .map(PathBuf::from)
        .or_else(|| cli.config.clone());
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                OpsFailure::operational("config-unreadable", format!("{}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                OpsFailure::validation("config-invalid", format!("{}: {e}", path.display()))
            })
        }
        None => Ok(Config::default()),
    }
}

/// CLI-level failure with the same class split as verb errors.
struct OpsFailure {
    code: String,
    detail: String,
    class: OpClass,
}

impl OpsFailure {
    fn validation(code: &str, detail: impl std::fmt::Display) -> Self {
        Self {
            code: code.into(),
            detail: detail.to_string(),
            class: OpClass::Validation,
        }
    }

    fn operational(code: &str, detail: impl std::fmt::Display) -> Self {
        Self {
            code: code.into(),
            detail: detail.to_string(),
            class: OpClass::Operational,
        }
    }
}

impl From<OpError> for OpsFailure {
    fn from(e: OpError) -> Self {
        Self {
            code: e.code,
            detail: e.detail,
            class: e.class,
        }
    }
}

fn read_json_file(path: &PathBuf) -> Result<Value, OpsFailure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        OpsFailure::operational("file-unreadable", format!("{}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| OpsFailure::validation("file-invalid", format!("{}: {e}", path.display())))
}

fn build_middleware(config: &Config, cli: &Cli) -> Result<Middleware, OpsFailure> {
    let seed_path = cli.registry.clone().or_else(|| config.registry_seed.clone());
    let mut mw = Middleware::new(ProfileStore::new());
    let seed: Vec<CapabilityDescriptor> = match seed_path {
        Some(path) => serde_json::from_value(read_json_file(&path)?).map_err(|e| {
            OpsFailure::validation("registry-seed-invalid", format!("{}: {e}", path.display()))
        })?,
        None => fixtures::registry_seed(),
    };
    for descriptor in seed {
        mw.registry
            .register(descriptor)
            .map_err(|e| OpsFailure::validation("registry-seed-rejected", e))?;
    }
    mw.add_template(fixtures::cp2_acl_template());
    Ok(mw)
}

fn require<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str, OpsFailure> {
    value
        .as_deref()
        .ok_or_else(|| OpsFailure::validation("bad-arguments", format!("`--{flag}` is required")))
}

/// Translate CLI flags into the verb's JSON argument object.
fn verb_args(cli: &Cli) -> Result<Value, OpsFailure> {
    Ok(match cli.command.as_str() {
        "deposit" => {
            let path = cli.file.as_ref().ok_or_else(|| {
                OpsFailure::validation("bad-arguments", "`--file` is required")
            })?;
            json!({"document": read_json_file(path)?})
        }
        "validate" | "instantiate" | "snapshot" | "audit" => {
            json!({"profile": require(&cli.profile, "profile")?})
        }
        "enact" => {
            let path = cli.file.as_ref().ok_or_else(|| {
                OpsFailure::validation("bad-arguments", "`--file` (enact context) is required")
            })?;
            json!({
                "profile": require(&cli.profile, "profile")?,
                "context": read_json_file(path)?,
            })
        }
        "adapt" => {
            let kind = require(&cli.kind, "kind")?;
            let mut request = match &cli.file {
                Some(path) => read_json_file(path)?,
                None => json!({}),
            };
            let Some(map) = request.as_object_mut() else {
                return Err(OpsFailure::validation(
                    "bad-arguments",
                    "adapt `--file` must hold a JSON object",
                ));
            };
            map.insert("kind".into(), json!(kind));
            map.insert("profile_id".into(), json!(require(&cli.profile, "profile")?));
            json!({"request": request})
        }
        "restore" => json!({"snapshot": require(&cli.snapshot, "snapshot")?}),
        "status" => match &cli.profile {
            Some(id) => json!({"profile": id}),
            None => json!({}),
        },
        "run-scenario" => json!({}),
        other => {
            return Err(OpsFailure::validation(
                "unknown-verb",
                format!("unknown command `{other}`"),
            ))
        }
    })
}

fn run(cli: &Cli) -> Result<Value, OpsFailure> {
    let config = load_config(cli)?;
    let state_path = config
        .state_path
        .clone()
        .unwrap_or_else(|| PathBuf::from("govgw-state.json"));

    let mut state: StateFile = if state_path.exists() {
        serde_json::from_value(read_json_file(&state_path)?).map_err(|e| {
            OpsFailure::operational("state-corrupt", format!("{}: {e}", state_path.display()))
        })?
    } else {
        StateFile::default()
    };

    let mut mw = build_middleware(&config, cli)?;
    let forwarder = MockProviders::new();
    for entry in &state.log {
        ops::apply(&mut mw, &forwarder, &entry.verb, &entry.args).map_err(|e| {
            OpsFailure::operational(
                "state-replay-failed",
                format!("step `{}` no longer applies: {}", entry.verb, e.detail),
            )
        })?;
    }

    let args = verb_args(cli)?;
    let output = ops::apply(&mut mw, &forwarder, &cli.command, &args)?;

    // Only state-changing verbs extend the replay log.
    let mutating = matches!(
        cli.command.as_str(),
        "deposit" | "validate" | "instantiate" | "enact" | "adapt" | "snapshot" | "restore"
    );
    if mutating {
        state.log.push(LogEntry {
            verb: cli.command.clone(),
            args,
        });
        let serialized = serde_json::to_string_pretty(&state)
            .map_err(|e| OpsFailure::operational("state-serialize", e))?;
        std::fs::write(&state_path, serialized).map_err(|e| {
            OpsFailure::operational("state-unwritable", format!("{}: {e}", state_path.display()))
        })?;
    }
    Ok(output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(failure) => {
            println!(
                "{}",
                json!({"error": failure.code, "detail": failure.detail})
            );
            match failure.class {
                OpClass::Validation => ExitCode::from(1),
                OpClass::Operational => ExitCode::from(2),
            }
        }
    }
}
