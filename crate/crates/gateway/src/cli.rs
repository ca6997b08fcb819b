//! `qnet` command line.
//!
//! Exit codes: 0 success; 1 a request ended Failed; 2 invalid input
//! (unparsable or schema-invalid documents, bad arguments); 3 IO or
//! runtime failure.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};

use crate::files::{self, LoadError, Validated};
use crate::output;
use crate::service::{self, AppState, AuditSink, Engine, Pacing};

pub const EXIT_FAILED_RECORDS: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qnet", version, about = "Entanglement-distribution control plane and simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scenario to quiescence and write its results directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value`; `params.` and `topology.` prefixes address the
        /// referenced documents.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a topology or scenario document.
    Validate { file: PathBuf },
    /// Predicted visibility against C-band launch power, as CSV.
    SweepCoexistence {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        powers: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a results directory.
    Report { dir: PathBuf },
    /// Serve the HTTP API over a live simulation of a scenario.
    Serve {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Virtual seconds per wall second; 0 runs each submission to
        /// quiescence immediately.
        #[arg(long, default_value_t = 100.0)]
        speed: f64,
        #[arg(long, env = "QNET_LISTEN_ADDR", default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, env = "QNET_TOKEN", hide_env_values = true)]
        token: String,
        #[arg(long, default_value = "qnet-audit.ndjson")]
        audit: PathBuf,
    },
}

fn load_error_code(e: &LoadError) -> i32 {
    match e {
        LoadError::Io { .. } => EXIT_RUNTIME,
        _ => EXIT_INVALID_INPUT,
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, String> {
    raw.iter()
        .map(|s| files::split_override(s).map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID_INPUT } else { 0 };
            if e.use_stderr() {
                let _ = write!(err, "{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    macro_rules! fail {
        ($code:expr, $($arg:tt)*) => {{
            let _ = writeln!(err, $($arg)*);
            return $code;
        }};
    }
    match cli.cmd {
        Cmd::Run { scenario, out: dir, seed, overrides } => {
            let overrides = match parse_overrides(&overrides) {
                Ok(o) => o,
                Err(e) => fail!(EXIT_INVALID_INPUT, "error: {e}"),
            };
            let loaded = match files::load_scenario(&scenario, &overrides) {
                Ok(l) => l,
                Err(e) => fail!(load_error_code(&e), "error: {e}"),
            };
            match output::run_to_dir(&loaded, seed, &dir) {
                Ok(summary) => {
                    for (k, v) in summary.rows() {
                        let _ = writeln!(out, "{k}: {v}");
                    }
                    summary.exit_code()
                }
                Err(e) => fail!(EXIT_RUNTIME, "error: {e}"),
            }
        }
        Cmd::Validate { file } => match files::validate_file(&file) {
            Ok(Validated::Topology { nodes, links, channels }) => {
                let _ = writeln!(out, "ok: topology with {nodes} nodes, {links} links, {channels} channels");
                0
            }
            Ok(Validated::Scenario { requests, faults }) => {
                let _ = writeln!(out, "ok: scenario with {requests} requests, {faults} faults");
                0
            }
            Err(e) => fail!(load_error_code(&e), "error: {e}"),
        },
        Cmd::SweepCoexistence { scenario, powers, out: path } => {
            let loaded = match files::load_scenario(&scenario, &[]) {
                Ok(l) => l,
                Err(e) => fail!(load_error_code(&e), "error: {e}"),
            };
            let points = match output::coexistence_sweep(&loaded, &powers) {
                Ok(p) => p,
                Err(e) => fail!(EXIT_INVALID_INPUT, "error: {e}"),
            };
            let mut w = csv::Writer::from_writer(Vec::new());
            for p in &points {
                if let Err(e) = w.serialize(p) {
                    fail!(EXIT_RUNTIME, "error: {e}");
                }
            }
            let bytes = match w.into_inner() {
                Ok(b) => b,
                Err(e) => fail!(EXIT_RUNTIME, "error: {e}"),
            };
            match path {
                Some(p) => {
                    if let Err(e) = std::fs::write(&p, &bytes) {
                        fail!(EXIT_RUNTIME, "error: {}: {e}", p.display());
                    }
                }
                None => {
                    let _ = out.write_all(&bytes);
                }
            }
            0
        }
        Cmd::Report { dir } => match output::report(&dir) {
            Ok(summary) => {
                for (k, v) in summary.rows() {
                    let _ = writeln!(out, "{k}: {v}");
                }
                summary.exit_code()
            }
            Err(e) => fail!(EXIT_RUNTIME, "error: {e}"),
        },
        Cmd::Serve { scenario, seed, speed, listen, token, audit } => {
            if token.is_empty() {
                fail!(EXIT_INVALID_INPUT, "error: QNET_TOKEN must not be empty");
            }
            if speed.is_nan() || speed < 0.0 {
                fail!(EXIT_INVALID_INPUT, "error: --speed must be >= 0");
            }
            let loaded = match files::load_scenario(&scenario, &[]) {
                Ok(l) => l,
                Err(e) => fail!(load_error_code(&e), "error: {e}"),
            };
            let mut sc = loaded.scenario.clone();
            if let Some(s) = seed {
                sc.seed = s;
            }
            let sim = match qnet_core::controlplane::Simulation::from_scenario(loaded.graph, loaded.params, &sc) {
                Ok(s) => s,
                Err(e) => fail!(EXIT_INVALID_INPUT, "error: {e}"),
            };
            let sink: AuditSink = match OpenOptions::new().create(true).append(true).open(&audit) {
                Ok(f) => Arc::new(Mutex::new(Box::new(f))),
                Err(e) => fail!(EXIT_RUNTIME, "error: {}: {e}", audit.display()),
            };
            let pacing = if speed == 0.0 { Pacing::Instant } else { Pacing::Scaled(speed) };
            let engine = Engine::spawn(sim, pacing);
            let app = service::router(AppState::new(&engine, &token, sink));
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => fail!(EXIT_RUNTIME, "error: {e}"),
            };
            let served = rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&listen).await?;
                let _ = writeln!(out, "listening on {}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            });
            engine.shutdown();
            match served {
                Ok(()) => 0,
                Err(e) => fail!(EXIT_RUNTIME, "error: {e}"),
            }
        }
    }
}
