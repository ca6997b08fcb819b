//! Headless runs and the files they leave in a results directory.
//!
//! | file | content |
//! |---|---|
//! | `trace.ndjson` | every bus message, one JSON object per line |
//! | `results.ndjson` | one `ResultRecord` per terminal request |
//! | `summary.csv` | `metric,value` rows |
//! | `batches.csv` | per-batch CAR and visibility series |
//! | `coexistence.csv` | visibility against launch power (when swept) |
//! | `car.csv` | CAR against clock power (when swept) |
//! | `wallclock.json` | wall-clock timings; the only nondeterministic file |

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use qnet_core::coexistence::{CarPoint, SweepPoint};
use qnet_core::controlplane::{RejectionReason, RequestState, ResultRecord, SimTrace, Simulation};
use qnet_core::photonics::Nonclassicality;
use qnet_core::simkernel::{ns_to_secs, secs_to_ns};
use serde::{Deserialize, Serialize};

use crate::files::LoadedScenario;

pub const TRACE_FILE: &str = "trace.ndjson";
pub const RESULTS_FILE: &str = "results.ndjson";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BATCHES_FILE: &str = "batches.csv";
pub const COEXISTENCE_FILE: &str = "coexistence.csv";
pub const CAR_FILE: &str = "car.csv";
pub const WALLCLOCK_FILE: &str = "wallclock.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub requests: usize,
    pub stored: usize,
    pub rejected: usize,
    pub blocked: usize,
    pub failed: usize,
    pub unfinished: usize,
    pub ebits_delivered: u64,
    /// Share of requests refused for lack of resources: Blocked, or
    /// Rejected for capacity or for no feasible path.
    pub blocking_probability: f64,
    pub mean_time_to_stored_s: Option<f64>,
    pub virtual_end_s: f64,
    pub protocol_errors: usize,
}

impl Summary {
    pub fn from_results(results: &[ResultRecord], submitted: usize) -> Self {
        let mut s = Summary { requests: submitted.max(results.len()), ..Summary::default() };
        let mut blocking = 0;
        let mut stored_time = 0.0;
        for r in results {
            s.ebits_delivered += r.ebits_delivered;
            match &r.final_state {
                RequestState::Stored => {
                    s.stored += 1;
                    stored_time += r.virtual_duration_s;
                }
                RequestState::Rejected(reason) => {
                    s.rejected += 1;
                    if matches!(reason, RejectionReason::NoCapacity | RejectionReason::NoFeasiblePaths) {
                        blocking += 1;
                    }
                }
                RequestState::Blocked => {
                    s.blocked += 1;
                    blocking += 1;
                }
                RequestState::Failed(_) => s.failed += 1,
                _ => {}
            }
        }
        s.unfinished = s.requests - results.len();
        if s.requests > 0 {
            s.blocking_probability = blocking as f64 / s.requests as f64;
        }
        if s.stored > 0 {
            s.mean_time_to_stored_s = Some(stored_time / s.stored as f64);
        }
        s
    }

    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("requests", self.requests.to_string()),
            ("stored", self.stored.to_string()),
            ("rejected", self.rejected.to_string()),
            ("blocked", self.blocked.to_string()),
            ("failed", self.failed.to_string()),
            ("unfinished", self.unfinished.to_string()),
            ("ebits_delivered", self.ebits_delivered.to_string()),
            ("blocking_probability", self.blocking_probability.to_string()),
            ("mean_time_to_stored_s", self.mean_time_to_stored_s.map_or(String::new(), |v| v.to_string())),
            ("virtual_end_s", self.virtual_end_s.to_string()),
            ("protocol_errors", self.protocol_errors.to_string()),
        ]
    }

    /// Exit status of a run: 0 iff nothing ended Failed.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            1
        }
    }
}

/// Runs a scenario to quiescence (or its horizon).
pub fn simulate(loaded: &LoadedScenario, seed: Option<u64>) -> Result<Simulation, String> {
    let mut scenario = loaded.scenario.clone();
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let mut sim = Simulation::from_scenario(loaded.graph.clone(), loaded.params.clone(), &scenario)?;
    sim.run_until(scenario.horizon_s.map(secs_to_ns));
    Ok(sim)
}

pub fn coexistence_sweep(loaded: &LoadedScenario, powers_dbm: &[f64]) -> Result<Vec<SweepPoint>, String> {
    let c = &loaded.params.coexistence;
    let k = c.calibrate().map_err(|e| e.to_string())?;
    c.sweep(&c.reference_basis, k, powers_dbm).map_err(|e| e.to_string())
}

pub fn car_sweep(loaded: &LoadedScenario, powers_mw: &[f64]) -> Result<Vec<CarPoint>, String> {
    let mut study = loaded.params.car_study.clone();
    study.powers_mw = powers_mw.to_vec();
    let cal = study.calibrate().map_err(|e| e.to_string())?;
    study.sweep(&cal).map_err(|e| e.to_string())
}

const BATCH_COLUMNS: &[&str] = &[
    "request_id",
    "index",
    "round",
    "t_s",
    "basis",
    "coincidences",
    "accidentals",
    "ebits",
    "car",
    "visibility",
    "nonclassical",
];
const COEXISTENCE_COLUMNS: &[&str] = &["launch_power_dbm", "predicted_visibility", "nonclassical"];
const CAR_COLUMNS: &[&str] = &["clock_power_mw", "car", "car_sigma"];

#[derive(Debug, Serialize)]
struct BatchRow<'a> {
    request_id: &'a str,
    index: u32,
    round: u32,
    t_s: f64,
    basis: &'a str,
    coincidences: u64,
    accidentals: u64,
    ebits: u64,
    car: f64,
    visibility: f64,
    nonclassical: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Wallclock {
    started_unix_s: f64,
    finished_unix_s: f64,
    elapsed_s: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn io<T>(r: Result<T, impl std::fmt::Display>, what: &Path) -> Result<T, String> {
    r.map_err(|e| format!("{}: {e}", what.display()))
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), String> {
    let mut w = BufWriter::new(io(File::create(path), path)?);
    for item in items {
        let line = io(serde_json::to_string(&item), path)?;
        io(writeln!(w, "{line}"), path)?;
    }
    io(w.flush(), path)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, String> {
    let f = io(File::open(path), path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = io(line, path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<SimTrace>, String> {
    let text = io(fs::read_to_string(path), path)?;
    text.lines().filter(|l| !l.is_empty()).map(|l| io(serde_json::from_str(l), path)).collect()
}

/// Header first, so an empty series still names its columns.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), String> {
    let mut w = io(csv::WriterBuilder::new().has_headers(false).from_path(path), path)?;
    io(w.write_record(header), path)?;
    for r in rows {
        io(w.serialize(r), path)?;
    }
    io(w.flush(), path)
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), String> {
    let mut w = io(csv::Writer::from_path(path), path)?;
    io(w.write_record(["metric", "value"]), path)?;
    for (k, v) in summary.rows() {
        io(w.write_record([k, v.as_str()]), path)?;
    }
    io(w.flush(), path)
}

/// Everything `run` writes, plus the summary it computed.
pub fn run_to_dir(loaded: &LoadedScenario, seed: Option<u64>, out: &Path) -> Result<Summary, String> {
    let started = unix_now();
    let clock = Instant::now();
    io(fs::create_dir_all(out), out)?;
    let sim = simulate(loaded, seed)?;

    write_ndjson(&out.join(TRACE_FILE), sim.trace())?;
    write_ndjson(&out.join(RESULTS_FILE), sim.results())?;

    let mut summary = Summary::from_results(sim.results(), sim.submitted_ids().len());
    summary.virtual_end_s = ns_to_secs(sim.now());
    summary.protocol_errors = sim.errors().len();
    write_summary(&out.join(SUMMARY_FILE), &summary)?;

    let rows = sim.records().flat_map(|r| {
        r.measurements.batches.iter().map(move |b| BatchRow {
            request_id: &r.id,
            index: b.index,
            round: b.round,
            t_s: b.t_s,
            basis: &b.basis,
            coincidences: b.coincidences,
            accidentals: b.accidentals,
            ebits: b.ebits,
            car: b.car,
            visibility: b.visibility,
            nonclassical: b.nonclassical == Nonclassicality::NonClassical,
        })
    });
    write_csv(&out.join(BATCHES_FILE), BATCH_COLUMNS, rows)?;

    if let Some(cfg) = &loaded.scenario.coexistence_sweep {
        write_csv(&out.join(COEXISTENCE_FILE), COEXISTENCE_COLUMNS, coexistence_sweep(loaded, &cfg.powers_dbm)?)?;
    }
    if let Some(cfg) = &loaded.scenario.car_sweep {
        write_csv(&out.join(CAR_FILE), CAR_COLUMNS, car_sweep(loaded, &cfg.powers_mw)?)?;
    }

    let wc = Wallclock { started_unix_s: started, finished_unix_s: unix_now(), elapsed_s: clock.elapsed().as_secs_f64() };
    let path = out.join(WALLCLOCK_FILE);
    io(fs::write(&path, io(serde_json::to_string_pretty(&wc), &path)?), &path)?;
    Ok(summary)
}

/// Summary of an existing results directory.
pub fn report(dir: &Path) -> Result<Summary, String> {
    let results = read_results(&dir.join(RESULTS_FILE))?;
    let mut s = Summary::from_results(&results, 0);
    let summary_path = dir.join(SUMMARY_FILE);
    if let Ok(mut r) = csv::Reader::from_path(&summary_path) {
        for row in r.records().flatten() {
            match (row.get(0), row.get(1)) {
                (Some("requests"), Some(v)) => s = Summary::from_results(&results, v.parse().unwrap_or(0)),
                (Some("virtual_end_s"), Some(v)) => s.virtual_end_s = v.parse().unwrap_or(0.0),
                (Some("protocol_errors"), Some(v)) => s.protocol_errors = v.parse().unwrap_or(0),
                _ => {}
            }
        }
    }
    Ok(s)
}
