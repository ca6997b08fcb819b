//! Topology, model-parameter and scenario documents on disk.
//!
//! Documents are JSON, or TOML when the file name ends in `.toml`. Scenario
//! refs resolve relative to the scenario file.

use std::fs;
use std::path::{Path, PathBuf};

use qnet_core::controlplane::{ModelParams, Scenario};
use qnet_core::topology::{NetworkGraph, TopologyDocument};
use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("override `{0}`: {1}")]
    Override(String, String),
}

fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"))
}

/// Reads a JSON or TOML document into a generic value.
pub fn read_value(path: &Path) -> Result<Value, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.into(), source })?;
    parse_value(&text, is_toml(path)).map_err(|message| LoadError::Syntax { path: path.into(), message })
}

pub fn parse_value(text: &str, toml: bool) -> Result<Value, String> {
    if toml {
        toml::from_str::<Value>(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str::<Value>(text).map_err(|e| e.to_string())
    }
}

fn typed<T: DeserializeOwned>(path: &Path, v: Value) -> Result<T, LoadError> {
    serde_json::from_value(v).map_err(|e| LoadError::Schema { path: path.into(), message: e.to_string() })
}

/// Sets `key` (dot-separated) in `doc`. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<(), LoadError> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let err = |m: &str| LoadError::Override(key.into(), m.into());
    if key.is_empty() {
        return Err(err("empty key"));
    }
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).into(), value);
                    return Ok(());
                }
                map.entry(*part).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| err("array segment must be an index"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| err(&format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(err(&format!("`{part}` is below a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Splits `key=value`.
pub fn split_override(s: &str) -> Result<(&str, &str), String> {
    s.split_once('=').ok_or_else(|| format!("`{s}` is not key=value"))
}

pub fn load_topology(path: &Path) -> Result<NetworkGraph, LoadError> {
    topology_from_value(path, read_value(path)?)
}

fn topology_from_value(path: &Path, v: Value) -> Result<NetworkGraph, LoadError> {
    let doc: TopologyDocument = typed(path, v)?;
    NetworkGraph::from_document(doc).map_err(|e| LoadError::Schema { path: path.into(), message: e.to_string() })
}

pub fn load_params(path: &Path) -> Result<ModelParams, LoadError> {
    typed(path, read_value(path)?)
}

/// A scenario with its referenced documents loaded.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub path: PathBuf,
    pub scenario: Scenario,
    pub graph: NetworkGraph,
    pub params: ModelParams,
}

/// Overrides are `key=value`. Keys starting with `params.` or `topology.`
/// address the referenced documents; everything else addresses the
/// scenario itself.
pub fn load_scenario(path: &Path, overrides: &[(String, String)]) -> Result<LoadedScenario, LoadError> {
    let mut doc = read_value(path)?;
    let mut params_over = Vec::new();
    let mut topo_over = Vec::new();
    for (k, v) in overrides {
        if let Some(rest) = k.strip_prefix("params.") {
            params_over.push((rest, v));
        } else if let Some(rest) = k.strip_prefix("topology.") {
            topo_over.push((rest, v));
        } else {
            apply_override(&mut doc, k, v)?;
        }
    }
    let scenario: Scenario = typed(path, doc)?;
    scenario.validate().map_err(|message| LoadError::Schema { path: path.into(), message })?;
    let base = path.parent().unwrap_or(Path::new("."));

    let tpath = base.join(&scenario.topology_ref);
    let mut tdoc = read_value(&tpath)?;
    for (k, v) in topo_over {
        apply_override(&mut tdoc, k, v)?;
    }
    let graph = topology_from_value(&tpath, tdoc)?;

    let ppath = base.join(&scenario.model_params_ref);
    let mut pdoc = read_value(&ppath)?;
    for (k, v) in params_over {
        apply_override(&mut pdoc, k, v)?;
    }
    let params: ModelParams = typed(&ppath, pdoc)?;

    Ok(LoadedScenario { path: path.into(), scenario, graph, params })
}

/// What `validate` found in a file.
#[derive(Debug, Clone, PartialEq)]
pub enum Validated {
    Topology { nodes: usize, links: usize, channels: usize },
    Scenario { requests: usize, faults: usize },
}

/// Accepts a topology or a scenario. A document with `topology_ref` is a
/// scenario and has its refs checked too.
pub fn validate_file(path: &Path) -> Result<Validated, LoadError> {
    let v = read_value(path)?;
    if v.get("topology_ref").is_some() {
        let s = load_scenario(path, &[])?;
        for r in &s.scenario.requests {
            qnet_core::controlplane::validate_request(&s.graph, &r.request)
                .map_err(|message| LoadError::Schema { path: path.into(), message })?;
        }
        Ok(Validated::Scenario { requests: s.scenario.requests.len(), faults: s.scenario.faults.len() })
    } else {
        let g = topology_from_value(path, v)?;
        Ok(Validated::Topology { nodes: g.nodes().count(), links: g.links().count(), channels: g.grid().len() })
    }
}
