//! SDN agent: tag-derived topology, claim verification and switch rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::messages::{ConnectivityClaim, Features, ResourceRegistration};
use crate::rwa::Lightpath;
use crate::topology::{NetworkGraph, NetworkNode, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdnError {
    #[error("switch `{0}` is unavailable")]
    SwitchUnavailable(String),
    #[error("lightpath `{0}` does not follow the topology")]
    BadPath(String),
}

/// Tag describing the far end of a port: `node:port`.
pub fn port_tag(node: &str, port: u32) -> String {
    format!("{node}:{port}")
}

/// Registration a resource builds from its own configuration.
pub fn registration_for(node: &NetworkNode) -> ResourceRegistration {
    ResourceRegistration {
        resource_id: node.id.clone(),
        kind: node.kind,
        features: Features {
            qubit_types: node.qubit_types.clone(),
            wavelength_outputs: node.wavelength_outputs,
            detector_efficiency: None,
        },
        connectivity_claims: node
            .ports
            .iter()
            .filter(|p| !p.tag.is_empty())
            .map(|p| ConnectivityClaim { local_port: p.index, remote_tag: p.tag.clone() })
            .collect(),
    }
}

/// Cross-connect key on a switch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleKey {
    pub in_port: u32,
    pub out_port: u32,
    pub channel: String,
}

#[derive(Debug, Clone, Default)]
pub struct SdnAgent {
    /// `(node, port)` to the far-end tag, as discovered from switch ports.
    discovered: BTreeMap<(String, u32), String>,
    rules: BTreeMap<String, BTreeMap<RuleKey, String>>,
    unavailable: BTreeSet<String>,
}

impl SdnAgent {
    pub fn discover(graph: &NetworkGraph) -> Self {
        let mut discovered = BTreeMap::new();
        for link in graph.links() {
            discovered.insert((link.a.node.clone(), link.a.port), port_tag(&link.b.node, link.b.port));
            discovered.insert((link.b.node.clone(), link.b.port), port_tag(&link.a.node, link.a.port));
        }
        SdnAgent { discovered, rules: BTreeMap::new(), unavailable: BTreeSet::new() }
    }

    /// Returns the list of claims that contradict the discovered topology.
    pub fn verify_claims(&self, resource: &str, claims: &[ConnectivityClaim]) -> Vec<String> {
        claims
            .iter()
            .filter_map(|c| match self.discovered.get(&(resource.to_string(), c.local_port)) {
                Some(tag) if *tag == c.remote_tag => None,
                Some(tag) => Some(format!("port {} claims `{}`, tags say `{}`", c.local_port, c.remote_tag, tag)),
                None => Some(format!("port {} claims `{}`, no link discovered", c.local_port, c.remote_tag)),
            })
            .collect()
    }

    pub fn set_available(&mut self, switch: &str, available: bool) {
        if available {
            self.unavailable.remove(switch);
        } else {
            self.unavailable.insert(switch.to_string());
        }
    }

    fn crossconnects(graph: &NetworkGraph, lp: &Lightpath) -> Result<Vec<(String, RuleKey)>, SdnError> {
        let mut out = Vec::new();
        for i in 1..lp.nodes.len().saturating_sub(1) {
            let node = &lp.nodes[i];
            let kind = graph.node(node).map_err(|_| SdnError::BadPath(lp.id.clone()))?.kind;
            if kind != NodeKind::OpticalSwitch {
                continue;
            }
            let port_on = |link_id: &str| {
                graph
                    .link(link_id)
                    .ok()
                    .and_then(|l| l.endpoint_at(node))
                    .map(|e| e.port)
                    .ok_or_else(|| SdnError::BadPath(lp.id.clone()))
            };
            let key = RuleKey {
                in_port: port_on(&lp.links[i - 1])?,
                out_port: port_on(&lp.links[i])?,
                channel: lp.channel.label.clone(),
            };
            out.push((node.clone(), key));
        }
        Ok(out)
    }

    /// Installs one rule per switch traversed. Re-sending the same lightpath
    /// is acknowledged without change. Nothing is installed on error.
    pub fn install(&mut self, graph: &NetworkGraph, lp: &Lightpath) -> Result<(), SdnError> {
        let rules = Self::crossconnects(graph, lp)?;
        if let Some((sw, _)) = rules.iter().find(|(sw, _)| self.unavailable.contains(sw)) {
            return Err(SdnError::SwitchUnavailable(sw.clone()));
        }
        for (sw, key) in rules {
            self.rules.entry(sw).or_default().insert(key, lp.id.clone());
        }
        Ok(())
    }

    pub fn remove(&mut self, lp: &Lightpath) {
        for table in self.rules.values_mut() {
            table.retain(|_, owner| *owner != lp.id);
        }
        self.rules.retain(|_, t| !t.is_empty());
    }

    pub fn rule_count(&self, switch: &str) -> usize {
        self.rules.get(switch).map_or(0, |t| t.len())
    }

    pub fn total_rules(&self) -> usize {
        self.rules.values().map(|t| t.len()).sum()
    }

    pub fn rules(&self, switch: &str) -> Option<&BTreeMap<RuleKey, String>> {
        self.rules.get(switch)
    }
}
