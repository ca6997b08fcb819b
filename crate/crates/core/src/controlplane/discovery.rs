//! Registration cross-check against the tag-derived topology.

use alloc::string::String;
use alloc::vec::Vec;

use super::messages::{ResourceRegistration, TopologyChange};
use super::paths::VerifiedTopology;
use super::sdn::SdnAgent;
use crate::topology::NetworkGraph;

/// Outcome of checking one registration.
pub fn check_registration(agent: &SdnAgent, graph: &NetworkGraph, reg: &ResourceRegistration) -> TopologyChange {
    if !graph.has_node(&reg.resource_id) {
        return TopologyChange::Mismatch { detail: alloc::format!("`{}` is not in the topology", reg.resource_id) };
    }
    let mismatches = agent.verify_claims(&reg.resource_id, &reg.connectivity_claims);
    if mismatches.is_empty() {
        TopologyChange::Verified
    } else {
        TopologyChange::Mismatch { detail: mismatches.join("; ") }
    }
}

/// Batch form of the discovery exchange: every registration is checked by
/// the agent; verified resources become schedulable, the rest are
/// quarantined. Nodes that never registered stay unschedulable.
pub fn run_discovery(
    graph: &NetworkGraph,
    registrations: &[ResourceRegistration],
    agent: &SdnAgent,
) -> (VerifiedTopology, Vec<(String, TopologyChange)>) {
    let mut topo = VerifiedTopology::new(graph.clone());
    let mut log = Vec::new();
    for reg in registrations {
        let change = check_registration(agent, graph, reg);
        match &change {
            TopologyChange::Verified => topo.mark_verified(&reg.resource_id),
            TopologyChange::Mismatch { detail } => topo.quarantine(&reg.resource_id, detail.clone()),
            _ => {}
        }
        log.push((reg.resource_id.clone(), change));
    }
    (topo, log)
}
