#![allow(dead_code)]

use std::collections::BTreeMap;

use qnet_core::controlplane::{EntanglementRequest, ModelParams, Simulation};
use qnet_core::topology::{
    Attenuation, Band, Endpoint, LinkConfig, NetworkGraph, NetworkNode, NodeKind, PortConfig, QubitType,
    TopologyDocument, WavelengthChannel,
};

pub fn node(id: &str, kind: NodeKind) -> NetworkNode {
    NetworkNode {
        id: id.into(),
        kind,
        ip: (kind == NodeKind::QNode).then(|| format!("10.0.0.{}", id.len())),
        insertion_loss_db: if kind == NodeKind::OpticalSwitch { 1.0 } else { 0.0 },
        pdl_db: 0.0,
        pmd_ps: 0.0,
        ports: vec![],
        wavelength_outputs: (kind == NodeKind::Eps).then_some(4),
        qubit_types: vec![],
    }
}

pub fn link(id: &str, a: (&str, u32), b: (&str, u32), km: f64) -> LinkConfig {
    LinkConfig {
        id: id.into(),
        a: Endpoint { node: a.0.into(), port: a.1 },
        b: Endpoint { node: b.0.into(), port: b.1 },
        length_km: km,
        attenuation: Attenuation { o_band: Some(0.33), c_band: Some(0.2), l_band: None },
        total_wavelengths: 8,
        occupancy: BTreeMap::new(),
    }
}

pub fn grid() -> Vec<WavelengthChannel> {
    let mut g: Vec<WavelengthChannel> = (1..=4)
        .map(|i| WavelengthChannel {
            label: format!("O{i}"),
            center_nm: 1300.0 + 4.5 * i as f64,
            width_ghz: 800.0,
            band: Band::OBand,
        })
        .collect();
    for (label, nm) in [("C31", 1552.52), ("C32", 1551.72), ("C33", 1550.92)] {
        g.push(WavelengthChannel { label: label.into(), center_nm: nm, width_ghz: 100.0, band: Band::CBand });
    }
    g
}

/// Port tags name the far end of every link.
pub fn tag_ports(doc: &mut TopologyDocument) {
    for n in &mut doc.nodes {
        n.ports.clear();
    }
    let links = doc.links.clone();
    for l in &links {
        for (here, there) in [(&l.a, &l.b), (&l.b, &l.a)] {
            let n = doc.nodes.iter_mut().find(|n| n.id == here.node).unwrap();
            n.ports.push(PortConfig { index: here.port, tag: format!("{}:{}", there.node, there.port) });
        }
    }
}

/// One EPS (N = 4), one switch, two Q-Nodes.
pub fn canonical_doc() -> TopologyDocument {
    let mut doc = TopologyDocument {
        nodes: vec![
            node("eps", NodeKind::Eps),
            node("sw", NodeKind::OpticalSwitch),
            node("node_a", NodeKind::QNode),
            node("node_b", NodeKind::QNode),
        ],
        links: vec![
            link("eps-sw", ("eps", 0), ("sw", 0), 5.0),
            link("sw-a", ("sw", 1), ("node_a", 0), 10.0),
            link("sw-b", ("sw", 2), ("node_b", 0), 12.0),
        ],
        grid: grid(),
    };
    tag_ports(&mut doc);
    doc
}

pub fn canonical() -> NetworkGraph {
    NetworkGraph::from_document(canonical_doc()).unwrap()
}

pub fn request(target: u64) -> EntanglementRequest {
    EntanglementRequest {
        requester: "alice".into(),
        qubit_type: QubitType::Polarization,
        node_pair: ("node_a".into(), "node_b".into()),
        start_time_s: 0.0,
        end_time_s: 10_000.0,
        calibration_basis: "HV".into(),
        target_ebits: target,
        teleportation_bsm: None,
    }
}

pub fn params() -> ModelParams {
    ModelParams::default()
}

pub fn run(sim: &mut Simulation) {
    sim.run_until(Some(qnet_core::simkernel::secs_to_ns(100_000.0)));
    assert!(sim.errors().is_empty(), "protocol errors: {:?}", sim.errors());
}
