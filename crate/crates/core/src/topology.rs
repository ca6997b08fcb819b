//! Network graph: typed nodes, wavelength-channelized fiber links and the
//! loss metric used for routing.
//!
//! The graph is an undirected multigraph. Parallel fibers between the same
//! pair of nodes are separate links with independent occupancy.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("link `{link}` references unknown endpoint {node}:{port}")]
    DanglingEndpoint { link: String, node: String, port: u32 },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("link `{link}` has no attenuation coefficient for {band:?}")]
    MissingBandCoefficient { link: String, band: Band },
    #[error("path is not contiguous at link `{0}`")]
    NonContiguousPath(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("channel `{channel}` already occupied on link `{link}`")]
    ChannelBusy { link: String, channel: String },
    #[error("channel `{channel}` is not held by `{owner}` on link `{link}`")]
    NotHeld { link: String, channel: String, owner: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    QNode,
    #[serde(rename = "EPS")]
    Eps,
    #[serde(rename = "BSM")]
    Bsm,
    OpticalSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    OBand,
    CBand,
    LBand,
}

impl Band {
    /// Wavelength window (nm) a channel center must fall into.
    pub fn window_nm(self) -> (f64, f64) {
        match self {
            Band::OBand => (1260.0, 1360.0),
            Band::CBand => (1530.0, 1565.0),
            Band::LBand => (1565.0, 1625.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QubitType {
    Polarization,
    TimeBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortConfig {
    pub index: u32,
    #[serde(default)]
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<String>,
    #[serde(default)]
    pub insertion_loss_db: f64,
    #[serde(default)]
    pub pdl_db: f64,
    #[serde(default)]
    pub pmd_ps: f64,
    #[serde(default)]
    pub ports: Vec<PortConfig>,
    /// Number of wavelength outputs; required for EPS nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_outputs: Option<u32>,
    /// Qubit encodings the resource handles. Empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qubit_types: Vec<QubitType>,
}

impl NetworkNode {
    pub fn port(&self, index: u32) -> Option<&PortConfig> {
        self.ports.iter().find(|p| p.index == index)
    }

    pub fn supports(&self, qubit: QubitType) -> bool {
        self.qubit_types.is_empty() || self.qubit_types.contains(&qubit)
    }

    /// Maximum number of user pairs an EPS can serve at once.
    pub fn pair_capacity(&self) -> u32 {
        self.wavelength_outputs.unwrap_or(0) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub node: String,
    pub port: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Attenuation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o_band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_band: Option<f64>,
}

impl Attenuation {
    pub fn get(&self, band: Band) -> Option<f64> {
        match band {
            Band::OBand => self.o_band,
            Band::CBand => self.c_band,
            Band::LBand => self.l_band,
        }
    }

    fn declared(&self) -> impl Iterator<Item = (Band, f64)> + '_ {
        [Band::OBand, Band::CBand, Band::LBand]
            .into_iter()
            .filter_map(|b| self.get(b).map(|a| (b, a)))
    }
}

/// Link as it appears in the topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub id: String,
    pub a: Endpoint,
    pub b: Endpoint,
    pub length_km: f64,
    pub attenuation: Attenuation,
    pub total_wavelengths: u32,
    /// Live reservations, channel label -> lightpath id. Only emitted in
    /// occupancy snapshots; ignored when absent.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub occupancy: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthChannel {
    pub label: String,
    pub center_nm: f64,
    pub width_ghz: f64,
    pub band: Band,
}

/// Serialized form of a [`NetworkGraph`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub nodes: Vec<NetworkNode>,
    pub links: Vec<LinkConfig>,
    pub grid: Vec<WavelengthChannel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberLink {
    pub id: String,
    pub a: Endpoint,
    pub b: Endpoint,
    pub length_km: f64,
    pub attenuation: Attenuation,
    pub total_wavelengths: u32,
    pub up: bool,
    occupancy: BTreeMap<String, String>,
}

impl FiberLink {
    pub fn connects(&self, node: &str) -> bool {
        self.a.node == node || self.b.node == node
    }

    /// The endpoint opposite to `node`.
    pub fn other_end(&self, node: &str) -> Option<&Endpoint> {
        if self.a.node == node {
            Some(&self.b)
        } else if self.b.node == node {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn endpoint_at(&self, node: &str) -> Option<&Endpoint> {
        if self.a.node == node {
            Some(&self.a)
        } else if self.b.node == node {
            Some(&self.b)
        } else {
            None
        }
    }

    pub fn fiber_loss_db(&self, band: Band) -> Result<f64, TopologyError> {
        self.attenuation
            .get(band)
            .map(|a| a * self.length_km)
            .ok_or_else(|| TopologyError::MissingBandCoefficient { link: self.id.clone(), band })
    }

    pub fn occupancy(&self) -> &BTreeMap<String, String> {
        &self.occupancy
    }

    pub fn is_full(&self) -> bool {
        self.occupancy.len() as u32 >= self.total_wavelengths
    }

    pub fn is_free(&self, channel: &str) -> bool {
        self.up && !self.is_full() && !self.occupancy.contains_key(channel)
    }
}

/// Per-hop metric: fiber loss at the channel band plus the insertion loss of
/// the node the hop enters.
pub fn edge_metric(
    link: &FiberLink,
    far_node: &NetworkNode,
    channel: &WavelengthChannel,
) -> Result<f64, TopologyError> {
    band_edge_metric(link, far_node, channel.band)
}

pub fn band_edge_metric(link: &FiberLink, far_node: &NetworkNode, band: Band) -> Result<f64, TopologyError> {
    Ok(link.fiber_loss_db(band)? + far_node.insertion_loss_db)
}

/// Optional extension of the default loss metric with polarization
/// impairments of the traversed nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum MetricKind {
    #[default]
    Loss,
    LossWithPolarization { pdl_weight: f64, pmd_weight_per_ps: f64 },
}

impl MetricKind {
    pub fn hop(&self, link: &FiberLink, far_node: &NetworkNode, band: Band) -> Result<f64, TopologyError> {
        let base = band_edge_metric(link, far_node, band)?;
        Ok(match *self {
            MetricKind::Loss => base,
            MetricKind::LossWithPolarization { pdl_weight, pmd_weight_per_ps } => {
                base + pdl_weight * far_node.pdl_db + pmd_weight_per_ps * far_node.pmd_ps
            }
        })
    }
}

/// A walk through the graph: `nodes.len() == links.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Route {
    pub nodes: Vec<String>,
    pub links: Vec<String>,
}

impl Route {
    pub fn hops(&self) -> usize {
        self.links.len()
    }

    pub fn src(&self) -> &str {
        &self.nodes[0]
    }

    pub fn dst(&self) -> &str {
        &self.nodes[self.nodes.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: BTreeMap<String, NetworkNode>,
    links: BTreeMap<String, FiberLink>,
    grid: Vec<WavelengthChannel>,
}

fn schema(msg: impl Into<String>) -> TopologyError {
    TopologyError::Schema(msg.into())
}

impl NetworkGraph {
    /// Validates a topology document and builds the graph.
    pub fn from_document(doc: TopologyDocument) -> Result<Self, TopologyError> {
        if doc.nodes.is_empty() {
            return Err(schema("`nodes` must not be empty"));
        }
        let mut nodes = BTreeMap::new();
        for node in doc.nodes {
            validate_node(&node)?;
            if nodes.contains_key(&node.id) {
                return Err(TopologyError::DuplicateId(node.id));
            }
            nodes.insert(node.id.clone(), node);
        }

        let mut labels = BTreeSet::new();
        for ch in &doc.grid {
            if !labels.insert(ch.label.clone()) {
                return Err(TopologyError::DuplicateId(ch.label.clone()));
            }
            let (lo, hi) = ch.band.window_nm();
            if !(lo..=hi).contains(&ch.center_nm) {
                return Err(schema(format!(
                    "channel `{}` at {} nm is outside the {:?} window",
                    ch.label, ch.center_nm, ch.band
                )));
            }
            if !(ch.width_ghz > 0.0) {
                return Err(schema(format!("channel `{}` width must be positive", ch.label)));
            }
        }

        let mut links = BTreeMap::new();
        for cfg in doc.links {
            if links.contains_key(&cfg.id) || nodes.contains_key(&cfg.id) {
                return Err(TopologyError::DuplicateId(cfg.id));
            }
            for end in [&cfg.a, &cfg.b] {
                let port = nodes.get(&end.node).and_then(|n: &NetworkNode| n.port(end.port));
                match port {
                    None => {
                        return Err(TopologyError::DanglingEndpoint {
                            link: cfg.id.clone(),
                            node: end.node.clone(),
                            port: end.port,
                        })
                    }
                    Some(p) if p.tag.is_empty() => {
                        return Err(schema(format!(
                            "port {}:{} is connected by `{}` but has no tag",
                            end.node, end.port, cfg.id
                        )))
                    }
                    Some(_) => {}
                }
            }
            if cfg.a.node == cfg.b.node {
                return Err(schema(format!("link `{}` is a self-loop", cfg.id)));
            }
            if !(cfg.length_km > 0.0) {
                return Err(schema(format!("link `{}` length must be positive", cfg.id)));
            }
            if cfg.attenuation.declared().next().is_none() {
                return Err(schema(format!("link `{}` declares no attenuation", cfg.id)));
            }
            if cfg.attenuation.declared().any(|(_, a)| !(a > 0.0)) {
                return Err(schema(format!("link `{}` attenuation must be positive", cfg.id)));
            }
            if cfg.total_wavelengths == 0 {
                return Err(schema(format!("link `{}` must carry at least one wavelength", cfg.id)));
            }
            if cfg.occupancy.len() as u32 > cfg.total_wavelengths {
                return Err(schema(format!("link `{}` occupancy exceeds capacity", cfg.id)));
            }
            for label in cfg.occupancy.keys() {
                if !labels.contains(label) {
                    return Err(TopologyError::UnknownChannel(label.clone()));
                }
            }
            links.insert(
                cfg.id.clone(),
                FiberLink {
                    id: cfg.id,
                    a: cfg.a,
                    b: cfg.b,
                    length_km: cfg.length_km,
                    attenuation: cfg.attenuation,
                    total_wavelengths: cfg.total_wavelengths,
                    up: true,
                    occupancy: cfg.occupancy,
                },
            );
        }

        Ok(Self { nodes, links, grid: doc.grid })
    }

    /// Canonical document: nodes and links sorted by id, grid in declared
    /// order. Occupancy is included when non-empty.
    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            nodes: self.nodes.values().cloned().collect(),
            links: self
                .links
                .values()
                .map(|l| LinkConfig {
                    id: l.id.clone(),
                    a: l.a.clone(),
                    b: l.b.clone(),
                    length_km: l.length_km,
                    attenuation: l.attenuation,
                    total_wavelengths: l.total_wavelengths,
                    occupancy: l.occupancy.clone(),
                })
                .collect(),
            grid: self.grid.clone(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NetworkNode> {
        self.nodes.values()
    }

    pub fn links(&self) -> impl Iterator<Item = &FiberLink> {
        self.links.values()
    }

    pub fn grid(&self) -> &[WavelengthChannel] {
        &self.grid
    }

    pub fn node(&self, id: &str) -> Result<&NetworkNode, TopologyError> {
        self.nodes.get(id).ok_or_else(|| TopologyError::UnknownNode(id.into()))
    }

    pub fn link(&self, id: &str) -> Result<&FiberLink, TopologyError> {
        self.links.get(id).ok_or_else(|| TopologyError::UnknownLink(id.into()))
    }

    pub fn channel(&self, label: &str) -> Result<&WavelengthChannel, TopologyError> {
        self.grid
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| TopologyError::UnknownChannel(label.into()))
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Links incident to `node`, in link-id order.
    pub fn incident<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a FiberLink> + 'a {
        self.links.values().filter(move |l| l.connects(node))
    }

    pub fn set_link_up(&mut self, id: &str, up: bool) -> Result<(), TopologyError> {
        let link = self.links.get_mut(id).ok_or_else(|| TopologyError::UnknownLink(id.into()))?;
        link.up = up;
        Ok(())
    }

    /// Removes links whose ids are not in `keep`.
    pub fn retain_links(&mut self, keep: &BTreeSet<String>) {
        self.links.retain(|id, _| keep.contains(id));
    }

    /// Orients a link sequence starting at `src`, checking contiguity.
    pub fn walk(&self, src: &str, links: &[String]) -> Result<Route, TopologyError> {
        self.node(src)?;
        let mut nodes = Vec::with_capacity(links.len() + 1);
        nodes.push(String::from(src));
        let mut at = String::from(src);
        for id in links {
            let link = self.link(id)?;
            let next = link.other_end(&at).ok_or_else(|| TopologyError::NonContiguousPath(id.clone()))?;
            at = next.node.clone();
            nodes.push(at.clone());
        }
        Ok(Route { nodes, links: links.to_vec() })
    }

    /// Sum of per-hop metrics along `route` in hop order.
    pub fn route_metric(&self, route: &Route, band: Band, metric: MetricKind) -> Result<f64, TopologyError> {
        let mut total = 0.0;
        for (i, id) in route.links.iter().enumerate() {
            let link = self.link(id)?;
            let far = self.node(&route.nodes[i + 1])?;
            total += metric.hop(link, far, band)?;
        }
        Ok(total)
    }

    pub fn route_loss_db(&self, route: &Route, band: Band) -> Result<f64, TopologyError> {
        self.route_metric(route, band, MetricKind::Loss)
    }

    /// Wavelength-continuity set: grid channels free on every link of the
    /// path, in grid order. An empty path yields the whole grid.
    pub fn available_channels(&self, links: &[String]) -> Result<Vec<WavelengthChannel>, TopologyError> {
        let mut resolved = Vec::with_capacity(links.len());
        for id in links {
            resolved.push(self.link(id)?);
        }
        for pair in resolved.windows(2) {
            let shared = pair[0].connects(&pair[1].a.node) || pair[0].connects(&pair[1].b.node);
            if !shared {
                return Err(TopologyError::NonContiguousPath(pair[1].id.clone()));
            }
        }
        Ok(self
            .grid
            .iter()
            .filter(|ch| resolved.iter().all(|l| l.is_free(&ch.label)))
            .cloned()
            .collect())
    }

    /// Marks `channel` occupied by `owner` on every link. Either all links
    /// are updated or none is.
    pub fn reserve(&mut self, links: &[String], channel: &str, owner: &str) -> Result<(), TopologyError> {
        self.channel(channel)?;
        for id in links {
            let link = self.link(id)?;
            if !link.is_free(channel) {
                return Err(TopologyError::ChannelBusy { link: id.clone(), channel: channel.into() });
            }
        }
        let distinct: BTreeSet<&String> = links.iter().collect();
        if distinct.len() != links.len() {
            return Err(schema("route traverses the same link twice"));
        }
        for id in links {
            if let Some(link) = self.links.get_mut(id) {
                link.occupancy.insert(channel.into(), owner.into());
            }
        }
        Ok(())
    }

    /// Releases `channel` held by `owner` on every link; nothing changes
    /// unless every link holds it.
    pub fn release_channel(&mut self, links: &[String], channel: &str, owner: &str) -> Result<(), TopologyError> {
        for id in links {
            let link = self.link(id)?;
            if link.occupancy.get(channel).map(String::as_str) != Some(owner) {
                return Err(TopologyError::NotHeld {
                    link: id.clone(),
                    channel: channel.into(),
                    owner: owner.into(),
                });
            }
        }
        for id in links {
            if let Some(link) = self.links.get_mut(id) {
                link.occupancy.remove(channel);
            }
        }
        Ok(())
    }

    pub fn total_occupied(&self) -> usize {
        self.links.values().map(|l| l.occupancy.len()).sum()
    }

    /// Snapshot of every link's occupancy, for conservation checks.
    pub fn occupancy_snapshot(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.links.iter().map(|(id, l)| (id.clone(), l.occupancy.clone())).collect()
    }
}

fn validate_node(node: &NetworkNode) -> Result<(), TopologyError> {
    if node.id.is_empty() {
        return Err(schema("node id must not be empty"));
    }
    for (name, v) in [
        ("insertion_loss_db", node.insertion_loss_db),
        ("pdl_db", node.pdl_db),
        ("pmd_ps", node.pmd_ps),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(schema(format!("node `{}`: {} must be >= 0", node.id, name)));
        }
    }
    let mut seen = BTreeSet::new();
    for p in &node.ports {
        if !seen.insert(p.index) {
            return Err(schema(format!("node `{}` declares port {} twice", node.id, p.index)));
        }
    }
    match node.kind {
        NodeKind::QNode if node.ip.as_deref().is_none_or(str::is_empty) => {
            Err(schema(format!("Q-Node `{}` must carry an ip", node.id)))
        }
        NodeKind::Eps => match node.wavelength_outputs {
            Some(n) if n >= 2 && n % 2 == 0 => Ok(()),
            _ => Err(schema(format!(
                "EPS `{}` must declare an even number (>= 2) of wavelength_outputs",
                node.id
            ))),
        },
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    pub(crate) fn node(id: &str, kind: NodeKind, ports: &[u32], il: f64) -> NetworkNode {
        NetworkNode {
            id: id.into(),
            kind,
            ip: (kind == NodeKind::QNode).then(|| format!("10.0.0.{}", id.len())),
            insertion_loss_db: il,
            pdl_db: 0.0,
            pmd_ps: 0.0,
            ports: ports.iter().map(|&i| PortConfig { index: i, tag: format!("{id}:{i}") }).collect(),
            wavelength_outputs: (kind == NodeKind::Eps).then_some(4),
            qubit_types: vec![],
        }
    }

    fn link(id: &str, a: (&str, u32), b: (&str, u32), km: f64, c: f64) -> LinkConfig {
        LinkConfig {
            id: id.into(),
            a: Endpoint { node: a.0.into(), port: a.1 },
            b: Endpoint { node: b.0.into(), port: b.1 },
            length_km: km,
            attenuation: Attenuation { o_band: Some(0.43), c_band: Some(c), l_band: None },
            total_wavelengths: 3,
            occupancy: BTreeMap::new(),
        }
    }

    fn grid3() -> Vec<WavelengthChannel> {
        (0..3)
            .map(|i| WavelengthChannel {
                label: format!("ch{}", i + 1),
                center_nm: 1550.0 + i as f64,
                width_ghz: 100.0,
                band: Band::CBand,
            })
            .collect()
    }

    #[test]
    fn switched_link_loads() {
        let doc = TopologyDocument {
            nodes: vec![
                node("alice", NodeKind::QNode, &[0], 0.0),
                node("sw", NodeKind::OpticalSwitch, &[1, 2], 1.0),
                node("bob", NodeKind::QNode, &[0], 0.0),
            ],
            links: vec![
                link("l1", ("alice", 0), ("sw", 1), 1.25, 0.2),
                link("l2", ("sw", 2), ("bob", 0), 1.25, 0.2),
            ],
            grid: grid3(),
        };
        let g = NetworkGraph::from_document(doc).unwrap();
        assert_eq!(g.nodes().count(), 3);
        assert_eq!(g.links().count(), 2);
    }

    #[test]
    fn empty_nodes_is_schema_error() {
        let err = NetworkGraph::from_document(TopologyDocument::default()).unwrap_err();
        assert!(matches!(err, TopologyError::Schema(_)));
    }

    #[test]
    fn dangling_endpoint() {
        let doc = TopologyDocument {
            nodes: vec![node("a", NodeKind::QNode, &[0], 0.0)],
            links: vec![link("l", ("a", 0), ("X", 0), 1.0, 0.2)],
            grid: grid3(),
        };
        assert!(matches!(
            NetworkGraph::from_document(doc),
            Err(TopologyError::DanglingEndpoint { node, .. }) if node == "X"
        ));
        let doc = TopologyDocument {
            nodes: vec![node("a", NodeKind::QNode, &[0], 0.0), node("b", NodeKind::QNode, &[0], 0.0)],
            links: vec![link("l", ("a", 0), ("b", 7), 1.0, 0.2)],
            grid: grid3(),
        };
        assert!(matches!(
            NetworkGraph::from_document(doc),
            Err(TopologyError::DanglingEndpoint { port: 7, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let doc = TopologyDocument {
            nodes: vec![node("a", NodeKind::QNode, &[0], 0.0), node("a", NodeKind::QNode, &[0], 0.0)],
            links: vec![],
            grid: grid3(),
        };
        assert_eq!(NetworkGraph::from_document(doc).unwrap_err(), TopologyError::DuplicateId("a".into()));
    }

    #[test]
    fn eps_needs_even_outputs() {
        let mut eps = node("e", NodeKind::Eps, &[0], 0.0);
        eps.wavelength_outputs = Some(3);
        let doc = TopologyDocument { nodes: vec![eps], links: vec![], grid: grid3() };
        assert!(matches!(NetworkGraph::from_document(doc), Err(TopologyError::Schema(_))));
    }

    #[test]
    fn band_windows_enforced() {
        let mut grid = grid3();
        grid[0].band = Band::OBand;
        let doc = TopologyDocument { nodes: vec![node("a", NodeKind::QNode, &[0], 0.0)], links: vec![], grid };
        assert!(matches!(NetworkGraph::from_document(doc), Err(TopologyError::Schema(_))));
    }

    fn single(km: f64, att_o: f64, il: f64) -> (FiberLink, NetworkNode) {
        let mut cfg = link("l", ("a", 0), ("b", 0), km, 0.2);
        cfg.attenuation.o_band = Some(att_o);
        let doc = TopologyDocument {
            nodes: vec![node("a", NodeKind::QNode, &[0], 0.0), node("b", NodeKind::OpticalSwitch, &[0], il)],
            links: vec![cfg],
            grid: grid3(),
        };
        let g = NetworkGraph::from_document(doc).unwrap();
        (g.link("l").unwrap().clone(), g.node("b").unwrap().clone())
    }

    fn o_channel() -> WavelengthChannel {
        WavelengthChannel { label: "O1310".into(), center_nm: 1310.0, width_ghz: 3500.0, band: Band::OBand }
    }

    #[test]
    fn edge_metric_examples() {
        let (l, n) = single(45.6, 0.43, 0.0);
        assert!((edge_metric(&l, &n, &o_channel()).unwrap() - 19.608).abs() < 1e-9);

        let (l, n) = single(0.001, 0.43, 0.0);
        assert!(edge_metric(&l, &n, &o_channel()).unwrap() < 1e-3);

        let (l, n) = single(22.8, 0.33, 1.0);
        assert!((edge_metric(&l, &n, &o_channel()).unwrap() - 8.524).abs() < 1e-9);
    }

    #[test]
    fn missing_band_coefficient() {
        let (l, n) = single(1.0, 0.43, 0.0);
        let ch = WavelengthChannel { label: "L1".into(), center_nm: 1590.0, width_ghz: 100.0, band: Band::LBand };
        assert!(matches!(edge_metric(&l, &n, &ch), Err(TopologyError::MissingBandCoefficient { .. })));
    }

    fn line_graph() -> NetworkGraph {
        let doc = TopologyDocument {
            nodes: vec![
                node("a", NodeKind::QNode, &[0], 0.0),
                node("s", NodeKind::OpticalSwitch, &[0, 1], 0.5),
                node("b", NodeKind::QNode, &[0], 0.0),
            ],
            links: vec![link("l1", ("a", 0), ("s", 0), 2.0, 0.2), link("l2", ("s", 1), ("b", 0), 3.0, 0.2)],
            grid: grid3(),
        };
        NetworkGraph::from_document(doc).unwrap()
    }

    #[test]
    fn availability_intersection() {
        let mut g = line_graph();
        g.reserve(&["l1".to_string()], "ch1", "x").unwrap();
        g.reserve(&["l2".to_string()], "ch2", "y").unwrap();
        let free = g.available_channels(&["l1".into(), "l2".into()]).unwrap();
        assert_eq!(free.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(), ["ch3"]);

        assert_eq!(g.available_channels(&[]).unwrap().len(), 3);

        g.reserve(&["l2".to_string()], "ch3", "z").unwrap();
        g.reserve(&["l2".to_string()], "ch1", "w").unwrap();
        assert!(g.available_channels(&["l1".into(), "l2".into()]).unwrap().is_empty());
    }

    #[test]
    fn non_contiguous_path() {
        let mut doc = line_graph().to_document();
        doc.nodes.push(node("c", NodeKind::QNode, &[0], 0.0));
        doc.nodes.push(node("d", NodeKind::QNode, &[0], 0.0));
        doc.links.push(link("l3", ("c", 0), ("d", 0), 1.0, 0.2));
        let g = NetworkGraph::from_document(doc).unwrap();
        assert_eq!(
            g.available_channels(&["l1".into(), "l3".into()]),
            Err(TopologyError::NonContiguousPath("l3".into()))
        );
    }

    #[test]
    fn capacity_limits_availability() {
        let mut doc = line_graph().to_document();
        doc.links[0].total_wavelengths = 1;
        let mut g = NetworkGraph::from_document(doc).unwrap();
        g.reserve(&["l1".to_string()], "ch2", "x").unwrap();
        assert!(g.available_channels(&["l1".into()]).unwrap().is_empty());
        assert!(g.reserve(&["l1".to_string()], "ch3", "y").is_err());
    }

    #[test]
    fn reserve_release_conservation() {
        let mut g = line_graph();
        let before = g.occupancy_snapshot();
        let path = ["l1".to_string(), "l2".to_string()];
        g.reserve(&path, "ch2", "lp").unwrap();
        assert_eq!(g.total_occupied(), 2);
        assert!(g.release_channel(&path, "ch2", "other").is_err());
        g.release_channel(&path, "ch2", "lp").unwrap();
        assert_eq!(g.occupancy_snapshot(), before);
        assert!(g.release_channel(&path, "ch2", "lp").is_err());
    }

    #[test]
    fn walk_orients_links() {
        let g = line_graph();
        let r = g.walk("b", &["l2".into(), "l1".into()]).unwrap();
        assert_eq!(r.nodes, ["b", "s", "a"]);
        // a gets 0 insertion, s gets 0.5
        let loss = g.route_loss_db(&r, Band::CBand).unwrap();
        assert!((loss - (0.6 + 0.5 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn polarization_metric_hook() {
        let mut doc = line_graph().to_document();
        doc.nodes[2].pdl_db = 0.3;
        doc.nodes[2].pmd_ps = 2.0;
        let g = NetworkGraph::from_document(doc).unwrap();
        let r = g.walk("a", &["l1".into()]).unwrap();
        let plain = g.route_metric(&r, Band::CBand, MetricKind::Loss).unwrap();
        let pol = g
            .route_metric(&r, Band::CBand, MetricKind::LossWithPolarization { pdl_weight: 1.0, pmd_weight_per_ps: 0.1 })
            .unwrap();
        assert!((pol - plain - 0.5).abs() < 1e-12);
    }
}
