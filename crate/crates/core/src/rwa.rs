//! Shortest-path routing and wavelength assignment.
//!
//! Candidate routes come from Yen's k-shortest loop-free path search over the
//! loss metric. For each route in order the free channels are ranked by the
//! wavelength policy and the first one is reserved end to end; when no route
//! has a free channel the connection is blocked.
//!
//! Light only passes transparently through optical switches, so every
//! intermediate node of a route must be an [`NodeKind::OpticalSwitch`].

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Band, MetricKind, NetworkGraph, NodeKind, Route, TopologyError, WavelengthChannel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RwaError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("source and destination are both `{0}`")]
    SameEndpoints(String),
    #[error("lightpath `{0}` is not reserved")]
    NotReserved(String),
    #[error("`{0}` is not a BSM node")]
    NotBsm(String),
    #[error("invalid constraints: {0}")]
    InvalidConstraints(&'static str),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum WavelengthPolicy {
    #[default]
    FirstFit,
    LowestLossFit,
    ExplicitPreference(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwaConstraints {
    /// `None` accepts any band.
    pub required_band: Option<Band>,
    pub max_loss_db: Option<f64>,
    pub k_paths: usize,
    pub wavelength_policy: WavelengthPolicy,
    #[serde(default)]
    pub metric: MetricKind,
}

impl Default for RwaConstraints {
    fn default() -> Self {
        Self {
            required_band: None,
            max_loss_db: None,
            k_paths: 4,
            wavelength_policy: WavelengthPolicy::FirstFit,
            metric: MetricKind::Loss,
        }
    }
}

impl RwaConstraints {
    pub fn band(band: Band) -> Self {
        Self { required_band: Some(band), ..Self::default() }
    }

    fn validate(&self) -> Result<(), RwaError> {
        if self.k_paths == 0 {
            return Err(RwaError::InvalidConstraints("k_paths must be >= 1"));
        }
        if let Some(m) = self.max_loss_db {
            if !(m > 0.0) {
                return Err(RwaError::InvalidConstraints("max_loss_db must be > 0"));
            }
        }
        Ok(())
    }
}

/// A route together with its sort metric.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePath {
    pub route: Route,
    pub metric: f64,
}

fn candidate_order(a: &CandidatePath, b: &CandidatePath) -> Ordering {
    a.metric
        .total_cmp(&b.metric)
        .then(a.route.hops().cmp(&b.route.hops()))
        .then_with(|| a.route.links.cmp(&b.route.links))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lightpath {
    pub id: String,
    pub nodes: Vec<String>,
    pub links: Vec<String>,
    pub channel: WavelengthChannel,
    pub total_loss_db: f64,
}

impl Lightpath {
    pub fn endpoints(&self) -> (&str, &str) {
        (&self.nodes[0], &self.nodes[self.nodes.len() - 1])
    }

    pub fn route(&self) -> Route {
        Route { nodes: self.nodes.clone(), links: self.links.clone() }
    }

    /// End-to-end transmittance implied by the route loss.
    pub fn transmittance(&self) -> f64 {
        libm::pow(10.0, -self.total_loss_db / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RwaOutcome {
    Assigned(Lightpath),
    Blocked,
}

impl RwaOutcome {
    pub fn lightpath(self) -> Option<Lightpath> {
        match self {
            RwaOutcome::Assigned(lp) => Some(lp),
            RwaOutcome::Blocked => None,
        }
    }
}

fn check_endpoints(graph: &NetworkGraph, src: &str, dst: &str) -> Result<(), RwaError> {
    for n in [src, dst] {
        if !graph.has_node(n) {
            return Err(RwaError::UnknownNode(n.into()));
        }
    }
    if src == dst {
        return Err(RwaError::SameEndpoints(src.into()));
    }
    Ok(())
}

fn routing_bands(graph: &NetworkGraph, constraints: &RwaConstraints) -> Vec<Band> {
    match constraints.required_band {
        Some(b) => alloc::vec![b],
        None => {
            let set: BTreeSet<Band> = graph.grid().iter().map(|c| c.band).collect();
            set.into_iter().collect()
        }
    }
}

/// Dijkstra frontier entry; the heap pops the smallest (cost, hops, node).
#[derive(PartialEq)]
struct Frontier {
    cost: f64,
    hops: usize,
    node: String,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.hops.cmp(&self.hops))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'g> {
    graph: &'g NetworkGraph,
    band: Band,
    metric: MetricKind,
}

impl<'g> Search<'g> {
    fn can_transit(&self, node: &str) -> bool {
        self.graph.node(node).map(|n| n.kind == NodeKind::OpticalSwitch).unwrap_or(false)
    }

    fn shortest(
        &self,
        src: &str,
        dst: &str,
        banned_nodes: &BTreeSet<String>,
        banned_links: &BTreeSet<String>,
    ) -> Option<Route> {
        let mut best: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut prev: BTreeMap<String, (String, String)> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        best.insert(src.into(), (0.0, 0));
        heap.push(Frontier { cost: 0.0, hops: 0, node: src.into() });

        while let Some(Frontier { cost, hops, node }) = heap.pop() {
            if best.get(&node).is_some_and(|&(c, h)| (c, h) < (cost, hops)) {
                continue;
            }
            if node == dst {
                break;
            }
            if node != src && !self.can_transit(&node) {
                continue;
            }
            for link in self.graph.incident(&node) {
                if !link.up || banned_links.contains(&link.id) {
                    continue;
                }
                let Some(far) = link.other_end(&node) else { continue };
                if banned_nodes.contains(&far.node) || far.node == src {
                    continue;
                }
                let Ok(far_node) = self.graph.node(&far.node) else { continue };
                let Ok(w) = self.metric.hop(link, far_node, self.band) else { continue };
                let next = (cost + w, hops + 1);
                let better = match best.get(&far.node) {
                    None => true,
                    Some(&(c, h)) => next.0.total_cmp(&c).then(next.1.cmp(&h)) == Ordering::Less,
                };
                if better {
                    best.insert(far.node.clone(), next);
                    prev.insert(far.node.clone(), (node.clone(), link.id.clone()));
                    heap.push(Frontier { cost: next.0, hops: next.1, node: far.node.clone() });
                }
            }
        }

        if !best.contains_key(dst) {
            return None;
        }
        let mut nodes = alloc::vec![String::from(dst)];
        let mut links = Vec::new();
        let mut at = String::from(dst);
        while at != src {
            let (p, l) = prev.get(&at)?.clone();
            links.push(l);
            nodes.push(p.clone());
            at = p;
        }
        nodes.reverse();
        links.reverse();
        Some(Route { nodes, links })
    }

    fn candidate(&self, route: Route) -> Option<CandidatePath> {
        let metric = self.graph.route_metric(&route, self.band, self.metric).ok()?;
        Some(CandidatePath { route, metric })
    }

    /// Yen's algorithm. Keeps extracting past `k` while the next candidate
    /// ties the k-th metric so the caller can apply the full tie-break.
    fn yen(&self, src: &str, dst: &str, k: usize) -> Vec<CandidatePath> {
        let none = BTreeSet::new();
        let Some(first) = self.shortest(src, dst, &none, &none).and_then(|r| self.candidate(r)) else {
            return Vec::new();
        };
        let mut accepted: Vec<CandidatePath> = alloc::vec![first];
        let mut pool: Vec<CandidatePath> = Vec::new();
        let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
        seen.insert(accepted[0].route.links.clone());

        loop {
            let last = accepted[accepted.len() - 1].route.clone();
            for i in 0..last.hops() {
                let spur = &last.nodes[i];
                if i > 0 && !self.can_transit(spur) {
                    continue;
                }
                let root_nodes = &last.nodes[..=i];
                let root_links = &last.links[..i];
                let mut banned_links = BTreeSet::new();
                for p in &accepted {
                    if p.route.links.len() > i && p.route.links[..i] == *root_links && p.route.nodes[..=i] == *root_nodes
                    {
                        banned_links.insert(p.route.links[i].clone());
                    }
                }
                let banned_nodes: BTreeSet<String> = root_nodes[..i].iter().cloned().collect();
                let Some(spur_route) = self.shortest(spur, dst, &banned_nodes, &banned_links) else {
                    continue;
                };
                let mut nodes = root_nodes[..i].to_vec();
                nodes.extend(spur_route.nodes);
                let mut links = root_links.to_vec();
                links.extend(spur_route.links);
                if seen.contains(&links) {
                    continue;
                }
                if let Some(c) = self.candidate(Route { nodes, links }) {
                    seen.insert(c.route.links.clone());
                    pool.push(c);
                }
            }
            if pool.is_empty() {
                break;
            }
            let (idx, _) = pool
                .iter()
                .enumerate()
                .min_by(|a, b| candidate_order(a.1, b.1))
                .expect("pool not empty");
            let next = pool.swap_remove(idx);
            if accepted.len() >= k && next.metric.total_cmp(&accepted[k - 1].metric) == Ordering::Greater {
                break;
            }
            accepted.push(next);
        }
        accepted
    }
}

/// Up to `k_paths` loop-free routes, ascending by metric, then hop count,
/// then link-id sequence. Routes above `max_loss_db` are dropped. An empty
/// list means no route exists.
pub fn find_and_sort_paths(
    graph: &NetworkGraph,
    src: &str,
    dst: &str,
    constraints: &RwaConstraints,
) -> Result<Vec<CandidatePath>, RwaError> {
    check_endpoints(graph, src, dst)?;
    constraints.validate()?;
    let mut merged: BTreeMap<Vec<String>, CandidatePath> = BTreeMap::new();
    for band in routing_bands(graph, constraints) {
        let search = Search { graph, band, metric: constraints.metric };
        for c in search.yen(src, dst, constraints.k_paths) {
            match merged.get_mut(&c.route.links) {
                Some(existing) if existing.metric <= c.metric => {}
                Some(existing) => *existing = c,
                None => {
                    merged.insert(c.route.links.clone(), c);
                }
            }
        }
    }
    let mut paths: Vec<CandidatePath> = merged
        .into_values()
        .filter(|c| constraints.max_loss_db.is_none_or(|m| c.metric <= m))
        .collect();
    paths.sort_by(candidate_order);
    paths.truncate(constraints.k_paths);
    Ok(paths)
}

/// Free channels on `route` ordered by the wavelength policy. Channels whose
/// band is excluded by the constraints, lacks a coefficient on some hop, or
/// exceeds `max_loss_db` are left out.
pub fn sort_wavelengths(
    graph: &NetworkGraph,
    route: &Route,
    constraints: &RwaConstraints,
    policy: &WavelengthPolicy,
) -> Result<Vec<WavelengthChannel>, RwaError> {
    let available = graph.available_channels(&route.links)?;
    let mut ranked: Vec<(WavelengthChannel, f64)> = Vec::with_capacity(available.len());
    for ch in available {
        if constraints.required_band.is_some_and(|b| b != ch.band) {
            continue;
        }
        let loss = match graph.route_loss_db(route, ch.band) {
            Ok(l) => l,
            Err(TopologyError::MissingBandCoefficient { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        if constraints.max_loss_db.is_some_and(|m| loss > m) {
            continue;
        }
        ranked.push((ch, loss));
    }
    Ok(match policy {
        WavelengthPolicy::FirstFit => ranked.into_iter().map(|(c, _)| c).collect(),
        WavelengthPolicy::LowestLossFit => {
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
            ranked.into_iter().map(|(c, _)| c).collect()
        }
        WavelengthPolicy::ExplicitPreference(order) => order
            .iter()
            .filter_map(|label| ranked.iter().find(|(c, _)| &c.label == label).map(|(c, _)| c.clone()))
            .collect(),
    })
}

/// Routes and reserves a lightpath with the first feasible (route, channel)
/// pair, or reports the connection as blocked.
pub fn sp_rwa(
    graph: &mut NetworkGraph,
    src: &str,
    dst: &str,
    constraints: &RwaConstraints,
    lightpath_id: &str,
) -> Result<RwaOutcome, RwaError> {
    let paths = find_and_sort_paths(graph, src, dst, constraints)?;
    for path in paths {
        let channels = sort_wavelengths(graph, &path.route, constraints, &constraints.wavelength_policy)?;
        if let Some(channel) = channels.into_iter().next() {
            return assign(graph, path.route, channel, lightpath_id).map(RwaOutcome::Assigned);
        }
    }
    Ok(RwaOutcome::Blocked)
}

fn assign(
    graph: &mut NetworkGraph,
    route: Route,
    channel: WavelengthChannel,
    lightpath_id: &str,
) -> Result<Lightpath, RwaError> {
    let total_loss_db = graph.route_loss_db(&route, channel.band)?;
    graph.reserve(&route.links, &channel.label, lightpath_id)?;
    Ok(Lightpath {
        id: lightpath_id.into(),
        nodes: route.nodes,
        links: route.links,
        channel,
        total_loss_db,
    })
}

/// Removes the lightpath's reservation from every link it uses.
pub fn release(graph: &mut NetworkGraph, lightpath: &Lightpath) -> Result<(), RwaError> {
    graph
        .release_channel(&lightpath.links, &lightpath.channel.label, &lightpath.id)
        .map_err(|e| match e {
            TopologyError::NotHeld { .. } => RwaError::NotReserved(lightpath.id.clone()),
            other => RwaError::Topology(other),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BsmOutcome {
    Assigned(Lightpath, Lightpath),
    Blocked,
}

/// Reserves two lightpaths, `node_a -> bsm` and `node_b -> bsm`, or none.
///
/// Leg A candidates are tried in SP-RWA order; for each one leg B is routed
/// with SP-RWA on the remaining capacity.
pub fn route_to_bsm(
    graph: &mut NetworkGraph,
    node_a: &str,
    node_b: &str,
    bsm: &str,
    constraints: &RwaConstraints,
    ids: (&str, &str),
) -> Result<BsmOutcome, RwaError> {
    if graph.node(bsm).map_err(|_| RwaError::UnknownNode(bsm.into()))?.kind != NodeKind::Bsm {
        return Err(RwaError::NotBsm(bsm.into()));
    }
    check_endpoints(graph, node_b, bsm)?;
    let paths = find_and_sort_paths(graph, node_a, bsm, constraints)?;
    for path in paths {
        let channels = sort_wavelengths(graph, &path.route, constraints, &constraints.wavelength_policy)?;
        for channel in channels {
            let leg_a = assign(graph, path.route.clone(), channel, ids.0)?;
            match sp_rwa(graph, node_b, bsm, constraints, ids.1)? {
                RwaOutcome::Assigned(leg_b) => return Ok(BsmOutcome::Assigned(leg_a, leg_b)),
                RwaOutcome::Blocked => release(graph, &leg_a)?,
            }
        }
    }
    Ok(BsmOutcome::Blocked)
}
