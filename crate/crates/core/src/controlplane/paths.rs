//! EPS selection, path establishment and path verification.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::messages::{EntanglementRequest, VerificationResult};
use super::record::RejectionReason;
use crate::photonics::{noise_rate, ChannelModel};
use crate::rwa::{
    find_and_sort_paths, release, route_to_bsm, sort_wavelengths, sp_rwa, BsmOutcome, Lightpath, RwaConstraints,
    RwaError, RwaOutcome, WavelengthPolicy,
};
use crate::topology::{Band, NetworkGraph, NodeKind};

/// The controller's graph restricted to verified resources: links touching
/// an unschedulable node are down.
#[derive(Debug, Clone)]
pub struct VerifiedTopology {
    pub graph: NetworkGraph,
    pub schedulable: BTreeSet<String>,
    pub quarantined: BTreeMap<String, String>,
    departed: BTreeSet<String>,
}

impl VerifiedTopology {
    /// Starts with nothing schedulable.
    pub fn new(mut graph: NetworkGraph) -> Self {
        let ids: Vec<String> = graph.links().map(|l| l.id.clone()).collect();
        for id in ids {
            graph.set_link_up(&id, false).expect("link exists");
        }
        VerifiedTopology { graph, schedulable: BTreeSet::new(), quarantined: BTreeMap::new(), departed: BTreeSet::new() }
    }

    /// Every node schedulable, as if discovery had verified all claims.
    pub fn all_verified(graph: NetworkGraph) -> Self {
        let mut t = Self::new(graph);
        let ids: Vec<String> = t.graph.nodes().map(|n| n.id.clone()).collect();
        for id in ids {
            t.mark_verified(&id);
        }
        t
    }

    fn refresh_links(&mut self) {
        let updates: Vec<(String, bool)> = self
            .graph
            .links()
            .map(|l| (l.id.clone(), self.schedulable.contains(&l.a.node) && self.schedulable.contains(&l.b.node)))
            .collect();
        for (id, up) in updates {
            self.graph.set_link_up(&id, up).expect("link exists");
        }
    }

    pub fn mark_verified(&mut self, node: &str) {
        if self.departed.contains(node) {
            return;
        }
        self.quarantined.remove(node);
        self.schedulable.insert(node.to_string());
        self.refresh_links();
    }

    pub fn quarantine(&mut self, node: &str, reason: String) {
        self.schedulable.remove(node);
        self.quarantined.insert(node.to_string(), reason);
        self.refresh_links();
    }

    pub fn depart(&mut self, node: &str) {
        self.schedulable.remove(node);
        self.departed.insert(node.to_string());
        self.refresh_links();
    }

    pub fn is_schedulable(&self, node: &str) -> bool {
        self.schedulable.contains(node)
    }
}

/// Count of user pairs currently served per EPS.
pub type EpsAllocations = BTreeMap<String, u32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsChoice {
    pub eps: String,
    pub hops: usize,
    pub loss_db: f64,
}

/// First (route, channel) SP-RWA would pick, without reserving.
fn first_feasible(graph: &NetworkGraph, src: &str, dst: &str, c: &RwaConstraints) -> Option<(usize, f64)> {
    let paths = find_and_sort_paths(graph, src, dst, c).ok()?;
    for p in paths {
        let channels = sort_wavelengths(graph, &p.route, c, &c.wavelength_policy).ok()?;
        if let Some(ch) = channels.first() {
            let loss = graph.route_loss_db(&p.route, ch.band).ok()?;
            return Some((p.route.hops(), loss));
        }
    }
    None
}

/// Picks the EPS for a request: capable of the qubit type, with a free user
/// pair, and with feasible paths to both nodes. Ties go to fewest total
/// hops, then lowest combined loss, then id.
pub fn select_eps(
    request: &EntanglementRequest,
    topology: &VerifiedTopology,
    allocations: &EpsAllocations,
    constraints: &RwaConstraints,
) -> Result<EpsChoice, RejectionReason> {
    let (n1, n2) = (&request.node_pair.0, &request.node_pair.1);
    let capable: Vec<_> = topology
        .graph
        .nodes()
        .filter(|n| n.kind == NodeKind::Eps && topology.is_schedulable(&n.id) && n.supports(request.qubit_type))
        .collect();
    if capable.is_empty() {
        return Err(RejectionReason::NoCapableEps);
    }
    let with_capacity: Vec<_> = capable
        .into_iter()
        .filter(|n| allocations.get(&n.id).copied().unwrap_or(0) < n.pair_capacity())
        .collect();
    if with_capacity.is_empty() {
        return Err(RejectionReason::NoCapacity);
    }
    let mut best: Option<EpsChoice> = None;
    for eps in with_capacity {
        let (Some(a), Some(b)) =
            (first_feasible(&topology.graph, &eps.id, n1, constraints), first_feasible(&topology.graph, &eps.id, n2, constraints))
        else {
            continue;
        };
        let cand = EpsChoice { eps: eps.id.clone(), hops: a.0 + b.0, loss_db: a.1 + b.1 };
        let better = match &best {
            None => true,
            Some(cur) => (cand.hops, cand.loss_db).partial_cmp(&(cur.hops, cur.loss_db)) == Some(core::cmp::Ordering::Less),
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or(RejectionReason::NoFeasiblePaths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub quantum: [Lightpath; 2],
    pub sync: Lightpath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bsm_legs: Option<[Lightpath; 2]>,
}

impl PathSet {
    pub fn all(&self) -> Vec<Lightpath> {
        let mut v = vec![self.quantum[0].clone(), self.quantum[1].clone(), self.sync.clone()];
        if let Some(legs) = &self.bsm_legs {
            v.extend(legs.iter().cloned());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstablishFailure {
    Blocked(String),
}

/// Constraints for the classical sync path: pinned to `sync_label` when the
/// grid carries it, otherwise first-fit in the C-band.
pub fn sync_constraints(graph: &NetworkGraph, sync_label: &str, k_paths: usize) -> RwaConstraints {
    let mut c = RwaConstraints { k_paths, ..RwaConstraints::default() };
    match graph.channel(sync_label) {
        Ok(ch) => {
            c.required_band = Some(ch.band);
            c.wavelength_policy = WavelengthPolicy::ExplicitPreference(vec![sync_label.to_string()]);
        }
        Err(_) => c.required_band = Some(Band::CBand),
    }
    c
}

/// Reserves both quantum lightpaths, the sync lightpath and, for
/// teleportation, the two BSM legs. On any failure every reservation made
/// here is rolled back.
pub fn establish_paths(
    graph: &mut NetworkGraph,
    request_id: &str,
    request: &EntanglementRequest,
    eps: &str,
    quantum: &RwaConstraints,
    sync: &RwaConstraints,
) -> Result<Result<PathSet, EstablishFailure>, RwaError> {
    let (n1, n2) = (request.node_pair.0.as_str(), request.node_pair.1.as_str());
    let ids = [
        alloc::format!("{request_id}/q1"),
        alloc::format!("{request_id}/q2"),
        alloc::format!("{request_id}/sync"),
        alloc::format!("{request_id}/bsm-a"),
        alloc::format!("{request_id}/bsm-b"),
    ];
    let mut held: Vec<Lightpath> = Vec::new();
    let rollback = |graph: &mut NetworkGraph, held: &[Lightpath]| -> Result<(), RwaError> {
        for lp in held.iter().rev() {
            release(graph, lp)?;
        }
        Ok(())
    };
    let steps: [(&str, &str, &RwaConstraints, &str, &str); 3] =
        [(eps, n1, quantum, &ids[0], "quantum path to first node"), (eps, n2, quantum, &ids[1], "quantum path to second node"), (n1, n2, sync, &ids[2], "sync path")];
    for (src, dst, c, id, what) in steps {
        match sp_rwa(graph, src, dst, c, id) {
            Ok(RwaOutcome::Assigned(lp)) => held.push(lp),
            Ok(RwaOutcome::Blocked) => {
                rollback(graph, &held)?;
                return Ok(Err(EstablishFailure::Blocked(what.into())));
            }
            Err(e) => {
                rollback(graph, &held)?;
                return Err(e);
            }
        }
    }
    let mut bsm_legs = None;
    if let Some(bsm) = &request.teleportation_bsm {
        match route_to_bsm(graph, n1, n2, bsm, quantum, (&ids[3], &ids[4])) {
            Ok(BsmOutcome::Assigned(a, b)) => bsm_legs = Some([a, b]),
            Ok(BsmOutcome::Blocked) => {
                rollback(graph, &held)?;
                return Ok(Err(EstablishFailure::Blocked("BSM legs".into())));
            }
            Err(e) => {
                rollback(graph, &held)?;
                return Err(e);
            }
        }
    }
    let sync_lp = held.pop().expect("sync");
    let q2 = held.pop().expect("q2");
    let q1 = held.pop().expect("q1");
    Ok(Ok(PathSet { quantum: [q1, q2], sync: sync_lp, bsm_legs }))
}

pub fn release_paths(graph: &mut NetworkGraph, paths: &PathSet) -> Result<(), RwaError> {
    for lp in paths.all().iter().rev() {
        release(graph, lp)?;
    }
    Ok(())
}

/// Raw readings of the two verification stages at a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub loss_estimate_db: f64,
    pub on_counts: u64,
    pub off_counts: u64,
    pub integration_s: f64,
}

fn poisson(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    } else {
        0
    }
}

/// Stage one: classical probe loss with Gaussian read-out error.
pub fn probe_loss(true_loss_db: f64, noise_db: f64, rng: &mut impl Rng) -> f64 {
    if noise_db > 0.0 {
        true_loss_db + Normal::new(0.0, noise_db).expect("positive sigma").sample(rng)
    } else {
        true_loss_db
    }
}

/// Stage two: counts with the quantum light on and off. `arm` carries the
/// true transmittance seen by the photons.
pub fn measure_clicks(pair_rate_hz: f64, arm: &ChannelModel, integration_s: f64, rng: &mut impl Rng) -> (u64, u64) {
    let noise = noise_rate(arm);
    let signal = pair_rate_hz * arm.transmittance * arm.detector_efficiency;
    (poisson((signal + noise) * integration_s, rng), poisson(noise * integration_s, rng))
}

/// Pass iff noise/click < `threshold` and the signal count lies within 3
/// Poisson sigmas of the expected `R eta det`.
pub fn evaluate_verification(expected_click_rate: f64, m: &PathMeasurement, threshold: f64) -> VerificationResult {
    let t = m.integration_s;
    let signal = m.on_counts as f64 - m.off_counts as f64;
    let click_rate = signal / t;
    let noise_rate = m.off_counts as f64 / t;
    let ratio_ok = click_rate > 0.0 && noise_rate / click_rate < threshold;
    let sigma = libm::sqrt((m.on_counts + m.off_counts).max(1) as f64);
    let rate_ok = libm::fabs(signal - expected_click_rate * t) <= 3.0 * sigma;
    VerificationResult {
        loss_estimate_db: m.loss_estimate_db,
        click_rate,
        noise_rate,
        expected_click_rate,
        pass: ratio_ok && rate_ok,
    }
}

/// Both verification stages for one arm. `arm.transmittance` is the
/// configured path; `hidden_loss_db` is extra loss the quantum signal sees
/// but the classical probe does not.
pub fn verify_path(
    lightpath: &Lightpath,
    pair_rate_hz: f64,
    arm: &ChannelModel,
    hidden_loss_db: f64,
    threshold: f64,
    integration_s: f64,
    probe_noise_db: f64,
    rng: &mut impl Rng,
) -> VerificationResult {
    let loss_estimate_db = probe_loss(lightpath.total_loss_db, probe_noise_db, rng);
    let eta = crate::photonics::db_to_transmittance(loss_estimate_db);
    let expected = pair_rate_hz * eta * arm.detector_efficiency;
    let mut actual = arm.clone();
    actual.transmittance = lightpath.transmittance() * crate::photonics::db_to_transmittance(hidden_loss_db);
    let (on_counts, off_counts) = measure_clicks(pair_rate_hz, &actual, integration_s, rng);
    evaluate_verification(expected, &PathMeasurement { loss_estimate_db, on_counts, off_counts, integration_s }, threshold)
}

/// Whether a qubit-type conversion would be needed between the request and
/// the chosen resources; not supported.
pub fn conversion_needed(request: &EntanglementRequest, graph: &NetworkGraph) -> bool {
    let (a, b) = (&request.node_pair.0, &request.node_pair.1);
    [a, b].iter().any(|n| graph.node(n).map(|n| !n.supports(request.qubit_type)).unwrap_or(false))
}
