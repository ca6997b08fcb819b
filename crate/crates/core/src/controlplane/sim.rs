//! The server, the SDN agent and the network resources as handlers on one
//! discrete-event kernel.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::discovery::check_registration;
use super::messages::*;
use super::params::{ChannelParams, Fault, ModelParams, Scenario};
use super::paths::{
    establish_paths, evaluate_verification, measure_clicks, probe_loss, release_paths, select_eps, sync_constraints,
    EpsAllocations, EstablishFailure, PathMeasurement, PathSet, VerifiedTopology,
};
use super::record::{BatchStatistics, NodeVerification, RejectionReason, RequestRecord, RequestState, ResultRecord};
use super::sdn::{registration_for, SdnAgent};
use crate::calibration::{
    align_interferometer_phase, align_polarization, align_timebin, clock_jitter_budget, find_correlation_delay,
    scan_hom, synthetic_timebin_histogram, CalibrationError, CalibrationReport, FidelityEstimator,
    HomFidelityEstimate, JitterCheck, PeakedCoincidences, PolarizationChannelState, QualityInputs,
};
use crate::jones::Jones;
use crate::photonics::{
    car, classify_nonclassical, db_to_transmittance, singles_and_coincidences, visibility_with, ChannelModel, EpsModel,
    HomDipModel, Nonclassicality,
};
use crate::rwa::{Lightpath, RwaConstraints};
use crate::simkernel::{ns_to_secs, secs_to_ns, Kernel, KernelEvent, TraceRecord, VirtualTime};
use crate::topology::{NetworkGraph, NodeKind, QubitType};

/// Timer payloads. The event target names the entity that owns the timer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Timer {
    Submit { request_id: String, request: EntanglementRequest },
    LateRegister,
    RetryEstablish { request_id: String },
    VerifyTimeout { request_id: String, attempt: u32 },
    /// Publish a reply once a node's virtual work is done.
    Reply { topic: String, correlation_id: String, message: Box<BusMessage> },
    Start { request_id: String, round: u32 },
    Batch { request_id: String, round: u32 },
    DutyCycle { request_id: String },
    DriftBurst { angle_rad: f64 },
    Depart { node: String },
    SwitchAvailability { switch: String, available: bool },
}

pub type SimKernel = Kernel<BusMessage, Timer>;
pub type SimTrace = TraceRecord<BusMessage>;

/// Physical state of one receiving arm and the node behind it.
#[derive(Debug, Clone)]
struct NodeSim {
    registered: bool,
    departed: bool,
    polarization: PolarizationChannelState,
    last_drift_ns: VirtualTime,
    drift_updates: u64,
    /// Interferometer phase error left by the last time-bin alignment.
    phase_error_rad: f64,
    /// Remaining stage-two measurements affected, and the extra loss.
    hidden_loss: (u32, f64),
    probes: u64,
    lightpaths: BTreeMap<String, Vec<Lightpath>>,
    dist: BTreeMap<String, DistState>,
}

#[derive(Debug, Clone, Default)]
struct DistState {
    round: u32,
    active: bool,
    index: u32,
    ebits: u64,
    last_ns: VirtualTime,
}

/// Server-side bookkeeping for a live request.
#[derive(Debug, Clone, Default)]
struct Active {
    eps: Option<String>,
    paths: Option<PathSet>,
    blocked_attempts: u32,
    verify_attempt: u32,
    pending_verify: BTreeMap<String, String>,
    loss_estimates: BTreeMap<String, f64>,
    verify_failures: Vec<String>,
    timeout_seq: Option<u64>,
    round: u32,
    calibration_failures: u32,
    awaiting_ready: BTreeSet<String>,
    started_once: bool,
}

fn participants(req: &EntanglementRequest, eps: &str) -> Vec<(String, Procedure)> {
    let proc_ = match req.qubit_type {
        QubitType::Polarization => Procedure::Polarization,
        QubitType::TimeBin => Procedure::TimeBin,
    };
    let mut v = vec![
        (req.node_pair.0.clone(), proc_),
        (req.node_pair.1.clone(), proc_),
        (eps.to_string(), Procedure::AlignmentLight),
    ];
    if let Some(bsm) = &req.teleportation_bsm {
        v.push((bsm.clone(), Procedure::Hom));
    }
    v
}

/// Arm model for a lightpath ending at a node with channel parameters `ch`.
pub fn arm_model(graph: &NetworkGraph, lp: &Lightpath, ch: &ChannelParams) -> ChannelModel {
    let length: f64 = lp.links.iter().filter_map(|l| graph.link(l).ok()).map(|l| l.length_km).sum();
    ChannelModel {
        transmittance: lp.transmittance(),
        detector_efficiency: ch.detector_efficiency,
        dark_rate_hz: ch.dark_rate_hz,
        filter_bw_ghz: ch.filter_bw_ghz,
        coincidence_window_s: ch.coincidence_window_s,
        raman_coeff: ch.raman_coeff,
        classical_power_mw: ch.classical_power_mw,
        fiber_length_km: length,
        attenuation_db_per_km: if length > 0.0 { lp.total_loss_db / length } else { 0.0 },
    }
}

/// Poisson draw of one measurement batch. `alignment_factor` multiplies
/// the source visibility.
pub fn sample_batch(
    eps: &EpsModel,
    arm1: &ChannelModel,
    arm2: &ChannelModel,
    alignment_factor: f64,
    duration_s: f64,
    rng: &mut impl Rng,
) -> (u64, u64, f64) {
    let stats = singles_and_coincidences(eps, arm1, arm2);
    let draw = |mean: f64, rng: &mut _| -> u64 {
        if mean > 0.0 {
            Poisson::new(mean).expect("positive mean").sample(rng) as u64
        } else {
            0
        }
    };
    let coincidences = draw(stats.coincidences_hz * duration_s, rng);
    let accidentals = draw(stats.accidentals_hz * duration_s, rng);
    let v = visibility_with(eps.intrinsic_visibility * alignment_factor, coincidences as f64, accidentals as f64);
    (coincidences, accidentals, v)
}

/// Checks a request against the static topology.
pub fn validate_request(graph: &NetworkGraph, req: &EntanglementRequest) -> Result<(), String> {
    let (a, b) = (&req.node_pair.0, &req.node_pair.1);
    if a == b {
        return Err("node_pair must name two distinct nodes".into());
    }
    if !(req.end_time_s > req.start_time_s) {
        return Err("end_time_s must be after start_time_s".into());
    }
    if !(req.start_time_s >= 0.0) {
        return Err("start_time_s must be >= 0".into());
    }
    if req.target_ebits == 0 {
        return Err("target_ebits must be >= 1".into());
    }
    for n in [a, b] {
        match graph.node(n) {
            Ok(node) if node.kind == NodeKind::QNode => {}
            Ok(_) => return Err(format!("`{n}` is not a Q-Node")),
            Err(_) => return Err(format!("unknown node `{n}`")),
        }
    }
    if let Some(bsm) = &req.teleportation_bsm {
        match graph.node(bsm) {
            Ok(node) if node.kind == NodeKind::Bsm => {}
            Ok(_) => return Err(format!("`{bsm}` is not a BSM node")),
            Err(_) => return Err(format!("unknown node `{bsm}`")),
        }
    }
    Ok(())
}

pub struct Simulation {
    kernel: SimKernel,
    params: ModelParams,
    base: NetworkGraph,
    topo: VerifiedTopology,
    agent: SdnAgent,
    agent_paths: BTreeMap<String, Vec<Lightpath>>,
    allocations: EpsAllocations,
    records: BTreeMap<String, RequestRecord>,
    order: Vec<String>,
    active: BTreeMap<String, Active>,
    deferred: Vec<String>,
    pending_discovery: BTreeSet<String>,
    nodes: BTreeMap<String, NodeSim>,
    results: Vec<ResultRecord>,
    duty_cycle_s: f64,
    errors: Vec<String>,
    next_auto_id: u64,
    discovery_log: Vec<u64>,
}

impl Simulation {
    /// Every non-switch resource registers at t = 0.
    pub fn new(graph: NetworkGraph, params: ModelParams, seed: u64, duty_cycle_s: f64) -> Self {
        Self::build(graph, params, seed, duty_cycle_s, &BTreeSet::new())
    }

    fn build(
        graph: NetworkGraph,
        params: ModelParams,
        seed: u64,
        duty_cycle_s: f64,
        late: &BTreeSet<String>,
    ) -> Self {
        let kernel = Kernel::new(seed, params.protocol.message_latency_ns);
        let agent = SdnAgent::discover(&graph);
        let mut nodes = BTreeMap::new();
        for n in graph.nodes().filter(|n| n.kind != NodeKind::OpticalSwitch) {
            let mut rng = kernel.rng(&format!("fiber/{}", n.id));
            let mut pol = PolarizationChannelState::new(Jones::random_su2(&mut rng));
            pol.drift_rate = params.channel_params(&n.id).drift_rate_rad_per_s;
            nodes.insert(
                n.id.clone(),
                NodeSim {
                    registered: false,
                    departed: false,
                    polarization: pol,
                    last_drift_ns: 0,
                    drift_updates: 0,
                    phase_error_rad: 0.0,
                    hidden_loss: (0, 0.0),
                    probes: 0,
                    lightpaths: BTreeMap::new(),
                    dist: BTreeMap::new(),
                },
            );
        }
        let mut sim = Simulation {
            kernel,
            topo: VerifiedTopology::new(graph.clone()),
            base: graph,
            params,
            agent,
            agent_paths: BTreeMap::new(),
            allocations: BTreeMap::new(),
            records: BTreeMap::new(),
            order: Vec::new(),
            active: BTreeMap::new(),
            deferred: Vec::new(),
            pending_discovery: BTreeSet::new(),
            nodes,
            results: Vec::new(),
            duty_cycle_s,
            errors: Vec::new(),
            next_auto_id: 1,
            discovery_log: Vec::new(),
        };
        sim.kernel.subscribe(SERVER, TOPIC_REGISTER);
        sim.kernel.subscribe(SERVER, TOPIC_TOPOLOGY);
        sim.kernel.subscribe(SERVER, "qnet/request/+/ctl");
        sim.kernel.subscribe(SERVER, "qnet/request/+/meas");
        sim.kernel.subscribe(SERVER, "qnet/cal/+");
        sim.kernel.subscribe(AGENT, TOPIC_TOPOLOGY);
        sim.kernel.subscribe(AGENT, "qnet/request/+/ctl");
        let ids: Vec<String> = sim.nodes.keys().cloned().collect();
        for id in &ids {
            sim.kernel.subscribe(id, "qnet/request/+/ctl");
            sim.kernel.subscribe(id, &cal_topic(id));
        }
        // The agent vouches for the switches it manages.
        let switches: Vec<String> =
            sim.base.nodes().filter(|n| n.kind == NodeKind::OpticalSwitch).map(|n| n.id.clone()).collect();
        for sw in switches {
            sim.publish(
                TOPIC_TOPOLOGY,
                AGENT,
                DISCOVERY,
                BusMessage::TopologyUpdate { resource_id: sw, change: TopologyChange::Verified },
            );
        }
        for id in ids.iter().filter(|id| !late.contains(*id)) {
            sim.register(id);
        }
        sim
    }

    /// Builds the run a scenario describes: registrations, late arrivals,
    /// faults and scripted submissions.
    pub fn from_scenario(graph: NetworkGraph, params: ModelParams, scenario: &Scenario) -> Result<Self, String> {
        scenario.validate()?;
        let late: BTreeSet<String> = scenario.late_registrations.iter().map(|l| l.node.clone()).collect();
        for n in &late {
            if !graph.has_node(n) {
                return Err(format!("late registration for unknown node `{n}`"));
            }
        }
        let mut sim = Self::build(graph, params, scenario.seed, scenario.duty_cycle_s, &late);
        for l in &scenario.late_registrations {
            sim.kernel
                .engine
                .schedule(secs_to_ns(l.at_s), l.node.clone(), KernelEvent::Timer(Timer::LateRegister))
                .map_err(|e| format!("{e}"))?;
        }
        for f in &scenario.faults {
            sim.add_fault(f)?;
        }
        for r in &scenario.requests {
            sim.submit_at(r.submit_time_s, r.id.clone(), r.request.clone())?;
        }
        Ok(sim)
    }

    pub fn add_fault(&mut self, fault: &Fault) -> Result<(), String> {
        let known = |sim: &Self, n: &str| {
            if sim.base.has_node(n) {
                Ok(())
            } else {
                Err(format!("fault names unknown node `{n}`"))
            }
        };
        let at = secs_to_ns;
        match fault {
            Fault::VerificationFailure { node, count, extra_loss_db } => {
                known(self, node)?;
                let n = self.nodes.get_mut(node).ok_or_else(|| format!("`{node}` takes no measurements"))?;
                n.hidden_loss = (*count, *extra_loss_db);
            }
            Fault::DriftBurst { at_s, node, angle_rad } => {
                known(self, node)?;
                self.kernel
                    .engine
                    .schedule(at(*at_s), node.clone(), KernelEvent::Timer(Timer::DriftBurst { angle_rad: *angle_rad }))
                    .map_err(|e| format!("{e}"))?;
            }
            Fault::ResourceDeparture { at_s, node } => {
                known(self, node)?;
                self.kernel
                    .engine
                    .schedule(at(*at_s), AGENT, KernelEvent::Timer(Timer::Depart { node: node.clone() }))
                    .map_err(|e| format!("{e}"))?;
            }
            Fault::SwitchUnavailable { switch, from_s, until_s } => {
                known(self, switch)?;
                for (t, available) in [(*from_s, false), (*until_s, true)] {
                    self.kernel
                        .engine
                        .schedule(
                            at(t),
                            AGENT,
                            KernelEvent::Timer(Timer::SwitchAvailability { switch: switch.clone(), available }),
                        )
                        .map_err(|e| format!("{e}"))?;
                }
            }
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> String {
        loop {
            let id = format!("req-{:04}", self.next_auto_id);
            self.next_auto_id += 1;
            if !self.records.contains_key(&id) && !self.order.contains(&id) {
                return id;
            }
        }
    }

    /// Schedules a portal submission at `t_s` (not before now). Returns the
    /// request id.
    pub fn submit_at(&mut self, t_s: f64, id: Option<String>, request: EntanglementRequest) -> Result<String, String> {
        let id = match id {
            Some(id) if self.order.contains(&id) => return Err(format!("duplicate request id `{id}`")),
            Some(id) if id.is_empty() || id.contains('/') || id.contains('+') || id.contains('#') => {
                return Err(format!("request id `{id}` is not a valid topic segment"))
            }
            Some(id) => id,
            None => self.fresh_id(),
        };
        let t = secs_to_ns(t_s).max(self.kernel.now());
        self.kernel
            .engine
            .schedule(t, PORTAL, KernelEvent::Timer(Timer::Submit { request_id: id.clone(), request }))
            .map_err(|e| format!("{e}"))?;
        self.order.push(id.clone());
        Ok(id)
    }

    pub fn submit(&mut self, id: Option<String>, request: EntanglementRequest) -> Result<String, String> {
        self.submit_at(ns_to_secs(self.kernel.now()), id, request)
    }

    /// Processes events up to `limit` (or until none remain). Returns the
    /// number of events handled.
    pub fn run_until(&mut self, limit: Option<VirtualTime>) -> usize {
        let mut n = 0;
        while let Some(ev) = self.kernel.engine.pop_until(limit) {
            match ev.payload {
                KernelEvent::Deliver(rec) => self.deliver(&ev.target, rec),
                KernelEvent::Timer(t) => self.on_timer(&ev.target, t),
            }
            n += 1;
        }
        if let Some(l) = limit {
            self.kernel.engine.advance_to(l);
        }
        n
    }

    pub fn now(&self) -> VirtualTime {
        self.kernel.now()
    }

    pub fn trace(&self) -> &[SimTrace] {
        self.kernel.trace()
    }

    pub fn kernel(&self) -> &SimKernel {
        &self.kernel
    }

    pub fn record(&self, id: &str) -> Option<&RequestRecord> {
        self.records.get(id)
    }

    /// Records in submission order.
    pub fn records(&self) -> impl Iterator<Item = &RequestRecord> {
        self.order.iter().filter_map(|id| self.records.get(id))
    }

    /// Ids accepted for submission, in order, including ones whose
    /// submission event is still pending.
    pub fn submitted_ids(&self) -> &[String] {
        &self.order
    }

    pub fn results(&self) -> &[ResultRecord] {
        &self.results
    }

    pub fn topology(&self) -> &VerifiedTopology {
        &self.topo
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.topo.graph
    }

    pub fn agent(&self) -> &SdnAgent {
        &self.agent
    }

    pub fn allocations(&self) -> &EpsAllocations {
        &self.allocations
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Internal protocol violations; empty in a correct run.
    pub fn errors(&self) -> &[String] {
        &self.errors
    }

    /// Trace sequence numbers of discovery-session messages.
    pub fn discovery_log(&self) -> &[u64] {
        &self.discovery_log
    }

    pub fn live_requests(&self) -> usize {
        self.records.values().filter(|r| !r.state.is_terminal()).count()
    }

    /// True when no request is live and no submission is pending.
    pub fn is_quiescent(&self) -> bool {
        self.live_requests() == 0 && self.order.iter().all(|id| self.records.contains_key(id))
    }

    // ---- plumbing -------------------------------------------------------

    fn publish(&mut self, topic: &str, sender: &str, corr: &str, msg: BusMessage) -> u64 {
        let seq = self.kernel.publish(topic, sender, corr, msg);
        if corr == DISCOVERY {
            self.discovery_log.push(seq);
        } else if let Some(r) = self.records.get_mut(corr) {
            r.trace.push(seq);
        } else {
            self.errors.push(format!("message {seq} correlates to unknown id `{corr}`"));
        }
        seq
    }

    fn rng(&self, key: &str) -> rand_chacha::ChaCha8Rng {
        self.kernel.rng(key)
    }

    fn register(&mut self, node: &str) {
        let reg = match self.base.node(node) {
            Ok(n) => registration_for(n),
            Err(_) => return,
        };
        if let Some(n) = self.nodes.get_mut(node) {
            n.registered = true;
        }
        self.publish(TOPIC_REGISTER, node, DISCOVERY, BusMessage::Register(reg));
    }

    fn deliver(&mut self, target: &str, rec: SimTrace) {
        match target {
            SERVER => self.server_on(rec),
            AGENT => self.agent_on(rec),
            PORTAL => {}
            node => self.node_on(node, rec),
        }
    }

    fn on_timer(&mut self, target: &str, t: Timer) {
        match t {
            Timer::Submit { request_id, request } => {
                let topic = ctl_topic(&request_id);
                // The record exists from the moment the portal sends.
                self.records.insert(
                    request_id.clone(),
                    RequestRecord::new(request_id.clone(), request.clone(), self.kernel.now()),
                );
                self.records.get_mut(&request_id).expect("inserted").history.clear();
                self.publish(&topic, PORTAL, &request_id, BusMessage::SubmitRequest { request_id: request_id.clone(), request });
            }
            Timer::LateRegister => {
                if self.nodes.get(target).is_some_and(|n| n.departed) {
                    return;
                }
                self.publish(
                    TOPIC_TOPOLOGY,
                    AGENT,
                    DISCOVERY,
                    BusMessage::TopologyUpdate { resource_id: target.to_string(), change: TopologyChange::ResourceAdded },
                );
                self.register(target);
            }
            Timer::RetryEstablish { request_id } => {
                let ok = self.records.get(&request_id).is_some_and(|r| {
                    matches!(r.state, RequestState::EpsSelected | RequestState::PathsEstablished)
                });
                if ok {
                    self.try_establish(&request_id);
                }
            }
            Timer::VerifyTimeout { request_id, attempt } => {
                let timed_out = self
                    .active
                    .get(&request_id)
                    .is_some_and(|a| a.verify_attempt == attempt && !a.pending_verify.is_empty());
                if timed_out {
                    let missing: Vec<String> = self.active[&request_id].pending_verify.keys().cloned().collect();
                    self.verification_failed(&request_id, format!("verification timed out waiting for {}", missing.join(", ")));
                }
            }
            Timer::Reply { topic, correlation_id, message } => {
                if self.nodes.get(target).is_some_and(|n| n.departed) {
                    return;
                }
                if self.records.get(&correlation_id).is_some_and(|r| r.state.is_terminal()) {
                    return;
                }
                self.publish(&topic, target, &correlation_id, *message);
            }
            Timer::Start { request_id, round } => self.server_start(&request_id, round),
            Timer::Batch { request_id, round } => self.node_batch(target, &request_id, round),
            Timer::DutyCycle { request_id } => {
                let Some(r) = self.records.get(&request_id) else { return };
                if r.state.is_terminal() || r.state == RequestState::Ended {
                    return;
                }
                if r.state == RequestState::Distributing {
                    self.start_calibration(&request_id, Some("duty cycle".into()));
                }
                self.kernel.set_timer(secs_to_ns(self.duty_cycle_s), SERVER, Timer::DutyCycle { request_id });
            }
            Timer::DriftBurst { angle_rad } => {
                self.advance_drift(target);
                let mut rng = self.rng(&format!("burst/{target}/{}", self.kernel.now()));
                if let Some(n) = self.nodes.get_mut(target) {
                    let u = Jones::random_rotation(angle_rad, &mut rng) * n.polarization.fiber_unitary;
                    n.polarization.fiber_unitary = u.renormalized();
                }
            }
            Timer::Depart { node } => {
                if let Some(n) = self.nodes.get_mut(&node) {
                    n.departed = true;
                }
                self.kernel.unsubscribe_all(&node);
                self.publish(
                    TOPIC_TOPOLOGY,
                    AGENT,
                    DISCOVERY,
                    BusMessage::TopologyUpdate { resource_id: node, change: TopologyChange::ResourceRemoved },
                );
            }
            Timer::SwitchAvailability { switch, available } => self.agent.set_available(&switch, available),
        }
    }

    // ---- server ---------------------------------------------------------

    fn transition(&mut self, id: &str, to: RequestState, detail: Option<String>) {
        let now = self.kernel.now();
        let Some(r) = self.records.get_mut(id) else { return };
        if let Err(e) = r.transition(to.clone(), now) {
            self.errors.push(e);
            return;
        }
        if to.is_terminal() {
            let result = r.to_result();
            self.results.push(result);
        }
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::StateChanged { state: to, detail });
    }

    fn server_on(&mut self, rec: SimTrace) {
        let corr = rec.correlation_id.clone();
        match rec.payload {
            BusMessage::Register(reg) => {
                self.pending_discovery.insert(reg.resource_id.clone());
                self.publish(
                    TOPIC_TOPOLOGY,
                    SERVER,
                    DISCOVERY,
                    BusMessage::TopologyQuery { resource_id: reg.resource_id, claims: reg.connectivity_claims },
                );
            }
            BusMessage::TopologyUpdate { resource_id, change } => {
                match change {
                    TopologyChange::Verified => self.topo.mark_verified(&resource_id),
                    TopologyChange::Mismatch { detail } => self.topo.quarantine(&resource_id, detail),
                    TopologyChange::ResourceAdded => {}
                    TopologyChange::ResourceRemoved => self.resource_departed(&resource_id),
                }
                self.pending_discovery.remove(&resource_id);
                if self.pending_discovery.is_empty() {
                    for id in core::mem::take(&mut self.deferred) {
                        self.process_request(&id);
                    }
                }
            }
            BusMessage::SubmitRequest { request_id, .. } if rec.sender == PORTAL => {
                let now = self.kernel.now();
                if let Some(r) = self.records.get_mut(&request_id) {
                    if !r.history.is_empty() {
                        return;
                    }
                    r.history.push(super::record::StateEntry { t_ns: now, state: RequestState::Received });
                    r.submitted_ns = now;
                }
                self.publish(
                    &ctl_topic(&request_id),
                    SERVER,
                    &request_id,
                    BusMessage::StateChanged { state: RequestState::Received, detail: None },
                );
                if self.pending_discovery.is_empty() {
                    self.process_request(&request_id);
                } else {
                    self.deferred.push(request_id);
                }
            }
            BusMessage::Ack { step } if step == "EstablishPaths" && rec.sender == AGENT => self.paths_acked(&corr),
            BusMessage::Nack { step, reason } if step == "EstablishPaths" && rec.sender == AGENT => {
                let Some(paths) = self.active.get_mut(&corr).and_then(|a| a.paths.take()) else { return };
                if let Err(e) = release_paths(&mut self.topo.graph, &paths) {
                    self.errors.push(format!("{corr}: release after NACK: {e}"));
                }
                self.blocked_attempt(&corr, reason);
            }
            BusMessage::VerificationResult { node, lightpath_id, stage, loss_estimate_db, result } => {
                self.verification_result(&corr, node, lightpath_id, stage, loss_estimate_db, result)
            }
            BusMessage::CalibrationDone { round, reports, .. } => {
                let live = self.active.get(&corr).is_some_and(|a| a.round == round);
                if let (true, Some(r)) = (live, self.records.get_mut(&corr)) {
                    for rep in &reports {
                        if let Some(f) = rep.parameters.get("fidelity_estimate") {
                            r.fidelity_estimate = Some(*f);
                        }
                    }
                    r.calibration_reports.extend(reports);
                }
            }
            BusMessage::Nack { step, reason } if step == "Calibrate" => self.calibration_nack(&corr, &rec.sender, reason),
            BusMessage::Ready { node, round } => {
                let state_ok = self.records.get(&corr).is_some_and(|r| r.state == RequestState::Calibrating);
                let Some(a) = self.active.get_mut(&corr) else { return };
                if !state_ok || a.round != round {
                    return;
                }
                a.awaiting_ready.remove(&node);
                if a.awaiting_ready.is_empty() {
                    self.transition(&corr, RequestState::Ready, None);
                    let start = secs_to_ns(self.records[&corr].request.start_time_s).max(self.kernel.now());
                    let delay = start - self.kernel.now();
                    self.kernel.set_timer(delay, SERVER, Timer::Start { request_id: corr, round });
                }
            }
            BusMessage::MeasurementBatch(batch) => {
                let Some(r) = self.records.get_mut(&corr) else { return };
                if r.state != RequestState::Distributing {
                    r.measurements.dropped_batches += 1;
                    return;
                }
                r.measurements.ebits += batch.ebits;
                let low = batch.visibility < self.params.protocol.recal_visibility_threshold;
                r.measurements.batches.push(batch);
                if low {
                    self.start_calibration(&corr, Some("visibility below threshold".into()));
                }
            }
            BusMessage::End { reason, .. } if rec.sender != SERVER => {
                if self.records.get(&corr).is_some_and(|r| r.state == RequestState::Distributing) {
                    self.finish(&corr, reason);
                }
            }
            _ => {}
        }
    }

    fn process_request(&mut self, id: &str) {
        let Some(req) = self.records.get(id).map(|r| r.request.clone()) else { return };
        if let Err(e) = validate_request(&self.base, &req) {
            self.transition(id, RequestState::Rejected(RejectionReason::InvalidRequest(e)), None);
            return;
        }
        let nodes = [&req.node_pair.0, &req.node_pair.1];
        if let Some(n) = nodes.iter().find(|n| self.base.node(n).is_ok_and(|n| !n.supports(req.qubit_type))) {
            let reason = format!("`{n}` needs a qubit-type conversion, which is not supported");
            self.transition(id, RequestState::Rejected(RejectionReason::InvalidRequest(reason)), None);
            return;
        }
        let extra = req.teleportation_bsm.iter();
        if let Some(n) = nodes.into_iter().chain(extra).find(|n| !self.topo.is_schedulable(n)) {
            let n = n.clone();
            self.transition(id, RequestState::Rejected(RejectionReason::NodeUnavailable(n)), None);
            return;
        }
        match select_eps(&req, &self.topo, &self.allocations, &self.quantum_constraints()) {
            Err(reason) => self.transition(id, RequestState::Rejected(reason), None),
            Ok(choice) => {
                *self.allocations.entry(choice.eps.clone()).or_default() += 1;
                if let Some(r) = self.records.get_mut(id) {
                    r.eps_id = Some(choice.eps.clone());
                }
                self.active.insert(id.to_string(), Active { eps: Some(choice.eps.clone()), ..Active::default() });
                self.transition(id, RequestState::EpsSelected, Some(choice.eps));
                self.try_establish(id);
            }
        }
    }

    fn quantum_constraints(&self) -> RwaConstraints {
        RwaConstraints {
            required_band: self.params.protocol.quantum_band,
            k_paths: self.params.protocol.k_paths,
            ..RwaConstraints::default()
        }
    }

    fn try_establish(&mut self, id: &str) {
        let Some(eps) = self.active.get(id).and_then(|a| a.eps.clone()) else { return };
        let req = self.records[id].request.clone();
        let q = self.quantum_constraints();
        let s = sync_constraints(&self.topo.graph, &self.params.protocol.sync_channel, self.params.protocol.k_paths);
        match establish_paths(&mut self.topo.graph, id, &req, &eps, &q, &s) {
            Ok(Ok(paths)) => {
                let lps = paths.all();
                self.active.get_mut(id).expect("active").paths = Some(paths);
                self.publish(&ctl_topic(id), SERVER, id, BusMessage::EstablishPaths { lightpaths: lps });
            }
            Ok(Err(EstablishFailure::Blocked(what))) => self.blocked_attempt(id, format!("no wavelength for {what}")),
            Err(e) => self.fail(id, format!("routing error: {e}")),
        }
    }

    fn blocked_attempt(&mut self, id: &str, reason: String) {
        let p = &self.params.protocol;
        let (max, backoff) = (p.block_retry_attempts, p.block_backoff_s);
        let Some(a) = self.active.get_mut(id) else { return };
        a.blocked_attempts += 1;
        if a.blocked_attempts >= max {
            self.transition(id, RequestState::Blocked, Some(reason));
            self.release(id);
        } else {
            let delay = backoff * libm::pow(2.0, (a.blocked_attempts - 1) as f64);
            self.kernel.set_timer(secs_to_ns(delay), SERVER, Timer::RetryEstablish { request_id: id.to_string() });
        }
    }

    fn paths_acked(&mut self, id: &str) {
        let Some(paths) = self.active.get(id).and_then(|a| a.paths.clone()) else { return };
        let state = self.records[id].state.clone();
        if !matches!(state, RequestState::EpsSelected | RequestState::PathsEstablished) {
            return;
        }
        let eps = self.active[id].eps.clone().unwrap_or_default();
        let lps = paths.all();
        self.records.get_mut(id).expect("record").lightpaths = lps.clone();
        self.transition(id, RequestState::PathsEstablished, None);
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::PathsEstablished { eps, lightpaths: lps });
        self.start_verification(id);
    }

    fn start_verification(&mut self, id: &str) {
        let timeout = secs_to_ns(self.params.protocol.verify_timeout_s);
        let Some(a) = self.active.get_mut(id) else { return };
        let Some(paths) = a.paths.clone() else { return };
        a.verify_attempt += 1;
        a.verify_failures.clear();
        a.pending_verify.clear();
        let attempt = a.verify_attempt;
        let mut checks = Vec::new();
        for lp in &paths.quantum {
            let node = lp.endpoints().1.to_string();
            a.pending_verify.insert(node.clone(), lp.id.clone());
            checks.push((node, lp.id.clone()));
        }
        for (node, lp) in checks {
            self.publish(
                &ctl_topic(id),
                SERVER,
                id,
                BusMessage::VerifyPath { node, lightpath_id: lp, stage: 1, expected_click_rate: None },
            );
        }
        let seq = self.kernel.set_timer(timeout, SERVER, Timer::VerifyTimeout { request_id: id.to_string(), attempt });
        self.active.get_mut(id).expect("active").timeout_seq = Some(seq);
    }

    fn verification_result(
        &mut self,
        id: &str,
        node: String,
        lightpath_id: String,
        stage: u8,
        loss_estimate_db: Option<f64>,
        result: Option<VerificationResult>,
    ) {
        let Some(a) = self.active.get(id) else { return };
        if a.pending_verify.get(&node) != Some(&lightpath_id) {
            return;
        }
        let attempt = a.verify_attempt;
        let eps = a.eps.clone().unwrap_or_default();
        match (stage, loss_estimate_db, result) {
            (1, Some(loss), _) => {
                self.active.get_mut(id).expect("active").loss_estimates.insert(node.clone(), loss);
                let rate = self.params.eps_params(&eps).pair_rate_hz;
                let det = self.params.channel_params(&node).detector_efficiency;
                let expected = rate * db_to_transmittance(loss) * det;
                self.publish(
                    &ctl_topic(id),
                    SERVER,
                    id,
                    BusMessage::VerifyPath { node, lightpath_id, stage: 2, expected_click_rate: Some(expected) },
                );
            }
            (2, _, Some(mut result)) => {
                result.loss_estimate_db = self.active[id].loss_estimates.get(&node).copied().unwrap_or(0.0);
                let r = self.records.get_mut(id).expect("record");
                r.verifications.push(NodeVerification { node: node.clone(), attempt, result });
                let a = self.active.get_mut(id).expect("active");
                a.pending_verify.remove(&node);
                if !result.pass {
                    a.verify_failures.push(format!(
                        "{node}: click rate {:.1} Hz vs expected {:.1} Hz, noise {:.1} Hz",
                        result.click_rate, result.expected_click_rate, result.noise_rate
                    ));
                }
                if a.pending_verify.is_empty() {
                    if let Some(seq) = a.timeout_seq.take() {
                        self.kernel.engine.cancel(seq, "verification complete");
                    }
                    let failures = self.active[id].verify_failures.clone();
                    if failures.is_empty() {
                        self.transition(id, RequestState::PathsVerified, None);
                        self.start_calibration(id, None);
                    } else {
                        self.verification_failed(id, failures.join("; "));
                    }
                }
            }
            _ => self.errors.push(format!("{id}: malformed verification result from {node}")),
        }
    }

    fn verification_failed(&mut self, id: &str, reason: String) {
        let max = self.params.protocol.max_verification_attempts;
        let Some(a) = self.active.get_mut(id) else { return };
        a.pending_verify.clear();
        if let Some(seq) = a.timeout_seq.take() {
            self.kernel.engine.cancel(seq, "verification failed");
        }
        let attempts = a.verify_attempt;
        let paths = a.paths.take();
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::Nack { step: "VerifyPath".into(), reason: reason.clone() });
        if let Some(p) = paths {
            if let Err(e) = release_paths(&mut self.topo.graph, &p) {
                self.errors.push(format!("{id}: release after failed verification: {e}"));
            }
        }
        if attempts >= max {
            self.fail(id, format!("path verification failed {attempts} times: {reason}"));
        } else {
            self.try_establish(id);
        }
    }

    fn start_calibration(&mut self, id: &str, detail: Option<String>) {
        let Some(r) = self.records.get(id) else { return };
        let req = r.request.clone();
        let Some(a) = self.active.get_mut(id) else { return };
        let eps = a.eps.clone().unwrap_or_default();
        if r.state != RequestState::PathsVerified {
            a.round += 1;
        }
        a.calibration_failures = 0;
        let round = a.round;
        let parts = participants(&req, &eps);
        a.awaiting_ready = parts.iter().map(|p| p.0.clone()).collect();
        self.transition(id, RequestState::Calibrating, detail);
        for (node, procedure) in parts {
            self.publish(
                &cal_topic(&node),
                SERVER,
                id,
                BusMessage::Calibrate { node, procedure, basis: req.calibration_basis.clone(), round },
            );
        }
    }

    fn calibration_nack(&mut self, id: &str, node: &str, reason: String) {
        let max = self.params.protocol.max_calibration_attempts;
        if !self.records.get(id).is_some_and(|r| r.state == RequestState::Calibrating) {
            return;
        }
        let req = self.records[id].request.clone();
        let Some(a) = self.active.get_mut(id) else { return };
        a.calibration_failures += 1;
        if a.calibration_failures >= max {
            self.fail(id, format!("calibration failed at {node}: {reason}"));
            return;
        }
        let round = a.round;
        let eps = a.eps.clone().unwrap_or_default();
        if let Some((n, procedure)) = participants(&req, &eps).into_iter().find(|p| p.0 == node) {
            self.publish(
                &cal_topic(&n),
                SERVER,
                id,
                BusMessage::Calibrate { node: n, procedure, basis: req.calibration_basis, round },
            );
        }
    }

    fn server_start(&mut self, id: &str, round: u32) {
        let ok = self.records.get(id).is_some_and(|r| r.state == RequestState::Ready)
            && self.active.get(id).is_some_and(|a| a.round == round);
        if !ok {
            return;
        }
        let a = self.active.get_mut(id).expect("active");
        let first = !a.started_once;
        a.started_once = true;
        let eps = a.eps.clone().unwrap_or_default();
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::Start { eps, round });
        self.transition(id, RequestState::Distributing, None);
        if first && self.duty_cycle_s > 0.0 {
            self.kernel
                .set_timer(secs_to_ns(self.duty_cycle_s), SERVER, Timer::DutyCycle { request_id: id.to_string() });
        }
    }

    fn finish(&mut self, id: &str, reason: String) {
        self.transition(id, RequestState::Ended, Some(reason));
        let ebits = self.records[id].measurements.ebits;
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::End { ebits, reason: "stop source".into() });
        self.release(id);
        let now = self.kernel.now();
        let r = self.records.get_mut(id).expect("record");
        if let Err(e) = r.transition(RequestState::Stored, now) {
            self.errors.push(e);
            return;
        }
        let result = r.to_result();
        self.results.push(result.clone());
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::StoreResults(result));
        self.publish(&ctl_topic(id), SERVER, id, BusMessage::StateChanged { state: RequestState::Stored, detail: None });
    }

    fn fail(&mut self, id: &str, reason: String) {
        self.transition(id, RequestState::Failed(reason), None);
        self.release(id);
    }

    /// Returns the request's channels and EPS pair to the pool.
    fn release(&mut self, id: &str) {
        let Some(a) = self.active.remove(id) else { return };
        if let Some(p) = &a.paths {
            if let Err(e) = release_paths(&mut self.topo.graph, p) {
                self.errors.push(format!("{id}: release: {e}"));
            }
        }
        if let Some(seq) = a.timeout_seq {
            self.kernel.engine.cancel(seq, "request closed");
        }
        if let Some(eps) = &a.eps {
            if let Some(n) = self.allocations.get_mut(eps) {
                *n = n.saturating_sub(1);
            }
        }
    }

    fn resource_departed(&mut self, node: &str) {
        self.topo.depart(node);
        let affected: Vec<String> = self
            .active
            .iter()
            .filter(|(id, a)| {
                let req = &self.records[*id].request;
                req.node_pair.0 == node
                    || req.node_pair.1 == node
                    || req.teleportation_bsm.as_deref() == Some(node)
                    || a.eps.as_deref() == Some(node)
                    || a.paths.as_ref().is_some_and(|p| p.all().iter().any(|lp| lp.nodes.iter().any(|n| n == node)))
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in affected {
            self.fail(&id, format!("resource `{node}` departed"));
        }
    }

    // ---- SDN agent ------------------------------------------------------

    fn agent_on(&mut self, rec: SimTrace) {
        let corr = rec.correlation_id.clone();
        match rec.payload {
            BusMessage::TopologyQuery { resource_id, claims } => {
                let reg = ResourceRegistration {
                    resource_id: resource_id.clone(),
                    kind: self.base.node(&resource_id).map(|n| n.kind).unwrap_or(NodeKind::QNode),
                    features: Features { qubit_types: Vec::new(), wavelength_outputs: None, detector_efficiency: None },
                    connectivity_claims: claims,
                };
                let change = check_registration(&self.agent, &self.base, &reg);
                self.publish(TOPIC_TOPOLOGY, AGENT, DISCOVERY, BusMessage::TopologyUpdate { resource_id, change });
            }
            BusMessage::EstablishPaths { lightpaths } => {
                let mut installed = Vec::new();
                let mut failure = None;
                for lp in &lightpaths {
                    match self.agent.install(&self.base, lp) {
                        Ok(()) => installed.push(lp.clone()),
                        Err(e) => {
                            failure = Some(format!("{e}"));
                            break;
                        }
                    }
                }
                if let Some(reason) = failure {
                    for lp in &installed {
                        self.agent.remove(lp);
                    }
                    self.publish(&rec.topic, AGENT, &corr, BusMessage::Nack { step: "EstablishPaths".into(), reason });
                } else {
                    self.agent_paths.insert(corr.clone(), lightpaths);
                    self.publish(&rec.topic, AGENT, &corr, BusMessage::Ack { step: "EstablishPaths".into() });
                }
            }
            BusMessage::Nack { step, .. } if step == "VerifyPath" && rec.sender == SERVER => self.agent_clear(&corr),
            BusMessage::StateChanged { state, .. } if state.is_terminal() => self.agent_clear(&corr),
            _ => {}
        }
    }

    fn agent_clear(&mut self, id: &str) {
        if let Some(lps) = self.agent_paths.remove(id) {
            for lp in &lps {
                self.agent.remove(lp);
            }
        }
    }

    // ---- network resources ----------------------------------------------

    fn advance_drift(&mut self, node: &str) {
        let now = self.kernel.now();
        let Some(n) = self.nodes.get(node) else { return };
        let dt = ns_to_secs(now.saturating_sub(n.last_drift_ns));
        let key = format!("drift/{node}/{}", n.drift_updates);
        let mut rng = self.rng(&key);
        let n = self.nodes.get_mut(node).expect("node");
        n.polarization.drift(dt, &mut rng);
        n.last_drift_ns = now;
        n.drift_updates += 1;
    }

    /// `2F - 1` of the node's current analyzer alignment.
    fn alignment_factor(&mut self, node: &str, qubit: QubitType) -> f64 {
        match qubit {
            QubitType::Polarization => {
                self.advance_drift(node);
                let (rv, rd) = self.nodes[node].polarization.residuals(0.0);
                1.0 - (rv + rd)
            }
            QubitType::TimeBin => libm::cos(self.nodes[node].phase_error_rad),
        }
    }

    fn node_on(&mut self, node: &str, rec: SimTrace) {
        if self.nodes.get(node).is_none_or(|n| n.departed) {
            return;
        }
        let corr = rec.correlation_id.clone();
        match rec.payload {
            BusMessage::PathsEstablished { lightpaths, .. } => {
                self.nodes.get_mut(node).expect("node").lightpaths.insert(corr, lightpaths);
            }
            BusMessage::VerifyPath { node: target, lightpath_id, stage, expected_click_rate } if target == node => {
                self.node_verify(node, &corr, lightpath_id, stage, expected_click_rate)
            }
            BusMessage::Calibrate { node: target, procedure, round, .. } if target == node => {
                if let Some(d) = self.nodes.get_mut(node).expect("node").dist.get_mut(&corr) {
                    d.active = false;
                }
                self.node_calibrate(node, &corr, procedure, round);
            }
            BusMessage::Start { round, .. } => {
                let is_a = self.records.get(&corr).is_some_and(|r| r.request.node_pair.0 == node);
                if !is_a {
                    return;
                }
                let now = self.kernel.now();
                let d = self.nodes.get_mut(node).expect("node").dist.entry(corr.clone()).or_default();
                d.round = round;
                d.active = true;
                d.last_ns = now;
                self.schedule_batch(node, &corr, round);
            }
            BusMessage::StateChanged { state, .. } if state.is_terminal() => {
                let n = self.nodes.get_mut(node).expect("node");
                n.dist.remove(&corr);
                n.lightpaths.remove(&corr);
            }
            _ => {}
        }
    }

    fn find_lightpath(&self, node: &str, request: &str, lp_id: &str) -> Option<Lightpath> {
        self.nodes.get(node)?.lightpaths.get(request)?.iter().find(|l| l.id == lp_id).cloned()
    }

    fn node_verify(&mut self, node: &str, id: &str, lp_id: String, stage: u8, expected: Option<f64>) {
        let Some(lp) = self.find_lightpath(node, id, &lp_id) else {
            let reason = format!("{node} does not know lightpath `{lp_id}`");
            self.publish(&ctl_topic(id), node, id, BusMessage::Nack { step: "VerifyPath".into(), reason });
            return;
        };
        let p = self.params.protocol.clone();
        let probes = self.nodes[node].probes;
        self.nodes.get_mut(node).expect("node").probes += 1;
        let mut rng = self.rng(&format!("verify/{id}/{node}/{probes}"));
        let (msg, delay) = match stage {
            1 => {
                let loss = probe_loss(lp.total_loss_db, p.probe_noise_db, &mut rng);
                (
                    BusMessage::VerificationResult {
                        node: node.into(),
                        lightpath_id: lp_id,
                        stage: 1,
                        loss_estimate_db: Some(loss),
                        result: None,
                    },
                    0,
                )
            }
            _ => {
                let ch = self.params.channel_params(node);
                let mut arm = arm_model(&self.base, &lp, &ch);
                let n = self.nodes.get_mut(node).expect("node");
                if n.hidden_loss.0 > 0 {
                    n.hidden_loss.0 -= 1;
                    arm.transmittance *= db_to_transmittance(n.hidden_loss.1);
                }
                let eps = self.active.get(id).and_then(|a| a.eps.clone()).unwrap_or_default();
                let rate = self.params.eps_params(&eps).pair_rate_hz;
                let (on, off) = measure_clicks(rate, &arm, p.verify_integration_s, &mut rng);
                let m = PathMeasurement {
                    loss_estimate_db: 0.0,
                    on_counts: on,
                    off_counts: off,
                    integration_s: p.verify_integration_s,
                };
                let result = evaluate_verification(expected.unwrap_or(0.0), &m, p.verify_threshold);
                (
                    BusMessage::VerificationResult {
                        node: node.into(),
                        lightpath_id: lp_id,
                        stage: 2,
                        loss_estimate_db: None,
                        result: Some(result),
                    },
                    secs_to_ns(p.verify_integration_s),
                )
            }
        };
        self.kernel.set_timer(
            delay,
            node,
            Timer::Reply { topic: ctl_topic(id), correlation_id: id.into(), message: Box::new(msg) },
        );
    }

    fn node_calibrate(&mut self, node: &str, id: &str, procedure: Procedure, round: u32) {
        let attempt = self.active.get(id).map_or(0, |a| a.calibration_failures);
        let key = format!("cal/{id}/{node}/{round}/{attempt}");
        let outcome = match procedure {
            Procedure::AlignmentLight => Ok((Vec::new(), 0.0)),
            Procedure::Polarization => self.calibrate_polarization(node, &key),
            Procedure::TimeBin => self.calibrate_timebin(node, &key),
            Procedure::Hom => self.calibrate_hom(node, &key),
        };
        let outcome = outcome.and_then(|(mut reports, mut duration)| {
            let second = self.records.get(id).is_some_and(|r| r.request.node_pair.1 == node);
            if second && procedure != Procedure::AlignmentLight {
                let (more, d) = self.calibrate_sync(node, id, &key)?;
                reports.extend(more);
                duration += d;
            }
            Ok((reports, duration))
        });
        let topic = ctl_topic(id);
        match outcome {
            Ok((mut reports, duration)) => {
                for r in &mut reports {
                    r.parameters.insert("round".into(), round as f64);
                }
                if !reports.is_empty() {
                    self.publish(&cal_topic(node), node, id, BusMessage::CalibrationDone { node: node.into(), round, reports });
                }
                self.kernel.set_timer(
                    secs_to_ns(duration),
                    node,
                    Timer::Reply {
                        topic,
                        correlation_id: id.into(),
                        message: Box::new(BusMessage::Ready { node: node.into(), round }),
                    },
                );
            }
            Err(e) => {
                let reason = format!("{e}");
                self.publish(&cal_topic(node), node, id, BusMessage::Nack { step: "Calibrate".into(), reason });
            }
        }
    }

    fn calibrate_polarization(&mut self, node: &str, _key: &str) -> Result<(Vec<CalibrationReport>, f64), CalibrationError> {
        self.advance_drift(node);
        let cfg = self.params.calibration.alignment;
        let n = self.nodes.get_mut(node).expect("node");
        let rep = align_polarization(&n.polarization, 0.0, &cfg)?;
        n.polarization.compensator = rep.final_compensator;
        let duration = rep.duration_s(&cfg);
        let params = BTreeMap::from([
            ("residual_v".to_string(), rep.residual_v),
            ("residual_diag".to_string(), rep.residual_diag),
            ("qwp_deg".to_string(), rep.final_compensator.qwp_deg),
            ("hwp_deg".to_string(), rep.final_compensator.hwp_deg),
            ("lcr_phase_rad".to_string(), rep.final_compensator.lcr_phase_rad),
        ]);
        let report = CalibrationReport {
            procedure: "polarization".into(),
            node: node.into(),
            iterations: rep.iterations,
            residual: rep.residual_infidelity,
            duration_virtual_s: duration,
            parameters: params,
        };
        Ok((vec![report], duration))
    }

    fn calibrate_timebin(&mut self, node: &str, key: &str) -> Result<(Vec<CalibrationReport>, f64), CalibrationError> {
        let cfg = self.params.calibration.timebin;
        let mut rng = self.rng(key);
        let early = rng.random_range(200.0..600.0);
        let late = early + 4.0 * cfg.bin_width_ps;
        let hist = synthetic_timebin_histogram(2000, &[early, late], 20.0, 5000.0, 2.0, &mut rng);
        let frame = align_timebin(&hist, &cfg)?;
        let offset = rng.random_range(0.0..core::f64::consts::TAU);
        let v = self.params.eps_params("default").intrinsic_visibility.max(1e-3);
        let phase = align_interferometer_phase(offset, v, self.params.calibration.alignment.tolerance_rad)?;
        let err = libm::remainder(phase.phase_rad - offset, core::f64::consts::TAU);
        self.nodes.get_mut(node).expect("node").phase_error_rad = err;
        let dwell = self.params.calibration.alignment.dwell_s;
        let phase_duration = phase.evaluations as f64 * dwell;
        let reports = vec![
            CalibrationReport {
                procedure: "timebin_frame".into(),
                node: node.into(),
                iterations: 1,
                residual: libm::fabs(frame.early_offset_ps - (cfg.origin_ps + early)),
                duration_virtual_s: 1.0,
                parameters: BTreeMap::from([
                    ("early_offset_ps".to_string(), frame.early_offset_ps),
                    ("late_offset_ps".to_string(), frame.late_offset_ps),
                ]),
            },
            CalibrationReport {
                procedure: "interferometer_phase".into(),
                node: node.into(),
                iterations: phase.evaluations as u32,
                residual: 1.0 - libm::cos(err),
                duration_virtual_s: phase_duration,
                parameters: BTreeMap::from([
                    ("phase_rad".to_string(), phase.phase_rad),
                    ("output_fraction".to_string(), phase.output_fraction),
                ]),
            },
        ];
        Ok((reports, 1.0 + phase_duration))
    }

    fn calibrate_hom(&mut self, node: &str, key: &str) -> Result<(Vec<CalibrationReport>, f64), CalibrationError> {
        let h = self.params.calibration.hom;
        let dip = HomDipModel {
            baseline_rate_hz: h.baseline_rate_hz,
            hom_visibility: h.hom_visibility,
            coherence_time_ps: h.coherence_time_ps,
        };
        let n = h.grid_points.max(2);
        let grid: Vec<f64> =
            (0..n).map(|i| -h.grid_half_span_ps + 2.0 * h.grid_half_span_ps * i as f64 / (n - 1) as f64).collect();
        let mut rng = self.rng(key);
        let scan = scan_hom(&dip, &grid, h.counts_per_point, &mut rng)?;
        let fidelity = HomFidelityEstimate.estimate(&QualityInputs {
            hom_visibility: scan.fitted_visibility,
            ..QualityInputs::default()
        });
        let duration = if h.baseline_rate_hz > 0.0 { n as f64 * h.counts_per_point as f64 / h.baseline_rate_hz } else { 0.0 };
        let report = CalibrationReport {
            procedure: "hom".into(),
            node: node.into(),
            iterations: n as u32,
            residual: libm::fabs(scan.best_delay_ps),
            duration_virtual_s: duration,
            parameters: BTreeMap::from([
                ("best_delay_ps".to_string(), scan.best_delay_ps),
                ("fitted_visibility".to_string(), scan.fitted_visibility),
                ("fidelity_estimate".to_string(), fidelity),
            ]),
        };
        Ok((vec![report], duration))
    }

    /// Bit-level sync over the sync channel, run by the second node: the
    /// correlation-delay search and the clock jitter check.
    fn calibrate_sync(&mut self, node: &str, id: &str, key: &str) -> Result<(Vec<CalibrationReport>, f64), CalibrationError> {
        let (eps, a1, a2) = self.pair_models(id).ok_or_else(|| CalibrationError::InvalidInput("paths unknown".into()))?;
        let stats = singles_and_coincidences(&eps, &a1, &a2);
        let c = &self.params.calibration;
        let mut rng = self.rng(&format!("{key}/delay"));
        let range = c.delay_range.max(1);
        let true_delay = rng.random_range(0..range);
        let mut oracle = PeakedCoincidences {
            true_delay,
            signal_hz: stats.coincidences_hz,
            accidental_hz: stats.accidentals_hz,
            rng,
        };
        let found = find_correlation_delay(&mut oracle, 0..=range - 1, &c.delay)?;
        if found.delay != true_delay {
            return Err(CalibrationError::InvalidInput(format!("delay search locked onto {} (false peak)", found.delay)));
        }
        let jitter = clock_jitter_budget(&c.clock, &[]);
        let check = JitterCheck::new(jitter, c.jitter_budget_ps);
        let reports = vec![
            CalibrationReport {
                procedure: "correlation_delay".into(),
                node: node.into(),
                iterations: found.delays_scanned,
                residual: 0.0,
                duration_virtual_s: found.elapsed_s,
                parameters: BTreeMap::from([
                    ("delay".to_string(), found.delay as f64),
                    ("counts_at_delay".to_string(), found.counts_at_delay as f64),
                    ("verified_sigma".to_string(), found.verified_sigma.min(1e9)),
                ]),
            },
            CalibrationReport {
                procedure: "clock_jitter".into(),
                node: node.into(),
                iterations: 1,
                residual: jitter,
                duration_virtual_s: 0.0,
                parameters: BTreeMap::from([
                    ("budget_ps".to_string(), check.budget_ps),
                    ("within_budget".to_string(), if check.within_budget { 1.0 } else { 0.0 }),
                ]),
            },
        ];
        Ok((reports, found.elapsed_s))
    }

    /// Source model and both receiving arms of a request, from the server's
    /// current path assignment.
    fn pair_models(&self, id: &str) -> Option<(EpsModel, ChannelModel, ChannelModel)> {
        let a = self.active.get(id)?;
        let paths = a.paths.as_ref()?;
        let eps_id = a.eps.as_deref()?;
        let outputs = self.base.node(eps_id).ok()?.wavelength_outputs.unwrap_or(2);
        let eps = self.params.eps_params(eps_id).model(outputs);
        let arm = |lp: &Lightpath| arm_model(&self.base, lp, &self.params.channel_params(lp.endpoints().1));
        Some((eps, arm(&paths.quantum[0]), arm(&paths.quantum[1])))
    }

    fn schedule_batch(&mut self, node: &str, id: &str, round: u32) {
        let end = self.records.get(id).map_or(0, |r| secs_to_ns(r.request.end_time_s));
        let now = self.kernel.now();
        let next = (now + secs_to_ns(self.params.protocol.batch_interval_s)).min(end.max(now));
        self.kernel.set_timer(next - now, node, Timer::Batch { request_id: id.into(), round });
    }

    fn node_batch(&mut self, node: &str, id: &str, round: u32) {
        if self.nodes.get(node).is_none_or(|n| n.departed) {
            return;
        }
        let live = self.nodes[node].dist.get(id).is_some_and(|d| d.active && d.round == round);
        if !live {
            return;
        }
        let Some(req) = self.records.get(id).map(|r| r.request.clone()) else { return };
        let Some((eps, a1, a2)) = self.pair_models(id) else { return };
        let now = self.kernel.now();
        let d = &self.nodes[node].dist[id];
        let (index, last) = (d.index, d.last_ns);
        let dt = ns_to_secs(now - last);
        let factor = self.alignment_factor(&req.node_pair.0, req.qubit_type)
            * self.alignment_factor(&req.node_pair.1, req.qubit_type);
        let mut rng = self.rng(&format!("batch/{id}/{index}"));
        let (true_c, acc, v) = sample_batch(&eps, &a1, &a2, factor, dt, &mut rng);
        let nonclassical = classify_nonclassical(v.clamp(0.0, 1.0)).unwrap_or(Nonclassicality::Classical);
        let batch = BatchStatistics {
            index,
            round,
            t_s: ns_to_secs(now),
            duration_s: dt,
            coincidences: true_c,
            accidentals: acc,
            ebits: true_c,
            car: car(true_c as f64, acc as f64),
            visibility: v,
            nonclassical,
            basis: req.calibration_basis.clone(),
        };
        let d = self.nodes.get_mut(node).expect("node").dist.get_mut(id).expect("dist");
        d.index += 1;
        d.ebits += true_c;
        d.last_ns = now;
        let total = d.ebits;
        self.publish(&meas_topic(id), node, id, BusMessage::MeasurementBatch(batch));
        let end = secs_to_ns(req.end_time_s);
        let reason = if total >= req.target_ebits {
            Some("target reached")
        } else if now >= end {
            Some("end time reached")
        } else {
            None
        };
        match reason {
            Some(reason) => {
                self.nodes.get_mut(node).expect("node").dist.get_mut(id).expect("dist").active = false;
                self.publish(&ctl_topic(id), node, id, BusMessage::End { ebits: total, reason: reason.into() });
            }
            None => self.schedule_batch(node, id, round),
        }
    }
}
