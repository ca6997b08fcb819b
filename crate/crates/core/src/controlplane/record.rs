use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::messages::{EntanglementRequest, VerificationResult};
use crate::calibration::CalibrationReport;
use crate::photonics::Nonclassicality;
use crate::rwa::Lightpath;
use crate::simkernel::VirtualTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionReason {
    NoCapableEps,
    NoCapacity,
    NoFeasiblePaths,
    InvalidRequest(String),
    NodeUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestState {
    Received,
    EpsSelected,
    PathsEstablished,
    PathsVerified,
    Calibrating,
    Ready,
    Distributing,
    Ended,
    Stored,
    Rejected(RejectionReason),
    Blocked,
    Failed(String),
}

impl RequestState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, RequestState::Stored | RequestState::Rejected(_) | RequestState::Blocked | RequestState::Failed(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            RequestState::Received => "Received",
            RequestState::EpsSelected => "EpsSelected",
            RequestState::PathsEstablished => "PathsEstablished",
            RequestState::PathsVerified => "PathsVerified",
            RequestState::Calibrating => "Calibrating",
            RequestState::Ready => "Ready",
            RequestState::Distributing => "Distributing",
            RequestState::Ended => "Ended",
            RequestState::Stored => "Stored",
            RequestState::Rejected(_) => "Rejected",
            RequestState::Blocked => "Blocked",
            RequestState::Failed(_) => "Failed",
        }
    }
}

/// Whether `to` may follow `from` in a request's lifecycle. Re-entering
/// `PathsEstablished` is the NACK path after a failed verification;
/// `Distributing -> Calibrating` is a mid-run re-calibration.
pub fn transition_allowed(from: &RequestState, to: &RequestState) -> bool {
    use RequestState::*;
    if from.is_terminal() {
        return false;
    }
    if matches!(to, Failed(_)) {
        return true;
    }
    matches!(
        (from, to),
        (Received, EpsSelected)
            | (Received, Rejected(_))
            | (EpsSelected, PathsEstablished)
            | (EpsSelected, Blocked)
            | (PathsEstablished, PathsVerified)
            | (PathsEstablished, PathsEstablished)
            | (PathsEstablished, Blocked)
            | (PathsVerified, Calibrating)
            | (Calibrating, Ready)
            | (Ready, Distributing)
            | (Distributing, Calibrating)
            | (Distributing, Ended)
            | (Ended, Stored)
    )
}

/// Checks a full state sequence, which must start at `Received`.
pub fn check_protocol_order(states: &[RequestState]) -> Result<(), String> {
    match states.first() {
        Some(RequestState::Received) => {}
        other => return Err(format!("sequence starts with {other:?}")),
    }
    for w in states.windows(2) {
        if !transition_allowed(&w[0], &w[1]) {
            return Err(format!("illegal transition {:?} -> {:?}", w[0], w[1]));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub t_ns: VirtualTime,
    pub state: RequestState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStatistics {
    pub index: u32,
    pub round: u32,
    pub t_s: f64,
    pub duration_s: f64,
    pub coincidences: u64,
    pub accidentals: u64,
    pub ebits: u64,
    pub car: f64,
    pub visibility: f64,
    pub nonclassical: Nonclassicality,
    pub basis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVerification {
    pub node: String,
    pub attempt: u32,
    pub result: VerificationResult,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub ebits: u64,
    pub batches: Vec<BatchStatistics>,
    /// Batches that arrived while the record was not distributing.
    pub dropped_batches: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: String,
    pub request: EntanglementRequest,
    pub state: RequestState,
    pub history: Vec<StateEntry>,
    pub eps_id: Option<String>,
    pub lightpaths: Vec<Lightpath>,
    pub measurements: Measurements,
    pub calibration_reports: Vec<CalibrationReport>,
    pub verifications: Vec<NodeVerification>,
    pub fidelity_estimate: Option<f64>,
    /// Trace sequence numbers of every message correlated with this record.
    pub trace: Vec<u64>,
    pub submitted_ns: VirtualTime,
}

impl RequestRecord {
    pub fn new(id: String, request: EntanglementRequest, t_ns: VirtualTime) -> Self {
        RequestRecord {
            id,
            request,
            state: RequestState::Received,
            history: alloc::vec![StateEntry { t_ns, state: RequestState::Received }],
            eps_id: None,
            lightpaths: Vec::new(),
            measurements: Measurements::default(),
            calibration_reports: Vec::new(),
            verifications: Vec::new(),
            fidelity_estimate: None,
            trace: Vec::new(),
            submitted_ns: t_ns,
        }
    }

    /// Moves to `to`, refusing transitions outside the protocol order.
    pub fn transition(&mut self, to: RequestState, t_ns: VirtualTime) -> Result<(), String> {
        if !transition_allowed(&self.state, &to) {
            return Err(format!("{}: illegal transition {:?} -> {:?}", self.id, self.state, to));
        }
        self.state = to.clone();
        self.history.push(StateEntry { t_ns, state: to });
        Ok(())
    }

    pub fn states(&self) -> Vec<RequestState> {
        self.history.iter().map(|h| h.state.clone()).collect()
    }

    pub fn to_result(&self) -> ResultRecord {
        let finished = self.history.last().map_or(self.submitted_ns, |h| h.t_ns);
        ResultRecord {
            request_id: self.id.clone(),
            requester: self.request.requester.clone(),
            final_state: self.state.clone(),
            ebits_delivered: self.measurements.ebits,
            statistics: self.measurements.batches.clone(),
            calibration_reports: self.calibration_reports.clone(),
            verifications: self.verifications.clone(),
            fidelity_estimate: self.fidelity_estimate,
            eps_id: self.eps_id.clone(),
            lightpaths: self.lightpaths.clone(),
            state_history: self.history.clone(),
            submitted_at_s: crate::simkernel::ns_to_secs(self.submitted_ns),
            virtual_duration_s: crate::simkernel::ns_to_secs(finished - self.submitted_ns),
        }
    }
}

/// Persisted outcome of one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub request_id: String,
    pub requester: String,
    pub final_state: RequestState,
    pub ebits_delivered: u64,
    pub statistics: Vec<BatchStatistics>,
    pub calibration_reports: Vec<CalibrationReport>,
    pub verifications: Vec<NodeVerification>,
    pub fidelity_estimate: Option<f64>,
    pub eps_id: Option<String>,
    pub lightpaths: Vec<Lightpath>,
    pub state_history: Vec<StateEntry>,
    pub submitted_at_s: f64,
    pub virtual_duration_s: f64,
}
