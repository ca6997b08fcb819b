use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::record::{BatchStatistics, RequestState, ResultRecord};
use crate::calibration::CalibrationReport;
use crate::rwa::Lightpath;
use crate::topology::{NodeKind, QubitType};

/// Version of the message payload schema written to traces.
pub const PAYLOAD_SCHEMA_VERSION: u32 = 1;

pub const SERVER: &str = "qnet-server";
pub const AGENT: &str = "sdn-agent";
pub const PORTAL: &str = "portal";
pub const DISCOVERY: &str = "discovery";

pub const TOPIC_REGISTER: &str = "qnet/register";
pub const TOPIC_TOPOLOGY: &str = "qnet/topology";

pub fn ctl_topic(request_id: &str) -> String {
    format!("qnet/request/{request_id}/ctl")
}

pub fn meas_topic(request_id: &str) -> String {
    format!("qnet/request/{request_id}/meas")
}

pub fn cal_topic(node: &str) -> String {
    format!("qnet/cal/{node}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityClaim {
    pub local_port: u32,
    pub remote_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub qubit_types: Vec<QubitType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_outputs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRegistration {
    pub resource_id: String,
    pub kind: NodeKind,
    pub features: Features,
    pub connectivity_claims: Vec<ConnectivityClaim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TopologyChange {
    Verified,
    Mismatch { detail: String },
    ResourceAdded,
    ResourceRemoved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementRequest {
    pub requester: String,
    pub qubit_type: QubitType,
    pub node_pair: (String, String),
    pub start_time_s: f64,
    pub end_time_s: f64,
    pub calibration_basis: String,
    pub target_ebits: u64,
    /// Teleportation variant: route both nodes to this BSM as well.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teleportation_bsm: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Polarization,
    TimeBin,
    AlignmentLight,
    Hom,
}

/// Outcome of the two-stage path check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub loss_estimate_db: f64,
    pub click_rate: f64,
    pub noise_rate: f64,
    pub expected_click_rate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum BusMessage {
    Register(ResourceRegistration),
    TopologyQuery {
        resource_id: String,
        claims: Vec<ConnectivityClaim>,
    },
    TopologyUpdate {
        resource_id: String,
        change: TopologyChange,
    },
    SubmitRequest {
        request_id: String,
        request: EntanglementRequest,
    },
    StateChanged {
        state: RequestState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    EstablishPaths {
        lightpaths: Vec<Lightpath>,
    },
    PathsEstablished {
        eps: String,
        lightpaths: Vec<Lightpath>,
    },
    VerifyPath {
        node: String,
        lightpath_id: String,
        stage: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_click_rate: Option<f64>,
    },
    VerificationResult {
        node: String,
        lightpath_id: String,
        stage: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        loss_estimate_db: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<VerificationResult>,
    },
    Calibrate {
        node: String,
        procedure: Procedure,
        basis: String,
        round: u32,
    },
    CalibrationDone {
        node: String,
        round: u32,
        reports: Vec<CalibrationReport>,
    },
    Ready {
        node: String,
        round: u32,
    },
    Start {
        eps: String,
        round: u32,
    },
    MeasurementBatch(BatchStatistics),
    End {
        ebits: u64,
        reason: String,
    },
    StoreResults(ResultRecord),
    Nack {
        step: String,
        reason: String,
    },
    Ack {
        step: String,
    },
}

impl BusMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            BusMessage::Register(_) => "Register",
            BusMessage::TopologyQuery { .. } => "TopologyQuery",
            BusMessage::TopologyUpdate { .. } => "TopologyUpdate",
            BusMessage::SubmitRequest { .. } => "SubmitRequest",
            BusMessage::StateChanged { .. } => "StateChanged",
            BusMessage::EstablishPaths { .. } => "EstablishPaths",
            BusMessage::PathsEstablished { .. } => "PathsEstablished",
            BusMessage::VerifyPath { .. } => "VerifyPath",
            BusMessage::VerificationResult { .. } => "VerificationResult",
            BusMessage::Calibrate { .. } => "Calibrate",
            BusMessage::CalibrationDone { .. } => "CalibrationDone",
            BusMessage::Ready { .. } => "Ready",
            BusMessage::Start { .. } => "Start",
            BusMessage::MeasurementBatch(_) => "MeasurementBatch",
            BusMessage::End { .. } => "End",
            BusMessage::StoreResults(_) => "StoreResults",
            BusMessage::Nack { .. } => "Nack",
            BusMessage::Ack { .. } => "Ack",
        }
    }
}
