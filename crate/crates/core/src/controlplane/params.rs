//! Scenario and model-parameter documents.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::coexistence::{CarStudyParams, CoexistenceParams};

use super::messages::EntanglementRequest;
use crate::calibration::{AlignmentConfig, ClockModel, DelaySearchConfig, TimeBinConfig, DEFAULT_JITTER_BUDGET_PS};
use crate::photonics::EpsModel;
use crate::topology::Band;

/// Source parameters; the output count comes from the topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsParams {
    pub pair_rate_hz: f64,
    pub intrinsic_visibility: f64,
    pub rep_rate_hz: f64,
    pub pulse_width_ps: f64,
}

impl Default for EpsParams {
    fn default() -> Self {
        EpsParams { pair_rate_hz: 1e6, intrinsic_visibility: 0.9, rep_rate_hz: 417e6, pulse_width_ps: 80.0 }
    }
}

impl EpsParams {
    pub fn model(&self, n_wavelength_outputs: u32) -> EpsModel {
        EpsModel {
            pair_rate_hz: self.pair_rate_hz,
            intrinsic_visibility: self.intrinsic_visibility,
            n_wavelength_outputs,
            rep_rate_hz: self.rep_rate_hz,
            pulse_width_ps: self.pulse_width_ps,
        }
    }
}

/// Receiver-arm parameters for one channel (keyed by receiving node id).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub filter_bw_ghz: f64,
    pub coincidence_window_s: f64,
    pub raman_coeff: f64,
    pub classical_power_mw: f64,
    /// Polarization drift of the fiber to this node, rad/s.
    pub drift_rate_rad_per_s: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            detector_efficiency: 0.3,
            dark_rate_hz: 100.0,
            filter_bw_ghz: 100.0,
            coincidence_window_s: 0.5e-9,
            raman_coeff: 0.0,
            classical_power_mw: 0.0,
            drift_rate_rad_per_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomParams {
    pub hom_visibility: f64,
    pub coherence_time_ps: f64,
    pub baseline_rate_hz: f64,
    pub grid_points: usize,
    pub grid_half_span_ps: f64,
    pub counts_per_point: u64,
}

impl Default for HomParams {
    fn default() -> Self {
        HomParams {
            hom_visibility: 0.9,
            coherence_time_ps: 10.0,
            baseline_rate_hz: 1000.0,
            grid_points: 21,
            grid_half_span_ps: 40.0,
            counts_per_point: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationParams {
    pub alignment: AlignmentConfig,
    pub timebin: TimeBinConfig,
    pub delay: DelaySearchConfig,
    /// Delays scanned are `0..delay_range`, in clock units.
    pub delay_range: i64,
    pub hom: HomParams,
    pub clock: ClockModel,
    pub jitter_budget_ps: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            alignment: AlignmentConfig::default(),
            timebin: TimeBinConfig::default(),
            delay: DelaySearchConfig::default(),
            delay_range: 64,
            hom: HomParams::default(),
            clock: ClockModel::default(),
            jitter_budget_ps: DEFAULT_JITTER_BUDGET_PS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub message_latency_ns: u64,
    pub k_paths: usize,
    /// Quantum-channel band; `None` accepts any band.
    pub quantum_band: Option<Band>,
    pub sync_channel: String,
    pub verify_threshold: f64,
    pub verify_integration_s: f64,
    pub verify_timeout_s: f64,
    pub probe_noise_db: f64,
    pub max_verification_attempts: u32,
    pub block_retry_attempts: u32,
    pub block_backoff_s: f64,
    pub max_calibration_attempts: u32,
    pub batch_interval_s: f64,
    pub recal_visibility_threshold: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            message_latency_ns: 100_000,
            k_paths: 4,
            quantum_band: None,
            sync_channel: "C32".into(),
            verify_threshold: 1.0 / 6.0,
            verify_integration_s: 1.0,
            verify_timeout_s: 10.0,
            probe_noise_db: 0.02,
            max_verification_attempts: 3,
            block_retry_attempts: 3,
            block_backoff_s: 1.0,
            max_calibration_attempts: 3,
            batch_interval_s: 1.0,
            recal_visibility_threshold: core::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

/// Model-parameter document. `eps` and `channels` are keyed by node id
/// with `"default"` as the fallback entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub eps: BTreeMap<String, EpsParams>,
    pub channels: BTreeMap<String, ChannelParams>,
    pub calibration: CalibrationParams,
    pub protocol: ProtocolParams,
    pub coexistence: CoexistenceParams,
    pub car_study: CarStudyParams,
}

impl ModelParams {
    pub fn eps_params(&self, id: &str) -> EpsParams {
        self.eps.get(id).or_else(|| self.eps.get("default")).copied().unwrap_or_default()
    }

    pub fn channel_params(&self, node: &str) -> ChannelParams {
        self.channels.get(node).or_else(|| self.channels.get("default")).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRequest {
    pub submit_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(flatten)]
    pub request: EntanglementRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// The next `count` path verifications at `node` see a fiber with
    /// `extra_loss_db` more loss than configured.
    VerificationFailure { node: String, count: u32, extra_loss_db: f64 },
    /// Rotates the fiber to `node` by `angle_rad` at `at_s`.
    DriftBurst { at_s: f64, node: String, angle_rad: f64 },
    /// The resource disappears at `at_s`.
    ResourceDeparture { at_s: f64, node: String },
    /// The switch refuses rule updates during `[from_s, until_s)`.
    SwitchUnavailable { switch: String, from_s: f64, until_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateRegistration {
    pub node: String,
    pub at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceSweepCfg {
    pub powers_dbm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarSweepCfg {
    pub powers_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology_ref: String,
    pub model_params_ref: String,
    #[serde(default)]
    pub requests: Vec<ScriptedRequest>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub late_registrations: Vec<LateRegistration>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duty_cycle")]
    pub duty_cycle_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coexistence_sweep: Option<CoexistenceSweepCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car_sweep: Option<CarSweepCfg>,
    /// Stop the run at this virtual time even if work remains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
}

fn default_duty_cycle() -> f64 {
    60.0
}

impl Scenario {
    /// Requests must be listed in submission order.
    pub fn validate(&self) -> Result<(), String> {
        if self.requests.windows(2).any(|w| w[1].submit_time_s < w[0].submit_time_s) {
            return Err("requests are not sorted by submit_time_s".into());
        }
        if !(self.duty_cycle_s >= 0.0) {
            return Err("duty_cycle_s must be >= 0".into());
        }
        Ok(())
    }
}
