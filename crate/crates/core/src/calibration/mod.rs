//! Simulated calibration procedures run by the receiving nodes.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod clock;
mod delay;
mod hom;
mod polarization;
mod timebin;

pub use clock::{clock_jitter_budget, ClockModel, JitterCheck, DEFAULT_JITTER_BUDGET_PS};
pub use delay::{
    find_correlation_delay, CoincidenceOracle, DelaySearchConfig, DelaySearchReport, Integration, PeakedCoincidences,
};
pub use hom::{fit_hom_dip, scan_hom, scan_hom_expected, HomScan};
pub use polarization::{
    align_polarization, align_polarization_single_stage, singles_rate_for_projection, AlignmentConfig,
    AlignmentKind, AlignmentReport, AlignmentSignal, Compensator, PbsPort, PolarizationChannelState, Projection,
};
pub use timebin::{
    align_interferometer_phase, align_timebin, synthetic_timebin_histogram, PhaseAlignment, TimeBinConfig,
    TimeBinFrame,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("alignment did not converge: residual {residual:e} after {iterations} iterations")]
    ConvergenceFailure { residual: f64, iterations: u32 },
    #[error("time-bin peaks unresolved: {0}")]
    PeaksUnresolved(String),
    #[error("HOM fit failed: {0}")]
    FitFailure(String),
    #[error("no correlation peak in delays [{lo}, {hi}]")]
    NotFound { lo: i64, hi: i64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("not supported: {0}")]
    NotSupported(String),
}

/// Structured record emitted after every calibration procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub procedure: String,
    pub node: String,
    pub iterations: u32,
    pub residual: f64,
    pub duration_virtual_s: f64,
    pub parameters: BTreeMap<String, f64>,
}

/// Quality figures a fidelity estimator may draw on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityInputs {
    pub hom_visibility: f64,
    pub alignment_residual: f64,
    pub clock_jitter_ps: f64,
}

pub trait FidelityEstimator {
    fn estimate(&self, inputs: &QualityInputs) -> f64;
}

/// `F = (1 + V_HOM) / 2`. A repository convention, not a derived result.
#[derive(Debug, Clone, Copy, Default)]
pub struct HomFidelityEstimate;

impl FidelityEstimator for HomFidelityEstimate {
    fn estimate(&self, inputs: &QualityInputs) -> f64 {
        ((1.0 + inputs.hom_visibility) / 2.0).clamp(0.0, 1.0)
    }
}
