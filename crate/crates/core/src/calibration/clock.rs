use serde::{Deserialize, Serialize};

/// Distribution jitter threshold used when none is configured.
pub const DEFAULT_JITTER_BUDGET_PS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub oscillator_jitter_fs: f64,
    pub distribution_jitter_ps: f64,
    pub clock_rate_hz: f64,
    pub clock_power_mw: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel { oscillator_jitter_fs: 700.0, distribution_jitter_ps: 1.9, clock_rate_hz: 200e6, clock_power_mw: 0.0 }
    }
}

/// Root-sum-square of the clock's own jitters and `extra_ps`.
pub fn clock_jitter_budget(clock: &ClockModel, extra_ps: &[f64]) -> f64 {
    let osc = clock.oscillator_jitter_fs * 1e-3;
    let sq = osc * osc
        + clock.distribution_jitter_ps * clock.distribution_jitter_ps
        + extra_ps.iter().map(|j| j * j).sum::<f64>();
    libm::sqrt(sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterCheck {
    pub total_ps: f64,
    pub budget_ps: f64,
    pub within_budget: bool,
}

impl JitterCheck {
    pub fn new(total_ps: f64, budget_ps: f64) -> Self {
        JitterCheck { total_ps, budget_ps, within_budget: total_ps <= budget_ps }
    }
}
