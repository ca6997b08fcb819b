//! Electrical-delay scan for the coincidence peak.
//!
//! At each integer delay the node waits for `confirm_counts` coincidences.
//! Reaching them before the accidental baseline could plausibly have
//! produced them marks a candidate; a second batch of the same size must
//! pass the same test before the delay is accepted.

use core::ops::RangeInclusive;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::CalibrationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integration {
    pub counts: u32,
    pub elapsed_s: f64,
}

pub trait CoincidenceOracle {
    /// Accidental coincidence rate expected from the measured singles.
    fn accidental_rate_hz(&self) -> f64;

    /// Counts at `delay` until `target` coincidences or `max_s` elapse.
    fn integrate(&mut self, delay: i64, target: u32, max_s: f64) -> Integration;
}

/// Flat accidental floor with a signal peak at one delay.
#[derive(Debug, Clone)]
pub struct PeakedCoincidences<R> {
    pub true_delay: i64,
    pub signal_hz: f64,
    pub accidental_hz: f64,
    pub rng: R,
}

impl<R: Rng> PeakedCoincidences<R> {
    /// Peak height given as CAR against the accidental floor.
    pub fn with_car(true_delay: i64, car: f64, accidental_hz: f64, rng: R) -> Self {
        PeakedCoincidences { true_delay, signal_hz: car * accidental_hz, accidental_hz, rng }
    }
}

impl<R: Rng> CoincidenceOracle for PeakedCoincidences<R> {
    fn accidental_rate_hz(&self) -> f64 {
        self.accidental_hz
    }

    fn integrate(&mut self, delay: i64, target: u32, max_s: f64) -> Integration {
        let rate = self.accidental_hz + if delay == self.true_delay { self.signal_hz } else { 0.0 };
        if !(rate > 0.0) {
            return Integration { counts: 0, elapsed_s: max_s };
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = 0.0;
        let mut counts = 0;
        while counts < target {
            let next = t + gap.sample(&mut self.rng);
            if next > max_s {
                return Integration { counts, elapsed_s: max_s };
            }
            t = next;
            counts += 1;
        }
        Integration { counts, elapsed_s: t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySearchConfig {
    pub confirm_counts: u32,
    /// Required excess over the accidental expectation, in Poisson sigmas.
    pub significance_sigma: f64,
    /// Dwell cap per delay when the accidental rate is zero.
    pub max_dwell_s: f64,
}

impl Default for DelaySearchConfig {
    fn default() -> Self {
        DelaySearchConfig { confirm_counts: 10, significance_sigma: 5.0, max_dwell_s: 10.0 }
    }
}

impl DelaySearchConfig {
    /// Largest baseline expectation `mu` with `n - mu >= k sqrt(mu)`.
    pub fn max_baseline_counts(&self) -> f64 {
        let (n, k) = (self.confirm_counts as f64, self.significance_sigma);
        let root = (-k + libm::sqrt(k * k + 4.0 * n)) / 2.0;
        root * root
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySearchReport {
    pub delay: i64,
    pub delays_scanned: u32,
    /// Coincidences accumulated at the accepted delay.
    pub counts_at_delay: u32,
    pub total_counts: u32,
    pub elapsed_s: f64,
    /// Excess of the verification batch over its accidental expectation,
    /// in sigmas.
    pub verified_sigma: f64,
}

fn excess_sigma(counts: u32, baseline: f64) -> f64 {
    if baseline <= 0.0 {
        return f64::INFINITY;
    }
    (counts as f64 - baseline) / libm::sqrt(baseline)
}

pub fn find_correlation_delay(
    oracle: &mut impl CoincidenceOracle,
    search_range: RangeInclusive<i64>,
    cfg: &DelaySearchConfig,
) -> Result<DelaySearchReport, CalibrationError> {
    if cfg.confirm_counts == 0 || !(cfg.significance_sigma > 0.0) {
        return Err(CalibrationError::InvalidInput("delay search configuration".into()));
    }
    let accidental = oracle.accidental_rate_hz();
    let dwell = if accidental > 0.0 {
        (cfg.max_baseline_counts() / accidental).min(cfg.max_dwell_s)
    } else {
        cfg.max_dwell_s
    };
    let passes = |i: &Integration| {
        i.counts >= cfg.confirm_counts && excess_sigma(i.counts, accidental * i.elapsed_s) >= cfg.significance_sigma
    };
    let mut report = DelaySearchReport {
        delay: 0,
        delays_scanned: 0,
        counts_at_delay: 0,
        total_counts: 0,
        elapsed_s: 0.0,
        verified_sigma: 0.0,
    };
    for delay in search_range.clone() {
        report.delays_scanned += 1;
        let first = oracle.integrate(delay, cfg.confirm_counts, dwell);
        report.total_counts += first.counts;
        report.elapsed_s += first.elapsed_s;
        if !passes(&first) {
            continue;
        }
        let second = oracle.integrate(delay, cfg.confirm_counts, dwell);
        report.total_counts += second.counts;
        report.elapsed_s += second.elapsed_s;
        if passes(&second) {
            report.delay = delay;
            report.counts_at_delay = first.counts + second.counts;
            report.verified_sigma = excess_sigma(second.counts, accidental * second.elapsed_s);
            return Ok(report);
        }
    }
    Err(CalibrationError::NotFound { lo: *search_range.start(), hi: *search_range.end() })
}
