//! Early/late bin identification and analyzer phase alignment.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::numeric::scan_then_golden;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinFrame {
    pub early_offset_ps: f64,
    pub late_offset_ps: f64,
    pub bin_width_ps: f64,
    pub interferometer_phase_rad: f64,
}

impl TimeBinFrame {
    /// The interference bin sits halfway between early and late.
    pub fn middle_offset_ps(&self) -> f64 {
        0.5 * (self.early_offset_ps + self.late_offset_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinConfig {
    /// Time of histogram bin 0 relative to the local clock.
    pub origin_ps: f64,
    /// Width of one time bin; also the centroid half-window.
    pub bin_width_ps: f64,
    /// Second peak must reach this fraction of the first.
    pub min_peak_fraction: f64,
}

impl Default for TimeBinConfig {
    fn default() -> Self {
        TimeBinConfig { origin_ps: 0.0, bin_width_ps: 100.0, min_peak_fraction: 0.2 }
    }
}

fn median(values: &[u64]) -> f64 {
    let mut v: Vec<u64> = values.to_vec();
    v.sort_unstable();
    if v.is_empty() {
        0.0
    } else {
        v[v.len() / 2] as f64
    }
}

/// Background-subtracted centroid of the peak near `start`, re-centring a
/// window of `half` bins each side until it settles.
fn centroid(hist: &[u64], start: usize, half: usize, background: f64) -> f64 {
    let mut center = start as f64;
    for _ in 0..8 {
        let c = libm::round(center) as usize;
        let (lo, hi) = (c.saturating_sub(half), (c + half + 1).min(hist.len()));
        let (mut w, mut m) = (0.0, 0.0);
        for (i, &n) in hist.iter().enumerate().take(hi).skip(lo) {
            let x = n as f64 - background;
            w += x;
            m += x * i as f64;
        }
        if !(w > 0.0) {
            break;
        }
        let next = m / w;
        if libm::fabs(next - center) < 1e-3 {
            return next;
        }
        center = next;
    }
    center
}

/// Locates the early and late bursts in a 1 ps histogram. Which burst was
/// sent first is known from protocol sequencing; the earlier peak is taken
/// as early.
pub fn align_timebin(histogram: &[u64], cfg: &TimeBinConfig) -> Result<TimeBinFrame, CalibrationError> {
    if !(cfg.bin_width_ps >= 1.0) {
        return Err(CalibrationError::InvalidInput("bin width must be at least 1 ps".into()));
    }
    let half = libm::ceil(cfg.bin_width_ps) as usize;
    let background = median(histogram);
    let Some((first, &h1)) = histogram.iter().enumerate().max_by_key(|&(i, c)| (*c, core::cmp::Reverse(i))) else {
        return Err(CalibrationError::PeaksUnresolved("empty histogram".into()));
    };
    let significant = |h: u64| {
        let excess = h as f64 - background;
        excess > 5.0 * libm::sqrt(background.max(1.0))
    };
    if !significant(h1) {
        return Err(CalibrationError::PeaksUnresolved("no burst above background".into()));
    }
    let second = histogram
        .iter()
        .enumerate()
        .filter(|&(i, _)| i + half < first || i > first + half)
        .max_by_key(|&(i, c)| (*c, core::cmp::Reverse(i)));
    let Some((second, &h2)) = second else {
        return Err(CalibrationError::PeaksUnresolved("single burst".into()));
    };
    let excess1 = h1 as f64 - background;
    if !significant(h2) || (h2 as f64 - background) < cfg.min_peak_fraction * excess1 {
        return Err(CalibrationError::PeaksUnresolved("single burst".into()));
    }
    let c1 = centroid(histogram, first, half, background);
    let c2 = centroid(histogram, second, half, background);
    let separation = libm::fabs(c2 - c1);
    if separation <= 3.0 * cfg.bin_width_ps {
        return Err(CalibrationError::PeaksUnresolved(format!(
            "peaks {separation:.1} ps apart, need more than {:.1} ps",
            3.0 * cfg.bin_width_ps
        )));
    }
    let (early, late) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
    Ok(TimeBinFrame {
        early_offset_ps: cfg.origin_ps + early,
        late_offset_ps: cfg.origin_ps + late,
        bin_width_ps: cfg.bin_width_ps,
        interferometer_phase_rad: 0.0,
    })
}

/// Poisson-sampled histogram of two Gaussian bursts over a flat background.
pub fn synthetic_timebin_histogram(
    len_ps: usize,
    centers_ps: &[f64],
    sigma_ps: f64,
    counts_per_burst: f64,
    background_per_bin: f64,
    rng: &mut impl Rng,
) -> Vec<u64> {
    let norm = 1.0 / (sigma_ps * libm::sqrt(core::f64::consts::TAU));
    (0..len_ps)
        .map(|i| {
            let x = i as f64;
            let mut mean = background_per_bin;
            for c in centers_ps {
                let z = (x - c) / sigma_ps;
                mean += counts_per_burst * norm * libm::exp(-0.5 * z * z);
            }
            if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(rng) as u64
            } else {
                0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAlignment {
    pub phase_rad: f64,
    pub output_fraction: f64,
    pub evaluations: usize,
}

/// Tunes the analyzer phase to maximize the constructive output
/// `(1 + V cos(phi - offset)) / 2` of the unbalanced interferometer.
pub fn align_interferometer_phase(
    phase_offset_rad: f64,
    visibility: f64,
    tolerance_rad: f64,
) -> Result<PhaseAlignment, CalibrationError> {
    if !(visibility > 0.0 && visibility <= 1.0) {
        return Err(CalibrationError::InvalidInput(format!("visibility {visibility} gives no fringe")));
    }
    let output = |phi: f64| 0.5 * (1.0 + visibility * libm::cos(phi - phase_offset_rad));
    let m = scan_then_golden(|phi| -output(phi), 0.0, core::f64::consts::TAU, 24, tolerance_rad);
    let tau = core::f64::consts::TAU;
    let phase_rad = m.x - tau * libm::floor(m.x / tau);
    Ok(PhaseAlignment { phase_rad, output_fraction: -m.value, evaluations: m.evaluations })
}
