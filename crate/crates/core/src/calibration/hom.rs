//! HOM delay scan with a Gaussian dip fit.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::numeric::levenberg_marquardt;
use crate::photonics::{hom_coincidence_rate, HomDipModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomScan {
    pub best_delay_ps: f64,
    pub fitted_visibility: f64,
    pub fitted_coherence_ps: f64,
    pub fitted_baseline: f64,
    pub delays_ps: Vec<f64>,
    pub counts: Vec<f64>,
}

fn dip(p: &[f64], d: f64) -> f64 {
    let x = (d - p[2]) / p[3];
    p[0] * (1.0 - p[1] * libm::exp(-x * x))
}

/// Fits `B (1 - V exp(-((d - d0)/tc)^2))` to counts with Poisson weights.
pub fn fit_hom_dip(delays_ps: &[f64], counts: &[f64]) -> Result<HomScan, CalibrationError> {
    if delays_ps.len() != counts.len() || delays_ps.len() < 5 {
        return Err(CalibrationError::FitFailure("need at least 5 matching delay/count points".into()));
    }
    let mut order: Vec<usize> = (0..delays_ps.len()).collect();
    order.sort_by(|&a, &b| delays_ps[a].total_cmp(&delays_ps[b]));
    let (lo, hi) = (delays_ps[order[0]], delays_ps[order[order.len() - 1]]);
    let baseline = 0.5 * (counts[order[0]] + counts[order[order.len() - 1]]);
    let (imin, &cmin) = counts.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
    if !(baseline > 0.0) {
        return Err(CalibrationError::FitFailure("no counts at the scan edges".into()));
    }
    let depth = 1.0 - cmin / baseline;
    let below = counts.iter().filter(|&&c| c < baseline * (1.0 - depth / 2.0)).count().max(1);
    let spacing = (hi - lo) / (delays_ps.len() - 1) as f64;
    let tc0 = (below as f64 * spacing / (2.0 * libm::sqrt(core::f64::consts::LN_2))).max(spacing);
    let start = [baseline, depth.clamp(0.01, 1.0), delays_ps[imin], tc0];

    let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / libm::sqrt(c.max(1.0))).collect();
    let (p, _) = levenberg_marquardt(
        |p, out| {
            for i in 0..delays_ps.len() {
                out[i] = (dip(p, delays_ps[i]) - counts[i]) * weights[i];
            }
        },
        &start,
        delays_ps.len(),
        200,
    )
    .ok_or_else(|| CalibrationError::FitFailure("least squares diverged".into()))?;
    let (v, d0, tc) = (p[1], p[2], libm::fabs(p[3]));
    if !(v > 0.0) || !tc.is_finite() || tc == 0.0 {
        return Err(CalibrationError::FitFailure(format!("no dip found (V = {v:.3})")));
    }
    if d0 < lo || d0 > hi {
        return Err(CalibrationError::FitFailure(format!("dip center {d0:.1} ps outside the scan")));
    }
    let edge = |d: f64| libm::exp(-((d - d0) / tc) * ((d - d0) / tc));
    if edge(lo) >= 0.1 || edge(hi) >= 0.1 {
        return Err(CalibrationError::FitFailure("scan does not reach the baseline on both sides".into()));
    }
    Ok(HomScan {
        best_delay_ps: d0,
        fitted_visibility: v.min(1.0),
        fitted_coherence_ps: tc,
        fitted_baseline: p[0],
        delays_ps: delays_ps.to_vec(),
        counts: counts.to_vec(),
    })
}

fn expected_counts(dip: &HomDipModel, delay_grid: &[f64], counts_per_point: u64) -> Vec<f64> {
    let far = dip.baseline_rate_hz.max(f64::MIN_POSITIVE);
    delay_grid.iter().map(|&d| counts_per_point as f64 * hom_coincidence_rate(dip, d) / far).collect()
}

/// Scans `delay_grid`, drawing Poisson counts with `counts_per_point`
/// expected far from the dip, and fits the result.
pub fn scan_hom(
    dip: &HomDipModel,
    delay_grid: &[f64],
    counts_per_point: u64,
    rng: &mut impl Rng,
) -> Result<HomScan, CalibrationError> {
    dip.validate().map_err(|e| CalibrationError::InvalidInput(format!("{e}")))?;
    let counts = expected_counts(dip, delay_grid, counts_per_point)
        .into_iter()
        .map(|m| if m > 0.0 { Poisson::new(m).expect("positive mean").sample(rng) } else { 0.0 })
        .collect::<Vec<_>>();
    fit_hom_dip(delay_grid, &counts)
}

/// Same scan with counts at their expectation values.
pub fn scan_hom_expected(dip: &HomDipModel, delay_grid: &[f64], counts_per_point: u64) -> Result<HomScan, CalibrationError> {
    dip.validate().map_err(|e| CalibrationError::InvalidInput(format!("{e}")))?;
    fit_hom_dip(delay_grid, &expected_counts(dip, delay_grid, counts_per_point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, half_span: f64) -> Vec<f64> {
        (0..n).map(|i| -half_span + 2.0 * half_span * i as f64 / (n - 1) as f64).collect()
    }

    fn model() -> HomDipModel {
        HomDipModel { baseline_rate_hz: 500.0, hom_visibility: 0.9, coherence_time_ps: 10.0 }
    }

    #[test]
    fn expectation_counts_recover_model() {
        let s = scan_hom_expected(&model(), &grid(21, 40.0), 10_000).unwrap();
        assert!(s.best_delay_ps.abs() < 1e-9, "{}", s.best_delay_ps);
        assert!((s.fitted_visibility - 0.9).abs() < 1e-9);
        assert!((s.fitted_coherence_ps - 10.0).abs() < 1e-6);
    }

    #[test]
    fn noisy_scans_stay_close() {
        let g = grid(21, 40.0);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = scan_hom(&model(), &g, 10_000, &mut rng).unwrap();
            assert!((s.fitted_visibility - 0.9).abs() < 0.03, "seed {seed}: {}", s.fitted_visibility);
        }
    }

    #[test]
    fn grid_off_the_dip_fails() {
        let g: Vec<f64> = (0..21).map(|i| 100.0 + 5.0 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(scan_hom(&model(), &g, 10_000, &mut rng), Err(CalibrationError::FitFailure(_))));
        assert!(matches!(scan_hom_expected(&model(), &g, 10_000), Err(CalibrationError::FitFailure(_))));
    }

    #[test]
    fn grid_too_narrow_fails() {
        let g = grid(21, 8.0);
        assert!(matches!(scan_hom_expected(&model(), &g, 10_000), Err(CalibrationError::FitFailure(_))));
    }

    #[test]
    fn offset_dip_is_located() {
        let mut m = model();
        m.baseline_rate_hz = 1.0;
        // Shift by sampling the model at d - 7.
        let g = grid(31, 60.0);
        let counts: Vec<f64> = g.iter().map(|&d| 10_000.0 * hom_coincidence_rate(&m, d - 7.0)).collect();
        let s = fit_hom_dip(&g, &counts).unwrap();
        assert!((s.best_delay_ps - 7.0).abs() < 1e-6);
    }
}
