//! Phenomenological physical-layer model.
//!
//! Rates are in counts per second. A pair source emits `R` pairs/s; arm `i`
//! delivers a photon with probability `eta_i * det_i`. Noise on an arm is
//! spontaneous Raman scattering from co-propagating classical light plus
//! detector dark counts:
//!
//! ```text
//! noise = raman_coeff * P_mW * L_eff * B_GHz * det + dark
//! L_eff = (1 - 10^(-a L / 10)) / (a ln10 / 10)
//! ```
//!
//! Accidentals in a coincidence window `tau` are `s1 * s2 * tau`, and the
//! two-photon-interference visibility is degraded by accidentals as
//! `V = S V0 / (S + 2A)`. Four-wave mixing and ASE leakage from C-band
//! traffic into the O-band are taken as zero.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, LN_10};
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::mean_std;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhotonicsError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("metric evaluation failed at sample {index}: {message}")]
    MetricEvaluation { index: usize, message: String },
    #[error("no feasible fit: {0}")]
    NoFeasibleFit(String),
    #[error("at least {min} Monte-Carlo samples are required, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), PhotonicsError> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(PhotonicsError::OutOfRange { name, value, lo, hi })
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    libm::pow(10.0, dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * libm::log10(mw)
}

pub fn db_to_transmittance(loss_db: f64) -> f64 {
    libm::pow(10.0, -loss_db / 10.0)
}

/// Entangled photon source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsModel {
    pub pair_rate_hz: f64,
    pub intrinsic_visibility: f64,
    pub n_wavelength_outputs: u32,
    pub rep_rate_hz: f64,
    pub pulse_width_ps: f64,
}

impl EpsModel {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        check_range("intrinsic_visibility", self.intrinsic_visibility, 0.0, 1.0)?;
        if !(self.pair_rate_hz >= 0.0) {
            return Err(PhotonicsError::InvalidModel("pair_rate_hz must be >= 0".into()));
        }
        if self.n_wavelength_outputs < 2 || !self.n_wavelength_outputs.is_multiple_of(2) {
            return Err(PhotonicsError::InvalidModel("n_wavelength_outputs must be even and >= 2".into()));
        }
        Ok(())
    }

    pub fn max_user_pairs(&self) -> u32 {
        self.n_wavelength_outputs / 2
    }
}

/// One receiving arm: the fiber path from the source plus its detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub transmittance: f64,
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub filter_bw_ghz: f64,
    pub coincidence_window_s: f64,
    /// Raman noise counts/s per mW of launch power, per km of effective
    /// length, per GHz of filter bandwidth, before detection efficiency.
    pub raman_coeff: f64,
    pub classical_power_mw: f64,
    pub fiber_length_km: f64,
    /// Attenuation used for the Raman effective length.
    pub attenuation_db_per_km: f64,
}

impl ChannelModel {
    /// Arm whose transmittance follows from a path loss in dB.
    pub fn with_loss_db(mut self, loss_db: f64) -> Self {
        self.transmittance = db_to_transmittance(loss_db);
        self
    }

    pub fn with_power_mw(mut self, mw: f64) -> Self {
        self.classical_power_mw = mw;
        self
    }

    pub fn validate(&self) -> Result<(), PhotonicsError> {
        check_range("transmittance", self.transmittance, 0.0, 1.0)?;
        check_range("detector_efficiency", self.detector_efficiency, 0.0, 1.0)?;
        if !(self.coincidence_window_s > 0.0) {
            return Err(PhotonicsError::InvalidModel("coincidence_window_s must be > 0".into()));
        }
        for (name, v) in [
            ("dark_rate_hz", self.dark_rate_hz),
            ("filter_bw_ghz", self.filter_bw_ghz),
            ("raman_coeff", self.raman_coeff),
            ("classical_power_mw", self.classical_power_mw),
            ("fiber_length_km", self.fiber_length_km),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(PhotonicsError::InvalidModel(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Raman counts/s produced per unit of `raman_coeff`.
    pub fn raman_gain(&self) -> f64 {
        self.classical_power_mw
            * effective_length_km(self.attenuation_db_per_km, self.fiber_length_km)
            * self.filter_bw_ghz
            * self.detector_efficiency
    }
}

pub fn effective_length_km(attenuation_db_per_km: f64, length_km: f64) -> f64 {
    let alpha = attenuation_db_per_km * LN_10 / 10.0;
    if alpha <= 0.0 {
        return length_km;
    }
    (1.0 - libm::pow(10.0, -attenuation_db_per_km * length_km / 10.0)) / alpha
}

/// Detected noise rate on an arm with the signal switched off.
pub fn noise_rate(ch: &ChannelModel) -> f64 {
    ch.raman_coeff * ch.raman_gain() + ch.dark_rate_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatisticsUncertainty {
    pub singles_1_hz: f64,
    pub singles_2_hz: f64,
    pub coincidences_hz: f64,
    pub accidentals_hz: f64,
    pub car: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotonStatistics {
    pub singles_1_hz: f64,
    pub singles_2_hz: f64,
    /// True (pair-originated) coincidences.
    pub coincidences_hz: f64,
    pub accidentals_hz: f64,
    pub car: f64,
    pub visibility: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainties: Option<StatisticsUncertainty>,
}

/// CAR, with 0 when there are no coincidences or no accidentals.
pub fn car(coincidences: f64, accidentals: f64) -> f64 {
    if coincidences <= 0.0 || accidentals <= 0.0 {
        0.0
    } else {
        coincidences / accidentals
    }
}

pub fn singles_and_coincidences(eps: &EpsModel, ch1: &ChannelModel, ch2: &ChannelModel) -> PhotonStatistics {
    let p1 = ch1.transmittance * ch1.detector_efficiency;
    let p2 = ch2.transmittance * ch2.detector_efficiency;
    let singles_1_hz = eps.pair_rate_hz * p1 + noise_rate(ch1);
    let singles_2_hz = eps.pair_rate_hz * p2 + noise_rate(ch2);
    let coincidences_hz = eps.pair_rate_hz * p1 * p2;
    let tau = libm::fmin(ch1.coincidence_window_s, ch2.coincidence_window_s);
    let accidentals_hz = singles_1_hz * singles_2_hz * tau;
    let mut stats = PhotonStatistics {
        singles_1_hz,
        singles_2_hz,
        coincidences_hz,
        accidentals_hz,
        car: car(coincidences_hz, accidentals_hz),
        visibility: 0.0,
        uncertainties: None,
    };
    stats.visibility = visibility(eps, &stats);
    stats
}

/// Fringe visibility after accidentals: `S V0 / (S + 2A)`.
pub fn visibility(eps: &EpsModel, stats: &PhotonStatistics) -> f64 {
    visibility_with(eps.intrinsic_visibility, stats.coincidences_hz, stats.accidentals_hz)
}

pub fn visibility_with(v0: f64, coincidences: f64, accidentals: f64) -> f64 {
    let denom = coincidences + 2.0 * accidentals;
    if denom <= 0.0 {
        0.0
    } else {
        coincidences * v0 / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Nonclassicality {
    NonClassical,
    Classical,
}

/// Strictly above 1/sqrt(2) counts as nonclassical.
pub fn classify_nonclassical(v: f64) -> Result<Nonclassicality, PhotonicsError> {
    check_range("visibility", v, 0.0, 1.0)?;
    Ok(if v > FRAC_1_SQRT_2 { Nonclassicality::NonClassical } else { Nonclassicality::Classical })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeleportationBound {
    AboveClassical,
    NotAboveClassical,
}

/// Compares a teleportation fidelity against the 2/3 classical limit.
pub fn teleportation_bound_check(fidelity: f64) -> Result<TeleportationBound, PhotonicsError> {
    check_range("fidelity", fidelity, 0.0, 1.0)?;
    Ok(if fidelity > 2.0 / 3.0 {
        TeleportationBound::AboveClassical
    } else {
        TeleportationBound::NotAboveClassical
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomDipModel {
    pub baseline_rate_hz: f64,
    pub hom_visibility: f64,
    pub coherence_time_ps: f64,
}

impl HomDipModel {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        check_range("hom_visibility", self.hom_visibility, 0.0, 1.0)?;
        if !(self.coherence_time_ps > 0.0) || !(self.baseline_rate_hz >= 0.0) {
            return Err(PhotonicsError::InvalidModel("coherence time must be > 0, baseline >= 0".into()));
        }
        Ok(())
    }
}

/// Gaussian HOM dip: `C(d) = C_far (1 - V exp(-(d/tc)^2))`.
pub fn hom_coincidence_rate(model: &HomDipModel, delay_ps: f64) -> f64 {
    let x = delay_ps / model.coherence_time_ps;
    model.baseline_rate_hz * (1.0 - model.hom_visibility * libm::exp(-x * x))
}

/// Values of `metric` over Poisson resamples of `counts` for sample indices
/// in `range`. Sample `i` draws from its own ChaCha stream, so any split of
/// the index range gives the same concatenated result.
pub fn poisson_mc_samples<E: core::fmt::Display>(
    counts: &BTreeMap<String, u64>,
    metric: impl Fn(&BTreeMap<String, f64>) -> Result<f64, E>,
    range: Range<usize>,
    seed: u64,
) -> Result<Vec<f64>, PhotonicsError> {
    let dists: Vec<(String, Option<Poisson<f64>>)> = counts
        .iter()
        .map(|(k, &n)| (k.clone(), (n > 0).then(|| Poisson::new(n as f64).expect("positive mean"))))
        .collect();
    let mut out = Vec::with_capacity(range.len());
    let mut sample = BTreeMap::new();
    for index in range {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        sample.clear();
        for (k, d) in &dists {
            let v = d.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            sample.insert(k.clone(), v);
        }
        let value = metric(&sample)
            .map_err(|e| PhotonicsError::MetricEvaluation { index, message: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}

/// Mean and sample standard deviation of `metric` under Poisson resampling.
pub fn poisson_mc_uncertainty<E: core::fmt::Display>(
    counts: &BTreeMap<String, u64>,
    metric: impl Fn(&BTreeMap<String, f64>) -> Result<f64, E>,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64), PhotonicsError> {
    if n_samples < 100 {
        return Err(PhotonicsError::TooFewSamples { min: 100, got: n_samples });
    }
    let samples = poisson_mc_samples(counts, metric, 0..n_samples, seed)?;
    Ok(mean_std(&samples))
}

/// A source plus two arms; `shared` is the arm that co-propagates with the
/// classical light being characterized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSetup {
    pub eps: EpsModel,
    pub local: ChannelModel,
    pub shared: ChannelModel,
}

impl PairSetup {
    pub fn statistics(&self) -> PhotonStatistics {
        singles_and_coincidences(&self.eps, &self.local, &self.shared)
    }

    /// Statistics with the shared arm at `power_mw` and `raman_coeff`.
    pub fn statistics_at(&self, power_mw: f64, raman_coeff: f64) -> PhotonStatistics {
        let mut shared = self.shared.clone();
        shared.classical_power_mw = power_mw;
        shared.raman_coeff = raman_coeff;
        singles_and_coincidences(&self.eps, &self.local, &shared)
    }

    pub fn with_coeff(&self, raman_coeff: f64) -> Self {
        let mut out = self.clone();
        out.shared.raman_coeff = raman_coeff;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    Car(f64),
    Visibility(f64),
}

impl Observable {
    fn value(self) -> f64 {
        match self {
            Observable::Car(v) | Observable::Visibility(v) => v,
        }
    }

    fn predict(self, stats: &PhotonStatistics) -> f64 {
        match self {
            Observable::Car(_) => stats.car,
            Observable::Visibility(_) => stats.visibility,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamanObservation {
    pub classical_power_mw: f64,
    pub observed: Observable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamanFit {
    pub raman_coeff: f64,
    pub rms_residual: f64,
    pub observations: usize,
}

/// Coefficient that reproduces one observation exactly, if any.
fn exact_coefficient(setup: &PairSetup, obs: &RamanObservation) -> Result<f64, PhotonicsError> {
    let base = setup.statistics_at(obs.classical_power_mw, 0.0);
    let mut probe = setup.shared.clone();
    probe.classical_power_mw = obs.classical_power_mw;
    let gain = probe.raman_gain();
    if !(gain > 0.0) {
        return Err(PhotonicsError::NoFeasibleFit(
            "observation carries no classical power; the coefficient is unconstrained".into(),
        ));
    }
    let s = base.coincidences_hz;
    let target_accidentals = match obs.observed {
        Observable::Car(c) if c > 0.0 => s / c,
        Observable::Visibility(v) if v > 0.0 && v <= setup.eps.intrinsic_visibility => {
            s * (setup.eps.intrinsic_visibility / v - 1.0) / 2.0
        }
        other => {
            return Err(PhotonicsError::NoFeasibleFit(format!("observation {other:?} cannot be matched")))
        }
    };
    let tau = libm::fmin(setup.local.coincidence_window_s, setup.shared.coincidence_window_s);
    let needed_singles = target_accidentals / (base.singles_1_hz * tau);
    let coeff = (needed_singles - base.singles_2_hz) / gain;
    if coeff < 0.0 {
        return Err(PhotonicsError::NoFeasibleFit(format!(
            "observation {:?} is better than the noise-free prediction {:.4}",
            obs.observed,
            obs.observed.predict(&base)
        )));
    }
    Ok(coeff)
}

/// Least-squares Raman coefficient for a set of (power, CAR or visibility)
/// observations. A single observation is matched exactly.
pub fn calibrate_raman(observations: &[RamanObservation], setup: &PairSetup) -> Result<RamanFit, PhotonicsError> {
    setup.eps.validate()?;
    setup.local.validate()?;
    setup.shared.validate()?;
    if observations.is_empty() {
        return Err(PhotonicsError::NoFeasibleFit("no observations".into()));
    }
    let residual = |k: f64| -> Vec<f64> {
        observations
            .iter()
            .map(|o| o.observed.predict(&setup.statistics_at(o.classical_power_mw, k)) - o.observed.value())
            .collect()
    };
    let sse = |k: f64| residual(k).iter().map(|r| r * r).sum::<f64>();

    let starts: Vec<f64> = observations.iter().filter_map(|o| exact_coefficient(setup, o).ok()).collect();
    if starts.is_empty() {
        // Surface the first specific reason.
        return exact_coefficient(setup, &observations[0]).and(Err(PhotonicsError::NoFeasibleFit(
            "no observation admits a non-negative coefficient".into(),
        )));
    }
    let mut k = starts.iter().sum::<f64>() / starts.len() as f64;
    if observations.len() > 1 {
        let mut cost = sse(k);
        for _ in 0..200 {
            let h = libm::fmax(k * 1e-6, 1e-12);
            let r = residual(k);
            let rp = residual(k + h);
            let rm = residual(libm::fmax(k - h, 0.0));
            let dk = k + h - libm::fmax(k - h, 0.0);
            let (mut jtj, mut jtr) = (0.0, 0.0);
            for i in 0..r.len() {
                let j = (rp[i] - rm[i]) / dk;
                jtj += j * j;
                jtr += j * r[i];
            }
            if jtj <= 0.0 {
                break;
            }
            let mut step = -jtr / jtj;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = libm::fmax(k + step, 0.0);
                let c = sse(trial);
                if c <= cost {
                    let moved = libm::fabs(trial - k);
                    k = trial;
                    cost = c;
                    accepted = moved > 1e-15 * libm::fmax(k, 1e-300);
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    let rms = libm::sqrt(sse(k) / observations.len() as f64);
    Ok(RamanFit { raman_coeff: k, rms_residual: rms, observations: observations.len() })
}

/// Pair rate at which the zero-power CAR of the setup equals `target`.
/// Picks the high-rate branch where multi-pair accidentals dominate.
pub fn pair_rate_for_car(target: f64, setup: &PairSetup) -> Result<f64, PhotonicsError> {
    let car_at = |r: f64| {
        let mut s = setup.clone();
        s.eps.pair_rate_hz = r;
        s.statistics_at(0.0, 0.0).car
    };
    let a = setup.local.transmittance * setup.local.detector_efficiency;
    let b = setup.shared.transmittance * setup.shared.detector_efficiency;
    let (d1, d2) = (noise_rate(&setup.local), setup.shared.dark_rate_hz);
    let peak = if a > 0.0 && b > 0.0 { libm::sqrt(libm::fmax(d1 * d2, 1e-300) / (a * b)) } else { 0.0 };
    if !(peak > 0.0) || car_at(peak) < target {
        return Err(PhotonicsError::NoFeasibleFit(format!("CAR {target} exceeds the achievable maximum")));
    }
    let (mut lo, mut hi) = (libm::log(peak), libm::log(1e15));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if car_at(libm::exp(mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(libm::exp(0.5 * (lo + hi)))
}
