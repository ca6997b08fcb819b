//! Quantum/classical coexistence studies on one calibrated pair setup:
//! two-photon visibility against C-band launch power, and CAR against the
//! power of a co-propagating clock.
//!
//! Both fit a single noise coefficient at one reference point and then
//! predict the rest of the sweep from the linear noise model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::photonics::{
    calibrate_raman, db_to_transmittance, dbm_to_mw, mw_to_dbm, pair_rate_for_car, poisson_mc_uncertainty,
    ChannelModel, EpsModel, Observable, PairSetup, PhotonicsError, RamanObservation,
};

fn arm(loss_db: f64, length_km: f64, attenuation: f64) -> ChannelModel {
    ChannelModel {
        transmittance: db_to_transmittance(loss_db),
        detector_efficiency: 0.25,
        dark_rate_hz: 100.0,
        filter_bw_ghz: 100.0,
        coincidence_window_s: 0.5e-9,
        raman_coeff: 0.0,
        classical_power_mw: 0.0,
        fiber_length_km: length_km,
        attenuation_db_per_km: attenuation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoexistenceParams {
    /// `shared` is the arm carrying the classical C-band light.
    pub setup: PairSetup,
    /// Intrinsic visibility per analysis basis.
    pub basis_visibility: BTreeMap<String, f64>,
    pub reference_basis: String,
    pub reference_power_dbm: f64,
    pub reference_visibility: f64,
}

impl Default for CoexistenceParams {
    fn default() -> Self {
        let (km, a) = (45.6, 0.43);
        Self {
            setup: PairSetup {
                eps: EpsModel {
                    pair_rate_hz: 1e7,
                    intrinsic_visibility: 0.90,
                    n_wavelength_outputs: 4,
                    rep_rate_hz: 417e6,
                    pulse_width_ps: 80.0,
                },
                local: arm(3.0, 0.0, 0.0),
                shared: arm(km * a, km, a),
            },
            basis_visibility: BTreeMap::from([("HV".into(), 0.90), ("DA".into(), 0.88)]),
            reference_basis: "HV".into(),
            reference_power_dbm: 6.8,
            reference_visibility: 0.77,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub launch_power_dbm: f64,
    pub predicted_visibility: f64,
    pub nonclassical: bool,
}

impl CoexistenceParams {
    fn basis_setup(&self, basis: &str) -> Result<PairSetup, PhotonicsError> {
        let v0 = *self
            .basis_visibility
            .get(basis)
            .ok_or_else(|| PhotonicsError::InvalidModel(format!("no intrinsic visibility for basis `{basis}`")))?;
        let mut s = self.setup.clone();
        s.eps.intrinsic_visibility = v0;
        Ok(s)
    }

    /// Raman coefficient matching the reference visibility exactly.
    pub fn calibrate(&self) -> Result<f64, PhotonicsError> {
        let setup = self.basis_setup(&self.reference_basis)?;
        let obs = [RamanObservation {
            classical_power_mw: dbm_to_mw(self.reference_power_dbm),
            observed: Observable::Visibility(self.reference_visibility),
        }];
        Ok(calibrate_raman(&obs, &setup)?.raman_coeff)
    }

    pub fn visibility(&self, basis: &str, power_mw: f64, raman_coeff: f64) -> Result<f64, PhotonicsError> {
        Ok(self.basis_setup(basis)?.statistics_at(power_mw, raman_coeff).visibility)
    }

    pub fn sweep(&self, basis: &str, raman_coeff: f64, powers_dbm: &[f64]) -> Result<Vec<SweepPoint>, PhotonicsError> {
        let setup = self.basis_setup(basis)?;
        Ok(powers_dbm
            .iter()
            .map(|&dbm| {
                let v = setup.statistics_at(dbm_to_mw(dbm), raman_coeff).visibility;
                SweepPoint { launch_power_dbm: dbm, predicted_visibility: v, nonclassical: v > FRAC_1_SQRT_2 }
            })
            .collect())
    }

    /// Launch power (dBm) where the visibility falls to `threshold`, or
    /// `None` when it is already below at zero power or never gets there.
    pub fn crossing_dbm(&self, basis: &str, raman_coeff: f64, threshold: f64) -> Result<Option<f64>, PhotonicsError> {
        let setup = self.basis_setup(basis)?;
        let v = |mw: f64| setup.statistics_at(mw, raman_coeff).visibility;
        if v(0.0) <= threshold {
            return Ok(None);
        }
        let mut hi = 1e-3;
        while v(hi) > threshold {
            hi *= 2.0;
            if hi > 1e9 {
                return Ok(None);
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if v(mid) > threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(mw_to_dbm(0.5 * (lo + hi))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarStudyParams {
    /// `shared` is the arm co-propagating with the clock.
    pub setup: PairSetup,
    pub zero_power_car: f64,
    pub zero_power_car_sigma: f64,
    pub max_power_mw: f64,
    pub max_power_car: f64,
    pub powers_mw: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for CarStudyParams {
    fn default() -> Self {
        let (km, a) = (20.0, 0.2);
        Self {
            setup: PairSetup {
                eps: EpsModel {
                    pair_rate_hz: 1e6,
                    intrinsic_visibility: 0.90,
                    n_wavelength_outputs: 4,
                    rep_rate_hz: 90e6,
                    pulse_width_ps: 80.0,
                },
                local: arm(3.0, 0.0, 0.0),
                shared: arm(km * a, km, a),
            },
            zero_power_car: 344.0,
            zero_power_car_sigma: 22.0,
            max_power_mw: 1.0,
            max_power_car: 246.0,
            powers_mw: (0..=10).map(|i| i as f64 * 0.1).collect(),
            mc_samples: 4000,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarCalibration {
    pub pair_rate_hz: f64,
    pub clock_coeff: f64,
    /// Integration time at which the zero-power CAR has the reference
    /// Poisson uncertainty.
    pub integration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarPoint {
    pub clock_power_mw: f64,
    pub car: f64,
    pub car_sigma: f64,
}

impl CarStudyParams {
    /// Pair rate from the zero-power CAR, clock coefficient from the CAR at
    /// maximum power, integration time from the zero-power uncertainty.
    pub fn calibrate(&self) -> Result<CarCalibration, PhotonicsError> {
        let mut setup = self.setup.clone();
        setup.eps.pair_rate_hz = pair_rate_for_car(self.zero_power_car, &setup)?;
        let obs = [RamanObservation { classical_power_mw: self.max_power_mw, observed: Observable::Car(self.max_power_car) }];
        let clock_coeff = calibrate_raman(&obs, &setup)?.raman_coeff;
        let base = setup.statistics_at(0.0, clock_coeff);
        let rel = self.zero_power_car_sigma / self.zero_power_car;
        let integration_s = (1.0 / base.coincidences_hz + 1.0 / base.accidentals_hz) / (rel * rel);
        Ok(CarCalibration { pair_rate_hz: setup.eps.pair_rate_hz, clock_coeff, integration_s })
    }

    /// Model CAR with its Poisson Monte-Carlo spread at each swept power.
    pub fn sweep(&self, cal: &CarCalibration) -> Result<Vec<CarPoint>, PhotonicsError> {
        let mut setup = self.setup.clone();
        setup.eps.pair_rate_hz = cal.pair_rate_hz;
        let mut out = Vec::with_capacity(self.powers_mw.len());
        for (i, &p) in self.powers_mw.iter().enumerate() {
            let s = setup.statistics_at(p, cal.clock_coeff);
            let counts = BTreeMap::from([
                ("c".into(), libm::round(s.coincidences_hz * cal.integration_s) as u64),
                ("a".into(), libm::round(s.accidentals_hz * cal.integration_s) as u64),
            ]);
            let metric = |m: &BTreeMap<String, f64>| {
                if m["a"] > 0.0 {
                    Ok(m["c"] / m["a"])
                } else {
                    Err("no accidentals in sample")
                }
            };
            let (_, sigma) = poisson_mc_uncertainty(&counts, metric, self.mc_samples, self.seed.wrapping_add(i as u64))?;
            out.push(CarPoint { clock_power_mw: p, car: s.car, car_sigma: sigma });
        }
        Ok(out)
    }
}
