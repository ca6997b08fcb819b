//! Two-signal polarization reference-frame alignment.
//!
//! The receiver compensator is `LCR(phi) * HWP(h) * QWP(q)`, applied after
//! the fiber. Analysis is a projection half-wave plate in front of a PBS.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::jones::{self, Jones, JonesVector};
use crate::numeric::{scan_then_golden, Minimum};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Compensator {
    pub qwp_deg: f64,
    pub hwp_deg: f64,
    pub lcr_phase_rad: f64,
}

impl Compensator {
    pub fn matrix(&self) -> Jones {
        Jones::lcr(self.lcr_phase_rad) * Jones::hwp(self.hwp_deg) * Jones::qwp(self.qwp_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationChannelState {
    pub fiber_unitary: Jones,
    pub compensator: Compensator,
    /// Random-walk rotation rate of the fiber, rad/s on the Poincare sphere.
    pub drift_rate: f64,
}

impl PolarizationChannelState {
    pub fn new(fiber_unitary: Jones) -> Self {
        PolarizationChannelState { fiber_unitary, compensator: Compensator::default(), drift_rate: 0.0 }
    }

    pub fn total(&self) -> Jones {
        self.compensator.matrix() * self.fiber_unitary
    }

    /// Applies `dt_s` of drift: a rotation of `drift_rate * dt_s` about a
    /// random axis, followed by renormalization.
    pub fn drift(&mut self, dt_s: f64, rng: &mut impl Rng) {
        let angle = self.drift_rate * dt_s;
        if angle == 0.0 {
            return;
        }
        self.fiber_unitary = (Jones::random_rotation(angle, rng) * self.fiber_unitary).renormalized();
    }

    /// Infidelities of the V and diagonal alignment states against their
    /// targets `|V>` and `|D>`.
    pub fn residuals(&self, phase_eps: f64) -> (f64, f64) {
        let u = self.total();
        let rv = 1.0 - jones::fidelity(&jones::vertical(), &u.apply(&jones::vertical()));
        let rd = 1.0 - jones::fidelity(&jones::diagonal(0.0), &u.apply(&jones::diagonal(phase_eps)));
        (rv.max(0.0), rd.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentKind {
    VAlign,
    DiagAlign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSignal {
    pub kind: AlignmentKind,
    pub power: f64,
    pub phase_eps: f64,
}

impl AlignmentSignal {
    pub fn v_align(power: f64) -> Self {
        AlignmentSignal { kind: AlignmentKind::VAlign, power, phase_eps: 0.0 }
    }

    pub fn diag_align(power: f64, phase_eps: f64) -> Self {
        AlignmentSignal { kind: AlignmentKind::DiagAlign, power, phase_eps }
    }

    pub fn state(&self) -> JonesVector {
        match self.kind {
            AlignmentKind::VAlign => jones::vertical(),
            AlignmentKind::DiagAlign => jones::diagonal(self.phase_eps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PbsPort {
    Transmitted,
    Reflected,
}

/// Analyzer setting: projection HWP angle plus the PBS output observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub hwp_deg: f64,
    pub port: PbsPort,
}

impl Projection {
    pub const H: Projection = Projection { hwp_deg: 0.0, port: PbsPort::Transmitted };
    pub const V: Projection = Projection { hwp_deg: 0.0, port: PbsPort::Reflected };
    pub const D: Projection = Projection { hwp_deg: 22.5, port: PbsPort::Transmitted };
    pub const A: Projection = Projection { hwp_deg: 22.5, port: PbsPort::Reflected };

    fn probability(&self, state: &JonesVector) -> f64 {
        let out = Jones::hwp(self.hwp_deg).apply(state);
        match self.port {
            PbsPort::Transmitted => out[0].norm_sqr(),
            PbsPort::Reflected => out[1].norm_sqr(),
        }
    }
}

/// Relative singles rate behind `projection` for `signal` sent through the
/// channel and compensator.
pub fn singles_rate_for_projection(
    signal: &AlignmentSignal,
    channel: &PolarizationChannelState,
    projection: &Projection,
) -> f64 {
    let state = channel.total().apply(&signal.state());
    signal.power * projection.probability(&state).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Coarse-scan points per parameter before golden-section refinement.
    pub scan_points: usize,
    /// Final bracket width of each one-dimensional search, radians.
    pub tolerance_rad: f64,
    pub max_iterations: u32,
    /// Largest acceptable residual infidelity.
    pub residual_tolerance: f64,
    /// Integration time of one singles reading.
    pub dwell_s: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            scan_points: 24,
            tolerance_rad: 1e-4,
            max_iterations: 3,
            residual_tolerance: 1e-3,
            dwell_s: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub residual_infidelity: f64,
    pub residual_v: f64,
    pub residual_diag: f64,
    pub iterations: u32,
    pub evaluations: usize,
    pub final_compensator: Compensator,
}

impl AlignmentReport {
    pub fn duration_s(&self, cfg: &AlignmentConfig) -> f64 {
        self.evaluations as f64 * cfg.dwell_s
    }
}

/// Stage one: minimize the H-port singles under `VAlign` over (qwp, hwp).
/// The LCR is diagonal and cannot change this objective.
fn stage_v(channel: &PolarizationChannelState, cfg: &AlignmentConfig, points: usize) -> (f64, f64, usize) {
    let signal = AlignmentSignal::v_align(1.0);
    let tol_deg = cfg.tolerance_rad.to_degrees();
    let mut evaluations = 0;
    let mut probe = channel.clone();
    let mut inner = |q: f64, evaluations: &mut usize| -> Minimum {
        let m = scan_then_golden(
            |h| {
                probe.compensator.qwp_deg = q;
                probe.compensator.hwp_deg = h;
                singles_rate_for_projection(&signal, &probe, &Projection::H)
            },
            0.0,
            90.0,
            points,
            tol_deg,
        );
        *evaluations += m.evaluations;
        m
    };
    let outer = scan_then_golden(|q| inner(q, &mut evaluations).value, 0.0, 180.0, points, tol_deg);
    let best = inner(outer.x, &mut evaluations);
    (outer.x, best.x, evaluations)
}

/// Stage two: projection HWP at 22.5 degrees, minimize the A port under
/// `DiagAlign` over the LCR phase.
fn stage_diag(channel: &PolarizationChannelState, phase_eps: f64, cfg: &AlignmentConfig, points: usize) -> (f64, usize) {
    let signal = AlignmentSignal::diag_align(1.0, phase_eps);
    let mut probe = channel.clone();
    let m = scan_then_golden(
        |phi| {
            probe.compensator.lcr_phase_rad = phi;
            singles_rate_for_projection(&signal, &probe, &Projection::A)
        },
        0.0,
        core::f64::consts::TAU,
        points,
        cfg.tolerance_rad,
    );
    (m.x, m.evaluations)
}

fn align(
    channel: &PolarizationChannelState,
    phase_eps: f64,
    cfg: &AlignmentConfig,
    two_stage: bool,
) -> Result<AlignmentReport, CalibrationError> {
    if cfg.scan_points < 3 || !(cfg.tolerance_rad > 0.0) || cfg.max_iterations == 0 {
        return Err(CalibrationError::InvalidInput("alignment configuration".into()));
    }
    let mut work = channel.clone();
    let mut evaluations = 0;
    let mut last = None;
    for iteration in 1..=cfg.max_iterations {
        // Later passes scan more finely to escape a poor coarse bracket.
        let points = cfg.scan_points << (iteration - 1);
        let (q, h, n) = stage_v(&work, cfg, points);
        evaluations += n;
        work.compensator.qwp_deg = q;
        work.compensator.hwp_deg = h;
        if two_stage {
            let (phi, n) = stage_diag(&work, phase_eps, cfg, points);
            evaluations += n;
            work.compensator.lcr_phase_rad = phi;
        }
        let (rv, rd) = work.residuals(phase_eps);
        let report = AlignmentReport {
            residual_infidelity: if two_stage { rv.max(rd) } else { rv },
            residual_v: rv,
            residual_diag: rd,
            iterations: iteration,
            evaluations,
            final_compensator: work.compensator,
        };
        if report.residual_infidelity <= cfg.residual_tolerance {
            return Ok(report);
        }
        last = Some(report);
    }
    let last = last.expect("at least one iteration");
    Err(CalibrationError::ConvergenceFailure { residual: last.residual_infidelity, iterations: last.iterations })
}

/// Full procedure: `VAlign` over the waveplates, then `DiagAlign` over the
/// LCR. On success the receiver frame maps V to V and the source diagonal
/// state to D.
pub fn align_polarization(
    channel: &PolarizationChannelState,
    phase_eps: f64,
    cfg: &AlignmentConfig,
) -> Result<AlignmentReport, CalibrationError> {
    align(channel, phase_eps, cfg, true)
}

/// `VAlign` only. Convergence is judged on the V residual; the diagonal
/// residual is reported but left to chance.
pub fn align_polarization_single_stage(
    channel: &PolarizationChannelState,
    phase_eps: f64,
    cfg: &AlignmentConfig,
) -> Result<AlignmentReport, CalibrationError> {
    align(channel, phase_eps, cfg, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity() -> PolarizationChannelState {
        PolarizationChannelState::new(Jones::IDENTITY)
    }

    #[test]
    fn projection_examples() {
        let ch = identity();
        let v = AlignmentSignal::v_align(1.0);
        assert!(singles_rate_for_projection(&v, &ch, &Projection::H) < 1e-30);
        assert!((singles_rate_for_projection(&v, &ch, &Projection::V) - 1.0).abs() < 1e-15);
        let rotated = PolarizationChannelState::new(Jones::rotation(core::f64::consts::FRAC_PI_2));
        assert!((singles_rate_for_projection(&v, &rotated, &Projection::H) - 1.0).abs() < 1e-15);
        let scaled = AlignmentSignal::v_align(2.5);
        assert!((singles_rate_for_projection(&scaled, &ch, &Projection::V) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn identity_fiber_converges_immediately() {
        let r = align_polarization(&identity(), 0.0, &AlignmentConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.residual_infidelity < 1e-6);
        assert!(r.final_compensator.qwp_deg.abs() < 1e-2);
        assert!(r.final_compensator.hwp_deg.abs() < 1e-2);
    }

    #[test]
    fn random_fibers_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = AlignmentConfig::default();
        for _ in 0..20 {
            let ch = PolarizationChannelState::new(Jones::random_su2(&mut rng));
            let phase = rng.random::<f64>() * core::f64::consts::TAU;
            let r = align_polarization(&ch, phase, &cfg).unwrap();
            assert!(r.residual_v < 1e-3 && r.residual_diag < 1e-3, "{r:?}");
            let mut done = ch.clone();
            done.compensator = r.final_compensator;
            assert!(done.total().unitarity_error() < 1e-10);
            // Compare against the analytic inverse up to a diagonal phase.
            let u = done.total();
            assert!(u.0[0][1].norm() < 0.05 && u.0[1][0].norm() < 0.05);
        }
    }

    #[test]
    fn single_stage_leaves_phase_family_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = AlignmentConfig::default();
        let ch = PolarizationChannelState::new(Jones::random_su2(&mut rng));
        let mut diag = [0.0; 8];
        for (i, d) in diag.iter_mut().enumerate() {
            let phase = i as f64 * core::f64::consts::TAU / 8.0;
            let r = align_polarization_single_stage(&ch, phase, &cfg).unwrap();
            assert!(r.residual_v < 1e-6);
            *d = r.residual_diag;
        }
        let spread = diag.iter().cloned().fold(0.0, f64::max) - diag.iter().cloned().fold(1.0, f64::min);
        assert!(spread > 0.5, "{diag:?}");
    }

    #[test]
    fn drift_degrades_alignment_and_keeps_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ch = PolarizationChannelState::new(Jones::random_su2(&mut rng));
        let r = align_polarization(&ch, 0.3, &AlignmentConfig::default()).unwrap();
        ch.compensator = r.final_compensator;
        ch.drift_rate = 0.05;
        for _ in 0..200 {
            ch.drift(1.0, &mut rng);
        }
        assert!(ch.fiber_unitary.unitarity_error() < 1e-10);
        let (rv, rd) = ch.residuals(0.3);
        assert!(rv.max(rd) > 1e-2);
    }

    #[test]
    fn zero_drift_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ch = identity();
        ch.drift(10.0, &mut rng);
        assert_eq!(ch.fiber_unitary, Jones::IDENTITY);
    }
}
