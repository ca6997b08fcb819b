//! 2x2 complex Jones matrices for polarization optics.
//!
//! States are column vectors in the (H, V) basis. Waveplate angles are the
//! fast-axis angle from horizontal, in degrees.

use core::ops::Mul;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type JonesVector = [Complex64; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jones(pub [[Complex64; 2]; 2]);

impl Jones {
    pub const IDENTITY: Jones = Jones([[ONE, ZERO], [ZERO, ONE]]);

    pub fn diag(a: Complex64, b: Complex64) -> Self {
        Jones([[a, ZERO], [ZERO, b]])
    }

    /// Rotation of the polarization frame by `theta` radians.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = libm::sincos(theta);
        Jones([[Complex64::new(c, 0.0), Complex64::new(-s, 0.0)], [Complex64::new(s, 0.0), Complex64::new(c, 0.0)]])
    }

    /// Linear retarder with retardance `gamma` and fast axis at `angle_deg`.
    pub fn retarder(gamma: f64, angle_deg: f64) -> Self {
        let theta = angle_deg.to_radians();
        let core = Jones::diag(Complex64::cis(-gamma / 2.0), Complex64::cis(gamma / 2.0));
        Jones::rotation(theta) * core * Jones::rotation(-theta)
    }

    pub fn qwp(angle_deg: f64) -> Self {
        Jones::retarder(core::f64::consts::FRAC_PI_2, angle_deg)
    }

    pub fn hwp(angle_deg: f64) -> Self {
        Jones::retarder(core::f64::consts::PI, angle_deg)
    }

    /// Liquid-crystal retarder with its axis horizontal: phase `phi` on V.
    pub fn lcr(phi: f64) -> Self {
        Jones::diag(ONE, Complex64::cis(phi))
    }

    pub fn dagger(&self) -> Self {
        let m = &self.0;
        Jones([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn apply(&self, v: &JonesVector) -> JonesVector {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// Frobenius norm of `U^dagger U - I`.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.dagger() * *self;
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { ONE } else { ZERO };
                acc += (p.0[i][j] - target).norm_sqr();
            }
        }
        libm::sqrt(acc)
    }

    /// Nearest unitary by Gram-Schmidt on the columns.
    pub fn renormalized(&self) -> Self {
        let m = &self.0;
        let mut c0 = [m[0][0], m[1][0]];
        let n0 = libm::sqrt(c0[0].norm_sqr() + c0[1].norm_sqr());
        c0 = [c0[0] / n0, c0[1] / n0];
        let mut c1 = [m[0][1], m[1][1]];
        let proj = c0[0].conj() * c1[0] + c0[1].conj() * c1[1];
        c1 = [c1[0] - proj * c0[0], c1[1] - proj * c0[1]];
        let n1 = libm::sqrt(c1[0].norm_sqr() + c1[1].norm_sqr());
        c1 = [c1[0] / n1, c1[1] / n1];
        Jones([[c0[0], c1[0]], [c0[1], c1[1]]])
    }

    /// Haar-random element of SU(2).
    pub fn random_su2(rng: &mut impl Rng) -> Self {
        let mut x = [0.0f64; 4];
        for v in &mut x {
            *v = rng.sample(StandardNormal);
        }
        let n = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
        let a = Complex64::new(x[0] / n, x[1] / n);
        let b = Complex64::new(x[2] / n, x[3] / n);
        Jones([[a, -b.conj()], [b, a.conj()]])
    }

    /// SU(2) rotation by `angle` radians about a uniformly random axis of
    /// the Poincare sphere.
    pub fn random_rotation(angle: f64, rng: &mut impl Rng) -> Self {
        let mut n = [0.0f64; 3];
        for v in &mut n {
            *v = rng.sample(StandardNormal);
        }
        let norm = libm::sqrt(n.iter().map(|v| v * v).sum::<f64>());
        let (s, c) = libm::sincos(angle / 2.0);
        let (nx, ny, nz) = (n[0] / norm, n[1] / norm, n[2] / norm);
        // exp(-i angle/2 n.sigma)
        Jones([
            [Complex64::new(c, -s * nz), Complex64::new(-s * ny, -s * nx)],
            [Complex64::new(s * ny, -s * nx), Complex64::new(c, s * nz)],
        ])
    }
}

impl Mul for Jones {
    type Output = Jones;

    fn mul(self, rhs: Jones) -> Jones {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[ZERO; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Jones(out)
    }
}

pub fn horizontal() -> JonesVector {
    [ONE, ZERO]
}

pub fn vertical() -> JonesVector {
    [ZERO, ONE]
}

/// `(|H> + e^{i phi}|V>)/sqrt(2)`.
pub fn diagonal(phi: f64) -> JonesVector {
    let r = core::f64::consts::FRAC_1_SQRT_2;
    [Complex64::new(r, 0.0), Complex64::cis(phi) * r]
}

pub fn inner(a: &JonesVector, b: &JonesVector) -> Complex64 {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

pub fn fidelity(target: &JonesVector, state: &JonesVector) -> f64 {
    inner(target, state).norm_sqr()
}
