//! Small derivative-free minimizers and a dense least-squares solver.

use alloc::vec;
use alloc::vec::Vec;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section search on `[lo, hi]`. Assumes `f` is unimodal there.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Minimum {
    let mut evaluations = 0;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    evaluations += 2;
    while (hi - lo) > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        evaluations += 1;
    }
    let (x, value) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Minimum { x, value, evaluations }
}

/// Coarse scan of `points` samples over `[lo, hi)` followed by golden-section
/// refinement in the bracket around the best sample. Handles periodic
/// objectives that are not unimodal over the full range.
pub fn scan_then_golden(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, points: usize, tol: f64) -> Minimum {
    let step = (hi - lo) / points as f64;
    let mut best = (lo, f(lo));
    for i in 1..points {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let refined = golden_section(&mut f, best.0 - step, best.0 + step, tol);
    let mut out = if refined.value <= best.1 {
        refined
    } else {
        Minimum { x: best.0, value: best.1, evaluations: refined.evaluations }
    };
    out.evaluations += points;
    out
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Returns `None` when singular.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            libm::fabs(a[i * n + col]).total_cmp(&libm::fabs(a[j * n + col]))
        })?;
        if libm::fabs(a[pivot * n + col]) < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Levenberg-Marquardt for weighted least squares.
///
/// `residuals(p, out)` fills `out` with weighted residuals. The Jacobian is
/// taken by central differences. Returns the final parameters and the sum of
/// squared residuals.
pub fn levenberg_marquardt(
    mut residuals: impl FnMut(&[f64], &mut [f64]),
    start: &[f64],
    n_residuals: usize,
    max_iter: usize,
) -> Option<(Vec<f64>, f64)> {
    let np = start.len();
    let mut p = start.to_vec();
    let mut r = vec![0.0; n_residuals];
    residuals(&p, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut jac = vec![0.0; n_residuals * np];
    let mut rp = vec![0.0; n_residuals];
    let mut rm = vec![0.0; n_residuals];

    for _ in 0..max_iter {
        for j in 0..np {
            let h = 1e-6 * libm::fmax(libm::fabs(p[j]), 1e-3);
            let mut q = p.clone();
            q[j] = p[j] + h;
            residuals(&q, &mut rp);
            q[j] = p[j] - h;
            residuals(&q, &mut rm);
            for i in 0..n_residuals {
                jac[i * np + j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let mut jtj = vec![0.0; np * np];
        let mut jtr = vec![0.0; np];
        for i in 0..n_residuals {
            for a in 0..np {
                jtr[a] -= jac[i * np + a] * r[i];
                for b in 0..np {
                    jtj[a * np + b] += jac[i * np + a] * jac[i * np + b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for a in 0..np {
                m[a * np + a] += lambda * libm::fmax(jtj[a * np + a], 1e-12);
            }
            let Some(step) = solve(m, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            residuals(&trial, &mut rp);
            let trial_cost: f64 = rp.iter().map(|v| v * v).sum();
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / libm::fmax(cost, 1e-300);
                p = trial;
                core::mem::swap(&mut r, &mut rp);
                cost = trial_cost;
                lambda = libm::fmax(lambda / 10.0, 1e-12);
                improved = true;
                if rel < 1e-14 {
                    return Some((p, cost));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cost.is_finite().then_some((p, cost))
}

pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let m = golden_section(|x| (x - 1.3) * (x - 1.3), -5.0, 5.0, 1e-9);
        assert!((m.x - 1.3).abs() < 1e-8);
    }

    #[test]
    fn scan_handles_periodic() {
        let m = scan_then_golden(|x| libm::cos(2.0 * x + 0.4), 0.0, core::f64::consts::PI, 24, 1e-10);
        assert!((m.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn solve_small_system() {
        let x = solve(vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn lm_fits_exponential() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * libm::exp(-0.7 * x)).collect();
        let (p, cost) = levenberg_marquardt(
            |p, out| {
                for (i, x) in xs.iter().enumerate() {
                    out[i] = p[0] * libm::exp(-p[1] * x) - ys[i];
                }
            },
            &[1.0, 0.2],
            xs.len(),
            200,
        )
        .unwrap();
        assert!(cost < 1e-16);
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] - 0.7).abs() < 1e-6);
    }
}
