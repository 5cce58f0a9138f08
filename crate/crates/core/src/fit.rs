//! Dense Levenberg-Marquardt least squares and the handful of model fits the
//! experiment drivers need (Gaussian decay, exponential decay, sinusoid).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost reduction below which the solver stops.
    pub ftol: f64,
    /// Relative step size below which the solver stops.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    /// Euclidean norm of the residual vector at `params`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// One-sigma parameter uncertainties from the scaled covariance `s²(JᵀJ)⁻¹`.
    pub std_errors: Option<Vec<f64>>,
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-7 * x[j].abs().max(1e-8);
        xp[j] = x[j] + h;
        let rp = f(&xp);
        xp[j] = x[j] - h;
        let rm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `Σ r_i(x)²` starting from `x0`. Jacobians are central differences.
pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], opts: &LmOptions) -> LmSolution
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x);
    let mut c = cost(&r);
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if !c.is_finite() {
            break;
        }
        let jac = jacobian(&residuals, &x, &r);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() == 0.0 {
            converged = true;
            break;
        }

        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let rel_drop = (c - ct) / c.max(1e-300);
                let step_norm = step.norm();
                let x_norm = DVector::from_column_slice(&x).norm();
                x = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel_drop < opts.ftol || step_norm <= opts.xtol * (x_norm + opts.xtol) {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // no downhill step at any damping: stationary to working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let std_errors = {
        let m = r.len();
        if m > n {
            let jac = jacobian(&residuals, &x, &r);
            let jtj = jac.transpose() * &jac;
            jtj.try_inverse().map(|inv| {
                let s2 = c / (m - n) as f64;
                (0..n).map(|k| (inv[(k, k)] * s2).abs().sqrt()).collect()
            })
        } else {
            None
        }
    };

    LmSolution {
        params: x,
        residual_norm: c.sqrt(),
        iterations,
        converged,
        std_errors,
    }
}

/// `y = offset + amplitude · exp(−(t/time)²)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianDecay {
    pub amplitude: f64,
    pub offset: f64,
    pub time: f64,
}

pub fn fit_gaussian_decay(t: &[f64], y: &[f64]) -> Result<GaussianDecay> {
    check_lengths(t, y, 3)?;
    let y_end = *y.last().unwrap_or(&0.0);
    let a0 = y[0] - y_end;
    // first crossing of the 1/e level
    let target = y_end + a0 / std::f64::consts::E;
    let t0 = t
        .iter()
        .zip(y)
        .find(|(_, &v)| (v - target) * a0.signum() <= 0.0)
        .map(|(&tt, _)| tt)
        .unwrap_or(t[t.len() / 2])
        .max(t[1] - t[0]);
    let model = |p: &[f64], tt: f64| p[1] + p[0] * (-(tt / p[2]).powi(2)).exp();
    let sol = levenberg_marquardt(
        |p| t.iter().zip(y).map(|(&tt, &yy)| model(p, tt) - yy).collect(),
        &[a0, y_end, t0],
        &LmOptions::default(),
    );
    Ok(GaussianDecay {
        amplitude: sol.params[0],
        offset: sol.params[1],
        time: sol.params[2].abs(),
    })
}

/// `y = a · p^n + b`.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialDecay {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub p_std: f64,
    pub residual_norm: f64,
}

/// Fits `y = a·p^n + b`. When `fixed_b` is given the asymptote is held.
pub fn fit_exponential_decay(n: &[f64], y: &[f64], fixed_b: Option<f64>) -> Result<ExponentialDecay> {
    check_lengths(n, y, if fixed_b.is_some() { 2 } else { 3 })?;
    let b0 = fixed_b.unwrap_or(0.5);
    let a0 = (y[0] - b0).max(1e-3);
    // log-linear estimate of p from the first and last points
    let (n0, n1) = (n[0], *n.last().unwrap());
    let (y0, y1) = (y[0] - b0, *y.last().unwrap() - b0);
    let p0 = if y0 > 0.0 && y1 > 0.0 && n1 > n0 {
        ((y1 / y0).ln() / (n1 - n0)).exp().clamp(0.5, 0.999_999)
    } else {
        0.99
    };
    let sol = match fixed_b {
        Some(b) => {
            let s = levenberg_marquardt(
                |p| n.iter().zip(y).map(|(&k, &v)| p[0] * p[1].powf(k) + b - v).collect(),
                &[a0, p0],
                &LmOptions::default(),
            );
            let std = s.std_errors.as_ref().map(|e| e[1]).unwrap_or(f64::NAN);
            ExponentialDecay {
                a: s.params[0],
                b,
                p: s.params[1],
                p_std: std,
                residual_norm: s.residual_norm,
            }
        }
        None => {
            let s = levenberg_marquardt(
                |p| n.iter().zip(y).map(|(&k, &v)| p[0] * p[2].powf(k) + p[1] - v).collect(),
                &[a0, b0, p0],
                &LmOptions::default(),
            );
            let std = s.std_errors.as_ref().map(|e| e[2]).unwrap_or(f64::NAN);
            ExponentialDecay {
                a: s.params[0],
                b: s.params[1],
                p: s.params[2],
                p_std: std,
                residual_norm: s.residual_norm,
            }
        }
    };
    if !sol.p.is_finite() {
        return Err(Error::FitFailed("exponential decay fit diverged".into()));
    }
    Ok(sol)
}

/// `y = offset + amplitude · cos(2π f t + phase)`.
#[derive(Debug, Clone, Copy)]
pub struct Sinusoid {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// Linear least squares for offset and quadratures at a fixed frequency.
fn sinusoid_linear(t: &[f64], y: &[f64], f: f64) -> (f64, [f64; 3]) {
    let m = t.len();
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => (2.0 * PI * f * t[i]).cos(),
        _ => (2.0 * PI * f * t[i]).sin(),
    });
    let b = DVector::from_column_slice(y);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * &b;
    match ata.lu().solve(&atb) {
        Some(x) => {
            let res = (&a * &x - &b).norm_squared();
            (res, [x[0], x[1], x[2]])
        }
        None => (f64::INFINITY, [0.0; 3]),
    }
}

/// Fits a single sinusoid. The frequency is seeded by a grid search between
/// `f_min` and `f_max` and refined by Levenberg-Marquardt.
pub fn fit_sinusoid(t: &[f64], y: &[f64], f_min: f64, f_max: f64) -> Result<Sinusoid> {
    check_lengths(t, y, 4)?;
    let span = t.last().unwrap() - t[0];
    let n_grid = (((f_max - f_min) * span * 20.0).ceil() as usize).clamp(50, 20_000);
    let mut best = (f64::INFINITY, f_min);
    for k in 0..=n_grid {
        let f = f_min + (f_max - f_min) * k as f64 / n_grid as f64;
        let (res, _) = sinusoid_linear(t, y, f);
        if res < best.0 {
            best = (res, f);
        }
    }
    let (_, lin) = sinusoid_linear(t, y, best.1);
    let amp0 = lin[1].hypot(lin[2]);
    let ph0 = (-lin[2]).atan2(lin[1]);
    let sol = levenberg_marquardt(
        |p| {
            t.iter()
                .zip(y)
                .map(|(&tt, &v)| p[0] + p[1] * (2.0 * PI * p[2] * tt + p[3]).cos() - v)
                .collect()
        },
        &[lin[0], amp0, best.1, ph0],
        &LmOptions::default(),
    );
    let (mut amp, mut phase) = (sol.params[1], sol.params[3]);
    if amp < 0.0 {
        amp = -amp;
        phase += PI;
    }
    Ok(Sinusoid {
        offset: sol.params[0],
        amplitude: amp,
        frequency: sol.params[2],
        phase: crate::qcore::wrap_phase_symmetric(phase),
    })
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::FitFailed(format!(
            "abscissa and data lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(Error::FitFailed(format!("need at least {min} points, got {}", x.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let sol = levenberg_marquardt(
            |p| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]],
            &[-1.2, 1.0],
            &LmOptions::default(),
        );
        assert!(sol.converged);
        assert!((sol.params[0] - 1.0).abs() < 1e-8);
        assert!((sol.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_decay_recovered() {
        let t: Vec<f64> = (0..60).map(|k| k as f64 * 50e-9).collect();
        let y: Vec<f64> = t.iter().map(|&x| 0.5 + 0.45 * (-(x / 1.2e-6f64).powi(2)).exp()).collect();
        let fit = fit_gaussian_decay(&t, &y).unwrap();
        assert!((fit.time - 1.2e-6).abs() < 1e-12);
        assert!((fit.amplitude - 0.45).abs() < 1e-9);
    }

    #[test]
    fn exponential_decay_recovered() {
        let n: Vec<f64> = [1.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0].to_vec();
        let y: Vec<f64> = n.iter().map(|&k| 0.45 * 0.99f64.powf(k) + 0.52).collect();
        let fit = fit_exponential_decay(&n, &y, None).unwrap();
        assert!((fit.p - 0.99).abs() < 1e-9);
        assert!((fit.b - 0.52).abs() < 1e-8);
    }

    #[test]
    fn sinusoid_recovered() {
        let t: Vec<f64> = (0..80).map(|k| k as f64 * 5e-9).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&x| 0.5 + 0.4 * (2.0 * PI * 4.8e6 * x + 0.3).cos())
            .collect();
        let fit = fit_sinusoid(&t, &y, 1e6, 20e6).unwrap();
        assert!((fit.frequency - 4.8e6).abs() < 1.0);
        assert!((fit.amplitude - 0.4).abs() < 1e-8);
        assert!((fit.phase - 0.3).abs() < 1e-8);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(fit_gaussian_decay(&[0.0, 1.0], &[1.0, 0.5]).is_err());
    }
}
