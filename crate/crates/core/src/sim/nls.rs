//! Batch nonlinear least-squares comparator: minimizes the squared distance
//! between the outputs and their conditional mean under the censored model,
//! over the ball `|theta| <= radius`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernel::{truncated_partial_moments, NoiseModel, ThresholdSchedule, Thresholds};

/// `E[y | x]` and its derivative in `x`, where `x` is the linear response:
///
/// `E = L F(l-x) + U (1 - F(u-x)) + x (F(u-x) - F(l-x)) + sigma^2 (f(l-x) - f(u-x))`
/// `dE/dx = F(u-x) - F(l-x) + (l - L) f(l-x) + (U - u) f(u-x)`
pub fn conditional_mean(x: f64, th: &Thresholds, noise: &NoiseModel) -> (f64, f64) {
    let a = th.l - x;
    let b = th.u - x;
    let (p, m1) = truncated_partial_moments(a, b, noise);
    let mut e = x * p + m1;
    let mut de = p;
    if th.has_lower() {
        e += th.lower * noise.cdf(a);
        de += (th.l - th.lower) * noise.pdf(a);
    }
    if th.has_upper() {
        e += th.upper * noise.sf(b);
        de += (th.upper - th.u) * noise.pdf(b);
    }
    (e, de)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsSettings {
    pub max_iterations: usize,
    /// Stop when the gradient mapping `|theta - P(theta - grad)|` falls below this.
    pub tolerance: f64,
}

impl Default for NlsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlsFit {
    pub theta: DVector<f64>,
    pub iterations: usize,
    /// Norm of the gradient mapping at the returned point.
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Mean squared residual `(1/2n) sum (y_k - E_theta[y_k])^2` and its gradient.
pub fn nls_objective(
    theta: &DVector<f64>,
    phis: &[DVector<f64>],
    ys: &[f64],
    schedule: &ThresholdSchedule,
    noise: &NoiseModel,
) -> (f64, DVector<f64>) {
    let n = phis.len().max(1) as f64;
    let mut f = 0.0;
    let mut grad = DVector::zeros(theta.len());
    for (k, (phi, &y)) in phis.iter().zip(ys).enumerate() {
        let (e, de) = conditional_mean(phi.dot(theta), schedule.at(k), noise);
        let r = y - e;
        f += r * r;
        grad.axpy(-r * de, phi, 1.0);
    }
    (0.5 * f / n, grad / n)
}

fn project_ball(mut x: DVector<f64>, radius: f64) -> DVector<f64> {
    let n = x.norm();
    if n > radius {
        x *= radius / n;
    }
    x
}

/// Projected gradient descent with backtracking, started at `init`.
/// Returns the last iterate even if the tolerance was not met.
pub fn nls_fit(
    phis: &[DVector<f64>],
    ys: &[f64],
    schedule: &ThresholdSchedule,
    noise: &NoiseModel,
    init: &DVector<f64>,
    radius: f64,
    settings: &NlsSettings,
) -> NlsFit {
    let mut theta = project_ball(init.clone(), radius);
    let (mut f, mut grad) = nls_objective(&theta, phis, ys, schedule, noise);
    let mut step = 1.0;
    let mut gradient_norm = f64::INFINITY;
    for it in 0..settings.max_iterations {
        let mut accepted = None;
        for _ in 0..80 {
            let cand = project_ball(&theta - &grad * step, radius);
            let d = &cand - &theta;
            let (fc, gc) = nls_objective(&cand, phis, ys, schedule, noise);
            // Once the change in f is lost to rounding, estimate it from the
            // gradients instead (trapezoid rule, exact for quadratics).
            let change = if (fc - f).abs() <= 8.0 * f64::EPSILON * f.abs() {
                0.5 * (&grad + &gc).dot(&d)
            } else {
                fc - f
            };
            if change <= grad.dot(&d) + d.norm_squared() / (2.0 * step) {
                accepted = Some((cand, fc, gc, d));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc, _)) = accepted else {
            break;
        };
        gradient_norm = (&cand - project_ball(&cand - &gc, radius)).norm();
        theta = cand;
        f = fc;
        grad = gc;
        if gradient_norm <= settings.tolerance {
            return NlsFit {
                theta,
                iterations: it + 1,
                gradient_norm,
                converged: true,
            };
        }
        step *= 2.0;
    }
    NlsFit {
        theta,
        iterations: settings.max_iterations,
        gradient_norm,
        converged: false,
    }
}

/// [`nls_fit`] that reports non-convergence as an error.
pub fn nls_baseline(
    phis: &[DVector<f64>],
    ys: &[f64],
    schedule: &ThresholdSchedule,
    noise: &NoiseModel,
    init: &DVector<f64>,
    radius: f64,
    settings: &NlsSettings,
) -> Result<DVector<f64>> {
    if phis.len() != ys.len() {
        return Err(Error::invalid("NLS data", "regressor and output counts differ"));
    }
    let fit = nls_fit(phis, ys, schedule, noise, init, radius, settings);
    if fit.converged {
        Ok(fit.theta)
    } else {
        Err(Error::NoConvergence {
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
        })
    }
}
