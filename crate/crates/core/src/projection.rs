//! Projection onto the centered Euclidean ball `{y : |y| <= radius}` where
//! closeness is measured in the weighted norm `|v|_A = sqrt(v^T A v)`.
//!
//! Outside the ball the minimizer satisfies `(A + mu I) y = A x` with
//! `|y| = radius` and `mu > 0`. In the eigenbasis of `A` this is the scalar
//! secular equation `sum_i (a_i c_i / (a_i + mu))^2 = radius^2`, solved for
//! `mu` by Newton's method on `1/|y(mu)| - 1/radius` safeguarded by bisection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Weighted norm `A` (symmetric positive definite) and ball radius.
#[derive(Debug, Clone)]
pub struct WeightedNorm {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    radius: f64,
}

/// Projected point and the multiplier of the ball constraint (zero when the
/// input was already feasible).
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: DVector<f64>,
    pub multiplier: f64,
}

impl WeightedNorm {
    /// Factorizes `a`, which must be symmetric positive definite.
    pub fn new(a: &DMatrix<f64>, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let eig = factor_spd(a, "weight matrix")?;
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            radius,
        })
    }

    /// Norm weighted by `p^{-1}`, built from the eigendecomposition of `p`
    /// so that the inverse is never formed.
    pub fn from_inverse(p: &DMatrix<f64>, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let eig = factor_spd(p, "gain matrix")?;
        Ok(Self {
            eigenvalues: eig.eigenvalues.map(|v| 1.0 / v),
            eigenvectors: eig.eigenvectors,
            radius,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Reassembles `A` (tests and diagnostics only).
    pub fn matrix(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }

    /// `|v|_A`.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        let c = self.eigenvectors.tr_mul(v);
        c.iter()
            .zip(self.eigenvalues.iter())
            .map(|(ci, ai)| ai * ci * ci)
            .sum::<f64>()
            .sqrt()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.project_with_multiplier(x).point
    }

    pub fn project_with_multiplier(&self, x: &DVector<f64>) -> Projection {
        if x.norm() <= self.radius {
            return Projection {
                point: x.clone(),
                multiplier: 0.0,
            };
        }
        let c = self.eigenvectors.tr_mul(x);
        let a = &self.eigenvalues;
        let radius = self.radius;
        let norm_at = |mu: f64| -> f64 {
            c.iter()
                .zip(a.iter())
                .map(|(ci, ai)| {
                    let t = ai * ci / (ai + mu);
                    t * t
                })
                .sum::<f64>()
                .sqrt()
        };

        // |y(mu)| is decreasing; |y(0)| = |x| > radius and
        // |y(a_max |x| / radius)| <= radius.
        let a_max = a.iter().cloned().fold(0.0, f64::max);
        let mut lo = 0.0;
        let mut hi = a_max * x.norm() / radius;
        let mut mu = hi.min(lo + (hi - lo) * 0.5);
        for _ in 0..200 {
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            for (ci, ai) in c.iter().zip(a.iter()) {
                let d = ai + mu;
                let t = ai * ci / d;
                s0 += t * t;
                s1 += t * t / d;
            }
            let ny = s0.sqrt();
            if ny > radius {
                lo = mu;
            } else {
                hi = mu;
            }
            // psi(mu) = 1/|y| - 1/radius, psi' = s1 / |y|^3
            let psi = 1.0 / ny - 1.0 / radius;
            let dpsi = s1 / (s0 * ny);
            let mut next = mu - psi / dpsi;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let converged = (next - mu).abs() <= 1e-12 * mu.abs().max(f64::MIN_POSITIVE)
                || (hi - lo) <= 1e-15 * hi;
            mu = next;
            if converged {
                break;
            }
        }
        // Land on the feasible side of the bracket.
        if norm_at(mu) > radius * (1.0 + 1e-13) {
            mu = hi;
        }
        let coeffs = DVector::from_iterator(
            c.len(),
            c.iter().zip(a.iter()).map(|(ci, ai)| ai * ci / (ai + mu)),
        );
        let mut point = &self.eigenvectors * coeffs;
        let n = point.norm();
        if n > radius {
            point *= radius / n;
        }
        Projection {
            point,
            multiplier: mu,
        }
    }
}

/// Projection used by the estimator recursions: `argmin_{|y| <= radius} |x - y|_{P^{-1}}`.
/// Only factorizes `p` when `x` lies outside the ball.
pub fn project_inverse_weighted(x: DVector<f64>, p: &DMatrix<f64>, radius: f64) -> Result<DVector<f64>> {
    if x.norm() <= radius {
        return Ok(x);
    }
    Ok(WeightedNorm::from_inverse(p, radius)?.project(&x))
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_finite() && radius > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("projection", format!("radius must be positive, got {radius}")))
    }
}

fn factor_spd(a: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Conditioning(format!("{what} must be square and non-empty")));
    }
    let scale = a.amax();
    if !scale.is_finite() {
        return Err(Error::Conditioning(format!("{what} has non-finite entries")));
    }
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::Conditioning(format!("{what} is not symmetric (asymmetry {asym:.3e})")));
    }
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Conditioning(format!(
            "{what} is not positive definite (smallest eigenvalue {min:.3e})"
        )));
    }
    Ok(eig)
}
