use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standardized arguments below this use the continued fraction for the
/// Mills ratio instead of dividing density by distribution function.
const MILLS_SWITCH: f64 = -5.0;

/// Zero-mean Gaussian noise `N(0, sigma^2)`.
///
/// `pdf`/`cdf` are the density `f` and distribution `F` of the noise itself
/// (not standardized), so `f'(x) = -(x / sigma^2) f(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
    inv_sigma: f64,
    variance: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("noise", format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(Self {
            sigma,
            inv_sigma: 1.0 / sigma,
            variance: sigma * sigma,
        })
    }

    /// Unit-variance noise.
    pub fn standard() -> Self {
        Self {
            sigma: 1.0,
            inv_sigma: 1.0,
            variance: 1.0,
        }
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.variance
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        let z = x * self.inv_sigma;
        INV_SQRT_2PI * (-0.5 * z * z).exp() * self.inv_sigma
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        0.5 * libm::erfc(-x * self.inv_sigma * FRAC_1_SQRT_2)
    }

    /// Survival function `1 - F(x)`, accurate in the upper tail.
    #[inline]
    pub fn sf(&self, x: f64) -> f64 {
        0.5 * libm::erfc(x * self.inv_sigma * FRAC_1_SQRT_2)
    }

    /// `F(b) - F(a)` for `a <= b`, evaluated on whichever tail keeps precision.
    #[inline]
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if a > 0.0 {
            self.sf(a) - self.sf(b)
        } else {
            self.cdf(b) - self.cdf(a)
        }
    }

    /// Lower Mills ratio `f(a) / F(a)`; finite for every finite `a`.
    #[inline]
    pub fn lower_mills(&self, a: f64) -> f64 {
        standard_lower_mills(a * self.inv_sigma) * self.inv_sigma
    }

    /// Upper Mills ratio `f(a) / (1 - F(a))`.
    #[inline]
    pub fn upper_mills(&self, a: f64) -> f64 {
        self.lower_mills(-a)
    }

    /// Log density, used by likelihood checks.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = x * self.inv_sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }
}

/// `phi(z) / Phi(z)` for the standard normal.
pub(crate) fn standard_lower_mills(z: f64) -> f64 {
    if z >= MILLS_SWITCH {
        let cdf = 0.5 * libm::erfc(-z * FRAC_1_SQRT_2);
        INV_SQRT_2PI * (-0.5 * z * z).exp() / cdf
    } else if z == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        inverse_tail_mills(-z)
    }
}

/// Reciprocal of the tail Mills ratio `(1 - Phi(t)) / phi(t)` for `t >= 5`,
/// from the continued fraction `t + 1/(t + 2/(t + 3/(t + ...)))`
/// evaluated with the modified Lentz method.
fn inverse_tail_mills(t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = t;
    let mut c = f;
    let mut d = 0.0;
    for i in 1..500 {
        let a = i as f64;
        d = t + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = t + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sigma() {
        assert!(NoiseModel::new(0.0).is_err());
        assert!(NoiseModel::new(-1.0).is_err());
        assert!(NoiseModel::new(f64::NAN).is_err());
        assert!(NoiseModel::new(f64::INFINITY).is_err());
    }

    #[test]
    fn density_derivative_identity() {
        let noise = NoiseModel::new(1.7).unwrap();
        for &x in &[-3.0, -0.4, 0.0, 1.2, 4.5] {
            let h = 1e-5;
            let fd = (noise.pdf(x + h) - noise.pdf(x - h)) / (2.0 * h);
            let exact = -(x / noise.variance()) * noise.pdf(x);
            assert!((fd - exact).abs() < 1e-9, "x={x}: {fd} vs {exact}");
        }
    }

    #[test]
    fn cdf_values() {
        let n = NoiseModel::standard();
        assert_eq!(n.cdf(0.0), 0.5);
        assert!((n.cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((n.mass(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        // upper tail keeps relative precision
        assert!((n.sf(10.0) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mills_ratio_is_continuous_across_switch() {
        let z = MILLS_SWITCH;
        let direct = INV_SQRT_2PI * (-0.5 * z * z).exp() / (0.5 * libm::erfc(-z * FRAC_1_SQRT_2));
        let fraction = inverse_tail_mills(-z);
        assert!((direct / fraction - 1.0).abs() < 1e-13, "{direct} vs {fraction}");
    }

    #[test]
    fn mills_ratio_deep_tail() {
        // phi(z)/Phi(z) ~ -z - 1/z + 2/z^3 for z -> -inf
        for &z in &[-40.0, -100.0, -1e4] {
            let asym = -z - 1.0 / z + 2.0 / (z * z * z);
            let got = standard_lower_mills(z);
            assert!(got.is_finite());
            assert!((got / asym - 1.0).abs() < 1e-6, "z={z}: {got} vs {asym}");
        }
        // naive division breaks down at -38 sigma, the ratio does not
        let n = NoiseModel::new(2.0).unwrap();
        assert!(n.lower_mills(-80.0).is_finite());
        assert!((n.upper_mills(80.0) - n.lower_mills(-80.0)).abs() == 0.0);
    }

    #[test]
    fn mills_ratio_at_zero() {
        let n = NoiseModel::standard();
        assert!((n.lower_mills(0.0) - 2.0 * INV_SQRT_2PI).abs() < 1e-15);
    }
}
