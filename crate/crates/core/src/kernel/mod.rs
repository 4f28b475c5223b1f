//! Gaussian censoring mathematics.
//!
//! Everything here is a pure function of its arguments. `z`, `x` and `y`
//! arguments are scalar linear responses `phi^T theta` for some parameter.
//! Branches for an absent threshold (`l = -inf` or `u = +inf`) are dropped
//! analytically instead of being evaluated as limits.

mod normal;
mod thresholds;

pub use normal::NoiseModel;
pub use thresholds::{ThresholdSchedule, Thresholds};

use crate::error::{Error, Result};

/// One saturated output together with its censoring indicators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredObservation {
    pub y: f64,
    /// `y == L`
    pub delta: bool,
    /// `y == U`
    pub delta_bar: bool,
}

impl CensoredObservation {
    /// Classifies a raw output against the thresholds it was produced with.
    pub fn classify(y: f64, th: &Thresholds) -> Result<Self> {
        let (delta, delta_bar) = censor_indicators(y, th)?;
        Ok(Self { y, delta, delta_bar })
    }

    #[inline]
    pub fn is_interior(&self) -> bool {
        !self.delta && !self.delta_bar
    }
}

/// The saturation map `S`: `L` below `l`, identity on `[l, u]`, `U` above `u`.
#[inline]
pub fn saturate(x: f64, th: &Thresholds) -> f64 {
    if x < th.l {
        th.lower
    } else if x > th.u {
        th.upper
    } else {
        x
    }
}

/// Censoring indicators `(delta, delta_bar)` by exact comparison with `L`, `U`.
///
/// Outputs outside `[l, u]` that match neither value cannot come from the
/// saturation map and are rejected.
pub fn censor_indicators(y: f64, th: &Thresholds) -> Result<(bool, bool)> {
    if !y.is_finite() {
        return Err(Error::invalid("observation", format!("non-finite output {y}")));
    }
    let delta = y == th.lower;
    let delta_bar = y == th.upper;
    if !delta && !delta_bar && (y < th.l || y > th.u) {
        return Err(Error::InconsistentObservation {
            y,
            l: th.l,
            u: th.u,
            lower: th.lower,
            upper: th.upper,
        });
    }
    Ok((delta, delta_bar))
}

/// Per-observation score factor evaluated at the response `z`: the
/// log-likelihood derivative with respect to the linear response.
pub fn score_h(obs: &CensoredObservation, z: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    if obs.delta && th.has_lower() {
        -noise.lower_mills(th.l - z)
    } else if obs.delta_bar && th.has_upper() {
        noise.upper_mills(th.u - z)
    } else {
        (obs.y - z) / noise.variance()
    }
}

/// `(F(b) - F(a), integral_a^b s f(s) ds)` for `a <= b`; either end may be infinite.
pub fn truncated_partial_moments(a: f64, b: f64, noise: &NoiseModel) -> (f64, f64) {
    debug_assert!(a <= b, "truncated_partial_moments: a={a} > b={b}");
    if a >= b {
        return (0.0, 0.0);
    }
    let p = noise.mass(a, b);
    let m1 = noise.variance() * (noise.pdf(a) - noise.pdf(b));
    (p, m1)
}

/// Conditional mean of the score: `G(y, x) = E[score_h(obs, y)]` when the
/// true response is `x`. Strictly increasing in `x`, zero at `x = y`.
pub fn regression_g(y: f64, x: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    let var = noise.variance();
    let a = th.l - x;
    let b = th.u - x;
    let (p, m1) = truncated_partial_moments(a, b, noise);
    // (1/sigma^2) integral_l^u (t - y) dF(t - x)
    let mut g = ((x - y) * p + m1) / var;
    if th.has_lower() {
        g -= noise.lower_mills(th.l - y) * noise.cdf(a);
    }
    if th.has_upper() {
        g += noise.upper_mills(th.u - y) * noise.sf(b);
    }
    g
}

/// `dG(y, x)/dx`.
pub fn regression_g_dx(y: f64, x: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    SlopeProfile::new(y, th, noise).eval(x)
}

/// Fisher information weight of one observation at true response `x`.
pub fn fisher_weight(x: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    let var = noise.variance();
    let a = th.l - x;
    let b = th.u - x;
    let (p, _) = truncated_partial_moments(a, b, noise);
    // integral_a^b s^2 f(s) / sigma^4 ds = (p - (b f(b) - a f(a))) / sigma^2
    let mut edge = 0.0;
    let mut lambda = 0.0;
    if th.has_lower() {
        let fa = noise.pdf(a);
        edge += a * fa;
        lambda += fa * noise.lower_mills(a);
    }
    if th.has_upper() {
        let fb = noise.pdf(b);
        edge -= b * fb;
        lambda += fb * noise.upper_mills(b);
    }
    if a < b {
        lambda += (p + edge) / var;
    }
    lambda
}

/// `dG(y, .)/dx` with the `y`-dependent coefficients evaluated once:
///
/// `c_l f(l - x) + c_u f(u - x) + (F(u - x) - F(l - x)) / sigma^2`
///
/// with `c_l = f(l-y)/F(l-y) + (l-y)/sigma^2 >= 0` and
/// `c_u = f(u-y)/(1-F(u-y)) - (u-y)/sigma^2 >= 0`.
#[derive(Debug, Clone, Copy)]
pub struct SlopeProfile {
    l: f64,
    u: f64,
    c_l: f64,
    c_u: f64,
    noise: NoiseModel,
}

impl SlopeProfile {
    pub fn new(y: f64, th: &Thresholds, noise: &NoiseModel) -> Self {
        let var = noise.variance();
        let c_l = if th.has_lower() {
            (noise.lower_mills(th.l - y) + (th.l - y) / var).max(0.0)
        } else {
            0.0
        };
        let c_u = if th.has_upper() {
            (noise.upper_mills(th.u - y) - (th.u - y) / var).max(0.0)
        } else {
            0.0
        };
        Self {
            l: th.l,
            u: th.u,
            c_l,
            c_u,
            noise: *noise,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = &self.noise;
        let mut v = 0.0;
        if self.l.is_finite() {
            v += self.c_l * n.pdf(self.l - x);
        }
        if self.u.is_finite() {
            v += self.c_u * n.pdf(self.u - x);
        }
        if self.l < self.u {
            v += n.mass(self.l - x, self.u - x) / n.variance();
        }
        v
    }

    fn band_mass(&self, x: f64) -> f64 {
        if self.l < self.u {
            self.noise.mass(self.l - x, self.u - x) / self.noise.variance()
        } else {
            0.0
        }
    }
}

/// Extremes of `dG(y, x)/dx` over `x` in `[-xmax, xmax]`.
pub fn g_dx_bounds(y: f64, xmax: f64, th: &Thresholds, noise: &NoiseModel) -> (f64, f64) {
    g_dx_range(y, -xmax, xmax, th, noise)
}

/// Extremes of `dG(y, x)/dx` over `x` in `[lo, hi]`.
///
/// The slope is increasing for `x < l` and decreasing for `x > u`, so
/// interior extrema can only sit in `[l, u]`. That band is scanned on a grid
/// with spacing at most `sigma / 2` (capped at 256 points) and the best grid
/// point is refined by golden-section search to `1e-8` in `x`.
pub fn g_dx_range(y: f64, lo: f64, hi: f64, th: &Thresholds, noise: &NoiseModel) -> (f64, f64) {
    let profile = SlopeProfile::new(y, th, noise);
    (slope_min(&profile, lo, hi, th, noise), slope_max(&profile, lo, hi, th, noise))
}

/// Minimum of `dG(y, x)/dx` over `x` in `[lo, hi]`.
pub fn g_dx_min(y: f64, lo: f64, hi: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    slope_min(&SlopeProfile::new(y, th, noise), lo, hi, th, noise)
}

/// Maximum of `dG(y, x)/dx` over `x` in `[lo, hi]`.
pub fn g_dx_max(y: f64, lo: f64, hi: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    slope_max(&SlopeProfile::new(y, th, noise), lo, hi, th, noise)
}

fn slope_min(profile: &SlopeProfile, lo: f64, hi: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    debug_assert!(lo <= hi);
    if !th.has_lower() && !th.has_upper() {
        return 1.0 / noise.variance();
    }
    let edge_min = profile.eval(lo).min(profile.eval(hi));
    let band_lo = lo.max(th.l);
    let band_hi = hi.min(th.u);
    if band_lo > band_hi {
        return edge_min;
    }
    // Inside the band the slope is at least the band mass, which is smallest at
    // a band end; if an outer end already undercuts that, it is the minimum.
    let band_floor = profile.band_mass(band_lo).min(profile.band_mass(band_hi));
    if edge_min <= band_floor {
        edge_min
    } else {
        edge_min.min(extremum(profile, band_lo, band_hi, noise.sigma(), Extremum::Min))
    }
}

fn slope_max(profile: &SlopeProfile, lo: f64, hi: f64, th: &Thresholds, noise: &NoiseModel) -> f64 {
    debug_assert!(lo <= hi);
    if !th.has_lower() && !th.has_upper() {
        return 1.0 / noise.variance();
    }
    let edge_max = profile.eval(lo).max(profile.eval(hi));
    let band_lo = lo.max(th.l);
    let band_hi = hi.min(th.u);
    if band_lo > band_hi {
        return edge_max;
    }
    edge_max.max(extremum(profile, band_lo, band_hi, noise.sigma(), Extremum::Max))
}

#[derive(Clone, Copy, PartialEq)]
enum Extremum {
    Min,
    Max,
}

fn extremum(p: &SlopeProfile, a: f64, b: f64, sigma: f64, kind: Extremum) -> f64 {
    let better = |u: f64, v: f64| match kind {
        Extremum::Min => u < v,
        Extremum::Max => u > v,
    };
    if b - a <= 1e-8 {
        let (fa, fb) = (p.eval(a), p.eval(b));
        return if better(fa, fb) { fa } else { fb };
    }
    let intervals = (((b - a) / (0.5 * sigma)).ceil() as usize).clamp(2, 255);
    let step = (b - a) / intervals as f64;
    let mut best_i = 0;
    let mut best = p.eval(a);
    for i in 1..=intervals {
        let x = if i == intervals { b } else { a + step * i as f64 };
        let v = p.eval(x);
        if better(v, best) {
            best = v;
            best_i = i;
        }
    }
    let left = a + step * best_i.saturating_sub(1) as f64;
    let right = (a + step * (best_i + 1) as f64).min(b);
    let refined = golden_section(p, left, right, kind);
    if better(refined, best) {
        refined
    } else {
        best
    }
}

fn golden_section(p: &SlopeProfile, mut a: f64, mut b: f64, kind: Extremum) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let sign = if kind == Extremum::Max { -1.0 } else { 1.0 };
    let f = |x: f64| sign * p.eval(x);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > 1e-8 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    sign * fc.min(fd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sec5() -> Thresholds {
        Thresholds::clipped(0.0, 15.0).unwrap()
    }

    #[test]
    fn saturate_branches() {
        let th = sec5();
        assert_eq!(saturate(-3.0, &th), 0.0);
        assert_eq!(saturate(7.0, &th), 7.0);
        assert_eq!(saturate(20.0, &th), 15.0);
    }

    #[test]
    fn indicators() {
        let th = sec5();
        assert_eq!(censor_indicators(0.0, &th).unwrap(), (true, false));
        assert_eq!(censor_indicators(15.0, &th).unwrap(), (false, true));
        assert_eq!(censor_indicators(7.2, &th).unwrap(), (false, false));
        let th = Thresholds::new(0.0, 10.0, -1.0, 11.0).unwrap();
        assert!(matches!(
            censor_indicators(-0.5, &th),
            Err(Error::InconsistentObservation { .. })
        ));
        assert!(censor_indicators(10.5, &th).is_err());
        assert!(censor_indicators(f64::NAN, &th).is_err());
    }

    #[test]
    fn score_branches() {
        let noise = NoiseModel::standard();
        let th = Thresholds::clipped(0.0, 0.0 + 1.0).unwrap();
        let interior = CensoredObservation { y: 1.0, delta: false, delta_bar: false };
        let wide = Thresholds::clipped(-5.0, 5.0).unwrap();
        assert!((score_h(&interior, 0.5, &wide, &noise) - 0.5).abs() < 1e-15);

        let low = CensoredObservation { y: 0.0, delta: true, delta_bar: false };
        let expected = -2.0 * 0.398_942_280_401_432_7;
        assert!((score_h(&low, 0.0, &th, &noise) - expected).abs() < 1e-12);

        let th_up = Thresholds::new(-1.0, 0.0, -1.0, 0.0).unwrap();
        let high = CensoredObservation { y: 0.0, delta: false, delta_bar: true };
        assert!((score_h(&high, 0.0, &th_up, &noise) + expected).abs() < 1e-12);
    }

    #[test]
    fn partial_moments_closed_forms() {
        let n = NoiseModel::standard();
        let (p, m1) = truncated_partial_moments(f64::NEG_INFINITY, f64::INFINITY, &n);
        assert_eq!((p, m1), (1.0, 0.0));
        let (p, m1) = truncated_partial_moments(0.0, f64::INFINITY, &n);
        assert!((p - 0.5).abs() < 1e-15);
        assert!((m1 - 0.398_942_280_401_432_7).abs() < 1e-15);
        let (p, m1) = truncated_partial_moments(-1.0, 1.0, &n);
        assert!((p - 0.682_689_492_137_086).abs() < 1e-14);
        assert_eq!(m1, 0.0);
    }

    #[test]
    fn g_vanishes_on_diagonal() {
        let noise = NoiseModel::new(1.3).unwrap();
        for th in [sec5(), Thresholds::uncensored(), Thresholds::binary(0.0).unwrap()] {
            for &y in &[-4.0, -0.3, 0.0, 2.5, 14.0, 30.0] {
                assert!(regression_g(y, y, &th, &noise).abs() < 1e-12, "{th:?} y={y}");
            }
        }
    }

    #[test]
    fn uncensored_limits() {
        let noise = NoiseModel::new(2.0).unwrap();
        let th = Thresholds::uncensored();
        for &(y, x) in &[(0.0, 1.0), (-3.0, 2.0), (5.0, 5.5)] {
            assert!((regression_g(y, x, &th, &noise) - (x - y) / 4.0).abs() < 1e-14);
            assert!((regression_g_dx(y, x, &th, &noise) - 0.25).abs() < 1e-15);
        }
        assert!((fisher_weight(0.7, &th, &noise) - 0.25).abs() < 1e-15);
        assert_eq!(g_dx_bounds(1.0, 10.0, &th, &noise), (0.25, 0.25));
    }

    #[test]
    fn binary_weight() {
        let noise = NoiseModel::standard();
        let th = Thresholds::binary(0.3).unwrap();
        for &x in &[-2.0, 0.0, 0.3, 1.7] {
            let f = noise.pdf(0.3 - x);
            let cdf = noise.cdf(0.3 - x);
            let expected = f * f * (1.0 / cdf + 1.0 / (1.0 - cdf));
            assert!((fisher_weight(x, &th, &noise) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn fisher_weight_is_slope_on_diagonal() {
        let noise = NoiseModel::new(0.8).unwrap();
        for th in [sec5(), Thresholds::binary(0.0).unwrap(), Thresholds::clipped(-1.0, 2.0).unwrap()] {
            for i in 0..50 {
                let x = -6.0 + 0.47 * i as f64;
                let a = fisher_weight(x, &th, &noise);
                let b = regression_g_dx(x, x, &th, &noise);
                assert!((a - b).abs() < 1e-10, "{th:?} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn slope_bounds_match_dense_scan() {
        let noise = NoiseModel::standard();
        let th = sec5();
        for &(y, xmax) in &[(0.0, 2.0), (3.0, 20.0), (-1.0, 40.0), (14.0, 5.0)] {
            let (lo, hi) = g_dx_bounds(y, xmax, &th, &noise);
            let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..=10_000 {
                let x = -xmax + 2.0 * xmax * i as f64 / 10_000.0;
                let v = regression_g_dx(y, x, &th, &noise);
                smin = smin.min(v);
                smax = smax.max(v);
            }
            assert!(lo <= smin + 1e-12 && lo > smin - 1e-6, "min y={y}: {lo} vs {smin}");
            assert!(hi >= smax - 1e-12 && hi < smax + 1e-6, "max y={y}: {hi} vs {smax}");
        }
    }
}
