//! Independent oracles shared by the integration tests: adaptive
//! Gauss-Kronrod quadrature and direct integral forms of the kernel
//! quantities.

#![allow(dead_code)]

use std::f64::consts::PI;

use cenreg::Thresholds;

const XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate, its difference from the embedded 7-point
/// Gauss rule, and the Kronrod estimate of the integral of `|f|`.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut abs = WK[7] * fc.abs();
    for i in 0..7 {
        let d = h * XK[i];
        let (fl, fr) = (f(c - d), f(c + d));
        let s = fl + fr;
        kronrod += WK[i] * s;
        abs += WK[i] * (fl.abs() + fr.abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h, abs * h)
}

/// Adaptive Gauss-Kronrod integral of `f` over the finite interval `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err, abs) = gk15(f, a, b);
        // Below the rounding floor of the panel, refinement cannot help.
        if err <= tol.max(50.0 * f64::EPSILON * abs) || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    if a >= b {
        return 0.0;
    }
    rec(&f, a, b, tol, 30)
}

/// Gaussian density with standard deviation `sigma`.
pub fn pdf(s: f64, sigma: f64) -> f64 {
    (-0.5 * (s / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Gaussian distribution function with standard deviation `sigma`.
pub fn cdf(s: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-s / (sigma * std::f64::consts::SQRT_2))
}

pub fn sf(s: f64, sigma: f64) -> f64 {
    cdf(-s, sigma)
}

/// The finite part of `[l, u]` where the density around `x` is not negligible.
fn band(th: &Thresholds, x: f64, sigma: f64) -> (f64, f64) {
    (th.l.max(x - 40.0 * sigma), th.u.min(x + 40.0 * sigma))
}

/// [`integrate`] over panels no wider than `width`, so a narrow peak cannot
/// slip between the nodes of a single wide panel.
fn integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, width: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let n = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| integrate(&f, a + i as f64 * h, if i + 1 == n { b } else { a + (i + 1) as f64 * h }, 1e-14))
        .sum()
}

/// `mass * h`, taking a vanishing mass to contribute nothing even where the
/// score itself is 0/0.
fn weighted(mass: f64, h: impl Fn() -> f64) -> f64 {
    if mass == 0.0 {
        0.0
    } else {
        mass * h()
    }
}

/// `f(s) / (1 - F(s))` by direct division; once the tail mass underflows,
/// the two-term asymptotic series (such scores only ever multiply masses
/// that are themselves negligible).
fn upper_ratio(s: f64, sigma: f64) -> f64 {
    let tail = sf(s, sigma);
    if tail > 1e-290 {
        pdf(s, sigma) / tail
    } else {
        s / (sigma * sigma) + 1.0 / s
    }
}

/// Score of a lower-censored observation at response `y`.
fn h_lower(th: &Thresholds, y: f64, sigma: f64) -> f64 {
    -upper_ratio(y - th.l, sigma)
}

fn h_upper(th: &Thresholds, y: f64, sigma: f64) -> f64 {
    upper_ratio(th.u - y, sigma)
}

/// `G(y, x)` as the expectation of the score: censored masses times their
/// scores plus the integral over the interior band.
pub fn g_by_quadrature(y: f64, x: f64, th: &Thresholds, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let (a, b) = band(th, x, sigma);
    let mut g = integrate_panels(|t| (t - y) / var * pdf(t - x, sigma), a, b, sigma);
    if th.l.is_finite() {
        g += weighted(cdf(th.l - x, sigma), || h_lower(th, y, sigma));
    }
    if th.u.is_finite() {
        g += weighted(sf(th.u - x, sigma), || h_upper(th, y, sigma));
    }
    g
}

/// `dG(y, x)/dx` by differentiating under the integral sign.
pub fn g_dx_by_quadrature(y: f64, x: f64, th: &Thresholds, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let (a, b) = band(th, x, sigma);
    let mut g = integrate_panels(|t| (t - y) * (t - x) / (var * var) * pdf(t - x, sigma), a, b, sigma);
    if th.l.is_finite() {
        g -= weighted(pdf(th.l - x, sigma), || h_lower(th, y, sigma));
    }
    if th.u.is_finite() {
        g += weighted(pdf(th.u - x, sigma), || h_upper(th, y, sigma));
    }
    g
}

/// Fisher weight as the second moment of the score at the true response.
pub fn fisher_by_quadrature(x: f64, th: &Thresholds, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let (a, b) = band(th, x, sigma);
    let mut l = integrate_panels(|t| ((t - x) / var).powi(2) * pdf(t - x, sigma), a, b, sigma);
    if th.l.is_finite() {
        l += weighted(cdf(th.l - x, sigma), || h_lower(th, x, sigma).powi(2));
    }
    if th.u.is_finite() {
        l += weighted(sf(th.u - x, sigma), || h_upper(th, x, sigma).powi(2));
    }
    l
}
