//! Self-check suite run by `cenreg check`: the invariants of every module,
//! verified against finite differences, simulation and brute force on
//! randomized inputs drawn from one seed.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::estimator::{read_snapshot_binary, read_snapshot_text, EstimatorConfig, TwoStepEstimator};
use crate::fisher::{crb_trace, normality_diagnostic, sym_sqrt, FisherAccumulator};
use crate::kernel::{
    fisher_weight, regression_g, regression_g_dx, saturate, score_h, CensoredObservation, NoiseModel, Thresholds,
};
use crate::projection::WeightedNorm;
use crate::sim::{nls_fit, parse_config_str, run_experiment, Experiment, NlsSettings};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn(&mut ChaCha8Rng) -> (bool, String);

const CHECKS: &[(&str, CheckFn)] = &[
    ("kernel: G(y, y) = 0", zero_diagonal),
    ("kernel: lambda(x) = dG/dx(x, x)", fisher_identity),
    ("kernel: G increasing in the true response", monotone),
    ("kernel: dG/dx matches finite differences", slope_fd),
    ("kernel: bounded second derivatives of G", second_derivatives),
    ("kernel: E[H] = G and E[H^2] = lambda by simulation", martingale_mean),
    ("projection: feasible, idempotent, non-expansive, KKT", projection),
    ("estimator: inverse-gain identities, SPD gains, feasibility", inverse_gain),
    ("estimator: uncensored Step 2 equals projected RLS", uncensored_reduction),
    ("estimator: snapshot round trip and exact resume", snapshots),
    ("fisher: accumulator symmetric and Loewner monotone", loewner),
    ("fisher: C-R trace and matrix square root", crb_and_sqrt),
    ("fisher: normality diagnostic on exact normals", normality_self_test),
    ("sim: NLS reduces to least squares without censoring", nls_reduction),
    ("sim: regressors bounded, runs deterministic across threads", determinism),
];

/// Runs every check; the seed fixes all random inputs.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let start = Instant::now();
            let (passed, detail) = f(&mut rng);
            CheckOutcome {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn cases() -> Vec<(Thresholds, NoiseModel)> {
    let th = [
        Thresholds::clipped(0.0, 15.0).unwrap(),
        Thresholds::clipped(-0.5, 1.0).unwrap(),
        Thresholds::uncensored(),
        Thresholds::binary(0.0).unwrap(),
        Thresholds::new(f64::NEG_INFINITY, 2.0, f64::NEG_INFINITY, 2.0).unwrap(),
    ];
    th.iter()
        .flat_map(|t| [0.5, 1.0, 2.0].map(|s| (*t, NoiseModel::new(s).unwrap())))
        .collect()
}

fn verdict(worst: f64, tol: f64, what: &str) -> (bool, String) {
    (worst <= tol, format!("max {what} {worst:.3e} (tolerance {tol:.0e})"))
}

fn zero_diagonal(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for (th, noise) in cases() {
        for _ in 0..200 {
            let y = rng.random_range(-5.0..16.0);
            worst = worst.max(regression_g(y, y, &th, &noise).abs());
        }
    }
    verdict(worst, 1e-12, "|G(y,y)|")
}

fn fisher_identity(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for (th, noise) in cases() {
        for _ in 0..200 {
            let x = rng.random_range(-8.0..20.0);
            worst = worst.max((fisher_weight(x, &th, &noise) - regression_g_dx(x, x, &th, &noise)).abs());
        }
    }
    verdict(worst, 1e-10, "deviation")
}

fn monotone(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut violations = 0;
    let mut first = String::new();
    for (th, noise) in cases() {
        for _ in 0..200 {
            let y = rng.random_range(-5.0..16.0);
            let x = rng.random_range(-5.0..16.0);
            let dx = rng.random_range(1e-3..1.0);
            let (g0, g1) = (regression_g(y, x, &th, &noise), regression_g(y, x + dx, &th, &noise));
            let slope = regression_g_dx(y, x, &th, &noise).min(regression_g_dx(y, x + dx, &th, &noise));
            if g1 < g0 - 4.0 * f64::EPSILON * g0.abs() || (slope * dx > 1e-9 * (1.0 + g0.abs()) && g1 <= g0) {
                if violations == 0 {
                    first = format!(", first at y = {y}, x = {x}, dx = {dx}, {th:?}, sigma = {}: {g0} vs {g1}", noise.sigma());
                }
                violations += 1;
            }
        }
    }
    (violations == 0, format!("{violations} violations{first}"))
}

fn slope_fd(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for (th, noise) in cases() {
        for _ in 0..100 {
            let y = rng.random_range(-5.0..16.0);
            let x = rng.random_range(-5.0..16.0);
            let fd = (regression_g(y, x + h, &th, &noise) - regression_g(y, x - h, &th, &noise)) / (2.0 * h);
            let d = regression_g_dx(y, x, &th, &noise);
            worst = worst.max((fd - d).abs() / d.abs().max(1.0));
        }
    }
    verdict(worst, 1e-6, "relative deviation")
}

fn second_derivatives(_rng: &mut ChaCha8Rng) -> (bool, String) {
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for (th, noise) in cases() {
        let g = |y: f64, x: f64| regression_g(y, x, &th, &noise);
        for i in 0..=20 {
            for j in 0..=20 {
                let (y, x) = (-5.0 + 0.5 * i as f64, -5.0 + 0.5 * j as f64);
                let gxx = (g(y, x + h) - 2.0 * g(y, x) + g(y, x - h)) / (h * h);
                let gyy = (g(y + h, x) - 2.0 * g(y, x) + g(y - h, x)) / (h * h);
                let gxy = (g(y + h, x + h) - g(y + h, x - h) - g(y - h, x + h) + g(y - h, x - h)) / (4.0 * h * h);
                worst = worst.max(gxx.abs()).max(gyy.abs()).max(gxy.abs());
            }
        }
    }
    (worst.is_finite() && worst < 1e3, format!("max |second derivative| {worst:.3e} on [-5, 5]^2"))
}

fn martingale_mean(rng: &mut ChaCha8Rng) -> (bool, String) {
    let th = Thresholds::clipped(-0.5, 1.0).unwrap();
    let noise = NoiseModel::new(0.8).unwrap();
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let x = rng.random_range(-1.5..2.0);
        let z = rng.random_range(-1.5..2.0);
        for (at, target) in [(z, regression_g(z, x, &th, &noise)), (x, f64::NAN)] {
            let hs: Vec<f64> = (0..n)
                .map(|_| {
                    let y = saturate(x + noise.sigma() * rng.sample::<f64, _>(StandardNormal), &th);
                    let obs = CensoredObservation::classify(y, &th).expect("saturated output");
                    let h = score_h(&obs, at, &th, &noise);
                    if target.is_nan() {
                        h * h
                    } else {
                        h
                    }
                })
                .collect();
            let target = if target.is_nan() { fisher_weight(x, &th, &noise) } else { target };
            let mean = hs.iter().sum::<f64>() / n as f64;
            let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            worst = worst.max((mean - target).abs() / (var / n as f64).sqrt());
        }
    }
    verdict(worst, 4.0, "deviation in standard errors")
}

fn random_spd(rng: &mut ChaCha8Rng, m: usize, log10_cond: f64) -> DMatrix<f64> {
    let q = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let d = DVector::from_fn(m, |_, _| 10f64.powf(rng.random_range(0.0..=log10_cond)));
    let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&a + a.transpose()) * 0.5
}

fn projection(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst_expansion: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..2000 {
        let m = rng.random_range(1..7);
        let a = random_spd(rng, m, 6.0);
        let r = rng.random_range(0.1..5.0);
        let norm = WeightedNorm::new(&a, r).expect("SPD by construction");
        let x = DVector::from_fn(m, |_, _| rng.random_range(-10.0..10.0));
        let y = DVector::from_fn(m, |_, _| rng.random_range(-10.0..10.0));
        let px = norm.project_with_multiplier(&x);
        let py = norm.project(&y);
        let feasible = px.point.norm() <= r * (1.0 + 1e-12);
        let idempotent = (norm.project(&px.point) - &px.point).amax() <= 1e-12 * r;
        if !feasible || !idempotent {
            failures += 1;
        }
        let d = norm.norm(&(&x - &y));
        worst_expansion = worst_expansion.max((norm.norm(&(&px.point - &py)) - d) / d.max(1e-300));
        if x.norm() > r {
            let ax = &a * &x;
            let res = (&a + DMatrix::identity(m, m) * px.multiplier) * &px.point - &ax;
            worst_kkt = worst_kkt.max(res.norm() / ax.norm());
        }
    }
    (
        failures == 0 && worst_expansion <= 1e-9 && worst_kkt <= 1e-8,
        format!("{failures} infeasible/non-idempotent, max expansion {worst_expansion:.2e}, max KKT residual {worst_kkt:.2e}"),
    )
}

fn censored_stream(
    rng: &mut ChaCha8Rng,
    theta: &DVector<f64>,
    th: &Thresholds,
    n: usize,
) -> Vec<(DVector<f64>, CensoredObservation)> {
    (0..n)
        .map(|_| {
            let phi = DVector::from_fn(theta.len(), |i, _| if i == 0 { 1.0 } else { rng.random_range(-1.0..=1.0) });
            let y = saturate(phi.dot(theta) + rng.sample::<f64, _>(StandardNormal), th);
            (phi, CensoredObservation::classify(y, th).expect("saturated output"))
        })
        .collect()
}

fn inverse(p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Some(p.clone().cholesky()?.inverse())
}

fn inverse_gain(rng: &mut ChaCha8Rng) -> (bool, String) {
    let m = 5;
    let th = Thresholds::clipped(-0.5, 1.0).unwrap();
    let theta = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
    let cfg = EstimatorConfig::new(m, 2.0, (m as f64).sqrt(), NoiseModel::standard());
    let mut est = TwoStepEstimator::new(&cfg).expect("valid config");
    let mut worst: f64 = 0.0;
    let mut a_bar_low = 0;
    for (phi, obs) in censored_stream(rng, &theta, &th, 2000) {
        let (Some(pb_inv), Some(p_inv)) = (inverse(&est.step1.p_bar), inverse(&est.step2.p)) else {
            return (false, format!("gain lost positive definiteness at step {}", est.k));
        };
        let (g1, g2) = match est.update(&phi, &obs, &th, &cfg) {
            Ok(g) => g,
            Err(e) => return (false, e.to_string()),
        };
        a_bar_low += (g1.a_bar <= 0.5) as usize;
        let outer = &phi * phi.transpose();
        let want1 = pb_inv + &outer * (g1.beta_bar * g1.beta_bar);
        let want2 = p_inv + &outer * (g2.beta * g2.beta / g2.mu);
        let (Some(got1), Some(got2)) = (inverse(&est.step1.p_bar), inverse(&est.step2.p)) else {
            return (false, format!("gain lost positive definiteness at step {}", est.k));
        };
        worst = worst
            .max((got1 - &want1).norm() / want1.norm())
            .max((got2 - &want2).norm() / want2.norm());
        if est.step1.theta_bar.norm() > cfg.radius() * (1.0 + 1e-12) || est.step2.theta_hat.norm() > cfg.radius() * (1.0 + 1e-12) {
            return (false, format!("estimate left the ball at step {}", est.k));
        }
    }
    (
        worst <= 1e-8 && a_bar_low == 0,
        format!("max relative deviation {worst:.2e}, {a_bar_low} steps with a_bar <= 1/2"),
    )
}

fn uncensored_reduction(rng: &mut ChaCha8Rng) -> (bool, String) {
    let m = 3;
    let th = Thresholds::uncensored();
    let theta = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
    let mut cfg = EstimatorConfig::new(m, 0.5, (m as f64).sqrt(), NoiseModel::standard());
    cfg.p0_scale = 10.0;
    let mut est = TwoStepEstimator::new(&cfg).expect("valid config");
    let mut reference = DVector::zeros(m);
    let mut p = DMatrix::identity(m, m) * cfg.p0_scale;
    let mut worst: f64 = 0.0;
    for (phi, obs) in censored_stream(rng, &theta, &th, 1000) {
        if let Err(e) = est.update(&phi, &obs, &th, &cfg) {
            return (false, e.to_string());
        }
        let v = &p * &phi;
        let s = phi.dot(&v);
        let e = obs.y - phi.dot(&reference);
        p -= &v * v.transpose() / (1.0 + s);
        let cand = &reference + &v * (e / (1.0 + s));
        reference = bisection_projection(&cand, &p, cfg.radius());
        worst = worst.max((&est.step2.theta_hat - &reference).amax());
    }
    verdict(worst, 1e-10, "deviation")
}

/// Projection onto `|y| <= r` in the `p^{-1}` norm by bisection on the
/// multiplier of `y(mu) = (I + mu p)^{-1} x`.
fn bisection_projection(x: &DVector<f64>, p: &DMatrix<f64>, r: f64) -> DVector<f64> {
    if x.norm() <= r {
        return x.clone();
    }
    let m = x.len();
    let y = |mu: f64| {
        (DMatrix::identity(m, m) + p * mu)
            .lu()
            .solve(x)
            .expect("I + mu P is nonsingular for SPD P")
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while y(hi).norm() > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if y(mid).norm() > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    y(hi)
}

fn snapshots(rng: &mut ChaCha8Rng) -> (bool, String) {
    let m = 3;
    let th = Thresholds::clipped(-0.5, 1.0).unwrap();
    let theta = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
    let cfg = EstimatorConfig::new(m, 2.0, (m as f64).sqrt(), NoiseModel::standard());
    let stream = censored_stream(rng, &theta, &th, 400);
    let run = |est: &mut TwoStepEstimator, items: &[(DVector<f64>, CensoredObservation)]| {
        for (phi, obs) in items {
            est.update(phi, obs, &th, &cfg).expect("update on a valid stream");
        }
    };
    let mut full = TwoStepEstimator::new(&cfg).expect("valid config");
    run(&mut full, &stream[..200]);
    let snap = full.snapshot();
    let mut bin = Vec::new();
    let mut text = Vec::new();
    snap.write_binary(&mut bin).expect("in-memory write");
    snap.write_text(&mut text).expect("in-memory write");
    let from_bin = read_snapshot_binary(bin.as_slice());
    let from_text = read_snapshot_text(text.as_slice());
    let round_trip = matches!((&from_bin, &from_text), (Ok(a), Ok(b)) if *a == snap && *b == snap);
    let mut resumed = TwoStepEstimator::from_snapshot(&snap);
    run(&mut full, &stream[200..]);
    run(&mut resumed, &stream[200..]);
    let exact = full == resumed;
    (
        round_trip && exact,
        format!("binary/text round trip {round_trip}, resumed run identical {exact}"),
    )
}

fn loewner(rng: &mut ChaCha8Rng) -> (bool, String) {
    let th = Thresholds::clipped(0.0, 15.0).unwrap();
    let noise = NoiseModel::standard();
    let theta = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let mut acc = FisherAccumulator::new(4);
    let mut ok = true;
    for _ in 0..500 {
        let phi = DVector::from_fn(4, |_, _| rng.random_range(0.0..15.0));
        let before = acc.lambda_sum.clone();
        acc.accumulate(&phi, phi.dot(&theta), &th, &noise);
        let diff = &acc.lambda_sum - before;
        let min_eig = diff.symmetric_eigen().eigenvalues.min();
        ok &= acc.lambda_sum == acc.lambda_sum.transpose() && min_eig >= -1e-12 * acc.lambda_sum.norm();
    }
    (ok, format!("{} steps", acc.n))
}

fn crb_and_sqrt(rng: &mut ChaCha8Rng) -> (bool, String) {
    let n = 250.0;
    let a = crb_trace(&(DMatrix::identity(10, 10) * n)).map(|t| (t - 10.0 / n).abs());
    let b = crb_trace(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0]))).map(|t| (t - 0.625).abs());
    let singular = crb_trace(&DMatrix::from_element(2, 2, 1.0)).is_err();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.random_range(1..8);
        let d = random_spd(rng, m, 4.0);
        let r = sym_sqrt(&d);
        worst = worst.max((&r * &r - &d).norm() / d.norm());
    }
    let closed = matches!((a, b), (Ok(x), Ok(y)) if x < 1e-14 && y < 1e-14);
    (
        closed && singular && worst <= 1e-10,
        format!("closed forms {closed}, singular rejected {singular}, max sqrt residual {worst:.2e}"),
    )
}

fn normality_self_test(rng: &mut ChaCha8Rng) -> (bool, String) {
    let m = 3;
    let delta = random_spd(rng, m, 2.0);
    let root = sym_sqrt(&delta);
    let Some(inv_root) = inverse(&root) else {
        return (false, "square root not invertible".into());
    };
    let r = 2000;
    let errors: Vec<DVector<f64>> = (0..r)
        .map(|_| &inv_root * DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    match normality_diagnostic(&errors, &delta) {
        Ok(rep) => {
            let band = 4.0 * (2.0 / r as f64).sqrt();
            let ok = (rep.diag_min - 1.0).abs() < band
                && (rep.diag_max - 1.0).abs() < band
                && rep.max_abs_offdiag < band
                && rep.mean.amax() < 4.0 / (r as f64).sqrt();
            (
                ok,
                format!(
                    "covariance diagonal [{:.3}, {:.3}], max off-diagonal {:.3}",
                    rep.diag_min, rep.diag_max, rep.max_abs_offdiag
                ),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

fn nls_reduction(rng: &mut ChaCha8Rng) -> (bool, String) {
    let th = Thresholds::uncensored();
    let theta = DVector::from_vec(vec![0.4, -0.7]);
    let phis: Vec<DVector<f64>> = (0..200)
        .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let ys: Vec<f64> = phis
        .iter()
        .map(|p| p.dot(&theta) + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let fit = nls_fit(&phis, &ys, &th.into(), &NoiseModel::standard(), &DVector::zeros(2), 10.0, &NlsSettings::default());
    let mut xtx = DMatrix::zeros(2, 2);
    let mut xty = DVector::zeros(2);
    for (p, y) in phis.iter().zip(&ys) {
        xtx += p * p.transpose();
        xty += p * *y;
    }
    let Some(ls) = xtx.lu().solve(&xty) else {
        return (false, "singular design".into());
    };
    let dev = (&fit.theta - ls).amax();
    (fit.converged && dev <= 1e-8, format!("converged {}, deviation {dev:.2e}", fit.converged))
}

fn determinism(rng: &mut ChaCha8Rng) -> (bool, String) {
    let seed: u64 = rng.random_range(0..1_000_000);
    let text = format!(
        "m = 3\np = 3\nhorizon = 300\nreplications = 4\nseed = {seed}\npoints_per_decade = 5\n\
         [thresholds]\nl = 0.0\nu = 15.0\nL = 0.0\nU = 15.0\n[generator]\nkind = \"feedback\"\n"
    );
    let exp = match parse_config_str(&text, &[]).and_then(Experiment::new) {
        Ok(e) => e,
        Err(e) => return (false, e.to_string()),
    };
    let bound = exp.estimator.m_bound;
    let bounded = (0..exp.config.replications).all(|r| exp.dataset(r).phis.iter().all(|p| p.norm() <= bound));
    let runs: Vec<String> = [1, 1, 2]
        .iter()
        .filter_map(|&t| run_experiment(&exp, t).ok().map(|r| r.curves.to_csv()))
        .collect();
    let same = runs.len() == 3 && runs[0] == runs[1] && runs[0] == runs[2];
    (
        bounded && same,
        format!("regressors within M {bounded}, repeated and parallel curves identical {same}"),
    )
}
