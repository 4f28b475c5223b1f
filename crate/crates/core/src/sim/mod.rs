//! Monte Carlo experiments: signal generation, replication runner, curve
//! reduction and output files.
//!
//! Randomness: the true parameter is drawn from stream `THETA_STREAM` of a
//! ChaCha8 generator seeded with the experiment seed; replication `r` uses
//! stream `r` of the same seed. Replications therefore do not depend on
//! each other or on the thread count, and the reduction runs in replication
//! order, so output files are bit-identical across sequential and parallel
//! runs.

mod config;
mod generator;
mod nls;

pub use config::{parse_config, parse_config_str, Baseline, EstimatorSettings, ExperimentConfig, NlsConfig, TrueParameter};
pub use generator::{generate, generate_feedback_trajectory, Dataset, SignalGenerator};
pub use nls::{conditional_mean, nls_baseline, nls_fit, nls_objective, NlsFit, NlsSettings};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, TwoStepEstimator};
use crate::fisher::{average_accumulators, crb_trace, normality_diagnostic, r1_ratio, FisherAccumulator};
use crate::kernel::{CensoredObservation, NoiseModel};

const THETA_STREAM: u64 = u64::MAX;
const PILOT_STEPS: usize = 1000;
const MAX_THETA_DRAWS: usize = 1000;

/// Log-spaced step counts in `[1, n]`, at most `per_decade` per decade,
/// always ending at `n`.
pub fn log_grid(n: usize, per_decade: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let per = per_decade.max(1) as f64;
    let steps = ((n as f64).log10() * per).floor() as usize;
    for i in 0..=steps {
        let k = 10f64.powf(i as f64 / per).round() as usize;
        let k = k.clamp(1, n);
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    if out.last() != Some(&n) {
        out.push(n);
    }
    out
}

/// A validated configuration together with the drawn true parameter.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// `m x p`; column `j` is the parameter of output `j`.
    pub theta: DMatrix<f64>,
    pub noise: NoiseModel,
    pub estimator: EstimatorConfig,
    pub grid: Vec<usize>,
    /// Number of draws of `Theta` until one passed the excitation check.
    pub theta_draws: usize,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let noise = config.noise();
        let (theta, theta_draws) = draw_theta(&config, &noise)?;
        let mut estimator = EstimatorConfig::new(
            config.m,
            config.d_bound,
            config.generator.m_bound(config.m, &config.thresholds),
            noise,
        );
        estimator.p0_scale = config.estimator.p0_scale;
        estimator.slope_window = config.estimator.slope_window;
        estimator.mu_floor = config.estimator.mu_floor;
        estimator.validate()?;
        let grid = log_grid(config.horizon, config.points_per_decade);
        Ok(Self {
            config,
            theta,
            noise,
            estimator,
            grid,
            theta_draws,
        })
    }

    pub fn replication_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(rep as u64);
        rng
    }

    /// The data set of replication `rep` over the full horizon.
    pub fn dataset(&self, rep: usize) -> Dataset {
        let c = &self.config;
        generate(&c.generator, &self.theta, c.horizon, &c.thresholds, &self.noise, &mut self.replication_rng(rep))
    }
}

fn draw_theta(c: &ExperimentConfig, noise: &NoiseModel) -> Result<(DMatrix<f64>, usize)> {
    match &c.theta {
        TrueParameter::Fixed { columns } => Ok((
            DMatrix::from_fn(c.m, c.p, |i, j| columns[j][i]),
            1,
        )),
        TrueParameter::Uniform {
            half_width,
            min_interior_fraction,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            rng.set_stream(THETA_STREAM);
            let h = *half_width;
            for attempt in 1..=MAX_THETA_DRAWS {
                let mut theta = DMatrix::from_fn(c.m, c.p, |_, _| rng.random_range(-h..=h));
                for mut col in theta.column_iter_mut() {
                    let n = col.norm();
                    if n > c.d_bound {
                        col *= c.d_bound / n;
                    }
                }
                let check = matches!(c.generator, SignalGenerator::Feedback) && *min_interior_fraction > 0.0;
                if !check || excited(&theta, c, noise, *min_interior_fraction, &mut rng) {
                    return Ok((theta, attempt));
                }
            }
            Err(Error::Config(format!(
                "no draw of theta out of {MAX_THETA_DRAWS} kept every state coordinate inside (l, u) on {min_interior_fraction} of a pilot run"
            )))
        }
    }
}

/// Pilot run of the closed loop: does every state coordinate spend at least
/// `fraction` of the steps strictly inside `(l, u)`?
fn excited(theta: &DMatrix<f64>, c: &ExperimentConfig, noise: &NoiseModel, fraction: f64, rng: &mut ChaCha8Rng) -> bool {
    let data = generate_feedback_trajectory(theta, PILOT_STEPS, &c.thresholds, noise, rng);
    let mut inside = vec![0usize; c.m];
    for (k, y) in data.outputs.iter().enumerate() {
        let th = c.thresholds.at(k);
        for (i, &v) in y.iter().enumerate() {
            if v > th.l && v < th.u {
                inside[i] += 1;
            }
        }
    }
    inside.iter().all(|&n| n as f64 >= fraction * PILOT_STEPS as f64)
}

/// Everything one replication contributes to the curves.
#[derive(Debug, Clone)]
pub struct ReplicationOutput {
    /// `sum_j |theta_j - theta_hat_j|^2` at each grid point.
    pub err_alg1: Vec<f64>,
    pub err_step1: Vec<f64>,
    pub err_nls: Option<Vec<f64>>,
    /// Information at the true parameter, `[grid point][column]`.
    pub fisher: Vec<Vec<FisherAccumulator>>,
    /// Stacked final errors `theta_hat - theta` (column-major), two-step estimator
    /// and Step 1.
    pub final_alg1: DVector<f64>,
    pub final_step1: DVector<f64>,
    pub degraded_steps: usize,
    pub nls_unconverged: usize,
}

/// Runs the two-step estimator on every output column of one replication.
pub fn run_replication(exp: &Experiment, rep: usize) -> Result<ReplicationOutput> {
    run_replication_inner(exp, rep).map_err(|e| e.at_replication(rep))
}

fn run_replication_inner(exp: &Experiment, rep: usize) -> Result<ReplicationOutput> {
    let c = &exp.config;
    let (m, p) = (c.m, c.p);
    let data = exp.dataset(rep);
    let g = exp.grid.len();
    let mut err_alg1 = vec![0.0; g];
    let mut err_step1 = vec![0.0; g];
    let mut fisher = vec![vec![FisherAccumulator::new(m); p]; g];
    let mut final_alg1 = DVector::zeros(m * p);
    let mut final_step1 = DVector::zeros(m * p);
    let mut degraded_steps = 0;

    for j in 0..p {
        let theta_j = exp.theta.column(j).into_owned();
        let mut est = TwoStepEstimator::new(&exp.estimator)?;
        let mut acc = FisherAccumulator::new(m);
        let mut gi = 0;
        for (k, phi) in data.phis.iter().enumerate() {
            let th = c.thresholds.at(k);
            let obs = CensoredObservation::classify(data.outputs[k][j], th)?;
            acc.accumulate(phi, phi.dot(&theta_j), th, &exp.noise);
            let (g1, _) = est.update(phi, &obs, th, &exp.estimator)?;
            degraded_steps += g1.degraded as usize;
            if gi < g && exp.grid[gi] == k + 1 {
                err_alg1[gi] += (&est.step2.theta_hat - &theta_j).norm_squared();
                err_step1[gi] += (&est.step1.theta_bar - &theta_j).norm_squared();
                fisher[gi][j] = acc.clone();
                gi += 1;
            }
        }
        final_alg1
            .rows_mut(j * m, m)
            .copy_from(&(&est.step2.theta_hat - &theta_j));
        final_step1
            .rows_mut(j * m, m)
            .copy_from(&(&est.step1.theta_bar - &theta_j));
    }

    let (err_nls, nls_unconverged) = if c.has_baseline(Baseline::Nls) {
        let (e, u) = nls_series(exp, &data);
        (Some(e), u)
    } else {
        (None, 0)
    };

    Ok(ReplicationOutput {
        err_alg1,
        err_step1,
        err_nls,
        fisher,
        final_alg1,
        final_step1,
        degraded_steps,
        nls_unconverged,
    })
}

/// NLS refitted on each prefix of the grid, warm-started from the previous fit.
fn nls_series(exp: &Experiment, data: &Dataset) -> (Vec<f64>, usize) {
    let c = &exp.config;
    let settings = NlsSettings {
        max_iterations: c.nls.max_iterations,
        tolerance: c.nls.tolerance,
    };
    let mut errs = vec![0.0; exp.grid.len()];
    let mut unconverged = 0;
    for j in 0..c.p {
        let theta_j = exp.theta.column(j).into_owned();
        let ys: Vec<f64> = data.outputs.iter().map(|y| y[j]).collect();
        let mut init = DVector::zeros(c.m);
        for (gi, &k) in exp.grid.iter().enumerate() {
            let fit = nls_fit(&data.phis[..k], &ys[..k], &c.thresholds, &exp.noise, &init, exp.estimator.radius(), &settings);
            unconverged += !fit.converged as usize;
            errs[gi] += (&fit.theta - &theta_j).norm_squared();
            init = fit.theta;
        }
    }
    (errs, unconverged)
}

/// Reduced curves; every series has one entry per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBundle {
    pub k: Vec<usize>,
    /// Median over replications of `sum_j |theta_j - theta_hat_j|^2`.
    pub err_alg1: Vec<f64>,
    /// `k * mean |theta_tilde_k|^2`.
    pub mse_alg1: Vec<f64>,
    /// `k * sum_j tr(Delta_{j,k}^{-1})`; infinite while `Delta` is singular.
    pub crb: Vec<f64>,
    pub err_step1: Option<Vec<f64>>,
    pub mse_step1: Option<Vec<f64>>,
    pub err_nls: Option<Vec<f64>>,
}

impl CurveBundle {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["k", "err_alg1", "mse_alg1", "crb"];
        if self.err_step1.is_some() {
            header.extend(["err_step1", "mse_step1"]);
        }
        if self.err_nls.is_some() {
            header.push("err_nls");
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.k.len() {
            let mut row = vec![
                self.k[i].to_string(),
                self.err_alg1[i].to_string(),
                self.mse_alg1[i].to_string(),
                self.crb[i].to_string(),
            ];
            if let (Some(e), Some(m)) = (&self.err_step1, &self.mse_step1) {
                row.push(e[i].to_string());
                row.push(m[i].to_string());
            }
            if let Some(e) = &self.err_nls {
                row.push(e[i].to_string());
            }
            out += &row.join(",");
            out.push('\n');
        }
        out
    }
}

/// Curves plus the per-replication material behind the diagnostics.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub curves: CurveBundle,
    pub replications: usize,
    pub failures: Vec<String>,
    /// Final stacked errors of the successful replications, in order.
    pub final_alg1: Vec<DVector<f64>>,
    pub final_step1: Vec<DVector<f64>>,
    /// `Delta_n` per output column at the horizon.
    pub delta: Vec<DMatrix<f64>>,
    /// Per-replication information at the horizon, `[replication][column]`.
    pub lambda: Vec<Vec<DMatrix<f64>>>,
    pub degraded_steps: usize,
    pub nls_unconverged: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs every replication on at most `threads` threads (0 = all cores, 1 =
/// sequential) and reduces them in replication order. Failing replications
/// are excluded; the experiment fails when more than 1% of them fail.
pub fn run_experiment(exp: &Experiment, threads: usize) -> Result<ExperimentResult> {
    let r = exp.config.replications;
    let outputs: Vec<Result<ReplicationOutput>> = if threads == 1 {
        (0..r).map(|i| run_replication(exp, i)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..r).into_par_iter().map(|i| run_replication(exp, i)).collect())
    };
    let mut ok = Vec::with_capacity(r);
    let mut failures = Vec::new();
    for o in outputs {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if failures.len() * 100 > r || ok.is_empty() {
        return Err(Error::Experiment {
            failed: failures.len(),
            total: r,
            first: failures.first().cloned().unwrap_or_default(),
        });
    }
    reduce(exp, ok, failures)
}

fn reduce(exp: &Experiment, ok: Vec<ReplicationOutput>, failures: Vec<String>) -> Result<ExperimentResult> {
    let c = &exp.config;
    let g = exp.grid.len();
    let mut curves = CurveBundle {
        k: exp.grid.clone(),
        err_alg1: Vec::with_capacity(g),
        mse_alg1: Vec::with_capacity(g),
        crb: Vec::with_capacity(g),
        err_step1: c.has_baseline(Baseline::Step1Only).then(Vec::new),
        mse_step1: c.has_baseline(Baseline::Step1Only).then(Vec::new),
        err_nls: c.has_baseline(Baseline::Nls).then(Vec::new),
    };
    let mut delta = Vec::new();
    for gi in 0..g {
        let k = exp.grid[gi] as f64;
        let mut a: Vec<f64> = ok.iter().map(|o| o.err_alg1[gi]).collect();
        curves.mse_alg1.push(k * mean(&a));
        curves.err_alg1.push(median(&mut a));
        if let (Some(e), Some(m)) = (curves.err_step1.as_mut(), curves.mse_step1.as_mut()) {
            let mut s: Vec<f64> = ok.iter().map(|o| o.err_step1[gi]).collect();
            m.push(k * mean(&s));
            e.push(median(&mut s));
        }
        if let Some(e) = curves.err_nls.as_mut() {
            let mut s: Vec<f64> = ok.iter().filter_map(|o| o.err_nls.as_ref().map(|v| v[gi])).collect();
            e.push(median(&mut s));
        }
        let mut bound = 0.0;
        let mut deltas = Vec::with_capacity(c.p);
        for j in 0..c.p {
            let d = average_accumulators(ok.iter().map(|o| &o.fisher[gi][j]))?.mean;
            bound += crb_trace(&d).unwrap_or(f64::INFINITY);
            deltas.push(d);
        }
        curves.crb.push(k * bound);
        if gi + 1 == g {
            delta = deltas;
        }
    }
    let last = g - 1;
    Ok(ExperimentResult {
        curves,
        replications: c.replications,
        failures,
        final_alg1: ok.iter().map(|o| o.final_alg1.clone()).collect(),
        final_step1: ok.iter().map(|o| o.final_step1.clone()).collect(),
        delta,
        lambda: ok
            .iter()
            .map(|o| o.fisher[last].iter().map(|a| a.lambda_sum.clone()).collect())
            .collect(),
        degraded_steps: ok.iter().map(|o| o.degraded_steps).sum(),
        nls_unconverged: ok.iter().map(|o| o.nls_unconverged).sum(),
    })
}

fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let m = b.nrows();
        out.view_mut((off, off), (m, m)).copy_from(b);
        off += m;
    }
    out
}

impl ExperimentResult {
    /// `n * mean |theta_tilde_n|^2` over `n * tr(Delta_n^{-1})` at the horizon.
    pub fn efficiency_ratio(&self) -> f64 {
        let c = &self.curves;
        c.mse_alg1.last().unwrap() / c.crb.last().unwrap()
    }

    pub fn step1_efficiency_ratio(&self) -> Option<f64> {
        let c = &self.curves;
        Some(c.mse_step1.as_ref()?.last()? / c.crb.last()?)
    }

    /// Normality summary of the whitened final errors; the stacked
    /// information matrix is block diagonal across output columns.
    pub fn normality(&self) -> Result<crate::fisher::NormalityReport> {
        normality_diagnostic(&self.final_alg1, &block_diagonal(&self.delta))
    }

    /// Key-value diagnostic report.
    pub fn report(&self, exp: &Experiment) -> Vec<(String, String)> {
        let c = &self.curves;
        let last = c.k.len() - 1;
        let mut kv: Vec<(String, String)> = vec![
            ("config_hash".into(), exp.config.hash()),
            ("seed".into(), exp.config.seed.to_string()),
            ("m".into(), exp.config.m.to_string()),
            ("p".into(), exp.config.p.to_string()),
            ("horizon".into(), exp.config.horizon.to_string()),
            ("replications".into(), self.replications.to_string()),
            ("failed_replications".into(), self.failures.len().to_string()),
            ("theta_draws".into(), exp.theta_draws.to_string()),
            ("m_bound".into(), format!("{}", exp.estimator.m_bound)),
            ("degraded_step1_updates".into(), self.degraded_steps.to_string()),
            ("final_err_alg1_median".into(), format!("{:e}", c.err_alg1[last])),
            ("final_mse_alg1".into(), format!("{:e}", c.mse_alg1[last])),
            ("final_crb".into(), format!("{:e}", c.crb[last])),
            ("efficiency_ratio_alg1".into(), format!("{:.6}", self.efficiency_ratio())),
        ];
        if let Some(r) = self.step1_efficiency_ratio() {
            kv.push(("efficiency_ratio_step1".into(), format!("{r:.6}")));
        }
        if exp.config.has_baseline(Baseline::Nls) {
            kv.push(("nls_unconverged_fits".into(), self.nls_unconverged.to_string()));
        }
        for (i, f) in self.failures.iter().enumerate() {
            kv.push((format!("failure_{i}"), f.clone()));
        }
        if self.final_alg1.len() >= 2 {
            match self.normality() {
                Ok(rep) => kv.extend(rep.to_key_values("normality_")),
                Err(e) => kv.push(("normality_error".into(), e.to_string())),
            }
        }
        let r1: Vec<f64> = self
            .lambda
            .iter()
            .flat_map(|cols| cols.iter().zip(&self.delta).map(|(l, d)| r1_ratio(d, l)))
            .collect();
        if !r1.is_empty() {
            let mut sorted = r1.clone();
            kv.push(("r1_ratio_median".into(), format!("{:.6}", median(&mut sorted))));
            kv.push(("r1_ratio_max".into(), format!("{:.6}", sorted.last().unwrap())));
        }
        kv
    }
}

pub fn format_report(kv: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in kv {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// Writes `curves.csv`, `report.txt` and `config.toml` into
/// `out/<hash>-seed<seed>/` and returns that directory.
pub fn write_outputs(out: &Path, exp: &Experiment, result: &ExperimentResult) -> Result<PathBuf> {
    let dir = out.join(exp.config.dir_name());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("curves.csv"), result.curves.to_csv())?;
    std::fs::write(dir.join("report.txt"), format_report(&result.report(exp)))?;
    std::fs::write(dir.join("config.toml"), exp.config.to_toml())?;
    Ok(dir)
}

/// Monte Carlo `Delta_n` per output column, from the same signal streams as
/// [`run_replication`] but without running any estimator.
pub fn monte_carlo_delta(exp: &Experiment, threads: usize) -> Result<Vec<crate::fisher::DeltaEstimate>> {
    let c = &exp.config;
    let one = |rep: usize| -> Vec<FisherAccumulator> {
        let data = exp.dataset(rep);
        (0..c.p)
            .map(|j| {
                let theta_j = exp.theta.column(j);
                let mut acc = FisherAccumulator::new(c.m);
                for (k, phi) in data.phis.iter().enumerate() {
                    acc.accumulate(phi, phi.dot(&theta_j), c.thresholds.at(k), &exp.noise);
                }
                acc
            })
            .collect()
    };
    let per_rep: Vec<Vec<FisherAccumulator>> = if threads == 1 {
        (0..c.replications).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..c.replications).into_par_iter().map(one).collect())
    };
    (0..c.p)
        .map(|j| average_accumulators(per_rep.iter().map(|r| &r[j])))
        .collect()
}

#[cfg(test)]
mod tests;
