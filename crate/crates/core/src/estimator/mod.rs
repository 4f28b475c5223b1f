//! Two-step online estimator for censored regression.
//!
//! Step 1 is a projected quasi-Newton recursion whose scalar gain is built
//! from worst-case bounds on the slope of `G`; it is consistent but not
//! efficient. Step 2 reuses the Step-1 estimate to build adaptive gains:
//! `P_{k+1}^{-1} = P_k^{-1} + beta_k^2 / mu_k * phi phi^T` accumulates the
//! Fisher information, which is what makes the Step-2 estimate efficient.

mod snapshot;

pub use snapshot::{read_snapshot_binary, read_snapshot_text, Snapshot};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    g_dx_max, g_dx_min, g_dx_range, regression_g, score_h, CensoredObservation, NoiseModel, SlopeProfile, Thresholds,
};
use crate::projection::project_inverse_weighted;

/// Response window over which Step 1 bounds the slope `dG/dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SlopeWindow {
    /// `|x| <= 2 D M`: every response reachable by any admissible parameter
    /// under any admissible regressor.
    Worst,
    /// `|x| <= 2 D |phi_k|`: every response reachable at the current
    /// regressor. Still contains both the true and the estimated response.
    Regressor,
    /// Lower bound over `|x - phi_k^T theta_bar_k| <= sigmas * sigma`, a window
    /// around the current preliminary response; upper bound over that window
    /// joined with the `Regressor` window. The lower bound no longer covers
    /// the true response, but the upper bound still does, so the step cannot
    /// overshoot it.
    Local { sigmas: f64 },
}

impl Default for SlopeWindow {
    fn default() -> Self {
        SlopeWindow::Local { sigmas: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Radius bound `D` of the parameter set; estimates stay in `|theta| <= 2D`.
    pub d_bound: f64,
    /// Bound `M` on `|phi_k|`.
    pub m_bound: f64,
    pub noise: NoiseModel,
    /// `P_0 = p0_scale * I` for both recursions.
    pub p0_scale: f64,
    pub theta0: DVector<f64>,
    pub slope_window: SlopeWindow,
    /// Step 2 uses `max(mu_hat, mu_floor * beta)` as its slope weight, which
    /// caps the information gained per step at `beta / mu_floor`. Inactive
    /// once the two estimates agree (`mu_hat ~ beta`); 0 disables it.
    pub mu_floor: f64,
}

impl EstimatorConfig {
    pub fn new(dim: usize, d_bound: f64, m_bound: f64, noise: NoiseModel) -> Self {
        Self {
            d_bound,
            m_bound,
            noise,
            p0_scale: 100.0,
            theta0: DVector::zeros(dim),
            slope_window: SlopeWindow::default(),
            mu_floor: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn radius(&self) -> f64 {
        2.0 * self.d_bound
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("D", self.d_bound), ("M", self.m_bound), ("p0_scale", self.p0_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("estimator config", format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mu_floor) {
            return Err(Error::invalid(
                "estimator config",
                format!("mu_floor must lie in [0, 1], got {}", self.mu_floor),
            ));
        }
        if let SlopeWindow::Local { sigmas } = self.slope_window {
            if !(sigmas.is_finite() && sigmas > 0.0) {
                return Err(Error::invalid(
                    "estimator config",
                    format!("local slope window needs a positive width, got {sigmas} sigmas"),
                ));
            }
        }
        if self.theta0.is_empty() {
            return Err(Error::invalid("estimator config", "dimension must be at least 1"));
        }
        let n0 = self.theta0.norm();
        if !(n0 <= self.radius()) {
            return Err(Error::invalid(
                "estimator config",
                format!("|theta0| = {n0} exceeds 2D = {}", self.radius()),
            ));
        }
        Ok(())
    }
}

/// Preliminary estimate and its gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Step1State {
    pub theta_bar: DVector<f64>,
    pub p_bar: DMatrix<f64>,
}

/// Accelerated estimate and its gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Step2State {
    pub theta_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

/// Scalars computed by one Step-1 update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step1Gains {
    pub g_lo: f64,
    pub g_hi: f64,
    pub beta_bar: f64,
    pub a_bar: f64,
    /// `beta_bar` underflowed below `1e-300`: the update was effectively skipped.
    pub degraded: bool,
}

/// Scalars computed by one Step-2 update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step2Gains {
    /// `dG/dx` at the Step-2 response.
    pub mu_hat: f64,
    /// Weight actually used, `max(mu_hat, mu_floor * beta)`.
    pub mu: f64,
    pub beta: f64,
    pub a: f64,
    pub innovation: f64,
}

const DEGRADED_GAIN: f64 = 1e-300;

impl Step1State {
    pub fn initial(cfg: &EstimatorConfig) -> Self {
        let m = cfg.dim();
        Self {
            theta_bar: cfg.theta0.clone(),
            p_bar: DMatrix::identity(m, m) * cfg.p0_scale,
        }
    }

    pub fn update(
        &mut self,
        phi: &DVector<f64>,
        obs: &CensoredObservation,
        th: &Thresholds,
        cfg: &EstimatorConfig,
    ) -> Result<Step1Gains> {
        let noise = &cfg.noise;
        let z = phi.dot(&self.theta_bar);
        let (g_lo, g_hi) = match cfg.slope_window {
            SlopeWindow::Worst => {
                let w = 2.0 * cfg.d_bound * cfg.m_bound;
                g_dx_range(z, -w, w, th, noise)
            }
            SlopeWindow::Regressor => {
                let w = 2.0 * cfg.d_bound * phi.norm();
                g_dx_range(z, -w, w, th, noise)
            }
            SlopeWindow::Local { sigmas } => {
                let w = 2.0 * cfg.d_bound * phi.norm();
                let half_width = sigmas * noise.sigma();
                let (lo, hi) = (z - half_width, z + half_width);
                (
                    g_dx_min(z, lo, hi, th, noise),
                    g_dx_max(z, lo.min(-w), hi.max(w), th, noise),
                )
            }
        };

        let v = &self.p_bar * phi;
        let s = phi.dot(&v);
        let beta_bar = g_lo.min(1.0 / (2.0 * g_hi * s + 1.0));
        let a_bar = 1.0 / (1.0 + beta_bar * beta_bar * s);
        let gains = Step1Gains {
            g_lo,
            g_hi,
            beta_bar,
            a_bar,
            degraded: beta_bar < DEGRADED_GAIN,
        };
        if s == 0.0 {
            return Ok(gains);
        }

        sym_rank1_sub(&mut self.p_bar, a_bar * beta_bar * beta_bar, &v);
        let h = score_h(obs, z, th, noise);
        let mut candidate = self.theta_bar.clone();
        candidate.axpy(a_bar * beta_bar * h, &v, 1.0);
        self.theta_bar = project_inverse_weighted(candidate, &self.p_bar, cfg.radius())?;
        Ok(gains)
    }
}

impl Step2State {
    pub fn initial(cfg: &EstimatorConfig) -> Self {
        let m = cfg.dim();
        Self {
            theta_hat: cfg.theta0.clone(),
            p: DMatrix::identity(m, m) * cfg.p0_scale,
        }
    }

    /// `theta_bar` is the Step-1 estimate at the same time index, before its
    /// own update.
    pub fn update(
        &mut self,
        theta_bar: &DVector<f64>,
        phi: &DVector<f64>,
        obs: &CensoredObservation,
        th: &Thresholds,
        cfg: &EstimatorConfig,
    ) -> Result<Step2Gains> {
        let noise = &cfg.noise;
        let y_bar = phi.dot(theta_bar);
        let y_hat = phi.dot(&self.theta_hat);
        let mu_hat = SlopeProfile::new(y_bar, th, noise).eval(y_hat);
        let g_gap = regression_g(y_bar, y_hat, th, noise);
        // G(y_bar, y_bar) = 0, so the secant slope is -G(y_bar, y_hat) / (y_bar - y_hat).
        let beta = if (y_bar - y_hat).abs() >= 1e-9 * (1.0 + y_bar.abs()) {
            -g_gap / (y_bar - y_hat)
        } else {
            mu_hat
        };
        let innovation = score_h(obs, y_bar, th, noise) - g_gap;

        let mu = mu_hat.max(cfg.mu_floor * beta);
        let v = &self.p * phi;
        let s = phi.dot(&v);
        let a = 1.0 / (mu + beta * beta * s);
        let gains = Step2Gains {
            mu_hat,
            mu,
            beta,
            a,
            innovation,
        };
        if s == 0.0 {
            return Ok(gains);
        }
        if !(mu > 0.0) {
            if beta == 0.0 {
                // Both responses sit deep in one censored region: no information.
                return Ok(gains);
            }
            return Err(Error::Conditioning(format!(
                "Step-2 slope weight underflowed (mu_hat = {mu_hat:e}, beta = {beta:e})"
            )));
        }

        sym_rank1_sub(&mut self.p, a * beta * beta, &v);
        let mut candidate = self.theta_hat.clone();
        candidate.axpy(a * beta * innovation, &v, 1.0);
        self.theta_hat = project_inverse_weighted(candidate, &self.p, cfg.radius())?;
        Ok(gains)
    }
}

/// `p -= c v v^T`, writing both triangles from one product so `p` stays
/// exactly symmetric.
fn sym_rank1_sub(p: &mut DMatrix<f64>, c: f64, v: &DVector<f64>) {
    let m = v.len();
    for j in 0..m {
        let cv = c * v[j];
        for i in j..m {
            let d = cv * v[i];
            p[(i, j)] -= d;
            if i != j {
                p[(j, i)] -= d;
            }
        }
    }
}

/// Both recursions advanced together.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepEstimator {
    pub step1: Step1State,
    pub step2: Step2State,
    /// Number of observations consumed.
    pub k: usize,
}

impl TwoStepEstimator {
    pub fn new(cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            step1: Step1State::initial(cfg),
            step2: Step2State::initial(cfg),
            k: 0,
        })
    }

    /// Step 2 consumes the incoming Step-1 estimate, then Step 1 advances.
    pub fn update(
        &mut self,
        phi: &DVector<f64>,
        obs: &CensoredObservation,
        th: &Thresholds,
        cfg: &EstimatorConfig,
    ) -> Result<(Step1Gains, Step2Gains)> {
        let g2 = self
            .step2
            .update(&self.step1.theta_bar, phi, obs, th, cfg)
            .map_err(|e| e.at_step(self.k))?;
        let g1 = self
            .step1
            .update(phi, obs, th, cfg)
            .map_err(|e| e.at_step(self.k))?;
        self.k += 1;
        Ok((g1, g2))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            k: self.k as u64,
            theta_bar: self.step1.theta_bar.clone(),
            theta_hat: self.step2.theta_hat.clone(),
            p_bar: self.step1.p_bar.clone(),
            p: self.step2.p.clone(),
        }
    }

    pub fn from_snapshot(s: &Snapshot) -> Self {
        Self {
            step1: Step1State {
                theta_bar: s.theta_bar.clone(),
                p_bar: s.p_bar.clone(),
            },
            step2: Step2State {
                theta_hat: s.theta_hat.clone(),
                p: s.p.clone(),
            },
            k: s.k as usize,
        }
    }
}

/// Free-function form of [`Step1State::update`].
pub fn step1_update(
    state: &Step1State,
    phi: &DVector<f64>,
    obs: &CensoredObservation,
    th: &Thresholds,
    cfg: &EstimatorConfig,
) -> Result<(Step1State, Step1Gains)> {
    let mut next = state.clone();
    let gains = next.update(phi, obs, th, cfg)?;
    Ok((next, gains))
}

/// Free-function form of [`Step2State::update`].
pub fn step2_update(
    state: &Step2State,
    theta_bar: &DVector<f64>,
    phi: &DVector<f64>,
    obs: &CensoredObservation,
    th: &Thresholds,
    cfg: &EstimatorConfig,
) -> Result<(Step2State, Step2Gains)> {
    let mut next = state.clone();
    let gains = next.update(theta_bar, phi, obs, th, cfg)?;
    Ok((next, gains))
}

pub fn two_step_update(
    s1: &Step1State,
    s2: &Step2State,
    phi: &DVector<f64>,
    obs: &CensoredObservation,
    th: &Thresholds,
    cfg: &EstimatorConfig,
) -> Result<(Step1State, Step2State)> {
    let (s2_next, _) = step2_update(s2, &s1.theta_bar, phi, obs, th, cfg)?;
    let (s1_next, _) = step1_update(s1, phi, obs, th, cfg)?;
    Ok((s1_next, s2_next))
}

/// One element of an observation stream.
#[derive(Debug, Clone)]
pub struct StreamItem {
    pub phi: DVector<f64>,
    pub obs: CensoredObservation,
    pub thresholds: Thresholds,
}

/// Estimates recorded at the requested step counts.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// Steps at which Step 1 reported a degraded gain.
    pub degraded_steps: usize,
}

/// Folds the two-step update over `stream`, recording a snapshot whenever
/// the number of consumed observations is listed in `record_at` (0 records
/// the initial state). An empty stream echoes the initial state.
pub fn run_stream<'a>(
    cfg: &EstimatorConfig,
    stream: impl IntoIterator<Item = &'a StreamItem>,
    record_at: &[usize],
) -> Result<Trajectory> {
    let mut est = TwoStepEstimator::new(cfg)?;
    let mut out = Trajectory::default();
    let mut wanted = record_at.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let mut next = wanted.iter().peekable();
    let mut consumed_any = false;
    if next.peek() == Some(&&0) {
        out.snapshots.push(est.snapshot());
        next.next();
    }
    for item in stream {
        consumed_any = true;
        let (g1, _) = est.update(&item.phi, &item.obs, &item.thresholds, cfg)?;
        if g1.degraded {
            out.degraded_steps += 1;
        }
        while let Some(&&k) = next.peek() {
            if k == est.k {
                out.snapshots.push(est.snapshot());
                next.next();
            } else if k < est.k {
                next.next();
            } else {
                break;
            }
        }
    }
    if !consumed_any && out.snapshots.is_empty() {
        out.snapshots.push(est.snapshot());
    }
    Ok(out)
}

/// Step 1 run on its own, reporting the preliminary estimate.
pub fn step1_only<'a>(
    cfg: &EstimatorConfig,
    stream: impl IntoIterator<Item = &'a StreamItem>,
    record_at: &[usize],
) -> Result<Vec<(usize, DVector<f64>)>> {
    cfg.validate()?;
    let mut state = Step1State::initial(cfg);
    let mut out = Vec::new();
    if record_at.contains(&0) {
        out.push((0, state.theta_bar.clone()));
    }
    for (k, item) in stream.into_iter().enumerate() {
        state
            .update(&item.phi, &item.obs, &item.thresholds, cfg)
            .map_err(|e| e.at_step(k))?;
        if record_at.contains(&(k + 1)) {
            out.push((k + 1, state.theta_bar.clone()));
        }
    }
    Ok(out)
}
