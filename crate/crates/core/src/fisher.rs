//! Fisher information along simulated trajectories and the Cramér–Rao
//! summaries built from it.
//!
//! `FisherAccumulator` holds `sum_k lambda(phi_k^T theta) phi_k phi_k^T` for
//! one trajectory at the true parameter. Averaging the accumulators of many
//! independent trajectories estimates `Delta_n(theta)`, whose inverse trace
//! is the bound the mean squared error is compared against.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernel::{fisher_weight, NoiseModel, Thresholds};

#[derive(Debug, Clone, PartialEq)]
pub struct FisherAccumulator {
    pub lambda_sum: DMatrix<f64>,
    pub n: usize,
}

impl FisherAccumulator {
    pub fn new(m: usize) -> Self {
        Self {
            lambda_sum: DMatrix::zeros(m, m),
            n: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda_sum.nrows()
    }

    /// Adds `lambda(x) phi phi^T` where `x = phi^T theta` at the true parameter.
    pub fn accumulate(&mut self, phi: &DVector<f64>, x: f64, th: &Thresholds, noise: &NoiseModel) {
        self.add_weighted(phi, fisher_weight(x, th, noise));
    }

    /// Adds `w phi phi^T`, writing both triangles from one product.
    pub fn add_weighted(&mut self, phi: &DVector<f64>, w: f64) {
        let m = phi.len();
        for j in 0..m {
            let wj = w * phi[j];
            for i in j..m {
                let d = wj * phi[i];
                self.lambda_sum[(i, j)] += d;
                if i != j {
                    self.lambda_sum[(j, i)] += d;
                }
            }
        }
        self.n += 1;
    }

    /// Matrix sum of two accumulators over disjoint data.
    pub fn merge(&mut self, other: &FisherAccumulator) {
        self.lambda_sum += &other.lambda_sum;
        self.n += other.n;
    }
}

/// Monte Carlo estimate of `Delta_n` with its entrywise standard error.
#[derive(Debug, Clone)]
pub struct DeltaEstimate {
    pub mean: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub replications: usize,
}

/// Averages per-trajectory accumulators, summed in the given order.
pub fn average_accumulators<'a>(accs: impl IntoIterator<Item = &'a FisherAccumulator>) -> Result<DeltaEstimate> {
    let mut iter = accs.into_iter().peekable();
    let m = iter
        .peek()
        .map(|a| a.dim())
        .ok_or_else(|| Error::invalid("Fisher average", "no replications"))?;
    let mut sum = DMatrix::zeros(m, m);
    let mut sum_sq = DMatrix::zeros(m, m);
    let mut r = 0usize;
    for acc in iter {
        if acc.dim() != m {
            return Err(Error::invalid("Fisher average", "accumulators of different dimension"));
        }
        sum += &acc.lambda_sum;
        sum_sq += acc.lambda_sum.component_mul(&acc.lambda_sum);
        r += 1;
    }
    let rf = r as f64;
    let mean = sum / rf;
    let std_error = if r > 1 {
        let var = (sum_sq / rf - mean.component_mul(&mean)).map(|v| v.max(0.0)) * (rf / (rf - 1.0));
        var.map(|v| (v / rf).sqrt())
    } else {
        DMatrix::zeros(m, m)
    };
    Ok(DeltaEstimate {
        mean,
        std_error,
        replications: r,
    })
}

/// `tr(delta^{-1})` via Cholesky; a numerically singular `delta` means the
/// signals have not excited every direction yet.
pub fn crb_trace(delta: &DMatrix<f64>) -> Result<f64> {
    let m = delta.nrows();
    if m == 0 || !delta.is_square() {
        return Err(Error::Conditioning("information matrix must be square and non-empty".into()));
    }
    let chol = delta
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("information matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let min_pivot = (0..m).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    let max_pivot = (0..m).map(|i| l[(i, i)]).fold(0.0, f64::max);
    if !(min_pivot > max_pivot * 1e-7) {
        return Err(Error::Conditioning(format!(
            "information matrix is numerically singular (Cholesky pivot ratio {:.3e})",
            min_pivot / max_pivot
        )));
    }
    Ok(chol.inverse().trace())
}

/// Symmetric positive semidefinite square root.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_power(a, 0.5)
}

fn sym_power(a: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).powf(power));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&d) * v.transpose();
    out = (&out + out.transpose()) * 0.5;
    out
}

/// `|Delta^{1/2} Lambda^{1/2} - I|` in spectral norm, where
/// `Lambda^{-1} = lambda_sum` is one trajectory's information.
pub fn r1_ratio(delta: &DMatrix<f64>, lambda_sum: &DMatrix<f64>) -> f64 {
    let m = delta.nrows();
    let lam_half = sym_power(lambda_sum, -0.5);
    if lam_half.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let prod = sym_sqrt(delta) * lam_half - DMatrix::identity(m, m);
    prod.singular_values().max()
}

/// Summary of `z_r = Delta^{1/2} theta_err_r` over replications.
#[derive(Debug, Clone)]
pub struct NormalityReport {
    pub replications: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub max_abs_offdiag: f64,
    pub diag_min: f64,
    pub diag_max: f64,
    /// Jarque–Bera statistic per coordinate; about chi-squared with 2
    /// degrees of freedom under normality.
    pub jarque_bera: DVector<f64>,
}

impl NormalityReport {
    /// `key = value` lines.
    pub fn to_key_values(&self, prefix: &str) -> Vec<(String, String)> {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
        vec![
            (format!("{prefix}replications"), self.replications.to_string()),
            (format!("{prefix}mean"), join(&mut self.mean.iter().copied())),
            (format!("{prefix}cov_diag_min"), format!("{:.6}", self.diag_min)),
            (format!("{prefix}cov_diag_max"), format!("{:.6}", self.diag_max)),
            (format!("{prefix}cov_max_abs_offdiag"), format!("{:.6}", self.max_abs_offdiag)),
            (format!("{prefix}jarque_bera"), join(&mut self.jarque_bera.iter().copied())),
        ]
    }
}

/// Whitens each error by `Delta^{1/2}` and summarizes the result, which is
/// approximately standard normal when the estimator is efficient.
pub fn normality_diagnostic(errors: &[DVector<f64>], delta: &DMatrix<f64>) -> Result<NormalityReport> {
    let r = errors.len();
    if r < 2 {
        return Err(Error::invalid("normality diagnostic", "need at least two replications"));
    }
    let m = delta.nrows();
    if errors.iter().any(|e| e.len() != m) {
        return Err(Error::invalid("normality diagnostic", "error dimension does not match delta"));
    }
    let root = sym_sqrt(delta);
    let z: Vec<DVector<f64>> = errors.iter().map(|e| &root * e).collect();
    let rf = r as f64;
    let mean = z.iter().fold(DVector::zeros(m), |acc, v| acc + v) / rf;
    let mut covariance = DMatrix::zeros(m, m);
    for v in &z {
        let d = v - &mean;
        covariance.ger(1.0, &d, &d, 1.0);
    }
    covariance /= rf - 1.0;

    let mut max_abs_offdiag: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                max_abs_offdiag = max_abs_offdiag.max(covariance[(i, j)].abs());
            }
        }
    }
    let diag = covariance.diagonal();
    let jarque_bera = DVector::from_fn(m, |i, _| {
        let mu = mean[i];
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in &z {
            let d = v[i] - mu;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= rf;
        m3 /= rf;
        m4 /= rf;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        rf / 6.0 * (skew * skew + 0.25 * (kurt - 3.0) * (kurt - 3.0))
    });
    Ok(NormalityReport {
        replications: r,
        mean,
        max_abs_offdiag,
        diag_min: diag.min(),
        diag_max: diag.max(),
        covariance,
        jarque_bera,
    })
}
