use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{saturate, NoiseModel, ThresholdSchedule};

/// Source of the regressors `phi_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SignalGenerator {
    /// A fixed list of regressors, repeated cyclically. Identical in every
    /// replication; only the noise differs.
    Deterministic { sequence: Vec<Vec<f64>> },
    /// Independent draws, uniform on `[-half_width, half_width]^m`. With
    /// `intercept`, the first coordinate is fixed to 1.
    IidBounded {
        half_width: f64,
        #[serde(default)]
        intercept: bool,
    },
    /// Closed loop `phi_{k+1} = y_{k+1} = S_k(Theta^T phi_k + v_{k+1})` from
    /// `phi_0 = 0`; needs as many outputs as regressors.
    Feedback,
}

impl SignalGenerator {
    pub fn validate(&self, m: usize, p: usize, schedule: &ThresholdSchedule) -> Result<()> {
        match self {
            SignalGenerator::Deterministic { sequence } => {
                if sequence.is_empty() {
                    return Err(Error::Config("deterministic generator needs a non-empty sequence".into()));
                }
                if let Some(bad) = sequence.iter().find(|v| v.len() != m) {
                    return Err(Error::Config(format!(
                        "deterministic regressor of length {} does not match m = {m}",
                        bad.len()
                    )));
                }
                if sequence.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Config("deterministic sequence has non-finite entries".into()));
                }
            }
            SignalGenerator::IidBounded { half_width, intercept } => {
                if !(half_width.is_finite() && *half_width > 0.0) {
                    return Err(Error::Config(format!("half_width must be positive, got {half_width}")));
                }
                if *intercept && m < 2 {
                    return Err(Error::Config("an intercept needs m >= 2".into()));
                }
            }
            SignalGenerator::Feedback => {
                if m != p {
                    return Err(Error::Config(format!("feedback generator needs p = m (got m = {m}, p = {p})")));
                }
                if !feedback_extent(schedule).is_finite() {
                    return Err(Error::Config(
                        "feedback generator needs finite L and U so the state stays bounded".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Bound `M` on `|phi_k|` implied by the generator.
    pub fn m_bound(&self, m: usize, schedule: &ThresholdSchedule) -> f64 {
        let bound = match self {
            SignalGenerator::Deterministic { sequence } => sequence
                .iter()
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
            SignalGenerator::IidBounded { half_width, intercept } => {
                let free = if *intercept { m - 1 } else { m } as f64;
                let fixed = if *intercept { 1.0 } else { 0.0 };
                (fixed + free * half_width * half_width).sqrt()
            }
            SignalGenerator::Feedback => feedback_extent(schedule) * (m as f64).sqrt(),
        };
        // M must be positive for the estimator configuration.
        bound.max(f64::MIN_POSITIVE)
    }
}

/// Largest `|L|`, `|U|` over the schedule: the bound on each state coordinate.
fn feedback_extent(schedule: &ThresholdSchedule) -> f64 {
    let entries = match schedule {
        ThresholdSchedule::Constant(t) => std::slice::from_ref(t),
        ThresholdSchedule::Periodic(ts) => ts.as_slice(),
    };
    entries
        .iter()
        .map(|t| t.lower.abs().max(t.upper.abs()))
        .fold(0.0, f64::max)
}

/// One sampled data set: `phis[k]` is the regressor at time `k` and
/// `outputs[k]` the `p` saturated outputs it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub phis: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty()
    }
}

/// Draws `n` steps. Per step the regressor (if random) is drawn before the
/// `p` noise values, in coordinate order.
pub fn generate<R: Rng + ?Sized>(
    generator: &SignalGenerator,
    theta: &DMatrix<f64>,
    n: usize,
    schedule: &ThresholdSchedule,
    noise: &NoiseModel,
    rng: &mut R,
) -> Dataset {
    if let SignalGenerator::Feedback = generator {
        return generate_feedback_trajectory(theta, n, schedule, noise, rng);
    }
    let m = theta.nrows();
    let mut phis = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for k in 0..n {
        let phi = match generator {
            SignalGenerator::Deterministic { sequence } => DVector::from_column_slice(&sequence[k % sequence.len()]),
            SignalGenerator::IidBounded { half_width, intercept } => {
                let h = *half_width;
                DVector::from_fn(m, |i, _| if *intercept && i == 0 { 1.0 } else { rng.random_range(-h..=h) })
            }
            SignalGenerator::Feedback => unreachable!(),
        };
        let y = respond(theta, &phi, schedule, k, noise, rng);
        phis.push(phi);
        outputs.push(y);
    }
    Dataset { phis, outputs }
}

/// Closed-loop trajectory `phi_{k+1} = S_k(Theta^T phi_k + v_{k+1})`, `phi_0 = 0`.
pub fn generate_feedback_trajectory<R: Rng + ?Sized>(
    theta: &DMatrix<f64>,
    n: usize,
    schedule: &ThresholdSchedule,
    noise: &NoiseModel,
    rng: &mut R,
) -> Dataset {
    let m = theta.nrows();
    let mut phis = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    let mut phi = DVector::zeros(m);
    for k in 0..n {
        let y = respond(theta, &phi, schedule, k, noise, rng);
        phis.push(std::mem::replace(&mut phi, y.clone()));
        outputs.push(y);
    }
    Dataset { phis, outputs }
}

fn respond<R: Rng + ?Sized>(
    theta: &DMatrix<f64>,
    phi: &DVector<f64>,
    schedule: &ThresholdSchedule,
    k: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> DVector<f64> {
    let th = schedule.at(k);
    let latent = theta.tr_mul(phi);
    DVector::from_fn(latent.len(), |j, _| {
        let v: f64 = rng.sample(StandardNormal);
        saturate(latent[j] + noise.sigma() * v, th)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Thresholds;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sec5() -> ThresholdSchedule {
        Thresholds::clipped(0.0, 15.0).unwrap().into()
    }

    #[test]
    fn zero_theta_decouples_feedback() {
        let theta = DMatrix::zeros(3, 3);
        let noise = NoiseModel::standard();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let data = generate_feedback_trajectory(&theta, 50, &sec5(), &noise, &mut a);
        assert_eq!(data.phis[0], DVector::zeros(3));
        for k in 0..50 {
            let expected = DVector::from_fn(3, |_, _| saturate(b.sample::<f64, _>(StandardNormal), &Thresholds::clipped(0.0, 15.0).unwrap()));
            assert_eq!(data.outputs[k], expected);
            if k + 1 < 50 {
                assert_eq!(data.phis[k + 1], data.outputs[k]);
            }
        }
    }

    #[test]
    fn feedback_state_is_clipped() {
        let theta = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.5 } else { -0.4 });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = generate_feedback_trajectory(&theta, 500, &sec5(), &NoiseModel::standard(), &mut rng);
        assert!(data.phis.iter().flatten().all(|&v| (0.0..=15.0).contains(&v)));
        let gen = SignalGenerator::Feedback;
        let m_bound = gen.m_bound(4, &sec5());
        assert!(data.phis.iter().all(|p| p.norm() <= m_bound));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let theta = DMatrix::from_element(2, 2, 0.3);
        let gen = SignalGenerator::IidBounded { half_width: 1.0, intercept: true };
        let noise = NoiseModel::standard();
        let run = |s| generate(&gen, &theta, 100, &sec5(), &noise, &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
        assert!(run(4).phis.iter().all(|p| p[0] == 1.0));
    }

    #[test]
    fn validation() {
        let s = sec5();
        assert!(SignalGenerator::Feedback.validate(3, 2, &s).is_err());
        assert!(SignalGenerator::Feedback
            .validate(2, 2, &ThresholdSchedule::Constant(Thresholds::uncensored()))
            .is_err());
        let d = SignalGenerator::Deterministic { sequence: vec![vec![1.0, 2.0]] };
        assert!(d.validate(2, 1, &s).is_ok());
        assert!(d.validate(3, 1, &s).is_err());
        assert!((d.m_bound(2, &s) - 5f64.sqrt()).abs() < 1e-15);
    }
}
