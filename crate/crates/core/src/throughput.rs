//! Update-rate measurement for the two-step estimator.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::estimator::{EstimatorConfig, TwoStepEstimator};
use crate::kernel::{saturate, CensoredObservation, NoiseModel, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub m: usize,
    pub steps: usize,
    pub seconds: f64,
    pub updates_per_second: f64,
}

/// Times `steps` calls of the two-step update at dimension `m` on a
/// pre-generated censored stream: regressors with an intercept and
/// coordinates uniform on `[-1, 1]`, outputs clipped to `[-0.5, 1]`.
/// Data generation is excluded from the timing.
pub fn measure_throughput(m: usize, steps: usize, seed: u64) -> Result<Throughput> {
    let noise = NoiseModel::standard();
    let th = Thresholds::clipped(-0.5, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0));
    let d = 2.0;
    if theta.norm() > d {
        theta *= d / theta.norm();
    }
    let mut stream = Vec::with_capacity(steps);
    for _ in 0..steps {
        let phi = DVector::from_fn(m, |i, _| if i == 0 { 1.0 } else { rng.random_range(-1.0..=1.0) });
        let y = saturate(phi.dot(&theta) + rng.sample::<f64, _>(StandardNormal), &th);
        stream.push((phi, CensoredObservation::classify(y, &th)?));
    }
    let cfg = EstimatorConfig::new(m, d, (m as f64).sqrt(), noise);
    let mut est = TwoStepEstimator::new(&cfg)?;
    let start = Instant::now();
    for (phi, obs) in &stream {
        est.update(phi, obs, &th, &cfg)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(Throughput {
        m,
        steps,
        seconds,
        updates_per_second: steps as f64 / seconds.max(f64::MIN_POSITIVE),
    })
}
