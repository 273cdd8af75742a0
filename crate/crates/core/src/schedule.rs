//! Cumulative noise schedule and the forward corruption process.

use std::f64::consts::PI;

use crate::error::CoreError;
use crate::traj::TrajectorySet;

/// Cumulative schedule ᾱ_0..ᾱ_K with ᾱ_0 = 1, strictly decreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of diffusion steps K.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }
}

/// Cosine schedule: ᾱ_k = cos²(((k/K + s)/(1 + s))·π/2) normalized so that
/// ᾱ_0 = 1, with the usual offset s = 0.008.
pub fn cosine_schedule(k_steps: usize) -> Result<NoiseSchedule, CoreError> {
    if k_steps == 0 {
        return Err(CoreError::InvalidInput("schedule needs K >= 1".into()));
    }
    const S: f64 = 0.008;
    let f = |u: f64| (((u + S) / (1.0 + S)) * PI / 2.0).cos().powi(2);
    let f0 = f(0.0);
    let alpha_bar = (0..=k_steps)
        .map(|k| f(k as f64 / k_steps as f64) / f0)
        .collect();
    Ok(NoiseSchedule { alpha_bar })
}

/// Forward corruption x_k = √ᾱ_k·x_0 + √(1−ᾱ_k)·ε.
pub fn forward_noise(
    x0: &TrajectorySet,
    k: usize,
    noise: &TrajectorySet,
    sched: &NoiseSchedule,
) -> Result<TrajectorySet, CoreError> {
    if k > sched.steps() {
        return Err(CoreError::InvalidInput(format!(
            "step {k} out of range for K={}",
            sched.steps()
        )));
    }
    let ab = sched.alpha_bar[k];
    let (signal, sigma) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(noise, |x, e| x.scale(signal) + e.scale(sigma))
}
