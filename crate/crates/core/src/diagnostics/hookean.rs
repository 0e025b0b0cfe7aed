//! Collapse of the connector under a strong Hookean spring.
//!
//! Along every path, `|r(t)|^2 <= |r(0)|^2 exp(-2 gamma t + 2 lambda I(t))`
//! with `I(t) = int_0^t sum_k |k| |z_k(s)| ds`, so the connector decays
//! whenever `gamma` beats the time average of `lambda sum_k |k| |z_k|`.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::stats::median;
use crate::dynamics::{ensemble_map, SimParams, Stepper, SystemState};
use crate::error::{ModelError, Result};
use crate::potentials::PotentialSpec;
use crate::scalar::Scalar;
use crate::spectral_fluid::{sigma_norm, stationary_sample, FluidParams, ModeSet};
use crate::vec2::Vec2;

/// Relative slack allowed on the pathwise envelope.
pub const ENVELOPE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookeanRun {
    pub log_rate: f64,
    pub final_ratio: f64,
    /// `I(T) / T`.
    pub forcing_average: f64,
    /// Largest `|r(t)|^2 / envelope(t)` over recorded times.
    pub worst_envelope_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookeanReport {
    pub gamma: f64,
    pub horizon: f64,
    pub n: usize,
    /// Ensemble median of `log |r(T)|^2 / T`.
    pub empirical_rate: f64,
    /// `-2 gamma + 2 lambda sqrt(beta) ||sigma||_0`.
    pub lln_threshold: f64,
    /// Ensemble mean of `I(T) / T`.
    pub forcing_average: f64,
    /// `-2 gamma + 2 lambda forcing_average`.
    pub empirical_threshold: f64,
    pub max_final_ratio: f64,
    pub envelope_violations: usize,
    pub worst_envelope_ratio: f64,
    pub runs: Vec<HookeanRun>,
}

/// `lambda sqrt(beta) ||sigma||_0`.
pub fn forcing_scale(ms: &ModeSet<f64>, fp: &FluidParams<f64>) -> f64 {
    fp.lambda * fp.beta.sqrt() * sigma_norm(ms, 0.0)
}

/// Horizon `5 ln(1e6) / (2 gamma - 2 lambda sqrt(beta) ||sigma||_0)`.
pub fn default_horizon(gamma: f64, ms: &ModeSet<f64>, fp: &FluidParams<f64>) -> Result<f64> {
    let margin = 2.0 * gamma - 2.0 * forcing_scale(ms, fp);
    if !(margin > 0.0) {
        return Err(ModelError::Precondition(
            "gamma must exceed lambda sqrt(beta) ||sigma||_0".into(),
        ));
    }
    Ok(5.0 * 1e6f64.ln() / margin)
}

fn forcing_sum(ms: &ModeSet<f64>, z: &[f64]) -> f64 {
    z.iter().enumerate().map(|(i, v)| ms.knorm(i) * v.abs()).sum()
}

/// Runs `n` Hookean trajectories from unit connectors at random angles and
/// stationary fluid, recording every step.
pub fn hookean_decay_test(
    gamma: f64,
    ms: &ModeSet<f64>,
    fp: &FluidParams<f64>,
    horizon: f64,
    n: usize,
    dt: f64,
    master_seed: u64,
) -> Result<HookeanReport> {
    let mut params = SimParams::new(*fp, PotentialSpec::hookean(gamma)?).with_dt(dt);
    params.record_stride = 1;
    let stepper = Stepper::new(params, ms)?;
    let n_steps = stepper.steps_for(horizon);
    let lambda = fp.lambda;
    let runs = ensemble_map(master_seed, n, |stream| {
        let mut rng = stream.initial_rng();
        let angle = std::f64::consts::TAU * f64::unit_uniform(&mut rng);
        let fluid = stationary_sample(ms, fp, false, &mut rng);
        let mut state = SystemState::new(Vec2::from_polar(1.0, angle), fluid);
        let r0_sq = state.r.norm_sq();
        let mut integral = 0.0;
        let mut prev = forcing_sum(ms, &state.fluid.z);
        let mut worst = 0.0f64;
        stepper.run(&mut state, &stream, n_steps, |s| {
            let cur = forcing_sum(ms, &s.fluid.z);
            integral += 0.5 * (prev + cur) * dt;
            prev = cur;
            let log_env = r0_sq.ln() - 2.0 * gamma * s.time + 2.0 * lambda * integral;
            worst = worst.max((s.r.norm_sq().ln() - log_env).exp());
            ControlFlow::Continue(())
        })?;
        let t = state.time;
        Ok(HookeanRun {
            log_rate: (state.r.norm_sq() / r0_sq).ln() / t,
            final_ratio: (state.r.norm_sq() / r0_sq).sqrt(),
            forcing_average: integral / t,
            worst_envelope_ratio: worst,
        })
    })?;
    let rates: Vec<f64> = runs.iter().map(|r| r.log_rate).collect();
    let forcing_average = runs.iter().map(|r| r.forcing_average).sum::<f64>() / n as f64;
    Ok(HookeanReport {
        gamma,
        horizon,
        n,
        empirical_rate: median(&rates),
        lln_threshold: -2.0 * gamma + 2.0 * forcing_scale(ms, fp),
        forcing_average,
        empirical_threshold: -2.0 * gamma + 2.0 * lambda * forcing_average,
        max_final_ratio: runs.iter().map(|r| r.final_ratio).fold(0.0, f64::max),
        envelope_violations: runs
            .iter()
            .filter(|r| r.worst_envelope_ratio > 1.0 + ENVELOPE_SLACK)
            .count(),
        worst_envelope_ratio: runs.iter().map(|r| r.worst_envelope_ratio).fold(0.0, f64::max),
        runs,
    })
}
