//! Convergence of the connector-length law from two different starts.
//!
//! The distance between laws is the two-sample KS distance of the `|r|`
//! marginals. Its same-law scale is estimated from a split of each ensemble
//! into halves.

use serde::{Deserialize, Serialize};

use super::stats::{ks_distance, ols, KS_C95};
use crate::dynamics::{SimParams, Stepper, SystemState};
use crate::error::{ModelError, Result};
use crate::rng::NoiseStream;
use crate::spectral_fluid::ModeSet;
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub n: usize,
    pub times: Vec<f64>,
    /// KS distance between the two ensembles at each time.
    pub distances: Vec<f64>,
    /// Mean split-half KS distance of the two ensembles at each time.
    pub split_half: Vec<f64>,
    /// Distance below which a value is indistinguishable from same-law noise.
    pub noise_band: Vec<f64>,
    /// Each distance either decreased or was already inside the noise band.
    pub monotone: bool,
    /// `d(t) ~ prefactor * exp(-rate t)` over points above the band.
    pub fitted_rate: Option<f64>,
    pub fitted_prefactor: Option<f64>,
    pub fit_residual_sd: Option<f64>,
    pub fit_points: usize,
}

/// Records `|r|` at each of `times` for every member of one ensemble.
fn sample_lengths(
    init: &SystemState<f64>,
    stepper: &Stepper<f64>,
    steps: &[u64],
    n: usize,
    stream_of: impl Fn(u64) -> NoiseStream + Sync,
) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let stream = stream_of(i);
            let mut state = init.clone();
            let mut out = Vec::with_capacity(steps.len());
            let mut done = 0u64;
            for &target in steps {
                for _ in done..target {
                    stepper.step(&mut state, &stream)?;
                }
                done = target;
                out.push(state.r.norm());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    // Transpose to one sample vector per time.
    Ok((0..steps.len())
        .map(|j| rows.iter().map(|row| row[j]).collect())
        .collect())
}

fn split_half(xs: &[f64]) -> f64 {
    let (a, b) = xs.split_at(xs.len() / 2);
    ks_distance(a, b)
}

/// Runs two `n`-member ensembles from `init_a` and `init_b` and compares
/// their `|r|` laws at each time. With `common_noise`, member `i` of both
/// ensembles uses the same noise stream.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_convergence(
    init_a: &SystemState<f64>,
    init_b: &SystemState<f64>,
    params: &SimParams<f64>,
    ms: &ModeSet<f64>,
    times: &[f64],
    n: usize,
    master_seed: u64,
    common_noise: bool,
) -> Result<ErgodicityReport> {
    if n < 4 {
        return Err(ModelError::InvalidParameter("ensemble size must be at least 4".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(ModelError::InvalidParameter(
            "times must be nonnegative and strictly increasing".into(),
        ));
    }
    let stepper = Stepper::new(*params, ms)?;
    let steps: Vec<u64> = times.iter().map(|&t| stepper.steps_for(t)).collect();
    let tag_b = if common_noise { 0 } else { 1 };
    let a = sample_lengths(init_a, &stepper, &steps, n, |i| {
        NoiseStream::derive(master_seed, i).fork(0)
    })?;
    let b = sample_lengths(init_b, &stepper, &steps, n, |i| {
        NoiseStream::derive(master_seed, i).fork(tag_b)
    })?;

    let floor = KS_C95 * (2.0 / n as f64).sqrt();
    let mut distances = Vec::with_capacity(times.len());
    let mut halves = Vec::with_capacity(times.len());
    let mut band = Vec::with_capacity(times.len());
    for (xa, xb) in a.iter().zip(&b) {
        distances.push(ks_distance(xa, xb));
        let sh = 0.5 * (split_half(xa) + split_half(xb));
        halves.push(sh);
        // Halves hold n/2 samples each, so their KS scale is sqrt(2) larger.
        band.push((sh / std::f64::consts::SQRT_2).max(floor));
    }
    let monotone = distances
        .windows(2)
        .zip(&band[1..])
        .all(|(w, &b)| w[1] <= w[0] || w[1] <= b);

    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(distances.iter().zip(&band))
        .filter(|(_, (d, b))| **d > **b)
        .map(|(t, (d, _))| (*t, d.ln()))
        .unzip();
    let fit = ols(&xs, &ys);
    Ok(ErgodicityReport {
        n,
        times: times.to_vec(),
        distances,
        split_half: halves,
        noise_band: band,
        monotone,
        fitted_rate: fit.map(|f| -f.slope),
        fitted_prefactor: fit.map(|f| f.intercept.exp()),
        fit_residual_sd: fit.map(|f| f.residual_sd),
        fit_points: xs.len(),
    })
}
