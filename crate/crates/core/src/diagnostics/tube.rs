//! Probability that the free fluid amplitudes shadow a reference control.

use serde::{Deserialize, Serialize};

use super::stats::{wilson_interval, Z95};
use crate::control::ControlSignal;
use crate::dynamics::ensemble_map;
use crate::error::{ModelError, Result};
use crate::rng::Channel;
use crate::spectral_fluid::{FluidParams, ModeSet, OuPropagator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeOccupancy {
    pub tube_eps: f64,
    pub n: usize,
    pub hits: usize,
    pub probability: f64,
    pub ci: (f64, f64),
    pub duration: f64,
    pub dt: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Monte Carlo estimate of `P(sup_t ||z(t) - z_ref(t)|| < tube_eps)` for
/// the OU amplitudes started at `z_ref(0)`, checked on a `dt` grid over
/// the control's duration.
pub fn tube_occupancy(
    ms: &ModeSet<f64>,
    fp: &FluidParams<f64>,
    reference: &ControlSignal<f64>,
    tube_eps: f64,
    n: usize,
    dt: f64,
    master_seed: u64,
) -> Result<TubeOccupancy> {
    if !(tube_eps > 0.0) {
        return Err(ModelError::Precondition("tube_eps must be positive".into()));
    }
    if !(dt > 0.0) {
        return Err(ModelError::InvalidParameter("dt must be positive".into()));
    }
    if reference.n_modes() != ms.len() {
        return Err(ModelError::InvalidParameter(format!(
            "control has {} modes, mode set has {}",
            reference.n_modes(),
            ms.len()
        )));
    }
    let duration = reference.duration();
    let n_steps = if duration > 0.0 { (duration / dt - 1e-9).ceil() as u64 } else { 0 };
    let h = if n_steps > 0 { duration / n_steps as f64 } else { 0.0 };
    let prop = OuPropagator::new(ms, fp, h)?;
    let start = reference.times.first().copied().unwrap_or(0.0);
    let z0 = reference.eval(start);
    let inside = ensemble_map(master_seed, n, |stream| {
        let mut z = z0.clone();
        for step in 0..n_steps {
            prop.advance(&mut z, &mut stream.rng(step, Channel::Auxiliary));
            let t = start + (step + 1) as f64 * h;
            if dist(&z, &reference.eval(t)) >= tube_eps {
                return Ok(false);
            }
        }
        Ok(true)
    })?;
    let hits = inside.iter().filter(|&&b| b).count();
    Ok(TubeOccupancy {
        tube_eps,
        n,
        hits,
        probability: hits as f64 / n.max(1) as f64,
        ci: wilson_interval(hits, n, Z95),
        duration,
        dt: h,
    })
}
