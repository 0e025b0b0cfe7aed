//! Escape of the connector from a neighbourhood of the origin.

use std::ops::ControlFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lyapunov::LyapunovParams;
use super::stats::{wilson_interval, Z95};
use crate::dynamics::{ensemble_map, SimParams, Stepper, SystemState};
use crate::error::{ModelError, Result};
use crate::potentials::PotentialCertificate;
use crate::scalar::Scalar;
use crate::spectral_fluid::{FluidState, ModeSet};
use crate::vec2::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeRun {
    /// First time with `|r| >= eps`.
    pub exit_time: Option<f64>,
    /// First time with `|r| >= eps` and `||z|| < M_tilde`.
    pub escape_time: Option<f64>,
    pub min_r: f64,
    pub finite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeStats {
    pub eps: f64,
    pub m: f64,
    pub m_tilde: f64,
    pub n: usize,
    pub horizon: f64,
    /// Fraction with escape time `<= 1`.
    pub p_escape_unit_time: f64,
    pub p_escape_ci: (f64, f64),
    /// Fraction leaving the `eps`-ball by time 1, regardless of `||z||`.
    pub p_exit_unit_time: f64,
    pub exited: usize,
    pub escaped: usize,
    pub max_exit_time: Option<f64>,
    pub max_escape_time: Option<f64>,
    pub min_r: f64,
    pub nonfinite_runs: usize,
}

/// Point uniformly distributed in the Euclidean ball of radius `radius`.
pub fn uniform_in_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| f64::standard_normal(rng)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = radius * f64::unit_uniform(rng).powf(1.0 / dim as f64) / norm;
    g.into_iter().map(|v| v * scale).collect()
}

/// Runs `n` trajectories from `|r0|` log-uniform in `[r_low, eps0]` and
/// `z0` uniform in the ball of radius `M`, until escape or `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn escape_time_stats(
    cert: &PotentialCertificate<f64>,
    params: &SimParams<f64>,
    ms: &ModeSet<f64>,
    eps: f64,
    m: f64,
    m_tilde: f64,
    n: usize,
    horizon: f64,
    r_low: f64,
    master_seed: u64,
) -> Result<EscapeStats> {
    if !cert.passed_small_r {
        return Err(ModelError::Precondition(
            "potential has no certified near-origin repulsion".into(),
        ));
    }
    if !(eps > 0.0 && eps <= cert.eps0) {
        return Err(ModelError::Precondition(format!(
            "eps = {eps} must lie in (0, eps0 = {}]",
            cert.eps0
        )));
    }
    if !(m > 0.0 && m_tilde > m) {
        return Err(ModelError::Precondition("need M_tilde > M > 0".into()));
    }
    if !(r_low > 0.0 && r_low < cert.eps0) {
        return Err(ModelError::Precondition("need 0 < r_low < eps0".into()));
    }
    let stepper = Stepper::new(*params, ms)?;
    let n_steps = stepper.steps_for(horizon);
    let (lo, hi) = (r_low.ln(), cert.eps0.ln());
    let runs = ensemble_map(master_seed, n, |stream| {
        let mut rng = stream.initial_rng();
        let rho = (lo + (hi - lo) * f64::unit_uniform(&mut rng)).exp();
        let angle = std::f64::consts::TAU * f64::unit_uniform(&mut rng);
        let z = uniform_in_ball(ms.len(), m, &mut rng);
        let mut state = SystemState::new(
            Vec2::from_polar(rho, angle),
            FluidState { z, y: None, time: 0.0 },
        );
        let mut run = EscapeRun { exit_time: None, escape_time: None, min_r: rho, finite: true };
        let check = |s: &SystemState<f64>, run: &mut EscapeRun| {
            let r = s.r.norm();
            run.min_r = run.min_r.min(r);
            run.finite &= s.r.is_finite();
            if r >= eps {
                run.exit_time.get_or_insert(s.time);
                if s.fluid.z_norm() < m_tilde {
                    run.escape_time = Some(s.time);
                    return ControlFlow::Break(());
                }
            }
            ControlFlow::Continue(())
        };
        if check(&state, &mut run).is_continue() {
            stepper.run(&mut state, &stream, n_steps, |s| check(s, &mut run))?;
        }
        Ok(run)
    })?;
    let count_by = |f: &dyn Fn(&EscapeRun) -> bool| runs.iter().filter(|r| f(r)).count();
    let escaped_unit = count_by(&|r| r.escape_time.is_some_and(|t| t <= 1.0));
    let exited_unit = count_by(&|r| r.exit_time.is_some_and(|t| t <= 1.0));
    let max_opt = |f: &dyn Fn(&EscapeRun) -> Option<f64>| {
        runs.iter()
            .map(f)
            .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)))
    };
    Ok(EscapeStats {
        eps,
        m,
        m_tilde,
        n,
        horizon,
        p_escape_unit_time: escaped_unit as f64 / n as f64,
        p_escape_ci: wilson_interval(escaped_unit, n, Z95),
        p_exit_unit_time: exited_unit as f64 / n as f64,
        exited: count_by(&|r| r.exit_time.is_some()),
        escaped: count_by(&|r| r.escape_time.is_some()),
        max_exit_time: max_opt(&|r| r.exit_time),
        max_escape_time: max_opt(&|r| r.escape_time),
        min_r: runs.iter().map(|r| r.min_r).fold(f64::INFINITY, f64::min),
        nonfinite_runs: count_by(&|r| !r.finite),
    })
}

/// Bad-set radius and the thresholds it was derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eps1Report {
    pub eps1: f64,
    pub m: f64,
    pub m_tilde: f64,
    pub stats: EscapeStats,
}

/// Fluid thresholds for the bad-set escape: `M_tilde = sqrt(2) R0 / eta`
/// and `M = min(R0, M_tilde / 2)`, which keeps `M < M_tilde`.
pub fn escape_thresholds(lp: &LyapunovParams) -> (f64, f64) {
    let m_tilde = std::f64::consts::SQRT_2 * lp.r0 / lp.eta;
    (lp.r0.min(m_tilde / 2.0), m_tilde)
}

/// Largest `eps` on the grid `eps0 / 2^j` (`j < levels`) whose unit-time
/// escape estimate is strictly positive.
#[allow(clippy::too_many_arguments)]
pub fn determine_eps1(
    cert: &PotentialCertificate<f64>,
    params: &SimParams<f64>,
    ms: &ModeSet<f64>,
    lp: &LyapunovParams,
    n: usize,
    levels: usize,
    r_low: f64,
    master_seed: u64,
) -> Result<Eps1Report> {
    let (m, m_tilde) = escape_thresholds(lp);
    let mut last = None;
    for j in 0..levels.max(1) {
        let eps = cert.eps0 / 2f64.powi(j as i32);
        let stats = escape_time_stats(cert, params, ms, eps, m, m_tilde, n, 1.0, r_low.min(eps / 2.0), master_seed)?;
        if stats.p_escape_unit_time > 0.0 {
            return Ok(Eps1Report { eps1: eps, m, m_tilde, stats });
        }
        last = Some(stats);
    }
    Err(ModelError::Precondition(format!(
        "no eps on the grid escapes within unit time (last estimate {:?})",
        last.map(|s| s.p_escape_unit_time)
    )))
}
