use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::config::{Auto, InitialFluid, RunConfig};
use super::output::{write_artifacts, Manifest};
use super::CliError;
use crate::control::{plan_path, synthesize_control, verify_tracking, ControlSignal, PathPlan};
use crate::diagnostics::escape::{determine_eps1, escape_thresholds, escape_time_stats};
use crate::diagnostics::ergodic::ergodic_convergence;
use crate::diagnostics::hookean::{default_horizon, forcing_scale, hookean_decay_test};
use crate::diagnostics::hormander::hormander_rank_check;
use crate::diagnostics::lyapunov::{drift_initials, estimate_drift};
use crate::diagnostics::tube::tube_occupancy;
use crate::dynamics::{run_ensemble, simulate, SystemState, TrajectorySummary};
use crate::error::ModelError;
use crate::potentials::{PotentialCertificate, PotentialSpec};
use crate::rng::{mix_key, Channel, NoiseStream};
use crate::scalar::Scalar;
use crate::spectral_fluid::{stationary_sample, FluidState, ModeSet};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Hookean,
    Escape,
    Drift,
    Hormander,
    Converge,
    Tube,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 6] = [
        Diagnostic::Hookean,
        Diagnostic::Escape,
        Diagnostic::Drift,
        Diagnostic::Hormander,
        Diagnostic::Converge,
        Diagnostic::Tube,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::Hookean => "hookean",
            Diagnostic::Escape => "escape",
            Diagnostic::Drift => "drift",
            Diagnostic::Hormander => "hormander",
            Diagnostic::Converge => "converge",
            Diagnostic::Tube => "tube",
        }
    }
}

impl FromStr for Diagnostic {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Diagnostic::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown diagnostic '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Ensemble,
    Control,
    Diagnose(Diagnostic),
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Simulate => f.write_str("simulate"),
            Command::Ensemble => f.write_str("ensemble"),
            Command::Control => f.write_str("control"),
            Command::Diagnose(d) => write!(f, "diagnose {}", d.name()),
        }
    }
}

type Artifacts = Vec<(String, Vec<u8>)>;

fn json<S: Serialize>(name: &str, value: &S) -> Result<(String, Vec<u8>), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok((name.to_string(), bytes))
}

fn csv(name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(String, Vec<u8>), CliError> {
    let mut bytes = Vec::new();
    write(&mut bytes).map_err(|source| CliError::Io { path: PathBuf::from(name), source })?;
    Ok((name.to_string(), bytes))
}

/// Seed for an independent sub-task of a run.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    mix_key(&[seed, tag])
}

fn initial_state(cfg: &RunConfig, ms: &ModeSet<f64>, stream: &NoiseStream) -> SystemState<f64> {
    let fluid = match cfg.sim.initial_fluid {
        InitialFluid::Rest => FluidState::zeros(ms.len(), cfg.sim.cosine_modes),
        InitialFluid::Stationary => {
            stationary_sample(ms, &cfg.fluid, cfg.sim.cosine_modes, &mut stream.initial_rng())
        }
    };
    let state = SystemState::new(cfg.sim.initial_r, fluid);
    if cfg.sim.track_center_of_mass {
        state.with_center_of_mass(Vec2::zero())
    } else {
        state
    }
}

fn eps1_for_control(cfg: &RunConfig, cert: &PotentialCertificate<f64>) -> Result<f64, CliError> {
    match cfg.control.eps1 {
        Auto::Value(v) => Ok(v),
        Auto::Auto if cert.passed_small_r => Ok(cert.eps0),
        Auto::Auto => Err(ModelError::Precondition(
            "potential has no near-origin repulsion; set control.eps1".into(),
        )
        .into()),
    }
}

fn control_plan(
    cfg: &RunConfig,
    ms: &ModeSet<f64>,
) -> Result<(PathPlan<f64>, ControlSignal<f64>), CliError> {
    let cert = cfg.certificate()?;
    let eps1 = eps1_for_control(cfg, &cert)?;
    let plan = plan_path(cfg.control.start, cfg.control.target, eps1, cfg.r0(&cert))?;
    let signal = synthesize_control(&plan, &cfg.potential, ms, &cfg.fluid, cfg.control.samples_per_unit)?;
    Ok((plan, signal))
}

#[derive(Serialize)]
struct TrackingReport {
    tube_eps: f64,
    error_exact: f64,
    error_at_tube_eps: Option<f64>,
    error_at_half_tube_eps: Option<f64>,
    halving_ratio: Option<f64>,
    sup_norm: f64,
    bound: f64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct EnsembleReport<'a> {
    n: usize,
    horizon: f64,
    summaries: &'a [TrajectorySummary],
}

#[derive(Serialize)]
struct HormanderSummary {
    r: Vec2<f64>,
    rank: usize,
    dim: usize,
    full: bool,
    sampled_points: usize,
    sampled_full: usize,
    sampled_min_rank: Option<usize>,
}

fn run_simulate(cfg: &RunConfig, ms: &ModeSet<f64>) -> Result<Artifacts, CliError> {
    let stream = NoiseStream::derive(cfg.seed, 0);
    let traj = simulate(initial_state(cfg, ms, &stream), &cfg.sim_params(), ms, cfg.sim.horizon, &stream)?;
    let spec: PotentialSpec<f64> = cfg.potential;
    Ok(vec![csv("trajectory.csv", |w| traj.write_csv(w, |s| spec.value_radial(s.r.norm())))?])
}

fn run_ensemble_cmd(cfg: &RunConfig, ms: &ModeSet<f64>) -> Result<Artifacts, CliError> {
    let summaries = run_ensemble(
        |stream| initial_state(cfg, ms, stream),
        &cfg.sim_params(),
        ms,
        cfg.sim.horizon,
        cfg.seed,
        cfg.ensemble_n,
        TrajectorySummary::of,
    )?;
    let report = EnsembleReport { n: cfg.ensemble_n, horizon: cfg.sim.horizon, summaries: &summaries };
    Ok(vec![json("ensemble.json", &report)?])
}

fn run_control(cfg: &RunConfig, ms: &ModeSet<f64>) -> Result<Artifacts, CliError> {
    let (plan, signal) = control_plan(cfg, ms)?;
    let rng = NoiseStream::new(cfg.seed, 0).rng(0, Channel::Perturbation);
    let track = |eps: f64| verify_tracking(&signal, &plan, &cfg.potential, ms, &cfg.fluid, eps, &mut rng.clone());
    let error_exact = track(0.0)?;
    let eps = cfg.control.tube_eps;
    let (full, half) = if eps > 0.0 { (Some(track(eps)?), Some(track(eps / 2.0)?)) } else { (None, None) };
    let report = TrackingReport {
        tube_eps: eps,
        error_exact,
        error_at_tube_eps: full,
        error_at_half_tube_eps: half,
        halving_ratio: full.zip(half).map(|(f, h)| h / f),
        sup_norm: signal.sup_norm,
        bound: signal.bound,
        warnings: signal.warnings.clone(),
    };
    Ok(vec![
        json("plan.json", &plan)?,
        csv("control.csv", |w| signal.write_csv(w))?,
        json("tracking.json", &report)?,
    ])
}

fn run_diagnostic(cfg: &RunConfig, ms: &ModeSet<f64>, which: Diagnostic) -> Result<Artifacts, CliError> {
    let d = &cfg.diagnose;
    let params = cfg.sim_params();
    match which {
        Diagnostic::Hookean => {
            let gamma = d.hookean_gamma_factor * forcing_scale(ms, &cfg.fluid);
            if !(gamma > 0.0) {
                return Err(ModelError::Precondition("hookean diagnostic needs a nonzero fluid forcing".into()).into());
            }
            let horizon = default_horizon(gamma, ms, &cfg.fluid)?;
            let rep = hookean_decay_test(gamma, ms, &cfg.fluid, horizon, d.hookean_n, cfg.sim.dt, cfg.seed)?;
            Ok(vec![json("hookean.json", &rep)?])
        }
        Diagnostic::Escape => {
            let cert = cfg.certificate()?;
            let lp = cfg.lyapunov_params(&cert, ms)?;
            let (m, m_tilde) = escape_thresholds(&lp);
            let (eps, eps1_report) = match d.escape_eps {
                Auto::Value(v) => (v, None),
                Auto::Auto => {
                    let rep = determine_eps1(&cert, &params, ms, &lp, d.eps1_n, d.eps1_levels, d.escape_r_low, sub_seed(cfg.seed, 1))?;
                    (rep.eps1, Some(rep))
                }
            };
            let stats = escape_time_stats(&cert, &params, ms, eps, m, m_tilde, d.escape_n, d.escape_horizon, d.escape_r_low.min(eps / 2.0), cfg.seed)?;
            let report = serde_json::json!({ "eps1": eps1_report, "stats": stats });
            Ok(vec![json("escape.json", &report)?])
        }
        Diagnostic::Drift => {
            let cert = cfg.certificate()?;
            let lp = cfg.lyapunov_params(&cert, ms)?;
            let initials = drift_initials(&lp, ms.len(), d.drift_initials, d.drift_decades);
            let rep = estimate_drift(&initials, &params, ms, &lp, d.drift_t, d.drift_n, cfg.seed)?;
            let table = csv("drift.csv", |w| {
                use std::io::Write;
                writeln!(w, "v0,mean_v,se_v,envelope")?;
                for r in &rep.records {
                    writeln!(w, "{},{},{},{}", r.v0, r.mean_v, r.se_v, r.envelope)?;
                }
                Ok(())
            })?;
            Ok(vec![json("drift.json", &serde_json::json!({ "lyapunov": lp, "report": rep }))?, table])
        }
        Diagnostic::Hormander => {
            let at = hormander_rank_check(ms, &cfg.fluid, d.hormander_r);
            let mut rng = NoiseStream::new(cfg.seed, 0).rng(0, Channel::Auxiliary);
            let period = cfg.fluid.period();
            let (mut full, mut min_rank) = (0usize, None::<usize>);
            for _ in 0..d.hormander_points {
                let r = Vec2::new(period * f64::unit_uniform(&mut rng), period * f64::unit_uniform(&mut rng));
                let rep = hormander_rank_check(ms, &cfg.fluid, r);
                full += rep.full as usize;
                min_rank = Some(min_rank.map_or(rep.rank, |m| m.min(rep.rank)));
            }
            let summary = HormanderSummary {
                r: d.hormander_r,
                rank: at.rank,
                dim: at.dim,
                full: at.full,
                sampled_points: d.hormander_points,
                sampled_full: full,
                sampled_min_rank: min_rank,
            };
            Ok(vec![json("hormander.json", &summary)?])
        }
        Diagnostic::Converge => {
            let cert = cfg.certificate()?;
            let lp = cfg.lyapunov_params(&cert, ms)?;
            let eps1 = match d.escape_eps {
                Auto::Value(v) => v,
                Auto::Auto => determine_eps1(&cert, &params, ms, &lp, d.eps1_n, d.eps1_levels, d.escape_r_low, sub_seed(cfg.seed, 1))?.eps1,
            };
            let a = SystemState::new(Vec2::new(eps1, 0.0), FluidState::zeros(ms.len(), false));
            let b = SystemState::new(Vec2::new(std::f64::consts::SQRT_2 * lp.r0, 0.0), FluidState::zeros(ms.len(), false));
            let rep = ergodic_convergence(&a, &b, &params, ms, &d.converge_times, d.converge_n, cfg.seed, false)?;
            let table = csv("converge.csv", |w| {
                use std::io::Write;
                writeln!(w, "t,distance,split_half,noise_band")?;
                for i in 0..rep.times.len() {
                    writeln!(w, "{},{},{},{}", rep.times[i], rep.distances[i], rep.split_half[i], rep.noise_band[i])?;
                }
                Ok(())
            })?;
            Ok(vec![json("converge.json", &serde_json::json!({ "eps1": eps1, "report": rep }))?, table])
        }
        Diagnostic::Tube => {
            let (_, signal) = control_plan(cfg, ms)?;
            let occ = tube_occupancy(ms, &cfg.fluid, &signal, d.tube_eps, d.tube_n, d.tube_dt, cfg.seed)?;
            Ok(vec![json("tube.json", &occ)?])
        }
    }
}

/// Runs `cmd`, then writes its artifacts and a manifest into `out_dir`.
/// Nothing is written if the computation fails.
pub fn dispatch(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ms = cfg.mode_set()?;
    let artifacts = match cmd {
        Command::Simulate => run_simulate(cfg, &ms)?,
        Command::Ensemble => run_ensemble_cmd(cfg, &ms)?,
        Command::Control => run_control(cfg, &ms)?,
        Command::Diagnose(d) => run_diagnostic(cfg, &ms, d)?,
    };
    let manifest = Manifest {
        tool: "dumbbell".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.to_string(),
        seed: cfg.seed,
        config: cfg.echo(),
        outputs: Vec::new(),
    };
    write_artifacts(out_dir, &artifacts, manifest)
}
