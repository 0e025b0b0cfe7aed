//! Bead-spring connector advected by a spectral stochastic Stokes field.
//!
//! The connector `r` between two beads obeys
//! `dr/dt = -grad Phi(r) + sum_k sin(lambda k.r) k⊥/|k| z_k`, where the
//! amplitudes `z_k` are independent Ornstein-Uhlenbeck processes. The
//! simulation core is generic over `f32`/`f64`; the diagnostics and the
//! command-line plumbing work in `f64`.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod control;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod potentials;
pub mod rng;
pub mod scalar;
pub mod spectral_fluid;
pub mod vec2;

pub use control::{
    min_norm_solve, plan_path, stokes_matrix, synthesize_control, verify_tracking, ControlSignal, PathPlan,
    StokesMatrix,
};
pub use dynamics::{ensemble_map, run_ensemble, simulate, SimParams, Stepper, SystemState, Trajectory};
pub use error::{ModelError, Result};
pub use potentials::{certify, grad_phi, phi, verify_assumptions, PotentialCertificate, PotentialSpec};
pub use rng::{Channel, NoiseStream};
pub use scalar::Scalar;
pub use spectral_fluid::{
    build_mode_set, eval_field, eval_velocity, ou_step_exact, stationary_sample, FluidParams, FluidState, ModeIndex,
    ModeSet, RadialShape,
};
pub use vec2::Vec2;

pub type Vec2f64 = Vec2<f64>;
pub type Vec2f32 = Vec2<f32>;
pub type ModeSet64 = ModeSet<f64>;
pub type ModeSet32 = ModeSet<f32>;
pub type FluidParams64 = FluidParams<f64>;
pub type FluidParams32 = FluidParams<f32>;
pub type FluidState64 = FluidState<f64>;
pub type FluidState32 = FluidState<f32>;
pub type PotentialSpec64 = PotentialSpec<f64>;
pub type PotentialSpec32 = PotentialSpec<f32>;
pub type SimParams64 = SimParams<f64>;
pub type SimParams32 = SimParams<f32>;
pub type SystemState64 = SystemState<f64>;
pub type SystemState32 = SystemState<f32>;
pub type StokesMatrix64 = StokesMatrix<f64>;
pub type StokesMatrix32 = StokesMatrix<f32>;
pub type PathPlan64 = PathPlan<f64>;
pub type ControlSignal64 = ControlSignal<f64>;
