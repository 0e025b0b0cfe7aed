//! Numerical checks of the model's structural properties.

pub mod ergodic;
pub mod escape;
pub mod hookean;
pub mod hormander;
pub mod lyapunov;
pub mod stats;
pub mod tube;

pub use ergodic::{ergodic_convergence, ErgodicityReport};
pub use escape::{determine_eps1, escape_thresholds, escape_time_stats, Eps1Report, EscapeStats};
pub use hookean::{hookean_decay_test, HookeanReport};
pub use hormander::{hormander_rank_check, HormanderReport};
pub use lyapunov::{
    choose_lyapunov_params, drift_initials, estimate_drift, lyapunov_value, DriftReport, LyapunovParams,
};
pub use tube::{tube_occupancy, TubeOccupancy};
