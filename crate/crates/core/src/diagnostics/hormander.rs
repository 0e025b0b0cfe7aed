//! Bracket-generating rank check for the degenerate noise.
//!
//! Noise enters only the amplitudes: `B_k = e_{2+k}`. Since `B_k` is
//! constant, `[A, B_k] = dA/dz_k = (sin(lambda k.r) k⊥/|k|, -lambda^2 nu |k|^2 e_k)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::RANK_TOL;
use crate::spectral_fluid::{FluidParams, ModeSet};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HormanderReport {
    pub rank: usize,
    pub dim: usize,
    pub full: bool,
}

/// `(2 + N) x 2N` matrix with columns `B_k` followed by `[A, B_k]`.
pub fn bracket_matrix(ms: &ModeSet<f64>, fp: &FluidParams<f64>, r: Vec2<f64>) -> DMatrix<f64> {
    let n = ms.len();
    let mut m = DMatrix::zeros(2 + n, 2 * n);
    for k in 0..n {
        m[(2 + k, k)] = 1.0;
        let col = ms.direction(k) * (fp.lambda * ms.wavevector(k).dot(r)).sin();
        m[(0, n + k)] = col.x;
        m[(1, n + k)] = col.y;
        m[(2 + k, n + k)] = -fp.decay_rate(ms, k);
    }
    m
}

/// Numerical rank of the span of `{B_k, [A, B_k]}` at `r`, with singular
/// values below `1e-10 max(sigma_max, 1)` treated as zero.
pub fn hormander_rank_check(ms: &ModeSet<f64>, fp: &FluidParams<f64>, r: Vec2<f64>) -> HormanderReport {
    let m = bracket_matrix(ms, fp, r);
    let sv = m.singular_values();
    let tol = RANK_TOL * sv.max().max(1.0);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let dim = 2 + ms.len();
    HormanderReport { rank, dim, full: rank == dim }
}
