//! Open-loop control of the connector through the fluid amplitudes.
//!
//! The connector velocity contributed by the fluid is `S(r) z` with the
//! 2 x N Stokes matrix `S(r)`. Any connector path `Gamma` in the annulus where
//! `S` has rank 2 is realized by the minimum-norm amplitudes
//! `z = S^T (S S^T)^{-1} (Gamma' + grad Phi(Gamma))`.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::potentials::{max_grad_on_shell, PotentialSpec};
use crate::scalar::Scalar;
use crate::spectral_fluid::{FluidParams, ModeSet};
use crate::vec2::Vec2;

/// Singular-value cutoff for the rank test, relative to
/// `max(sigma_max, 1)`. Stokes columns have norm at most 1, so the floor
/// keeps roundoff-sized matrices near lattice points from passing.
pub const RANK_TOL: f64 = 1e-10;

/// `S(r)`, stored by rows.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesMatrix<T> {
    pub rows: [Vec<T>; 2],
    pub r: Vec2<T>,
    pub rank2: bool,
    pub sigma_max: T,
    pub sigma_min: T,
}

impl<T: Scalar> StokesMatrix<T> {
    /// Wraps arbitrary rows (used for synthetic matrices).
    pub fn from_rows(row1: Vec<T>, row2: Vec<T>, r: Vec2<T>) -> Result<Self> {
        if row1.len() != row2.len() || row1.is_empty() {
            return Err(ModelError::InvalidParameter("Stokes rows must share a nonzero length".into()));
        }
        let mut s = Self {
            rows: [row1, row2],
            r,
            rank2: false,
            sigma_max: T::zero(),
            sigma_min: T::zero(),
        };
        let (a, b, c) = s.gram();
        let det = s.gram_det();
        let half_trace = (a + c) / T::lit(2.0);
        let gap = (((a - c) / T::lit(2.0)).powi(2) + b * b).sqrt();
        let lmax = half_trace + gap;
        let lmin = if lmax > T::zero() { det / lmax } else { T::zero() };
        s.sigma_max = lmax.max(T::zero()).sqrt();
        s.sigma_min = lmin.max(T::zero()).sqrt();
        s.rank2 = s.sigma_min > T::lit(RANK_TOL) * s.sigma_max.max(T::one());
        Ok(s)
    }

    pub fn ncols(&self) -> usize {
        self.rows[0].len()
    }

    pub fn column(&self, j: usize) -> Vec2<T> {
        Vec2::new(self.rows[0][j], self.rows[1][j])
    }

    /// Entries `(|S_1|^2, S_1 . S_2, |S_2|^2)` of `S S^T`.
    pub fn gram(&self) -> (T, T, T) {
        let [r1, r2] = &self.rows;
        let a = r1.iter().map(|&v| v * v).sum();
        let b = r1.iter().zip(r2).map(|(&u, &v)| u * v).sum();
        let c = r2.iter().map(|&v| v * v).sum();
        (a, b, c)
    }

    /// `det(S S^T)` as the sum of squared 2 x 2 minors, which avoids the
    /// cancellation in `ac - b^2`.
    pub fn gram_det(&self) -> T {
        let n = self.ncols();
        let mut acc = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                let minor = self.column(i).cross(self.column(j));
                acc += minor * minor;
            }
        }
        acc
    }

    /// `S z`.
    pub fn apply(&self, z: &[T]) -> Vec2<T> {
        let [r1, r2] = &self.rows;
        Vec2::new(
            r1.iter().zip(z).map(|(&a, &b)| a * b).sum(),
            r2.iter().zip(z).map(|(&a, &b)| a * b).sum(),
        )
    }

    /// `S^T w`.
    pub fn apply_transpose(&self, w: Vec2<T>) -> Vec<T> {
        (0..self.ncols()).map(|j| self.column(j).dot(w)).collect()
    }
}

/// `S(r)`: column `j` is `sin(lambda k_j . r) k_j⊥ / |k_j|`.
pub fn stokes_matrix<T: Scalar>(ms: &ModeSet<T>, fp: &FluidParams<T>, r: Vec2<T>) -> StokesMatrix<T> {
    let n = ms.len();
    let mut r1 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    for i in 0..n {
        let col = ms.direction(i) * (fp.lambda * ms.wavevector(i).dot(r)).sin();
        r1.push(col.x);
        r2.push(col.y);
    }
    StokesMatrix::from_rows(r1, r2, r).expect("mode sets are nonempty")
}

/// `(S S^T)^{-1}` by the adjugate formula.
pub fn gram_inverse<T: Scalar>(s: &StokesMatrix<T>) -> Result<[[T; 2]; 2]> {
    if !s.rank2 {
        return Err(ModelError::DegenerateStokes);
    }
    let (a, b, c) = s.gram();
    let det = s.gram_det();
    Ok([[c / det, -b / det], [-b / det, a / det]])
}

fn mul2<T: Scalar>(m: &[[T; 2]; 2], v: Vec2<T>) -> Vec2<T> {
    Vec2::new(m[0][0] * v.x + m[0][1] * v.y, m[1][0] * v.x + m[1][1] * v.y)
}

/// Minimum-norm solution of `S z = b`, `z = S^T (S S^T)^{-1} b`, with one
/// step of iterative refinement.
pub fn min_norm_solve<T: Scalar>(s: &StokesMatrix<T>, b: Vec2<T>) -> Result<Vec<T>> {
    let g = gram_inverse(s)?;
    let mut z = s.apply_transpose(mul2(&g, b));
    let residual = b - s.apply(&z);
    for (zi, di) in z.iter_mut().zip(s.apply_transpose(mul2(&g, residual))) {
        *zi += di;
    }
    Ok(z)
}

/// At most two straight unit-speed segments inside the annulus
/// `[eps1, sqrt(2) R0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPlan<T> {
    pub segments: Vec<(Vec2<T>, Vec2<T>)>,
    pub total_time: T,
    pub eps1: T,
    pub r0: T,
}

fn segment_distance_to_origin<T: Scalar>(a: Vec2<T>, b: Vec2<T>) -> T {
    let d = b - a;
    let len2 = d.norm_sq();
    if len2 == T::zero() {
        return a.norm();
    }
    let t = (-(a.dot(d)) / len2).max(T::zero()).min(T::one());
    (a + d * t).norm()
}

fn segment_inside<T: Scalar>(a: Vec2<T>, b: Vec2<T>, inner: T, outer: T) -> bool {
    segment_distance_to_origin(a, b) >= inner && a.norm() <= outer && b.norm() <= outer
}

impl<T: Scalar> PathPlan<T> {
    pub fn outer_radius(&self) -> T {
        T::SQRT_2() * self.r0
    }

    pub fn start(&self) -> Option<Vec2<T>> {
        self.segments.first().map(|s| s.0)
    }

    fn locate(&self, t: T) -> Option<(usize, T)> {
        let mut t0 = T::zero();
        for (i, &(a, b)) in self.segments.iter().enumerate() {
            let len = (b - a).norm();
            if t < t0 + len || i + 1 == self.segments.len() {
                return Some((i, (t - t0).max(T::zero()).min(len)));
            }
            t0 += len;
        }
        None
    }

    /// `Gamma(t)`.
    pub fn position(&self, t: T) -> Vec2<T> {
        match self.locate(t) {
            Some((i, s)) => {
                let (a, b) = self.segments[i];
                let len = (b - a).norm();
                a + (b - a) * (s / len)
            }
            None => Vec2::zero(),
        }
    }

    /// `Gamma'(t)`, right-continuous at the junction.
    pub fn velocity(&self, t: T) -> Vec2<T> {
        match self.locate(t) {
            Some((i, _)) => {
                let (a, b) = self.segments[i];
                (b - a) / (b - a).norm()
            }
            None => Vec2::zero(),
        }
    }

    /// Every sampled point lies in the annulus.
    pub fn is_feasible(&self) -> bool {
        self.segments
            .iter()
            .all(|&(a, b)| segment_inside(a, b, self.eps1, self.outer_radius()))
    }
}

/// Connects `r0` to `r_star` inside the annulus `[eps1, sqrt(2) R0]`.
///
/// The straight segment is used when it stays inside. Otherwise the path
/// goes through a waypoint on the mid-radius circle along the angular
/// bisector of the endpoints (a perpendicular direction when they are
/// antipodal). If that waypoint fails, the shortest feasible waypoint on a
/// polar grid is used.
pub fn plan_path<T: Scalar>(r0: Vec2<T>, r_star: Vec2<T>, eps1: T, big_r0: T) -> Result<PathPlan<T>> {
    let outer = T::SQRT_2() * big_r0;
    if !(eps1 > T::zero() && eps1 < outer) {
        return Err(ModelError::InvalidParameter("need 0 < eps1 < sqrt(2) R0".into()));
    }
    let slack = T::lit(1e-12) * outer;
    for p in [r0, r_star] {
        let rho = p.norm();
        if rho < eps1 - slack || rho > outer + slack {
            return Err(ModelError::OutsideAnnulus {
                radius: rho.to_f64_lossy(),
                inner: eps1.to_f64_lossy(),
                outer: outer.to_f64_lossy(),
            });
        }
    }
    let plan = |segments: Vec<(Vec2<T>, Vec2<T>)>| {
        let total_time = segments.iter().map(|&(a, b)| (b - a).norm()).sum();
        PathPlan {
            segments,
            total_time,
            eps1,
            r0: big_r0,
        }
    };
    if r0 == r_star {
        return Ok(plan(Vec::new()));
    }
    // Endpoints on the boundary count as inside.
    let (lo, hi) = (eps1 - slack, outer + slack);
    if segment_inside(r0, r_star, lo, hi) {
        return Ok(plan(vec![(r0, r_star)]));
    }
    let mid = (eps1 + outer) / T::lit(2.0);
    let two_ok = |w: Vec2<T>| segment_inside(r0, w, lo, hi) && segment_inside(w, r_star, lo, hi);
    let u0 = r0 / r0.norm();
    let bis = u0 + r_star / r_star.norm();
    let dir = if bis.norm() > T::lit(1e-9) { bis / bis.norm() } else { u0.perp() };
    let w = dir * mid;
    if two_ok(w) {
        return Ok(plan(vec![(r0, w), (w, r_star)]));
    }
    let mut best: Option<(T, Vec2<T>)> = None;
    let (n_rad, n_ang) = (16usize, 720usize);
    for i in 0..=n_rad {
        let rho = eps1 + (outer - eps1) * T::from_usize_lossy(i) / T::from_usize_lossy(n_rad);
        for j in 0..n_ang {
            let th = T::TAU() * T::from_usize_lossy(j) / T::from_usize_lossy(n_ang);
            let w = Vec2::from_polar(rho, th);
            if two_ok(w) {
                let len = (w - r0).norm() + (r_star - w).norm();
                if best.is_none_or(|(l, _)| len < l) {
                    best = Some((len, w));
                }
            }
        }
    }
    match best {
        Some((_, w)) => Ok(plan(vec![(r0, w), (w, r_star)])),
        None => Err(ModelError::NoFeasiblePath),
    }
}

/// Sampled fluid amplitudes, linearly interpolated between samples.
/// A time may appear twice (left and right limits at a path corner);
/// evaluation is right-continuous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal<T> {
    pub times: Vec<T>,
    pub values: Vec<Vec<T>>,
    pub sup_norm: T,
    /// Cap `N^3 (1 + max |grad Phi|)` on the annulus.
    pub bound: T,
    pub warnings: Vec<String>,
}

impl<T: Scalar> ControlSignal<T> {
    pub fn duration(&self) -> T {
        self.times.last().copied().unwrap_or_else(T::zero)
    }

    pub fn n_modes(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            return self.values.first().cloned().unwrap_or_default();
        }
        let i = idx - 1;
        if i + 1 >= self.times.len() {
            return self.values[i].clone();
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[i]
            .iter()
            .zip(&self.values[i + 1])
            .map(|(&a, &b)| a + (b - a) * w)
            .collect()
    }

    /// CSV with header `t,z_1..z_N`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.n_modes() {
            write!(w, ",z_{i}")?;
        }
        writeln!(w)?;
        for (t, z) in self.times.iter().zip(&self.values) {
            write!(w, "{t}")?;
            for v in z {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `N^3 (1 + max |grad Phi|)` over the plan's annulus.
pub fn control_bound<T: Scalar>(spec: &PotentialSpec<T>, n_modes: usize, eps1: T, big_r0: T) -> T {
    let outer = T::SQRT_2() * big_r0;
    let outer = spec.max_extension().map_or(outer, |rm| outer.min(rm * T::lit(1.0 - 1e-6)));
    let g = max_grad_on_shell(spec, eps1, outer, 4096);
    T::from_usize_lossy(n_modes).powi(3) * (T::one() + g)
}

/// Samples `z(t) = S^+(Gamma(t)) (Gamma'(t) + grad Phi(Gamma(t)))` along the
/// plan at `samples_per_unit` points per unit path length.
pub fn synthesize_control<T: Scalar>(
    plan: &PathPlan<T>,
    spec: &PotentialSpec<T>,
    ms: &ModeSet<T>,
    fp: &FluidParams<T>,
    samples_per_unit: usize,
) -> Result<ControlSignal<T>> {
    if samples_per_unit == 0 {
        return Err(ModelError::InvalidParameter("samples_per_unit must be positive".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut t0 = T::zero();
    for &(a, b) in &plan.segments {
        let len = (b - a).norm();
        let v = (b - a) / len;
        let n = (len * T::from_usize_lossy(samples_per_unit)).ceil().to_usize().unwrap_or(1).max(1);
        for j in 0..=n {
            let s = len * T::from_usize_lossy(j) / T::from_usize_lossy(n);
            let t = t0 + s;
            let p = a + v * s;
            let grad = crate::potentials::grad_phi(spec, p)?;
            let sm = stokes_matrix(ms, fp, p);
            let z = min_norm_solve(&sm, v + grad)
                .map_err(|_| ModelError::DegenerateStokesAt(t.to_f64_lossy()))?;
            times.push(t);
            values.push(z);
        }
        t0 += len;
    }
    let sup_norm = values
        .iter()
        .map(|z| z.iter().map(|&v| v * v).sum::<T>().sqrt())
        .fold(T::zero(), T::max);
    let bound = control_bound(spec, ms.len(), plan.eps1, plan.r0);
    let mut warnings = Vec::new();
    if sup_norm > bound {
        warnings.push(format!(
            "control sup norm {} exceeds the cap {}",
            sup_norm.to_f64_lossy(),
            bound.to_f64_lossy()
        ));
    }
    Ok(ControlSignal {
        times,
        values,
        sup_norm,
        bound,
        warnings,
    })
}

/// Bounded random perturbation path: unit vectors at evenly spaced knots,
/// linearly interpolated, so its norm never exceeds 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TubePerturbation<T> {
    pub spacing: T,
    pub knots: Vec<Vec<T>>,
}

impl<T: Scalar> TubePerturbation<T> {
    pub fn sample<R: Rng + ?Sized>(n_modes: usize, duration: T, spacing: T, rng: &mut R) -> Self {
        let count = (duration / spacing).ceil().to_usize().unwrap_or(0) + 2;
        let knots = (0..count)
            .map(|_| {
                let g: Vec<T> = (0..n_modes).map(|_| T::standard_normal(rng)).collect();
                let n = g.iter().map(|&v| v * v).sum::<T>().sqrt();
                g.into_iter().map(|v| v / n).collect()
            })
            .collect();
        Self { spacing, knots }
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        let x = (t / self.spacing).max(T::zero());
        let i = x.floor().to_usize().unwrap_or(0).min(self.knots.len() - 2);
        let w = x - T::from_usize_lossy(i);
        self.knots[i]
            .iter()
            .zip(&self.knots[i + 1])
            .map(|(&a, &b)| a + (b - a) * w)
            .collect()
    }
}

/// Knot spacing of the tracking perturbation.
pub const PERTURBATION_SPACING: f64 = 0.25;

/// Integrates `dr/dt = -grad Phi(r) + S(r) z~(t)` from `Gamma(0)`, where
/// `z~ = z + tube_eps w(t)` and `w` is a random path with `|w| <= 1`.
/// Returns `sup_t |Gamma(t) - r(t)|`.
pub fn verify_tracking<T: Scalar, R: Rng + ?Sized>(
    signal: &ControlSignal<T>,
    plan: &PathPlan<T>,
    spec: &PotentialSpec<T>,
    ms: &ModeSet<T>,
    fp: &FluidParams<T>,
    tube_eps: T,
    rng: &mut R,
) -> Result<T> {
    let Some(start) = plan.start() else {
        return Ok(T::zero());
    };
    let w = TubePerturbation::sample(ms.len(), signal.duration(), T::lit(PERTURBATION_SPACING), rng);
    let (half, sixth, two) = (T::lit(0.5), T::one() / T::lit(6.0), T::lit(2.0));
    let max_rel = T::lit(0.05);
    let mut r = start;
    let mut sup = T::zero();
    for i in 0..signal.times.len().saturating_sub(1) {
        let (ta, tb) = (signal.times[i], signal.times[i + 1]);
        if tb <= ta {
            continue;
        }
        // Interpolate within this interval only, so a corner's duplicate
        // sample never leaks into the neighbouring interval.
        let (za, zb) = (&signal.values[i], &signal.values[i + 1]);
        let rhs = |t: T, r: Vec2<T>| -> (Vec2<T>, T) {
            let s = (t - ta) / (tb - ta);
            let mut z: Vec<T> = za.iter().zip(zb).map(|(&a, &b)| a + (b - a) * s).collect();
            if tube_eps != T::zero() {
                for (zi, wi) in z.iter_mut().zip(w.eval(t)) {
                    *zi += tube_eps * wi;
                }
            }
            let grad = spec.grad_unchecked(r);
            let u = stokes_matrix(ms, fp, r).apply(&z);
            (u - grad, grad.norm() + u.norm())
        };
        let mut t = ta;
        let mut halvings = 0u32;
        while t < tb {
            let (k1, speed) = rhs(t, r);
            let limit = if speed > T::zero() { max_rel * r.norm() / speed } else { tb - t };
            let mut h = (tb - t).min(limit);
            for _ in 0..halvings {
                h *= half;
            }
            let (k2, _) = rhs(t + h * half, r + k1 * (h * half));
            let (k3, _) = rhs(t + h * half, r + k2 * (h * half));
            let (k4, _) = rhs(t + h, r + k3 * h);
            let r_new = r + (k1 + k2 * two + k3 * two + k4) * (h * sixth);
            if !r_new.is_finite() || (spec.is_singular() && r_new.norm() == T::zero()) {
                halvings += 1;
                if halvings > crate::dynamics::MAX_HALVINGS {
                    return Err(ModelError::GuardExhausted);
                }
                continue;
            }
            halvings = 0;
            r = r_new;
            t = if h >= tb - t { tb } else { t + h };
            sup = sup.max((plan.position(t) - r).norm());
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseStream;
    use crate::spectral_fluid::{build_mode_set, ModeIndex};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn fp() -> FluidParams<f64> {
        FluidParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn three() -> ModeSet<f64> {
        ModeSet::from_modes(&[
            (ModeIndex::new(1, 0).unwrap(), 1.0),
            (ModeIndex::new(0, 1).unwrap(), 1.0),
            (ModeIndex::new(1, 1).unwrap(), 1.0),
        ])
        .unwrap()
    }

    fn synthetic(r1: &[f64], r2: &[f64]) -> StokesMatrix<f64> {
        StokesMatrix::from_rows(r1.to_vec(), r2.to_vec(), Vec2::zero()).unwrap()
    }

    /// Minimum-norm least-squares oracle via the SVD pseudo-inverse.
    fn oracle(s: &StokesMatrix<f64>, b: Vec2<f64>) -> Vec<f64> {
        let n = s.ncols();
        let m = DMatrix::from_fn(2, n, |i, j| s.rows[i][j]);
        let x = m
            .svd(true, true)
            .solve(&DVector::from_vec(vec![b.x, b.y]), 1e-14)
            .unwrap();
        x.iter().copied().collect()
    }

    #[test]
    fn stokes_vanishes_on_the_lattice() {
        let pi = std::f64::consts::PI;
        let s = stokes_matrix(&three(), &fp(), Vec2::new(pi, pi));
        assert!(s.rows.iter().flatten().all(|v| v.abs() < 1e-15));
        assert!(!s.rank2);
    }

    #[test]
    fn stokes_rank_generic_and_single_mode() {
        let s = stokes_matrix(&three(), &fp(), Vec2::new(0.7, 1.1));
        assert!(s.rank2);
        let single = ModeSet::from_modes(&[(ModeIndex::new(1, 2).unwrap(), 1.0)]).unwrap();
        for i in 0..100 {
            let r = Vec2::from_polar(0.1 + 0.02 * i as f64, 0.37 * i as f64);
            assert!(!stokes_matrix(&single, &fp(), r).rank2);
        }
    }

    #[test]
    fn gram_inverse_examples() {
        let s = synthetic(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(gram_inverse(&s).unwrap(), [[1.0, 0.0], [0.0, 1.0]]);
        let near = synthetic(&[1.0, 1.0], &[1.0, 1.0 + 1e-12]);
        assert_eq!(gram_inverse(&near).unwrap_err().to_string(), "degenerate Stokes matrix");
    }

    #[test]
    fn min_norm_examples() {
        let s = synthetic(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(min_norm_solve(&s, Vec2::new(3.0, 4.0)).unwrap(), vec![3.0, 4.0]);
        let s3 = stokes_matrix(&three(), &fp(), Vec2::new(0.7, 1.1));
        assert!(min_norm_solve(&s3, Vec2::zero()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plan_examples() {
        let p = plan_path(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), 0.1, 2.0).unwrap();
        assert!(p.segments.is_empty() && p.total_time == 0.0);
        let p = plan_path(Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), 0.1, 2.0).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert!((p.total_time - 2f64.sqrt()).abs() < 1e-15);
        let p = plan_path(Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0), 0.5, 2.0).unwrap();
        assert_eq!(p.segments.len(), 2);
        assert!(p.is_feasible());
        assert!(matches!(
            plan_path(Vec2::new(0.05, 0.0), Vec2::new(1.0, 0.0), 0.1, 2.0),
            Err(ModelError::OutsideAnnulus { .. })
        ));
    }

    #[test]
    fn synthetic_force_balance_needs_no_control() {
        // Unit-speed motion towards the origin from |r| = 1 under a unit
        // Hookean spring: the spring alone supplies the velocity.
        let spec = PotentialSpec::hookean(1.0).unwrap();
        let plan = plan_path(Vec2::new(1.0, 0.0), Vec2::new(0.5, 0.0), 0.1, 2.0).unwrap();
        let sig = synthesize_control(&plan, &spec, &three(), &fp(), 64).unwrap();
        // At t = 0: Gamma' = (-1, 0), grad Phi = (1, 0), so b = 0.
        assert!(sig.values[0].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn parallel_modes_are_reported_as_degenerate() {
        let ms = ModeSet::from_modes(&[
            (ModeIndex::new(1, 0).unwrap(), 1.0),
            (ModeIndex::new(2, 0).unwrap(), 1.0),
        ])
        .unwrap();
        let spec = PotentialSpec::power_law(1.0, 12.0).unwrap();
        let plan = plan_path(Vec2::new(1.0, 0.5), Vec2::new(0.5, 1.2), 0.3, 2.0).unwrap();
        let err = synthesize_control(&plan, &spec, &ms, &fp(), 32).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateStokesAt(t) if t == 0.0));
        assert!(err.to_string().starts_with("degenerate Stokes matrix"));
    }

    #[test]
    fn exact_control_tracks_and_error_is_linear_in_tube() {
        let spec = PotentialSpec::power_law(1.0, 12.0).unwrap();
        let plan = plan_path(Vec2::new(1.2, 0.3), Vec2::new(-0.4, 1.5), 0.8, 2.0).unwrap();
        let sig = synthesize_control(&plan, &spec, &three(), &fp(), 256).unwrap();
        let stream = NoiseStream::new(8, 0);
        let e0 = verify_tracking(&sig, &plan, &spec, &three(), &fp(), 0.0, &mut stream.initial_rng()).unwrap();
        assert!(e0 <= 1e-4, "{e0}");
        let e1 = verify_tracking(&sig, &plan, &spec, &three(), &fp(), 0.02, &mut stream.initial_rng()).unwrap();
        let e2 = verify_tracking(&sig, &plan, &spec, &three(), &fp(), 0.01, &mut stream.initial_rng()).unwrap();
        let ratio = e2 / e1;
        assert!((0.3..=0.7).contains(&ratio), "{e1} {e2}");
    }

    #[test]
    fn signal_interpolation_is_right_continuous() {
        let sig = ControlSignal {
            times: vec![0.0, 1.0, 1.0, 2.0],
            values: vec![vec![0.0], vec![1.0], vec![5.0], vec![7.0]],
            sup_norm: 7.0,
            bound: 100.0,
            warnings: vec![],
        };
        assert_eq!(sig.eval(0.5), vec![0.5]);
        assert_eq!(sig.eval(1.0), vec![5.0]);
        assert_eq!(sig.eval(1.5), vec![6.0]);
        assert_eq!(sig.eval(3.0), vec![7.0]);
        let mut buf = Vec::new();
        sig.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,z_1\n0,0\n"));
    }

    #[test]
    fn gram_matches_generic_inverse() {
        let mut rng = NoiseStream::new(2, 0).initial_rng();
        for _ in 0..200 {
            let n = 3 + (f64::unit_uniform(&mut rng) * 5.0) as usize;
            let r1: Vec<f64> = (0..n).map(|_| f64::standard_normal(&mut rng)).collect();
            let r2: Vec<f64> = (0..n).map(|_| f64::standard_normal(&mut rng)).collect();
            let s = synthetic(&r1, &r2);
            let g = gram_inverse(&s).unwrap();
            let (a, b, c) = s.gram();
            let m = nalgebra::Matrix2::new(a, b, b, c).try_inverse().unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((g[i][j] - m[(i, j)]).abs() <= 1e-12 * m.abs().max());
                }
            }
            let prod = nalgebra::Matrix2::new(a, b, b, c) * nalgebra::Matrix2::new(g[0][0], g[0][1], g[1][0], g[1][1]);
            assert!((prod - nalgebra::Matrix2::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn rank_theorem_and_parallel_negative_control() {
        let ms = three();
        let parallel = ModeSet::from_modes(&[
            (ModeIndex::new(1, 1).unwrap(), 1.0),
            (ModeIndex::new(2, 2).unwrap(), 1.0),
        ])
        .unwrap();
        let mut rng = NoiseStream::new(3, 0).initial_rng();
        for _ in 0..10_000 {
            let r = Vec2::from_polar(0.1 + 2.7 * f64::unit_uniform(&mut rng), std::f64::consts::TAU * f64::unit_uniform(&mut rng));
            let s = stokes_matrix(&ms, &fp(), r);
            let lattice = [r.x, r.y, r.x + r.y]
                .iter()
                .any(|&p| (p / std::f64::consts::PI - (p / std::f64::consts::PI).round()).abs() < 1e-6);
            if !lattice {
                assert!(s.rank2, "{r:?}");
            }
            assert!(!stokes_matrix(&parallel, &fp(), r).rank2);
        }
    }

    proptest! {
        #[test]
        fn pseudoinverse_identities(
            n in 3usize..9,
            seed in 0u64..10_000,
            bx in -5.0f64..5.0, by in -5.0f64..5.0,
        ) {
            let ms = build_mode_set::<f64>(3, |_| 1.0, &[]).unwrap();
            let mut rng = NoiseStream::new(seed, 0).initial_rng();
            let r = Vec2::new(3.0 * f64::unit_uniform(&mut rng) - 1.5, 3.0 * f64::unit_uniform(&mut rng) - 1.5);
            let full = stokes_matrix(&ms, &fp(), r);
            let s = StokesMatrix::from_rows(full.rows[0][..n].to_vec(), full.rows[1][..n].to_vec(), r).unwrap();
            prop_assume!(s.rank2 && s.sigma_min > 1e-3);
            let b = Vec2::new(bx, by);
            let z = min_norm_solve(&s, b).unwrap();
            let scale = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            prop_assert!((s.apply(&z) - b).norm() < 1e-10 * scale);
            let o = oracle(&s, b);
            for (a, c) in z.iter().zip(&o) {
                prop_assert!((a - c).abs() < 1e-10 * scale);
            }
            // Orthogonal to the kernel: z lies in the row space.
            let m = DMatrix::from_fn(2, n, |i, j| s.rows[i][j]);
            let svd = m.svd(false, true);
            let vt = svd.v_t.unwrap();
            let p = vt.transpose() * (&vt * DVector::from_vec(z.clone()));
            for (a, c) in z.iter().zip(p.iter()) {
                prop_assert!((a - c).abs() < 1e-10 * scale);
            }
        }

        #[test]
        fn plans_stay_in_annulus(
            a in 0.0f64..6.3, b in 0.0f64..6.3,
            ra in 0.3f64..2.8, rb in 0.3f64..2.8,
        ) {
            let p = plan_path(Vec2::from_polar(ra, a), Vec2::from_polar(rb, b), 0.3, 2.0).unwrap();
            prop_assert!(p.segments.len() <= 2);
            for w in p.segments.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
            }
            for i in 0..=200 {
                let t = p.total_time * i as f64 / 200.0;
                let q = p.position(t).norm();
                prop_assert!(q >= 0.3 - 1e-9 && q <= 2.0 * 2f64.sqrt() + 1e-9);
            }
        }
    }
}
