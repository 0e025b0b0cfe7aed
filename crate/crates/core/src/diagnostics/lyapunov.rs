//! Truncated quadratic Lyapunov function and Monte Carlo drift estimates.

use serde::{Deserialize, Serialize};

use super::stats::{mean_se, ols, Z95_ONE_SIDED};
use crate::dynamics::{ensemble_map, SimParams, Stepper, SystemState};
use crate::error::{ModelError, Result};
use crate::scalar::Scalar;
use crate::spectral_fluid::{sigma_norm, FluidParams, FluidState, ModeSet};
use crate::vec2::Vec2;

/// Constants of `V = |r|^2 ∨ R0^2 + eta ||z||^2` and of its drift bound
/// `E V(X_t) <= e^{-a t} V(x0) + (C2 / a)(1 - e^{-a t})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub r0: f64,
    pub eta: f64,
    pub delta: f64,
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
    pub k_min: f64,
    /// Coercivity constant the other constants were derived from.
    pub gamma: f64,
}

impl LyapunovParams {
    /// `e^{-a t} V0 + (C2 / a)(1 - e^{-a t})`.
    pub fn envelope(&self, v0: f64, t: f64) -> f64 {
        let decay = (-self.a * t).exp();
        decay * v0 + self.c2 / self.a * (1.0 - decay)
    }

    /// Threshold `2 C2 / a` above which the affine drift fit is identifiable.
    pub fn fit_threshold(&self) -> f64 {
        2.0 * self.c2 / self.a
    }
}

/// `|r|^2 ∨ R0^2 + eta (||z||^2 + ||y||^2)`.
pub fn lyapunov_value<T: Scalar>(state: &SystemState<T>, lp: &LyapunovParams) -> f64 {
    let r2 = state.r.norm_sq().to_f64_lossy();
    r2.max(lp.r0 * lp.r0) + lp.eta * state.fluid.energy().to_f64_lossy()
}

/// Supremum of admissible `delta`: `min(1, lambda^2 nu k_min^2 / gamma)`.
pub fn delta_supremum(gamma: f64, fp: &FluidParams<f64>, ms: &ModeSet<f64>) -> f64 {
    let k = ms.k_min();
    (fp.lambda * fp.lambda * fp.nu * k * k / gamma).min(1.0)
}

/// Minimal admissible `eta = [gamma (1 - delta)(lambda^2 nu k^2 - delta gamma)]^{-1}`,
/// `a = min(delta gamma, 2 lambda^2 nu k^2)`, `C1 = eta beta nu lambda^2 ||sigma||_0^2`
/// and `C2 = 2 lambda^2 nu k^2 R0^2 + C1`, with `k` the smallest active `|k|`.
pub fn choose_lyapunov_params(
    gamma: f64,
    fp: &FluidParams<f64>,
    ms: &ModeSet<f64>,
    r0: f64,
    delta: f64,
) -> Result<LyapunovParams> {
    if !(gamma > 0.0) || !(r0 > 0.0) {
        return Err(ModelError::InvalidParameter("gamma and R0 must be positive".into()));
    }
    let sup = delta_supremum(gamma, fp, ms);
    if !(delta > 0.0 && delta < sup) {
        return Err(ModelError::InvalidParameter(format!(
            "delta = {delta} must lie in (0, {sup}) = (0, min(1, lambda^2 nu k^2 / gamma))"
        )));
    }
    let k = ms.k_min();
    let rate = fp.lambda * fp.lambda * fp.nu * k * k;
    let eta = 1.0 / (gamma * (1.0 - delta) * (rate - delta * gamma));
    let s0 = sigma_norm(ms, 0.0);
    let c1 = eta * fp.beta * fp.nu * fp.lambda * fp.lambda * s0 * s0;
    Ok(LyapunovParams {
        r0,
        eta,
        delta,
        a: (delta * gamma).min(2.0 * rate),
        c1,
        c2: 2.0 * rate * r0 * r0 + c1,
        k_min: k,
        gamma,
    })
}

/// Monte Carlo estimate of `E V(X_t)` from one initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub v0: f64,
    pub r0_norm: f64,
    pub mean_v: f64,
    pub se_v: f64,
    pub envelope: f64,
    /// `mean_v` exceeds the envelope by more than 3 standard errors.
    pub violation: bool,
    pub used_in_fit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub t: f64,
    pub n_per_initial: usize,
    pub c0_hat: f64,
    pub c1_hat: f64,
    pub c0_se: f64,
    /// One-sided 95% upper confidence bound on `c0`.
    pub c0_upper95: f64,
    pub envelope_c0: f64,
    pub envelope_c1: f64,
    pub violations: usize,
    pub records: Vec<DriftRecord>,
}

/// `count` initial states with `V` log-spaced over `decades` decades from
/// just above `2 C2 / a`, fluid at rest, connectors at spread angles.
pub fn drift_initials(lp: &LyapunovParams, n_modes: usize, count: usize, decades: f64) -> Vec<SystemState<f64>> {
    let v_lo = 1.05 * lp.fit_threshold().max(lp.r0 * lp.r0);
    (0..count)
        .map(|i| {
            let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let v = v_lo * 10f64.powf(decades * frac);
            let angle = 2.399_963_229_728_653 * i as f64;
            SystemState::new(Vec2::from_polar(v.sqrt(), angle), FluidState::zeros(n_modes, false))
        })
        .collect()
}

/// For each initial state runs `n` trajectories to time `t`, estimates
/// `E V(X_t)`, checks the integrated envelope, and fits `E V = c0 V0 + c1`
/// over initials with `V0 > 2 C2 / a`.
pub fn estimate_drift(
    initials: &[SystemState<f64>],
    params: &SimParams<f64>,
    ms: &ModeSet<f64>,
    lp: &LyapunovParams,
    t: f64,
    n: usize,
    master_seed: u64,
) -> Result<DriftReport> {
    if !(t >= 0.0) {
        return Err(ModelError::Precondition("t must be nonnegative".into()));
    }
    if n == 0 || initials.is_empty() {
        return Err(ModelError::Precondition("need at least one initial and one run".into()));
    }
    let v0s: Vec<f64> = initials.iter().map(|s| lyapunov_value(s, lp)).collect();
    if t == 0.0 {
        let records = initials
            .iter()
            .zip(&v0s)
            .map(|(s, &v0)| DriftRecord {
                v0,
                r0_norm: s.r.norm(),
                mean_v: v0,
                se_v: 0.0,
                envelope: v0,
                violation: false,
                used_in_fit: v0 > lp.fit_threshold(),
            })
            .collect();
        return Ok(DriftReport {
            t,
            n_per_initial: n,
            c0_hat: 1.0,
            c1_hat: 0.0,
            c0_se: 0.0,
            c0_upper95: 1.0,
            envelope_c0: 1.0,
            envelope_c1: 0.0,
            violations: 0,
            records,
        });
    }
    let stepper = Stepper::new(*params, ms)?;
    let n_steps = stepper.steps_for(t);
    let total = initials.len() * n;
    let finals = ensemble_map(master_seed, total, |stream| {
        let mut state = initials[stream.trajectory as usize / n].clone();
        stepper.run(&mut state, &stream, n_steps, |_| std::ops::ControlFlow::Continue(()))?;
        Ok(lyapunov_value(&state, lp))
    })?;
    let mut records = Vec::with_capacity(initials.len());
    for (i, s) in initials.iter().enumerate() {
        let (mean_v, se_v) = mean_se(&finals[i * n..(i + 1) * n]);
        let envelope = lp.envelope(v0s[i], t);
        let violation = if se_v > 0.0 {
            mean_v - envelope > 3.0 * se_v
        } else {
            mean_v > envelope * (1.0 + 1e-9)
        };
        records.push(DriftRecord {
            v0: v0s[i],
            r0_norm: s.r.norm(),
            mean_v,
            se_v,
            envelope,
            violation,
            used_in_fit: v0s[i] > lp.fit_threshold(),
        });
    }
    let fit_pts: Vec<&DriftRecord> = records.iter().filter(|r| r.used_in_fit).collect();
    let x: Vec<f64> = fit_pts.iter().map(|r| r.v0).collect();
    let y: Vec<f64> = fit_pts.iter().map(|r| r.mean_v).collect();
    let (c0_hat, c1_hat, c0_se) = match ols(&x, &y) {
        Some(f) => {
            // Monte Carlo error of the means, propagated through the slope.
            let mx = x.iter().sum::<f64>() / x.len() as f64;
            let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
            let mc_se = fit_pts
                .iter()
                .map(|r| ((r.v0 - mx) / sxx * r.se_v).powi(2))
                .sum::<f64>()
                .sqrt();
            (f.slope, f.intercept, f.se_slope.max(mc_se))
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    let decay = (-lp.a * t).exp();
    Ok(DriftReport {
        t,
        n_per_initial: n,
        c0_hat,
        c1_hat,
        c0_se,
        c0_upper95: c0_hat + Z95_ONE_SIDED * c0_se,
        envelope_c0: decay,
        envelope_c1: lp.c2 / lp.a * (1.0 - decay),
        violations: records.iter().filter(|r| r.violation).count(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialSpec;
    use crate::spectral_fluid::{build_mode_set, ModeIndex};

    fn unit_fp() -> FluidParams<f64> {
        FluidParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn single() -> ModeSet<f64> {
        ModeSet::from_modes(&[(ModeIndex::new(1, 0).unwrap(), 1.0)]).unwrap()
    }

    fn lp_unit(r0: f64, eta: f64) -> LyapunovParams {
        LyapunovParams { r0, eta, delta: 0.1, a: 0.1, c1: 0.0, c2: 0.0, k_min: 1.0, gamma: 1.0 }
    }

    #[test]
    fn value_examples() {
        let s = SystemState::at_rest(Vec2::new(0.1, 0.0), 1);
        assert_eq!(lyapunov_value(&s, &lp_unit(1.0, 1.0)), 1.0);
        let mut s = SystemState::at_rest(Vec2::new(2.0, 0.0), 1);
        s.fluid.z[0] = 3.0;
        assert_eq!(lyapunov_value(&s, &lp_unit(1.0, 1.0)), 13.0);
    }

    #[test]
    fn level_sets_are_compact_and_bounded_below() {
        let lp = lp_unit(1.0, 0.5);
        for i in 0..40 {
            for j in 0..40 {
                let rho = 0.1 * i as f64;
                let z = -4.0 + 0.2 * j as f64;
                let mut s = SystemState::at_rest(Vec2::new(rho, 0.0), 1);
                s.fluid.z[0] = z;
                let v = lyapunov_value(&s, &lp);
                assert!(v >= 1.0);
                if v <= 2.0 {
                    assert!(rho <= 2f64.sqrt() + 1e-12 && z.abs() <= 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn parameter_examples() {
        let lp = choose_lyapunov_params(1.0, &unit_fp(), &single(), 1.0, 0.1).unwrap();
        assert!((lp.eta - 1.0 / 0.81).abs() < 1e-12);
        assert!((lp.eta - 1.23457).abs() < 1e-5);
        assert!((lp.a - 0.1).abs() < 1e-15);
        assert!((lp.c1 - 1.0 / 0.81).abs() < 1e-12);
        assert!((lp.c2 - (2.0 + lp.c1)).abs() < 1e-12);
    }

    #[test]
    fn delta_at_supremum_is_rejected() {
        // gamma = 2: supremum is min(1, 1/2) = 1/2.
        let err = choose_lyapunov_params(2.0, &unit_fp(), &single(), 1.0, 0.5).unwrap_err();
        assert!(err.to_string().contains("0.5"), "{err}");
        assert!(choose_lyapunov_params(2.0, &unit_fp(), &single(), 1.0, 0.0).is_err());
        let near = choose_lyapunov_params(2.0, &unit_fp(), &single(), 1.0, 0.5 - 1e-9).unwrap();
        assert!(near.eta > 1e8);
    }

    #[test]
    fn zero_time_is_identity_envelope() {
        let ms = build_mode_set::<f64>(1, |_| 1.0, &[]).unwrap();
        let params = SimParams::new(unit_fp(), PotentialSpec::power_law(1.0, 12.0).unwrap());
        let lp = choose_lyapunov_params(0.49, &unit_fp(), &ms, 2.0, 0.5).unwrap();
        let init = drift_initials(&lp, ms.len(), 3, 2.0);
        let rep = estimate_drift(&init, &params, &ms, &lp, 0.0, 100, 1).unwrap();
        assert_eq!((rep.c0_hat, rep.c1_hat), (1.0, 0.0));
    }

    #[test]
    fn deterministic_hookean_drift_is_exact() {
        let ms = build_mode_set::<f64>(1, |_| 0.0, &[]).unwrap();
        let gamma = 1.0;
        let params = SimParams::new(unit_fp(), PotentialSpec::hookean(gamma).unwrap()).with_dt(0.01);
        let lp = choose_lyapunov_params(0.5, &unit_fp(), &ms, 1.0, 0.5).unwrap();
        let init = drift_initials(&lp, ms.len(), 5, 2.0);
        let t = 0.5;
        let rep = estimate_drift(&init, &params, &ms, &lp, t, 2, 3).unwrap();
        for r in &rep.records {
            let exact = (r.r0_norm.powi(2) * (-2.0 * gamma * t).exp()).max(lp.r0 * lp.r0);
            assert!((r.mean_v - exact).abs() < 1e-8 * exact, "{} vs {exact}", r.mean_v);
            assert!(!r.violation);
        }
        assert!(rep.c0_hat <= (-2.0 * gamma * t).exp() + 1e-8);
    }
}
