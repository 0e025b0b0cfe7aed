//! Radial spring potentials and grid certificates of their coercivity and
//! near-origin repulsion constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;
use crate::vec2::Vec2;

/// A member of one of the supported spring families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec<T> {
    /// `gamma |r|^2 / 2`
    Hookean { gamma: T },
    /// `gamma (|r| - rest)^2 / 2`
    LinearRest { gamma: T, rest: T },
    /// `|r|^{2q} / (2q) + 1 / (alpha |r|^alpha)`
    PowerLaw { q: T, alpha: T },
    /// `-gamma R^2 ln(1 - |r|^2/R^2) / 2 + |r|^{-alpha} / alpha`
    FeneRepulsive { gamma: T, r_max: T, alpha: T },
}

impl<T: Scalar> PotentialSpec<T> {
    pub fn hookean(gamma: T) -> Result<Self> {
        Self::Hookean { gamma }.validated()
    }

    pub fn linear_rest(gamma: T, rest: T) -> Result<Self> {
        Self::LinearRest { gamma, rest }.validated()
    }

    pub fn power_law(q: T, alpha: T) -> Result<Self> {
        Self::PowerLaw { q, alpha }.validated()
    }

    pub fn fene_repulsive(gamma: T, r_max: T, alpha: T) -> Result<Self> {
        Self::FeneRepulsive { gamma, r_max, alpha }.validated()
    }

    /// Checks parameter ranges and returns `self` unchanged.
    pub fn validated(self) -> Result<Self> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::InvalidParameter(format!(
                    "{name} must be finite and strictly positive"
                )))
            }
        };
        match self {
            Self::Hookean { gamma } => positive("gamma", gamma)?,
            Self::LinearRest { gamma, rest } => {
                positive("gamma", gamma)?;
                positive("rest", rest)?;
            }
            Self::PowerLaw { q, alpha } => {
                positive("alpha", alpha)?;
                if !(q >= T::one()) || !q.is_finite() {
                    return Err(ModelError::InvalidParameter("q must be at least 1".into()));
                }
            }
            Self::FeneRepulsive { gamma, r_max, alpha } => {
                positive("gamma", gamma)?;
                positive("r_max", r_max)?;
                positive("alpha", alpha)?;
            }
        }
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Hookean { .. } => "hookean",
            Self::LinearRest { .. } => "linear_rest",
            Self::PowerLaw { .. } => "power_law",
            Self::FeneRepulsive { .. } => "fene_repulsive",
        }
    }

    /// True when the potential blows up at the origin.
    pub fn is_singular(&self) -> bool {
        matches!(self, Self::PowerLaw { .. } | Self::FeneRepulsive { .. })
    }

    /// Largest admissible radius (finite only for FENE).
    pub fn max_extension(&self) -> Option<T> {
        match *self {
            Self::FeneRepulsive { r_max, .. } => Some(r_max),
            _ => None,
        }
    }

    fn check_radius(&self, rho: T) -> Result<()> {
        if self.is_singular() && rho == T::zero() {
            return Err(ModelError::SingularPoint);
        }
        if let Some(rm) = self.max_extension() {
            if rho >= rm {
                return Err(ModelError::BeyondExtensibility);
            }
        }
        Ok(())
    }

    /// `Phi(rho)` without domain checks.
    pub fn value_radial(&self, rho: T) -> T {
        let two = T::lit(2.0);
        match *self {
            Self::Hookean { gamma } => gamma * rho * rho / two,
            Self::LinearRest { gamma, rest } => gamma * (rho - rest) * (rho - rest) / two,
            Self::PowerLaw { q, alpha } => {
                rho.powf(two * q) / (two * q) + rho.powf(-alpha) / alpha
            }
            Self::FeneRepulsive { gamma, r_max, alpha } => {
                let x = rho / r_max;
                -gamma * r_max * r_max * (-(x * x)).ln_1p() / two + rho.powf(-alpha) / alpha
            }
        }
    }

    /// `g(rho) = Phi'(rho) / rho`, so that `grad Phi(r) = g(|r|) r`. No
    /// domain checks: the result may be infinite or NaN outside the domain.
    #[inline]
    pub fn gain(&self, rho: T) -> T {
        match *self {
            Self::Hookean { gamma } => gamma,
            Self::LinearRest { gamma, rest } => {
                if rho == T::zero() {
                    T::zero()
                } else {
                    gamma * (rho - rest) / rho
                }
            }
            Self::PowerLaw { q, alpha } => {
                rho.powf(T::lit(2.0) * q - T::lit(2.0)) - rho.powf(-alpha - T::lit(2.0))
            }
            Self::FeneRepulsive { gamma, r_max, alpha } => {
                let x = rho / r_max;
                gamma / (T::one() - x * x) - rho.powf(-alpha - T::lit(2.0))
            }
        }
    }

    /// `grad Phi(r)` without domain checks.
    #[inline]
    pub fn grad_unchecked(&self, r: Vec2<T>) -> Vec2<T> {
        r * self.gain(r.norm())
    }

    /// `grad Phi(r) . r = |r|^2 g(|r|)`.
    pub fn radial_work(&self, rho: T) -> T {
        rho * rho * self.gain(rho)
    }
}

/// Potential value `Phi(|r|)`.
pub fn phi<T: Scalar>(spec: &PotentialSpec<T>, r: Vec2<T>) -> Result<T> {
    let rho = r.norm();
    spec.check_radius(rho)?;
    Ok(spec.value_radial(rho))
}

/// Analytic gradient `grad Phi(r)`; always parallel to `r`.
pub fn grad_phi<T: Scalar>(spec: &PotentialSpec<T>, r: Vec2<T>) -> Result<Vec2<T>> {
    spec.check_radius(r.norm())?;
    Ok(spec.grad_unchecked(r))
}

/// Largest `|grad Phi|` on a radial grid over `[inner, outer]`.
pub fn max_grad_on_shell<T: Scalar>(spec: &PotentialSpec<T>, inner: T, outer: T, n: usize) -> T {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let rho = inner + (outer - inner) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1);
            (spec.gain(rho) * rho).abs()
        })
        .fold(T::zero(), T::max)
}

impl<T: Scalar> fmt::Display for PotentialSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hookean { gamma } => write!(f, "hookean gamma={gamma}"),
            Self::LinearRest { gamma, rest } => write!(f, "linear_rest gamma={gamma} rest={rest}"),
            Self::PowerLaw { q, alpha } => write!(f, "power_law q={q} alpha={alpha}"),
            Self::FeneRepulsive { gamma, r_max, alpha } => {
                write!(f, "fene_repulsive gamma={gamma} r_max={r_max} alpha={alpha}")
            }
        }
    }
}

impl<T: Scalar> FromStr for PotentialSpec<T> {
    type Err = ModelError;

    /// Parses `family key=value ...`, e.g. `power_law q=1 alpha=12`.
    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let family = tokens
            .next()
            .ok_or_else(|| ModelError::InvalidParameter("empty potential".into()))?;
        let mut kv: Vec<(&str, f64)> = Vec::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                ModelError::InvalidParameter(format!("expected key=value, got '{tok}'"))
            })?;
            let v: f64 = v
                .parse()
                .map_err(|_| ModelError::InvalidParameter(format!("'{k}' is not a number: '{v}'")))?;
            if kv.iter().any(|(seen, _)| *seen == k) {
                return Err(ModelError::InvalidParameter(format!("duplicate potential key '{k}'")));
            }
            kv.push((k, v));
        }
        let allowed: &[&str] = match family {
            "hookean" => &["gamma"],
            "linear_rest" => &["gamma", "rest"],
            "power_law" => &["q", "alpha"],
            "fene_repulsive" => &["gamma", "r_max", "alpha"],
            other => {
                return Err(ModelError::InvalidParameter(format!(
                    "unknown potential '{other}' (expected hookean, linear_rest, power_law or fene_repulsive)"
                )))
            }
        };
        if let Some((k, _)) = kv.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(ModelError::InvalidParameter(format!(
                "unknown key '{k}' for {family} (allowed: {})",
                allowed.join(", ")
            )));
        }
        let get = |key: &str| -> Result<T> {
            kv.iter()
                .find(|(k, _)| *k == key)
                .map(|&(_, v)| T::lit(v))
                .ok_or_else(|| ModelError::InvalidParameter(format!("{family} needs '{key}'")))
        };
        match family {
            "hookean" => Self::hookean(get("gamma")?),
            "linear_rest" => Self::linear_rest(get("gamma")?, get("rest")?),
            "power_law" => Self::power_law(get("q")?, get("alpha")?),
            _ => Self::fene_repulsive(get("gamma")?, get("r_max")?, get("alpha")?),
        }
    }
}

/// Numerically verified constants for the large-`r` coercivity
/// `grad Phi . r >= gamma |r|^2 (|r| >= R0)` and the near-origin repulsion
/// `-grad Phi . r >= c (|r| <= eps0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialCertificate<T> {
    pub r0: T,
    pub gamma: T,
    pub eps0: T,
    pub c: T,
    pub r_floor: T,
    /// Upper end of the scanned range (below `r_max` for FENE).
    pub r_probe: T,
    pub passed_large_r: bool,
    pub passed_small_r: bool,
    /// The repulsion infimum sits at `r_floor`, i.e. it keeps shrinking
    /// towards the origin and no constant holds in the limit.
    pub infimum_at_floor: bool,
}

fn log_grid<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let (a, b) = (lo.ln(), hi.ln());
    let last = T::from_usize_lossy(n - 1);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * T::from_usize_lossy(i) / last).exp()
            }
        })
        .collect()
}

/// Bisection for the switch of `f` from true at `lo` to false at `hi`.
/// Returns the final bracket.
fn bisect<T: Scalar>(mut lo: T, mut hi: T, f: impl Fn(T) -> bool) -> (T, T) {
    for _ in 0..80 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Scans `|r|` on a log grid over `[r_floor, R_probe]` and reports the
/// spring constants.
///
/// Near the origin: `eps0` is half the first radius where the repulsion
/// `-grad Phi . r` stops being positive, and `c` is its minimum over
/// `[r_floor, eps0]`. At large radius: `R0` is twice the radius beyond
/// which `grad Phi . r > 0` (capped at `R_probe`), and `gamma` is half the
/// minimum of `grad Phi . r / |r|^2` over `[R0, R_probe]`.
pub fn verify_assumptions<T: Scalar>(
    spec: &PotentialSpec<T>,
    r_probe: T,
    r_floor: T,
    grid_n: usize,
) -> Result<PotentialCertificate<T>> {
    if !(r_floor > T::zero() && r_floor < r_probe) {
        return Err(ModelError::Precondition("need 0 < r_floor < R_probe".into()));
    }
    if grid_n < 100 {
        return Err(ModelError::Precondition("grid_n must be at least 100".into()));
    }
    let hi = match spec.max_extension() {
        Some(rm) => r_probe.min(rm * T::lit(1.0 - 1e-3)),
        None => r_probe,
    };
    if hi <= r_floor {
        return Err(ModelError::Precondition("R_probe collapses below r_floor".into()));
    }
    let grid = log_grid(r_floor, hi, grid_n);
    let repulsion = |rho: T| -spec.radial_work(rho);

    // Near-origin repulsion.
    let (mut eps0, mut c, mut passed_small_r, mut infimum_at_floor) =
        (r_floor, repulsion(r_floor), false, false);
    if repulsion(grid[0]) > T::zero() {
        let first_bad = grid.iter().position(|&rho| !(repulsion(rho) > T::zero()));
        let r_zero = match first_bad {
            Some(j) => bisect(grid[j - 1], grid[j], |rho| repulsion(rho) > T::zero()).0,
            None => hi,
        };
        eps0 = r_zero / T::lit(2.0);
        let mut best = repulsion(eps0);
        let mut at_floor = false;
        for &rho in grid.iter().take_while(|&&rho| rho <= eps0) {
            let w = repulsion(rho);
            if w < best {
                best = w;
                at_floor = rho == grid[0];
            }
        }
        c = best;
        infimum_at_floor = at_floor;
        passed_small_r = c > T::zero() && !at_floor;
    }

    // Large-radius coercivity.
    let (mut r0, mut gamma, mut passed_large_r) = (hi, T::zero(), false);
    let positive = |rho: T| spec.gain(rho) > T::zero();
    if positive(hi) {
        let last_bad = grid.iter().rposition(|&rho| !positive(rho));
        let r_pos = match last_bad {
            Some(j) => bisect(grid[j], grid[j + 1], |rho| !positive(rho)).1,
            None => r_floor,
        };
        r0 = (r_pos * T::lit(2.0)).min(hi);
        let min_gain = grid
            .iter()
            .filter(|&&rho| rho >= r0)
            .map(|&rho| spec.gain(rho))
            .fold(spec.gain(r0), T::min);
        gamma = min_gain / T::lit(2.0);
        passed_large_r = gamma > T::zero() && r0 < hi;
    }

    Ok(PotentialCertificate {
        r0,
        gamma,
        eps0,
        c,
        r_floor,
        r_probe: hi,
        passed_large_r,
        passed_small_r,
        infimum_at_floor,
    })
}

/// Default scan: `R_probe = 10`, `r_floor = 1e-4`, 2000 grid points.
pub fn certify<T: Scalar>(spec: &PotentialSpec<T>) -> Result<PotentialCertificate<T>> {
    verify_assumptions(spec, T::lit(10.0), T::lit(1e-4), 2000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lj() -> PotentialSpec<f64> {
        PotentialSpec::power_law(1.0, 12.0).unwrap()
    }

    fn all_specs() -> Vec<PotentialSpec<f64>> {
        vec![
            PotentialSpec::hookean(2.0).unwrap(),
            PotentialSpec::linear_rest(1.0, 2.0).unwrap(),
            lj(),
            PotentialSpec::power_law(2.0, 6.0).unwrap(),
            PotentialSpec::fene_repulsive(1.0, 3.0, 6.0).unwrap(),
        ]
    }

    #[test]
    fn value_examples() {
        let h = PotentialSpec::hookean(2.0).unwrap();
        assert_eq!(phi(&h, Vec2::new(1.0, 0.0)).unwrap(), 1.0);
        assert!((phi(&lj(), Vec2::new(0.6, 0.8)).unwrap() - (0.5 + 1.0 / 12.0)).abs() < 1e-15);
        let lr = PotentialSpec::linear_rest(1.0, 2.0).unwrap();
        assert_eq!(phi(&lr, Vec2::new(0.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        let h = PotentialSpec::hookean(2.0).unwrap();
        assert_eq!(grad_phi(&h, Vec2::new(1.0, 0.0)).unwrap(), Vec2::new(2.0, 0.0));
        assert_eq!(grad_phi(&lj(), Vec2::new(1.0, 0.0)).unwrap(), Vec2::zero());
    }

    #[test]
    fn domain_errors() {
        assert_eq!(phi(&lj(), Vec2::zero()).unwrap_err().to_string(), "singular point");
        let fene = PotentialSpec::fene_repulsive(1.0, 1.5, 6.0).unwrap();
        assert_eq!(
            grad_phi(&fene, Vec2::new(1.5, 0.0)).unwrap_err().to_string(),
            "beyond extensibility"
        );
        assert!(phi(&PotentialSpec::hookean(1.0).unwrap(), Vec2::zero()).is_ok());
    }

    #[test]
    fn fene_diverges_upward_at_extension() {
        let fene = PotentialSpec::fene_repulsive(1.0, 1.5, 6.0).unwrap();
        let a = phi(&fene, Vec2::new(1.4, 0.0)).unwrap();
        let b = phi(&fene, Vec2::new(1.499, 0.0)).unwrap();
        assert!(b > a && b > 5.0);
    }

    #[test]
    fn parse_and_display_round_trip() {
        for spec in all_specs() {
            let back: PotentialSpec<f64> = spec.to_string().parse().unwrap();
            assert_eq!(back, spec);
        }
        assert_eq!("power_law q=1 alpha=12".parse::<PotentialSpec<f64>>().unwrap(), lj());
        assert!("power_law q=1".parse::<PotentialSpec<f64>>().is_err());
        assert!("power_law q=1 alpha=12 beta=3".parse::<PotentialSpec<f64>>().is_err());
        assert!("power_law q=0.5 alpha=12".parse::<PotentialSpec<f64>>().is_err());
        assert!("spring gamma=1".parse::<PotentialSpec<f64>>().is_err());
    }

    #[test]
    fn hookean_has_no_repulsion() {
        let cert = certify(&PotentialSpec::<f64>::hookean(1.0).unwrap()).unwrap();
        assert!(!cert.passed_small_r);
        assert!(cert.passed_large_r);
    }

    #[test]
    fn lennard_jones_certificate() {
        let cert = certify(&lj()).unwrap();
        assert!(cert.passed_small_r && cert.passed_large_r);
        assert!((cert.eps0 - 0.5).abs() < 1e-12);
        assert!(cert.c > 4095.0);
        assert!((cert.c - (0.5f64.powi(-12) - 0.25)).abs() < 1e-6);
        assert!((cert.r0 - 2.0).abs() < 1e-12);
        // grad Phi . r / |r|^2 = 1 - |r|^-14 >= 1 - 2^-14 on [2, inf).
        assert!((cert.gamma - 0.5 * (1.0 - 2f64.powi(-14))).abs() < 1e-12);
        assert!(cert.gamma >= 0.49);
    }

    #[test]
    fn linear_rest_repulsion_vanishes_at_origin() {
        let cert = certify(&PotentialSpec::<f64>::linear_rest(1.0, 2.0).unwrap()).unwrap();
        assert!(cert.infimum_at_floor);
        assert!(!cert.passed_small_r);
        // The honest infimum: gamma r (R - r) at the floor.
        assert!((cert.c - 1e-4 * (2.0 - 1e-4)).abs() < 1e-12);
        assert!(cert.passed_large_r);
    }

    #[test]
    fn fene_certificate_stays_inside_extension() {
        let cert = certify(&PotentialSpec::fene_repulsive(1.0, 3.0, 6.0).unwrap()).unwrap();
        assert!(cert.passed_small_r && cert.passed_large_r);
        assert!(cert.r_probe < 3.0);
    }

    #[test]
    fn certificates_reverify_on_finer_grid() {
        for spec in all_specs() {
            let cert = certify(&spec).unwrap();
            let fine = log_grid(cert.r_floor, cert.r_probe, 20_000);
            for &rho in &fine {
                let work = spec.radial_work(rho);
                if cert.passed_small_r && rho <= cert.eps0 {
                    assert!(-work >= cert.c * (1.0 - 1e-12), "{spec}: rho={rho}");
                }
                if cert.passed_large_r && rho >= cert.r0 {
                    assert!(work >= cert.gamma * rho * rho, "{spec}: rho={rho}");
                }
            }
        }
    }

    #[test]
    fn level_sets_are_bounded_for_certified_potentials() {
        for spec in all_specs().into_iter().filter(|s| s.is_singular()) {
            let level = 10.0;
            let grid = log_grid(1e-6, spec.max_extension().map_or(1e3, |m| m * 0.999_999), 100_000);
            let inside: Vec<f64> = grid
                .iter()
                .copied()
                .filter(|&rho| spec.value_radial(rho) <= level)
                .collect();
            let (lo, hi) = (inside[0], *inside.last().unwrap());
            assert!(lo > 1e-3, "{spec}: level set reaches {lo}");
            assert!(hi < grid[grid.len() - 1], "{spec}: level set unbounded");
        }
    }

    #[test]
    fn precondition_errors() {
        assert!(verify_assumptions(&lj(), 10.0, 0.0, 2000).is_err());
        assert!(verify_assumptions(&lj(), 10.0, 1e-4, 50).is_err());
    }

    #[test]
    fn f32_gradient_tracks_f64() {
        let s32 = PotentialSpec::<f32>::power_law(1.0, 12.0).unwrap();
        let g = grad_phi(&s32, Vec2::new(0.9f32, 0.3)).unwrap();
        let g64 = grad_phi(&lj(), Vec2::new(0.9, 0.3)).unwrap();
        assert!(((g.x as f64) - g64.x).abs() / g64.norm() < 1e-5);
    }

    fn spec_strategy() -> impl Strategy<Value = PotentialSpec<f64>> {
        prop_oneof![
            (0.1f64..5.0).prop_map(|g| PotentialSpec::hookean(g).unwrap()),
            (0.1f64..5.0, 0.5f64..3.0).prop_map(|(g, r)| PotentialSpec::linear_rest(g, r).unwrap()),
            (1.0f64..3.0, 1.0f64..12.0).prop_map(|(q, a)| PotentialSpec::power_law(q, a).unwrap()),
            (0.1f64..3.0, 2.0f64..4.0, 1.0f64..8.0)
                .prop_map(|(g, r, a)| PotentialSpec::fene_repulsive(g, r, a).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn gradient_is_radial(spec in spec_strategy(), rho in 0.3f64..1.9, th in 0.0f64..6.3) {
            let r = Vec2::from_polar(rho, th);
            let g = grad_phi(&spec, r).unwrap();
            prop_assert!(g.cross(r).abs() <= 1e-12 * (1.0 + g.norm() * rho));
        }

        #[test]
        fn gradient_matches_central_difference(
            spec in spec_strategy(), rho in 0.3f64..1.9, th in 0.0f64..6.3,
        ) {
            let r = Vec2::from_polar(rho, th);
            let g = grad_phi(&spec, r).unwrap();
            let h = 1e-6;
            let fd = Vec2::new(
                (phi(&spec, r + Vec2::new(h, 0.0)).unwrap() - phi(&spec, r - Vec2::new(h, 0.0)).unwrap()) / (2.0 * h),
                (phi(&spec, r + Vec2::new(0.0, h)).unwrap() - phi(&spec, r - Vec2::new(0.0, h)).unwrap()) / (2.0 * h),
            );
            // Relative to the local scale of Phi: roundoff in the difference
            // quotient is ~ eps |Phi| / h.
            let scale = g.norm().max(phi(&spec, r).unwrap().abs()).max(1.0);
            prop_assert!((fd - g).norm() <= 1e-6 * scale, "{} at {:?}: {:?} vs {:?}", spec, r, fd, g);
        }
    }
}
