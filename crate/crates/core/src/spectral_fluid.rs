//! Finite-mode spectral representation of the stochastic Stokes field.
//!
//! The fluid is a finite sum of divergence-free Fourier modes. Each active
//! wavevector `k` carries a sine amplitude `z_k` (and, for the full field or
//! the center-of-mass variant, a cosine amplitude `y_k`). Amplitudes are
//! independent Ornstein-Uhlenbeck processes
//!
//! ```text
//! dz_k = -lambda^2 nu |k|^2 z_k dt + sqrt(2 beta nu) sigma_k dW_k
//! ```
//!
//! whose transition over any `dt` is Gaussian and sampled exactly.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;
use crate::vec2::Vec2;

/// Integer wavevector `k != 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub k: [i32; 2],
}

impl ModeIndex {
    pub fn new(kx: i32, ky: i32) -> Result<Self> {
        if kx == 0 && ky == 0 {
            return Err(ModelError::InvalidMode("k = (0, 0)".into()));
        }
        Ok(Self { k: [kx, ky] })
    }

    /// `k⊥ = (-k2, k1)`.
    pub fn kperp(self) -> [i32; 2] {
        [-self.k[1], self.k[0]]
    }

    pub fn norm_sq(self) -> i64 {
        let [a, b] = self.k;
        (a as i64) * (a as i64) + (b as i64) * (b as i64)
    }

    pub fn norm<T: Scalar>(self) -> T {
        T::lit(self.norm_sq() as f64).sqrt()
    }

    /// Lexicographically larger of `±k`. The real trigonometric expansion
    /// already accounts for both signs, so only this one is kept.
    pub fn canonical(self) -> Self {
        let neg = Self {
            k: [-self.k[0], -self.k[1]],
        };
        if neg.k > self.k {
            neg
        } else {
            self
        }
    }

    /// Primitive direction up to sign; equal for parallel wavevectors.
    pub fn direction_class(self) -> (i32, i32) {
        let g = gcd(self.k[0].unsigned_abs(), self.k[1].unsigned_abs()) as i32;
        let c = Self {
            k: [self.k[0] / g, self.k[1] / g],
        }
        .canonical();
        (c.k[0], c.k[1])
    }

    pub fn is_parallel_to(self, other: Self) -> bool {
        (self.k[0] as i64) * (other.k[1] as i64) == (self.k[1] as i64) * (other.k[0] as i64)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.k[0], self.k[1])
    }
}

/// Radial weight `phi(|k|)` used to assign `sigma_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RadialShape {
    /// `sigma_k = c`
    Constant(f64),
    /// `sigma_k = |k|^p`
    Power(f64),
}

impl RadialShape {
    pub fn eval<T: Scalar>(&self, knorm: T) -> T {
        match *self {
            RadialShape::Constant(c) => T::lit(c),
            RadialShape::Power(p) => knorm.powf(T::lit(p)),
        }
    }
}

impl fmt::Display for RadialShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialShape::Constant(c) => write!(f, "constant {c}"),
            RadialShape::Power(p) => write!(f, "power {p}"),
        }
    }
}

impl FromStr for RadialShape {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let arg = parts.next();
        let value = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| ModelError::InvalidParameter(format!("shape '{s}' needs a value")))?
                .parse::<f64>()
                .map_err(|e| ModelError::InvalidParameter(format!("shape '{s}': {e}")))
        };
        let shape = match kind {
            "constant" => RadialShape::Constant(value(arg)?),
            "power" => RadialShape::Power(value(arg)?),
            _ => {
                return Err(ModelError::InvalidParameter(format!(
                    "unknown shape '{s}' (expected 'constant c' or 'power p')"
                )))
            }
        };
        if parts.next().is_some() {
            return Err(ModelError::InvalidParameter(format!("trailing tokens in shape '{s}'")));
        }
        Ok(shape)
    }
}

/// Finite set of active modes with their spectral weights.
///
/// Per-mode geometric factors are cached in the scalar type so the hot
/// evaluation loops do no integer conversion.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet<T> {
    modes: Vec<ModeIndex>,
    sigmas: Vec<T>,
    pairwise_independent_count: usize,
    wavevectors: Vec<Vec2<T>>,
    directions: Vec<Vec2<T>>,
    norms: Vec<T>,
}

impl<T: Scalar> ModeSet<T> {
    /// Builds a mode set from explicit `(k, sigma)` pairs. Each `k` is
    /// replaced by its canonical representative; `k` and `-k` may not both
    /// appear.
    pub fn from_modes(pairs: &[(ModeIndex, T)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyModeSet);
        }
        let mut seen = HashSet::new();
        let mut modes = Vec::with_capacity(pairs.len());
        let mut sigmas = Vec::with_capacity(pairs.len());
        for &(k, sigma) in pairs {
            let c = k.canonical();
            if !seen.insert(c) {
                return Err(ModelError::InvalidMode(format!("duplicate mode {k} (up to sign)")));
            }
            if !(sigma >= T::zero()) || !sigma.is_finite() {
                return Err(ModelError::InvalidParameter(format!(
                    "sigma for mode {k} must be finite and nonnegative"
                )));
            }
            modes.push(c);
            sigmas.push(sigma);
        }
        Ok(Self::assemble(modes, sigmas))
    }

    fn assemble(modes: Vec<ModeIndex>, sigmas: Vec<T>) -> Self {
        let classes: HashSet<(i32, i32)> = modes.iter().map(|m| m.direction_class()).collect();
        let wavevectors = modes
            .iter()
            .map(|m| Vec2::new(T::lit(m.k[0] as f64), T::lit(m.k[1] as f64)))
            .collect::<Vec<_>>();
        let norms = modes.iter().map(|m| m.norm::<T>()).collect::<Vec<_>>();
        let directions = wavevectors
            .iter()
            .zip(&norms)
            .map(|(k, &n)| k.perp() / n)
            .collect();
        Self {
            pairwise_independent_count: classes.len(),
            modes,
            sigmas,
            wavevectors,
            directions,
            norms,
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    /// Number of pairwise linearly independent directions among the modes.
    pub fn pairwise_independent_count(&self) -> usize {
        self.pairwise_independent_count
    }

    /// `k` as a real vector.
    pub fn wavevector(&self, i: usize) -> Vec2<T> {
        self.wavevectors[i]
    }

    /// `k⊥ / |k|`.
    pub fn direction(&self, i: usize) -> Vec2<T> {
        self.directions[i]
    }

    pub fn knorm(&self, i: usize) -> T {
        self.norms[i]
    }

    /// Smallest `|k|` over the active modes.
    pub fn k_min(&self) -> T {
        self.norms.iter().copied().fold(T::infinity(), T::min)
    }

    /// Same geometry with every weight replaced.
    pub fn with_sigmas(&self, sigma: T) -> Self {
        let mut out = self.clone();
        out.sigmas.iter_mut().for_each(|s| *s = sigma);
        out
    }

    /// Parses the plain-text form: one `kx ky sigma` line per mode, `#`
    /// comments and blank lines ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(ModelError::InvalidMode(format!(
                    "line {}: expected 'kx ky sigma', got '{line}'",
                    lineno + 1
                )));
            }
            let bad = |what: &str| {
                ModelError::InvalidMode(format!("line {}: bad {what} in '{line}'", lineno + 1))
            };
            let kx: i32 = fields[0].parse().map_err(|_| bad("kx"))?;
            let ky: i32 = fields[1].parse().map_err(|_| bad("ky"))?;
            let sigma: f64 = fields[2].parse().map_err(|_| bad("sigma"))?;
            pairs.push((ModeIndex::new(kx, ky)?, T::lit(sigma)));
        }
        Self::from_modes(&pairs)
    }

    pub fn to_text(&self) -> String {
        self.modes
            .iter()
            .zip(&self.sigmas)
            .map(|(m, s)| format!("{} {} {}\n", m.k[0], m.k[1], s.to_f64_lossy()))
            .collect()
    }
}

/// All `k` with `0 < |k| <= k_max`, one per `±k` pair, minus `exclusions`,
/// weighted by `sigma_k = shape(|k|)`.
///
/// Modes are ordered by `|k|`, ties broken by descending lexicographic order.
pub fn build_mode_set<T: Scalar>(
    k_max: u32,
    shape: impl Fn(T) -> T,
    exclusions: &[ModeIndex],
) -> Result<ModeSet<T>> {
    if k_max < 1 {
        return Err(ModelError::InvalidParameter("k_max must be at least 1".into()));
    }
    let excluded: HashSet<ModeIndex> = exclusions.iter().map(|m| m.canonical()).collect();
    let kmax = k_max as i32;
    let mut candidates = Vec::new();
    for kx in -kmax..=kmax {
        for ky in -kmax..=kmax {
            if (kx == 0 && ky == 0) || (kx * kx + ky * ky) as i64 > (kmax as i64) * (kmax as i64) {
                continue;
            }
            let m = ModeIndex { k: [kx, ky] };
            if m.canonical() == m && !excluded.contains(&m) {
                candidates.push(m);
            }
        }
    }
    if candidates.is_empty() {
        return Err(ModelError::EmptyModeSet);
    }
    candidates.sort_by(|a, b| a.norm_sq().cmp(&b.norm_sq()).then(b.k.cmp(&a.k)));
    let mut sigmas = Vec::with_capacity(candidates.len());
    for m in &candidates {
        let s = shape(m.norm::<T>());
        if !(s >= T::zero()) || !s.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "shape must be finite and nonnegative (mode {m})"
            )));
        }
        sigmas.push(s);
    }
    Ok(ModeSet::assemble(candidates, sigmas))
}

/// `||sigma||_s = sqrt(sum_k sigma_k^2 |k|^{-2s})`.
pub fn sigma_norm<T: Scalar>(ms: &ModeSet<T>, s: T) -> T {
    (0..ms.len())
        .map(|i| {
            let sig = ms.sigmas()[i];
            sig * sig * ms.knorm(i).powf(-(s + s))
        })
        .sum::<T>()
        .sqrt()
}

/// Physical parameters of the fluid: `lambda = 2 pi / L`, viscosity `nu`,
/// noise strength `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidParams<T> {
    pub lambda: T,
    pub nu: T,
    pub beta: T,
}

impl<T: Scalar> FluidParams<T> {
    pub fn new(lambda: T, nu: T, beta: T) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("nu", nu), ("beta", beta)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(ModelError::InvalidParameter(format!(
                    "{name} must be finite and strictly positive"
                )));
            }
        }
        Ok(Self { lambda, nu, beta })
    }

    /// Period of the box, `L = 2 pi / lambda`.
    pub fn period(&self) -> T {
        T::TAU() / self.lambda
    }

    /// Mean-reversion rate `lambda^2 nu |k|^2` of mode `i`.
    pub fn decay_rate(&self, ms: &ModeSet<T>, i: usize) -> T {
        let k = ms.knorm(i);
        self.lambda * self.lambda * self.nu * k * k
    }

    /// Stationary variance `beta sigma_k^2 / (lambda^2 |k|^2)` of mode `i`.
    pub fn stationary_variance(&self, ms: &ModeSet<T>, i: usize) -> T {
        let s = ms.sigmas()[i];
        let k = ms.knorm(i);
        self.beta * s * s / (self.lambda * self.lambda * k * k)
    }
}

/// OU amplitudes of the active modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidState<T> {
    pub z: Vec<T>,
    pub y: Option<Vec<T>>,
    pub time: T,
}

impl<T: Scalar> FluidState<T> {
    pub fn zeros(n: usize, with_cosine: bool) -> Self {
        Self {
            z: vec![T::zero(); n],
            y: with_cosine.then(|| vec![T::zero(); n]),
            time: T::zero(),
        }
    }

    /// `||z||^2`, plus `||y||^2` when cosine amplitudes are carried.
    pub fn energy(&self) -> T {
        let zz: T = self.z.iter().map(|&v| v * v).sum();
        let yy: T = self
            .y
            .as_ref()
            .map(|y| y.iter().map(|&v| v * v).sum())
            .unwrap_or_else(T::zero);
        zz + yy
    }

    pub fn z_norm(&self) -> T {
        self.z.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Draws every amplitude from its stationary law.
pub fn stationary_sample<T: Scalar, R: Rng + ?Sized>(
    ms: &ModeSet<T>,
    fp: &FluidParams<T>,
    with_cosine: bool,
    rng: &mut R,
) -> FluidState<T> {
    let sd: Vec<T> = (0..ms.len())
        .map(|i| fp.stationary_variance(ms, i).sqrt())
        .collect();
    let z = sd.iter().map(|&s| s * T::standard_normal(rng)).collect();
    let y = with_cosine.then(|| sd.iter().map(|&s| s * T::standard_normal(rng)).collect());
    FluidState {
        z,
        y,
        time: T::zero(),
    }
}

/// Precomputed exact OU transition over a fixed `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuPropagator<T> {
    pub dt: T,
    decay: Vec<T>,
    noise_sd: Vec<T>,
}

impl<T: Scalar> OuPropagator<T> {
    pub fn new(ms: &ModeSet<T>, fp: &FluidParams<T>, dt: T) -> Result<Self> {
        if dt < T::zero() || !dt.is_finite() {
            return Err(ModelError::NegativeTimeStep);
        }
        let mut decay = Vec::with_capacity(ms.len());
        let mut noise_sd = Vec::with_capacity(ms.len());
        for i in 0..ms.len() {
            let theta = fp.decay_rate(ms, i);
            decay.push((-theta * dt).exp());
            // 1 - exp(-2 theta dt), accurate for small arguments.
            let frac = -(-(theta + theta) * dt).exp_m1();
            noise_sd.push((fp.stationary_variance(ms, i) * frac).sqrt());
        }
        Ok(Self { dt, decay, noise_sd })
    }

    /// Advances one amplitude vector in place, drawing one normal per mode
    /// in mode order.
    pub fn advance<R: Rng + ?Sized>(&self, values: &mut [T], rng: &mut R) {
        for ((v, &a), &s) in values.iter_mut().zip(&self.decay).zip(&self.noise_sd) {
            *v = *v * a + s * T::standard_normal(rng);
        }
    }

    /// Deterministic part only.
    pub fn decay_only(&self, values: &mut [T]) {
        for (v, &a) in values.iter_mut().zip(&self.decay) {
            *v *= a;
        }
    }

    pub fn noise_sd(&self) -> &[T] {
        &self.noise_sd
    }
}

/// Exact OU transition of every amplitude over `dt`. Sine amplitudes draw
/// their noise first, then cosine amplitudes.
pub fn ou_step_exact<T: Scalar, R: Rng + ?Sized>(
    fs: &FluidState<T>,
    fp: &FluidParams<T>,
    ms: &ModeSet<T>,
    dt: T,
    rng: &mut R,
) -> Result<FluidState<T>> {
    let prop = OuPropagator::new(ms, fp, dt)?;
    let mut out = fs.clone();
    if dt == T::zero() {
        return Ok(out);
    }
    prop.advance(&mut out.z, rng);
    if let Some(y) = out.y.as_mut() {
        prop.advance(y, rng);
    }
    out.time += dt;
    Ok(out)
}

/// Connector forcing `U(r, z) = sum_k sin(lambda k.r) (k⊥/|k|) z_k`.
pub fn eval_velocity<T: Scalar>(
    ms: &ModeSet<T>,
    fs: &FluidState<T>,
    fp: &FluidParams<T>,
    r: Vec2<T>,
) -> Vec2<T> {
    forcing_from_amplitudes(ms, &fs.z, fp.lambda, r)
}

#[inline]
pub(crate) fn forcing_from_amplitudes<T: Scalar>(
    ms: &ModeSet<T>,
    z: &[T],
    lambda: T,
    r: Vec2<T>,
) -> Vec2<T> {
    let mut acc = Vec2::zero();
    for (i, &zk) in z.iter().enumerate() {
        let phase = lambda * ms.wavevector(i).dot(r);
        acc += ms.direction(i) * (phase.sin() * zk);
    }
    acc
}

/// Connector forcing with the center of mass at `m`:
/// `sum_k [cos(lambda k.m) z_k - sin(lambda k.m) y_k] sin(lambda k.r) k⊥/|k|`.
pub fn eval_velocity_com<T: Scalar>(
    ms: &ModeSet<T>,
    fs: &FluidState<T>,
    fp: &FluidParams<T>,
    r: Vec2<T>,
    m: Vec2<T>,
) -> Result<Vec2<T>> {
    let y = fs.y.as_ref().ok_or(ModelError::CosineModesRequired)?;
    Ok(relative_velocity_com(ms, &fs.z, y, fp.lambda, r, m))
}

#[inline]
pub(crate) fn relative_velocity_com<T: Scalar>(
    ms: &ModeSet<T>,
    z: &[T],
    y: &[T],
    lambda: T,
    r: Vec2<T>,
    m: Vec2<T>,
) -> Vec2<T> {
    let mut acc = Vec2::zero();
    for i in 0..z.len() {
        let k = ms.wavevector(i);
        let (sm, cm) = (lambda * k.dot(m)).sin_cos();
        let sr = (lambda * k.dot(r)).sin();
        acc += ms.direction(i) * ((cm * z[i] - sm * y[i]) * sr);
    }
    acc
}

/// Mean velocity of the two beads, `[u(m + r) + u(m - r)] / 2`.
#[inline]
pub(crate) fn mean_velocity_com<T: Scalar>(
    ms: &ModeSet<T>,
    z: &[T],
    y: &[T],
    lambda: T,
    r: Vec2<T>,
    m: Vec2<T>,
) -> Vec2<T> {
    let mut acc = Vec2::zero();
    for i in 0..z.len() {
        let k = ms.wavevector(i);
        let (sm, cm) = (lambda * k.dot(m)).sin_cos();
        let cr = (lambda * k.dot(r)).cos();
        acc += ms.direction(i) * ((cm * y[i] + sm * z[i]) * cr);
    }
    acc
}

/// Full velocity field
/// `u(x) = sum_k (cos(lambda k.x) y_k + sin(lambda k.x) z_k) k⊥/|k|`.
pub fn eval_field<T: Scalar>(
    ms: &ModeSet<T>,
    fs: &FluidState<T>,
    fp: &FluidParams<T>,
    x: Vec2<T>,
) -> Result<Vec2<T>> {
    let y = fs.y.as_ref().ok_or(ModelError::CosineModesRequired)?;
    let mut acc = Vec2::zero();
    for (i, (&yi, &zi)) in y.iter().zip(&fs.z).enumerate() {
        let (s, c) = (fp.lambda * ms.wavevector(i).dot(x)).sin_cos();
        acc += ms.direction(i) * (c * yi + s * zi);
    }
    Ok(acc)
}
