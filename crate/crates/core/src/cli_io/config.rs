//! Sectioned `key = value` run configuration.
//!
//! ```text
//! seed = 7
//!
//! [potential]
//! spec = power_law q=1 alpha=12
//!
//! [modes]
//! list = 1 0 1; 0 1 1; 1 1 1
//! ```
//!
//! Every key is optional except `seed`, `potential.spec` and a mode
//! description. `#` starts a comment. Keys may appear once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::diagnostics::lyapunov::{choose_lyapunov_params, LyapunovParams};
use crate::dynamics::SimParams;
use crate::potentials::{certify, PotentialCertificate, PotentialSpec};
use crate::spectral_fluid::{build_mode_set, FluidParams, ModeIndex, ModeSet, RadialShape};
use crate::vec2::Vec2;

/// Modes either listed explicitly or generated from a radial shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModesSpec {
    List(Vec<(ModeIndex, f64)>),
    Generated { k_max: u32, shape: RadialShape, exclude: Vec<ModeIndex> },
}

impl ModesSpec {
    pub fn build(&self) -> crate::error::Result<ModeSet<f64>> {
        match self {
            ModesSpec::List(pairs) => ModeSet::from_modes(pairs),
            ModesSpec::Generated { k_max, shape, exclude } => {
                build_mode_set(*k_max, |k: f64| shape.eval(k), exclude)
            }
        }
    }
}

/// How the fluid amplitudes start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialFluid {
    Rest,
    Stationary,
}

impl FromStr for InitialFluid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rest" => Ok(Self::Rest),
            "stationary" => Ok(Self::Stationary),
            _ => Err(format!("expected 'rest' or 'stationary', got '{s}'")),
        }
    }
}

impl std::fmt::Display for InitialFluid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rest => "rest",
            Self::Stationary => "stationary",
        })
    }
}

/// A value that is either given or derived from the potential certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Auto {
    Auto,
    Value(f64),
}

impl FromStr for Auto {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        parse_f64(s).map(Self::Value)
    }
}

impl std::fmt::Display for Auto {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    pub dt: f64,
    pub kappa: f64,
    pub r_min_guard: f64,
    pub max_rel_move: f64,
    pub record_stride: usize,
    pub horizon: f64,
    pub initial_r: Vec2<f64>,
    pub initial_fluid: InitialFluid,
    pub cosine_modes: bool,
    pub track_center_of_mass: bool,
    pub evolve_center_of_mass: bool,
    pub freeze_cosine_modes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSection {
    pub start: Vec2<f64>,
    pub target: Vec2<f64>,
    pub eps1: Auto,
    pub samples_per_unit: usize,
    pub tube_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSection {
    pub hookean_gamma_factor: f64,
    pub hookean_n: usize,
    pub escape_n: usize,
    pub escape_horizon: f64,
    pub escape_r_low: f64,
    pub escape_eps: Auto,
    pub eps1_n: usize,
    pub eps1_levels: usize,
    pub drift_t: f64,
    pub drift_n: usize,
    pub drift_initials: usize,
    pub drift_decades: f64,
    pub hormander_r: Vec2<f64>,
    pub hormander_points: usize,
    pub converge_n: usize,
    pub converge_times: Vec<f64>,
    pub tube_eps: f64,
    pub tube_n: usize,
    pub tube_dt: f64,
}

/// Fully validated run configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub fluid: FluidParams<f64>,
    pub modes: ModesSpec,
    pub potential: PotentialSpec<f64>,
    pub sim: SimSection,
    pub lyapunov_delta: f64,
    pub lyapunov_r0: Auto,
    pub ensemble_n: usize,
    pub control: ControlSection,
    pub diagnose: DiagnoseSection,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn parse_vec2(s: &str) -> Result<Vec2<f64>, String> {
    let v: Vec<f64> = s.split_whitespace().map(parse_f64).collect::<Result<_, _>>()?;
    match v[..] {
        [x, y] => Ok(Vec2::new(x, y)),
        _ => Err(format!("expected two numbers 'x y', got '{s}'")),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn parse_mode_list(s: &str) -> Result<Vec<(ModeIndex, f64)>, String> {
    s.split(';')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|entry| {
            let f: Vec<&str> = entry.split_whitespace().collect();
            if f.len() != 3 {
                return Err(format!("expected 'kx ky sigma', got '{entry}'"));
            }
            let kx: i32 = f[0].parse().map_err(|_| format!("bad kx in '{entry}'"))?;
            let ky: i32 = f[1].parse().map_err(|_| format!("bad ky in '{entry}'"))?;
            let m = ModeIndex::new(kx, ky).map_err(|e| e.to_string())?;
            Ok((m, parse_f64(f[2])?))
        })
        .collect()
}

fn parse_index_list(s: &str) -> Result<Vec<ModeIndex>, String> {
    s.split(';')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|entry| {
            let f: Vec<&str> = entry.split_whitespace().collect();
            let (Some(a), Some(b), None) = (f.first(), f.get(1), f.get(2)) else {
                return Err(format!("expected 'kx ky', got '{entry}'"));
            };
            let kx: i32 = a.parse().map_err(|_| format!("bad kx in '{entry}'"))?;
            let ky: i32 = b.parse().map_err(|_| format!("bad ky in '{entry}'"))?;
            ModeIndex::new(kx, ky).map_err(|e| e.to_string())
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split_whitespace().map(parse_f64).collect()
}

struct Entry {
    value: String,
    line: usize,
}

/// Keys of one section, consumed as they are read.
struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, CliError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).map_err(|msg| CliError::Config {
                line: e.line,
                message: format!("{}: {msg}", self.qualified(key)),
            }),
        }
    }

    fn get<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, CliError> {
        Ok(self.take(key, parse)?.unwrap_or(default))
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(self.line, |e| e.line)
    }

    fn qualified(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((k, e)) => Err(CliError::Config {
                line: e.line,
                message: format!("unknown key '{}'", self.qualified(k)),
            }),
        }
    }
}

const SECTIONS: &[&str] = &["", "fluid", "modes", "potential", "sim", "lyapunov", "ensemble", "control", "diagnose"];

fn tokenize(text: &str) -> Result<BTreeMap<String, Section>, CliError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current = String::new();
    sections.insert(current.clone(), Section { name: current.clone(), line: 0, entries: BTreeMap::new() });
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Config { line, message };
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header '{content}'")))?
                .trim();
            if !SECTIONS.contains(&name) || name.is_empty() {
                return Err(err(format!("unknown section '[{name}]'")));
            }
            if sections.contains_key(name) {
                return Err(err(format!("duplicate section '[{name}]'")));
            }
            current = name.to_string();
            sections.insert(current.clone(), Section { name: current.clone(), line, entries: BTreeMap::new() });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        let sec = sections.get_mut(&current).expect("current section exists");
        if let Some(prev) = sec.entries.get(key) {
            return Err(err(format!(
                "duplicate key '{}' (first set on line {})",
                sec.qualified(key),
                prev.line
            )));
        }
        sec.entries.insert(key.to_string(), Entry { value: value.to_string(), line });
    }
    Ok(sections)
}

fn require<T>(v: Option<T>, line: usize, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config { line, message: format!("missing required key '{what}'") })
}

fn positive(v: f64) -> Result<f64, String> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn at_least_one(v: usize) -> Result<usize, String> {
    if v >= 1 {
        Ok(v)
    } else {
        Err("must be at least 1".into())
    }
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("'{s}' is not a nonnegative integer"))
}

/// Parses and cross-validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut secs = tokenize(text)?;
    let mut empty = |name: &str| {
        secs.remove(name)
            .unwrap_or(Section { name: name.to_string(), line: 0, entries: BTreeMap::new() })
    };

    let mut top = empty("");
    let seed = require(
        top.take("seed", |s| s.parse::<u64>().map_err(|_| format!("'{s}' is not a u64")))?,
        0,
        "seed",
    )?;
    let output_dir = top.take("output_dir", |s| Ok(PathBuf::from(s)))?;
    top.finish()?;

    let mut fl = empty("fluid");
    let fl_line = fl.line;
    let lambda = fl.get("lambda", 1.0, |s| parse_f64(s).and_then(positive))?;
    let nu = fl.get("nu", 1.0, |s| parse_f64(s).and_then(positive))?;
    let beta = fl.get("beta", 1.0, |s| parse_f64(s).and_then(positive))?;
    fl.finish()?;
    let fluid = FluidParams::new(lambda, nu, beta).map_err(|e| CliError::Config { line: fl_line, message: e.to_string() })?;

    let mut md = empty("modes");
    let md_line = md.line;
    let list = md.take("list", parse_mode_list)?;
    let k_max_line = md.line_of("k_max");
    let k_max = md.take("k_max", |s| s.parse::<u32>().map_err(|_| format!("'{s}' is not a positive integer")))?;
    let shape = md.take("shape", |s| RadialShape::from_str(s).map_err(|e| e.to_string()))?;
    let exclude = md.take("exclude", parse_index_list)?;
    md.finish()?;
    let modes = match (list, k_max) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config {
                line: k_max_line,
                message: "modes.list and modes.k_max are mutually exclusive".into(),
            })
        }
        (Some(pairs), None) => {
            if shape.is_some() || exclude.is_some() {
                return Err(CliError::Config {
                    line: md_line,
                    message: "modes.shape and modes.exclude only apply with modes.k_max".into(),
                });
            }
            ModesSpec::List(pairs)
        }
        (None, Some(k_max)) => ModesSpec::Generated {
            k_max,
            shape: shape.unwrap_or(RadialShape::Constant(1.0)),
            exclude: exclude.unwrap_or_default(),
        },
        (None, None) => return Err(CliError::Config { line: md_line, message: "missing required key 'modes.list' or 'modes.k_max'".into() }),
    };
    let ms = modes.build().map_err(|e| CliError::Config { line: md_line, message: e.to_string() })?;

    let mut pt = empty("potential");
    let pt_line = pt.line_of("spec");
    let potential = require(
        pt.take("spec", |s| PotentialSpec::<f64>::from_str(s).map_err(|e| e.to_string()))?,
        pt.line,
        "potential.spec",
    )?;
    pt.finish()?;

    let mut sm = empty("sim");
    let sim = SimSection {
        dt: sm.get("dt", 1e-3, |s| parse_f64(s).and_then(positive))?,
        kappa: sm.get("kappa", 0.0, |s| parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be nonnegative".into()) }))?,
        r_min_guard: sm.get("r_min_guard", 1e-4, |s| parse_f64(s).and_then(positive))?,
        max_rel_move: sm.get("max_rel_move", 0.1, |s| parse_f64(s).and_then(positive))?,
        record_stride: sm.get("record_stride", 10, |s| parse_usize(s).and_then(at_least_one))?,
        horizon: sm.get("horizon", 10.0, |s| parse_f64(s).and_then(positive))?,
        initial_r: sm.get("initial_r", Vec2::new(1.0, 0.0), parse_vec2)?,
        initial_fluid: sm.get("initial_fluid", InitialFluid::Rest, InitialFluid::from_str)?,
        cosine_modes: sm.get("cosine_modes", false, parse_bool)?,
        track_center_of_mass: sm.get("track_center_of_mass", false, parse_bool)?,
        evolve_center_of_mass: sm.get("evolve_center_of_mass", false, parse_bool)?,
        freeze_cosine_modes: sm.get("freeze_cosine_modes", false, parse_bool)?,
    };
    let sm_line = sm.line;
    sm.finish()?;
    if sim.track_center_of_mass && !sim.cosine_modes {
        return Err(CliError::Config {
            line: sm_line,
            message: "sim.track_center_of_mass needs sim.cosine_modes = true".into(),
        });
    }

    let mut ly = empty("lyapunov");
    let delta_line = ly.line_of("delta");
    let lyapunov_delta = ly.get("delta", 0.5, parse_f64)?;
    let r0_line = ly.line_of("r0");
    let lyapunov_r0 = ly.get("r0", Auto::Auto, Auto::from_str)?;
    ly.finish()?;

    let mut en = empty("ensemble");
    let ensemble_n = en.get("n", 100, |s| parse_usize(s).and_then(at_least_one))?;
    en.finish()?;

    let mut ct = empty("control");
    let eps1_line = ct.line_of("eps1");
    let control = ControlSection {
        start: ct.get("start", Vec2::new(1.5, 0.0), parse_vec2)?,
        target: ct.get("target", Vec2::new(0.0, 1.5), parse_vec2)?,
        eps1: ct.get("eps1", Auto::Auto, Auto::from_str)?,
        samples_per_unit: ct.get("samples_per_unit", 256, |s| parse_usize(s).and_then(at_least_one))?,
        tube_eps: ct.get("tube_eps", 0.0, |s| parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be nonnegative".into()) }))?,
    };
    ct.finish()?;

    let mut dg = empty("diagnose");
    let escape_eps_line = dg.line_of("escape_eps");
    let pos = |s: &str| parse_f64(s).and_then(positive);
    let count = |s: &str| parse_usize(s).and_then(at_least_one);
    let diagnose = DiagnoseSection {
        hookean_gamma_factor: dg.get("hookean_gamma_factor", 10.0, pos)?,
        hookean_n: dg.get("hookean_n", 100, count)?,
        escape_n: dg.get("escape_n", 1000, count)?,
        escape_horizon: dg.get("escape_horizon", 10.0, pos)?,
        escape_r_low: dg.get("escape_r_low", 1e-3, pos)?,
        escape_eps: dg.get("escape_eps", Auto::Auto, Auto::from_str)?,
        eps1_n: dg.get("eps1_n", 200, count)?,
        eps1_levels: dg.get("eps1_levels", 6, count)?,
        drift_t: dg.get("drift_t", 1.0, |s| parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be nonnegative".into()) }))?,
        drift_n: dg.get("drift_n", 500, count)?,
        drift_initials: dg.get("drift_initials", 10, count)?,
        drift_decades: dg.get("drift_decades", 2.0, pos)?,
        hormander_r: dg.get("hormander_r", Vec2::new(0.7, 1.2), parse_vec2)?,
        hormander_points: dg.get("hormander_points", 10_000, parse_usize)?,
        converge_n: dg.get("converge_n", 2000, |s| parse_usize(s).and_then(|v| if v >= 4 { Ok(v) } else { Err("must be at least 4".into()) }))?,
        converge_times: dg.get("converge_times", vec![5.0, 10.0, 20.0, 50.0], |s| {
            let v = parse_f64_list(s)?;
            if v.is_empty() || v.windows(2).any(|w| w[1] <= w[0]) || v[0] < 0.0 {
                return Err("must be nonnegative and strictly increasing".into());
            }
            Ok(v)
        })?,
        tube_eps: dg.get("tube_eps", 1.0, pos)?,
        tube_n: dg.get("tube_n", 10_000, count)?,
        tube_dt: dg.get("tube_dt", 1e-2, pos)?,
    };
    dg.finish()?;

    let cfg = RunConfig {
        seed,
        output_dir,
        fluid,
        modes,
        potential,
        sim,
        lyapunov_delta,
        lyapunov_r0,
        ensemble_n,
        control,
        diagnose,
    };

    // Cross-checks that need the potential certificate.
    cfg.sim_params()
        .validate()
        .map_err(|e| CliError::Config { line: sm_line, message: e.to_string() })?;
    let cert = certify(&cfg.potential).map_err(|e| CliError::Config { line: pt_line, message: e.to_string() })?;
    if let Auto::Value(r0) = cfg.lyapunov_r0 {
        if !(r0 > 0.0) {
            return Err(CliError::Config { line: r0_line, message: "lyapunov.r0 must be positive".into() });
        }
    }
    if cert.passed_large_r {
        cfg.lyapunov_params(&cert, &ms)
            .map_err(|e| CliError::Config { line: delta_line, message: format!("lyapunov.delta: {e}") })?;
    }
    if let Auto::Value(eps) = cfg.diagnose.escape_eps {
        if cert.passed_small_r && !(eps > 0.0 && eps <= cert.eps0) {
            return Err(CliError::Config {
                line: escape_eps_line,
                message: format!("diagnose.escape_eps = {eps} must lie in (0, eps0 = {}]", cert.eps0),
            });
        }
    }
    if let Auto::Value(e) = cfg.control.eps1 {
        if !(e > 0.0) {
            return Err(CliError::Config { line: eps1_line, message: "control.eps1 must be positive".into() });
        }
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn mode_set(&self) -> crate::error::Result<ModeSet<f64>> {
        self.modes.build()
    }

    pub fn sim_params(&self) -> SimParams<f64> {
        let mut p = SimParams::new(self.fluid, self.potential).with_dt(self.sim.dt);
        p.kappa = self.sim.kappa;
        p.r_min_guard = self.sim.r_min_guard;
        p.max_rel_move = self.sim.max_rel_move;
        p.record_stride = self.sim.record_stride;
        p.track_center_of_mass = self.sim.track_center_of_mass;
        p.evolve_center_of_mass = self.sim.evolve_center_of_mass;
        p.freeze_cosine_modes = self.sim.freeze_cosine_modes;
        p
    }

    pub fn certificate(&self) -> crate::error::Result<PotentialCertificate<f64>> {
        certify(&self.potential)
    }

    /// `R0` from the config or the certificate.
    pub fn r0(&self, cert: &PotentialCertificate<f64>) -> f64 {
        match self.lyapunov_r0 {
            Auto::Value(v) => v,
            Auto::Auto => cert.r0,
        }
    }

    pub fn lyapunov_params(
        &self,
        cert: &PotentialCertificate<f64>,
        ms: &ModeSet<f64>,
    ) -> crate::error::Result<LyapunovParams> {
        choose_lyapunov_params(cert.gamma, &self.fluid, ms, self.r0(cert), self.lyapunov_delta)
    }

    /// Canonical text with every value explicit. Parsing it gives back an
    /// equal config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let v2 = |v: Vec2<f64>| format!("{} {}", v.x, v.y);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", dir.display());
        }
        let _ = writeln!(s, "\n[fluid]\nlambda = {}\nnu = {}\nbeta = {}", self.fluid.lambda, self.fluid.nu, self.fluid.beta);
        s.push_str("\n[modes]\n");
        match &self.modes {
            ModesSpec::List(pairs) => {
                let items: Vec<String> = pairs.iter().map(|(m, sg)| format!("{} {} {sg}", m.k[0], m.k[1])).collect();
                let _ = writeln!(s, "list = {}", items.join("; "));
            }
            ModesSpec::Generated { k_max, shape, exclude } => {
                let _ = writeln!(s, "k_max = {k_max}\nshape = {shape}");
                if !exclude.is_empty() {
                    let items: Vec<String> = exclude.iter().map(|m| format!("{} {}", m.k[0], m.k[1])).collect();
                    let _ = writeln!(s, "exclude = {}", items.join("; "));
                }
            }
        }
        let _ = writeln!(s, "\n[potential]\nspec = {}", self.potential);
        let sm = &self.sim;
        let _ = writeln!(
            s,
            "\n[sim]\ndt = {}\nkappa = {}\nr_min_guard = {}\nmax_rel_move = {}\nrecord_stride = {}\nhorizon = {}\ninitial_r = {}\ninitial_fluid = {}\ncosine_modes = {}\ntrack_center_of_mass = {}\nevolve_center_of_mass = {}\nfreeze_cosine_modes = {}",
            sm.dt, sm.kappa, sm.r_min_guard, sm.max_rel_move, sm.record_stride, sm.horizon,
            v2(sm.initial_r), sm.initial_fluid, sm.cosine_modes, sm.track_center_of_mass,
            sm.evolve_center_of_mass, sm.freeze_cosine_modes
        );
        let _ = writeln!(s, "\n[lyapunov]\ndelta = {}\nr0 = {}", self.lyapunov_delta, self.lyapunov_r0);
        let _ = writeln!(s, "\n[ensemble]\nn = {}", self.ensemble_n);
        let c = &self.control;
        let _ = writeln!(
            s,
            "\n[control]\nstart = {}\ntarget = {}\neps1 = {}\nsamples_per_unit = {}\ntube_eps = {}",
            v2(c.start), v2(c.target), c.eps1, c.samples_per_unit, c.tube_eps
        );
        let d = &self.diagnose;
        let times: Vec<String> = d.converge_times.iter().map(|t| t.to_string()).collect();
        let _ = write!(
            s,
            "\n[diagnose]\nhookean_gamma_factor = {}\nhookean_n = {}\nescape_n = {}\nescape_horizon = {}\nescape_r_low = {}\nescape_eps = {}\neps1_n = {}\neps1_levels = {}\ndrift_t = {}\ndrift_n = {}\ndrift_initials = {}\ndrift_decades = {}\nhormander_r = {}\nhormander_points = {}\nconverge_n = {}\nconverge_times = {}\ntube_eps = {}\ntube_n = {}\ntube_dt = {}\n",
            d.hookean_gamma_factor, d.hookean_n, d.escape_n, d.escape_horizon, d.escape_r_low,
            d.escape_eps, d.eps1_n, d.eps1_levels, d.drift_t, d.drift_n, d.drift_initials,
            d.drift_decades, v2(d.hormander_r), d.hormander_points, d.converge_n, times.join(" "),
            d.tube_eps, d.tube_n, d.tube_dt
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\n[potential]\nspec = power_law q=1 alpha=12\n[modes]\nlist = 1 0 1; 0 1 1; 1 1 1\n";

    fn line_of(err: CliError) -> usize {
        match err {
            CliError::Config { line, .. } => line,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults_and_echo_round_trips() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sim.dt, 1e-3);
        assert_eq!(cfg.lyapunov_delta, 0.5);
        assert_eq!(cfg.mode_set().unwrap().len(), 3);
        let echo = cfg.echo();
        assert!(echo.contains("dt = 0.001") && echo.contains("converge_times = 5 10 20 50"));
        let again = parse_config(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.echo(), echo);
    }

    #[test]
    fn generated_modes_round_trip() {
        let text = "seed = 1\n[potential]\nspec = hookean gamma=2\n[modes]\nk_max = 2\nshape = power -1\nexclude = 2 0\n[lyapunov]\ndelta = 0.25\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.mode_set().unwrap().len(), 5);
        assert_eq!(parse_config(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn duplicate_key_is_rejected_with_line() {
        let text = format!("{MINIMAL}[sim]\ndt = 0.01\ndt = 0.02\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate key 'sim.dt'"), "{err}");
        assert_eq!(line_of(err), 8);
    }

    #[test]
    fn unknown_key_and_section_are_rejected() {
        let err = parse_config(&format!("{MINIMAL}[sim]\nd_t = 0.01\n")).unwrap_err();
        assert!(err.to_string().contains("unknown key 'sim.d_t'"));
        assert_eq!(line_of(err), 7);
        let err = parse_config(&format!("{MINIMAL}[simulation]\n")).unwrap_err();
        assert!(err.to_string().contains("unknown section"));
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = parse_config(&format!("{MINIMAL}[ensemble]\nn = many\n")).unwrap_err();
        assert!(err.to_string().contains("ensemble.n"), "{err}");
        assert_eq!(line_of(err), 7);
    }

    #[test]
    fn delta_out_of_range_names_the_bound() {
        let err = parse_config(&format!("{MINIMAL}[lyapunov]\ndelta = 1.5\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("min(1, lambda^2 nu k^2 / gamma)"), "{msg}");
        assert_eq!(line_of(err), 7);
    }

    #[test]
    fn missing_required_keys() {
        assert!(parse_config("[potential]\nspec = hookean gamma=1\n[modes]\nk_max = 1\n").unwrap_err().to_string().contains("seed"));
        assert!(parse_config("seed = 1\n[modes]\nk_max = 1\n").unwrap_err().to_string().contains("potential.spec"));
        assert!(parse_config("seed = 1\n[potential]\nspec = hookean gamma=1\n").unwrap_err().to_string().contains("modes"));
    }

    #[test]
    fn escape_eps_checked_against_eps0() {
        let err = parse_config(&format!("{MINIMAL}[diagnose]\nescape_eps = 0.7\n")).unwrap_err();
        assert!(err.to_string().contains("eps0"), "{err}");
    }
}
