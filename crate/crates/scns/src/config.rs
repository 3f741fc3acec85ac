//! Run configuration: line-oriented `key = value` text with dotted
//! sections, full validation, and a canonical renderer such that
//! `parse(render(c)) == c`.

use crate::fluid::FluidParams;
use crate::noise::{StencilFactor, StencilKernel, StencilTerm};
use crate::spectral::MAX_DIM;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;

/// Experiment driven by the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Single,
    Ensemble,
    Uniqueness,
    Cauchy,
    Continuation,
    ValidateNoise,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Experiment::Single => "single",
            Experiment::Ensemble => "ensemble",
            Experiment::Uniqueness => "uniqueness",
            Experiment::Cauchy => "cauchy",
            Experiment::Continuation => "continuation",
            Experiment::ValidateNoise => "validate-noise",
        };
        f.write_str(name)
    }
}

impl Experiment {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "single" => Ok(Experiment::Single),
            "ensemble" => Ok(Experiment::Ensemble),
            "uniqueness" => Ok(Experiment::Uniqueness),
            "cauchy" => Ok(Experiment::Cauchy),
            "continuation" => Ok(Experiment::Continuation),
            "validate-noise" => Ok(Experiment::ValidateNoise),
            other => Err(Error::Config {
                key: "experiment".into(),
                message: format!(
                    "unknown experiment `{other}` (single, ensemble, uniqueness, \
                     cauchy, continuation, validate-noise)"
                ),
            }),
        }
    }
}

/// Initial datum: a built-in name or a snapshot file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitialData {
    /// `r = 2 + 0.1 cos(x_1)`, `u = 0.1 sin(x_1) e_1`.
    Smooth,
    /// `r = 2`, `u = 0`.
    Rest,
    Snapshot(String),
}

impl fmt::Display for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Smooth => f.write_str("smooth"),
            InitialData::Rest => f.write_str("rest"),
            InitialData::Snapshot(path) => f.write_str(path),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Built-in affine model with `alpha0 / k^2` weights.
    Model,
    /// Hand-written per-mode Fourier stencils.
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub modes: usize,
    pub decay_alpha0: f64,
    pub amplitude: f64,
    /// One kernel per mode; populated only for [`NoiseKind::General`].
    pub stencils: Vec<StencilKernel>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Model,
            modes: 16,
            decay_alpha0: 0.1,
            amplitude: 1.0,
            stencils: Vec::new(),
        }
    }
}

/// Fully validated run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub dim: usize,
    /// Collocation points per axis.
    pub m: usize,
    /// Sobolev index of the working norm.
    pub s: usize,
    pub fluid: FluidParams,
    /// Cut-off radius R.
    pub radius: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Output stride in steps.
    pub stride: usize,
    pub seed: u64,
    pub initial: InitialData,
    pub max_halvings: u32,
    /// Global step budget across an experiment.
    pub budget: u64,
    /// Largest shell level the continuation schedule admits.
    pub schedule_bound: u32,
    /// Intermediate snapshot cadence in output rows (0 = final state only).
    pub snapshot_every: u64,
    pub noise: NoiseConfig,
    pub ensemble_paths: usize,
    pub cauchy_levels: Vec<usize>,
    pub cauchy_epsilons: Vec<f64>,
    pub cauchy_paths: usize,
    /// Relative perturbation of the second datum in the uniqueness pair.
    pub uniqueness_delta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Single,
            dim: 1,
            m: 64,
            s: 4,
            fluid: FluidParams {
                gamma: 2.0,
                a: 1.0,
                mu: 1.0,
                lambda: 0.0,
            },
            radius: 10.0,
            t_end: 0.5,
            dt: 1e-3,
            stride: 10,
            seed: 0,
            initial: InitialData::Smooth,
            max_halvings: 8,
            budget: 500_000,
            schedule_bound: 32,
            snapshot_every: 0,
            noise: NoiseConfig::default(),
            ensemble_paths: 50,
            cauchy_levels: vec![8, 16, 32],
            cauchy_epsilons: vec![1e-2],
            cauchy_paths: 50,
            uniqueness_delta: 0.0,
        }
    }
}

fn cfg_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let x: f64 = value
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a number, got `{value}`")))?;
    if !x.is_finite() {
        return Err(cfg_err(key, format!("must be finite, got `{value}`")));
    }
    Ok(x)
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a nonnegative integer, got `{value}`")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a nonnegative integer, got `{value}`")))
}

fn parse_u32(key: &str, value: &str) -> Result<u32> {
    value
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a nonnegative integer, got `{value}`")))
}

fn parse_list<T>(key: &str, value: &str, one: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|tok| !tok.is_empty())
        .map(|tok| one(key, tok))
        .collect()
}

/// Grammar of one `noise.mode.<j>` line: whitespace-separated terms
/// `<factor>:<comp>:<k1,..,kN>:<cos_amp>:<sin_amp>` with factor `rho` or
/// `q<i>`.
fn parse_stencil(key: &str, value: &str, dim: usize) -> Result<StencilKernel> {
    let mut terms = Vec::new();
    for tok in value.split_whitespace() {
        let parts: Vec<&str> = tok.split(':').collect();
        if parts.len() != 5 {
            return Err(cfg_err(
                key,
                format!("term `{tok}` must have 5 colon-separated fields"),
            ));
        }
        let factor = match parts[0] {
            "rho" => StencilFactor::Rho,
            q if q.starts_with('q') => {
                let i = parse_usize(key, &q[1..])?;
                if i >= dim {
                    return Err(cfg_err(
                        key,
                        format!("momentum factor `{q}` out of range for dim = {dim}"),
                    ));
                }
                StencilFactor::Momentum(i)
            }
            other => {
                return Err(cfg_err(
                    key,
                    format!("unknown state factor `{other}` (rho or q<i>)"),
                ));
            }
        };
        let comp = parse_usize(key, parts[1])?;
        if comp >= dim {
            return Err(cfg_err(
                key,
                format!("component {comp} out of range for dim = {dim}"),
            ));
        }
        let kparts: Vec<&str> = parts[2].split(',').collect();
        if kparts.len() != dim {
            return Err(cfg_err(
                key,
                format!("wavevector `{}` must have {dim} entries", parts[2]),
            ));
        }
        let mut k = [0i64; MAX_DIM];
        for (axis, kp) in kparts.iter().enumerate() {
            k[axis] = kp
                .parse()
                .map_err(|_| cfg_err(key, format!("bad wavenumber `{kp}`")))?;
        }
        terms.push(StencilTerm {
            factor,
            comp,
            k,
            cos_amp: parse_f64(key, parts[3])?,
            sin_amp: parse_f64(key, parts[4])?,
        });
    }
    if terms.is_empty() {
        return Err(cfg_err(key, "stencil must have at least one term"));
    }
    Ok(StencilKernel { terms })
}

fn render_stencil(kernel: &StencilKernel, dim: usize) -> String {
    kernel
        .terms
        .iter()
        .map(|t| {
            let factor = match t.factor {
                StencilFactor::Rho => "rho".to_string(),
                StencilFactor::Momentum(i) => format!("q{i}"),
            };
            let k = (0..dim)
                .map(|a| t.k[a].to_string())
                .collect::<Vec<_>>()
                .join(",");
            format!("{factor}:{}:{k}:{}:{}", t.comp, t.cos_amp, t.sin_amp)
        })
        .collect::<Vec<_>>()
        .join("  ")
}

impl RunConfig {
    /// Parse `key = value` text; `#` starts a comment, blank lines are
    /// ignored, unknown and duplicate keys are rejected.  The returned
    /// config is fully validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        let mut stencil_lines: BTreeMap<usize, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => {
                    return Err(cfg_err(
                        line,
                        format!("line {}: expected `key = value`", lineno + 1),
                    ));
                }
            };
            if seen.insert(key.to_string(), ()).is_some() {
                return Err(cfg_err(key, "duplicate key"));
            }
            match key {
                "experiment" => cfg.experiment = Experiment::parse(value)?,
                "dim" => cfg.dim = parse_usize(key, value)?,
                "M" => cfg.m = parse_usize(key, value)?,
                "s" => cfg.s = parse_usize(key, value)?,
                "gamma" => cfg.fluid.gamma = parse_f64(key, value)?,
                "a" => cfg.fluid.a = parse_f64(key, value)?,
                "mu" => cfg.fluid.mu = parse_f64(key, value)?,
                "lambda" => cfg.fluid.lambda = parse_f64(key, value)?,
                "R" => cfg.radius = parse_f64(key, value)?,
                "T" => cfg.t_end = parse_f64(key, value)?,
                "dt" => cfg.dt = parse_f64(key, value)?,
                "stride" => cfg.stride = parse_usize(key, value)?,
                "seed" => cfg.seed = parse_u64(key, value)?,
                "initial" => {
                    cfg.initial = match value {
                        "smooth" => InitialData::Smooth,
                        "rest" => InitialData::Rest,
                        path => InitialData::Snapshot(path.to_string()),
                    }
                }
                "max_halvings" => cfg.max_halvings = parse_u32(key, value)?,
                "budget" => cfg.budget = parse_u64(key, value)?,
                "schedule.bound" => cfg.schedule_bound = parse_u32(key, value)?,
                "snapshot.every" => cfg.snapshot_every = parse_u64(key, value)?,
                "noise.kind" => {
                    cfg.noise.kind = match value {
                        "model" => NoiseKind::Model,
                        "general" => NoiseKind::General,
                        other => {
                            return Err(cfg_err(
                                key,
                                format!("unknown noise kind `{other}` (model, general)"),
                            ));
                        }
                    }
                }
                "noise.modes" => cfg.noise.modes = parse_usize(key, value)?,
                "noise.decay_alpha0" => cfg.noise.decay_alpha0 = parse_f64(key, value)?,
                "noise.amplitude" => cfg.noise.amplitude = parse_f64(key, value)?,
                "ensemble.paths" => cfg.ensemble_paths = parse_usize(key, value)?,
                "cauchy.levels" => cfg.cauchy_levels = parse_list(key, value, parse_usize)?,
                "cauchy.epsilons" => cfg.cauchy_epsilons = parse_list(key, value, parse_f64)?,
                "cauchy.paths" => cfg.cauchy_paths = parse_usize(key, value)?,
                "uniqueness.delta" => cfg.uniqueness_delta = parse_f64(key, value)?,
                mode_key if mode_key.starts_with("noise.mode.") => {
                    let j = parse_usize(mode_key, &mode_key["noise.mode.".len()..])?;
                    stencil_lines.insert(j, value.to_string());
                }
                unknown => return Err(cfg_err(unknown, "unknown key")),
            }
        }
        // Stencil lines need the final dim, so they parse after the scan.
        if !stencil_lines.is_empty() && cfg.noise.kind != NoiseKind::General {
            return Err(cfg_err(
                "noise.mode",
                "per-mode stencils are only meaningful with noise.kind = general",
            ));
        }
        if cfg.noise.kind == NoiseKind::General {
            let mut stencils = Vec::with_capacity(cfg.noise.modes);
            for j in 1..=cfg.noise.modes {
                let key = format!("noise.mode.{j}");
                let line = stencil_lines
                    .remove(&j)
                    .ok_or_else(|| cfg_err(&key, "missing stencil for this mode"))?;
                stencils.push(parse_stencil(&key, &line, cfg.dim)?);
            }
            if let Some((&j, _)) = stencil_lines.iter().next() {
                return Err(cfg_err(
                    &format!("noise.mode.{j}"),
                    format!("mode index out of range 1..={}", cfg.noise.modes),
                ));
            }
            cfg.noise.stencils = stencils;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse` inverts it exactly on the validated
    /// field set.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("experiment", self.experiment.to_string());
        kv("dim", self.dim.to_string());
        kv("M", self.m.to_string());
        kv("s", self.s.to_string());
        kv("gamma", self.fluid.gamma.to_string());
        kv("a", self.fluid.a.to_string());
        kv("mu", self.fluid.mu.to_string());
        kv("lambda", self.fluid.lambda.to_string());
        kv("R", self.radius.to_string());
        kv("T", self.t_end.to_string());
        kv("dt", self.dt.to_string());
        kv("stride", self.stride.to_string());
        kv("seed", self.seed.to_string());
        kv("initial", self.initial.to_string());
        kv("max_halvings", self.max_halvings.to_string());
        kv("budget", self.budget.to_string());
        kv("schedule.bound", self.schedule_bound.to_string());
        kv("snapshot.every", self.snapshot_every.to_string());
        kv(
            "noise.kind",
            match self.noise.kind {
                NoiseKind::Model => "model".into(),
                NoiseKind::General => "general".into(),
            },
        );
        kv("noise.modes", self.noise.modes.to_string());
        kv("noise.decay_alpha0", self.noise.decay_alpha0.to_string());
        kv("noise.amplitude", self.noise.amplitude.to_string());
        for (j, kernel) in self.noise.stencils.iter().enumerate() {
            kv(
                &format!("noise.mode.{}", j + 1),
                render_stencil(kernel, self.dim),
            );
        }
        kv("ensemble.paths", self.ensemble_paths.to_string());
        kv(
            "cauchy.levels",
            self.cauchy_levels
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        kv(
            "cauchy.epsilons",
            self.cauchy_epsilons
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        kv("cauchy.paths", self.cauchy_paths.to_string());
        kv("uniqueness.delta", self.uniqueness_delta.to_string());
        out
    }

    /// Number of time steps `T / dt` (validated to be integral).
    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    /// Smallest admissible Sobolev index for this dimension.
    pub fn min_s(dim: usize, uniqueness: bool) -> usize {
        // s > N/2 + 2, and one more derivative for the uniqueness theorem.
        let bound2 = dim + if uniqueness { 6 } else { 4 };
        bound2 / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(cfg_err("dim", format!("must be 1..={MAX_DIM}, got {}", self.dim)));
        }
        if self.m < 8 || self.m % 2 != 0 {
            return Err(cfg_err(
                "M",
                format!("points per axis must be even and >= 8, got {}", self.m),
            ));
        }
        let smin = Self::min_s(self.dim, false);
        if self.s < smin {
            return Err(cfg_err(
                "s",
                format!(
                    "need s >= {smin} when dim = {} (s > N/2 + 2), got {}",
                    self.dim, self.s
                ),
            ));
        }
        if self.experiment == Experiment::Uniqueness {
            let smin = Self::min_s(self.dim, true);
            if self.s < smin {
                return Err(cfg_err(
                    "s",
                    format!(
                        "uniqueness needs s >= {smin} when dim = {} (s > N/2 + 3), got {}",
                        self.dim, self.s
                    ),
                ));
            }
        }
        self.fluid.validate().map_err(|e| match e {
            Error::Parameter { name, message } => cfg_err(name, message),
            other => other,
        })?;
        if !(self.radius > 0.0) {
            return Err(cfg_err("R", format!("must be positive, got {}", self.radius)));
        }
        if !(self.t_end > 0.0) {
            return Err(cfg_err("T", format!("must be positive, got {}", self.t_end)));
        }
        if !(self.dt > 0.0) {
            return Err(cfg_err("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(cfg_err("stride", "must be positive"));
        }
        let steps = self.t_end / self.dt;
        let rounded = steps.round();
        if rounded < 1.0 || (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(cfg_err(
                "T",
                format!("must be an integer number of steps, T/dt = {steps}"),
            ));
        }
        if rounded as u64 % self.stride as u64 != 0 {
            return Err(cfg_err(
                "stride",
                format!("{} does not divide the step count {rounded}", self.stride),
            ));
        }
        if self.noise.modes == 0 {
            return Err(cfg_err(
                "noise.modes",
                "must be positive (use noise.amplitude = 0 for a silent run)",
            ));
        }
        if !(self.noise.decay_alpha0 > 0.0) {
            return Err(cfg_err(
                "noise.decay_alpha0",
                format!("must be positive, got {}", self.noise.decay_alpha0),
            ));
        }
        if self.noise.amplitude < 0.0 {
            return Err(cfg_err(
                "noise.amplitude",
                format!("must be nonnegative, got {}", self.noise.amplitude),
            ));
        }
        match self.noise.kind {
            NoiseKind::Model => {
                if !self.noise.stencils.is_empty() {
                    return Err(cfg_err(
                        "noise.mode",
                        "stencils are only meaningful with noise.kind = general",
                    ));
                }
            }
            NoiseKind::General => {
                if self.noise.stencils.len() != self.noise.modes {
                    return Err(cfg_err(
                        "noise.mode",
                        format!(
                            "need one stencil per mode: {} given, {} modes",
                            self.noise.stencils.len(),
                            self.noise.modes
                        ),
                    ));
                }
            }
        }
        if self.schedule_bound == 0 {
            return Err(cfg_err("schedule.bound", "must be positive"));
        }
        if self.budget == 0 {
            return Err(cfg_err("budget", "must be positive"));
        }
        if self.ensemble_paths == 0 {
            return Err(cfg_err("ensemble.paths", "must be positive"));
        }
        if self.cauchy_paths == 0 {
            return Err(cfg_err("cauchy.paths", "must be positive"));
        }
        if self.cauchy_levels.len() < 2 {
            return Err(cfg_err("cauchy.levels", "need at least two levels"));
        }
        if self.cauchy_levels.windows(2).any(|w| w[1] < w[0]) {
            return Err(cfg_err("cauchy.levels", "levels must be nondecreasing"));
        }
        // band check only where the levels are actually driven, so the
        // default schedule does not invalidate small-grid single runs
        if self.experiment == Experiment::Cauchy {
            let max_level = self.m / 2;
            if let Some(&bad) = self.cauchy_levels.iter().find(|&&l| l == 0 || l > max_level) {
                return Err(cfg_err(
                    "cauchy.levels",
                    format!("level {bad} outside 1..={max_level} (M/2)"),
                ));
            }
        }
        if self.cauchy_epsilons.is_empty()
            || self.cauchy_epsilons.iter().any(|&e| !(e > 0.0))
        {
            return Err(cfg_err("cauchy.epsilons", "need positive thresholds"));
        }
        if !(self.uniqueness_delta >= 0.0) {
            return Err(cfg_err(
                "uniqueness.delta",
                format!("must be nonnegative, got {}", self.uniqueness_delta),
            ));
        }
        Ok(())
    }
}
