//! Time advance: semi-Lagrangian transport for the symmetrized density,
//! Euler-Maruyama Galerkin stepping for the velocity, a Picard
//! fixed-point mode over short windows, and the trajectory driver.
//!
//! The cut-off `phi = phi_R(|u|_{2,inf})` is evaluated once per step from
//! the pre-step state and multiplies drift, viscous and noise terms alike
//! (explicit lagging, O(dt) consistent).  Transport follows backtracked
//! characteristics of `phi u` with a midpoint rule and applies an
//! exponential integrating factor for the divergence term, so the output
//! stays strictly positive whenever the interpolated foot values are.
//! The density is kept as nodal values and never re-band-limited.

use crate::fluid::{self, CutoffSpec, FluidParams};
use crate::noise::{sample_increments, NoiseModel, WienerIncrement};
use crate::spectral::{multi_indices_up_to, SpectralField};
use crate::stopping::{NormSample, StoppingRecord, StoppingRule, Threshold};
use crate::streams::{NoiseStreams, SubStep, MAX_HALVINGS};
use crate::{Error, Result};

/// Everything a step needs besides the state itself.
#[derive(Clone, Debug)]
pub struct Env {
    pub params: FluidParams,
    pub cutoff: CutoffSpec,
    pub noise: NoiseModel,
    /// Sobolev index of the energy bookkeeping (s > N/2 + 2).
    pub s: usize,
    /// Galerkin level: velocity modes are capped at `|k|_inf <= level`.
    pub level: usize,
    /// Acceptance tolerance for the characteristic round-trip residual.
    pub transport_tol: f64,
}

impl Env {
    pub fn new(
        params: FluidParams,
        cutoff: CutoffSpec,
        noise: NoiseModel,
        s: usize,
        level: usize,
    ) -> Result<Self> {
        params.validate()?;
        let dim = noise.grid().dim() as f64;
        if 2 * s <= (dim as usize) + 4 {
            return Err(Error::Parameter {
                name: "s",
                message: format!("need s > N/2 + 2, got s = {s} at N = {dim}"),
            });
        }
        if level > noise.grid().max_mode() {
            return Err(Error::Parameter {
                name: "level",
                message: format!(
                    "Galerkin level {level} exceeds representable band {}",
                    noise.grid().max_mode()
                ),
            });
        }
        Ok(Self {
            params,
            cutoff,
            noise,
            s,
            level,
            transport_tol: 1e-8,
        })
    }
}

/// Cached norms of a state; must agree with freshly computed values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateNorms {
    pub u_w2inf: f64,
    pub r_w1inf: f64,
    pub min_r: f64,
    pub phi: f64,
    pub r_s2: f64,
    pub u_s2: f64,
}

/// One trajectory point: time, symmetrized density, velocity, caches.
#[derive(Clone, Debug)]
pub struct State {
    pub t: f64,
    pub r: SpectralField,
    pub u: SpectralField,
    norms: StateNorms,
}

impl State {
    /// Build a state, projecting the velocity onto the Galerkin band and
    /// checking positivity of the density.
    pub fn new(env: &Env, t: f64, r: SpectralField, u: SpectralField) -> Result<Self> {
        let grid = env.noise.grid();
        if r.grid() != grid || u.grid() != grid {
            return Err(Error::GridMismatch("state fields vs noise grid".into()));
        }
        if r.ncomp() != 1 || u.ncomp() != grid.dim() {
            return Err(Error::InvalidField(format!(
                "state needs scalar r and {}-component u",
                grid.dim()
            )));
        }
        let min_r = r.min_value();
        if !(min_r > 0.0) {
            let node = r
                .values()
                .iter()
                .position(|v| *v == min_r)
                .unwrap_or(0);
            return Err(Error::Vacuum { node, min: min_r });
        }
        let u = u.galerkin_project(env.level)?;
        let norms = Self::compute_norms(env, &r, &u)?;
        Ok(Self { t, r, u, norms })
    }

    fn compute_norms(env: &Env, r: &SpectralField, u: &SpectralField) -> Result<StateNorms> {
        let u_w2inf = u.wkinf_norm(2)?;
        Ok(StateNorms {
            u_w2inf,
            r_w1inf: r.wkinf_norm(1)?,
            min_r: r.min_value(),
            phi: env.cutoff.phi(u_w2inf),
            r_s2: r.sobolev_norm(env.s as f64)?,
            u_s2: u.sobolev_norm(env.s as f64)?,
        })
    }

    pub fn norms(&self) -> &StateNorms {
        &self.norms
    }

    /// Joint Sobolev norm `|(r,u)|_{s,2}`.
    pub fn joint_s2(&self) -> f64 {
        self.norms.r_s2.hypot(self.norms.u_s2)
    }

    pub fn norm_sample(&self) -> NormSample {
        NormSample {
            t: self.t,
            u_s2: self.norms.u_s2,
            r_s2: self.norms.r_s2,
            u_w2inf: self.norms.u_w2inf,
            r_w1inf: self.norms.r_w1inf,
            min_r: self.norms.min_r,
        }
    }

    /// Largest absolute deviation between the cached norms and freshly
    /// computed ones (cache-coherence audit).
    pub fn cache_deviation(&self, env: &Env) -> Result<f64> {
        let fresh = Self::compute_norms(env, &self.r, &self.u)?;
        let c = &self.norms;
        Ok([
            (c.u_w2inf - fresh.u_w2inf).abs(),
            (c.r_w1inf - fresh.r_w1inf).abs(),
            (c.min_r - fresh.min_r).abs(),
            (c.phi - fresh.phi).abs(),
            (c.r_s2 - fresh.r_s2).abs(),
            (c.u_s2 - fresh.u_s2).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max))
    }
}

/// Bookkeeping of one accepted step.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    pub dt: f64,
    pub phi: f64,
    pub cfl_advective: f64,
    pub cfl_viscous: f64,
    /// Euclidean norm of the Brownian increment vector.
    pub noise_increment_l2: f64,
    /// Largest characteristic round-trip residual over the nodes.
    pub transport_residual: f64,
    pub cutoff_active: bool,
    pub dt_reduced: bool,
}

/// Supremum of the pointwise Euclidean speed.
fn sup_speed(u: &SpectralField) -> f64 {
    let len = u.grid().len();
    let dim = u.grid().dim();
    let mut best: f64 = 0.0;
    for j in 0..len {
        let mut sq = 0.0;
        for i in 0..dim {
            let v = u.comp_values(i)[j];
            sq += v * v;
        }
        best = best.max(sq);
    }
    best.sqrt()
}

fn wrap_dist(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut d = (a - b) % two_pi;
    if d > std::f64::consts::PI {
        d -= two_pi;
    }
    if d < -std::f64::consts::PI {
        d += two_pi;
    }
    d.abs()
}

/// Semi-Lagrangian transport update of the symmetrized density over one
/// step with frozen velocity: midpoint-backtracked characteristics of
/// `phi u`, spectral evaluation at the feet, exponential integrating
/// factor for the divergence term (midpoint quadrature).
pub fn transport_step(
    params: &FluidParams,
    r: &SpectralField,
    u: &SpectralField,
    dt: f64,
    phi: f64,
    tol: f64,
) -> Result<SpectralField> {
    transport_step_with_residual(params, r, u, dt, phi, tol).map(|(f, _)| f)
}

/// `transport_step` that also reports the worst round-trip residual.
pub fn transport_step_with_residual(
    params: &FluidParams,
    r: &SpectralField,
    u: &SpectralField,
    dt: f64,
    phi: f64,
    tol: f64,
) -> Result<(SpectralField, f64)> {
    let grid = r.grid().clone();
    if u.grid() != &grid || u.ncomp() != grid.dim() || r.ncomp() != 1 {
        return Err(Error::GridMismatch("transport inputs".into()));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Parameter {
            name: "phi",
            message: format!("cutoff value must lie in [0,1], got {phi}"),
        });
    }
    // frozen characteristics: zero displacement moves nothing
    if phi * dt == 0.0 || sup_speed(u) == 0.0 {
        return Ok((r.clone(), 0.0));
    }
    let dim = grid.dim();
    let len = grid.len();
    let gfac = 0.5 * (params.gamma - 1.0);
    let divu = u.divergence()?;
    let mut out = vec![0.0; len];
    let mut worst_residual: f64 = 0.0;
    for j in 0..len {
        let x = grid.node(j);
        // midpoint backtracking: x_mid = x - dt/2 phi u(x), foot = x - dt phi u(x_mid)
        let mut xm = x;
        for i in 0..dim {
            xm[i] -= 0.5 * dt * phi * u.comp_values(i)[j];
        }
        let mut foot = x;
        for i in 0..dim {
            foot[i] -= dt * phi * u.eval_comp_at(i, &xm);
        }
        // forward round trip with the same rule, as the residual audit
        let mut fm = foot;
        for i in 0..dim {
            fm[i] += 0.5 * dt * phi * u.eval_comp_at(i, &foot);
        }
        let mut residual = 0.0f64;
        for i in 0..dim {
            let fwd = foot[i] + dt * phi * u.eval_comp_at(i, &fm);
            let d = wrap_dist(fwd, x[i]);
            residual += d * d;
        }
        worst_residual = worst_residual.max(residual.sqrt());
        let r_foot = r.eval_comp_at(0, &foot);
        if !(r_foot > 0.0) {
            return Err(Error::StepRejected(format!(
                "density interpolant nonpositive ({r_foot:e}) at a characteristic foot"
            )));
        }
        let div_mid = divu.eval_comp_at(0, &xm);
        out[j] = r_foot * (-phi * gfac * dt * div_mid).exp();
    }
    if worst_residual > tol {
        return Err(Error::StepRejected(format!(
            "characteristic round-trip residual {worst_residual:e} exceeds {tol:e}"
        )));
    }
    Ok((SpectralField::from_values(&grid, 1, out)?, worst_residual))
}

/// Drift of the velocity equation without the cut-off factor:
/// `-u.grad u - r grad r + D(r) div S(grad u)`, every product dealiased.
pub fn drift_field(env: &Env, r: &SpectralField, u: &SpectralField) -> Result<SpectralField> {
    let grid = u.grid();
    let dim = grid.dim();
    let mut advec = Vec::with_capacity(dim);
    let comps: Vec<SpectralField> = (0..dim).map(|i| u.component(i)).collect();
    for i in 0..dim {
        let mut acc = SpectralField::zeros(grid, 1);
        for (j, uj) in comps.iter().enumerate() {
            acc = acc.add(&uj.dealias_product(&comps[i].partial(j, 1)?)?);
        }
        advec.push(acc);
    }
    let advec = SpectralField::from_components(&advec)?;
    let press = fluid::pressure_gradient_term(r)?;
    let divs = fluid::stress_divergence(&env.params, u)?;
    let dcoef = fluid::coeff_d(&env.params, r, 0.0)?;
    let mut visc = Vec::with_capacity(dim);
    for i in 0..dim {
        visc.push(dcoef.dealias_product(&divs.component(i))?);
    }
    let visc = SpectralField::from_components(&visc)?;
    Ok(visc.sub(&advec).sub(&press))
}

/// CFL ratios (advective, viscous) for stepping the given state at `dt`.
pub fn cfl_ratios(params: &FluidParams, r: &SpectralField, u: &SpectralField, dt: f64) -> Result<(f64, f64)> {
    let grid = u.grid();
    let dx = grid.dx();
    let adv = dt * sup_speed(u) / (0.5 * dx);
    let min_r = r.min_value();
    if !(min_r > 0.0) {
        return Err(Error::Vacuum { node: 0, min: min_r });
    }
    let max_d = 1.0 / params.rho_of_r(min_r);
    let visc = dt * max_d * params.total_viscosity() / (0.25 * dx * dx);
    Ok((adv, visc))
}

fn momentum_step_inner(
    env: &Env,
    r: &SpectralField,
    u: &SpectralField,
    dt: f64,
    phi: f64,
    inc: &WienerIncrement,
) -> Result<(SpectralField, f64, f64)> {
    let (adv, visc) = cfl_ratios(&env.params, r, u, dt)?;
    if adv > 1.0 {
        return Err(Error::CflViolation {
            kind: "advective",
            dt,
            bound: dt / adv,
        });
    }
    if visc > 1.0 {
        return Err(Error::CflViolation {
            kind: "viscous",
            dt,
            bound: dt / visc,
        });
    }
    let drift = drift_field(env, r, u)?;
    let mut next = u.axpy(dt * phi, &drift);
    if env.noise.modes() > 0 {
        let noise_sum = env.noise.eval_f_weighted_sum(&env.params, r, u, &inc.dbeta)?;
        next = next.axpy(phi, &noise_sum);
    }
    Ok((next.galerkin_project(env.level)?, adv, visc))
}

/// Euler-Maruyama velocity update with shared cut-off value `phi`.
pub fn momentum_step(
    env: &Env,
    r: &SpectralField,
    u: &SpectralField,
    dt: f64,
    phi: f64,
    inc: &WienerIncrement,
) -> Result<SpectralField> {
    momentum_step_inner(env, r, u, dt, phi, inc).map(|(f, _, _)| f)
}

/// One coupled step: cut-off from the pre-step state, transport, then the
/// momentum update against the pre-step density.
pub fn coupled_step(
    env: &Env,
    state: &State,
    dt: f64,
    inc: &WienerIncrement,
) -> Result<(State, StepReport)> {
    let phi = state.norms.phi;
    let (r_next, residual) =
        transport_step_with_residual(&env.params, &state.r, &state.u, dt, phi, env.transport_tol)?;
    let (u_next, adv, visc) = momentum_step_inner(env, &state.r, &state.u, dt, phi, inc)?;
    let next = State::new(env, state.t + dt, r_next, u_next)?;
    let report = StepReport {
        dt,
        phi,
        cfl_advective: adv,
        cfl_viscous: visc,
        noise_increment_l2: inc.dbeta.iter().map(|d| d * d).sum::<f64>().sqrt(),
        transport_residual: residual,
        cutoff_active: phi < 1.0,
        dt_reduced: false,
    };
    Ok((next, report))
}

/// Instantaneous dissipation rate
/// `phi sum_(|alpha| <= s) int D(r) S(grad d^alpha u) : grad d^alpha u dx`
/// (volume-normalized integral, nonnegative for lambda >= 0).
pub fn dissipation_rate(env: &Env, state: &State) -> Result<f64> {
    let grid = state.u.grid();
    let dim = grid.dim();
    let len = grid.len();
    let dcoef = fluid::coeff_d(&env.params, &state.r, 0.0)?;
    let mut total = 0.0;
    for alpha in multi_indices_up_to(dim, env.s) {
        let v = state.u.derivative(&alpha)?;
        let stress = fluid::stress_tensor(&env.params, &v)?;
        let mut grads = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for jx in 0..dim {
                grads.push(v.component(i).partial(jx, 1)?);
            }
        }
        let mut acc = 0.0;
        for node in 0..len {
            let mut contract = 0.0;
            for i in 0..dim {
                for jx in 0..dim {
                    contract +=
                        stress[i * dim + jx].values()[node] * grads[i * dim + jx].values()[node];
                }
            }
            acc += dcoef.values()[node] * contract;
        }
        total += acc / len as f64;
    }
    Ok(state.norms.phi * total)
}

/// One row of a trajectory's norm trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub sample: NormSample,
    pub phi: f64,
    /// Dissipation accumulator up to this row's time.
    pub dissipation: f64,
    pub event: Option<Threshold>,
}

/// Full record of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub rows: Vec<TraceRow>,
    /// States kept at stride boundaries when requested by the plan.
    pub states: Vec<State>,
    pub final_state: State,
    pub stopping: StoppingRecord,
    /// Accepted base steps.
    pub steps_taken: u64,
    pub total_halvings: u64,
    pub budget_exhausted: bool,
    /// Set when stepping failed after the maximum number of halvings; the
    /// partial rows remain valid.
    pub aborted: Option<String>,
    pub dissipation: f64,
}

/// Run schedule and bookkeeping switches.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub t_end: f64,
    pub dt: f64,
    /// Trace rows are emitted every `stride` base steps.
    pub stride: u64,
    /// Noise path (stream) index.
    pub path: u64,
    /// Global index of the first base step (continuation support).
    pub step_offset: u64,
    pub stopping: Option<StoppingRule>,
    pub max_halvings: u32,
    /// Cap on accepted base steps (budget), if any.
    pub max_steps: Option<u64>,
    /// Keep full states at stride boundaries.
    pub keep_states: bool,
    /// Accumulate the dissipation integral (costs a few transforms per step).
    pub record_dissipation: bool,
}

impl RunPlan {
    pub fn new(t_end: f64, dt: f64, stride: u64) -> Self {
        Self {
            t_end,
            dt,
            stride,
            path: 0,
            step_offset: 0,
            stopping: None,
            max_halvings: MAX_HALVINGS as u32,
            max_steps: None,
            keep_states: false,
            record_dissipation: true,
        }
    }
}

/// Per-step observer hook for diagnostics; receives the pre-step state,
/// the accepted post-step state, the increment that drove it and the
/// report (substeps included).
pub trait StepObserver {
    fn on_step(&mut self, before: &State, after: &State, inc: &WienerIncrement, report: &StepReport);
}

/// Observer that does nothing.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn on_step(&mut self, _: &State, _: &State, _: &WienerIncrement, _: &StepReport) {}
}

struct EventTracker {
    rule: Option<StoppingRule>,
    record: StoppingRecord,
}

impl EventTracker {
    fn new(rule: Option<StoppingRule>, horizon: f64) -> Self {
        Self {
            rule,
            record: StoppingRecord::untriggered(horizon),
        }
    }

    /// Feed one sample; returns the events that fired at this time.
    fn observe(&mut self, p: &NormSample) -> Vec<Threshold> {
        let Some(rule) = self.rule else {
            return Vec::new();
        };
        let mut fired = Vec::new();
        let horizon = self.record.horizon;
        if self.record.tau_r == horizon && p.u_w2inf >= rule.radius {
            self.record.tau_r = p.t;
            fired.push(Threshold::TauR);
        }
        if self.record.tau1_k == horizon && p.u_s2 >= rule.k {
            self.record.tau1_k = p.t;
            fired.push(Threshold::Tau1K);
        }
        if self.record.tau2_k == horizon && p.r_s2 >= rule.k {
            self.record.tau2_k = p.t;
            fired.push(Threshold::Tau2K);
        }
        if self.record.tau3_k == horizon && p.min_r <= 1.0 / rule.k {
            self.record.tau3_k = p.t;
            fired.push(Threshold::Tau3K);
        }
        if self.record.triggered.is_none() {
            self.record.triggered = fired.first().copied();
        }
        fired
    }
}

/// Advance one base step, recursively halving `dt` with refined-draw
/// increments when a part rejects the step.
#[allow(clippy::too_many_arguments)]
fn advance_base_step(
    env: &Env,
    streams: &NoiseStreams,
    path: u64,
    step: u64,
    sub: SubStep,
    dt: f64,
    max_halvings: u32,
    state: &State,
    diss: &mut f64,
    record_diss: bool,
    halvings: &mut u64,
    observer: &mut dyn StepObserver,
) -> Result<State> {
    let inc = sample_increments(streams, path, step, sub, env.noise.modes(), dt);
    match coupled_step(env, state, dt, &inc) {
        Ok((next, mut report)) => {
            if record_diss {
                *diss += dt * dissipation_rate(env, state)?;
            }
            report.dt_reduced = sub.level > 0;
            observer.on_step(state, &next, &inc, &report);
            Ok(next)
        }
        Err(e) if step_is_retryable(&e) && (sub.level as u32) < max_halvings => {
            *halvings += 1;
            let left = SubStep {
                level: sub.level + 1,
                index: sub.index * 2,
            };
            let right = SubStep {
                level: sub.level + 1,
                index: sub.index * 2 + 1,
            };
            let mid = advance_base_step(
                env,
                streams,
                path,
                step,
                left,
                dt / 2.0,
                max_halvings,
                state,
                diss,
                record_diss,
                halvings,
                observer,
            )?;
            advance_base_step(
                env,
                streams,
                path,
                step,
                right,
                dt / 2.0,
                max_halvings,
                &mid,
                diss,
                record_diss,
                halvings,
                observer,
            )
        }
        Err(e) => Err(e),
    }
}

fn step_is_retryable(e: &Error) -> bool {
    matches!(e, Error::StepRejected(_) | Error::CflViolation { .. })
}

/// Drive a trajectory from `state0` to the plan's horizon or the first
/// stopping event, recording trace rows every `stride` base steps (events
/// get their own rows).  Deterministic in `(env, plan, streams, state0)`.
pub fn run(env: &Env, plan: &RunPlan, streams: &NoiseStreams, state0: State) -> Result<Trajectory> {
    run_with_observer(env, plan, streams, state0, &mut NoObserver)
}

/// `run` with a per-step diagnostics hook.
pub fn run_with_observer(
    env: &Env,
    plan: &RunPlan,
    streams: &NoiseStreams,
    state0: State,
    observer: &mut dyn StepObserver,
) -> Result<Trajectory> {
    if !(plan.dt > 0.0) {
        return Err(Error::Parameter {
            name: "dt",
            message: "step size must be positive".into(),
        });
    }
    let span = plan.t_end - state0.t;
    if span < -1e-12 {
        return Err(Error::Parameter {
            name: "t_end",
            message: format!("horizon {} lies before the state time {}", plan.t_end, state0.t),
        });
    }
    let nsteps_f = span.max(0.0) / plan.dt;
    let nsteps = nsteps_f.round() as u64;
    if (nsteps_f - nsteps as f64).abs() > 1e-9 * (1.0 + nsteps_f) {
        return Err(Error::Parameter {
            name: "t_end",
            message: format!("horizon span {span} is not a multiple of dt = {}", plan.dt),
        });
    }
    if plan.stride == 0 || nsteps % plan.stride != 0 {
        return Err(Error::Parameter {
            name: "stride",
            message: format!("stride {} must divide the step count {nsteps}", plan.stride),
        });
    }
    let mut tracker = EventTracker::new(plan.stopping, plan.t_end);
    let mut rows = Vec::new();
    let mut states = Vec::new();
    let mut diss = 0.0f64;
    let mut halvings: u64 = 0;
    let mut state = state0;
    let mut aborted = None;
    let mut budget_exhausted = false;

    let fired = tracker.observe(&state.norm_sample());
    rows.push(TraceRow {
        sample: state.norm_sample(),
        phi: state.norms.phi,
        dissipation: diss,
        event: fired.first().copied(),
    });
    if plan.keep_states {
        states.push(state.clone());
    }
    let mut steps_taken: u64 = 0;
    if fired.is_empty() {
        for j in 0..nsteps {
            if let Some(max) = plan.max_steps {
                if steps_taken >= max {
                    budget_exhausted = true;
                    break;
                }
            }
            let global_step = plan.step_offset + j;
            let next = match advance_base_step(
                env,
                streams,
                plan.path,
                global_step,
                SubStep::default(),
                plan.dt,
                plan.max_halvings,
                &state,
                &mut diss,
                plan.record_dissipation,
                &mut halvings,
                observer,
            ) {
                Ok(next) => next,
                Err(e) => {
                    aborted = Some(e.to_string());
                    break;
                }
            };
            state = next;
            steps_taken += 1;
            let fired = tracker.observe(&state.norm_sample());
            let on_stride = (j + 1) % plan.stride == 0;
            if on_stride || !fired.is_empty() {
                rows.push(TraceRow {
                    sample: state.norm_sample(),
                    phi: state.norms.phi,
                    dissipation: diss,
                    event: fired.first().copied(),
                });
                if plan.keep_states && on_stride {
                    states.push(state.clone());
                }
            }
            if !fired.is_empty() {
                break;
            }
        }
    }
    Ok(Trajectory {
        rows,
        states,
        final_state: state,
        stopping: tracker.record,
        steps_taken,
        total_halvings: halvings,
        budget_exhausted,
        aborted,
        dissipation: diss,
    })
}

/// Per-iteration contraction bookkeeping of the Picard mode.
#[derive(Clone, Debug)]
pub struct PicardReport {
    /// `d_j = sup over the window of |u^(j+1) - u^(j)|_2`.
    pub distances: Vec<f64>,
    /// `d_(j+1) / d_j` (zero when both vanish).
    pub ratios: Vec<f64>,
}

/// Fixed-point iteration of the integral map over a short window: given a
/// velocity path, solve transport along it, then rebuild the velocity
/// path from the integral form (left-endpoint quadrature for the
/// deterministic terms, frozen increments for the stochastic one).
pub fn picard_solve(
    env: &Env,
    state0: &State,
    window_steps: usize,
    dt: f64,
    incs: &[WienerIncrement],
    iterations: usize,
    initial_path: Option<Vec<SpectralField>>,
) -> Result<(State, PicardReport)> {
    if window_steps == 0 || incs.len() != window_steps {
        return Err(Error::Parameter {
            name: "window",
            message: format!(
                "need one increment per window step ({} given, {window_steps} steps)",
                incs.len()
            ),
        });
    }
    if iterations < 2 {
        return Err(Error::Parameter {
            name: "iterations",
            message: "need at least two iterations to report a ratio".into(),
        });
    }
    let mut upath: Vec<SpectralField> = match initial_path {
        Some(p) => {
            if p.len() != window_steps + 1 {
                return Err(Error::Parameter {
                    name: "initial_path",
                    message: format!(
                        "initial path must have {} entries, got {}",
                        window_steps + 1,
                        p.len()
                    ),
                });
            }
            p
        }
        None => vec![state0.u.clone(); window_steps + 1],
    };
    let mut rpath: Vec<SpectralField> = Vec::new();
    let mut distances = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        // transport along the current velocity path
        rpath.clear();
        rpath.push(state0.r.clone());
        let mut phis = Vec::with_capacity(window_steps);
        for j in 0..window_steps {
            let phi = env.cutoff.phi(upath[j].wkinf_norm(2)?);
            phis.push(phi);
            let rn = transport_step(&env.params, &rpath[j], &upath[j], dt, phi, env.transport_tol)?;
            rpath.push(rn);
        }
        // rebuild the velocity path from the integral form
        let mut vpath = Vec::with_capacity(window_steps + 1);
        vpath.push(state0.u.clone());
        let mut acc = state0.u.clone();
        for j in 0..window_steps {
            let drift = drift_field(env, &rpath[j], &upath[j])?;
            acc = acc.axpy(dt * phis[j], &drift);
            if env.noise.modes() > 0 {
                let noise_sum =
                    env.noise
                        .eval_f_weighted_sum(&env.params, &rpath[j], &upath[j], &incs[j].dbeta)?;
                acc = acc.axpy(phis[j], &noise_sum);
            }
            vpath.push(acc.galerkin_project(env.level)?);
        }
        let mut d: f64 = 0.0;
        for (a, b) in vpath.iter().zip(upath.iter()) {
            d = d.max(a.sub(b).l2_norm());
        }
        distances.push(d);
        upath = vpath;
    }
    let mut ratios = Vec::with_capacity(distances.len().saturating_sub(1));
    for w in distances.windows(2) {
        ratios.push(if w[0] > 0.0 {
            w[1] / w[0]
        } else if w[1] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    // roundoff floor: distances at machine scale count as converged
    let floor = 1e-13 * (1.0 + state0.u.l2_norm());
    let converged_flat = distances.last().map(|d| *d <= floor).unwrap_or(false);
    if let Some(last) = ratios.last() {
        if *last >= 1.0 && !converged_flat {
            return Err(Error::WindowTooLong {
                ratio: *last,
                iterations,
            });
        }
    }
    let final_state = State::new(
        env,
        state0.t + window_steps as f64 * dt,
        rpath.last().unwrap().clone(),
        upath.last().unwrap().clone(),
    )?;
    Ok((final_state, PicardReport { distances, ratios }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::StateBox;
    use crate::spectral::TorusGrid;
    use approx::assert_relative_eq;

    fn params() -> FluidParams {
        FluidParams {
            gamma: 2.0,
            a: 1.0,
            mu: 1.0,
            lambda: 0.0,
        }
    }

    fn env1(m: usize, radius: f64, modes: usize) -> Env {
        let grid = TorusGrid::new(1, m).unwrap();
        let noise = if modes == 0 {
            NoiseModel::silent(&grid)
        } else {
            NoiseModel::default_model(&grid, modes, 0.1, 1.0, &StateBox::default()).unwrap()
        };
        Env::new(params(), CutoffSpec::new(radius).unwrap(), noise, 4, m / 2).unwrap()
    }

    fn rest_state(env: &Env, level: f64) -> State {
        let grid = env.noise.grid().clone();
        let r = SpectralField::constant(&grid, level);
        let u = SpectralField::zeros(&grid, grid.dim());
        State::new(env, 0.0, r, u).unwrap()
    }

    #[test]
    fn transport_frozen_for_zero_velocity() {
        let env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.5 * x[0].cos());
        let u = SpectralField::zeros(&grid, 1);
        let next = transport_step(&env.params, &r, &u, 1e-3, 1.0, 1e-8).unwrap();
        assert_eq!(next.values(), r.values());
    }

    #[test]
    fn transport_constant_advection_is_translation() {
        let env = env1(64, 10.0, 0);
        let grid = env.noise.grid().clone();
        let c = 0.3;
        let dt = 1e-2;
        let r = SpectralField::from_fn(&grid, |x| 2.0 + x[0].cos() + 0.2 * (3.0 * x[0]).sin());
        let u = SpectralField::constant(&grid, c);
        let next = transport_step(&env.params, &r, &u, dt, 1.0, 1e-8).unwrap();
        for j in 0..grid.len() {
            let x = grid.axis_coord(j);
            let expect = 2.0 + (x - c * dt).cos() + 0.2 * (3.0 * (x - c * dt)).sin();
            assert!(
                (next.values()[j] - expect).abs() < 1e-10,
                "node {j}: {} vs {expect}",
                next.values()[j]
            );
        }
    }

    #[test]
    fn transport_matches_characteristic_ode_oracle() {
        // u = sin x frozen, r0 = 1, gamma = 2: along dX/dt = sin X the
        // density obeys dr/dt = -(1/2) r cos X
        let env = env1(64, 10.0, 0);
        let grid = env.noise.grid().clone();
        let dt = 1e-3;
        let r = SpectralField::constant(&grid, 1.0);
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| x[0].sin());
        let next = transport_step(&env.params, &r, &u, dt, 1.0, 1e-8).unwrap();
        for j in 0..grid.len() {
            let x = grid.axis_coord(j);
            // integrate backwards to the foot with RK4, then the integral
            // of cos X forward along the same characteristic
            let nsub = 100;
            let h = dt / nsub as f64;
            let mut y = x;
            let mut integral = 0.0;
            for _ in 0..nsub {
                // d/ds Y(s) = -sin(Y) going backward in time
                let f = |y: f64| -y.sin();
                let k1 = f(y);
                let k2 = f(y + 0.5 * h * k1);
                let k3 = f(y + 0.5 * h * k2);
                let k4 = f(y + h * k3);
                let y_next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                // trapezoid on cos along the way (backward orientation)
                integral += 0.5 * h * (y.cos() + y_next.cos());
                y = y_next;
            }
            let expect = (-0.5 * integral).exp();
            assert!(
                (next.values()[j] - expect).abs() < 1e-8,
                "node {j}: {} vs {expect}",
                next.values()[j]
            );
        }
    }

    #[test]
    fn momentum_rest_state_is_exact_fixed_point() {
        let env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::constant(&grid, 2.0);
        let u = SpectralField::zeros(&grid, 1);
        let inc = WienerIncrement {
            dt: 1e-3,
            dbeta: vec![],
        };
        let next = momentum_step(&env, &r, &u, 1e-3, 1.0, &inc).unwrap();
        assert!(next.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn momentum_one_step_gaussian_moment() {
        // u = 0, r = const, drift vanishes; u_next = sum_k P_n a_k dbeta_k,
        // so E |u_next|_2^2 = dt sum_k |P_n a_k|_2^2
        let m = 32;
        let grid = TorusGrid::new(1, m).unwrap();
        let modes = 4;
        let model =
            NoiseModel::default_model(&grid, modes, 0.5, 1.0, &StateBox::default()).unwrap();
        let env = Env::new(
            params(),
            CutoffSpec::new(10.0).unwrap(),
            model.clone(),
            4,
            m / 2,
        )
        .unwrap();
        let r = SpectralField::constant(&grid, 2.0);
        let u = SpectralField::zeros(&grid, 1);
        // expected projected field energies from the rest-state fields
        let fields = model.eval_f(&env.params, &r, &u).unwrap();
        let expect: f64 = fields
            .iter()
            .map(|f| {
                let p = f.galerkin_project(env.level).unwrap();
                p.l2_norm().powi(2)
            })
            .sum();
        let dt = 1e-3;
        let streams = NoiseStreams::new(31);
        let replicas = 10_000u64;
        let mut acc = 0.0;
        for path in 0..replicas {
            let inc = sample_increments(&streams, path, 0, SubStep::default(), modes, dt);
            let next = momentum_step(&env, &r, &u, dt, 1.0, &inc).unwrap();
            acc += next.l2_norm().powi(2);
        }
        let mean = acc / replicas as f64;
        let target = dt * expect;
        assert!(
            (mean - target).abs() < 0.05 * target,
            "mean {mean} vs dt*sum {target}"
        );
    }

    #[test]
    fn coupled_step_rest_state_fixed_point() {
        let env = env1(32, 10.0, 0);
        let state = rest_state(&env, 2.0);
        let inc = WienerIncrement {
            dt: 1e-3,
            dbeta: vec![],
        };
        let (next, report) = coupled_step(&env, &state, 1e-3, &inc).unwrap();
        assert_eq!(next.r.values(), state.r.values());
        assert!(next.u.values().iter().all(|v| *v == 0.0));
        assert_eq!(report.phi, 1.0);
        assert!(!report.cutoff_active);
    }

    #[test]
    fn plateau_state_is_frozen() {
        // |u|_{2,inf} >= R + 1 puts phi at exactly zero
        let env = env1(32, 2.0, 8);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.3 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 4.0 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        assert!(state.norms().u_w2inf >= 3.0);
        assert_eq!(state.norms().phi, 0.0);
        let streams = NoiseStreams::new(7);
        let inc = sample_increments(&streams, 0, 0, SubStep::default(), 8, 1e-3);
        let (next, report) = coupled_step(&env, &state, 1e-3, &inc).unwrap();
        assert_eq!(next.r.values(), state.r.values());
        assert_eq!(next.u.values(), state.u.values());
        assert!(report.cutoff_active);
    }

    #[test]
    fn run_zero_horizon_returns_single_state() {
        let env = env1(32, 10.0, 4);
        let state = rest_state(&env, 2.0);
        let plan = RunPlan::new(0.0, 1e-3, 1);
        let streams = NoiseStreams::new(1);
        let traj = run(&env, &plan, &streams, state).unwrap();
        assert_eq!(traj.rows.len(), 1);
        assert_eq!(traj.steps_taken, 0);
        assert_eq!(traj.stopping.tau_r, 0.0); // horizon itself is 0
    }

    #[test]
    fn run_rows_and_reproducibility() {
        let env = env1(32, 10.0, 4);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        let mut plan = RunPlan::new(0.05, 1e-3, 10);
        plan.path = 3;
        let streams = NoiseStreams::new(42);
        let a = run(&env, &plan, &streams, state.clone()).unwrap();
        let b = run(&env, &plan, &streams, state).unwrap();
        assert_eq!(a.rows.len(), 6); // 50 steps / stride 10 + initial row
        assert_eq!(a.rows, b.rows);
        assert_eq!(
            a.final_state.u.values(),
            b.final_state.u.values()
        );
        // dissipation accumulates
        assert!(a.rows.windows(2).all(|w| w[1].dissipation >= w[0].dissipation));
    }

    #[test]
    fn zero_noise_runs_are_seed_independent() {
        let env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        let plan = RunPlan::new(0.02, 1e-3, 5);
        let a = run(&env, &plan, &NoiseStreams::new(1), state.clone()).unwrap();
        let b = run(&env, &plan, &NoiseStreams::new(999), state).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_state.u.values(), b.final_state.u.values());
    }

    #[test]
    fn cutoff_inactive_run_matches_forced_phi_one() {
        let mut env = env1(32, 10.0, 6);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        let plan = RunPlan::new(0.5, 1e-3, 100);
        let streams = NoiseStreams::new(5);
        let a = run(&env, &plan, &streams, state.clone()).unwrap();
        assert!(a
            .rows
            .iter()
            .all(|row| row.sample.u_w2inf < 10.0 && row.phi == 1.0));
        env.cutoff = CutoffSpec::inactive();
        let state1 = State::new(&env, 0.0, state.r.clone(), state.u.clone()).unwrap();
        let b = run(&env, &plan, &streams, state1).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_state.u.values(), b.final_state.u.values());
        assert_eq!(a.final_state.r.values(), b.final_state.r.values());
    }

    #[test]
    fn galerkin_band_preserved_along_run() {
        let m = 32;
        let grid = TorusGrid::new(1, m).unwrap();
        let noise =
            NoiseModel::default_model(&grid, 4, 0.1, 1.0, &StateBox::default()).unwrap();
        let level = 8;
        let env = Env::new(params(), CutoffSpec::new(10.0).unwrap(), noise, 4, level).unwrap();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * (6.0 * x[0]).sin());
        let mut state = State::new(&env, 0.0, r, u).unwrap();
        let streams = NoiseStreams::new(11);
        for step in 0..20 {
            let inc = sample_increments(&streams, 0, step, SubStep::default(), 4, 1e-3);
            let (next, _) = coupled_step(&env, &state, 1e-3, &inc).unwrap();
            let reproj = next.u.galerkin_project(level).unwrap();
            assert_eq!(reproj.coeffs(), next.u.coeffs());
            state = next;
        }
    }

    #[test]
    fn mean_conserved_under_solenoidal_transport() {
        // 2D divergence-free velocity: pure transport conserves the mean
        let grid = TorusGrid::new(2, 16).unwrap();
        let p = params();
        let amp = 0.2;
        let u = SpectralField::from_fn_vec(&grid, 2, |c, x| {
            if c == 0 {
                amp * x[0].sin() * x[1].cos()
            } else {
                -amp * x[0].cos() * x[1].sin()
            }
        });
        assert!(u.divergence().unwrap().l2_norm() < 1e-13);
        let mut r = SpectralField::from_fn(&grid, |x| 2.0 + 0.3 * x[0].cos() + 0.2 * x[1].sin());
        let m0 = r.mean(0);
        let dt = 1e-3;
        for _ in 0..1000 {
            r = transport_step(&p, &r, &u, dt, 1.0, 1e-6).unwrap();
        }
        assert!(
            (r.mean(0) - m0).abs() < 1e-9,
            "mean drifted: {} vs {m0}",
            r.mean(0)
        );
    }

    #[test]
    fn picard_rest_state_is_fixed_point() {
        let env = env1(32, 10.0, 0);
        let state = rest_state(&env, 2.0);
        let dt = 1e-3;
        let incs = vec![
            WienerIncrement {
                dt,
                dbeta: vec![]
            };
            4
        ];
        let (end, report) = picard_solve(&env, &state, 4, dt, &incs, 3, None).unwrap();
        assert!(report.distances.iter().all(|d| *d == 0.0));
        assert_eq!(end.u.values(), state.u.values());
    }

    #[test]
    fn picard_contraction_ratio_grows_with_window() {
        let env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        let dt = 1e-3;
        let mut last_ratios = Vec::new();
        for window in [2usize, 4, 8] {
            let incs = vec![
                WienerIncrement {
                    dt,
                    dbeta: vec![]
                };
                window
            ];
            let (_, report) = picard_solve(&env, &state, window, dt, &incs, 4, None).unwrap();
            let ratio = *report.ratios.last().unwrap();
            assert!(ratio < 1.0, "window {window}: ratio {ratio}");
            last_ratios.push(ratio);
        }
        assert!(last_ratios[0] < last_ratios[1] && last_ratios[1] < last_ratios[2]);
    }

    #[test]
    fn picard_iteration_decay_is_geometric() {
        let env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        let dt = 1e-3;
        let window = 4;
        let incs = vec![
            WienerIncrement {
                dt,
                dbeta: vec![]
            };
            window
        ];
        let (_, short) = picard_solve(&env, &state, window, dt, &incs, 3, None).unwrap();
        let (_, long) = picard_solve(&env, &state, window, dt, &incs, 6, None).unwrap();
        let rho = *short.ratios.last().unwrap();
        assert!(rho < 1.0);
        let observed = long.distances.last().unwrap() / short.distances.last().unwrap();
        assert!(
            observed < 0.5,
            "three extra iterations should shrink the defect (got factor {observed})"
        );
    }

    #[test]
    fn state_cache_is_coherent() {
        let env = env1(32, 10.0, 4);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.2 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.3 * x[0].sin());
        let state = State::new(&env, 0.0, r, u).unwrap();
        assert!(state.cache_deviation(&env).unwrap() < 1e-12);
    }

    #[test]
    fn cfl_violation_reported_with_bound() {
        let env = env1(32, 1e6, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::constant(&grid, 2.0);
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 50.0 * x[0].sin());
        let inc = WienerIncrement {
            dt: 0.1,
            dbeta: vec![],
        };
        let err = momentum_step(&env, &r, &u, 0.1, 1.0, &inc).unwrap_err();
        assert!(matches!(err, Error::CflViolation { kind: "advective", .. }));
    }

    #[test]
    fn rejected_steps_refine_and_recover() {
        // set the residual tolerance between the base-step residual and the
        // halved-step one (the residual shrinks like dt^3), so the driver
        // must halve at least once and then recovers
        let mut env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 5.0 * x[0].sin());
        let (_, residual0) =
            transport_step_with_residual(&env.params, &r, &u, 1e-3, 1.0, 1.0).unwrap();
        assert!(residual0 > 1e-15, "base residual at roundoff: {residual0}");
        env.transport_tol = residual0 / 4.0;
        let state = State::new(&env, 0.0, r, u).unwrap();
        let plan = RunPlan::new(2e-3, 1e-3, 1);
        let traj = run(&env, &plan, &NoiseStreams::new(1), state).unwrap();
        assert!(traj.aborted.is_none());
        assert!(traj.total_halvings > 0);
        assert_eq!(traj.steps_taken, 2);
        assert_relative_eq!(traj.final_state.t, 2e-3, max_relative = 1e-12);
    }

    #[test]
    fn exhausted_halvings_abort_with_partial_record() {
        let mut env = env1(32, 10.0, 0);
        let grid = env.noise.grid().clone();
        let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
        let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 5.0 * x[0].sin());
        let (_, residual0) =
            transport_step_with_residual(&env.params, &r, &u, 1e-3, 1.0, 1.0).unwrap();
        env.transport_tol = residual0 / 4.0;
        let state = State::new(&env, 0.0, r, u).unwrap();
        let mut plan = RunPlan::new(2e-3, 1e-3, 1);
        plan.max_halvings = 0;
        let traj = run(&env, &plan, &NoiseStreams::new(1), state).unwrap();
        assert!(traj.aborted.is_some());
        assert_eq!(traj.steps_taken, 0);
        assert_eq!(traj.rows.len(), 1);
        assert_eq!(traj.final_state.t, 0.0);
    }
}
