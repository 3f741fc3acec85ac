//! Trajectory diagnostics: differentiated-system commutator terms, the
//! Ito-expansion residual, maximum-principle audits, pathwise-uniqueness
//! and Galerkin-comparison experiments, and ensemble energy moments.
//!
//! Everything here observes trajectories; nothing feeds back into the
//! stepping.  All fitted constants go through the fit/validate split
//! (fit on one deterministic ensemble, zero violations with 10% headroom
//! on a disjoint one) and land in the constants table.

use rayon::prelude::*;

use crate::constants::{commutator_term_key, FittedConstants};
use crate::fluid::{self, CutoffSpec, FluidParams};
use crate::integrator::{
    drift_field, run, run_with_observer, Env, RunPlan, State, StepObserver, StepReport, Trajectory,
};
use crate::noise::WienerIncrement;
use crate::spectral::{
    fit_and_validate, random_field, random_positive_field, MultiIndex, SpectralField,
};
use crate::streams::{sub_rng, NoiseStreams};
use crate::{Error, Result};

/// Norms and bound factors of the five commutator terms of the
/// differentiated system, taken at one probe multi-index.
#[derive(Clone, Debug)]
pub struct CommutatorReport {
    /// `|T_i|_2`, i = 1..5.
    pub terms: [f64; 5],
    /// Right-side bound factors without constants, same order.
    pub bounds: [f64; 5],
    /// `terms / bounds` (0 when both vanish, infinite when only the
    /// bound does).
    pub ratios: [f64; 5],
    pub phi: f64,
    pub resolution_warning: bool,
}

fn ratio_of(lhs: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        lhs / bound
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Assemble the commutator terms `T_1..T_5` spectrally for the probe
/// multi-index `alpha` (|alpha| = s) and report their `L^2` norms next to
/// the bound factors:
///
/// * `T_1 = phi [u . d^a grad r - d^a (u . grad r)]`,
///   bound `phi [ |grad u|_inf |grad^s r|_2 + |grad r|_inf |grad^s u|_2 ]`
/// * `T_2 = (gamma-1)/2 phi [ r d^a div u - d^a (r div u) ]`,
///   bound `phi [ |grad r|_inf |grad^s u|_2 + |div u|_inf |grad^s r|_2 ]`
/// * `T_3 = phi [ u . d^a grad u - d^a (u . grad u) ]`,
///   bound `phi |grad u|_inf |grad^s u|_2`
/// * `T_4 = phi [ r d^a grad r - d^a (r grad r) ]`,
///   bound `|grad r|_inf |grad^s r|_2`
/// * `T_5 = -phi [ D(r) d^a div S(grad u) - d^a (D(r) div S(grad u)) ]`,
///   bound `phi [ |grad D|_inf |grad^s S|_2 + |div S|_inf |grad^s D|_2 ]`
///
/// Products are dealiased exactly as in the scheme, so the terms vanish
/// identically in the constant-coefficient cases.
pub fn commutator_norms(
    params: &FluidParams,
    cutoff: &CutoffSpec,
    r: &SpectralField,
    u: &SpectralField,
    s: usize,
    alpha: &MultiIndex,
) -> Result<CommutatorReport> {
    let grid = u.grid();
    let dim = grid.dim();
    if r.ncomp() != 1 || u.ncomp() != dim {
        return Err(Error::InvalidField(
            "commutator check takes scalar r and a velocity field".into(),
        ));
    }
    if alpha.iter().sum::<usize>() != s {
        return Err(Error::Parameter {
            name: "alpha",
            message: format!("probe index must have |alpha| = s = {s}"),
        });
    }
    let phi = cutoff.phi(u.wkinf_norm(2)?);
    let gfac = 0.5 * (params.gamma - 1.0);

    let grad_u_inf = u.grad_sup_norm()?;
    let grad_r_inf = r.grad_sup_norm()?;
    let grads_u = u.grad_norm_sq(s).sqrt();
    let grads_r = r.grad_norm_sq(s).sqrt();
    let divu = u.divergence()?;
    let div_inf = divu.wkinf_norm(0)?;

    let ucomps: Vec<SpectralField> = (0..dim).map(|i| u.component(i)).collect();

    // T1: u . d^a grad r - d^a (u . grad r)
    let mut lead = SpectralField::zeros(grid, 1);
    let mut inner = SpectralField::zeros(grid, 1);
    for (j, uj) in ucomps.iter().enumerate() {
        let dj_r = r.partial(j, 1)?;
        lead = lead.add(&uj.dealias_product(&dj_r.derivative(alpha)?)?);
        inner = inner.add(&uj.dealias_product(&dj_r)?);
    }
    let t1 = lead.sub(&inner.derivative(alpha)?).scale(phi);
    let b1 = phi * (grad_u_inf * grads_r + grad_r_inf * grads_u);

    // T2: (gamma-1)/2 [ r d^a div u - d^a (r div u) ]
    let lead = r.dealias_product(&divu.derivative(alpha)?)?;
    let inner = r.dealias_product(&divu)?;
    let t2 = lead.sub(&inner.derivative(alpha)?).scale(gfac * phi);
    let b2 = phi * (grad_r_inf * grads_u + div_inf * grads_r);

    // T3: u . d^a grad u - d^a (u . grad u), componentwise
    let mut t3comps = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut lead = SpectralField::zeros(grid, 1);
        let mut inner = SpectralField::zeros(grid, 1);
        for (j, uj) in ucomps.iter().enumerate() {
            let dj_ui = ucomps[i].partial(j, 1)?;
            lead = lead.add(&uj.dealias_product(&dj_ui.derivative(alpha)?)?);
            inner = inner.add(&uj.dealias_product(&dj_ui)?);
        }
        t3comps.push(lead.sub(&inner.derivative(alpha)?).scale(phi));
    }
    let t3 = SpectralField::from_components(&t3comps)?;
    let b3 = phi * grad_u_inf * grads_u;

    // T4: r d^a grad r - d^a (r grad r)
    let mut t4comps = Vec::with_capacity(dim);
    for i in 0..dim {
        let di_r = r.partial(i, 1)?;
        let lead = r.dealias_product(&di_r.derivative(alpha)?)?;
        let inner = r.dealias_product(&di_r)?;
        t4comps.push(lead.sub(&inner.derivative(alpha)?).scale(phi));
    }
    let t4 = SpectralField::from_components(&t4comps)?;
    let b4 = grad_r_inf * grads_r;

    // T5: -[ D d^a div S - d^a (D div S) ]
    let dcoef = fluid::coeff_d(params, r, 0.0)?;
    let divs = fluid::stress_divergence(params, u)?;
    let mut t5comps = Vec::with_capacity(dim);
    for i in 0..dim {
        let di = divs.component(i);
        let lead = dcoef.dealias_product(&di.derivative(alpha)?)?;
        let inner = dcoef.dealias_product(&di)?;
        t5comps.push(lead.sub(&inner.derivative(alpha)?).scale(-phi));
    }
    let t5 = SpectralField::from_components(&t5comps)?;
    let stress = fluid::stress_tensor(params, u)?;
    let grads_stress = stress
        .iter()
        .map(|e| e.grad_norm_sq(s))
        .sum::<f64>()
        .sqrt();
    let b5 = phi
        * (dcoef.grad_sup_norm()? * grads_stress
            + divs.wkinf_norm(0)? * dcoef.grad_norm_sq(s).sqrt());

    let terms = [
        t1.l2_norm(),
        t2.l2_norm(),
        t3.l2_norm(),
        t4.l2_norm(),
        t5.l2_norm(),
    ];
    let bounds = [b1, b2, b3, b4, b5];
    let mut ratios = [0.0; 5];
    for i in 0..5 {
        ratios[i] = ratio_of(terms[i], bounds[i]);
    }
    Ok(CommutatorReport {
        terms,
        bounds,
        ratios,
        phi,
        resolution_warning: r.top_band_energy_fraction() > 0.01
            || u.top_band_energy_fraction() > 0.01,
    })
}

/// Fit the five commutator-term constants on flat-spectrum ensembles and
/// validate them (200 fit / 100 validation / 10% headroom / zero
/// violations).  The fitted values are stored under the `commutator.t*`
/// keys.  Fitting uses an inactive cut-off, so the ratios are evaluated
/// at `phi = 1`.
pub fn fit_commutator_constants(
    params: &FluidParams,
    grid: &crate::spectral::TorusGrid,
    s: usize,
    table: &mut FittedConstants,
    seed: u64,
) -> Result<()> {
    let dim = grid.dim();
    let m = grid.m();
    let kmax = grid.dealias_cutoff() as usize;
    let cutoff = CutoffSpec::inactive();
    let mut alpha = [0usize; 3];
    alpha[0] = s;
    let fits: Vec<[f64; 5]> = (0..300usize)
        .into_par_iter()
        .map(|i| {
            let mut rng = sub_rng(seed, &[0xc033, i as u64]);
            let r = random_positive_field(grid, 2.0, 0.4, 0.0, kmax, &mut rng);
            let u = random_field(grid, dim, 0.0, kmax, &mut rng);
            commutator_norms(params, &cutoff, &r, &u, s, &alpha).map(|rep| rep.ratios)
        })
        .collect::<Result<_>>()?;
    for term in 0..5 {
        let fit = fit_and_validate(200, 100, 0.1, |i| fits[i][term]);
        if fit.violations > 0 {
            return Err(Error::AuditFailure(format!(
                "commutator T{} fit: {} validation violations (fitted {}, worst {})",
                term + 1,
                fit.violations,
                fit.fitted,
                fit.max_validation_ratio
            )));
        }
        table.set(&commutator_term_key(term + 1, dim, m, s), fit.fitted);
    }
    Ok(())
}

/// Largest fitted commutator constant for `(dim, m, s)`; the Gronwall
/// weight of the uniqueness experiment uses this as its `c`.
pub fn commutator_weight_constant(
    table: &FittedConstants,
    dim: usize,
    m: usize,
    s: usize,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for term in 1..=5 {
        best = best.max(table.require(&commutator_term_key(term, dim, m, s))?);
    }
    Ok(best)
}

/// Observer that records every accepted (sub)step: pre/post states, the
/// increment, and the report.  `states` holds the initial state followed
/// by each accepted post-state.
#[derive(Default)]
pub struct WindowRecorder {
    pub states: Vec<State>,
    pub incs: Vec<WienerIncrement>,
    pub reports: Vec<StepReport>,
}

impl StepObserver for WindowRecorder {
    fn on_step(&mut self, before: &State, after: &State, inc: &WienerIncrement, report: &StepReport) {
        if self.states.is_empty() {
            self.states.push(before.clone());
        }
        self.states.push(after.clone());
        self.incs.push(inc.clone());
        self.reports.push(*report);
    }
}

/// Per-step defect of the discrete Ito expansion of `|d^a u|_2^2`:
///
/// `residual_j = (|d^a u_(j+1)|^2 - |d^a u_j|^2)
///   - [ 2 dt phi <d^a drift, d^a u_j>
///     + 2 phi <d^a sum_k F_k dbeta_k, d^a u_j>
///     + dt sum_k phi^2 |d^a P_n F_k|^2 ]`
///
/// with every term discretized exactly as in the momentum update.  For a
/// zero-noise run the residual is `dt^2 phi^2 |d^a P_n drift|^2` and
/// shrinks by about 4x per halving; with noise, the missing quadratic
/// cross terms make the per-path residual O(dt) in the mean-absolute
/// sense.
pub fn ito_residual(
    env: &Env,
    states: &[State],
    incs: &[WienerIncrement],
    alpha: &MultiIndex,
) -> Result<Vec<f64>> {
    if states.len() != incs.len() + 1 || incs.is_empty() {
        return Err(Error::Parameter {
            name: "window",
            message: format!(
                "need n+1 states for n >= 1 increments, got {} states, {} increments",
                states.len(),
                incs.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(incs.len());
    for j in 0..incs.len() {
        let st = &states[j];
        let phi = st.norms().phi;
        let dt = incs[j].dt;
        let da_u = st.u.derivative(alpha)?;
        let da_next = states[j + 1].u.derivative(alpha)?;
        let delta = da_next.l2_norm().powi(2) - da_u.l2_norm().powi(2);
        let drift = drift_field(env, &st.r, &st.u)?.galerkin_project(env.level)?;
        let mut expansion = 2.0 * dt * phi * drift.derivative(alpha)?.l2_inner(&da_u);
        if env.noise.modes() > 0 {
            let nsum = env
                .noise
                .eval_f_weighted_sum(&env.params, &st.r, &st.u, &incs[j].dbeta)?
                .galerkin_project(env.level)?;
            expansion += 2.0 * phi * nsum.derivative(alpha)?.l2_inner(&da_u);
            let fields = env.noise.eval_f(&env.params, &st.r, &st.u)?;
            for f in &fields {
                let p = f.galerkin_project(env.level)?;
                expansion += dt * phi * phi * p.derivative(alpha)?.l2_norm().powi(2);
            }
        }
        out.push(delta - expansion);
    }
    Ok(out)
}

/// Maximum-principle audit margins and fitted growth rates.
#[derive(Clone, Debug)]
pub struct MaxPrincipleReport {
    /// Smallest `min r(t) - lower bound(t)` over the trajectory.
    pub worst_lower_margin: f64,
    /// Smallest `upper bound(t) - max r(t)`.
    pub worst_upper_margin: f64,
    /// Strict positivity held on every state.
    pub positive: bool,
    /// Best empirical `c` in the `exp(c R t)` envelope form.
    pub fitted_rate: f64,
    /// Best empirical rate of the gradient-growth envelope.
    pub fitted_gradient_rate: f64,
}

/// Check the literal discrete transport bounds along a recorded window:
///
/// `min r(t) >= min r(0) exp(-(gamma-1)/2 int phi |div u|_inf)`,
/// `max r(t) <= max r(0) exp(+(gamma-1)/2 int phi |div u|_inf)`,
///
/// with left-endpoint quadrature of the integral and nodal sup norms.
/// Violations beyond `tol` are an integrator defect and fail the audit.
pub fn maxprinciple_audit(
    params: &FluidParams,
    states: &[State],
    radius: f64,
    tol: f64,
) -> Result<MaxPrincipleReport> {
    if states.len() < 2 {
        return Err(Error::Parameter {
            name: "states",
            message: "audit needs at least two states".into(),
        });
    }
    let gfac = 0.5 * (params.gamma - 1.0);
    let min0 = states[0].r.min_value();
    let max0 = states[0].r.max_value();
    let grad0 = states[0].r.grad_sup_norm()?;
    let mut integral = 0.0; // int phi |div u|_inf
    let mut weight_integral = 0.0; // int phi |u|_{2,inf}
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = f64::INFINITY;
    let mut positive = states[0].r.min_value() > 0.0;
    let mut fitted_rate: f64 = 0.0;
    let mut fitted_grad: f64 = 0.0;
    for j in 1..states.len() {
        let prev = &states[j - 1];
        let dt = states[j].t - prev.t;
        let div_inf = prev.u.divergence()?.wkinf_norm(0)?;
        integral += dt * prev.norms().phi * div_inf;
        weight_integral += dt * prev.norms().phi * prev.norms().u_w2inf;
        let lo = min0 * (-gfac * integral).exp();
        let hi = max0 * (gfac * integral).exp();
        let min_r = states[j].r.min_value();
        let max_r = states[j].r.max_value();
        positive &= min_r > 0.0;
        worst_lower = worst_lower.min(min_r - lo);
        worst_upper = worst_upper.min(hi - max_r);
        let t = states[j].t - states[0].t;
        if t > 0.0 && radius > 0.0 {
            let growth = (max_r / max0).ln().max((min0 / min_r).ln()).max(0.0);
            fitted_rate = fitted_rate.max(growth / (radius * t));
        }
        if weight_integral > 0.0 && grad0 > 0.0 {
            let g = states[j].r.grad_sup_norm()?;
            fitted_grad = fitted_grad.max((g / grad0).ln().max(0.0) / weight_integral);
        }
    }
    let report = MaxPrincipleReport {
        worst_lower_margin: worst_lower,
        worst_upper_margin: worst_upper,
        positive,
        fitted_rate,
        fitted_gradient_rate: fitted_grad,
    };
    if !positive {
        return Err(Error::AuditFailure(
            "density lost strict positivity on an accepted step".into(),
        ));
    }
    if worst_lower < -tol || worst_upper < -tol {
        return Err(Error::AuditFailure(format!(
            "transport envelope violated: lower margin {worst_lower:e}, upper margin {worst_upper:e}, tol {tol:e}"
        )));
    }
    Ok(report)
}

/// Pathwise coupling of two data under one noise stream.
#[derive(Clone, Debug)]
pub struct UniquenessReport {
    /// Output times (stride boundaries).
    pub times: Vec<f64>,
    /// `|u1 - u2|_2` per output time.
    pub l2_distance: Vec<f64>,
    /// `|r1-r2|_{m,2}^2 + |u1-u2|_{m,2}^2` per output time, `m = s - 1`.
    pub wm2_distance_sq: Vec<f64>,
    /// Gronwall weight `exp(-int G)` per output time.
    pub weight: Vec<f64>,
    /// Weighted squared distance per output time.
    pub weighted: Vec<f64>,
    pub sup_l2: f64,
    pub sup_wm2: f64,
    /// `max_j (weighted_(j+1) - weighted_j) / dt_out`.
    pub max_weighted_increment_rate: f64,
    /// Both trajectories identical to the bit.
    pub identical: bool,
    pub m: usize,
}

/// Evolve two data under the same noise stream and measure their
/// distance, the Gronwall weight
/// `G(t) = c (1 + sum_j |r^j|_{m+1,2}^2 + |u^j|_{m+2,2}^2)` and the
/// weighted squared distance.  Requires the uniqueness-strength index
/// `s > N/2 + 3`.
pub fn uniqueness_experiment(
    env: &Env,
    plan: &RunPlan,
    streams: &NoiseStreams,
    a0: State,
    b0: State,
    c_weight: f64,
) -> Result<UniquenessReport> {
    let dim = env.noise.grid().dim();
    if 2 * env.s <= dim + 6 {
        return Err(Error::Parameter {
            name: "s",
            message: format!(
                "uniqueness experiment needs s > N/2 + 3, got s = {} at N = {dim}",
                env.s
            ),
        });
    }
    let mut p = plan.clone();
    p.keep_states = true;
    let ta = run(env, &p, streams, a0)?;
    let tb = run(env, &p, streams, b0)?;
    if ta.steps_taken != tb.steps_taken || ta.states.len() != tb.states.len() {
        return Err(Error::Protocol(format!(
            "stream sharing violated: {} vs {} steps",
            ta.steps_taken, tb.steps_taken
        )));
    }
    if let Some(msg) = ta.aborted.as_ref().or(tb.aborted.as_ref()) {
        return Err(Error::StepRejected(format!("coupled run aborted: {msg}")));
    }
    let m = env.s - 1;
    let n = ta.states.len();
    let mut times = Vec::with_capacity(n);
    let mut l2 = Vec::with_capacity(n);
    let mut wm2 = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    let mut weighted = Vec::with_capacity(n);
    let mut log_weight = 0.0;
    let mut identical = true;
    let mut max_rate: f64 = 0.0;
    for j in 0..n {
        let sa = &ta.states[j];
        let sb = &tb.states[j];
        let du = sa.u.sub(&sb.u);
        let dr = sa.r.sub(&sb.r);
        let d_l2 = du.l2_norm();
        let d_wm2 = dr.sobolev_norm(m as f64)?.powi(2) + du.sobolev_norm(m as f64)?.powi(2);
        identical &= sa.u.values() == sb.u.values() && sa.r.values() == sb.r.values();
        if j > 0 {
            let dt_out = sa.t - ta.states[j - 1].t;
            let ga = gronwall_rate(&ta.states[j - 1], m, c_weight)?;
            let gb = gronwall_rate(&tb.states[j - 1], m, c_weight)?;
            // one shared weight for the pair; G sums both trajectories'
            // norms but carries a single `c (1 + ...)` offset
            log_weight -= dt_out * (ga + gb - c_weight);
            let prev = *weighted.last().unwrap();
            max_rate = max_rate.max((log_weight.exp() * d_wm2 - prev) / dt_out);
        }
        times.push(sa.t);
        l2.push(d_l2);
        wm2.push(d_wm2);
        weight.push(log_weight.exp());
        weighted.push(log_weight.exp() * d_wm2);
    }
    let sup_l2 = l2.iter().copied().fold(0.0, f64::max);
    let sup_wm2 = wm2.iter().copied().fold(0.0, f64::max);
    Ok(UniquenessReport {
        times,
        l2_distance: l2,
        wm2_distance_sq: wm2,
        weight,
        weighted,
        sup_l2,
        sup_wm2,
        max_weighted_increment_rate: max_rate,
        identical,
        m,
    })
}

fn gronwall_rate(state: &State, m: usize, c: f64) -> Result<f64> {
    let r = state.r.sobolev_norm((m + 1) as f64)?.powi(2);
    let u = state.u.sobolev_norm((m + 2) as f64)?.powi(2);
    Ok(c * (1.0 + r + u))
}

/// One row of the empirical Cauchy-in-probability table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CauchyRow {
    pub level_coarse: usize,
    pub level_fine: usize,
    pub epsilon: f64,
    /// Empirical `P(sup_t |u_c - u_f|_2 > eps)`.
    pub exceedance: f64,
}

/// Exceedance table plus per-pair mean sup distances.
#[derive(Clone, Debug)]
pub struct CauchyTable {
    pub rows: Vec<CauchyRow>,
    /// `(coarse, fine, mean over paths of sup distance)`.
    pub mean_sup_distance: Vec<(usize, usize, f64)>,
    pub paths: u64,
}

/// Galerkin-comparison experiment: for each adjacent level pair, run
/// `paths` coupled trajectories (identical streams, identical grid, the
/// velocity band capped at each level) and tabulate the exceedance
/// frequencies of the sup-in-time `L^2` velocity distance.
pub fn cauchy_in_probability(
    env: &Env,
    plan: &RunPlan,
    streams: &NoiseStreams,
    r0: &SpectralField,
    u0: &SpectralField,
    levels: &[usize],
    paths: u64,
    epsilons: &[f64],
) -> Result<CauchyTable> {
    if levels.len() < 2 {
        return Err(Error::Parameter {
            name: "levels",
            message: "need at least two Galerkin levels".into(),
        });
    }
    for w in levels.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Parameter {
                name: "levels",
                message: format!("levels must be nondecreasing, got {} after {}", w[1], w[0]),
            });
        }
    }
    let max_mode = env.noise.grid().max_mode();
    if levels.iter().any(|l| *l > max_mode) {
        return Err(Error::Parameter {
            name: "levels",
            message: format!("levels exceed the representable band {max_mode}"),
        });
    }
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for w in levels.windows(2) {
        let (nc, nf) = (w[0], w[1]);
        let sup_dists: Result<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|path| {
                let mut env_c = env.clone();
                env_c.level = nc;
                let mut env_f = env.clone();
                env_f.level = nf;
                let mut p = plan.clone();
                p.path = path;
                p.keep_states = true;
                let sc = State::new(&env_c, 0.0, r0.clone(), u0.clone())?;
                let sf = State::new(&env_f, 0.0, r0.clone(), u0.clone())?;
                let tc = run(&env_c, &p, streams, sc)?;
                let tf = run(&env_f, &p, streams, sf)?;
                if tc.states.len() != tf.states.len() {
                    return Err(Error::Protocol(
                        "coupled level runs diverged in step count".into(),
                    ));
                }
                let mut sup = 0.0f64;
                for (a, b) in tc.states.iter().zip(tf.states.iter()) {
                    sup = sup.max(a.u.sub(&b.u).l2_norm());
                }
                Ok(sup)
            })
            .collect();
        let sup_dists = sup_dists?;
        let mean = sup_dists.iter().sum::<f64>() / paths.max(1) as f64;
        means.push((nc, nf, mean));
        for &eps in epsilons {
            let count = sup_dists.iter().filter(|d| **d > eps).count();
            rows.push(CauchyRow {
                level_coarse: nc,
                level_fine: nf,
                epsilon: eps,
                exceedance: count as f64 / paths.max(1) as f64,
            });
        }
    }
    Ok(CauchyTable {
        rows,
        mean_sup_distance: means,
        paths,
    })
}

/// Ensemble moment summary of the a priori energy bound.
#[derive(Clone, Copy, Debug)]
pub struct EnergyMoment {
    pub p: u32,
    /// `mean over paths of (sup_t |(r,u)|_{s,2}^2 + dissipation)^p`.
    pub moment: f64,
    /// `mean of |(r0,u0)|_{s,2}^(2p) + 1`.
    pub datum_moment: f64,
    /// `moment / datum_moment`.
    pub c_hat: f64,
}

/// Per-path energy functionals and ensemble moments.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub paths: usize,
    /// Per path: `sup_t |(r,u)|_{s,2}^2`.
    pub sup_sq: Vec<f64>,
    /// Per path: final dissipation accumulator.
    pub dissipation: Vec<f64>,
    pub moments: Vec<EnergyMoment>,
}

/// Summarize an ensemble of completed trajectories into the moment
/// estimates of the a priori bound.
pub fn energy_report(trajectories: &[Trajectory], ps: &[u32]) -> Result<EnergyReport> {
    if trajectories.is_empty() {
        return Err(Error::Parameter {
            name: "trajectories",
            message: "empty ensemble".into(),
        });
    }
    let mut sup_sq = Vec::with_capacity(trajectories.len());
    let mut diss = Vec::with_capacity(trajectories.len());
    let mut datum_sq = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let mut sup: f64 = 0.0;
        for row in &t.rows {
            sup = sup.max(row.sample.r_s2.powi(2) + row.sample.u_s2.powi(2));
        }
        sup_sq.push(sup);
        diss.push(t.dissipation);
        let first = &t.rows[0].sample;
        datum_sq.push(first.r_s2.powi(2) + first.u_s2.powi(2));
    }
    let n = trajectories.len() as f64;
    let mut moments = Vec::with_capacity(ps.len());
    for &p in ps {
        let moment = sup_sq
            .iter()
            .zip(diss.iter())
            .map(|(s, d)| (s + d).powi(p as i32))
            .sum::<f64>()
            / n;
        let datum = datum_sq.iter().map(|d| d.powi(p as i32)).sum::<f64>() / n + 1.0;
        moments.push(EnergyMoment {
            p,
            moment,
            datum_moment: datum,
            c_hat: moment / datum,
        });
    }
    Ok(EnergyReport {
        paths: trajectories.len(),
        sup_sq,
        dissipation: diss,
        moments,
    })
}

/// One output row of a diagnostics-grade energy trace.
#[derive(Clone, Debug)]
pub struct EnergyTracePoint {
    pub t: f64,
    /// `|(r,u)|_{s,2}`.
    pub joint_s2: f64,
    pub dissipation: f64,
    /// `|T_1..T_5|_2` at the probe index.
    pub commutator: [f64; 5],
    /// Ito residuals summed over each `|alpha| = l` shell, accumulated
    /// since the previous output row.
    pub ito_residual_by_shell: Vec<f64>,
    pub phi: f64,
    pub min_r: f64,
}

/// Energy trace of one run: norms, dissipation, commutator norms and
/// shell-wise Ito residuals at every stride boundary.
pub fn energy_trace(
    env: &Env,
    plan: &RunPlan,
    streams: &NoiseStreams,
    state0: State,
) -> Result<Vec<EnergyTracePoint>> {
    let mut rec = WindowRecorder::default();
    let traj = run_with_observer(env, plan, streams, state0, &mut rec)?;
    if let Some(msg) = traj.aborted {
        return Err(Error::StepRejected(format!("trace run aborted: {msg}")));
    }
    let dim = env.noise.grid().dim();
    let mut alpha_probe = [0usize; 3];
    alpha_probe[0] = env.s;
    let shells: Vec<Vec<crate::spectral::MultiIndex>> = (0..=env.s)
        .map(|l| crate::spectral::multi_indices_of_order(dim, l))
        .collect();
    let mut points = Vec::new();
    let mut acc_shells = vec![0.0f64; env.s + 1];
    let mut next_state = 0usize;
    for row in &traj.rows {
        // advance the shell accumulators up to this row's time
        while next_state + 1 < rec.states.len()
            && rec.states[next_state + 1].t <= row.sample.t + 1e-12
        {
            let pair = &rec.states[next_state..next_state + 2];
            let inc = &rec.incs[next_state..next_state + 1];
            for (l, idxs) in shells.iter().enumerate() {
                for a in idxs {
                    acc_shells[l] += ito_residual(env, pair, inc, a)?[0];
                }
            }
            next_state += 1;
        }
        let st = rec
            .states
            .get(next_state)
            .unwrap_or(&traj.final_state);
        let com = commutator_norms(&env.params, &env.cutoff, &st.r, &st.u, env.s, &alpha_probe)?;
        points.push(EnergyTracePoint {
            t: row.sample.t,
            joint_s2: row.sample.r_s2.hypot(row.sample.u_s2),
            dissipation: row.dissipation,
            commutator: com.terms,
            ito_residual_by_shell: std::mem::replace(&mut acc_shells, vec![0.0; env.s + 1]),
            phi: row.phi,
            min_r: row.sample.min_r,
        });
    }
    Ok(points)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..xs.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}
