//! Stopping times, initial-data shells and maximal continuation.
//!
//! `tau_R` fires when the velocity's `W^{2,inf}` norm reaches the cut-off
//! radius `R`; the `tau_K` triple fires on Sobolev-norm or vacuum
//! thresholds.  Thresholds are detected at grid times only (first grid
//! time at or past the crossing), with the convention that an empty
//! crossing set yields the horizon `T`.  Shells classify initial data to
//! the least admissible cut-off radius; the continuation driver patches
//! runs across an increasing radius schedule from the stopped state,
//! reusing the same noise streams so the glued path is one trajectory.

use crate::integrator::{run, Env, RunPlan, State, Trajectory};
use crate::streams::NoiseStreams;
use crate::{Error, Result};
use std::fmt;

/// Which threshold fired first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    /// `|u|_{2,inf} >= R`
    TauR,
    /// `|u|_{s,2} >= K`
    Tau1K,
    /// `|r|_{s,2} >= K`
    Tau2K,
    /// `min r <= 1/K`
    Tau3K,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Threshold::TauR => "tau_R",
            Threshold::Tau1K => "tau1_K",
            Threshold::Tau2K => "tau2_K",
            Threshold::Tau3K => "tau3_K",
        };
        write!(f, "{s}")
    }
}

/// Norm samples of one trajectory point, the input to all detectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSample {
    pub t: f64,
    pub u_s2: f64,
    pub r_s2: f64,
    pub u_w2inf: f64,
    pub r_w1inf: f64,
    pub min_r: f64,
}

/// Stopping configuration of one run.
#[derive(Clone, Copy, Debug)]
pub struct StoppingRule {
    pub radius: f64,
    /// Sobolev/vacuum threshold; `K(R)` from the shell schedule.
    pub k: f64,
}

/// First-crossing times of one trajectory, `inf (empty set) = T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingRecord {
    pub tau_r: f64,
    pub tau1_k: f64,
    pub tau2_k: f64,
    pub tau3_k: f64,
    pub horizon: f64,
    pub triggered: Option<Threshold>,
    pub blow_up: bool,
}

impl StoppingRecord {
    pub fn untriggered(horizon: f64) -> Self {
        Self {
            tau_r: horizon,
            tau1_k: horizon,
            tau2_k: horizon,
            tau3_k: horizon,
            horizon,
            triggered: None,
            blow_up: false,
        }
    }

    /// `tau_K = tau1 /\ tau2 /\ tau3`.
    pub fn tau_k(&self) -> f64 {
        self.tau1_k.min(self.tau2_k).min(self.tau3_k)
    }

    /// Earliest of all recorded times.
    pub fn first(&self) -> f64 {
        self.tau_r.min(self.tau_k())
    }
}

/// First grid time with `|u|_{2,inf} >= radius`, or `horizon`.
pub fn check_tau_r(samples: &[NormSample], radius: f64, horizon: f64) -> f64 {
    samples
        .iter()
        .find(|p| p.u_w2inf >= radius)
        .map(|p| p.t)
        .unwrap_or(horizon)
}

/// First-crossing record of the `tau_K` triple over a sampled trajectory.
pub fn check_tau_k(samples: &[NormSample], k: f64, horizon: f64) -> StoppingRecord {
    let mut rec = StoppingRecord::untriggered(horizon);
    for p in samples {
        if rec.tau1_k == horizon && p.u_s2 >= k {
            rec.tau1_k = p.t;
        }
        if rec.tau2_k == horizon && p.r_s2 >= k {
            rec.tau2_k = p.t;
        }
        if rec.tau3_k == horizon && p.min_r <= 1.0 / k {
            rec.tau3_k = p.t;
        }
    }
    rec.triggered = [
        (rec.tau1_k, Threshold::Tau1K),
        (rec.tau2_k, Threshold::Tau2K),
        (rec.tau3_k, Threshold::Tau3K),
    ]
    .into_iter()
    .filter(|(t, _)| *t < horizon)
    .min_by(|a, b| a.0.total_cmp(&b.0))
    .map(|(_, which)| which);
    rec
}

/// Guard implication of the threshold choice: strictly before `tau_K`,
/// the state must satisfy `|u|_{2,inf} < R`, `|r|_{1,inf} < R` and
/// `min r > 1/R`.  A violation means `K(R)` or the embedding constants
/// were estimated wrongly.
pub fn check_guards(samples: &[NormSample], rule: &StoppingRule, horizon: f64) -> Result<()> {
    let rec = check_tau_k(samples, rule.k, horizon);
    let tau_k = rec.tau_k();
    for p in samples.iter().filter(|p| p.t < tau_k) {
        if p.u_w2inf >= rule.radius {
            return Err(Error::GuardViolation(format!(
                "t = {}: |u|_(2,inf) = {} >= R = {} before tau_K = {tau_k}",
                p.t, p.u_w2inf, rule.radius
            )));
        }
        if p.r_w1inf >= rule.radius {
            return Err(Error::GuardViolation(format!(
                "t = {}: |r|_(1,inf) = {} >= R = {} before tau_K = {tau_k}",
                p.t, p.r_w1inf, rule.radius
            )));
        }
        if p.min_r <= 1.0 / rule.radius {
            return Err(Error::GuardViolation(format!(
                "t = {}: min r = {} <= 1/R = {} before tau_K = {tau_k}",
                p.t,
                p.min_r,
                1.0 / rule.radius
            )));
        }
    }
    Ok(())
}

/// Shell schedule `K(M) = factor * M`, where the factor bakes in the
/// fitted embedding constants: `factor = margin * min(1, 1/c1inf, 1/c2inf)`.
#[derive(Clone, Copy, Debug)]
pub struct ShellSchedule {
    pub factor: f64,
    /// Largest radius the schedule admits.
    pub max_m: u32,
}

impl ShellSchedule {
    pub fn new(c1inf: f64, c2inf: f64, max_m: u32) -> Self {
        let factor = 0.9 * (1.0f64).min(1.0 / c1inf).min(1.0 / c2inf);
        Self { factor, max_m }
    }

    /// Shell radius `K(M)`.
    pub fn k_of(&self, m: u32) -> f64 {
        self.factor * m as f64
    }

    /// Membership in the shell `U_{K(M)}` (all inequalities strict).
    pub fn contains(&self, m: u32, r_s2: f64, u_s2: f64, min_r: f64) -> bool {
        let k = self.k_of(m);
        r_s2 < k && u_s2 < k && min_r > 1.0 / k
    }
}

/// Shell classification of one initial datum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellIndex {
    /// Least admissible level; the run uses cut-off radius `R = M`.
    pub m: u32,
    pub k: f64,
}

/// Least `M` whose shell contains the datum (norms passed in by the
/// caller so classification stays independent of field plumbing).
pub fn classify_initial(
    schedule: &ShellSchedule,
    r_s2: f64,
    u_s2: f64,
    min_r: f64,
) -> Result<ShellIndex> {
    if !(min_r > 0.0) {
        return Err(Error::Vacuum {
            node: 0,
            min: min_r,
        });
    }
    for m in 1..=schedule.max_m {
        if schedule.contains(m, r_s2, u_s2, min_r) {
            return Ok(ShellIndex {
                m,
                k: schedule.k_of(m),
            });
        }
    }
    Err(Error::OutOfSchedule(format!(
        "datum with |r| = {r_s2:.3e}, |u| = {u_s2:.3e}, min r = {min_r:.3e} fits no shell up to M = {}",
        schedule.max_m
    )))
}

/// One announced level of a maximal continuation.
#[derive(Clone, Debug)]
pub struct ContinuationLevel {
    pub radius: f64,
    /// Announced time `t_R` (the stopped time, or the horizon).
    pub t_r: f64,
    /// `sup_(t <= t_R) |u|_{2,inf}` on this level.
    pub sup_u_w2inf: f64,
    /// Literal blow-up certificate `sup |u|_{2,inf} >= R` at this level.
    pub certificate: bool,
}

/// Result of driving a trajectory across the radius schedule.
#[derive(Debug)]
pub struct Continuation {
    pub levels: Vec<ContinuationLevel>,
    pub segments: Vec<Trajectory>,
    /// Explosion-time estimate: the horizon if no blow-up was observed,
    /// otherwise the last announced time.
    pub t_estimate: f64,
    pub blow_up: bool,
    /// Set when the step budget ran out mid-schedule.
    pub inconclusive: bool,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Run with cut-off `R` until `tau_R` fires, then restart the cut-off at
/// the next radius in the schedule from the stopped state (same streams,
/// global step indices), repeating until the horizon survives or the
/// schedule/budget is exhausted.
pub fn maximal_continuation(
    env: &Env,
    plan: &RunPlan,
    streams: &NoiseStreams,
    state0: State,
    radii: &[f64],
    step_budget: u64,
) -> Result<Continuation> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter {
            name: "radii",
            message: "need a strictly increasing, nonempty radius schedule".into(),
        });
    }
    let mut levels = Vec::new();
    let mut segments: Vec<Trajectory> = Vec::new();
    let mut state = state0;
    let mut spent: u64 = 0;
    let mut blow_up = false;
    let mut inconclusive = false;
    let mut running_sup: f64 = 0.0;
    for (li, &radius) in radii.iter().enumerate() {
        let mut env_r = env.clone();
        env_r.cutoff = crate::fluid::CutoffSpec::new(radius)?;
        let start_step = (state.t / plan.dt).round() as u64;
        let remaining_budget = step_budget.saturating_sub(spent);
        if remaining_budget == 0 {
            inconclusive = true;
            break;
        }
        let mut seg_plan = plan.clone();
        seg_plan.step_offset = start_step;
        seg_plan.t_end = plan.t_end;
        seg_plan.stopping = Some(StoppingRule {
            radius,
            k: f64::INFINITY, // continuation tracks tau_R only
        });
        seg_plan.max_steps = Some(remaining_budget);
        // a stop rarely lands on a stride boundary; degrade the output
        // cadence of the resumed segment instead of erroring
        let seg_steps = ((plan.t_end - state.t) / plan.dt).round() as u64;
        seg_plan.stride = gcd(plan.stride.max(1), seg_steps.max(1));
        let traj = run(&env_r, &seg_plan, streams, state.clone())?;
        spent += traj.steps_taken;
        for row in &traj.rows {
            running_sup = running_sup.max(row.sample.u_w2inf);
        }
        let stopped = traj.stopping.tau_r < plan.t_end;
        let t_r = traj.stopping.tau_r;
        state = traj.final_state.clone();
        let out_of_budget = traj.budget_exhausted;
        levels.push(ContinuationLevel {
            radius,
            t_r,
            sup_u_w2inf: running_sup,
            certificate: running_sup >= radius,
        });
        segments.push(traj);
        if out_of_budget {
            inconclusive = true;
            break;
        }
        if !stopped {
            // Survived to the horizon: the path kept phi = 1 throughout, so
            // every larger radius would produce the identical trajectory and
            // the remaining announced times all equal the horizon.
            for &r2 in &radii[li + 1..] {
                levels.push(ContinuationLevel {
                    radius: r2,
                    t_r: plan.t_end,
                    sup_u_w2inf: running_sup,
                    certificate: false,
                });
            }
            break;
        }
        if li == radii.len() - 1 {
            // stopped at the largest configured radius
            blow_up = true;
        }
    }
    let t_estimate = if blow_up {
        levels.last().map(|l| l.t_r).unwrap_or(plan.t_end)
    } else {
        plan.t_end
    };
    Ok(Continuation {
        levels,
        segments,
        t_estimate,
        blow_up,
        inconclusive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, u_s2: f64, r_s2: f64, u_w2inf: f64, min_r: f64) -> NormSample {
        NormSample {
            t,
            u_s2,
            r_s2,
            u_w2inf,
            r_w1inf: r_s2, // stand-in for synthetic traces
            min_r,
        }
    }

    #[test]
    fn tau_r_crossed_at_start() {
        let r = 3.0;
        let s = [sample(0.0, 0.1, 0.1, r + 2.0, 1.0)];
        assert_eq!(check_tau_r(&s, r, 0.5), 0.0);
    }

    #[test]
    fn tau_r_never_crossed_returns_horizon() {
        let s: Vec<_> = (0..=10)
            .map(|i| sample(i as f64 * 0.05, 0.1, 0.1, 0.2, 1.0))
            .collect();
        assert_eq!(check_tau_r(&s, 5.0, 0.5), 0.5);
    }

    #[test]
    fn tau_r_planted_crossing_at_step_37() {
        let dt = 1e-3;
        let s: Vec<_> = (0..=100)
            .map(|i| {
                let u = if i >= 37 { 10.0 } else { 0.5 };
                sample(i as f64 * dt, 0.1, 0.1, u, 1.0)
            })
            .collect();
        assert_eq!(check_tau_r(&s, 10.0, 0.5), 37.0 * dt);
    }

    #[test]
    fn tau_k_is_min_of_triple_and_names_trigger() {
        let dt = 1e-3;
        let k = 2.0;
        // |r|_{s,2} crosses at step 12, |u|_{s,2} at step 20, vacuum never
        let s: Vec<_> = (0..=30)
            .map(|i| {
                let r = if i >= 12 { 2.5 } else { 0.5 };
                let u = if i >= 20 { 2.5 } else { 0.5 };
                sample(i as f64 * dt, u, r, 0.1, 1.0)
            })
            .collect();
        let rec = check_tau_k(&s, k, 0.5);
        assert_eq!(rec.tau2_k, 12.0 * dt);
        assert_eq!(rec.tau1_k, 20.0 * dt);
        assert_eq!(rec.tau3_k, 0.5);
        assert_eq!(rec.tau_k(), 12.0 * dt);
        assert_eq!(rec.triggered, Some(Threshold::Tau2K));
    }

    #[test]
    fn initial_vacuum_violation_fires_tau3_at_zero() {
        let k = 4.0;
        // min r0 = 0.2 <= 1/K = 0.25 violates the vacuum threshold at t = 0
        let s = [sample(0.0, 0.1, 0.1, 0.1, 0.2)];
        let rec = check_tau_k(&s, k, 0.5);
        assert_eq!(rec.tau3_k, 0.0);
        assert_eq!(rec.triggered, Some(Threshold::Tau3K));
    }

    #[test]
    fn rest_state_never_triggers() {
        let s: Vec<_> = (0..=10)
            .map(|i| sample(i as f64 * 0.05, 0.3, 0.3, 0.0, 1.0))
            .collect();
        let rec = check_tau_k(&s, 5.0, 0.5);
        assert_eq!(rec.tau_k(), 0.5);
        assert_eq!(rec.triggered, None);
    }

    #[test]
    fn tau_r_monotone_in_radius() {
        let dt = 1e-2;
        let s: Vec<_> = (0..=50)
            .map(|i| sample(i as f64 * dt, 0.1, 0.1, 0.1 * i as f64, 1.0))
            .collect();
        let horizon = 0.5;
        let mut last = 0.0;
        for radius in [0.5, 1.0, 2.0, 4.0, 100.0] {
            let t = check_tau_r(&s, radius, horizon);
            assert!(t >= last, "tau_R not monotone at R = {radius}");
            last = t;
        }
        assert_eq!(check_tau_r(&s, 100.0, horizon), horizon);
    }

    #[test]
    fn guards_hold_on_clean_trace_and_catch_violations() {
        let rule = StoppingRule { radius: 5.0, k: 2.0 };
        let clean: Vec<_> = (0..=10)
            .map(|i| sample(i as f64 * 0.01, 0.5, 0.5, 1.0, 1.0))
            .collect();
        assert!(check_guards(&clean, &rule, 0.5).is_ok());
        // a trace where the sup norm blows past R while tau_K never fires
        let bad: Vec<_> = (0..=10)
            .map(|i| sample(i as f64 * 0.01, 0.5, 0.5, 6.0, 1.0))
            .collect();
        assert!(matches!(
            check_guards(&bad, &rule, 0.5),
            Err(Error::GuardViolation(_))
        ));
    }

    #[test]
    fn shell_classification_least_m_and_strictness() {
        let sched = ShellSchedule {
            factor: 1.0,
            max_m: 64,
        };
        // tiny datum sits in shell 1
        assert_eq!(
            classify_initial(&sched, 0.1, 0.1, 2.0).unwrap().m,
            1
        );
        // |u0| just below K(5) = 5 and above K(4) = 4
        assert_eq!(
            classify_initial(&sched, 0.1, 4.5, 2.0).unwrap().m,
            5
        );
        // min r0 = 1/K(3) exactly is NOT in shell 3 (strict), so the least
        // admitting level is 4
        let min_r = 1.0 / sched.k_of(3);
        assert_eq!(classify_initial(&sched, 0.1, 0.1, min_r).unwrap().m, 4);
    }

    #[test]
    fn shells_partition_admissible_data() {
        let sched = ShellSchedule {
            factor: 0.7,
            max_m: 128,
        };
        for (r, u, minr) in [
            (0.1, 0.1, 10.0),
            (3.0, 1.0, 0.8),
            (0.5, 17.0, 2.0),
            (40.0, 40.0, 0.1),
        ] {
            let idx = classify_initial(&sched, r, u, minr).unwrap();
            assert!(sched.contains(idx.m, r, u, minr));
            for j in 1..idx.m {
                assert!(!sched.contains(j, r, u, minr));
            }
        }
    }

    #[test]
    fn out_of_schedule_datum_rejected() {
        let sched = ShellSchedule {
            factor: 1.0,
            max_m: 4,
        };
        assert!(matches!(
            classify_initial(&sched, 100.0, 0.1, 1.0),
            Err(Error::OutOfSchedule(_))
        ));
    }
}
