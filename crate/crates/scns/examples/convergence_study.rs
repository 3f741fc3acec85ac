//! Temporal self-convergence of the deterministic splitting: run the
//! same smooth datum at halved step sizes against a fine reference and
//! fit the order from the error ratios.  The scheme is first order in
//! time, so the fitted slope sits near one.

use scns::fluid::{CutoffSpec, FluidParams};
use scns::integrator::{run, Env, RunPlan, State};
use scns::noise::NoiseModel;
use scns::spectral::{SpectralField, TorusGrid};
use scns::streams::NoiseStreams;

fn final_state(env: &Env, state0: &State, t_end: f64, dt: f64) -> State {
    let steps = (t_end / dt).round() as u64;
    let plan = RunPlan::new(t_end, dt, steps);
    run(env, &plan, &NoiseStreams::new(0), state0.clone())
        .unwrap()
        .final_state
        .clone()
}

fn main() {
    let grid = TorusGrid::new(1, 32).unwrap();
    let params = FluidParams {
        gamma: 2.0,
        a: 1.0,
        mu: 1.0,
        lambda: 0.0,
    };
    let env = Env::new(
        params,
        CutoffSpec::new(10.0).unwrap(),
        NoiseModel::silent(&grid),
        4,
        grid.max_mode(),
    )
    .unwrap();

    let r0 = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
    let u0 = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
    let state0 = State::new(&env, 0.0, r0, u0).unwrap();

    let t_end = 0.05;
    let reference = final_state(&env, &state0, t_end, 1.25e-4);

    let dts = [2e-3, 1e-3, 5e-4];
    let mut errors = Vec::new();
    for &dt in &dts {
        let fin = final_state(&env, &state0, t_end, dt);
        let err = fin.u.sub(&reference.u).l2_norm();
        println!("dt = {dt:7.1e}   |u - u_ref|_2 = {err:.6e}");
        errors.push(err);
    }

    let slopes: Vec<f64> = errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect();
    let slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    println!("fitted temporal order: {slope:.3}");
    assert!((0.8..=1.2).contains(&slope), "slope {slope}");
}
