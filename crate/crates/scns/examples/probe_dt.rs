use scns::fluid::{CutoffSpec, FluidParams};
use scns::integrator::{run, Env, RunPlan};
use scns::noise::NoiseModel;
use scns::spectral::{SpectralField, TorusGrid};
use scns::streams::NoiseStreams;
use scns::integrator::State;

fn main() {
    let grid = TorusGrid::new(1, 64).unwrap();
    let params = FluidParams { gamma: 2.0, a: 1.0, mu: 1.0, lambda: 0.0 };
    let env = Env::new(params, CutoffSpec::new(10.0).unwrap(), NoiseModel::silent(&grid), 4, grid.max_mode()).unwrap();
    let r = SpectralField::from_fn(&grid, |x| 2.0 + 0.1 * x[0].cos());
    let u = SpectralField::from_fn_vec(&grid, 1, |_, x| 0.1 * x[0].sin());
    let state0 = State::new(&env, 0.0, r, u).unwrap();
    let mut finals = Vec::new();
    for dt in [4e-3, 2e-3, 1e-3, 5e-4] {
        let steps = (0.5f64 / dt).round() as u64;
        let plan = RunPlan::new(0.5, dt, steps);
        let traj = run(&env, &plan, &NoiseStreams::new(0), state0.clone()).unwrap();
        println!("dt {dt:.1e}: steps {} halvings {} |u| {:.12e}", traj.steps_taken, traj.total_halvings, traj.final_state.u.l2_norm());
        finals.push(traj.final_state.u.clone());
    }
    for w in finals.windows(2) {
        println!("diff {:.6e}", w[0].sub(&w[1]).l2_norm());
    }
}
