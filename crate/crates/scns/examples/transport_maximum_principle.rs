//! The transport layer preserves the pointwise bounds of r.  Advection
//! by a constant velocity of exactly one grid spacing per step permutes
//! the nodal samples, so the extrema are conserved to roundoff and the
//! max-principle audit margins sit at zero.

use scns::diagnostics::maxprinciple_audit;
use scns::fluid::{CutoffSpec, FluidParams};
use scns::integrator::{transport_step, Env, State};
use scns::noise::NoiseModel;
use scns::spectral::{SpectralField, TorusGrid};

fn main() {
    let grid = TorusGrid::new(1, 64).unwrap();
    let params = FluidParams {
        gamma: 2.0,
        a: 1.0,
        mu: 1.0,
        lambda: 0.0,
    };
    let env = Env::new(
        params,
        CutoffSpec::new(200.0).unwrap(),
        NoiseModel::silent(&grid),
        4,
        grid.max_mode(),
    )
    .unwrap();

    let dt = 1e-3;
    let speed = grid.dx() / dt;
    let u = SpectralField::constant(&grid, speed);
    let mut r = SpectralField::from_fn(&grid, |x| 2.0 + 0.3 * x[0].cos());
    let (min0, max0) = (r.min_value(), r.max_value());

    let mut states = vec![State::new(&env, 0.0, r.clone(), u.clone()).unwrap()];
    for j in 0..50 {
        r = transport_step(&params, &r, &u, dt, 1.0, 1e-8).unwrap();
        states.push(State::new(&env, (j + 1) as f64 * dt, r.clone(), u.clone()).unwrap());
    }

    println!("initial extrema: [{min0}, {max0}]");
    println!(
        "after 50 steps:  [{}, {}]",
        r.min_value(),
        r.max_value()
    );
    println!("drift: [{:e}, {:e}]", r.min_value() - min0, r.max_value() - max0);

    let rep = maxprinciple_audit(&params, &states, 200.0, 1e-8).unwrap();
    println!(
        "audit margins: lower {:e}, upper {:e}, positive = {}",
        rep.worst_lower_margin, rep.worst_upper_margin, rep.positive
    );
    assert!(rep.worst_lower_margin.abs() < 1e-12);
    assert!(rep.worst_upper_margin.abs() < 1e-12);
}
