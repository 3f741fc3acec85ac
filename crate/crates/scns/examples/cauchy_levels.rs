//! Galerkin comparison: adjacent velocity-band levels run on identical
//! noise, and the table reports how often the sup-in-time L^2 distance
//! exceeds each threshold.  Exceedance falls as the bands grow.

use scns::config::RunConfig;
use scns::driver;

fn main() {
    let cfg = RunConfig::parse(
        "experiment = cauchy\n\
         M = 64\n\
         T = 0.05\n\
         dt = 1e-3\n\
         stride = 5\n\
         noise.amplitude = 0.1\n\
         cauchy.levels = 4 8 16\n\
         cauchy.paths = 10\n\
         cauchy.epsilons = 1e-2 1e-4\n",
    )
    .unwrap();

    let out = std::path::Path::new("out/cauchy_levels");
    let outcome = driver::drive(&cfg, out);
    println!("{}", outcome.summary);
    assert_eq!(outcome.code, 0);

    print!("{}", std::fs::read_to_string(out.join("cauchy.csv")).unwrap());
}
