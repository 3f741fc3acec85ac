//! Maximal continuation across the radius schedule: classify the datum
//! into its first shell, run with the cut-off at that radius until the
//! exit time, restart at the next radius, and announce the times.  A
//! tame datum survives to the horizon; the announced times then collapse
//! onto it and no blow-up certificate appears.

use scns::config::RunConfig;
use scns::driver;

fn main() {
    let cfg = RunConfig::parse(
        "experiment = continuation\n\
         M = 32\n\
         T = 0.05\n\
         dt = 1e-3\n\
         stride = 5\n\
         schedule.bound = 12\n\
         noise.amplitude = 0.1\n",
    )
    .unwrap();

    let out = std::path::Path::new("out/maximal_continuation");
    let outcome = driver::drive(&cfg, out);
    println!("{}", outcome.summary);
    assert_eq!(outcome.code, 0);

    println!("\nannounced levels:");
    print!(
        "{}",
        std::fs::read_to_string(out.join("continuation.csv")).unwrap()
    );
}
