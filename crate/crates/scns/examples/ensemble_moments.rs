//! Energy-moment estimates over an ensemble of independent paths: each
//! path gets its own trace file, and the aggregate compares the p-th
//! moments of the pathwise energy sup against the datum's.

use scns::config::RunConfig;
use scns::driver;

fn main() {
    let cfg = RunConfig::parse(
        "experiment = ensemble\n\
         M = 32\n\
         T = 0.1\n\
         dt = 1e-3\n\
         stride = 10\n\
         ensemble.paths = 16\n\
         noise.amplitude = 0.2\n",
    )
    .unwrap();

    let out = std::path::Path::new("out/ensemble_moments");
    let outcome = driver::drive(&cfg, out);
    println!("{}", outcome.summary);
    assert_eq!(outcome.code, 0);

    let meta = std::fs::read_to_string(out.join("metadata.txt")).unwrap();
    for line in meta.lines().filter(|l| l.starts_with("moment_")) {
        println!("{line}");
    }
    let agg = std::fs::read_to_string(out.join("ensemble.csv")).unwrap();
    println!("\nper-path aggregate ({} rows):", agg.lines().count() - 1);
    for line in agg.lines().take(4) {
        println!("{line}");
    }
}
