//! One stochastic trajectory at desk scale: parse a configuration, drive
//! it, and show what lands in the output directory.

use scns::config::RunConfig;
use scns::driver;

fn main() {
    let cfg = RunConfig::parse(
        "experiment = single\n\
         M = 64\n\
         T = 0.5\n\
         dt = 1e-3\n\
         stride = 10\n\
         seed = 42\n\
         noise.amplitude = 0.1\n",
    )
    .unwrap();

    let out = std::path::Path::new("out/single_run");
    let outcome = driver::drive(&cfg, out);
    println!("{}", outcome.summary);
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    assert_eq!(outcome.code, 0);

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    println!("\ntrace: {} rows", lines.len() - 1);
    println!("{}", lines[0]);
    println!("{}", lines[1]);
    println!("...");
    println!("{}", lines[lines.len() - 1]);
}
