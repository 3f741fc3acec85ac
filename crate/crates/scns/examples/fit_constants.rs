//! Fit the embedding, Moser and commutator constants on the desk-scale
//! band and print the table.  Every value passes the fit/validate split
//! (200 fit draws, 100 validation draws, 10% headroom, zero violations)
//! or the fit aborts with an audit failure.

use scns::config::RunConfig;
use scns::driver;

fn main() {
    let cfg = RunConfig::parse("M = 64\ns = 4\n").unwrap();
    let outcome = driver::fit_constants(&cfg, std::path::Path::new("out/fit_constants"));
    assert_eq!(outcome.code, 0, "{}", outcome.summary);
    println!("{}", outcome.summary);
}
