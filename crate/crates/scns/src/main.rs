use std::path::PathBuf;
use std::process::ExitCode;

use scns::config::{Experiment, RunConfig};
use scns::driver;

const USAGE: &str = "\
usage: scns <verb> [--config PATH] [--seed N] [--out DIR]

verbs:
  run             single trajectory with stopping and trace output
  ensemble        independent paths plus energy-moment aggregate
  uniqueness      coupled pair with Gronwall-weighted distance
  cauchy          Galerkin level comparison (exceedance table)
  continue        maximal continuation across the radius schedule
  validate-noise  check the noise model hypotheses
  fit-constants   fit and write the embedding/Moser/commutator table
  emit-plots      rebuild plot data from artifacts already in --out

flags:
  --config PATH   key = value run configuration (defaults otherwise)
  --seed N        override the configured seed
  --out DIR       output directory (default: out)
";

fn fail(msg: &str) -> ExitCode {
    eprintln!("{msg}");
    eprintln!("{USAGE}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(verb) = args.first() else {
        return fail("missing verb");
    };

    let mut config_path: Option<PathBuf> = None;
    let mut seed: Option<u64> = None;
    let mut out = PathBuf::from("out");
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let value = match it.next() {
            Some(v) => v,
            None => return fail(&format!("flag {flag} needs a value")),
        };
        match flag.as_str() {
            "--config" => config_path = Some(PathBuf::from(value)),
            "--seed" => match value.parse() {
                Ok(n) => seed = Some(n),
                Err(_) => return fail(&format!("bad seed `{value}`")),
            },
            "--out" => out = PathBuf::from(value),
            other => return fail(&format!("unknown flag {other}")),
        }
    }

    if verb == "emit-plots" {
        return finish(driver::emit_plots(&out));
    }

    let mut cfg = match &config_path {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("config {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            };
            match RunConfig::parse(&text) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            }
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }

    if verb != "fit-constants" {
        cfg.experiment = match verb.as_str() {
            "run" => Experiment::Single,
            "ensemble" => Experiment::Ensemble,
            "uniqueness" => Experiment::Uniqueness,
            "cauchy" => Experiment::Cauchy,
            "continue" => Experiment::Continuation,
            "validate-noise" => Experiment::ValidateNoise,
            other => return fail(&format!("unknown verb {other}")),
        };
        if let Err(e) = cfg.validate() {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
        return finish(driver::drive(&cfg, &out));
    }
    finish(driver::fit_constants(&cfg, &out))
}

fn finish(outcome: driver::DriveOutcome) -> ExitCode {
    println!("{}", outcome.summary);
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    ExitCode::from(outcome.code as u8)
}
