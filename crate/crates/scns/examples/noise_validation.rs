//! Hypothesis checks for noise models: the built-in affine model passes
//! by construction, and a hand-written stencil model passes exactly when
//! its amplitudes respect the per-mode derivative budget alpha_k.

use scns::config::RunConfig;
use scns::driver;

fn validate(name: &str, cfg_text: &str, dir: &str) -> i32 {
    let cfg = RunConfig::parse(cfg_text).unwrap();
    let outcome = driver::drive(&cfg, std::path::Path::new(dir));
    println!("{name}: {}", outcome.summary);
    outcome.code
}

fn main() {
    let code = validate(
        "default model",
        "experiment = validate-noise\nM = 32\n",
        "out/noise_default",
    );
    assert_eq!(code, 0);

    // state-proportional stencils: rho and momentum factors keep G(x,0,0) = 0
    let code = validate(
        "stencil model",
        "experiment = validate-noise\nM = 32\nnoise.kind = general\nnoise.modes = 2\n\
         noise.mode.1 = rho:0:1:0.01:0\n\
         noise.mode.2 = q0:0:1:0:0.004\n",
        "out/noise_stencil",
    );
    assert_eq!(code, 0);

    // a fat amplitude at a high wavevector blows the alpha_2 budget: every
    // derivative order multiplies the bound by |k|, so this exits 3
    let code = validate(
        "overweight stencil",
        "experiment = validate-noise\nM = 32\nnoise.kind = general\nnoise.modes = 2\n\
         noise.mode.1 = rho:0:1:0.01:0\n\
         noise.mode.2 = q0:0:2:0:0.5\n",
        "out/noise_overweight",
    );
    assert_eq!(code, 3);

    let report = std::fs::read_to_string("out/noise_overweight/noise_validation.txt").unwrap();
    for line in report.lines().filter(|l| l.starts_with("failure")) {
        println!("  {line}");
    }
}
