//! Reduced end-to-end pipeline on OU: calibration, plans, evaluation data,
//! Kalman reference and the error/cost sweep over tolerances.
//!
//! cargo run --release --example tolerance_study -- [wasserstein|index] [out_dir]

use mlpf::harness::config::{Profile, RunConfig};
use mlpf::harness::study::{cost_slope, failure_fractions, run_pipeline};
use mlpf::ModelKind;

fn main() -> mlpf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = RunConfig::new(ModelKind::Ou, Profile::Desk);
    if let Some(a) = args.first() {
        config.set("algorithm", a)?;
    }
    config.out = args
        .get(1)
        .map_or_else(|| "out/tolerance_study".into(), Into::into);
    config.t_final = 20.0;
    config.repeats = 20;
    config.particles = 256;
    config.level_max = 5;
    config.tolerance_series = 10;
    config.k_max = 3;
    config.write_convergence = false;

    let out = run_pipeline(&config)?;
    for plan in &out.plans {
        println!(
            "ε = {:.4}: levels {}..={} N = {:?}",
            plan.epsilon, plan.l0, plan.l_max, plan.particles
        );
    }
    for (k, eps, frac) in failure_fractions(&out.tolerance) {
        println!("k = {k}  ε = {eps:.4}  failure fraction {frac:.2}");
    }
    println!(
        "wall-time slope vs ε: {:.2}",
        cost_slope(&out.tolerance, |r| r.wall_time)?
    );
    println!("files written to {}", config.out.display());
    Ok(())
}
