//! Desk-scale parameter study: per-level variance, bias and cost with fitted
//! rates.
//!
//! cargo run --release --example parameter_study -- [ou|ndt|dw] [wasserstein|index] [com|plain] [levels]

use mlpf::harness::config::{Profile, RunConfig};
use mlpf::harness::study::{generate_series, run_parameter_study};
use mlpf::rng::experiment;
use mlpf::{ModelKind, Observation};

fn main() -> mlpf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = ModelKind::parse(args.first().map_or("ou", String::as_str))?;
    let mut config = RunConfig::new(model, Profile::Desk);
    if let Some(a) = args.get(1) {
        config.set("algorithm", a)?;
    }
    if let Some(c) = args.get(2) {
        config.change_of_measure = c == "com";
    }
    if let Some(l) = args.get(3) {
        config.set("levels", l)?;
    }
    config.write_convergence = false;
    for w in config.validate()? {
        eprintln!("warning: {w}");
    }

    let factory = config.stream_factory();
    let data: Vec<Vec<Observation>> = generate_series(
        &config,
        experiment::CALIBRATION_DATA,
        config.series,
        &factory,
    )?
    .into_iter()
    .map(|s| s.observations)
    .collect();
    let start = std::time::Instant::now();
    let study = run_parameter_study(&config, &data, &factory)?;

    println!("{} / {} / com={}", study.model, study.algorithm, study.com);
    println!(
        "{:>3} {:>12} {:>12} {:>10} {:>12}",
        "l", "V", "B", "W", "V_base"
    );
    for s in &study.stats {
        println!(
            "{:>3} {:>12.4e} {:>12.4e} {:>10.1} {:>12.4e}",
            s.level,
            s.v,
            s.b,
            s.w,
            s.base_v()
        );
    }
    println!(
        "rates: variance {:.3}, bias {:.3}, cost {:.3}  ({:.1} s)",
        study.rates.variance,
        study.rates.bias,
        study.rates.cost,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
