//! Reference filters: Kalman against the Fokker–Planck grid filter on OU,
//! and the grid filter on double-well data.
//!
//! cargo run --release --example reference_filters

use mlpf::harness::data::synthesize_data;
use mlpf::reference::{run_fp_filter, run_kalman, GridSpec};
use mlpf::rng::{Purpose, RandomStream};
use mlpf::{ModelKind, ModelSpec};

fn main() -> mlpf::Result<()> {
    let ou = ModelSpec::ou();
    let data = synthesize_data(
        &ou,
        10.0,
        0.5,
        10,
        &RandomStream::from_seed(4, Purpose::Data),
    )?;
    let kalman = run_kalman(&ou, &data.observations)?;
    let grid = run_fp_filter(
        &ou,
        &data.observations,
        GridSpec::default_for(ModelKind::Ou),
        0.5,
    )?;
    let worst = kalman
        .iter()
        .zip(&grid)
        .map(|(k, g)| (k.mean - g).abs())
        .fold(0.0, f64::max);
    println!(
        "OU: largest |Kalman − grid| over {} observations = {worst:.2e}",
        grid.len()
    );

    let dw = ModelSpec::double_well();
    let data = synthesize_data(
        &dw,
        10.0,
        0.5,
        10,
        &RandomStream::from_seed(4, Purpose::Data),
    )?;
    let means = run_fp_filter(
        &dw,
        &data.observations,
        GridSpec::default_for(ModelKind::DoubleWell),
        0.5,
    )?;
    for ((o, x), m) in data
        .observations
        .iter()
        .zip(&data.latent)
        .zip(&means)
        .step_by(4)
    {
        println!(
            "DW t = {:5.2}  latent {:+.3}  filter mean {:+.3}",
            o.time, x, m
        );
    }
    Ok(())
}
