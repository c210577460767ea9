//! Single-level bootstrap filter on OU data against the exact Kalman filter.
//!
//! cargo run --release --example particle_filter

use mlpf::dynamics::LevelGrid;
use mlpf::filtering::{run_pf, FilterStreams, ResamplePolicy};
use mlpf::harness::data::synthesize_data;
use mlpf::reference::run_kalman;
use mlpf::resampling::Coupler;
use mlpf::rng::{Purpose, RandomStream};
use mlpf::ModelSpec;

fn main() -> mlpf::Result<()> {
    let model = ModelSpec::ou();
    let data = synthesize_data(
        &model,
        50.0,
        0.5,
        10,
        &RandomStream::from_seed(1, Purpose::Data),
    )?;
    let kalman = run_kalman(&model, &data.observations)?;
    let policy = ResamplePolicy::for_model(model.kind, Coupler::Wasserstein);

    println!(
        "{:>5} {:>8} {:>14} {:>12}",
        "level", "N", "mean |error|", "resamplings"
    );
    for (level, n) in [(0, 1 << 12), (3, 1 << 12), (6, 1 << 14)] {
        let grid = LevelGrid::for_model(&model, level, 0.5)?;
        let out = run_pf(
            &model,
            &data.observations,
            &grid,
            n,
            &policy,
            &|x| x,
            &FilterStreams::from_seed(11),
        )?;
        let err: f64 = out
            .filter_estimates()
            .iter()
            .zip(&kalman)
            .map(|(e, k)| (e - k.mean).abs())
            .sum::<f64>()
            / kalman.len() as f64;
        println!("{level:>5} {n:>8} {err:>14.5} {:>12}", out.resample_count());
    }
    Ok(())
}
