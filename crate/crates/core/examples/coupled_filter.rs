//! Coupled fine/coarse filters: the spread of the level difference under
//! the two resampling couplings.
//!
//! cargo run --release --example coupled_filter

use mlpf::dynamics::LevelGrid;
use mlpf::filtering::{run_coupled_pf, FilterStreams, ResamplePolicy};
use mlpf::harness::data::synthesize_data;
use mlpf::resampling::Coupler;
use mlpf::rng::{Purpose, RandomStream};
use mlpf::ModelSpec;

fn main() -> mlpf::Result<()> {
    let model = ModelSpec::ou();
    let data = synthesize_data(
        &model,
        25.0,
        0.5,
        10,
        &RandomStream::from_seed(3, Purpose::Data),
    )?;
    let n = 512;
    let repeats = 40;
    println!("{:>12} {:>5} {:>14}", "coupler", "level", "N·Var(diff)");
    for coupler in [Coupler::Wasserstein, Coupler::MaximalIndex] {
        let policy = ResamplePolicy::for_model(model.kind, coupler);
        for level in [1, 3, 5] {
            let grid = LevelGrid::for_model(&model, level, 0.5)?;
            let last: Vec<f64> = (0..repeats)
                .map(|r| {
                    let out = run_coupled_pf(
                        &model,
                        &data.observations,
                        &grid,
                        n,
                        &policy,
                        &|x| x,
                        &FilterStreams::from_seed(r),
                    )?;
                    Ok(*out
                        .difference_filters()
                        .expect("coupled")
                        .last()
                        .expect("nonempty"))
                })
                .collect::<mlpf::Result<_>>()?;
            let mean = last.iter().sum::<f64>() / repeats as f64;
            let var = last.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
            println!(
                "{:>12} {level:>5} {:>14.4e}",
                coupler.name(),
                n as f64 * var
            );
        }
    }
    Ok(())
}
