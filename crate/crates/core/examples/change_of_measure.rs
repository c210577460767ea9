//! Double-well coupled filters with and without the spring change of
//! measure.
//!
//! cargo run --release --example change_of_measure

use mlpf::dynamics::LevelGrid;
use mlpf::filtering::{run_coupled_pf, FilterStreams, ResamplePolicy};
use mlpf::girsanov::{run_coupled_pf_com, SpringConfig};
use mlpf::harness::data::synthesize_data;
use mlpf::resampling::Coupler;
use mlpf::rng::{Purpose, RandomStream};
use mlpf::ModelSpec;

fn main() -> mlpf::Result<()> {
    let model = ModelSpec::double_well();
    let data = synthesize_data(
        &model,
        25.0,
        0.5,
        10,
        &RandomStream::from_seed(2, Purpose::Data),
    )?;
    let spring = SpringConfig::for_model(&model);
    let policy = ResamplePolicy::for_model(model.kind, Coupler::Wasserstein);
    let (n, repeats) = (128, 30);
    println!("spring strength S = {}", spring.strength);
    println!(
        "{:>5} {:>16} {:>16}",
        "level", "plain N·Var", "spring N·Var"
    );
    for level in 1..=3 {
        let grid = LevelGrid::for_model(&model, level, 0.5)?;
        let mut spread = [0.0; 2];
        for (k, with_spring) in [false, true].into_iter().enumerate() {
            let mut d = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let streams = FilterStreams::from_seed(r as u64);
                let out = if with_spring {
                    run_coupled_pf_com(
                        &model,
                        &data.observations,
                        &grid,
                        n,
                        &policy,
                        &|x| x,
                        &spring,
                        &streams,
                    )?
                } else {
                    run_coupled_pf(
                        &model,
                        &data.observations,
                        &grid,
                        n,
                        &policy,
                        &|x| x,
                        &streams,
                    )?
                };
                let diffs = out.difference_filters().expect("coupled");
                d.push(diffs.iter().sum::<f64>() / diffs.len() as f64);
            }
            let mean = d.iter().sum::<f64>() / repeats as f64;
            spread[k] =
                n as f64 * d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
        }
        println!("{level:>5} {:>16.4e} {:>16.4e}", spread[0], spread[1]);
    }
    Ok(())
}
