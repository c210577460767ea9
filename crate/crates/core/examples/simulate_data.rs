//! Simulate an observed double-well path and write it as CSV.
//!
//! cargo run --release --example simulate_data -- [out_dir]

use mlpf::harness::data::synthesize_data;
use mlpf::harness::study::write_series;
use mlpf::rng::{Purpose, RandomStream};
use mlpf::ModelSpec;

fn main() -> mlpf::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/simulate_data".into());
    let model = ModelSpec::double_well();
    let stream = RandomStream::from_seed(7, Purpose::Data);
    let series = synthesize_data(&model, 50.0, 0.5, 10, &stream)?;

    let wells = series.latent.iter().filter(|x| **x > 0.0).count();
    println!(
        "{} observations, {} with the latent state in the right well",
        series.observations.len(),
        wells
    );
    for (o, x) in series.observations.iter().zip(&series.latent).take(8) {
        println!("t = {:5.2}  x = {:+.4}  y = {:+.4}", o.time, x, o.y);
    }
    write_series(std::path::Path::new(&out), "", &[series])?;
    println!("wrote {out}/data.csv and {out}/latent.csv");
    Ok(())
}
