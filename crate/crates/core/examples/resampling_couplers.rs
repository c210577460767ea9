//! The two coupled resamplers on a small weighted pair of ensembles.
//!
//! cargo run --release --example resampling_couplers

use mlpf::resampling::{Coupler, MaximalCoupling};
use mlpf::rng::{Purpose, RandomStream};

fn main() {
    let fine = [-1.0, -0.2, 0.3, 1.1, 2.0];
    let coarse = [-0.9, -0.3, 0.4, 1.0, 2.2];
    let wf = [0.10, 0.30, 0.25, 0.25, 0.10];
    let wc = [0.15, 0.25, 0.30, 0.20, 0.10];
    let stream = RandomStream::from_seed(5, Purpose::Resample);

    let alpha = MaximalCoupling::new(&wf, &wc).alpha;
    println!("overlap mass α = {alpha:.2}");
    for coupler in [Coupler::Wasserstein, Coupler::MaximalIndex] {
        let sel = coupler.select(&fine, &wf, &coarse, &wc, &stream, 1);
        let gap: f64 = sel
            .iter()
            .map(|s| (fine[s.fine] - coarse[s.coarse]).powi(2))
            .sum::<f64>()
            / sel.len() as f64;
        let pairs: Vec<String> = sel
            .iter()
            .map(|s| format!("({:+.1},{:+.1})", fine[s.fine], coarse[s.coarse]))
            .collect();
        println!(
            "{:>12}: {}  mean squared gap {gap:.3}",
            coupler.name(),
            pairs.join(" ")
        );
    }
}
