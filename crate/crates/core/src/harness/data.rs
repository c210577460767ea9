//! Synthetic observation series.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{propagate_interval, LevelGrid};
use crate::error::Result;
use crate::models::{sample_initial, ModelSpec, Observation};
use crate::rng::RandomStream;

/// One simulated latent path and its noisy observations at `t = δ, 2δ, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSeries {
    pub observations: Vec<Observation>,
    /// Latent state at each observation time.
    pub latent: Vec<f64>,
}

/// Simulate a path on the level-`fine_level` Euler grid and observe it
/// with Gaussian noise of variance `τ²`.
///
/// Draw layout: the initial state comes from substream `(0, 0)`, the path
/// over interval `n` from `(0, n)` and the noise of observation `n` from
/// `(1, n)`.
pub fn synthesize_data(
    model: &ModelSpec,
    t_final: f64,
    delta: f64,
    fine_level: u32,
    stream: &RandomStream,
) -> Result<SyntheticSeries> {
    model.validate()?;
    let grid = LevelGrid::for_model(model, fine_level, delta)?;
    let d = (t_final / delta).round() as usize;
    let tau = model.tau2.sqrt();
    let mut x = sample_initial(model, &mut stream.substream(0, 0));
    let mut observations = Vec::with_capacity(d);
    let mut latent = Vec::with_capacity(d);
    for n in 1..=d {
        x = propagate_interval(model, x, &grid, &mut stream.substream(0, n as u32));
        let z: f64 = stream.substream(1, n as u32).sample(StandardNormal);
        observations.push(Observation::new(n, delta, x + tau * z));
        latent.push(x);
    }
    Ok(SyntheticSeries {
        observations,
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    #[test]
    fn tiny_noise_observes_the_path() {
        let m = ModelSpec::ou().with_tau2(1e-20);
        let s =
            synthesize_data(&m, 5.0, 0.5, 6, &RandomStream::from_seed(1, Purpose::Data)).unwrap();
        assert_eq!(s.observations.len(), 10);
        for (o, x) in s.observations.iter().zip(&s.latent) {
            assert!((o.y - x).abs() < 1e-8);
        }
        assert_eq!(s.observations[9].time, 5.0);
    }

    #[test]
    fn fixed_seed_reproduces() {
        let m = ModelSpec::double_well();
        let st = RandomStream::from_seed(2, Purpose::Data);
        let a = synthesize_data(&m, 10.0, 0.5, 4, &st).unwrap();
        let b = synthesize_data(&m, 10.0, 0.5, 4, &st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ou_observation_variance() {
        let m = ModelSpec::ou();
        // the first observations are still relaxing from X0 = 0; 2000 points
        // at δ = 0.5 are effectively independent of that transient
        let s = synthesize_data(
            &m,
            1000.0,
            0.5,
            8,
            &RandomStream::from_seed(3, Purpose::Data),
        )
        .unwrap();
        let y: Vec<f64> = s.observations.iter().skip(20).map(|o| o.y).collect();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // y is a stationary Gaussian series with lag-k autocorrelation
        // c r^k (k >= 1), c = 0.125 / 0.325, r = e^-0.5; the sample variance
        // then has variance 2 σ⁴ / n · Σ_k ρ_k²
        let target = 0.125 + 0.2;
        let c = 0.125 / target;
        let r2 = (-1.0f64).exp();
        let se = target * (2.0 / n * (1.0 + 2.0 * c * c * r2 / (1.0 - r2))).sqrt();
        assert!((var - target).abs() < 3.0 * se, "{var} vs {target} ± {se}");
    }
}
