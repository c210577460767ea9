//! Euler–Maruyama propagation on dyadic level grids.
//!
//! Level `l` of a model with offset `o` uses step `h_l = δ 2^-(o+l)`, so one
//! observation interval is exactly `2^(o+l)` steps. Coupled fine/coarse pairs
//! share Brownian increments: the fine chain consumes `ξ_1, ξ_2, …` and the
//! coarse chain consumes `ξ_1 + ξ_2, ξ_3 + ξ_4, …` at twice the step size.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MlpfError, Result};
use crate::models::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelGrid {
    pub level: u32,
    pub delta: f64,
    pub offset: u32,
    pub h: f64,
    pub steps_per_obs: u32,
}

impl LevelGrid {
    pub fn new(level: u32, delta: f64, offset: u32) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(MlpfError::InvalidGrid(format!(
                "delta must be positive, got {delta}"
            )));
        }
        let exp = offset + level;
        if exp > 30 {
            return Err(MlpfError::InvalidGrid(format!(
                "level {level} + offset {offset} too fine"
            )));
        }
        let steps = 1u32 << exp;
        Ok(Self {
            level,
            delta,
            offset,
            // exact: division by a power of two
            h: delta / steps as f64,
            steps_per_obs: steps,
        })
    }

    /// Grid for `model` at `level`, checking the Euler stability bound where
    /// the model has one.
    pub fn for_model(model: &ModelSpec, level: u32, delta: f64) -> Result<Self> {
        let grid = Self::new(level, delta, model.level_offset())?;
        grid.check_stability(model)?;
        Ok(grid)
    }

    pub fn check_stability(&self, model: &ModelSpec) -> Result<()> {
        if let Some(dw) = &model.dw {
            if self.h > dw.h_max {
                return Err(MlpfError::InvalidGrid(format!(
                    "step {} exceeds the Euler stability bound {}",
                    self.h, dw.h_max
                )));
            }
        }
        Ok(())
    }

    pub fn coarser(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(MlpfError::InvalidGrid(
                "level 0 has no coarser level".into(),
            ));
        }
        Self::new(self.level - 1, self.delta, self.offset)
    }
}

#[inline]
pub fn euler_step(model: &ModelSpec, x: f64, h: f64, dw: f64) -> f64 {
    x + model.drift(x) * h + model.diffusion(x) * dw
}

/// Advance one observation interval with independent `N(0, h)` increments.
pub fn propagate_interval<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: f64,
    grid: &LevelGrid,
    rng: &mut R,
) -> f64 {
    let sqrt_h = grid.h.sqrt();
    let mut x = x;
    for _ in 0..grid.steps_per_obs {
        let z: f64 = rng.sample(StandardNormal);
        x = euler_step(model, x, grid.h, sqrt_h * z);
    }
    x
}

/// Advance a fine/coarse pair one observation interval under the synchronous
/// coupling. `grid_fine` must be level 1 or finer.
pub fn propagate_coupled<R: Rng + ?Sized>(
    model: &ModelSpec,
    x_fine: f64,
    x_coarse: f64,
    grid_fine: &LevelGrid,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if grid_fine.level == 0 {
        return Err(MlpfError::InvalidGrid(
            "coupled propagation needs a fine level >= 1".into(),
        ));
    }
    Ok(coupled_interval(model, x_fine, x_coarse, grid_fine, rng))
}

#[inline]
fn coupled_interval<R: Rng + ?Sized>(
    model: &ModelSpec,
    mut xf: f64,
    mut xc: f64,
    grid_fine: &LevelGrid,
    rng: &mut R,
) -> (f64, f64) {
    let h = grid_fine.h;
    let hc = 2.0 * h;
    let sqrt_h = h.sqrt();
    for _ in 0..grid_fine.steps_per_obs / 2 {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let (d1, d2) = (sqrt_h * z1, sqrt_h * z2);
        xf = euler_step(model, xf, h, d1);
        xf = euler_step(model, xf, h, d2);
        xc = euler_step(model, xc, hc, d1 + d2);
    }
    (xf, xc)
}

/// Result of advancing one coupled pair over an observation interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairStep {
    pub fine: f64,
    pub coarse: f64,
    /// Log Radon–Nikodym factor accumulated over the interval (0 without a
    /// change of measure).
    pub log_rn_fine: f64,
    pub log_rn_coarse: f64,
}

/// Joint transition of a fine/coarse pair over one observation interval.
pub trait CoupledKernel: Sync {
    fn advance<R: Rng + ?Sized>(&self, fine: f64, coarse: f64, rng: &mut R) -> PairStep;

    fn grid_fine(&self) -> &LevelGrid;
}

/// The plain synchronous coupling of consecutive Euler levels.
#[derive(Clone, Debug)]
pub struct SynchronousEuler<'a> {
    model: &'a ModelSpec,
    grid_fine: LevelGrid,
}

impl<'a> SynchronousEuler<'a> {
    pub fn new(model: &'a ModelSpec, grid_fine: LevelGrid) -> Result<Self> {
        if grid_fine.level == 0 {
            return Err(MlpfError::InvalidGrid(
                "coupled propagation needs a fine level >= 1".into(),
            ));
        }
        grid_fine.coarser()?.check_stability(model)?;
        Ok(Self { model, grid_fine })
    }
}

impl CoupledKernel for SynchronousEuler<'_> {
    #[inline]
    fn advance<R: Rng + ?Sized>(&self, fine: f64, coarse: f64, rng: &mut R) -> PairStep {
        let (fine, coarse) = coupled_interval(self.model, fine, coarse, &self.grid_fine, rng);
        PairStep {
            fine,
            coarse,
            log_rn_fine: 0.0,
            log_rn_coarse: 0.0,
        }
    }

    fn grid_fine(&self) -> &LevelGrid {
        &self.grid_fine
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RandomStream};
    use approx::assert_abs_diff_eq;

    fn brownian(sigma: f64) -> ModelSpec {
        let mut m = ModelSpec::ou();
        m.theta = 0.0;
        m.sigma = sigma;
        m
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (
            m,
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
        )
    }

    fn slope(levels: &[f64], values: &[f64]) -> f64 {
        let n = levels.len() as f64;
        let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
        let mx = levels.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = levels
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let sxx: f64 = levels.iter().map(|x| (x - mx).powi(2)).sum();
        -sxy / sxx
    }

    #[test]
    fn grid_arithmetic() {
        let g = LevelGrid::new(3, 0.5, 0).unwrap();
        assert_eq!(g.steps_per_obs, 8);
        assert_eq!(g.h * g.steps_per_obs as f64, 0.5);
        let dw = ModelSpec::double_well();
        let g0 = LevelGrid::for_model(&dw, 0, 0.5).unwrap();
        assert_eq!(g0.h, 0.5 / 16.0);
        assert!(g0.h <= 1.0 / 22.0);
        assert!(LevelGrid::new(0, 0.5, 3)
            .unwrap()
            .check_stability(&dw)
            .is_err());
        assert!(g.coarser().unwrap().level == 2);
        assert!(LevelGrid::new(0, 0.5, 0).unwrap().coarser().is_err());
    }

    #[test]
    fn euler_step_examples() {
        let ou = ModelSpec::ou();
        assert_abs_diff_eq!(euler_step(&ou, 1.0, 0.5, 0.2), 0.6, epsilon = 1e-15);
        assert_eq!(euler_step(&ou, 0.0, 0.5, 0.0), 0.0);
        let mut ndt = ModelSpec::ndt();
        ndt.sigma = 1.0;
        assert_abs_diff_eq!(euler_step(&ndt, 0.0, 0.25, 0.1), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn single_step_interval_is_one_euler_step() {
        let ou = ModelSpec::ou();
        let g = LevelGrid::new(0, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(1, Purpose::Probe);
        let mut a = s.substream(0, 0);
        let mut b = s.substream(0, 0);
        let z: f64 = b.sample(StandardNormal);
        assert_eq!(
            propagate_interval(&ou, 0.7, &g, &mut a),
            euler_step(&ou, 0.7, 0.5, 0.5_f64.sqrt() * z)
        );
    }

    #[test]
    fn brownian_increment_variance_is_delta() {
        let m = brownian(1.0);
        let g = LevelGrid::new(3, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(2, Purpose::Probe);
        let n = 100_000;
        let d: Vec<f64> = (0..n)
            .map(|i| propagate_interval(&m, 1.5, &g, &mut s.substream(i, 0)) - 1.5)
            .collect();
        let (_, var) = mean_var(&d);
        // sd of a Gaussian sample variance is var * sqrt(2/(n-1))
        let se = 0.5 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - 0.5).abs() < 4.0 * se, "var {var}");
    }

    #[test]
    fn ou_transition_moments() {
        let ou = ModelSpec::ou();
        let g = LevelGrid::new(8, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(3, Purpose::Probe);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| propagate_interval(&ou, 1.0, &g, &mut s.substream(i, 0)))
            .collect();
        let (m, v) = mean_var(&xs);
        let m_exact = (-0.5_f64).exp();
        let v_exact = 0.25 * (1.0 - (-1.0_f64).exp()) / 2.0;
        assert_abs_diff_eq!(m_exact, 0.6065, epsilon = 1e-4);
        assert_abs_diff_eq!(v_exact, 0.0790, epsilon = 1e-4);
        // Euler bias at h = 0.5/256 is O(h) ~ 2e-3 relative
        let bias = 2.0 * g.h;
        assert!((m - m_exact).abs() < 3.0 * (v / n as f64).sqrt() + bias * m_exact);
        assert!((v - v_exact).abs() < 3.0 * v_exact * (2.0 / n as f64).sqrt() + bias * v_exact);
    }

    #[test]
    fn additive_noise_without_drift_couples_exactly() {
        let m = brownian(0.7);
        let g = LevelGrid::new(4, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(4, Purpose::Probe);
        for i in 0..100 {
            let (f, c) = propagate_coupled(&m, 0.3, 0.3, &g, &mut s.substream(i, 0)).unwrap();
            assert_abs_diff_eq!(f, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn fine_marginal_is_bit_exact_single_level_path() {
        for model in [ModelSpec::ou(), ModelSpec::ndt(), ModelSpec::double_well()] {
            let g = LevelGrid::for_model(&model, 3, 0.5).unwrap();
            let s = RandomStream::from_seed(5, Purpose::Dynamics);
            for i in 0..50 {
                let (f, _) =
                    propagate_coupled(&model, 0.4, -0.2, &g, &mut s.substream(i, 7)).unwrap();
                let single = propagate_interval(&model, 0.4, &g, &mut s.substream(i, 7));
                assert_eq!(f.to_bits(), single.to_bits());
            }
        }
    }

    #[test]
    fn coarse_increments_are_sums_of_fine_increments() {
        let m = brownian(1.3);
        let g = LevelGrid::new(3, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(6, Purpose::Dynamics);
        let (_, c) = propagate_coupled(&m, 0.1, 0.1, &g, &mut s.substream(0, 0)).unwrap();
        let mut rng = s.substream(0, 0);
        let sqrt_h = g.h.sqrt();
        let mut xc = 0.1;
        for _ in 0..g.steps_per_obs / 2 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            xc = euler_step(&m, xc, 2.0 * g.h, sqrt_h * z1 + sqrt_h * z2);
        }
        assert_eq!(c.to_bits(), xc.to_bits());
    }

    #[test]
    fn coarse_marginal_matches_coarse_level() {
        // coarse output is an Euler path at h_{l-1}: compare terminal variance
        let ou = ModelSpec::ou();
        let g = LevelGrid::new(1, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(7, Purpose::Probe);
        let n = 100_000;
        let cs: Vec<f64> = (0..n)
            .map(|i| {
                propagate_coupled(&ou, 0.0, 0.0, &g, &mut s.substream(i, 0))
                    .unwrap()
                    .1
            })
            .collect();
        let (_, v) = mean_var(&cs);
        // one step of size 0.5 from 0: variance σ² h = 0.125
        assert!((v - 0.125).abs() < 3.0 * 0.125 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn rejects_level_zero() {
        let ou = ModelSpec::ou();
        let g = LevelGrid::new(0, 0.5, 0).unwrap();
        let s = RandomStream::from_seed(8, Purpose::Probe);
        assert!(propagate_coupled(&ou, 0.0, 0.0, &g, &mut s.substream(0, 0)).is_err());
        assert!(SynchronousEuler::new(&ou, g).is_err());
    }

    fn strong_rate(model: &ModelSpec) -> f64 {
        let levels = [2u32, 3, 4, 5, 6, 7];
        let n = 100_000;
        let s = RandomStream::from_seed(9, Purpose::Probe);
        let msd: Vec<f64> = levels
            .iter()
            .map(|&l| {
                let g = LevelGrid::new(l, 0.5, 0).unwrap();
                (0..n)
                    .map(|i| {
                        let (f, c) =
                            propagate_coupled(model, 0.0, 0.0, &g, &mut s.substream(i, l)).unwrap();
                        (f - c).powi(2)
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let lv: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
        slope(&lv, &msd)
    }

    #[test]
    fn ou_coupling_msd_decays_at_rate_two() {
        let r = strong_rate(&ModelSpec::ou());
        assert!((1.6..=2.4).contains(&r), "rate {r}");
    }

    #[test]
    fn ndt_coupling_msd_decays_at_rate_one() {
        let r = strong_rate(&ModelSpec::ndt());
        assert!((0.7..=1.4).contains(&r), "rate {r}");
    }
}
