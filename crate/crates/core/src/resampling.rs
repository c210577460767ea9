//! Effective sample size, weighted empirical CDFs and resampling.
//!
//! Two coupled resamplers act on an ensemble of fine/coarse particle pairs:
//!
//! * [`Coupler::Wasserstein`] sorts each side, builds both empirical CDFs and
//!   maps one shared uniform through both generalized inverses. The output
//!   pairs are comonotone, i.e. drawn from the optimal L2-Wasserstein
//!   coupling of the two weighted empirical measures.
//! * [`Coupler::MaximalIndex`] keeps both members on the same particle index
//!   with the largest possible probability `α = Σ min(w_f, w_c)` and draws
//!   independent indices from the residual laws otherwise.
//!
//! Uniforms for output pair `n` at step `s` come from substream `(n, s)` and
//! are consumed in a fixed order: `V_n` first, then `U_n` (or `P_n`), then
//! `Q_n`. The Wasserstein coupler reads and discards `V_n`, so both couplers
//! see the same `U_n` for the same seed.

use rand::Rng;
use rand_distr::Open01;

use crate::error::{MlpfError, Result};
use crate::rng::RandomStream;

/// Positions with normalised weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedEnsemble {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedEnsemble {
    pub fn new(positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if positions.is_empty() || positions.len() != weights.len() {
            return Err(MlpfError::InvalidInput(format!(
                "ensemble needs matching non-empty positions ({}) and weights ({})",
                positions.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(MlpfError::InvalidInput(
                "weights must be nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MlpfError::InvalidInput(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { positions, weights })
    }

    pub fn uniform(positions: Vec<f64>) -> Self {
        let n = positions.len();
        Self {
            positions,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `N` fine/coarse pairs; pair `i` is `(fine.positions[i], coarse.positions[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledEnsemble {
    pub fine: WeightedEnsemble,
    pub coarse: WeightedEnsemble,
}

impl CoupledEnsemble {
    pub fn new(fine: WeightedEnsemble, coarse: WeightedEnsemble) -> Result<Self> {
        if fine.len() != coarse.len() {
            return Err(MlpfError::InvalidInput(format!(
                "fine ({}) and coarse ({}) ensembles differ in size",
                fine.len(),
                coarse.len()
            )));
        }
        Ok(Self { fine, coarse })
    }

    pub fn len(&self) -> usize {
        self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.is_empty()
    }
}

/// Effective sample size `1 / Σ w²` of normalised weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if !(sq > 0.0) {
        return Err(MlpfError::InvalidInput(
            "effective sample size of zero weights".into(),
        ));
    }
    Ok(1.0 / sq)
}

/// Cumulative sums of `weights` divided by their total; the last entry is
/// exactly 1.
fn normalized_cumsum(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if acc > 0.0 {
        cum.iter_mut().for_each(|c| *c /= acc);
    }
    cum
}

/// Smallest `j` with `cum[j] >= u`.
#[inline]
fn generalized_inverse(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c < u).min(cum.len() - 1)
}

/// Weighted empirical CDF over positions sorted ascending (stable on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    pub sorted_positions: Vec<f64>,
    pub cum_weights: Vec<f64>,
    /// `order[j]` is the input index of the `j`-th smallest position.
    pub order: Vec<usize>,
}

impl EmpiricalCdf {
    pub fn from_parts(positions: &[f64], weights: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_by(|&a, &b| positions[a].total_cmp(&positions[b]));
        let sorted_positions = order.iter().map(|&i| positions[i]).collect();
        let cum_weights = normalized_cumsum(order.iter().map(|&i| weights[i]));
        Self {
            sorted_positions,
            cum_weights,
            order,
        }
    }

    /// Sorted index `j` of the generalized inverse `inf{s : F(s) >= u}`.
    #[inline]
    pub fn quantile_index(&self, u: f64) -> usize {
        generalized_inverse(&self.cum_weights, u)
    }

    /// Input index of the atom returned for `u`.
    #[inline]
    pub fn source_index(&self, u: f64) -> usize {
        self.order[self.quantile_index(u)]
    }
}

pub fn build_cdf(ensemble: &WeightedEnsemble) -> EmpiricalCdf {
    EmpiricalCdf::from_parts(&ensemble.positions, &ensemble.weights)
}

pub fn inverse_cdf(cdf: &EmpiricalCdf, u: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&u) {
        return Err(MlpfError::InvalidInput(format!(
            "quantile level {u} outside [0, 1)"
        )));
    }
    Ok(cdf.sorted_positions[cdf.quantile_index(u)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Coupler {
    Wasserstein,
    MaximalIndex,
}

impl Coupler {
    pub fn name(self) -> &'static str {
        match self {
            Coupler::Wasserstein => "wasserstein",
            Coupler::MaximalIndex => "index",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wasserstein" | "cdf" => Ok(Coupler::Wasserstein),
            "index" | "maximal" | "maximal-index" => Ok(Coupler::MaximalIndex),
            other => Err(MlpfError::InvalidInput(format!(
                "unknown coupler '{other}'"
            ))),
        }
    }

    /// Ancestor indices for `n_out` output pairs.
    pub fn select(
        self,
        fine_positions: &[f64],
        fine_weights: &[f64],
        coarse_positions: &[f64],
        coarse_weights: &[f64],
        stream: &RandomStream,
        step: u32,
    ) -> Vec<PairSelection> {
        match self {
            Coupler::Wasserstein => {
                let f = EmpiricalCdf::from_parts(fine_positions, fine_weights);
                let c = EmpiricalCdf::from_parts(coarse_positions, coarse_weights);
                wasserstein_selection(&f, &c, fine_positions.len(), stream, step)
            }
            Coupler::MaximalIndex => MaximalCoupling::new(fine_weights, coarse_weights).select(
                fine_positions.len(),
                stream,
                step,
            ),
        }
    }
}

/// Input indices chosen for one output pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSelection {
    pub fine: usize,
    pub coarse: usize,
    /// The maximal coupler took its shared-index branch.
    pub shared: bool,
}

struct PairUniforms<R: Rng> {
    rng: R,
}

impl<R: Rng> PairUniforms<R> {
    fn next(&mut self) -> f64 {
        self.rng.sample(Open01)
    }
}

fn pair_uniforms(stream: &RandomStream, n: usize, step: u32) -> PairUniforms<impl Rng> {
    PairUniforms {
        rng: stream.substream(n as u32, step),
    }
}

/// Both members of pair `n` are the `U_n`-quantiles of their own side.
pub fn wasserstein_selection(
    fine: &EmpiricalCdf,
    coarse: &EmpiricalCdf,
    n_out: usize,
    stream: &RandomStream,
    step: u32,
) -> Vec<PairSelection> {
    (0..n_out)
        .map(|n| {
            let mut draws = pair_uniforms(stream, n, step);
            let _v = draws.next();
            let u = draws.next();
            PairSelection {
                fine: fine.source_index(u),
                coarse: coarse.source_index(u),
                shared: false,
            }
        })
        .collect()
}

/// Shared and residual index laws of the maximal coupling of two weight
/// vectors over the same index set.
#[derive(Clone, Debug, PartialEq)]
pub struct MaximalCoupling {
    pub alpha: f64,
    pub shared_cdf: Vec<f64>,
    pub fine_residual_cdf: Vec<f64>,
    pub coarse_residual_cdf: Vec<f64>,
}

impl MaximalCoupling {
    /// `1 - α` below this counts as full overlap.
    pub const DEGENERATE_GAP: f64 = 1e-14;

    pub fn new(fine_weights: &[f64], coarse_weights: &[f64]) -> Self {
        let mins: Vec<f64> = fine_weights
            .iter()
            .zip(coarse_weights)
            .map(|(a, b)| a.min(*b))
            .collect();
        let mut alpha: f64 = mins.iter().sum();
        let full = 1.0 - alpha < Self::DEGENERATE_GAP;
        if full {
            alpha = 1.0;
        }
        let residual = |w: &[f64]| {
            if full {
                Vec::new()
            } else {
                normalized_cumsum(w.iter().zip(&mins).map(|(a, m)| (a - m).max(0.0)))
            }
        };
        Self {
            alpha,
            shared_cdf: normalized_cumsum(mins.iter().copied()),
            fine_residual_cdf: residual(fine_weights),
            coarse_residual_cdf: residual(coarse_weights),
        }
    }

    pub fn select(&self, n_out: usize, stream: &RandomStream, step: u32) -> Vec<PairSelection> {
        (0..n_out)
            .map(|n| {
                let mut draws = pair_uniforms(stream, n, step);
                let v = draws.next();
                if v < self.alpha {
                    let i = generalized_inverse(&self.shared_cdf, draws.next());
                    PairSelection {
                        fine: i,
                        coarse: i,
                        shared: true,
                    }
                } else {
                    let p = draws.next();
                    let q = draws.next();
                    PairSelection {
                        fine: generalized_inverse(&self.fine_residual_cdf, p),
                        coarse: generalized_inverse(&self.coarse_residual_cdf, q),
                        shared: false,
                    }
                }
            })
            .collect()
    }
}

fn apply_selection(ens: &CoupledEnsemble, sel: &[PairSelection]) -> CoupledEnsemble {
    let fine = sel.iter().map(|s| ens.fine.positions[s.fine]).collect();
    let coarse = sel.iter().map(|s| ens.coarse.positions[s.coarse]).collect();
    CoupledEnsemble {
        fine: WeightedEnsemble::uniform(fine),
        coarse: WeightedEnsemble::uniform(coarse),
    }
}

/// Coupled resampling through the two inverse CDFs. Output weights are `1/N`.
pub fn resample_wasserstein(
    ens: &CoupledEnsemble,
    stream: &RandomStream,
    step: u32,
) -> CoupledEnsemble {
    let f = build_cdf(&ens.fine);
    let c = build_cdf(&ens.coarse);
    apply_selection(ens, &wasserstein_selection(&f, &c, ens.len(), stream, step))
}

/// Coupled resampling through particle indices. Output weights are `1/N`.
pub fn resample_maximal(
    ens: &CoupledEnsemble,
    stream: &RandomStream,
    step: u32,
) -> CoupledEnsemble {
    let plan = MaximalCoupling::new(&ens.fine.weights, &ens.coarse.weights);
    apply_selection(ens, &plan.select(ens.len(), stream, step))
}

/// `n_out` independent categorical draws; uses the same per-output substream
/// layout as the coupled resamplers (the first uniform is the draw).
pub fn multinomial_selection(
    weights: &[f64],
    n_out: usize,
    stream: &RandomStream,
    step: u32,
) -> Vec<usize> {
    let cum = normalized_cumsum(weights.iter().copied());
    (0..n_out)
        .map(|n| generalized_inverse(&cum, pair_uniforms(stream, n, step).next()))
        .collect()
}

pub fn resample_multinomial(
    ens: &WeightedEnsemble,
    stream: &RandomStream,
    step: u32,
) -> WeightedEnsemble {
    let idx = multinomial_selection(&ens.weights, ens.len(), stream, step);
    WeightedEnsemble::uniform(idx.iter().map(|&i| ens.positions[i]).collect())
}
