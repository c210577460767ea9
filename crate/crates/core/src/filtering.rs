//! Bootstrap particle filter and the coupled fine/coarse particle filter.
//!
//! Both filters carry log-weights between resampling events. At every
//! observation they propagate, record the predictor estimate under the
//! carried weights, multiply in the likelihood, record the filter estimate
//! and then resample if the policy asks for it. Without resampling the
//! weights keep accumulating, so a filter that never resamples is plain
//! sequential importance sampling.
//!
//! Randomness is read from three streams (see [`FilterStreams`]): particle
//! `i` draws its initial state from `initial.substream(i, 0)` and the
//! increments for the interval ending at observation `n` from
//! `dynamics.substream(i, n)`. Because [`run_pf`] and [`run_coupled_pf`] use
//! the same layout and the coupled kernel consumes fine increments in the
//! same order, the fine side of a coupled run that never resamples is
//! bit-identical to a single-level run at the same level.

use std::time::Instant;

use crate::dynamics::{propagate_interval, CoupledKernel, LevelGrid, SynchronousEuler};
use crate::error::{MlpfError, Result};
use crate::models::{sample_initial, ModelKind, ModelSpec, Observation};
use crate::resampling::{ess, multinomial_selection, CoupledEnsemble, Coupler};
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResampleMode {
    /// Resample when the effective sample size drops strictly below
    /// `fraction · N`. A fraction of 0 never resamples.
    Threshold(f64),
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResamplePolicy {
    pub mode: ResampleMode,
    pub coupler: Coupler,
}

impl ResamplePolicy {
    pub fn new(mode: ResampleMode, coupler: Coupler) -> Result<Self> {
        if let ResampleMode::Threshold(f) = mode {
            if !(0.0..=1.0).contains(&f) {
                return Err(MlpfError::InvalidInput(format!(
                    "resampling threshold fraction {f} outside [0, 1]"
                )));
            }
        }
        Ok(Self { mode, coupler })
    }

    /// ESS below `N/4` for OU and NDT, every observation for the double well.
    pub fn for_model(kind: ModelKind, coupler: Coupler) -> Self {
        let mode = match kind {
            ModelKind::DoubleWell => ResampleMode::Always,
            ModelKind::Ou | ModelKind::Ndt => ResampleMode::Threshold(0.25),
        };
        Self { mode, coupler }
    }

    pub fn never(coupler: Coupler) -> Self {
        Self {
            mode: ResampleMode::Threshold(0.0),
            coupler,
        }
    }
}

pub fn should_resample(ess_value: f64, n: usize, policy: &ResamplePolicy) -> bool {
    match policy.mode {
        ResampleMode::Always => true,
        ResampleMode::Threshold(f) => ess_value < f * n as f64,
    }
}

/// Streams consumed by one filter run.
#[derive(Clone, Debug)]
pub struct FilterStreams {
    pub initial: RandomStream,
    pub dynamics: RandomStream,
    pub resample: RandomStream,
}

impl FilterStreams {
    pub fn from_seed(seed: u64) -> Self {
        use crate::rng::Purpose;
        Self {
            initial: RandomStream::from_seed(seed, Purpose::Initial),
            dynamics: RandomStream::from_seed(seed, Purpose::Dynamics),
            resample: RandomStream::from_seed(seed, Purpose::Resample),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub index: usize,
    /// Fine-side (or single-level) predictor estimate.
    pub predictor_estimate: f64,
    /// Fine-side (or single-level) filter estimate.
    pub filter_estimate: f64,
    pub difference_predictor: Option<f64>,
    pub difference_filter: Option<f64>,
    pub ess_fine: f64,
    /// Equal to `ess_fine` for single-level runs.
    pub ess_coarse: f64,
    pub resampled: bool,
}

/// Wall-clock seconds spent in the two stages of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTiming {
    pub dynamics: f64,
    pub resampling: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub level: u32,
    pub particles: usize,
    pub records: Vec<ObservationRecord>,
    pub timing: StageTiming,
}

impl FilterOutput {
    pub fn filter_estimates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.filter_estimate).collect()
    }

    pub fn difference_filters(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.difference_filter).collect()
    }

    pub fn resample_count(&self) -> usize {
        self.records.iter().filter(|r| r.resampled).count()
    }
}

/// Normalise `log_w` into `w` with max-subtraction. Returns `None` when no
/// weight is positive and finite.
fn normalize_log_weights(log_w: &[f64], w: &mut [f64]) -> Option<()> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for (wi, &lw) in w.iter_mut().zip(log_w) {
        *wi = (lw - max).exp();
        total += *wi;
    }
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    w.iter_mut().for_each(|wi| *wi /= total);
    Some(())
}

#[inline]
fn weighted_mean<F: Fn(f64) -> f64>(x: &[f64], w: &[f64], phi: &F) -> f64 {
    x.iter().zip(w).map(|(&xi, &wi)| wi * phi(xi)).sum()
}

fn check_inputs(obs: &[Observation], n: usize) -> Result<()> {
    if n < 2 {
        return Err(MlpfError::InvalidInput(format!(
            "need at least 2 particles, got {n}"
        )));
    }
    if obs.is_empty() {
        return Err(MlpfError::InvalidInput("no observations".into()));
    }
    Ok(())
}

fn collapse(observation: usize, side: &'static str) -> MlpfError {
    MlpfError::WeightCollapse { observation, side }
}

/// Single-level bootstrap filter with multinomial resampling.
pub fn run_pf<F: Fn(f64) -> f64>(
    model: &ModelSpec,
    obs: &[Observation],
    grid: &LevelGrid,
    n: usize,
    policy: &ResamplePolicy,
    phi: &F,
    streams: &FilterStreams,
) -> Result<FilterOutput> {
    check_inputs(obs, n)?;
    model.validate()?;
    grid.check_stability(model)?;

    let mut x: Vec<f64> = (0..n)
        .map(|i| sample_initial(model, &mut streams.initial.substream(i as u32, 0)))
        .collect();
    let mut log_w = vec![0.0; n];
    let mut w = vec![1.0 / n as f64; n];
    let mut timing = StageTiming::default();
    let mut records = Vec::with_capacity(obs.len());

    for o in obs {
        let step = o.index as u32;
        let t0 = Instant::now();
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = propagate_interval(
                model,
                *xi,
                grid,
                &mut streams.dynamics.substream(i as u32, step),
            );
        }
        timing.dynamics += t0.elapsed().as_secs_f64();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MlpfError::NonFinite {
                observation: o.index,
            });
        }

        normalize_log_weights(&log_w, &mut w).ok_or_else(|| collapse(o.index, "single"))?;
        let predictor_estimate = weighted_mean(&x, &w, phi);

        for (lw, &xi) in log_w.iter_mut().zip(&x) {
            *lw += model.log_likelihood(o.y, xi);
        }
        normalize_log_weights(&log_w, &mut w).ok_or_else(|| collapse(o.index, "single"))?;
        let filter_estimate = weighted_mean(&x, &w, phi);
        let ess_value = ess(&w)?;

        let resampled = should_resample(ess_value, n, policy);
        if resampled {
            let t0 = Instant::now();
            let idx = multinomial_selection(&w, n, &streams.resample, step);
            x = idx.iter().map(|&i| x[i]).collect();
            log_w.iter_mut().for_each(|lw| *lw = 0.0);
            timing.resampling += t0.elapsed().as_secs_f64();
        }

        records.push(ObservationRecord {
            index: o.index,
            predictor_estimate,
            filter_estimate,
            difference_predictor: None,
            difference_filter: None,
            ess_fine: ess_value,
            ess_coarse: ess_value,
            resampled,
        });
    }

    Ok(FilterOutput {
        level: grid.level,
        particles: n,
        records,
        timing,
    })
}

/// Coupled filter on consecutive levels `(l, l-1)` under the synchronous
/// Euler coupling.
pub fn run_coupled_pf<F: Fn(f64) -> f64>(
    model: &ModelSpec,
    obs: &[Observation],
    grid_fine: &LevelGrid,
    n: usize,
    policy: &ResamplePolicy,
    phi: &F,
    streams: &FilterStreams,
) -> Result<FilterOutput> {
    model.validate()?;
    grid_fine.check_stability(model)?;
    let kernel = SynchronousEuler::new(model, *grid_fine)?;
    run_coupled_with(model, &kernel, obs, n, policy, phi, streams)
}

/// Coupled filter driven by an arbitrary pair kernel. Log Radon–Nikodym
/// factors returned by the kernel are multiplied into the carried weights
/// before the predictor estimate is taken.
pub fn run_coupled_with<K: CoupledKernel, F: Fn(f64) -> f64>(
    model: &ModelSpec,
    kernel: &K,
    obs: &[Observation],
    n: usize,
    policy: &ResamplePolicy,
    phi: &F,
    streams: &FilterStreams,
) -> Result<FilterOutput> {
    check_inputs(obs, n)?;

    let mut xf: Vec<f64> = (0..n)
        .map(|i| sample_initial(model, &mut streams.initial.substream(i as u32, 0)))
        .collect();
    let mut xc = xf.clone();
    let mut lwf = vec![0.0; n];
    let mut lwc = vec![0.0; n];
    let mut wf = vec![1.0 / n as f64; n];
    let mut wc = vec![1.0 / n as f64; n];
    let mut timing = StageTiming::default();
    let mut records = Vec::with_capacity(obs.len());

    for o in obs {
        let step = o.index as u32;
        let t0 = Instant::now();
        for i in 0..n {
            let s = kernel.advance(
                xf[i],
                xc[i],
                &mut streams.dynamics.substream(i as u32, step),
            );
            xf[i] = s.fine;
            xc[i] = s.coarse;
            lwf[i] += s.log_rn_fine;
            lwc[i] += s.log_rn_coarse;
        }
        timing.dynamics += t0.elapsed().as_secs_f64();
        if xf.iter().chain(&xc).any(|v| !v.is_finite()) {
            return Err(MlpfError::NonFinite {
                observation: o.index,
            });
        }

        normalize_log_weights(&lwf, &mut wf).ok_or_else(|| collapse(o.index, "fine"))?;
        normalize_log_weights(&lwc, &mut wc).ok_or_else(|| collapse(o.index, "coarse"))?;
        let pred_f = weighted_mean(&xf, &wf, phi);
        let pred_c = weighted_mean(&xc, &wc, phi);

        for i in 0..n {
            lwf[i] += model.log_likelihood(o.y, xf[i]);
            lwc[i] += model.log_likelihood(o.y, xc[i]);
        }
        normalize_log_weights(&lwf, &mut wf).ok_or_else(|| collapse(o.index, "fine"))?;
        normalize_log_weights(&lwc, &mut wc).ok_or_else(|| collapse(o.index, "coarse"))?;
        let filt_f = weighted_mean(&xf, &wf, phi);
        let filt_c = weighted_mean(&xc, &wc, phi);
        let ess_fine = ess(&wf)?;
        let ess_coarse = ess(&wc)?;

        let resampled = should_resample(ess_coarse, n, policy);
        if resampled {
            let t0 = Instant::now();
            let sel = policy
                .coupler
                .select(&xf, &wf, &xc, &wc, &streams.resample, step);
            xf = sel.iter().map(|p| xf[p.fine]).collect();
            xc = sel.iter().map(|p| xc[p.coarse]).collect();
            lwf.iter_mut().for_each(|lw| *lw = 0.0);
            lwc.iter_mut().for_each(|lw| *lw = 0.0);
            timing.resampling += t0.elapsed().as_secs_f64();
        }

        records.push(ObservationRecord {
            index: o.index,
            predictor_estimate: pred_f,
            filter_estimate: filt_f,
            difference_predictor: Some(pred_f - pred_c),
            difference_filter: Some(filt_f - filt_c),
            ess_fine,
            ess_coarse,
            resampled,
        });
    }

    Ok(FilterOutput {
        level: kernel.grid_fine().level,
        particles: n,
        records,
        timing,
    })
}

/// `(1/N) Σ [φ(fine_i) − φ(coarse_i)]` of an unweighted coupled ensemble.
pub fn predictor_difference<F: Fn(f64) -> f64>(ens: &CoupledEnsemble, phi: &F) -> f64 {
    let n = ens.len() as f64;
    ens.fine
        .positions
        .iter()
        .zip(&ens.coarse.positions)
        .map(|(&f, &c)| phi(f) - phi(c))
        .sum::<f64>()
        / n
}

/// Self-normalised likelihood-weighted fine estimate minus the coarse one.
/// The ensemble's own weights are multiplied into the likelihood.
pub fn filter_difference<F: Fn(f64) -> f64>(
    ens: &CoupledEnsemble,
    phi: &F,
    model: &ModelSpec,
    y: f64,
) -> Result<f64> {
    let side = |p: &[f64], w0: &[f64], name: &'static str| -> Result<f64> {
        let lw: Vec<f64> = p
            .iter()
            .zip(w0)
            .map(|(&x, &w)| w.ln() + model.log_likelihood(y, x))
            .collect();
        let mut w = vec![0.0; p.len()];
        normalize_log_weights(&lw, &mut w).ok_or_else(|| collapse(0, name))?;
        Ok(weighted_mean(p, &w, phi))
    };
    Ok(side(&ens.fine.positions, &ens.fine.weights, "fine")?
        - side(&ens.coarse.positions, &ens.coarse.weights, "coarse")?)
}
