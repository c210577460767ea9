//! Per-level variance, bias and cost statistics, rate fits and the planner
//! that picks the level range and particle counts of a multilevel filter.
//!
//! Level `l ≥ 1` statistics describe the coupled difference between levels
//! `l` and `l − 1`; level 0 describes the single-level filter. A plan whose
//! coarsest level is `l0 > 0` runs a single-level filter at `l0`, so each
//! [`LevelStats`] may also carry the single-level variance and cost at its
//! level (`v_base`, `w_base`).
//!
//! `b` at level `l` is the bias proxy for truncating at `l`: the mean 90th
//! percentile of `|difference|` measured at level `l + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{MlpfError, Result};

/// Estimates indexed by series, repeat and observation.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateCube {
    series: usize,
    repeats: usize,
    observations: usize,
    values: Vec<f64>,
}

impl EstimateCube {
    pub fn zeros(series: usize, repeats: usize, observations: usize) -> Self {
        Self {
            series,
            repeats,
            observations,
            values: vec![0.0; series * repeats * observations],
        }
    }

    /// `nested[series][repeat][observation]`.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let series = nested.len();
        let repeats = nested.first().map_or(0, |s| s.len());
        let observations = nested
            .first()
            .and_then(|s| s.first())
            .map_or(0, |r| r.len());
        let mut cube = Self::zeros(series, repeats, observations);
        for (s, reps) in nested.iter().enumerate() {
            if reps.len() != repeats {
                return Err(MlpfError::InvalidInput("ragged repeat dimension".into()));
            }
            for (r, obs) in reps.iter().enumerate() {
                if obs.len() != observations {
                    return Err(MlpfError::InvalidInput(
                        "ragged observation dimension".into(),
                    ));
                }
                for (o, &v) in obs.iter().enumerate() {
                    cube.set(s, r, o, v);
                }
            }
        }
        Ok(cube)
    }

    #[inline]
    fn offset(&self, s: usize, r: usize, o: usize) -> usize {
        (s * self.repeats + r) * self.observations + o
    }

    pub fn get(&self, s: usize, r: usize, o: usize) -> f64 {
        self.values[self.offset(s, r, o)]
    }

    pub fn set(&mut self, s: usize, r: usize, o: usize, v: f64) {
        let i = self.offset(s, r, o);
        self.values[i] = v;
    }

    /// Overwrite one run's estimates.
    pub fn set_run(&mut self, s: usize, r: usize, estimates: &[f64]) -> Result<()> {
        if estimates.len() != self.observations {
            return Err(MlpfError::InvalidInput(format!(
                "run has {} estimates, expected {}",
                estimates.len(),
                self.observations
            )));
        }
        let i = self.offset(s, r, 0);
        self.values[i..i + self.observations].copy_from_slice(estimates);
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.series, self.repeats, self.observations)
    }

    fn across_repeats(&self, s: usize, o: usize) -> Vec<f64> {
        (0..self.repeats).map(|r| self.get(s, r, o)).collect()
    }

    /// Mean over observations, then over series, of `stat(values across repeats)`.
    fn mean_of(&self, mut stat: impl FnMut(&mut [f64]) -> f64) -> f64 {
        let per_series: f64 = (0..self.series)
            .map(|s| {
                (0..self.observations)
                    .map(|o| stat(&mut self.across_repeats(s, o)))
                    .sum::<f64>()
                    / self.observations as f64
            })
            .sum();
        per_series / self.series as f64
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Linear-interpolation quantile at position `1 + (n − 1) p` of the sorted
/// sample. Sorts `x` in place.
pub fn quantile(x: &mut [f64], p: f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let pos = (x.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(x.len() - 1);
    x[lo] + (pos - lo as f64) * (x[hi] - x[lo])
}

/// `N_l` times the sample variance across repeats, averaged over observations
/// and then series.
pub fn estimate_variance(estimates: &EstimateCube, n_l: usize) -> Result<f64> {
    let (s, r, o) = estimates.dims();
    if r < 2 || s == 0 || o == 0 {
        return Err(MlpfError::InvalidInput(format!(
            "variance needs at least 2 repeats and nonempty data, got {s}×{r}×{o}"
        )));
    }
    Ok(n_l as f64 * estimates.mean_of(|x| sample_variance(x)))
}

pub const MIN_BIAS_REPEATS: usize = 10;

/// 90th percentile of `|estimate|` across repeats, averaged over observations
/// and then series.
pub fn estimate_bias(estimates: &EstimateCube) -> Result<f64> {
    let (s, r, o) = estimates.dims();
    if r < MIN_BIAS_REPEATS || s == 0 || o == 0 {
        return Err(MlpfError::InvalidInput(format!(
            "bias needs at least {MIN_BIAS_REPEATS} repeats and nonempty data, got {s}×{r}×{o}"
        )));
    }
    Ok(estimates.mean_of(|x| {
        x.iter_mut().for_each(|v| *v = v.abs());
        quantile(x, 0.9)
    }))
}

/// Negative least-squares slope of `log2(values)` against `levels`.
pub fn fit_rate(levels: &[u32], values: &[f64]) -> Result<f64> {
    if levels.len() != values.len() || levels.len() < 2 {
        return Err(MlpfError::InvalidInput(format!(
            "rate fit needs at least 2 matching points, got {} levels and {} values",
            levels.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(MlpfError::InvalidInput(
            "rate fit needs positive finite values".into(),
        ));
    }
    let n = levels.len() as f64;
    let xs: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MlpfError::InvalidInput(
            "rate fit needs distinct levels".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(-sxy / sxx)
}

/// `ε_k = eps1 · 2^(−k/2)` for `k = 0..=k_max`.
pub fn tolerance_sequence(eps1: f64, k_max: usize) -> Result<Vec<f64>> {
    if !(eps1 > 0.0) {
        return Err(MlpfError::InvalidInput(format!(
            "eps1 must be positive, got {eps1}"
        )));
    }
    Ok((0..=k_max)
        .map(|k| eps1 * std::f64::consts::FRAC_1_SQRT_2.powi(k as i32))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    #[serde(rename = "l")]
    pub level: u32,
    /// `N`-scaled variance of the level estimator.
    #[serde(rename = "V")]
    pub v: f64,
    /// Bias proxy for truncating the hierarchy at this level.
    #[serde(rename = "B")]
    pub b: f64,
    /// Cost per particle under the configured cost model.
    #[serde(rename = "W")]
    pub w: f64,
    /// Measured seconds per particle, when timed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_seconds: Option<f64>,
    /// Single-level variance at this level, used when it is the coarsest
    /// level of a plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_base: Option<f64>,
}

impl LevelStats {
    pub fn new(level: u32, v: f64, b: f64, w: f64) -> Self {
        Self {
            level,
            v,
            b,
            w,
            w_seconds: None,
            v_base: None,
            w_base: None,
        }
    }

    pub fn base_v(&self) -> f64 {
        self.v_base.unwrap_or(self.v)
    }

    pub fn base_w(&self) -> f64 {
        self.w_base.unwrap_or(self.w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.v) && ok(self.b) && self.w > 0.0 && self.w.is_finite()) {
            return Err(MlpfError::InvalidInput(format!(
                "invalid statistics at level {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// Statistics of one (model, coupler) configuration as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub model: String,
    pub algorithm: String,
    #[serde(default)]
    pub change_of_measure: bool,
    pub levels: Vec<LevelStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpfPlan {
    pub epsilon: f64,
    pub l0: u32,
    #[serde(rename = "L")]
    pub l_max: u32,
    #[serde(rename = "N")]
    pub particles: Vec<u64>,
    pub phi: f64,
    #[serde(rename = "C_xi")]
    pub c_xi: f64,
    /// `Σ W_l N_l` of the plan.
    pub work: f64,
}

impl MlpfPlan {
    pub fn levels(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        (self.l0..=self.l_max).zip(self.particles.iter().copied())
    }
}

/// `N_l = ⌈(C/(φε))² √(V_l/W_l) Σ_j √(V_j W_j)⌉`.
pub fn allocate_particles(v: &[f64], w: &[f64], phi_eps: f64, c_xi: f64) -> Result<Vec<u64>> {
    if v.is_empty() || v.len() != w.len() {
        return Err(MlpfError::InvalidInput(
            "allocation needs matching nonempty V and W".into(),
        ));
    }
    if !(phi_eps > 0.0) || !(c_xi > 0.0) {
        return Err(MlpfError::InvalidInput(format!(
            "allocation needs positive phi*eps and C_xi, got {phi_eps} and {c_xi}"
        )));
    }
    if v.iter().chain(w).any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(MlpfError::InvalidInput(
            "allocation needs positive finite V and W".into(),
        ));
    }
    let scale = (c_xi / phi_eps).powi(2);
    let sum: f64 = v.iter().zip(w).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(v.iter()
        .zip(w)
        .map(|(a, b)| ((scale * (a / b).sqrt() * sum).ceil() as u64).max(1))
        .collect())
}

/// Variances and costs of the estimator terms for levels `l0..=l_max`.
fn plan_terms(stats: &[LevelStats], l0: usize, l_max: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v: Vec<f64> = stats[l0..=l_max].iter().map(|s| s.v).collect();
    let mut w: Vec<f64> = stats[l0..=l_max].iter().map(|s| s.w).collect();
    v[0] = stats[l0].base_v();
    w[0] = stats[l0].base_w();
    (v, w)
}

fn check_stats(stats: &[LevelStats]) -> Result<()> {
    if stats.is_empty() {
        return Err(MlpfError::InvalidInput("no level statistics".into()));
    }
    for (i, s) in stats.iter().enumerate() {
        s.validate()?;
        if s.level as usize != i {
            return Err(MlpfError::InvalidInput(format!(
                "statistics must list levels 0, 1, ... in order; found level {} at position {i}",
                s.level
            )));
        }
    }
    Ok(())
}

fn plan_for(
    stats: &[LevelStats],
    l0: usize,
    l_max: usize,
    epsilon: f64,
    c_xi: f64,
) -> Result<MlpfPlan> {
    let phi = 1.0 - stats[l_max].b / epsilon;
    let (v, w) = plan_terms(stats, l0, l_max);
    let particles = allocate_particles(&v, &w, phi * epsilon, c_xi)?;
    let work = particles.iter().zip(&w).map(|(&n, w)| n as f64 * w).sum();
    Ok(MlpfPlan {
        epsilon,
        l0: l0 as u32,
        l_max: l_max as u32,
        particles,
        phi,
        c_xi,
        work,
    })
}

/// Cheapest contiguous plan `l0..=L` with `B_L < ε`, optionally with `L`
/// fixed. Ties go to the smaller `L`, then the smaller `l0`.
pub fn optimal_plan_with(
    stats: &[LevelStats],
    epsilon: f64,
    c_xi: f64,
    fixed_l: Option<u32>,
) -> Result<MlpfPlan> {
    check_stats(stats)?;
    if !(epsilon > 0.0) {
        return Err(MlpfError::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut best: Option<MlpfPlan> = None;
    for l_max in 0..stats.len() {
        if fixed_l.is_some_and(|l| l as usize != l_max) || stats[l_max].b >= epsilon {
            continue;
        }
        for l0 in 0..=l_max {
            let plan = plan_for(stats, l0, l_max, epsilon, c_xi)?;
            if best.as_ref().is_none_or(|b| plan.work < b.work) {
                best = Some(plan);
            }
        }
    }
    best.ok_or(MlpfError::Infeasible { epsilon })
}

pub fn optimal_plan(stats: &[LevelStats], epsilon: f64, c_xi: f64) -> Result<MlpfPlan> {
    optimal_plan_with(stats, epsilon, c_xi, None)
}

/// Plans for a decreasing tolerance sequence. With `consecutive_l`, the
/// finest level grows by exactly one per tolerance after the first.
pub fn plan_sequence(
    stats: &[LevelStats],
    epsilons: &[f64],
    c_xi: f64,
    consecutive_l: bool,
) -> Result<Vec<MlpfPlan>> {
    let mut plans: Vec<MlpfPlan> = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let fixed = match plans.last() {
            Some(prev) if consecutive_l => Some(prev.l_max + 1),
            _ => None,
        };
        plans.push(optimal_plan_with(stats, eps, c_xi, fixed)?);
    }
    Ok(plans)
}

/// Fitted decay rates of variance, bias and cost over the coupled levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub variance: f64,
    pub bias: f64,
    /// Negative for costs that grow with the level.
    pub cost: f64,
}

/// Rates fitted over all levels `≥ 1` present in `stats`.
pub fn fit_rates(stats: &[LevelStats]) -> Result<Rates> {
    let coupled: Vec<&LevelStats> = stats.iter().filter(|s| s.level >= 1).collect();
    let levels: Vec<u32> = coupled.iter().map(|s| s.level).collect();
    let pick = |f: fn(&LevelStats) -> f64| coupled.iter().map(|s| f(s)).collect::<Vec<_>>();
    Ok(Rates {
        variance: fit_rate(&levels, &pick(|s| s.v))?,
        bias: fit_rate(&levels, &pick(|s| s.b))?,
        cost: fit_rate(&levels, &pick(|s| s.w))?,
    })
}

/// Append levels up to `max_level` by geometric extrapolation from the finest
/// measured level with the given rates.
pub fn extend_stats(stats: &[LevelStats], max_level: u32, rates: &Rates) -> Vec<LevelStats> {
    let mut out = stats.to_vec();
    let Some(last) = stats.last().cloned() else {
        return out;
    };
    for l in last.level + 1..=max_level {
        let k = (l - last.level) as f64;
        let scale = |x: f64, rate: f64| x * 2f64.powf(-rate * k);
        let mut s = LevelStats::new(
            l,
            scale(last.v, rates.variance),
            scale(last.b, rates.bias),
            scale(last.w, rates.cost),
        );
        s.w_seconds = last.w_seconds.map(|x| scale(x, rates.cost));
        // the single-level variance does not decay with the level
        s.v_base = Some(last.base_v());
        s.w_base = Some(scale(last.base_w(), rates.cost));
        out.push(s);
    }
    out
}
