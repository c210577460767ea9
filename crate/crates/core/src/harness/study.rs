//! Experiment orchestration: parameter study, multilevel estimates,
//! tolerance study and the full pipeline.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::dynamics::LevelGrid;
use crate::error::{MlpfError, Result};
use crate::filtering::{run_coupled_pf, run_pf, FilterOutput, FilterStreams, ResamplePolicy};
use crate::girsanov::{run_coupled_pf_com, SpringConfig};
use crate::harness::config::{CostModel, RunConfig};
use crate::harness::data::{synthesize_data, SyntheticSeries};
use crate::harness::records::{
    data_rows, write_csv, write_json, ConvergenceRow, LatentRow, ReferenceRow, SummaryRow,
    ToleranceRow,
};
use crate::hierarchy::{
    estimate_bias, estimate_variance, extend_stats, fit_rate, plan_sequence, tolerance_sequence,
    EstimateCube, LevelStats, MlpfPlan, Rates, StatsDocument,
};
use crate::models::{ModelSpec, Observation};
use crate::reference::{run_reference_filter, ReferenceMethod};
use crate::rng::{experiment, Purpose, StreamFactory};

fn identity(x: f64) -> f64 {
    x
}

/// Streams of one filter run.
pub fn filter_streams(
    factory: &StreamFactory,
    experiment: u32,
    series: usize,
    repeat: usize,
    level: u32,
) -> Result<FilterStreams> {
    let s = |p| factory.stream(experiment, series as u32, repeat as u32, level, p);
    Ok(FilterStreams {
        initial: s(Purpose::Initial)?,
        dynamics: s(Purpose::Dynamics)?,
        resample: s(Purpose::Resample)?,
    })
}

/// Everything needed to run filters for one configuration.
#[derive(Clone, Debug)]
pub struct FilterSetup {
    pub model: ModelSpec,
    pub delta: f64,
    pub policy: ResamplePolicy,
    /// Spring for coupled levels; `None` runs the plain synchronous coupling.
    pub spring: Option<SpringConfig>,
}

impl FilterSetup {
    pub fn from_config(config: &RunConfig) -> Self {
        let model = config.model_spec();
        let spring = config.change_of_measure.then(|| match config.spring {
            Some(s) => SpringConfig {
                strength: s,
                enabled: true,
            },
            None => SpringConfig::for_model(&model),
        });
        Self {
            policy: ResamplePolicy::for_model(model.kind, config.algorithm),
            model,
            delta: config.delta,
            spring,
        }
    }

    /// Single-level filter at `level`.
    pub fn run_single(
        &self,
        obs: &[Observation],
        level: u32,
        n: usize,
        streams: &FilterStreams,
    ) -> Result<FilterOutput> {
        let grid = LevelGrid::for_model(&self.model, level, self.delta)?;
        run_pf(&self.model, obs, &grid, n, &self.policy, &identity, streams)
    }

    /// Coupled filter on levels `(level, level − 1)`.
    pub fn run_coupled(
        &self,
        obs: &[Observation],
        level: u32,
        n: usize,
        streams: &FilterStreams,
    ) -> Result<FilterOutput> {
        let grid = LevelGrid::for_model(&self.model, level, self.delta)?;
        match &self.spring {
            Some(spring) => run_coupled_pf_com(
                &self.model,
                obs,
                &grid,
                n,
                &self.policy,
                &identity,
                spring,
                streams,
            ),
            None => run_coupled_pf(&self.model, obs, &grid, n, &self.policy, &identity, streams),
        }
    }
}

/// Euler steps per particle and observation interval.
pub fn euler_step_cost(model: &ModelSpec, level: u32, coupled: bool) -> f64 {
    let steps = 2f64.powi((model.level_offset() + level) as i32);
    if coupled {
        1.5 * steps
    } else {
        steps
    }
}

#[derive(Clone, Debug)]
pub struct ParameterStudy {
    pub model: String,
    pub algorithm: String,
    pub com: bool,
    /// Levels `0..=level_max`.
    pub stats: Vec<LevelStats>,
    /// Mean Q90 of `|difference|` measured at each coupled level.
    pub bias_measured: Vec<(u32, f64)>,
    /// Variance and cost rates over the configured coupled levels; the bias
    /// rate is fitted to `bias_measured` over the same levels.
    pub rates: Rates,
    pub convergence: Vec<ConvergenceRow>,
}

impl ParameterStudy {
    pub fn stats_document(&self) -> StatsDocument {
        StatsDocument {
            model: self.model.clone(),
            algorithm: self.algorithm.clone(),
            change_of_measure: self.com,
            levels: self.stats.clone(),
        }
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.stats
            .iter()
            .map(|s| SummaryRow {
                model: self.model.clone(),
                algorithm: self.algorithm.clone(),
                com: self.com,
                level: s.level,
                v: s.v,
                b: s.b,
                w: s.w,
                w_seconds: s.w_seconds,
                v_base: s.v_base,
                w_base: s.w_base,
                rate_v: self.rates.variance,
                rate_b: self.rates.bias,
                rate_w: self.rates.cost,
            })
            .collect()
    }
}

struct LevelRuns {
    /// Filter estimates at level 0, differences above.
    main: EstimateCube,
    /// Fine-side filter estimates of coupled levels.
    fine: Option<EstimateCube>,
    seconds_per_particle: f64,
}

fn run_level(
    setup: &FilterSetup,
    data: &[Vec<Observation>],
    level: u32,
    config: &RunConfig,
    factory: &StreamFactory,
) -> Result<LevelRuns> {
    let n = config.particles;
    let d = data[0].len();
    let tasks: Vec<(usize, usize)> = (0..data.len())
        .flat_map(|s| (0..config.repeats).map(move |r| (s, r)))
        .collect();
    let outputs: Vec<FilterOutput> = tasks
        .par_iter()
        .map(|&(s, r)| {
            let streams = filter_streams(factory, experiment::PARAMETER_STUDY, s, r, level)?;
            if level == 0 {
                setup.run_single(&data[s], 0, n, &streams)
            } else {
                setup.run_coupled(&data[s], level, n, &streams)
            }
        })
        .collect::<Result<_>>()?;

    let mut main = EstimateCube::zeros(data.len(), config.repeats, d);
    let mut fine = (level > 0).then(|| EstimateCube::zeros(data.len(), config.repeats, d));
    let mut seconds = 0.0;
    for (&(s, r), out) in tasks.iter().zip(&outputs) {
        let filt = out.filter_estimates();
        if level == 0 {
            main.set_run(s, r, &filt)?;
        } else {
            let diff = out
                .difference_filters()
                .ok_or_else(|| MlpfError::InvalidInput("coupled run without differences".into()))?;
            main.set_run(s, r, &diff)?;
            if let Some(f) = fine.as_mut() {
                f.set_run(s, r, &filt)?;
            }
        }
        seconds += (out.timing.dynamics + out.timing.resampling) / (n * d) as f64;
    }
    Ok(LevelRuns {
        main,
        fine,
        seconds_per_particle: seconds / tasks.len() as f64,
    })
}

fn convergence_rows(
    study: &ParameterStudy,
    level: u32,
    n: usize,
    kind: &str,
    cube: &EstimateCube,
) -> Vec<ConvergenceRow> {
    let (s_n, r_n, o_n) = cube.dims();
    let mut rows = Vec::with_capacity(s_n * r_n * o_n);
    for s in 0..s_n {
        for r in 0..r_n {
            for o in 0..o_n {
                rows.push(ConvergenceRow {
                    model: study.model.clone(),
                    algorithm: study.algorithm.clone(),
                    com: study.com,
                    level,
                    particles: n,
                    series: s,
                    repeat: r,
                    observation: o + 1,
                    estimate_kind: kind.to_string(),
                    value: cube.get(s, r, o),
                });
            }
        }
    }
    rows
}

/// Repeated filters on calibration data at levels `0..=level_max`; per-level
/// variance, bias and cost with fitted rates.
pub fn run_parameter_study(
    config: &RunConfig,
    data: &[Vec<Observation>],
    factory: &StreamFactory,
) -> Result<ParameterStudy> {
    config.validate()?;
    if data.is_empty()
        || data
            .iter()
            .any(|s| s.len() != data[0].len() || s.is_empty())
    {
        return Err(MlpfError::InvalidInput(
            "calibration data must be nonempty series of equal length".into(),
        ));
    }
    let setup = FilterSetup::from_config(config);
    let n = config.particles;
    let mut study = ParameterStudy {
        model: setup.model.kind.name().to_string(),
        algorithm: config.algorithm.name().to_string(),
        com: setup.spring.is_some(),
        stats: Vec::new(),
        bias_measured: Vec::new(),
        rates: Rates {
            variance: 0.0,
            bias: 0.0,
            cost: 0.0,
        },
        convergence: Vec::new(),
    };

    for level in 0..=config.level_max {
        let runs = run_level(&setup, data, level, config, factory)?;
        let v = estimate_variance(&runs.main, n)?;
        let mut s = if level == 0 {
            let mut s = LevelStats::new(0, v, 0.0, euler_step_cost(&setup.model, 0, false));
            s.w_seconds = Some(runs.seconds_per_particle);
            s
        } else {
            study
                .bias_measured
                .push((level, estimate_bias(&runs.main)?));
            let fine = runs
                .fine
                .as_ref()
                .expect("coupled levels keep fine estimates");
            let mut s = LevelStats::new(level, v, 0.0, euler_step_cost(&setup.model, level, true));
            s.w_seconds = Some(runs.seconds_per_particle);
            s.v_base = Some(estimate_variance(fine, n)?);
            s.w_base = Some(euler_step_cost(&setup.model, level, false));
            s
        };
        if config.cost_model == CostModel::Measured {
            s.w = runs.seconds_per_particle;
            // the single-level filter skips the coarse chain: 2/3 of the work
            s.w_base = (level > 0).then_some(runs.seconds_per_particle * 2.0 / 3.0);
        }
        study.stats.push(s);
        if config.write_convergence {
            let kind = if level == 0 { "filter" } else { "difference" };
            let mut rows = convergence_rows(&study, level, n, kind, &runs.main);
            if let Some(f) = &runs.fine {
                rows.extend(convergence_rows(&study, level, n, "fine_filter", f));
            }
            study.convergence.extend(rows);
        }
    }

    let fit_levels: Vec<u32> = (config.level_min..=config.level_max).collect();
    let pick = |f: &dyn Fn(&LevelStats) -> f64| {
        fit_levels
            .iter()
            .map(|&l| f(&study.stats[l as usize]))
            .collect::<Vec<_>>()
    };
    let bias_fit: Vec<f64> = fit_levels
        .iter()
        .map(|&l| study.bias_measured[l as usize - 1].1)
        .collect();
    let rates = if fit_levels.len() >= 2 {
        Rates {
            variance: fit_rate(&fit_levels, &pick(&|s| s.v))?,
            bias: fit_rate(&fit_levels, &bias_fit)?,
            cost: fit_rate(&fit_levels, &pick(&|s| s.w))?,
        }
    } else {
        // one coupled level: fall back to the Euler weak/strong orders
        Rates {
            variance: 2.0,
            bias: 1.0,
            cost: -1.0,
        }
    };
    study.rates = rates;

    // truncation bias at l is measured by the level-(l+1) difference
    let last = config.level_max;
    for l in 0..=last {
        study.stats[l as usize].b = if l < last {
            study.bias_measured[l as usize].1
        } else {
            study.bias_measured[l as usize - 1].1 * 2f64.powf(-rates.bias)
        };
    }
    Ok(study)
}

/// Per-observation estimate of one multilevel filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpfRun {
    pub estimates: Vec<f64>,
    pub wall_time: f64,
}

/// Telescoping estimate: single-level filter at `l0` plus independent
/// coupled differences on `l0+1..=L`.
pub fn run_mlpf(
    setup: &FilterSetup,
    obs: &[Observation],
    plan: &MlpfPlan,
    factory: &StreamFactory,
    experiment: u32,
    series: usize,
    repeat: usize,
) -> Result<MlpfRun> {
    let start = Instant::now();
    let mut estimates = vec![0.0; obs.len()];
    for (level, n) in plan.levels() {
        let streams = filter_streams(factory, experiment, series, repeat, level)?;
        let n = usize::try_from(n)
            .map_err(|_| MlpfError::InvalidInput("particle count overflow".into()))?;
        let n = n.max(2);
        if level == plan.l0 {
            let out = setup.run_single(obs, level, n, &streams)?;
            for (e, r) in estimates.iter_mut().zip(&out.records) {
                *e += r.filter_estimate;
            }
        } else {
            let out = setup.run_coupled(obs, level, n, &streams)?;
            for (e, r) in estimates.iter_mut().zip(&out.records) {
                *e += r.difference_filter.unwrap_or(0.0);
            }
        }
    }
    Ok(MlpfRun {
        estimates,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Plans for the configured tolerance sequence from measured statistics,
/// extrapolated a few levels past the finest measured one.
pub fn plans_from_stats(config: &RunConfig, study: &ParameterStudy) -> Result<Vec<MlpfPlan>> {
    let eps = tolerance_sequence(config.eps1, config.k_max)?;
    let max_level = (config.level_max + 6).min(20 - study_offset(config));
    let stats = extend_stats(&study.stats, max_level, &study.rates);
    plan_sequence(&stats, &eps, config.c_xi, config.consecutive_l)
}

fn study_offset(config: &RunConfig) -> u32 {
    config.model_spec().level_offset()
}

/// Multilevel estimates for every (tolerance, evaluation series) pair,
/// compared with the reference mean at the final observation.
pub fn run_tolerance_study(
    config: &RunConfig,
    plans: &[MlpfPlan],
    data: &[Vec<Observation>],
    reference: &[Vec<f64>],
    factory: &StreamFactory,
) -> Result<Vec<ToleranceRow>> {
    let setup = FilterSetup::from_config(config);
    let tasks: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|k| (0..data.len()).map(move |s| (k, s)))
        .collect();
    tasks
        .par_iter()
        .map(|&(k, s)| {
            let plan = &plans[k];
            let run = run_mlpf(
                &setup,
                &data[s],
                plan,
                factory,
                experiment::TOLERANCE_STUDY,
                s,
                k,
            )?;
            let estimate = *run.estimates.last().expect("nonempty series");
            let reference = *reference[s].last().expect("nonempty reference");
            Ok(ToleranceRow {
                model: setup.model.kind.name().to_string(),
                algorithm: config.algorithm.name().to_string(),
                com: setup.spring.is_some(),
                k,
                epsilon: plan.epsilon,
                series: s,
                l0: plan.l0,
                l_max: plan.l_max,
                estimate,
                reference,
                error: (estimate - reference).abs(),
                wall_time: run.wall_time,
            })
        })
        .collect()
}

/// Fraction of series with error above ε, per tolerance index.
pub fn failure_fractions(rows: &[ToleranceRow]) -> Vec<(usize, f64, f64)> {
    let k_max = rows.iter().map(|r| r.k).max().unwrap_or(0);
    (0..=k_max)
        .filter_map(|k| {
            let at: Vec<&ToleranceRow> = rows.iter().filter(|r| r.k == k).collect();
            (!at.is_empty()).then(|| {
                let fails = at.iter().filter(|r| r.error > r.epsilon).count();
                (k, at[0].epsilon, fails as f64 / at.len() as f64)
            })
        })
        .collect()
}

/// Least-squares slope of `ln(mean cost)` against `ln ε`, where `cost`
/// extracts the cost of one row.
pub fn cost_slope(rows: &[ToleranceRow], cost: impl Fn(&ToleranceRow) -> f64) -> Result<f64> {
    let k_max = rows.iter().map(|r| r.k).max().unwrap_or(0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..=k_max {
        let at: Vec<&ToleranceRow> = rows.iter().filter(|r| r.k == k).collect();
        if at.is_empty() {
            continue;
        }
        let mean = at.iter().map(|r| cost(r)).sum::<f64>() / at.len() as f64;
        xs.push(at[0].epsilon.ln());
        ys.push(mean.ln());
    }
    if xs.len() < 2 {
        return Err(MlpfError::InvalidInput(
            "cost slope needs at least two tolerances".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Synthetic series for one pipeline phase (`experiment::CALIBRATION_DATA`
/// or `experiment::EVALUATION_DATA`).
pub fn generate_series(
    config: &RunConfig,
    experiment_tag: u32,
    count: usize,
    factory: &StreamFactory,
) -> Result<Vec<SyntheticSeries>> {
    let model = config.model_spec();
    (0..count)
        .into_par_iter()
        .map(|s| {
            let stream = factory.stream(
                experiment_tag,
                s as u32,
                0,
                config.data_level,
                Purpose::Data,
            )?;
            synthesize_data(
                &model,
                config.t_final,
                config.delta,
                config.data_level,
                &stream,
            )
        })
        .collect()
}

pub fn reference_means(config: &RunConfig, data: &[Vec<Observation>]) -> Result<Vec<Vec<f64>>> {
    let model = config.model_spec();
    data.par_iter()
        .map(|obs| run_reference_filter(&model, obs, config.delta, ReferenceMethod::Auto))
        .collect()
}

pub fn write_series(dir: &Path, prefix: &str, series: &[SyntheticSeries]) -> Result<()> {
    let data: Vec<_> = series
        .iter()
        .enumerate()
        .flat_map(|(s, d)| data_rows(s, &d.observations))
        .collect();
    let latent: Vec<LatentRow> = series
        .iter()
        .enumerate()
        .flat_map(|(s, d)| {
            d.observations
                .iter()
                .zip(&d.latent)
                .map(move |(o, &x)| LatentRow {
                    series: s,
                    n: o.index,
                    t: o.time,
                    x,
                })
        })
        .collect();
    write_csv(&dir.join(format!("{prefix}data.csv")), "data", &data)?;
    write_csv(&dir.join(format!("{prefix}latent.csv")), "latent", &latent)
}

pub fn reference_rows(means: &[Vec<f64>]) -> Vec<ReferenceRow> {
    means
        .iter()
        .enumerate()
        .flat_map(|(s, m)| {
            m.iter().enumerate().map(move |(i, &mean)| ReferenceRow {
                series: s,
                n: i + 1,
                mean,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub study: ParameterStudy,
    pub plans: Vec<MlpfPlan>,
    pub tolerance: Vec<ToleranceRow>,
}

/// Calibration data, parameter study, plans, evaluation data, reference and
/// tolerance study; every artefact is written under `config.out`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out = &config.out;
    std::fs::create_dir_all(out)?;
    let factory = config.stream_factory();

    let calibration = generate_series(
        config,
        experiment::CALIBRATION_DATA,
        config.series,
        &factory,
    )?;
    write_series(out, "calibration_", &calibration)?;
    let cal_obs: Vec<Vec<Observation>> = calibration.into_iter().map(|s| s.observations).collect();

    let study = run_parameter_study(config, &cal_obs, &factory)?;
    write_parameter_study(out, &study)?;

    let plans = plans_from_stats(config, &study)?;
    write_json(&out.join("plans.json"), &plans)?;

    let evaluation = generate_series(
        config,
        experiment::EVALUATION_DATA,
        config.tolerance_series,
        &factory,
    )?;
    write_series(out, "evaluation_", &evaluation)?;
    let eval_obs: Vec<Vec<Observation>> = evaluation.into_iter().map(|s| s.observations).collect();

    let reference = reference_means(config, &eval_obs)?;
    write_csv(
        &out.join("reference.csv"),
        "reference",
        &reference_rows(&reference),
    )?;

    let tolerance = run_tolerance_study(config, &plans, &eval_obs, &reference, &factory)?;
    write_csv(&out.join("tolerance.csv"), "tolerance", &tolerance)?;

    Ok(PipelineOutput {
        study,
        plans,
        tolerance,
    })
}

pub fn write_parameter_study(dir: &Path, study: &ParameterStudy) -> Result<()> {
    write_csv(&dir.join("summary.csv"), "summary", &study.summary_rows())?;
    write_json(&dir.join("stats.json"), &study.stats_document())?;
    if !study.convergence.is_empty() {
        write_csv(
            &dir.join("convergence.csv"),
            "convergence",
            &study.convergence,
        )?;
    }
    Ok(())
}
