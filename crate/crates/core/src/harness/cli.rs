//! Command-line front end.
//!
//! Failures print one `error kind=<kind> message="<text>"` line on stderr
//! and exit nonzero.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{MlpfError, Result};
use crate::harness::config::{parse_level_range, CostModel, Profile, RunConfig};
use crate::harness::records::{
    observations_from_rows, read_csv, read_json, write_csv, write_json, DataRow,
};
use crate::harness::study::{
    generate_series, reference_means, reference_rows, run_mlpf, run_parameter_study, run_pipeline,
    write_parameter_study, write_series, FilterSetup,
};
use crate::hierarchy::{
    extend_stats, fit_rates, plan_sequence, tolerance_sequence, MlpfPlan, StatsDocument,
};
use crate::models::{ModelKind, Observation};
use crate::resampling::Coupler;
use crate::rng::experiment;

#[derive(Parser, Debug)]
#[command(
    name = "mlpf",
    version,
    about = "Multilevel particle filters for partially observed 1-D diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate observation series and their latent paths.
    SimulateData {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the evaluation-data streams instead of calibration ones.
        #[arg(long)]
        evaluation: bool,
    },
    /// Parameter study: per-level V, B, W and fitted rates.
    EstimateParams {
        #[command(flatten)]
        common: CommonArgs,
        /// Observation CSV to use instead of simulated calibration data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Optimal hierarchies for a tolerance sequence from a stats document.
    PlanHierarchy {
        #[command(flatten)]
        common: CommonArgs,
        /// Stats JSON written by estimate-params.
        #[arg(long)]
        stats: PathBuf,
        /// Plan for this single tolerance instead of the sequence.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Finest level available to the planner (default: six past the
        /// finest measured level).
        #[arg(long)]
        max_level: Option<u32>,
    },
    /// Multilevel filter estimates for every series of a data file.
    RunMlpf {
        #[command(flatten)]
        common: CommonArgs,
        /// Plans JSON written by plan-hierarchy.
        #[arg(long)]
        plan: PathBuf,
        /// Index of the plan in the file.
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// Observation CSV (default: simulated evaluation data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Full pipeline: calibration data, parameter study, plans, evaluation
    /// data, reference filters and the error/cost study over tolerances.
    ToleranceStudy {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Reference filter means (Kalman for OU, Fokker–Planck otherwise).
    Reference {
        #[command(flatten)]
        common: CommonArgs,
        /// Observation CSV (default: simulated evaluation data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// ou, ndt or dw.
    #[arg(long, default_value = "ou")]
    pub model: String,
    /// wasserstein or index.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Spring-coupled dynamics with Radon–Nikodym weights (default on for dw).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub change_of_measure: Option<bool>,
    /// Spring strength S.
    #[arg(long)]
    pub spring: Option<f64>,
    /// Final time T.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    /// Observation spacing.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coupled levels, e.g. 1..6.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Number of data series.
    #[arg(long)]
    pub series: Option<usize>,
    /// desk or paper.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// steps (Euler steps per particle) or measured (seconds).
    #[arg(long)]
    pub cost_model: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key = value file applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Treat configuration warnings as errors.
    #[arg(long)]
    pub strict: bool,
    /// Fail on any reuse of a random-stream identifier.
    #[arg(long)]
    pub audit_streams: bool,
}

impl CommonArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut model = ModelKind::parse(&self.model)?;
        let profile = Profile::parse(&self.profile)?;
        let mut c = RunConfig::new(model, profile);
        if let Some(path) = &self.config {
            c.apply_config_file(path)?;
            if c.model != model {
                // a model chosen in the file takes that model's defaults
                model = c.model;
                let mut fresh = RunConfig::new(model, profile);
                fresh.apply_config_file(path)?;
                c = fresh;
            }
        }
        if let Some(a) = &self.algorithm {
            c.algorithm = Coupler::parse(a)?;
        }
        if let Some(v) = self.change_of_measure {
            c.change_of_measure = v;
        }
        if let Some(s) = self.spring {
            c.spring = Some(s);
        }
        if let Some(t) = self.t_final {
            c.t_final = t;
        }
        if let Some(d) = self.delta {
            c.delta = d;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(l) = &self.levels {
            (c.level_min, c.level_max) = parse_level_range(l)?;
        }
        if let Some(n) = self.particles {
            c.particles = n;
        }
        if let Some(r) = self.repeats {
            c.repeats = r;
        }
        if let Some(s) = self.series {
            c.series = s;
            c.tolerance_series = s;
        }
        if let Some(m) = &self.cost_model {
            c.cost_model = CostModel::parse(m)?;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        c.strict |= self.strict;
        c.audit_streams |= self.audit_streams;
        Ok(c)
    }
}

/// One row of `mlpf.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpfRow {
    pub series: usize,
    pub n: usize,
    pub t: f64,
    pub estimate: f64,
}

fn prepared(common: &CommonArgs) -> Result<RunConfig> {
    let config = common.to_config()?;
    for w in config.validate()? {
        eprintln!("warning message={w:?}");
    }
    std::fs::create_dir_all(&config.out)?;
    Ok(config)
}

fn load_or_simulate(
    config: &RunConfig,
    data: Option<&PathBuf>,
    evaluation: bool,
) -> Result<Vec<Vec<Observation>>> {
    match data {
        Some(path) => observations_from_rows(&read_csv::<DataRow>(path)?, config.delta),
        None => {
            let (tag, count) = if evaluation {
                (experiment::EVALUATION_DATA, config.tolerance_series)
            } else {
                (experiment::CALIBRATION_DATA, config.series)
            };
            Ok(
                generate_series(config, tag, count, &config.stream_factory())?
                    .into_iter()
                    .map(|s| s.observations)
                    .collect(),
            )
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateData { common, evaluation } => {
            let config = prepared(&common)?;
            let (tag, count) = if evaluation {
                (experiment::EVALUATION_DATA, config.tolerance_series)
            } else {
                (experiment::CALIBRATION_DATA, config.series)
            };
            let series = generate_series(&config, tag, count, &config.stream_factory())?;
            write_series(&config.out, "", &series)?;
        }
        Command::EstimateParams { common, data } => {
            let config = prepared(&common)?;
            let obs = load_or_simulate(&config, data.as_ref(), false)?;
            let study = run_parameter_study(&config, &obs, &config.stream_factory())?;
            write_parameter_study(&config.out, &study)?;
            println!(
                "rates variance={:.4} bias={:.4} cost={:.4}",
                study.rates.variance, study.rates.bias, study.rates.cost
            );
        }
        Command::PlanHierarchy {
            common,
            stats,
            epsilon,
            max_level,
        } => {
            let config = prepared(&common)?;
            let doc: StatsDocument = read_json(&stats)?;
            let measured_max =
                doc.levels.last().map(|s| s.level).ok_or_else(|| {
                    MlpfError::InvalidInput("stats document lists no levels".into())
                })?;
            let levels = if doc.levels.len() >= 3 {
                let rates = fit_rates(&doc.levels)?;
                extend_stats(&doc.levels, max_level.unwrap_or(measured_max + 6), &rates)
            } else {
                doc.levels.clone()
            };
            let eps = match epsilon {
                Some(e) => vec![e],
                None => tolerance_sequence(config.eps1, config.k_max)?,
            };
            let plans = plan_sequence(&levels, &eps, config.c_xi, config.consecutive_l)?;
            write_json(&config.out.join("plans.json"), &plans)?;
            for p in &plans {
                println!(
                    "epsilon={} l0={} L={} N={:?}",
                    p.epsilon, p.l0, p.l_max, p.particles
                );
            }
        }
        Command::RunMlpf {
            common,
            plan,
            k,
            data,
        } => {
            let config = prepared(&common)?;
            let plans: Vec<MlpfPlan> = read_json(&plan)?;
            let plan = plans.get(k).ok_or_else(|| {
                MlpfError::InvalidInput(format!(
                    "plan index {k} out of range ({} plans)",
                    plans.len()
                ))
            })?;
            let obs = load_or_simulate(&config, data.as_ref(), true)?;
            let setup = FilterSetup::from_config(&config);
            let factory = config.stream_factory();
            let mut rows = Vec::new();
            for (s, series) in obs.iter().enumerate() {
                let run = run_mlpf(&setup, series, plan, &factory, experiment::ADHOC, s, k)?;
                rows.extend(
                    series
                        .iter()
                        .zip(&run.estimates)
                        .map(|(o, &estimate)| MlpfRow {
                            series: s,
                            n: o.index,
                            t: o.time,
                            estimate,
                        }),
                );
            }
            write_csv(&config.out.join("mlpf.csv"), "mlpf", &rows)?;
        }
        Command::ToleranceStudy { common } => {
            let config = prepared(&common)?;
            let out = run_pipeline(&config)?;
            for (k, eps, frac) in crate::harness::study::failure_fractions(&out.tolerance) {
                println!("k={k} epsilon={eps:.5} failure_fraction={frac:.3}");
            }
        }
        Command::Reference { common, data } => {
            let config = prepared(&common)?;
            let obs = load_or_simulate(&config, data.as_ref(), true)?;
            let means = reference_means(&config, &obs)?;
            write_csv(
                &config.out.join("reference.csv"),
                "reference",
                &reference_rows(&means),
            )?;
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error kind=usage message={first:?}");
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            1
        }
    }
}
