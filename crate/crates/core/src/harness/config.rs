//! Run configuration: profiles, a `key = value` config file format and
//! validation.

use std::path::{Path, PathBuf};

use crate::error::{MlpfError, Result};
use crate::models::{ModelKind, ModelSpec};
use crate::resampling::Coupler;
use crate::rng::StreamFactory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// T = 50, 3 series, 50 repeats, N = 2^10, 30 tolerance series.
    Desk,
    /// T = 500, 5 series, 100 repeats, N = 2^13, 100 tolerance series.
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(MlpfError::InvalidInput(format!(
                "unknown profile '{other}'"
            ))),
        }
    }
}

/// How per-particle cost `W_l` is measured for planning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostModel {
    /// Euler steps per particle and interval: `1.5 · 2^(o+l)` for a coupled
    /// level, `2^(o+l)` for a single-level filter. Deterministic.
    EulerSteps,
    /// Measured wall-clock seconds per particle.
    Measured,
}

impl CostModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "steps" | "euler-steps" => Ok(CostModel::EulerSteps),
            "measured" | "time" => Ok(CostModel::Measured),
            other => Err(MlpfError::InvalidInput(format!(
                "unknown cost model '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostModel::EulerSteps => "steps",
            CostModel::Measured => "measured",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub tau2: Option<f64>,
    pub t_final: f64,
    pub delta: f64,
    pub seed: u64,
    /// Calibration series for the parameter study.
    pub series: usize,
    pub repeats: usize,
    pub particles: usize,
    /// Coupled levels `level_min..=level_max` of the parameter study (level
    /// 0 is always run as a single-level filter).
    pub level_min: u32,
    pub level_max: u32,
    pub algorithm: Coupler,
    pub change_of_measure: bool,
    pub spring: Option<f64>,
    /// Evaluation series of the tolerance study.
    pub tolerance_series: usize,
    pub eps1: f64,
    pub k_max: usize,
    pub c_xi: f64,
    /// Fine level of the synthetic-data simulation.
    pub data_level: u32,
    pub cost_model: CostModel,
    /// Force the finest planned level to grow by one per tolerance.
    pub consecutive_l: bool,
    /// Write per-run estimates of the parameter study.
    pub write_convergence: bool,
    pub strict: bool,
    /// Fail on any reuse of a random-stream identifier.
    pub audit_streams: bool,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(model: ModelKind, profile: Profile) -> Self {
        let (t_final, series, repeats, particles, tolerance_series) = match profile {
            Profile::Desk => (50.0, 3, 50, 1 << 10, 30),
            Profile::Paper => (500.0, 5, 100, 1 << 13, 100),
        };
        let level_max = match model {
            ModelKind::DoubleWell => 4,
            // the non-constant diffusion leaves levels below ~4 pre-asymptotic
            ModelKind::Ndt => 8,
            ModelKind::Ou => 6,
        };
        Self {
            model,
            tau2: None,
            t_final,
            delta: 0.5,
            seed: 1,
            series,
            repeats,
            particles,
            level_min: 1,
            level_max,
            algorithm: Coupler::Wasserstein,
            change_of_measure: model == ModelKind::DoubleWell,
            spring: None,
            tolerance_series,
            eps1: 0.03,
            k_max: 5,
            c_xi: 2.0,
            data_level: 10,
            cost_model: CostModel::EulerSteps,
            consecutive_l: false,
            write_convergence: true,
            strict: false,
            audit_streams: false,
            out: PathBuf::from("out"),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = ModelSpec::of_kind(self.model);
        match self.tau2 {
            Some(t) => m.with_tau2(t),
            None => m,
        }
    }

    pub fn stream_factory(&self) -> StreamFactory {
        if self.audit_streams {
            StreamFactory::audited(self.seed)
        } else {
            StreamFactory::new(self.seed)
        }
    }

    /// Number of observations `D = T / δ`.
    pub fn observations(&self) -> usize {
        (self.t_final / self.delta).round() as usize
    }

    /// Checks the configuration. Returns warnings for combinations that are
    /// allowed but unusual; with `strict` those are errors.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.model_spec().validate()?;
        let bad = |m: String| Err(MlpfError::InvalidInput(m));
        if !(self.delta > 0.0) || !(self.t_final > 0.0) {
            return bad(format!(
                "T ({}) and delta ({}) must be positive",
                self.t_final, self.delta
            ));
        }
        let d = self.observations();
        if d == 0 || ((d as f64) * self.delta - self.t_final).abs() > 1e-9 * self.t_final {
            return bad(format!(
                "T = {} is not a whole number of intervals of {}",
                self.t_final, self.delta
            ));
        }
        if self.series == 0 || self.tolerance_series == 0 {
            return bad("series counts must be positive".into());
        }
        if self.repeats < 2 {
            return bad(format!("need at least 2 repeats, got {}", self.repeats));
        }
        if self.particles < 2 {
            return bad(format!("need at least 2 particles, got {}", self.particles));
        }
        if self.level_min < 1 || self.level_max < self.level_min {
            return bad(format!(
                "coupled levels must satisfy 1 <= min <= max, got {}..{}",
                self.level_min, self.level_max
            ));
        }
        if self.data_level < self.level_max {
            return bad(format!(
                "data level {} is coarser than the finest filter level {}",
                self.data_level, self.level_max
            ));
        }
        if !(self.eps1 > 0.0) || !(self.c_xi > 0.0) {
            return bad("eps1 and C_xi must be positive".into());
        }
        if let Some(s) = self.spring {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!(
                    "spring strength must be finite and nonnegative, got {s}"
                ));
            }
        }
        let mut warnings = Vec::new();
        if self.change_of_measure {
            let spec = self.model_spec();
            if !spec.has_constant_diffusion() {
                return Err(MlpfError::InvalidModel(format!(
                    "--change-of-measure needs a constant diffusion coefficient; {} has none",
                    self.model.name()
                )));
            }
            if spec.one_sided_lipschitz() < 0.0 {
                warnings.push(format!(
                    "--change-of-measure on the contractive {} model only adds variance",
                    self.model.name()
                ));
            }
        }
        if self.strict && !warnings.is_empty() {
            return bad(warnings.join("; "));
        }
        Ok(warnings)
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| MlpfError::Config {
                line: i + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| MlpfError::Config {
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn apply_config_file(&mut self, path: &Path) -> Result<()> {
        self.apply_config_text(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| MlpfError::InvalidInput(format!("bad value '{v}' for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(MlpfError::InvalidInput(format!(
                    "bad boolean '{v}' for {key}"
                ))),
            }
        }
        match key {
            "model" => self.model = ModelKind::parse(value)?,
            "tau2" => self.tau2 = Some(num(key, value)?),
            "T" | "t_final" => self.t_final = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "series" => self.series = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "particles" => self.particles = num(key, value)?,
            "levels" => (self.level_min, self.level_max) = parse_level_range(value)?,
            "algorithm" => self.algorithm = Coupler::parse(value)?,
            "change_of_measure" => self.change_of_measure = flag(key, value)?,
            "spring" => self.spring = Some(num(key, value)?),
            "tolerance_series" => self.tolerance_series = num(key, value)?,
            "eps1" => self.eps1 = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "c_xi" => self.c_xi = num(key, value)?,
            "data_level" => self.data_level = num(key, value)?,
            "cost_model" => self.cost_model = CostModel::parse(value)?,
            "consecutive_l" => self.consecutive_l = flag(key, value)?,
            "write_convergence" => self.write_convergence = flag(key, value)?,
            "strict" => self.strict = flag(key, value)?,
            "audit_streams" => self.audit_streams = flag(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(MlpfError::InvalidInput(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

/// `"a..b"`, `"a:b"`, `"a-b"` or a single level `"a"`.
pub fn parse_level_range(s: &str) -> Result<(u32, u32)> {
    let err = || MlpfError::InvalidInput(format!("bad level range '{s}'"));
    let parts: Vec<&str> = if s.contains("..") {
        s.splitn(2, "..").collect()
    } else {
        s.splitn(2, [':', '-']).collect()
    };
    let lo: u32 = parts[0].trim().parse().map_err(|_| err())?;
    let hi: u32 = match parts.get(1) {
        Some(p) => p
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| err())?,
        None => lo,
    };
    if hi < lo {
        return Err(err());
    }
    Ok((lo, hi))
}
