//! Benchmark diffusion models and the Gaussian observation likelihood.
//!
//! Three scalar SDEs `dX = a(X) dt + b(X) dW` are provided:
//!
//! * `Ou`: Ornstein–Uhlenbeck, `a(x) = -θx`, `b(x) = σ`, started at 0.
//! * `Ndt`: nonlinear diffusion term, `a(x) = -θx`, `b(x) = σ / sqrt(1 + x²)`,
//!   started from `N(0, τ²)`.
//! * `DoubleWell`: `a = -π'` for a tilted double-well potential `π` that is
//!   quartic on `[-k2, k2]` and quadratic outside `[-2k2, 2k2]`, constant `σ`,
//!   started from the Gibbs measure `∝ exp(-2π(x)/σ²)`.
//!
//! Observations are `Y_n | X_{nδ} ~ N(X_{nδ}, τ²)`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use crate::error::{MlpfError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ou,
    Ndt,
    DoubleWell,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ou => "ou",
            ModelKind::Ndt => "ndt",
            ModelKind::DoubleWell => "dw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ou" => Ok(ModelKind::Ou),
            "ndt" => Ok(ModelKind::Ndt),
            "dw" | "double-well" | "doublewell" => Ok(ModelKind::DoubleWell),
            other => Err(MlpfError::InvalidModel(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialLaw {
    PointMass(f64),
    Gaussian { mean: f64, var: f64 },
    Gibbs,
}

/// Tilted double-well potential parameters. Polynomial coefficients are
/// always derived from `k2`; only `k1` and `k2` are free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DwParams {
    pub k1: f64,
    pub k2: f64,
    /// `c[j]`, j = 0..=4, coefficients on `k2 < |x| <= 2 k2`.
    pub c: [f64; 5],
    /// `chat[j]`, j = 0..=2, coefficients on `|x| > 2 k2`.
    pub chat: [f64; 3],
    /// Euler–Maruyama stability bound `1 / chat[2]`.
    pub h_max: f64,
}

impl DwParams {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !(k1.abs() < (64.0_f64 / 27.0).sqrt()) {
            return Err(MlpfError::InvalidModel(format!(
                "double-well tilt |k1| = {} must be below sqrt(64/27)",
                k1.abs()
            )));
        }
        if !(k2 >= SQRT_2 - 1e-15) {
            return Err(MlpfError::InvalidModel(format!(
                "double-well k2 = {k2} must be at least sqrt(2)"
            )));
        }
        let k2sq = k2 * k2;
        let c = [
            (k2sq - 1.0).powi(2),
            4.0 * k2 * (k2sq - 1.0),
            2.0 * (3.0 * k2sq - 1.0),
            4.0 * k2,
            -1.0,
        ];
        let chat = [
            14.0 * k2sq * k2sq - 8.0 * k2sq + 1.0,
            c[2] * c[3],
            2.0 * (6.0 * k2sq - 1.0),
        ];
        Ok(Self {
            k1,
            k2,
            c,
            chat,
            h_max: 1.0 / chat[2],
        })
    }

    /// Tilt `√2/12`, unchanged half-interval `√2`.
    pub fn standard() -> Self {
        Self::new(SQRT_2 / 12.0, SQRT_2).expect("standard double-well parameters are valid")
    }

    /// The three roots of the drift inside `[-k2, k2]`, ascending.
    pub fn stationary_points(&self) -> [f64; 3] {
        let base = (-3.0 * 3.0_f64.sqrt() * self.k1 / 8.0).acos() / 3.0;
        let r = |j: f64| 2.0 / 3.0_f64.sqrt() * (base - 2.0 * PI * j / 3.0).cos();
        let mut pts = [r(0.0), r(1.0), r(2.0)];
        pts.sort_by(|a, b| a.total_cmp(b));
        pts
    }

    pub fn potential(&self, x: f64) -> f64 {
        let ax = x.abs();
        let tilt = self.k1 * x;
        if ax <= self.k2 {
            tilt + (x * x - 1.0).powi(2)
        } else if ax <= 2.0 * self.k2 {
            let s = ax - self.k2;
            tilt + self.c.iter().rev().fold(0.0, |acc, &cj| acc * s + cj)
        } else {
            let s = ax - 2.0 * self.k2;
            tilt + self.chat.iter().rev().fold(0.0, |acc, &cj| acc * s + cj)
        }
    }

    /// `-π'(x)`.
    pub fn drift(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.k2 {
            -self.k1 - 4.0 * x * (x * x - 1.0)
        } else if ax <= 2.0 * self.k2 {
            let s = ax - self.k2;
            let c = &self.c;
            let dpoly = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * 4.0 * c[4]));
            -self.k1 - x.signum() * dpoly
        } else {
            let s = ax - 2.0 * self.k2;
            -self.k1 - x.signum() * (self.chat[1] + 2.0 * self.chat[2] * s)
        }
    }

    /// Derivative of the drift, `-π''(x)`.
    pub fn drift_derivative(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.k2 {
            -12.0 * x * x + 4.0
        } else if ax <= 2.0 * self.k2 {
            let s = ax - self.k2;
            let c = &self.c;
            -(2.0 * c[2] + s * (6.0 * c[3] + s * 12.0 * c[4]))
        } else {
            -2.0 * self.chat[2]
        }
    }
}

/// One of the three benchmark models plus its observation-noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub theta: f64,
    pub sigma: f64,
    pub tau2: f64,
    pub dw: Option<DwParams>,
    pub initial: InitialLaw,
}

impl ModelSpec {
    /// θ = 1, σ = 0.5, τ² = 0.2, X₀ = 0.
    pub fn ou() -> Self {
        Self {
            kind: ModelKind::Ou,
            theta: 1.0,
            sigma: 0.5,
            tau2: 0.2,
            dw: None,
            initial: InitialLaw::PointMass(0.0),
        }
    }

    /// θ = 1, σ = 1, τ² = 0.1, X₀ ~ N(0, τ²).
    pub fn ndt() -> Self {
        Self {
            kind: ModelKind::Ndt,
            theta: 1.0,
            sigma: 1.0,
            tau2: 0.1,
            dw: None,
            initial: InitialLaw::Gaussian {
                mean: 0.0,
                var: 0.1,
            },
        }
    }

    /// σ = 1, τ² = 0.2, standard double-well parameters, Gibbs initial law.
    pub fn double_well() -> Self {
        Self {
            kind: ModelKind::DoubleWell,
            theta: 0.0,
            sigma: 1.0,
            tau2: 0.2,
            dw: Some(DwParams::standard()),
            initial: InitialLaw::Gibbs,
        }
    }

    pub fn of_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ou => Self::ou(),
            ModelKind::Ndt => Self::ndt(),
            ModelKind::DoubleWell => Self::double_well(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.tau2 > 0.0) {
            return Err(MlpfError::InvalidModel(format!(
                "sigma ({}) and tau2 ({}) must be positive",
                self.sigma, self.tau2
            )));
        }
        let ok = match self.kind {
            ModelKind::DoubleWell => self.dw.is_some() && self.initial == InitialLaw::Gibbs,
            ModelKind::Ou => self.initial == InitialLaw::PointMass(0.0),
            ModelKind::Ndt => {
                matches!(self.initial, InitialLaw::Gaussian { mean, var } if mean == 0.0 && var == self.tau2)
            }
        };
        if !ok {
            return Err(MlpfError::InvalidModel(format!(
                "initial law {:?} inconsistent with model {}",
                self.initial,
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Set the observation noise; keeps the NDT initial law `N(0, τ²)` in sync.
    pub fn with_tau2(mut self, tau2: f64) -> Self {
        self.tau2 = tau2;
        if self.kind == ModelKind::Ndt {
            self.initial = InitialLaw::Gaussian {
                mean: 0.0,
                var: tau2,
            };
        }
        self
    }

    pub fn has_constant_diffusion(&self) -> bool {
        self.kind != ModelKind::Ndt
    }

    /// Number of extra halvings applied to every level grid (the double well
    /// needs `h ≤ h_max` already on level 0).
    pub fn level_offset(&self) -> u32 {
        match self.kind {
            ModelKind::DoubleWell => 4,
            _ => 0,
        }
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        match self.kind {
            ModelKind::Ou | ModelKind::Ndt => -self.theta * x,
            ModelKind::DoubleWell => self.dw_params().drift(x),
        }
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        match self.kind {
            ModelKind::Ndt => self.sigma / (1.0 + x * x).sqrt(),
            _ => self.sigma,
        }
    }

    /// Upper bound on `⟨x − y, a(x) − a(y)⟩ / |x − y|²`.
    pub fn one_sided_lipschitz(&self) -> f64 {
        match self.kind {
            ModelKind::Ou | ModelKind::Ndt => -self.theta,
            ModelKind::DoubleWell => {
                let p = self.dw_params();
                let lim = 2.0 * p.k2;
                (0..=4000)
                    .map(|i| -lim + 2.0 * lim * i as f64 / 4000.0)
                    .map(|x| p.drift_derivative(x))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    #[inline]
    pub fn log_likelihood(&self, y: f64, x: f64) -> f64 {
        let r = y - x;
        -0.5 * (2.0 * PI * self.tau2).ln() - r * r / (2.0 * self.tau2)
    }

    pub fn likelihood(&self, y: f64, x: f64) -> f64 {
        self.log_likelihood(y, x).exp()
    }

    pub fn initial_sampler(&self) -> InitialSampler {
        match self.initial {
            InitialLaw::PointMass(x0) => InitialSampler::PointMass(x0),
            InitialLaw::Gaussian { mean, var } => InitialSampler::Gaussian {
                mean,
                sd: var.sqrt(),
            },
            InitialLaw::Gibbs => {
                InitialSampler::Gibbs(GibbsTable::new(self.dw_params(), self.sigma))
            }
        }
    }

    fn dw_params(&self) -> &DwParams {
        self.dw
            .as_ref()
            .expect("double-well model carries its parameters")
    }
}

/// Inverse-CDF table for the Gibbs measure `∝ exp(-2π(x)/σ²)` on `[-4, 4]`.
#[derive(Clone, Debug)]
pub struct GibbsTable {
    x_min: f64,
    dx: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl GibbsTable {
    pub const NODES: usize = 1 << 14;
    pub const HALF_WIDTH: f64 = 4.0;

    pub fn new(params: &DwParams, sigma: f64) -> Self {
        let n = Self::NODES;
        let x_min = -Self::HALF_WIDTH;
        let dx = 2.0 * Self::HALF_WIDTH / (n - 1) as f64;
        let scale = 2.0 / (sigma * sigma);
        let logs: Vec<f64> = (0..n)
            .map(|i| -scale * params.potential(x_min + i as f64 * dx))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut density: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();

        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        for i in 1..n {
            let prev = cdf[i - 1];
            cdf.push(prev + 0.5 * dx * (density[i - 1] + density[i]));
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        density.iter_mut().for_each(|d| *d /= total);
        Self {
            x_min,
            dx,
            density,
            cdf,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cdf.len()).map(move |i| self.x_min + i as f64 * self.dx)
    }

    /// Normalised density at the grid nodes.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Piecewise-linear CDF through the tabulated nodes.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.x_min {
            return 0.0;
        }
        let pos = (x - self.x_min) / self.dx;
        let j = pos.floor() as usize;
        if j + 1 >= self.cdf.len() {
            return 1.0;
        }
        let frac = pos - j as f64;
        self.cdf[j] + frac * (self.cdf[j + 1] - self.cdf[j])
    }

    /// Trapezoid-rule mean on the table grid.
    pub fn mean(&self) -> f64 {
        let xs: Vec<f64> = self.nodes().collect();
        let f: Vec<f64> = xs.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        f.windows(2).map(|w| 0.5 * self.dx * (w[0] + w[1])).sum()
    }

    /// Inverse of [`GibbsTable::cdf`] at `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        // first node with cdf >= u, then interpolate on the segment before it
        let j = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.x_min + (j as f64 - 1.0 + frac) * self.dx
    }
}

/// Draws from a model's initial law. Building one for the double well
/// tabulates the Gibbs CDF, so construct it once per filter run.
#[derive(Clone, Debug)]
pub enum InitialSampler {
    PointMass(f64),
    Gaussian { mean: f64, sd: f64 },
    Gibbs(GibbsTable),
}

impl InitialSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InitialSampler::PointMass(x0) => *x0,
            InitialSampler::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            InitialSampler::Gibbs(table) => {
                let u: f64 = rng.sample(Open01);
                table.quantile(u)
            }
        }
    }
}

/// One-off draw from the initial law. Prefer [`ModelSpec::initial_sampler`]
/// in loops.
pub fn sample_initial<R: Rng + ?Sized>(model: &ModelSpec, rng: &mut R) -> f64 {
    model.initial_sampler().sample(rng)
}

/// A scalar observation `y` at time `index · δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub time: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(index: usize, delta: f64, y: f64) -> Self {
        Self {
            index,
            time: index as f64 * delta,
            y,
        }
    }
}
