//! Exact filter for the linear Gaussian (OU) model.

use crate::error::{MlpfError, Result};
use crate::models::{InitialLaw, ModelKind, ModelSpec, Observation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: f64,
    /// Zero only for a point-mass initial law.
    pub var: f64,
}

impl GaussianState {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var >= 0.0) || !var.is_finite() || !mean.is_finite() {
            return Err(MlpfError::InvalidInput(format!(
                "invalid Gaussian state ({mean}, {var})"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn from_initial(law: &InitialLaw) -> Result<Self> {
        match *law {
            InitialLaw::PointMass(x) => Self::new(x, 0.0),
            InitialLaw::Gaussian { mean, var } => Self::new(mean, var),
            InitialLaw::Gibbs => Err(MlpfError::InvalidModel(
                "the Gibbs initial law is not Gaussian".into(),
            )),
        }
    }
}

/// OU transition over time `delta`.
pub fn kalman_predict(state: GaussianState, theta: f64, sigma: f64, delta: f64) -> GaussianState {
    let decay = (-theta * delta).exp();
    let decay2 = (-2.0 * theta * delta).exp();
    GaussianState {
        mean: state.mean * decay,
        var: state.var * decay2 + sigma * sigma * (1.0 - decay2) / (2.0 * theta),
    }
}

/// Conjugate update with `y ~ N(x, tau2)`.
pub fn kalman_update(state: GaussianState, y: f64, tau2: f64) -> GaussianState {
    let gain = state.var / (state.var + tau2);
    GaussianState {
        mean: state.mean + gain * (y - state.mean),
        var: (1.0 - gain) * state.var,
    }
}

/// Filter states after each observation.
pub fn run_kalman(model: &ModelSpec, obs: &[Observation]) -> Result<Vec<GaussianState>> {
    if model.kind != ModelKind::Ou || !(model.theta > 0.0) {
        return Err(MlpfError::InvalidModel(
            "the Kalman reference needs the OU model with theta > 0".into(),
        ));
    }
    let mut state = GaussianState::from_initial(&model.initial)?;
    let mut t = 0.0;
    Ok(obs
        .iter()
        .map(|o| {
            state = kalman_predict(state, model.theta, model.sigma, o.time - t);
            state = kalman_update(state, o.y, model.tau2);
            t = o.time;
            state
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn predict_examples() {
        let s = kalman_predict(GaussianState::new(0.0, 0.3).unwrap(), 1.0, 0.5, 0.5);
        assert_eq!(s.mean, 0.0);
        let s = kalman_predict(GaussianState::new(1.0, 0.0).unwrap(), 1.0, 0.5, 0.5);
        assert_abs_diff_eq!(s.mean, 0.606_531, epsilon = 1e-6);
        assert_abs_diff_eq!(s.var, 0.079_015_1, epsilon = 1e-7);
        let s = kalman_predict(GaussianState::new(3.0, 2.0).unwrap(), 1.0, 0.5, 100.0);
        assert_abs_diff_eq!(s.var, 0.125, epsilon = 1e-15);
    }

    #[test]
    fn update_examples() {
        let s = kalman_update(GaussianState::new(0.0, 1.0).unwrap(), 1.0, 0.2);
        assert_abs_diff_eq!(s.mean, 1.0 / 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.var, 0.2 / 1.2, epsilon = 1e-15);
        let prior = GaussianState::new(0.4, 0.7).unwrap();
        let s = kalman_update(prior, 5.0, 1e15);
        assert_abs_diff_eq!(s.mean, prior.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(s.var, prior.var, epsilon = 1e-12);
        let s = kalman_update(prior, 5.0, 1e-15);
        assert_abs_diff_eq!(s.mean, 5.0, epsilon = 1e-12);
        assert!(s.var < 1e-14);
    }

    #[test]
    fn variance_stays_positive_and_shrinks_on_update() {
        let m = ModelSpec::ou();
        let obs: Vec<Observation> = (1..=200)
            .map(|k| Observation::new(k, 0.5, (k as f64).sin()))
            .collect();
        let mut state = GaussianState::from_initial(&m.initial).unwrap();
        for o in &obs {
            state = kalman_predict(state, m.theta, m.sigma, 0.5);
            let post = kalman_update(state, o.y, m.tau2);
            assert!(post.var > 0.0 && post.var <= state.var);
            state = post;
        }
        let states = run_kalman(&m, &obs).unwrap();
        assert_eq!(states.last().unwrap().mean, state.mean);
        assert!(run_kalman(&ModelSpec::ndt(), &obs).is_err());
    }
}
