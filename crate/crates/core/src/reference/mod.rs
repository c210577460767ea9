//! Reference filter means used to measure the error of multilevel estimates.
//!
//! OU uses the exact Kalman recursion; NDT and the double well use a
//! Fokker–Planck grid filter of the continuous-time model.

pub mod fokker_planck;
pub mod kalman;

pub use fokker_planck::{
    fp_predict, fp_update, run_fp_filter, FokkerPlanck, GridDensity, GridSpec,
};
pub use kalman::{kalman_predict, kalman_update, run_kalman, GaussianState};

use crate::error::Result;
use crate::models::{ModelKind, ModelSpec, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceMethod {
    /// Kalman for OU, grid filter otherwise.
    Auto,
    Kalman,
    FokkerPlanck,
}

/// Filter mean of the latent state after each observation.
pub fn run_reference_filter(
    model: &ModelSpec,
    obs: &[Observation],
    delta: f64,
    method: ReferenceMethod,
) -> Result<Vec<f64>> {
    let use_kalman = match method {
        ReferenceMethod::Auto => model.kind == ModelKind::Ou,
        ReferenceMethod::Kalman => true,
        ReferenceMethod::FokkerPlanck => false,
    };
    if use_kalman {
        Ok(run_kalman(model, obs)?
            .into_iter()
            .map(|s| s.mean)
            .collect())
    } else {
        run_fp_filter(model, obs, GridSpec::default_for(model.kind), delta)
    }
}
