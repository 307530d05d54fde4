//! Gaussian approximations of the preference posterior: Laplace and EP, plus
//! Laplace marginal-likelihood hyperparameter search.

pub mod ep;
pub mod hyper;
pub mod laplace;

use serde::{Deserialize, Serialize};

use crate::predictive::LatentPredictor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxKind {
    Laplace,
    Ep,
}

/// A fitted Gaussian posterior over the latent function.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub kind: ApproxKind,
    pub predictor: LatentPredictor,
    /// Laplace evidence; `None` for EP.
    pub log_marginal: Option<f64>,
    pub converged: bool,
}

pub use ep::{ep_fit, ep_predict, ep_predictor, EpFit, EpSiteState};
pub use hyper::{optimize_hyperparameters, HyperOutcome, HyperSearch};
pub use laplace::{la_fit, LaplaceFit};
