//! Lengthscale selection by maximizing the Laplace evidence.
//!
//! Nelder-Mead on log-lengthscales, restarted from the current configuration
//! and from random points of the log box. Signal and noise variances stay fixed.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::laplace::la_fit_from;
use crate::duel::DuelDataset;
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;

/// Quadratic penalty on log-lengthscales outside the box, keeping the simplex inside.
const BOX_PENALTY: f64 = 10.0;
const INITIAL_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSearch {
    pub restarts: usize,
    pub lower: f64,
    pub upper: f64,
    /// Per-restart iteration budget is `base_iterations + per_dimension · d`.
    pub base_iterations: u64,
    pub per_dimension: u64,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            restarts: 5,
            lower: 1e-2,
            upper: 1e2,
            base_iterations: 60,
            per_dimension: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperOutcome {
    pub config: KernelConfig,
    pub log_marginal: f64,
    /// Set when no restart produced a finite evidence and `config` is the input.
    pub failed: bool,
}

struct NegEvidence<'a> {
    data: &'a DuelDataset,
    base: &'a KernelConfig,
    bounds: (f64, f64),
    warm: RefCell<Option<DVector<f64>>>,
}

impl NegEvidence<'_> {
    fn clamp(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| t.clamp(self.bounds.0, self.bounds.1)).collect()
    }

    fn config(&self, theta: &[f64]) -> KernelConfig {
        KernelConfig {
            lengthscales: self.clamp(theta).iter().map(|t| t.exp()).collect(),
            ..self.base.clone()
        }
    }

    fn evidence(&self, theta: &[f64]) -> Option<f64> {
        let cfg = self.config(theta);
        let warm = self.warm.borrow().clone();
        let fit = la_fit_from(self.data, &cfg, warm.as_ref()).ok()?;
        if !fit.log_marginal.is_finite() {
            return None;
        }
        *self.warm.borrow_mut() = Some(fit.mode);
        Some(fit.log_marginal)
    }
}

impl CostFunction for &NegEvidence<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let outside: f64 = theta.iter().zip(self.clamp(theta)).map(|(t, c)| (t - c).powi(2)).sum();
        Ok(match self.evidence(theta) {
            Some(lm) => -lm + BOX_PENALTY * outside,
            None => f64::MAX,
        })
    }
}

pub fn optimize_hyperparameters<R: Rng + ?Sized>(
    data: &DuelDataset,
    current: &KernelConfig,
    search: &HyperSearch,
    rng: &mut R,
) -> Result<HyperOutcome> {
    if data.is_empty() {
        return Err(Error::InvalidParameter(
            "hyperparameter search needs at least one duel".into(),
        ));
    }
    if !(search.lower > 0.0 && search.lower < search.upper) || search.restarts == 0 {
        return Err(Error::InvalidParameter("invalid hyperparameter search box".into()));
    }
    current.validate()?;
    let d = current.dimension();
    let bounds = (search.lower.ln(), search.upper.ln());
    let objective = NegEvidence {
        data,
        base: current,
        bounds,
        warm: RefCell::new(None),
    };
    let start: Vec<f64> = objective.clamp(&current.lengthscales.iter().map(|l| l.ln()).collect::<Vec<_>>());
    let mut best: Option<(Vec<f64>, f64)> = objective.evidence(&start).map(|lm| (start.clone(), lm));
    let budget = search.base_iterations + search.per_dimension * d as u64;

    for restart in 0..search.restarts {
        let origin: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            (0..d).map(|_| rng.random_range(bounds.0..bounds.1)).collect()
        };
        let mut simplex = vec![origin.clone()];
        for k in 0..d {
            let mut p = origin.clone();
            p[k] += if p[k] + INITIAL_STEP <= bounds.1 {
                INITIAL_STEP
            } else {
                -INITIAL_STEP
            };
            simplex.push(p);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-6)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let run = Executor::new(&objective, solver)
            .configure(|s| s.max_iters(budget))
            .run();
        let Ok(res) = run else { continue };
        let Some(theta) = res.state().get_best_param().map(|p| p.to_vec()) else {
            continue;
        };
        let theta = objective.clamp(&theta);
        if let Some(lm) = objective.evidence(&theta) {
            if best.as_ref().is_none_or(|(_, b)| lm > *b) {
                best = Some((theta, lm));
            }
        }
    }

    Ok(match best {
        Some((theta, lm)) => HyperOutcome {
            config: objective.config(&theta),
            log_marginal: lm,
            failed: false,
        },
        None => HyperOutcome {
            config: current.clone(),
            log_marginal: f64::NEG_INFINITY,
            failed: true,
        },
    })
}
