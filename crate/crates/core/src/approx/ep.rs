//! Expectation propagation for `v ~ N(0, Σ_vv)` restricted to `v < 0`.
//!
//! One Gaussian site per duel approximates the indicator `1{v_i < 0}`; each
//! update matches the moments of a univariate truncated normal.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ApproxKind, GaussianPosterior};
use crate::duel::DuelDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{jittered_cholesky, DuelFactor, JointCovariance, KernelConfig};
use crate::normal::truncated_below_zero_moments;
use crate::predictive::{LatentPredictor, Reduction};
use crate::skew::{ConditionedGaussian, SkewPosterior};

/// Weight of the proposed site parameters in each damped update.
pub const DAMPING: f64 = 0.8;
pub const SITE_TOLERANCE: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpSiteState {
    /// Site precisions, all `≥ 0`.
    pub tau: Vec<f64>,
    /// Site precision-times-mean.
    pub nu: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Updates skipped because the cavity precision was not positive.
    pub skipped_updates: usize,
}

#[derive(Clone, Debug)]
pub struct EpFit {
    pub sites: EpSiteState,
    /// `q(v) = N(mean, cov)`.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `S = Σ − Σ S̃½ (I + S̃½ Σ S̃½)⁻¹ S̃½ Σ` and `μ = S ν̃`.
fn recompute(sigma: &DMatrix<f64>, tau: &[f64], nu: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let t = tau.len();
    let st = DVector::from_iterator(t, tau.iter().map(|x| x.sqrt()));
    let mut b = DMatrix::from_fn(t, t, |i, j| st[i] * sigma[(i, j)] * st[j]);
    for i in 0..t {
        b[(i, i)] += 1.0;
    }
    let (l, _) = jittered_cholesky(&b)?;
    let scaled = DMatrix::from_fn(t, t, |i, j| st[i] * sigma[(i, j)]);
    let v = l
        .l()
        .solve_lower_triangular(&scaled)
        .expect("triangular factor is nonsingular");
    let cov = sigma - v.transpose() * v;
    let mean = &cov * DVector::from_column_slice(nu);
    Ok((cov, mean))
}

pub fn ep_fit(sigma_vv: &DMatrix<f64>) -> Result<EpFit> {
    let t = sigma_vv.nrows();
    if !sigma_vv.is_square() {
        return Err(Error::InvalidParameter("Σ_vv must be square".into()));
    }
    jittered_cholesky(sigma_vv)?;
    let mut tau = vec![0.0; t];
    let mut nu = vec![0.0; t];
    let mut cov = sigma_vv.clone();
    let mut mean: DVector<f64> = DVector::zeros(t);
    let mut skipped = 0;
    let mut converged = t == 0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut change = 0.0f64;
        for i in 0..t {
            let s_ii = cov[(i, i)];
            let cav_tau = 1.0 / s_ii - tau[i];
            if !(cav_tau > 0.0) {
                skipped += 1;
                continue;
            }
            let cav_nu = mean[i] / s_ii - nu[i];
            let cav_mean = cav_nu / cav_tau;
            let (m_hat, v_hat) = truncated_below_zero_moments(cav_mean, cav_tau.recip().sqrt());
            let new_tau = (DAMPING * (1.0 / v_hat - cav_tau) + (1.0 - DAMPING) * tau[i]).max(0.0);
            let new_nu = DAMPING * (m_hat / v_hat - cav_nu) + (1.0 - DAMPING) * nu[i];
            change = change
                .max((new_tau - tau[i]).abs() / (1.0 + tau[i].abs()))
                .max((new_nu - nu[i]).abs() / (1.0 + nu[i].abs()));
            let d_tau: f64 = new_tau - tau[i];
            tau[i] = new_tau;
            nu[i] = new_nu;
            // Rank-one update of S, then μ = S ν̃.
            let si = cov.column(i).clone_owned();
            let denom = 1.0 + d_tau * si[i];
            cov.ger(-d_tau / denom, &si, &si, 1.0);
            mean = &cov * DVector::from_column_slice(&nu);
        }
        let (c, m) = recompute(sigma_vv, &tau, &nu)?;
        cov = c;
        mean = m;
        converged = change < SITE_TOLERANCE;
    }
    Ok(EpFit {
        sites: EpSiteState {
            tau,
            nu,
            converged,
            sweeps,
            skipped_updates: skipped,
        },
        mean,
        cov,
    })
}

/// Test-point moments under `q(v)`: mean `G m`, covariance `Σ_tes|v + G S Gᵀ`.
pub fn ep_predict(jc: &JointCovariance, fit: &EpFit) -> Result<ConditionedGaussian> {
    check_dim(jc.t(), fit.mean.len())?;
    let post = SkewPosterior::from_joint(jc)?;
    let g = post.gain();
    let mut cov = post.conditional_covariance() + g * &fit.cov * g.transpose();
    cov = 0.5 * (&cov + cov.transpose());
    Ok(ConditionedGaussian {
        mean: g * &fit.mean,
        cov,
    })
}

/// The EP posterior as a predictor at arbitrary inputs: weights `Λm`, `R = Λ − ΛSΛ`.
pub fn ep_predictor(
    data: &DuelDataset,
    cfg: &KernelConfig,
    factor: &Arc<DuelFactor>,
    fit: &EpFit,
) -> Result<GaussianPosterior> {
    check_dim(factor.t(), fit.mean.len())?;
    let lambda = &factor.precision;
    let weights = lambda * &fit.mean;
    let r = lambda - lambda * &fit.cov * lambda;
    let predictor = LatentPredictor::new(data.clone(), cfg.clone(), weights, Reduction::Dense(r))?;
    Ok(GaussianPosterior {
        kind: ApproxKind::Ep,
        predictor,
        log_marginal: None,
        converged: fit.sites.converged,
    })
}
