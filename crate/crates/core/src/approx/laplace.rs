//! Laplace approximation of the probit duel likelihood.
//!
//! Works on the noise-free gaps `u_i = f(w_i) − f(l_i)` with prior covariance
//! `C = Σ_vv − 2σ²I` and likelihood `Π Φ(c u_i)`, `c = 1/(√2 σ)`. Because the
//! likelihood depends on `f` only through `u`, the mode, the evidence and
//! the predictive moments coincide with the Laplace fit over the `2t` latent
//! values at the duel inputs.

use nalgebra::{DMatrix, DVector};

use super::{ApproxKind, GaussianPosterior};
use crate::duel::DuelDataset;
use crate::error::{Error, Result};
use crate::kernel::{duel_covariance, jittered_cholesky, KernelConfig};
use crate::normal;
use crate::predictive::{LatentPredictor, Reduction};

const MAX_NEWTON: usize = 100;
const OBJECTIVE_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug)]
pub struct LaplaceFit {
    /// Mode of the gaps `u`.
    pub mode: DVector<f64>,
    /// `C⁻¹ û`, the likelihood gradient at the mode.
    pub alpha: DVector<f64>,
    pub log_marginal: f64,
    pub iterations: usize,
    pub converged: bool,
    pub posterior: GaussianPosterior,
}

struct Newton<'a> {
    prior: &'a DMatrix<f64>,
    scale: f64,
}

struct Step {
    f: DVector<f64>,
    a: DVector<f64>,
    objective: f64,
}

impl Newton<'_> {
    fn log_lik(&self, f: &DVector<f64>) -> f64 {
        f.iter().map(|u| normal::log_cdf(self.scale * u)).sum()
    }

    fn objective(&self, a: &DVector<f64>, f: &DVector<f64>) -> f64 {
        -0.5 * a.dot(f) + self.log_lik(f)
    }

    /// Gradient and negative Hessian diagonal of the log likelihood.
    fn derivatives(&self, f: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let c = self.scale;
        let r = f.map(|u| normal::inv_mills(c * u));
        let grad = r.map(|r| c * r);
        let w = DVector::from_fn(f.len(), |i, _| {
            let z = c * f[i];
            (c * c * r[i] * (z + r[i])).max(0.0)
        });
        (grad, w)
    }

    fn b_factor(&self, sw: &DVector<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let n = sw.len();
        let mut b = DMatrix::from_fn(n, n, |i, j| sw[i] * self.prior[(i, j)] * sw[j]);
        for i in 0..n {
            b[(i, i)] += 1.0;
        }
        Ok(jittered_cholesky(&b)?.0)
    }

    fn run(&self, init: Option<&DVector<f64>>) -> Result<(Step, usize, bool)> {
        let t = self.prior.nrows();
        let mut a = match init {
            Some(f0) if f0.len() == t => match jittered_cholesky(self.prior) {
                Ok((chol, _)) => chol.solve(f0),
                Err(_) => DVector::zeros(t),
            },
            _ => DVector::zeros(t),
        };
        let mut f = self.prior * &a;
        let mut objective = self.objective(&a, &f);
        for it in 1..=MAX_NEWTON {
            let (grad, w) = self.derivatives(&f);
            let sw = w.map(f64::sqrt);
            let l = self.b_factor(&sw)?;
            let b = w.component_mul(&f) + &grad;
            let kb = self.prior * &b;
            let rhs = sw.component_mul(&kb);
            let solved = l.solve(&rhs);
            let a_new = &b - sw.component_mul(&solved);
            let dir = &a_new - &a;
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let a_try = &a + lambda * &dir;
                let f_try = self.prior * &a_try;
                let obj = self.objective(&a_try, &f_try);
                if obj.is_finite() && obj >= objective - 1e-12 * objective.abs() {
                    accepted = Some((a_try, f_try, obj));
                    break;
                }
                lambda *= 0.5;
            }
            let Some((a_next, f_next, obj)) = accepted else {
                return Ok((Step { f, a, objective }, it, false));
            };
            let gain = obj - objective;
            a = a_next;
            f = f_next;
            objective = obj;
            if gain.abs() < OBJECTIVE_TOL * (1.0 + objective.abs()) {
                return Ok((Step { f, a, objective }, it, true));
            }
        }
        Ok((Step { f, a, objective }, MAX_NEWTON, false))
    }
}

pub fn la_fit(data: &DuelDataset, cfg: &KernelConfig) -> Result<LaplaceFit> {
    la_fit_from(data, cfg, None)
}

/// Laplace fit, optionally warm-started from a previous gap mode.
pub fn la_fit_from(data: &DuelDataset, cfg: &KernelConfig, init: Option<&DVector<f64>>) -> Result<LaplaceFit> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("Laplace fit needs at least one duel".into()));
    }
    let t = data.len();
    let mut prior = duel_covariance(data, cfg)?;
    for i in 0..t {
        prior[(i, i)] -= 2.0 * cfg.noise_variance;
    }
    let newton = Newton {
        prior: &prior,
        scale: 1.0 / (2.0 * cfg.noise_variance).sqrt(),
    };
    let (step, iterations, converged) = newton.run(init)?;
    let (grad, w) = newton.derivatives(&step.f);
    let sw = w.map(f64::sqrt);
    let l = newton.b_factor(&sw)?;
    let log_det_half: f64 = l.l().diagonal().iter().map(|d| d.ln()).sum();
    let log_marginal = step.objective - log_det_half;

    // R = W½ B⁻¹ W½.
    let r = {
        let diag = DMatrix::from_diagonal(&sw);
        &diag * l.solve(&diag)
    };
    // Cov(f(x), u) = −s(x), so the mean weights flip sign.
    let predictor = LatentPredictor::new(data.clone(), cfg.clone(), -&grad, Reduction::Dense(r))?;
    Ok(LaplaceFit {
        mode: step.f,
        alpha: step.a,
        log_marginal,
        iterations,
        converged,
        posterior: GaussianPosterior {
            kind: ApproxKind::Laplace,
            predictor,
            log_marginal: Some(log_marginal),
            converged,
        },
    })
}
