//! Gaussian predictions of `f(x)` that are linear in the duel cross-covariance
//! `s(x) = Σ_{x,v}`: mean `s(x)ᵀ w` and variance `k(x, x) − s(x)ᵀ R s(x)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::duel::DuelDataset;
use crate::error::{check_dim, Result};
use crate::kernel::{cross_covariance, DuelFactor, KernelConfig};

#[derive(Clone, Debug)]
pub enum Reduction {
    /// `R = Σ_vv⁻¹`, applied through the factor.
    Precision(Arc<DuelFactor>),
    Dense(DMatrix<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMoments {
    pub mean: [f64; 2],
    pub var: [f64; 2],
    pub cov: f64,
}

#[derive(Clone, Debug)]
pub struct LatentPredictor {
    data: DuelDataset,
    cfg: KernelConfig,
    weights: DVector<f64>,
    reduction: Reduction,
}

impl LatentPredictor {
    pub fn new(data: DuelDataset, cfg: KernelConfig, weights: DVector<f64>, reduction: Reduction) -> Result<Self> {
        check_dim(cfg.dimension(), data.dimension())?;
        check_dim(data.len(), weights.len())?;
        match &reduction {
            Reduction::Precision(f) => check_dim(data.len(), f.t())?,
            Reduction::Dense(r) => {
                check_dim(data.len(), r.nrows())?;
                check_dim(data.len(), r.ncols())?;
            }
        }
        Ok(Self {
            data,
            cfg,
            weights,
            reduction,
        })
    }

    /// The Gaussian process `f | v` for one fixed `v`.
    pub fn conditioned_on(
        data: DuelDataset,
        cfg: KernelConfig,
        factor: Arc<DuelFactor>,
        v: &DVector<f64>,
    ) -> Result<Self> {
        check_dim(factor.t(), v.len())?;
        let weights = factor.chol.solve(v);
        Self::new(data, cfg, weights, Reduction::Precision(factor))
    }

    /// The prior process, used before any duel is recorded.
    pub fn prior(dimension: usize, cfg: KernelConfig) -> Result<Self> {
        Self::new(
            DuelDataset::new(dimension)?,
            cfg,
            DVector::zeros(0),
            Reduction::Dense(DMatrix::zeros(0, 0)),
        )
    }

    pub fn dimension(&self) -> usize {
        self.data.dimension()
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.cfg
    }

    fn reduce(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        if a.is_empty() {
            return 0.0;
        }
        match &self.reduction {
            Reduction::Precision(f) => a.dot(&f.chol.solve(b)),
            Reduction::Dense(r) => a.dot(&(r * b)),
        }
    }

    /// `(mean, variance)` of `f(x)`; the variance is clamped at zero.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dimension(), x.len())?;
        let s = cross_covariance(x, &self.data, &self.cfg);
        let mean = s.dot(&self.weights);
        let var = self.cfg.eval(x, x) - self.reduce(&s, &s);
        Ok((mean, var.max(0.0)))
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dimension(), x.len())?;
        Ok(cross_covariance(x, &self.data, &self.cfg).dot(&self.weights))
    }

    pub fn predict_pair(&self, x1: &[f64], x2: &[f64]) -> Result<PairMoments> {
        check_dim(self.dimension(), x1.len())?;
        check_dim(self.dimension(), x2.len())?;
        let s1 = cross_covariance(x1, &self.data, &self.cfg);
        let s2 = cross_covariance(x2, &self.data, &self.cfg);
        let v1 = self.cfg.eval(x1, x1) - self.reduce(&s1, &s1);
        let v2 = self.cfg.eval(x2, x2) - self.reduce(&s2, &s2);
        let c = self.cfg.eval(x1, x2) - self.reduce(&s1, &s2);
        Ok(PairMoments {
            mean: [s1.dot(&self.weights), s2.dot(&self.weights)],
            var: [v1.max(0.0), v2.max(0.0)],
            cov: c,
        })
    }

    /// Index of the largest predictive mean; ties go to the lowest index.
    pub fn argmax_mean(&self, points: &[Vec<f64>]) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, x) in points.iter().enumerate() {
            let m = self.predict_mean(x)?;
            if m > best.1 {
                best = (i, m);
            }
        }
        Ok(best.0)
    }
}
