//! Exact skew-GP posterior statistics from Gibbs draws of `v | v < 0`.
//!
//! Conditioning on a draw `v` collapses the posterior over test values to a
//! Gaussian with mean `G v` (`G = Σ_tes,v Σ_vv⁻¹`) and covariance
//! `Σ_tes|v = Σ_tes,tes − G Σ_tes,vᵀ`, which does not depend on `v`. Every
//! statistic below averages closed-form Gaussian quantities over the draws
//! instead of averaging raw sample paths.
//!
//! Standard errors of nonlinear statistics treat the draws as independent.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::duel::DuelDataset;
use crate::error::{check_dim, Error, Result};
use crate::gibbs::VSampleBatch;
use crate::kernel::{cross_covariance, duel_covariance, jittered_cholesky, DuelFactor, JointCovariance, KernelConfig};
use crate::normal;

/// Conditional variances at or below this are treated as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;
pub const QUANTILE_TOLERANCE: f64 = 1e-3;
pub const MAX_BISECTION_STEPS: usize = 100;
const MAX_BRACKET_EXPANSIONS: usize = 64;
const MODE_GRID: usize = 256;
const KDE_BINS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEstimate {
    pub value: f64,
    pub mc_std_error: f64,
    pub n_samples: usize,
    /// Set when a zero conditional variance forced a step-function fallback.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub value: f64,
    /// Estimated CDF at `value`.
    pub cdf: f64,
    pub steps: usize,
    pub converged: bool,
    pub bracket_expanded: bool,
}

/// Gaussian moments of test values given one `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug)]
enum PriorBlock {
    Dense(DMatrix<f64>),
    Kernel { points: Vec<Vec<f64>>, cfg: KernelConfig },
}

impl PriorBlock {
    fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            Self::Dense(m) => m[(i, j)],
            Self::Kernel { points, cfg } => cfg.eval(&points[i], &points[j]),
        }
    }
}

/// Posterior over a fixed set of `m` test points given `t` duels.
#[derive(Debug)]
pub struct SkewPosterior {
    prior: PriorBlock,
    sigma_tes_v: DMatrix<f64>,
    gain: DMatrix<f64>,
    cond_var: DVector<f64>,
    root: OnceLock<DMatrix<f64>>,
}

impl SkewPosterior {
    pub fn from_joint(jc: &JointCovariance) -> Result<Self> {
        let factor = if jc.t() == 0 {
            None
        } else {
            Some(DuelFactor::new(jc.sigma_vv.clone())?)
        };
        Ok(Self::assemble(
            PriorBlock::Dense(jc.sigma_tes_tes.clone()),
            jc.sigma_tes_v.clone(),
            factor.as_ref(),
        ))
    }

    /// Builds only the blocks the estimators touch; the `m × m` prior is never stored.
    pub fn from_points(
        points: Vec<Vec<f64>>,
        data: &DuelDataset,
        cfg: &KernelConfig,
        factor: Option<&Arc<DuelFactor>>,
    ) -> Result<Self> {
        for p in &points {
            check_dim(data.dimension(), p.len())?;
        }
        check_dim(cfg.dimension(), data.dimension())?;
        let owned;
        let factor: Option<&DuelFactor> = match factor {
            Some(f) => {
                check_dim(data.len(), f.t())?;
                Some(f.as_ref())
            }
            None if data.is_empty() => None,
            None => {
                owned = DuelFactor::new(duel_covariance(data, cfg)?)?;
                Some(&owned)
            }
        };
        let mut sigma_tes_v = DMatrix::zeros(points.len(), data.len());
        for (i, x) in points.iter().enumerate() {
            sigma_tes_v.set_row(i, &cross_covariance(x, data, cfg).transpose());
        }
        let prior = PriorBlock::Kernel {
            points,
            cfg: cfg.clone(),
        };
        Ok(Self::assemble(prior, sigma_tes_v, factor))
    }

    fn assemble(prior: PriorBlock, sigma_tes_v: DMatrix<f64>, factor: Option<&DuelFactor>) -> Self {
        let (m, t) = sigma_tes_v.shape();
        let gain = match factor {
            Some(f) => f.chol.solve(&sigma_tes_v.transpose()).transpose(),
            None => DMatrix::zeros(m, t),
        };
        let cond_var = DVector::from_fn(m, |i, _| {
            (prior.entry(i, i) - gain.row(i).dot(&sigma_tes_v.row(i))).max(0.0)
        });
        Self {
            prior,
            sigma_tes_v,
            gain,
            cond_var,
            root: OnceLock::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.gain.nrows()
    }

    pub fn t(&self) -> usize {
        self.gain.ncols()
    }

    /// `Σ_tes,v Σ_vv⁻¹`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn conditional_variance(&self, i: usize) -> f64 {
        self.cond_var[i]
    }

    pub fn conditional_covariance_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.cond_var[i];
        }
        self.prior.entry(i, j) - self.gain.row(i).dot(&self.sigma_tes_v.row(j))
    }

    /// `Σ_tes|v` restricted to `indices`.
    pub fn conditional_covariance_of(&self, indices: &[usize]) -> DMatrix<f64> {
        let n = indices.len();
        let mut c = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..=a {
                let v = self.conditional_covariance_entry(indices[a], indices[b]);
                c[(a, b)] = v;
                c[(b, a)] = v;
            }
        }
        c
    }

    pub fn conditional_covariance(&self) -> DMatrix<f64> {
        self.conditional_covariance_of(&(0..self.m()).collect::<Vec<_>>())
    }

    pub fn condition(&self, v: &DVector<f64>) -> Result<ConditionedGaussian> {
        check_dim(self.t(), v.len())?;
        Ok(ConditionedGaussian {
            mean: &self.gain * v,
            cov: self.conditional_covariance(),
        })
    }

    fn check_batch(&self, batch: &VSampleBatch) -> Result<()> {
        check_dim(self.t(), batch.t())?;
        if batch.n_samples() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(())
    }

    /// Per-draw conditional means for all test points.
    pub fn condition_batch(&self, batch: &VSampleBatch) -> Result<ConditionedBatch<'_>> {
        self.check_batch(batch)?;
        let means = batch.samples() * self.gain.transpose();
        Ok(ConditionedBatch { post: self, means })
    }

    fn root(&self) -> &DMatrix<f64> {
        self.root
            .get_or_init(|| covariance_root(&self.conditional_covariance()))
    }

    /// One joint draw of the test values given `v`.
    pub fn sample_path_values<R: Rng + ?Sized>(&self, v: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        check_dim(self.t(), v.len())?;
        let z = DVector::from_fn(self.m(), |_, _| StandardNormal.sample(rng));
        Ok(&self.gain * v + self.root() * z)
    }

    /// One sample path per draw in `batch`, as rows of an `M × m` matrix.
    pub fn full_mc_paths<R: Rng + ?Sized>(&self, batch: &VSampleBatch, rng: &mut R) -> Result<DMatrix<f64>> {
        self.check_batch(batch)?;
        let m = self.m();
        let n = batch.n_samples();
        let z = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng));
        let paths = &self.gain * batch.samples().transpose() + self.root() * z;
        Ok(paths.transpose())
    }
}

/// Lower-triangular root when `cov` factors with jitter, otherwise a clipped eigen root.
pub fn covariance_root(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    if let Ok((chol, _)) = jittered_cholesky(cov) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut root = eig.eigenvectors;
    for (j, s) in scale.iter().enumerate() {
        root.column_mut(j).scale_mut(*s);
    }
    root
}

pub fn condition_on_v(jc: &JointCovariance, v: &DVector<f64>) -> Result<ConditionedGaussian> {
    SkewPosterior::from_joint(jc)?.condition(v)
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    (mean, se, n)
}

fn estimate(values: impl Iterator<Item = f64> + Clone, degenerate: bool) -> PosteriorEstimate {
    let (value, mc_std_error, n_samples) = mean_and_se(values);
    PosteriorEstimate {
        value,
        mc_std_error,
        n_samples,
        degenerate,
    }
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// A batch of draws pushed through the conditioning map of one [`SkewPosterior`].
pub struct ConditionedBatch<'a> {
    post: &'a SkewPosterior,
    /// `M × m`; row `k` is `(G v_k)ᵀ`, so each point's draws are contiguous.
    means: DMatrix<f64>,
}

impl<'a> ConditionedBatch<'a> {
    pub fn posterior(&self) -> &'a SkewPosterior {
        self.post
    }

    pub fn n_samples(&self) -> usize {
        self.means.nrows()
    }

    pub fn m(&self) -> usize {
        self.means.ncols()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i < self.m() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.m(),
            })
        }
    }

    /// Conditional means of point `i`, one per draw.
    pub fn sample_means(&self, i: usize) -> std::iter::Copied<std::slice::Iter<'_, f64>> {
        let n = self.n_samples();
        self.means.as_slice()[i * n..(i + 1) * n].iter().copied()
    }

    pub fn sample_mean(&self, i: usize, k: usize) -> f64 {
        self.means[(k, i)]
    }

    pub fn mean(&self, i: usize) -> Result<PosteriorEstimate> {
        self.check(i)?;
        Ok(estimate(self.sample_means(i), false))
    }

    pub fn means(&self) -> Vec<PosteriorEstimate> {
        (0..self.m()).map(|i| estimate(self.sample_means(i), false)).collect()
    }

    /// Total variance `V[μ_i] + Σ_ii|v`.
    pub fn variance(&self, i: usize) -> Result<PosteriorEstimate> {
        self.check(i)?;
        let n = self.n_samples();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let (mean, _, _) = mean_and_se(self.sample_means(i));
        let sq = self.sample_means(i).map(|x| (x - mean).powi(2));
        let (raw, se, _) = mean_and_se(sq);
        let unbiased = raw * n as f64 / (n - 1) as f64;
        Ok(PosteriorEstimate {
            value: unbiased + self.post.cond_var[i],
            mc_std_error: se,
            n_samples: n,
            degenerate: false,
        })
    }

    pub fn variances(&self) -> Result<Vec<PosteriorEstimate>> {
        (0..self.m()).map(|i| self.variance(i)).collect()
    }

    /// `Pr(f_i ≤ c)`.
    pub fn cdf(&self, i: usize, c: f64) -> Result<PosteriorEstimate> {
        self.check(i)?;
        Ok(self.cdf_unchecked(i, c))
    }

    fn cdf_unchecked(&self, i: usize, c: f64) -> PosteriorEstimate {
        let var = self.post.cond_var[i];
        if var <= DEGENERATE_VARIANCE {
            let terms = self.sample_means(i).map(move |mu| if c >= mu { 1.0 } else { 0.0 });
            return estimate(terms, true);
        }
        let sd = var.sqrt();
        estimate(self.sample_means(i).map(move |mu| normal::cdf((c - mu) / sd)), false)
    }

    fn cdf_value(&self, i: usize, c: f64) -> f64 {
        self.cdf_unchecked(i, c).value
    }

    /// `Pr(f_i ≤ f_j)`; the two orderings of a pair sum to one.
    pub fn duel_probability(&self, i: usize, j: usize) -> Result<PosteriorEstimate> {
        self.check(i)?;
        self.check(j)?;
        if i == j {
            return Err(Error::InvalidParameter("duel probability needs i ≠ j".into()));
        }
        let (a, b) = (i.min(j), i.max(j));
        let p = self.ordered_probability(a, b);
        Ok(if i == a {
            p
        } else {
            PosteriorEstimate {
                value: 1.0 - p.value,
                ..p
            }
        })
    }

    fn ordered_probability(&self, a: usize, b: usize) -> PosteriorEstimate {
        let denom = self.post.cond_var[a] + self.post.cond_var[b] - 2.0 * self.post.conditional_covariance_entry(a, b);
        let diffs = self.sample_means(b).zip(self.sample_means(a)).map(|(mb, ma)| mb - ma);
        if denom <= DEGENERATE_VARIANCE {
            return estimate(diffs.map(step), true);
        }
        let s = denom.sqrt();
        estimate(diffs.map(move |d| normal::cdf(d / s)), false)
    }

    /// Bisection for `γ` with `|F̂_i(γ) − α| ≤ tol`, bracketed by the per-draw Gaussian quantiles.
    pub fn quantile(&self, i: usize, alpha: f64, tol: f64) -> Result<Quantile> {
        self.check(i)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        let shift = normal::ppf(alpha) * self.post.cond_var[i].sqrt();
        let (mut lo, mut hi) = self
            .sample_means(i)
            .map(|mu| mu + shift)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), q| (l.min(q), h.max(q)));
        let mut expanded = false;
        let mut width = (hi - lo).max(1e-6 * (1.0 + lo.abs().max(hi.abs())));
        for _ in 0..MAX_BRACKET_EXPANSIONS {
            if self.cdf_value(i, lo) <= alpha + tol {
                break;
            }
            lo -= width;
            width *= 2.0;
            expanded = true;
        }
        let mut width = (hi - lo).max(1e-6);
        for _ in 0..MAX_BRACKET_EXPANSIONS {
            if self.cdf_value(i, hi) >= alpha - tol {
                break;
            }
            hi += width;
            width *= 2.0;
            expanded = true;
        }
        let done = |gamma: f64, f: f64, steps: usize, converged: bool| Quantile {
            value: gamma,
            cdf: f,
            steps,
            converged,
            bracket_expanded: expanded,
        };
        for (gamma, f) in [(lo, self.cdf_value(i, lo)), (hi, self.cdf_value(i, hi))] {
            if (f - alpha).abs() <= tol {
                return Ok(done(gamma, f, 0, true));
            }
        }
        let mut mid = 0.5 * (lo + hi);
        let mut f = self.cdf_value(i, mid);
        for step in 1..=MAX_BISECTION_STEPS {
            if (f - alpha).abs() <= tol {
                return Ok(done(mid, f, step, true));
            }
            if f < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
            mid = 0.5 * (lo + hi);
            f = self.cdf_value(i, mid);
        }
        Ok(done(mid, f, MAX_BISECTION_STEPS, (f - alpha).abs() <= tol))
    }

    /// Maximizer of the Gaussian-mixture posterior density of `f_i`.
    pub fn mode(&self, i: usize) -> Result<f64> {
        self.check(i)?;
        let var = self.post.cond_var[i];
        let mus: Vec<f64> = self.sample_means(i).collect();
        if var <= DEGENERATE_VARIANCE {
            return Ok(kde_mode(&mus));
        }
        let density = |x: f64| -> f64 { mus.iter().map(|mu| (-(x - mu) * (x - mu) / (2.0 * var)).exp()).sum() };
        Ok(grid_then_golden(&mus, density))
    }
}

fn grid_then_golden(values: &[f64], density: impl Fn(f64) -> f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return lo;
    }
    let h = (hi - lo) / (MODE_GRID - 1) as f64;
    let best = (0..MODE_GRID)
        .map(|k| lo + h * k as f64)
        .map(|x| (x, density(x)))
        .fold((lo, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
        .0;
    golden_max(&density, (best - h).max(lo), (best + h).min(hi))
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Maximizer of a Gaussian kernel density estimate (Silverman bandwidth, linear binning).
pub fn kde_mode(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let (mean, se, _) = mean_and_se(values.iter().copied());
    let sd = se * (n as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
    let spread = sd.min((q(0.75) - q(0.25)) / 1.34);
    let spread = if spread > 0.0 { spread } else { sd };
    if !(spread > 0.0) {
        return mean;
    }
    let bw = 0.9 * spread * (n as f64).powf(-0.2);
    let lo = sorted[0] - 3.0 * bw;
    let hi = sorted[n - 1] + 3.0 * bw;
    let h = (hi - lo) / (KDE_BINS - 1) as f64;
    let mut counts = vec![0.0; KDE_BINS];
    for &x in values {
        let pos = (x - lo) / h;
        let k = (pos.floor() as usize).min(KDE_BINS - 2);
        let frac = pos - k as f64;
        counts[k] += 1.0 - frac;
        counts[k + 1] += frac;
    }
    let reach = ((4.0 * bw / h).ceil() as usize).max(1);
    let weights: Vec<f64> = (0..=reach)
        .map(|d| (-0.5 * (d as f64 * h / bw).powi(2)).exp())
        .collect();
    let smoothed = |k: usize| -> f64 {
        let from = k.saturating_sub(reach);
        let to = (k + reach).min(KDE_BINS - 1);
        (from..=to).map(|j| counts[j] * weights[k.abs_diff(j)]).sum()
    };
    let best = (0..KDE_BINS)
        .map(|k| (k, smoothed(k)))
        .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
        .0;
    lo + h * best as f64
}

/// Raw sample-path estimators over an `M × m` matrix of paths.
pub mod full_mc {
    use super::*;

    pub fn mean(paths: &DMatrix<f64>, i: usize) -> PosteriorEstimate {
        estimate(paths.column(i).iter().copied(), false)
    }

    pub fn variance(paths: &DMatrix<f64>, i: usize) -> PosteriorEstimate {
        let n = paths.nrows();
        let (m, _, _) = mean_and_se(paths.column(i).iter().copied());
        let (raw, se, _) = mean_and_se(paths.column(i).iter().map(|x| (x - m).powi(2)));
        PosteriorEstimate {
            value: raw * n as f64 / (n.max(2) - 1) as f64,
            mc_std_error: se,
            n_samples: n,
            degenerate: false,
        }
    }

    pub fn cdf(paths: &DMatrix<f64>, i: usize, c: f64) -> PosteriorEstimate {
        estimate(paths.column(i).iter().map(|x| if *x <= c { 1.0 } else { 0.0 }), false)
    }

    /// Fraction of paths with `f_i ≤ f_j`.
    pub fn duel_probability(paths: &DMatrix<f64>, i: usize, j: usize) -> PosteriorEstimate {
        let rows = (0..paths.nrows()).map(|k| if paths[(k, i)] <= paths[(k, j)] { 1.0 } else { 0.0 });
        estimate(rows, false)
    }

    pub fn mode(paths: &DMatrix<f64>, i: usize) -> f64 {
        kde_mode(paths.column(i).as_slice())
    }
}
