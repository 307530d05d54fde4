//! Acquisition functions and the inner maximizer.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::predictive::PairMoments;
use crate::skew::{ConditionedBatch, SkewPosterior, QUANTILE_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    HbEi,
    HbUcb,
    DuelTs,
    DuelUcb,
    Eiig,
    EpEi,
    EpMuc,
    LaEi,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 8] = [
        Self::HbEi,
        Self::HbUcb,
        Self::DuelTs,
        Self::DuelUcb,
        Self::Eiig,
        Self::EpEi,
        Self::EpMuc,
        Self::LaEi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HbEi => "hb_ei",
            Self::HbUcb => "hb_ucb",
            Self::DuelTs => "duel_ts",
            Self::DuelUcb => "duel_ucb",
            Self::Eiig => "eiig",
            Self::EpEi => "ep_ei",
            Self::EpMuc => "ep_muc",
            Self::LaEi => "la_ei",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownAcquisition(s.to_owned()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub ucb_beta_sqrt: f64,
    pub duel_ucb_alpha: f64,
    pub eiig_weight: f64,
    pub mc_samples: usize,
    /// Quasi-random candidates; `None` means `512·d` capped at 4096.
    pub candidate_count: Option<usize>,
    /// Upper bound on the joint path size drawn by Thompson sampling.
    pub thompson_candidates: usize,
    pub restarts: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            ucb_beta_sqrt: 2.0,
            duel_ucb_alpha: 0.975,
            eiig_weight: 1.0,
            mc_samples: 1000,
            candidate_count: None,
            thompson_candidates: 1024,
            restarts: 5,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_owned()));
        if !(self.ucb_beta_sqrt >= 0.0) {
            return bad("ucb_beta_sqrt must be non-negative");
        }
        if !(self.duel_ucb_alpha > 0.0 && self.duel_ucb_alpha < 1.0) {
            return bad("duel_ucb_alpha must lie in (0, 1)");
        }
        if !(self.eiig_weight >= 0.0) {
            return bad("eiig_weight must be non-negative");
        }
        if self.mc_samples < 2 || self.candidate_count == Some(0) || self.thompson_candidates == 0 {
            return bad("sample and candidate counts must be positive (mc_samples ≥ 2)");
        }
        Ok(())
    }

    pub fn candidates(&self, dimension: usize) -> usize {
        self.candidate_count.unwrap_or((512 * dimension).min(4096))
    }
}

/// Expected improvement over `incumbent`; `max(μ − ξ, 0)` at `σ = 0`.
pub fn ei(mean: f64, sd: f64, incumbent: f64) -> f64 {
    let gap = mean - incumbent;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal::cdf(z) + sd * normal::pdf(z)).max(0.0)
}

pub fn ucb(mean: f64, sd: f64, beta_sqrt: f64) -> f64 {
    mean + beta_sqrt * sd
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    h(p) + h(1.0 - p)
}

/// `p(1 − p)` for the probability that `x` beats `x1`, with the duel noise in the denominator.
pub fn ep_muc_score(pair: &PairMoments, noise_variance: f64) -> f64 {
    let var = (pair.var[0] + pair.var[1] - 2.0 * pair.cov).max(0.0) + 2.0 * noise_variance;
    let p = normal::cdf((pair.mean[1] - pair.mean[0]) / var.sqrt());
    p * (1.0 - p)
}

/// Argmax of one joint path over the candidates of `post`; ties go to the lowest index.
pub fn duel_ts_select<R: Rng + ?Sized>(post: &SkewPosterior, v: &DVector<f64>, rng: &mut R) -> Result<usize> {
    if post.m() == 0 {
        return Err(Error::EmptyCandidates);
    }
    let path = post.sample_path_values(v, rng)?;
    Ok(argmax(path.iter().copied()))
}

/// Upper `alpha`-quantile of the skew posterior at candidate `i`.
pub fn duel_ucb_score(cb: &ConditionedBatch<'_>, i: usize, alpha: f64) -> Result<f64> {
    Ok(cb.quantile(i, alpha, QUANTILE_TOLERANCE)?.value)
}

/// Mean per-draw EI against the conditional mean at `x1`, plus `weight` times the duel entropy.
pub fn eiig_score(cb: &ConditionedBatch<'_>, i: usize, x1: usize, weight: f64) -> Result<f64> {
    if i == x1 {
        return Err(Error::InvalidParameter("EIIG candidate coincides with x1".into()));
    }
    let p = cb.duel_probability(i, x1)?.value;
    let sd = cb.posterior().conditional_variance(i).sqrt();
    let n = cb.n_samples() as f64;
    let ei_term = cb
        .sample_means(i)
        .zip(cb.sample_means(x1))
        .map(|(mu, inc)| ei(mu, sd, inc))
        .sum::<f64>()
        / n;
    Ok(ei_term + weight * binary_entropy(p))
}

/// Index of the largest value; NaN never wins and ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

const PRIMES: [u32; 20] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * inv;
        i /= b;
        inv /= base as f64;
    }
    out
}

/// `count` Halton points in the box, rotated by one random shift per coordinate.
pub fn candidate_set<R: Rng + ?Sized>(bounds: &[(f64, f64)], count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = bounds.iter().map(|_| rng.random()).collect();
    (1..=count as u64)
        .map(|i| {
            bounds
                .iter()
                .enumerate()
                .map(|(k, (lo, hi))| {
                    let base = PRIMES[k % PRIMES.len()];
                    let u = (radical_inverse(i, base) + shift[k]).fract();
                    lo + (hi - lo) * u
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaximizerConfig {
    pub candidates: usize,
    pub restarts: usize,
    /// Smallest pattern step relative to the box width.
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl MaximizerConfig {
    pub fn from_acquisition(cfg: &AcquisitionConfig, dimension: usize) -> Self {
        Self {
            candidates: cfg.candidates(dimension),
            restarts: cfg.restarts,
            min_step: 1e-4,
            max_evaluations: 200 * dimension,
        }
    }
}

/// Best quasi-random candidate, refined by coordinate pattern search from the top `restarts`.
pub fn maximize_acquisition<R: Rng + ?Sized>(
    score: impl Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    cfg: &MaximizerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidParameter("maximizer needs a non-empty box".into()));
    }
    let cands = candidate_set(bounds, cfg.candidates.max(1), rng);
    let scores: Vec<f64> = cands.iter().map(|x| score(x)).collect();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| nan_low(scores[b]).total_cmp(&nan_low(scores[a])));
    let mut best = (cands[order[0]].clone(), nan_low(scores[order[0]]));
    for &start in order.iter().take(cfg.restarts) {
        let (x, s) = pattern_search(&score, bounds, cands[start].clone(), nan_low(scores[start]), cfg);
        if s > best.1 {
            best = (x, s);
        }
    }
    Ok(best.0)
}

fn nan_low(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn pattern_search(
    score: &impl Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    mut x: Vec<f64>,
    mut fx: f64,
    cfg: &MaximizerConfig,
) -> (Vec<f64>, f64) {
    let mut step = 0.1;
    let mut evals = 0;
    while step >= cfg.min_step && evals < cfg.max_evaluations {
        let mut moved = false;
        for k in 0..x.len() {
            let (lo, hi) = bounds[k];
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step * (hi - lo)).clamp(lo, hi);
                if y[k] == x[k] {
                    continue;
                }
                let fy = nan_low(score(&y));
                evals += 1;
                if fy > fx {
                    x = y;
                    fx = fy;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (x, fx)
}
