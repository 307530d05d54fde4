//! Exact sampling from a univariate normal truncated above at zero.
//!
//! Two regimes on the standardized bound `β = −μ/σ`:
//! plain normal rejection when `β ≥ NORMAL_REJECTION_MIN_BOUND`, otherwise a
//! translated-exponential proposal on `u = −z > −β` with the optimal rate.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Plain rejection accepts with probability `Φ(β) ≥ 0.68` above this bound.
pub const NORMAL_REJECTION_MIN_BOUND: f64 = 0.47;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormalParams {
    mean: f64,
    sd: f64,
}

impl TruncatedNormalParams {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!("mean must be finite, got {mean}")));
        }
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("sd must be positive, got {sd}")));
        }
        Ok(Self { mean, sd })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }
}

pub fn sample_tn_below_zero<R: Rng + ?Sized>(p: TruncatedNormalParams, rng: &mut R) -> f64 {
    sample_counted(p.mean, p.sd, rng).0
}

/// Draw plus the number of proposals it consumed.
pub fn sample_tn_below_zero_counted<R: Rng + ?Sized>(p: TruncatedNormalParams, rng: &mut R) -> (f64, u64) {
    sample_counted(p.mean, p.sd, rng)
}

/// Unchecked fast path for the Gibbs sweep; requires `sd > 0` and finite `mean`.
#[inline]
pub(crate) fn draw<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    sample_counted(mean, sd, rng).0
}

fn sample_counted<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> (f64, u64) {
    let beta = -mean / sd;
    let mut proposals = 0u64;
    loop {
        proposals += 1;
        let z = if beta >= NORMAL_REJECTION_MIN_BOUND {
            let z: f64 = StandardNormal.sample(rng);
            if z >= beta {
                continue;
            }
            z
        } else {
            let a = -beta;
            let rate = 0.5 * (a + (a * a + 4.0).sqrt());
            let e: f64 = Exp1.sample(rng);
            let u = a + e / rate;
            let accept = (-0.5 * (u - rate) * (u - rate)).exp();
            if rng.random::<f64>() > accept {
                continue;
            }
            -u
        };
        let v = mean + sd * z;
        if v < 0.0 {
            return (v, proposals);
        }
    }
}
