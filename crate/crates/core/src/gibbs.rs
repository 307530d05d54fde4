//! Gibbs sampling of `v | v < 0` for a zero-mean Gaussian `v ~ N(0, Σ_vv)`.
//!
//! Each coordinate is redrawn from its full conditional
//! `N(v_j − [Λv]_j / Λ_jj, 1 / Λ_jj)` truncated above at zero, with
//! `Λ = Σ_vv⁻¹`. The product `Λv` is updated in O(t) per coordinate.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DuelFactor;
use crate::truncnorm;

/// Sweeps between exact recomputations of `Λv`, bounding rounding drift.
const REFRESH_PERIOD: usize = 64;

pub const DEFAULT_BURN_IN: usize = 1000;
pub const WARM_BURN_IN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub thinning: usize,
    pub n_samples: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            thinning: 1,
            n_samples: 1,
        }
    }
}

impl ChainConfig {
    pub fn new(burn_in: usize, thinning: usize, n_samples: usize) -> Result<Self> {
        let cfg = Self {
            burn_in,
            thinning,
            n_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thinning == 0 || self.n_samples == 0 {
            return Err(Error::InvalidParameter(
                "thinning and n_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.n_samples * self.thinning
    }
}

/// Draws of `v_t | v_t < 0`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct VSampleBatch {
    samples: DMatrix<f64>,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: Option<u64>,
}

impl VSampleBatch {
    /// Rejects any non-negative or non-finite entry.
    pub fn from_samples(samples: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|v| !(**v < 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "samples must lie in the negative orthant, found {bad}"
            )));
        }
        Ok(Self {
            samples,
            burn_in: 0,
            thinning: 1,
            seed: None,
        })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn t(&self) -> usize {
        self.samples.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }

    /// Rows `start..start + len` as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            samples: self.samples.rows(start, len).into_owned(),
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
        }
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        if self.n_samples() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(self.samples.row_mean().transpose())
    }

    /// Layout: `u64 n_samples`, `u64 t`, then row-major `f64`, all little-endian.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.n_samples() as u64).to_le_bytes())?;
        out.write_all(&(self.t() as u64).to_le_bytes())?;
        for i in 0..self.n_samples() {
            for j in 0..self.t() {
                out.write_all(&self.samples[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::MalformedDump(e.to_string());
        let mut word = [0u8; 8];
        input.read_exact(&mut word).map_err(io)?;
        let n = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word).map_err(io)?;
        let t = u64::from_le_bytes(word) as usize;
        let len = n
            .checked_mul(t)
            .ok_or_else(|| Error::MalformedDump("size overflow".into()))?;
        let mut values = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            input.read_exact(&mut word).map_err(io)?;
            values.push(f64::from_le_bytes(word));
        }
        if input.read(&mut word).map_err(io)? != 0 {
            return Err(Error::MalformedDump("trailing bytes".into()));
        }
        Self::from_samples(DMatrix::from_row_slice(n, t, &values)).map_err(|e| Error::MalformedDump(e.to_string()))
    }
}

/// Current point of a chain; extendable by one coordinate for warm starts.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub v: DVector<f64>,
}

/// `μ_j = v_j − [Λv]_j / Λ_jj`, the conditional mean of `v_j` given the rest.
pub fn conditional_mean(precision: &DMatrix<f64>, v: &DVector<f64>, j: usize) -> f64 {
    let lv = precision.row(j).dot(&v.transpose());
    v[j] - lv / precision[(j, j)]
}

pub struct GibbsSampler<'a> {
    factor: &'a DuelFactor,
    cond_sd: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(factor: &'a DuelFactor) -> Self {
        let cond_sd = (0..factor.t())
            .map(|j| factor.precision[(j, j)].recip().sqrt())
            .collect();
        Self { factor, cond_sd }
    }

    pub fn t(&self) -> usize {
        self.factor.t()
    }

    /// `v⁰ = −√diag(Σ_vv)`.
    pub fn initial_state(&self) -> ChainState {
        let v = DVector::from_iterator(self.t(), (0..self.t()).map(|i| -self.factor.sigma_vv[(i, i)].sqrt()));
        ChainState { v }
    }

    /// Adopts a previous chain state, padding new coordinates with the cold start.
    pub fn warm_state(&self, previous: &ChainState) -> Result<ChainState> {
        let k = previous.v.len();
        if k > self.t() {
            return Err(Error::DimensionMismatch {
                expected: self.t(),
                got: k,
            });
        }
        if previous.v.iter().any(|v| !(*v < 0.0)) {
            return Err(Error::InvalidParameter("warm start must be strictly negative".into()));
        }
        let mut state = self.initial_state();
        state.v.rows_mut(0, k).copy_from(&previous.v);
        Ok(state)
    }

    fn sweep<R: Rng + ?Sized>(&self, v: &mut DVector<f64>, lv: &mut DVector<f64>, rng: &mut R) {
        let lambda = &self.factor.precision;
        for j in 0..v.len() {
            let mean = v[j] - lv[j] / lambda[(j, j)];
            let new = truncnorm::draw(mean, self.cond_sd[j], rng);
            let delta = new - v[j];
            if delta != 0.0 {
                lv.axpy(delta, &lambda.column(j), 1.0);
                v[j] = new;
            }
        }
    }

    /// Runs `cfg.total_sweeps()` sweeps from `start` (cold start when `None`).
    pub fn run<R: Rng + ?Sized>(
        &self,
        cfg: &ChainConfig,
        start: Option<&ChainState>,
        rng: &mut R,
    ) -> Result<(VSampleBatch, ChainState)> {
        cfg.validate()?;
        let t = self.t();
        let mut state = match start {
            Some(s) => self.warm_state(s)?,
            None => self.initial_state(),
        };
        let mut samples = DMatrix::zeros(cfg.n_samples, t);
        if t > 0 {
            let lambda = &self.factor.precision;
            let mut lv = lambda * &state.v;
            let mut kept = 0;
            for sweep in 1..=cfg.total_sweeps() {
                self.sweep(&mut state.v, &mut lv, rng);
                if sweep % REFRESH_PERIOD == 0 {
                    lv = lambda * &state.v;
                }
                if sweep > cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thinning) {
                    samples.set_row(kept, &state.v.transpose());
                    kept += 1;
                }
            }
        }
        let batch = VSampleBatch {
            samples,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            seed: None,
        };
        Ok((batch, state))
    }
}

pub fn gibbs_chain<R: Rng + ?Sized>(sigma_vv: &DMatrix<f64>, cfg: &ChainConfig, rng: &mut R) -> Result<VSampleBatch> {
    cfg.validate()?;
    if sigma_vv.nrows() == 0 {
        return Ok(VSampleBatch {
            samples: DMatrix::zeros(cfg.n_samples, 0),
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            seed: None,
        });
    }
    let factor = DuelFactor::new(sigma_vv.clone())?;
    Ok(GibbsSampler::new(&factor).run(cfg, None, rng)?.0)
}

/// One draw `ṽ ~ p(v | v < 0)` plus the final chain state for the next warm start.
pub fn hallucination<R: Rng + ?Sized>(
    factor: &DuelFactor,
    burn_in: usize,
    warm_start: Option<&ChainState>,
    rng: &mut R,
) -> Result<(DVector<f64>, ChainState)> {
    let cfg = ChainConfig::new(burn_in, 1, 1)?;
    let (batch, state) = GibbsSampler::new(factor).run(&cfg, warm_start, rng)?;
    Ok((batch.row(0), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn equicorrelated(t: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(t, t, |i, j| if i == j { 1.0 } else { rho })
    }

    /// Rejection oracle: rows of `N(0, Σ)` with every entry negative.
    fn rejection(sigma: &DMatrix<f64>, accepted: usize, seed: u64) -> DMatrix<f64> {
        let t = sigma.nrows();
        let l = sigma.clone().cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(accepted * t);
        let mut n = 0;
        while n < accepted {
            let z = DVector::from_fn(t, |_, _| StandardNormal.sample(&mut rng));
            let v = &l * z;
            if v.iter().all(|x| *x < 0.0) {
                rows.extend(v.iter());
                n += 1;
            }
        }
        DMatrix::from_row_slice(accepted, t, &rows)
    }

    fn col_moments(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let n = m.nrows() as f64;
        (0..m.ncols())
            .map(|j| {
                let c = m.column(j);
                let mean = c.sum() / n;
                let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (mean, var)
            })
            .collect()
    }

    /// Lag autocorrelation of a single series.
    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum();
        cov / var
    }

    #[test]
    fn one_dimensional_half_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ChainConfig::new(100, 1, 10_000).unwrap();
        let batch = gibbs_chain(&DMatrix::from_element(1, 1, 1.0), &cfg, &mut rng).unwrap();
        let (m, _) = col_moments(batch.samples())[0];
        assert!((m + (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01, "{m}");
    }

    #[test]
    fn independent_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ChainConfig::new(100, 1, 20_000).unwrap();
        let batch = gibbs_chain(&DMatrix::identity(2, 2), &cfg, &mut rng).unwrap();
        for (m, v) in col_moments(batch.samples()) {
            assert!((m + (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02, "{m}");
            assert!((v - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 0.02, "{v}");
        }
    }

    #[test]
    fn matches_rejection_oracle() {
        let sigma = equicorrelated(3, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ChainConfig::new(1000, 10, 10_000).unwrap();
        let gibbs = col_moments(gibbs_chain(&sigma, &cfg, &mut rng).unwrap().samples());
        let oracle = col_moments(&rejection(&sigma, 100_000, 4));
        for ((gm, gv), (om, ov)) in gibbs.iter().zip(&oracle) {
            let se_m = (gv / 10_000.0 + ov / 100_000.0).sqrt();
            let se_v = (2.0 * gv * gv / 10_000.0 + 2.0 * ov * ov / 100_000.0).sqrt() * 1.5;
            assert!((gm - om).abs() < 4.0 * se_m, "mean {gm} vs {om}");
            assert!((gv - ov).abs() < 4.0 * se_v, "var {gv} vs {ov}");
        }
    }

    #[test]
    fn empty_dimension_gives_empty_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = gibbs_chain(&DMatrix::zeros(0, 0), &ChainConfig::default(), &mut rng).unwrap();
        assert_eq!((batch.n_samples(), batch.t()), (1, 0));
    }

    #[test]
    fn non_pd_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(gibbs_chain(&sigma, &ChainConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn hallucination_single_negative() {
        let factor = DuelFactor::new(DMatrix::from_element(1, 1, 0.7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (v, state) = hallucination(&factor, 50, None, &mut rng).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v[0] < 0.0);
        assert_eq!(state.v, v);
    }

    #[test]
    fn warm_and_cold_hallucinations_agree() {
        let sigma = equicorrelated(5, 0.4);
        let small = DuelFactor::new(sigma.view((0, 0), (4, 4)).into_owned()).unwrap();
        let factor = DuelFactor::new(sigma.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 4000;
        let mut cold = DMatrix::zeros(n, 5);
        let mut warm = DMatrix::zeros(n, 5);
        for i in 0..n {
            let (v, _) = hallucination(&factor, 200, None, &mut rng).unwrap();
            cold.set_row(i, &v.transpose());
            let (_, prev) = hallucination(&small, 200, None, &mut rng).unwrap();
            let (v, _) = hallucination(&factor, WARM_BURN_IN, Some(&prev), &mut rng).unwrap();
            warm.set_row(i, &v.transpose());
        }
        for ((cm, cv), (wm, wv)) in col_moments(&cold).iter().zip(col_moments(&warm).iter()) {
            let se = ((cv + wv) / n as f64).sqrt();
            assert!((cm - wm).abs() < 4.0 * se, "{cm} vs {wm}");
        }
    }

    #[test]
    fn warm_start_validation() {
        let factor = DuelFactor::new(DMatrix::identity(2, 2)).unwrap();
        let sampler = GibbsSampler::new(&factor);
        let too_long = ChainState {
            v: DVector::from_element(3, -1.0),
        };
        assert!(sampler.warm_state(&too_long).is_err());
        let positive = ChainState {
            v: DVector::from_element(1, 1.0),
        };
        assert!(sampler.warm_state(&positive).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ChainConfig::new(10, 1, 5).unwrap();
        let batch = gibbs_chain(&equicorrelated(3, 0.2), &cfg, &mut rng).unwrap();
        let mut buf = Vec::new();
        batch.dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 15);
        assert_eq!(&buf[..8], &5u64.to_le_bytes());
        let back = VSampleBatch::read(buf.as_slice()).unwrap();
        assert_eq!(back.samples(), batch.samples());
        assert!(VSampleBatch::read(&buf[..20]).is_err());
    }

    #[test]
    fn fast_mixing_on_duel_covariance() {
        use crate::duel::{Duel, DuelDataset};
        use crate::kernel::{duel_covariance, KernelConfig};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut data = DuelDataset::new(4).unwrap();
        for _ in 0..50 {
            let w = (0..4).map(|_| rng.random::<f64>()).collect();
            let l = (0..4).map(|_| rng.random::<f64>()).collect();
            data.push(Duel::new(w, l).unwrap()).unwrap();
        }
        let cfg = KernelConfig::isotropic(4, 0.3, 1e-4).unwrap();
        let sigma = duel_covariance(&data, &cfg).unwrap();
        let chain = ChainConfig::new(1000, 10, 2000).unwrap();
        let batch = gibbs_chain(&sigma, &chain, &mut rng).unwrap();
        for j in [0, 17, 49] {
            let series: Vec<f64> = batch.samples().column(j).iter().copied().collect();
            let decayed = (1..=10).any(|lag| autocorr(&series, lag) < 0.5);
            assert!(decayed, "coordinate {j} autocorrelation stays above 0.5");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn conditional_mean_is_a_fixed_point(seed in any::<u64>(), t in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(t, t, |_, _| rng.random::<f64>() - 0.5);
            let sigma = &a * a.transpose() + DMatrix::identity(t, t) * 0.5;
            let precision = sigma.clone().try_inverse().unwrap();
            let mut v = DVector::from_fn(t, |_, _| -rng.random::<f64>());
            let j = rng.random_range(0..t);
            let mu = conditional_mean(&precision, &v, j);
            v[j] = mu;
            prop_assert!((conditional_mean(&precision, &v, j) - mu).abs() < 1e-10);
            // Gaussian regression oracle from the covariance.
            let others: Vec<usize> = (0..t).filter(|&k| k != j).collect();
            let s_oo = DMatrix::from_fn(t - 1, t - 1, |a, b| sigma[(others[a], others[b])]);
            let s_jo = DVector::from_fn(t - 1, |a, _| sigma[(j, others[a])]);
            let v_o = DVector::from_fn(t - 1, |a, _| v[others[a]]);
            let oracle = s_jo.dot(&(s_oo.try_inverse().unwrap() * v_o));
            prop_assert!((oracle - mu).abs() < 1e-8);
        }

        #[test]
        fn samples_stay_negative(seed in any::<u64>(), t in 1usize..6, rho in -0.15..0.9f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = ChainConfig::new(5, 2, 20).unwrap();
            let batch = gibbs_chain(&equicorrelated(t, rho), &cfg, &mut rng).unwrap();
            prop_assert!(batch.samples().iter().all(|v| *v < 0.0));
            prop_assert_eq!(batch.n_samples(), 20);
        }
    }
}
