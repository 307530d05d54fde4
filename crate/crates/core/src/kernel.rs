//! RBF-ARD kernel and the joint prior covariance of test values and duel latents.
//!
//! For test outputs `f_tes` and duel latents `v_i = f(l_i) + ε_l − f(w_i) − ε_w`
//! the joint prior is `N(0, Σ)` with `Σ = A (K + B) Aᵀ`. The blocks are
//! assembled directly from kernel evaluations; `A` is never materialized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::duel::DuelDataset;
use crate::error::{check_dim, Error, Result};

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelConfig {
    /// Signal variance is fixed at 1.
    pub fn new(lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let cfg = Self {
            lengthscales,
            signal_variance: 1.0,
            noise_variance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn isotropic(dimension: usize, lengthscale: f64, noise_variance: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dimension], noise_variance)
    }

    pub fn dimension(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::InvalidParameter(format!(
                "lengthscales must be positive and finite: {:?}",
                self.lengthscales
            )));
        }
        if !ok(self.signal_variance) || !ok(self.noise_variance) {
            return Err(Error::InvalidParameter(
                "signal and noise variances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Kernel value without shape checks.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            let z = (a - b) / l;
            q += z * z;
        }
        self.signal_variance * (-0.5 * q).exp()
    }
}

pub fn kernel(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_dim(cfg.dimension(), x.len())?;
    cfg.validate()?;
    Ok(cfg.eval(x, y))
}

/// Block partition of the joint prior covariance of `(f_tes, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointCovariance {
    pub sigma_tes_tes: DMatrix<f64>,
    pub sigma_tes_v: DMatrix<f64>,
    pub sigma_vv: DMatrix<f64>,
}

impl JointCovariance {
    pub fn m(&self) -> usize {
        self.sigma_tes_tes.nrows()
    }

    pub fn t(&self) -> usize {
        self.sigma_vv.nrows()
    }

    /// The full `(m + t) × (m + t)` matrix.
    pub fn sigma(&self) -> DMatrix<f64> {
        let (m, t) = (self.m(), self.t());
        let mut s = DMatrix::zeros(m + t, m + t);
        s.view_mut((0, 0), (m, m)).copy_from(&self.sigma_tes_tes);
        s.view_mut((0, m), (m, t)).copy_from(&self.sigma_tes_v);
        s.view_mut((m, 0), (t, m)).copy_from(&self.sigma_tes_v.transpose());
        s.view_mut((m, m), (t, t)).copy_from(&self.sigma_vv);
        s
    }
}

/// Prior covariance of the duel latents `v`.
pub fn duel_covariance(data: &DuelDataset, cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    check_dim(cfg.dimension(), data.dimension())?;
    cfg.validate()?;
    let duels = data.duels();
    let t = duels.len();
    let mut s = DMatrix::zeros(t, t);
    for i in 0..t {
        let (wi, li) = (&duels[i].winner, &duels[i].loser);
        for j in 0..=i {
            let (wj, lj) = (&duels[j].winner, &duels[j].loser);
            let mut v = cfg.eval(li, lj) - cfg.eval(li, wj) - cfg.eval(wi, lj) + cfg.eval(wi, wj);
            if i == j {
                v += 2.0 * cfg.noise_variance;
            }
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// `Σ_{x,v}`: prior covariance between `f(x)` and each duel latent.
pub fn cross_covariance(x: &[f64], data: &DuelDataset, cfg: &KernelConfig) -> DVector<f64> {
    DVector::from_iterator(
        data.len(),
        data.duels()
            .iter()
            .map(|d| cfg.eval(x, &d.loser) - cfg.eval(x, &d.winner)),
    )
}

pub fn build_joint_covariance(tes: &[Vec<f64>], data: &DuelDataset, cfg: &KernelConfig) -> Result<JointCovariance> {
    for x in tes {
        check_dim(data.dimension(), x.len())?;
    }
    let sigma_vv = duel_covariance(data, cfg)?;
    let m = tes.len();
    let sigma_tes_tes = DMatrix::from_fn(m, m, |i, j| cfg.eval(&tes[i], &tes[j]));
    let mut sigma_tes_v = DMatrix::zeros(m, data.len());
    for (i, x) in tes.iter().enumerate() {
        sigma_tes_v.set_row(i, &cross_covariance(x, data, cfg).transpose());
    }
    Ok(JointCovariance {
        sigma_tes_tes,
        sigma_tes_v,
        sigma_vv,
    })
}

/// Cholesky factor of `m + jitter·I`, with the jitter doubled from
/// `JITTER_START` until the factorization succeeds or passes `JITTER_MAX`.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            return Ok((chol, jitter));
        }
        jitter *= 2.0;
    }
    Err(Error::NotPositiveDefinite { jitter })
}

/// Factorization of `Σ_vv` shared by the sampler and every estimator.
#[derive(Clone, Debug)]
pub struct DuelFactor {
    pub sigma_vv: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub precision: DMatrix<f64>,
    pub jitter: f64,
}

impl DuelFactor {
    pub fn new(sigma_vv: DMatrix<f64>) -> Result<Self> {
        if !sigma_vv.is_square() {
            return Err(Error::InvalidParameter("Σ_vv must be square".into()));
        }
        let (chol, jitter) = jittered_cholesky(&sigma_vv)?;
        let precision = chol.inverse();
        Ok(Self {
            sigma_vv,
            chol,
            precision,
            jitter,
        })
    }

    pub fn t(&self) -> usize {
        self.sigma_vv.nrows()
    }
}

/// Caches the `Σ_vv` factorization for one (dataset size, hyperparameter) pair.
#[derive(Clone, Debug, Default)]
pub struct FactorCache {
    key: Option<(usize, Vec<u64>)>,
    factor: Option<std::sync::Arc<DuelFactor>>,
}

impl FactorCache {
    pub fn get(&mut self, data: &DuelDataset, cfg: &KernelConfig) -> Result<std::sync::Arc<DuelFactor>> {
        let key = (
            data.len(),
            cfg.lengthscales
                .iter()
                .chain([&cfg.signal_variance, &cfg.noise_variance])
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
        );
        if self.key.as_ref() != Some(&key) || self.factor.is_none() {
            let factor = DuelFactor::new(duel_covariance(data, cfg)?)?;
            self.factor = Some(std::sync::Arc::new(factor));
            self.key = Some(key);
        }
        Ok(self.factor.clone().expect("factor populated above"))
    }

    pub fn invalidate(&mut self) {
        self.key = None;
        self.factor = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duel::{stack_inputs, Duel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, t: usize, d: usize) -> DuelDataset {
        let mut data = DuelDataset::new(d).unwrap();
        for _ in 0..t {
            let w = (0..d).map(|_| rng.random::<f64>()).collect();
            let l = (0..d).map(|_| rng.random::<f64>()).collect();
            data.push(Duel::new(w, l).unwrap()).unwrap();
        }
        data
    }

    /// Dense `A (K + B) Aᵀ`.
    fn dense_sigma(tes: &[Vec<f64>], data: &DuelDataset, cfg: &KernelConfig) -> DMatrix<f64> {
        let x = stack_inputs(tes, data).unwrap();
        let (m, t) = (tes.len(), data.len());
        let n = m + 2 * t;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
        let mut kb = DMatrix::from_fn(n, n, |i, j| cfg.eval(&rows[i], &rows[j]));
        for i in m..n {
            kb[(i, i)] += cfg.noise_variance;
        }
        let mut a = DMatrix::zeros(m + t, n);
        for i in 0..m {
            a[(i, i)] = 1.0;
        }
        for i in 0..t {
            a[(m + i, m + i)] = -1.0;
            a[(m + i, m + t + i)] = 1.0;
        }
        &a * kb * a.transpose()
    }

    #[test]
    fn kernel_values() {
        let cfg = KernelConfig::new(vec![1.0], 1e-4).unwrap();
        assert_eq!(kernel(&[0.3], &[0.3], &cfg).unwrap(), 1.0);
        assert!((kernel(&[0.0], &[1.0], &cfg).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let cfg2 = KernelConfig::new(vec![1.0, 2.0], 1e-4).unwrap();
        assert!((kernel(&[0.0, 0.0], &[1.0, 2.0], &cfg2).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_errors() {
        let cfg = KernelConfig::new(vec![1.0], 1e-4).unwrap();
        assert!(kernel(&[0.0], &[0.0, 1.0], &cfg).is_err());
        assert!(KernelConfig::new(vec![0.0], 1e-4).is_err());
        assert!(KernelConfig::new(vec![-1.0, 1.0], 1e-4).is_err());
        assert!(KernelConfig::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn no_duels_gives_kernel_matrix() {
        let cfg = KernelConfig::isotropic(1, 0.5, 1e-4).unwrap();
        let data = DuelDataset::new(1).unwrap();
        let tes = vec![vec![0.0], vec![0.5]];
        let jc = build_joint_covariance(&tes, &data, &cfg).unwrap();
        assert_eq!(jc.t(), 0);
        assert_eq!(jc.sigma_tes_tes[(0, 1)], cfg.eval(&[0.0], &[0.5]));
    }

    #[test]
    fn identical_duel_inputs_leave_only_noise() {
        let cfg = KernelConfig::isotropic(2, 0.3, 1e-4).unwrap();
        let data = DuelDataset::from_duels(2, vec![Duel::new(vec![0.2, 0.4], vec![0.2, 0.4]).unwrap()]).unwrap();
        let jc = build_joint_covariance(&[], &data, &cfg).unwrap();
        assert!((jc.sigma_vv[(0, 0)] - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn blocks_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = KernelConfig::new(vec![0.4, 0.7], 1e-4).unwrap();
        let data = random_data(&mut rng, 2, 2);
        let tes = vec![vec![0.1, 0.9]];
        let jc = build_joint_covariance(&tes, &data, &cfg).unwrap();
        let dense = dense_sigma(&tes, &data, &cfg);
        assert!((jc.sigma() - dense).amax() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn block_formulas_hold(seed in any::<u64>(), m in 0usize..4, t in 0usize..6, ls in 0.05..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = KernelConfig::new(vec![ls, 2.0 * ls, 0.5 * ls], 1e-4).unwrap();
            let data = random_data(&mut rng, t, 3);
            let tes: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
            let jc = build_joint_covariance(&tes, &data, &cfg).unwrap();
            let dense = dense_sigma(&tes, &data, &cfg);
            prop_assert!((jc.sigma() - &dense).amax() < 1e-12);
            prop_assert!(jittered_cholesky(&jc.sigma_vv).is_ok());
            for (i, d) in data.duels().iter().enumerate() {
                let expected = 2.0 - 2.0 * cfg.eval(&d.winner, &d.loser) + 2.0 * cfg.noise_variance;
                prop_assert!((jc.sigma_vv[(i, i)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_duels_still_factor() {
        let cfg = KernelConfig::isotropic(1, 0.3, 1e-4).unwrap();
        let duel = Duel::new(vec![0.1], vec![0.9]).unwrap();
        let data = DuelDataset::from_duels(1, vec![duel; 40]).unwrap();
        let factor = DuelFactor::new(duel_covariance(&data, &cfg).unwrap()).unwrap();
        assert_eq!(factor.t(), 40);
    }

    #[test]
    fn cache_invalidates_on_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = random_data(&mut rng, 3, 1);
        let mut cfg = KernelConfig::isotropic(1, 0.3, 1e-4).unwrap();
        let mut cache = FactorCache::default();
        let a = cache.get(&data, &cfg).unwrap();
        let b = cache.get(&data, &cfg).unwrap();
        assert!(std::sync::Arc::ptr_eq(&a, &b));
        cfg.lengthscales[0] = 0.4;
        let c = cache.get(&data, &cfg).unwrap();
        assert!(!std::sync::Arc::ptr_eq(&a, &c));
        data.push(Duel::new(vec![0.5], vec![0.6]).unwrap()).unwrap();
        assert_eq!(cache.get(&data, &cfg).unwrap().t(), 4);
    }
}
