//! The preferential BO loop: Hallucination Believer and the baselines.
//!
//! Each step duels a first input `x1` (the current winner, or the posterior
//! mean argmax for the Gaussian baselines) against the acquisition argmax
//! `x2`. [`BoState::propose`] and [`BoState::record`] are split so that an
//! external judge can answer between them.
//!
//! Random streams: a trial seed `s` yields `ChaCha8Rng::seed_from_u64(s)` on
//! stream 0 for the initial duels, stream 1 for the simulated judge and
//! stream 2 for the optimizer, so all methods share initial duels per seed.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    argmax, candidate_set, duel_ts_select, duel_ucb_score, ei, eiig_score, ep_muc_score, maximize_acquisition, ucb,
    AcquisitionConfig, AcquisitionKind, MaximizerConfig,
};
use crate::approx::{ep_fit, ep_predictor, la_fit, optimize_hyperparameters, HyperSearch};
use crate::bench::{BenchmarkFunction, Winner};
use crate::duel::{Duel, DuelDataset};
use crate::error::{check_dim, Error, Result};
use crate::gibbs::{hallucination, ChainConfig, ChainState, GibbsSampler, DEFAULT_BURN_IN};
use crate::kernel::{DuelFactor, FactorCache, KernelConfig};
use crate::predictive::LatentPredictor;
use crate::skew::SkewPosterior;

pub const INIT_STREAM: u64 = 0;
pub const ORACLE_STREAM: u64 = 1;
pub const BO_STREAM: u64 = 2;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X1Policy {
    WinnerSoFar,
    PosteriorMeanArgmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    SkewMc,
    La,
    Ep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MethodRepr", into = "MethodFull")]
pub struct MethodSpec {
    pub acquisition: AcquisitionKind,
    pub x1: X1Policy,
    pub backend: Backend,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MethodRepr {
    Name(AcquisitionKind),
    Full(MethodFull),
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct MethodFull {
    acquisition: AcquisitionKind,
    x1: Option<X1Policy>,
    backend: Option<Backend>,
}

impl From<MethodSpec> for MethodFull {
    fn from(m: MethodSpec) -> Self {
        Self {
            acquisition: m.acquisition,
            x1: Some(m.x1),
            backend: Some(m.backend),
        }
    }
}

impl TryFrom<MethodRepr> for MethodSpec {
    type Error = Error;

    fn try_from(r: MethodRepr) -> Result<Self> {
        let full = match r {
            MethodRepr::Name(k) => return Ok(Self::preset(k)),
            MethodRepr::Full(f) => f,
        };
        let preset = Self::preset(full.acquisition);
        let spec = Self {
            acquisition: full.acquisition,
            x1: full.x1.unwrap_or(preset.x1),
            backend: full.backend.unwrap_or(preset.backend),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl MethodSpec {
    /// The standard pairing of each acquisition with its backend and `x1` rule.
    pub fn preset(acquisition: AcquisitionKind) -> Self {
        use AcquisitionKind::*;
        let (x1, backend) = match acquisition {
            HbEi | HbUcb | DuelTs | DuelUcb | Eiig => (X1Policy::WinnerSoFar, Backend::SkewMc),
            EpEi | EpMuc => (X1Policy::PosteriorMeanArgmax, Backend::Ep),
            LaEi => (X1Policy::PosteriorMeanArgmax, Backend::La),
        };
        Self {
            acquisition,
            x1,
            backend,
        }
    }

    pub fn name(&self) -> &'static str {
        self.acquisition.as_str()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::preset(self.acquisition).backend;
        if self.backend != expected {
            return Err(Error::InconsistentMethod(format!(
                "{} requires the {:?} backend",
                self.acquisition, expected
            )));
        }
        if self.backend == Backend::SkewMc && self.x1 == X1Policy::PosteriorMeanArgmax {
            return Err(Error::InconsistentMethod(format!(
                "{} tracks the winner so far",
                self.acquisition
            )));
        }
        Ok(())
    }
}

/// What stands in for the hallucination in the HB step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationMode {
    #[default]
    Sample,
    /// Mean of a full batch; discards skewness.
    BatchMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub initial_lengthscale: f64,
    pub noise_variance: f64,
    pub oracle_noise_sd: f64,
    pub burn_in: usize,
    /// Reduced burn-in for chains warm-started from the previous step; `None` keeps cold starts.
    pub warm_burn_in: Option<usize>,
    pub refit_period: usize,
    /// Initial random duels; `None` means `3·d`.
    pub init_duels: Option<usize>,
    pub hyper: HyperSearch,
    pub acquisition: AcquisitionConfig,
    pub hallucination: HallucinationMode,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            initial_lengthscale: 0.2,
            noise_variance: 1e-4,
            oracle_noise_sd: 1e-2,
            burn_in: DEFAULT_BURN_IN,
            warm_burn_in: None,
            refit_period: 10,
            init_duels: None,
            hyper: HyperSearch::default(),
            acquisition: AcquisitionConfig::default(),
            hallucination: HallucinationMode::Sample,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lengthscale > 0.0 && self.noise_variance > 0.0 && self.oracle_noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(
                "lengthscale and noise variance must be positive, oracle noise non-negative".into(),
            ));
        }
        if self.refit_period == 0 {
            return Err(Error::InvalidParameter("refit_period must be at least 1".into()));
        }
        self.acquisition.validate()
    }

    pub fn init_duels(&self, dimension: usize) -> usize {
        self.init_duels.unwrap_or(3 * dimension)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

/// Everything a BO trial carries between steps.
#[derive(Clone, Debug)]
pub struct BoState {
    bounds: Vec<(f64, f64)>,
    data: DuelDataset,
    current_winner: Option<Vec<f64>>,
    kernel: KernelConfig,
    rng: ChaCha8Rng,
    cache: FactorCache,
    chain: Option<ChainState>,
    refits: Vec<usize>,
}

impl BoState {
    pub fn new(bounds: Vec<(f64, f64)>, cfg: &BoConfig, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if bounds
            .iter()
            .any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::InvalidParameter(
                "bounds must be finite with lower ≤ upper".into(),
            ));
        }
        let d = bounds.len();
        Ok(Self {
            data: DuelDataset::new(d)?,
            kernel: KernelConfig::isotropic(d, cfg.initial_lengthscale, cfg.noise_variance)?,
            bounds,
            current_winner: None,
            rng,
            cache: FactorCache::default(),
            chain: None,
            refits: Vec::new(),
        })
    }

    pub fn unit_cube(dimension: usize, cfg: &BoConfig, rng: ChaCha8Rng) -> Result<Self> {
        Self::new(vec![(0.0, 1.0); dimension], cfg, rng)
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn data(&self) -> &DuelDataset {
        &self.data
    }

    /// Winner of the most recent duel.
    pub fn current_winner(&self) -> Option<&[f64]> {
        self.current_winner.as_deref()
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn iteration(&self) -> usize {
        self.data.len()
    }

    /// Dataset sizes at which the lengthscales were refitted.
    pub fn refits(&self) -> &[usize] {
        &self.refits
    }

    pub fn factor(&mut self) -> Result<Arc<DuelFactor>> {
        self.cache.get(&self.data, &self.kernel)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn last_chain_state(&self) -> Option<&ChainState> {
        self.chain.as_ref()
    }

    /// Uniform point in the box drawn from `rng`.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dimension(), x.len())?;
        for (index, (&value, &(lower, upper))) in x.iter().zip(&self.bounds).enumerate() {
            if !(value >= lower && value <= upper) {
                return Err(Error::OutOfDomain {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Appends the duel `x1` vs `x2` with the judged winner in the winner slot.
    pub fn record(&mut self, x1: Vec<f64>, x2: Vec<f64>, winner: Winner) -> Result<()> {
        self.check_point(&x1)?;
        self.check_point(&x2)?;
        let (w, l) = match winner {
            Winner::A => (x1, x2),
            Winner::B => (x2, x1),
        };
        self.data.push(Duel::new(w.clone(), l)?)?;
        self.current_winner = Some(w);
        Ok(())
    }

    fn maybe_refit(&mut self, cfg: &BoConfig) {
        let t = self.data.len();
        if t == 0 || !t.is_multiple_of(cfg.refit_period) || self.refits.last() == Some(&t) {
            return;
        }
        self.refits.push(t);
        if let Ok(out) = optimize_hyperparameters(&self.data, &self.kernel, &cfg.hyper, &mut self.rng) {
            if !out.failed && out.config != self.kernel {
                self.kernel = out.config;
                self.cache.invalidate();
            }
        }
    }

    /// Chooses the next duel. Refits lengthscales first when `t` is a multiple of the refit period.
    pub fn propose(&mut self, method: &MethodSpec, cfg: &BoConfig) -> Result<Proposal> {
        method.validate()?;
        cfg.validate()?;
        if self.current_winner.is_none() {
            return Err(Error::InvalidParameter(
                "proposals need at least one recorded duel".into(),
            ));
        }
        self.maybe_refit(cfg);
        match self.try_propose(method, cfg) {
            Ok(p) => Ok(p),
            Err(_) => {
                self.cache.invalidate();
                self.chain = None;
                self.try_propose(method, cfg)
            }
        }
    }

    fn hallucinate(&mut self, factor: &DuelFactor, cfg: &BoConfig) -> Result<DVector<f64>> {
        match cfg.hallucination {
            HallucinationMode::Sample => {
                let (burn_in, warm) = match (cfg.warm_burn_in, self.chain.as_ref()) {
                    (Some(b), Some(state)) if state.v.len() <= factor.t() => (b, Some(state)),
                    _ => (cfg.burn_in, None),
                };
                let (v, state) = hallucination(factor, burn_in, warm, &mut self.rng)?;
                self.chain = Some(state);
                Ok(v)
            }
            HallucinationMode::BatchMean => {
                let chain = ChainConfig::new(cfg.burn_in, 1, cfg.acquisition.mc_samples)?;
                let (batch, _) = GibbsSampler::new(factor).run(&chain, None, &mut self.rng)?;
                batch.mean()
            }
        }
    }

    fn gaussian_x1(&self, gp: &LatentPredictor, method: &MethodSpec, winner: &[f64]) -> Result<Vec<f64>> {
        Ok(match method.x1 {
            X1Policy::WinnerSoFar => winner.to_vec(),
            X1Policy::PosteriorMeanArgmax => {
                let inputs = self.data.training_inputs();
                inputs[gp.argmax_mean(&inputs)?].clone()
            }
        })
    }

    fn maximize_ei(&mut self, gp: &LatentPredictor, x1: &[f64], mcfg: &MaximizerConfig) -> Result<Vec<f64>> {
        let incumbent = gp.predict_mean(x1)?;
        let score = |x: &[f64]| match gp.predict(x) {
            Ok((m, v)) => ei(m, v.sqrt(), incumbent),
            Err(_) => f64::NEG_INFINITY,
        };
        maximize_acquisition(score, &self.bounds, mcfg, &mut self.rng)
    }

    fn try_propose(&mut self, method: &MethodSpec, cfg: &BoConfig) -> Result<Proposal> {
        use AcquisitionKind::*;
        let d = self.dimension();
        let acq = &cfg.acquisition;
        let mcfg = MaximizerConfig::from_acquisition(acq, d);
        let factor = self.factor()?;
        let winner = self.current_winner.clone().expect("checked by propose");

        let (x1, x2) = match method.acquisition {
            HbEi | HbUcb => {
                let v = self.hallucinate(&factor, cfg)?;
                let gp = LatentPredictor::conditioned_on(self.data.clone(), self.kernel.clone(), factor, &v)?;
                let x2 = if method.acquisition == HbEi {
                    self.maximize_ei(&gp, &winner, &mcfg)?
                } else {
                    let beta = acq.ucb_beta_sqrt;
                    let score = |x: &[f64]| match gp.predict(x) {
                        Ok((m, v)) => ucb(m, v.sqrt(), beta),
                        Err(_) => f64::NEG_INFINITY,
                    };
                    maximize_acquisition(score, &self.bounds, &mcfg, &mut self.rng)?
                };
                (winner, x2)
            }
            DuelTs => {
                let v = self.hallucinate(&factor, cfg)?;
                let n = acq.thompson_candidates.min(acq.candidates(d));
                let cands = candidate_set(&self.bounds, n, &mut self.rng);
                let post = SkewPosterior::from_points(cands.clone(), &self.data, &self.kernel, Some(&factor))?;
                let idx = duel_ts_select(&post, &v, &mut self.rng)?;
                (winner, cands[idx].clone())
            }
            DuelUcb | Eiig => {
                let chain = ChainConfig::new(cfg.burn_in, 1, acq.mc_samples)?;
                let (batch, _) = GibbsSampler::new(&factor).run(&chain, None, &mut self.rng)?;
                let mut cands = candidate_set(&self.bounds, acq.candidates(d), &mut self.rng);
                let n = cands.len();
                if method.acquisition == Eiig {
                    cands.push(winner.clone());
                }
                let post = SkewPosterior::from_points(cands.clone(), &self.data, &self.kernel, Some(&factor))?;
                let cb = post.condition_batch(&batch)?;
                let scores = (0..n)
                    .map(|i| match method.acquisition {
                        DuelUcb => duel_ucb_score(&cb, i, acq.duel_ucb_alpha),
                        _ => eiig_score(&cb, i, n, acq.eiig_weight),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (winner, cands[argmax(scores)].clone())
            }
            LaEi => {
                let gp = la_fit(&self.data, &self.kernel)?.posterior.predictor;
                let x1 = self.gaussian_x1(&gp, method, &winner)?;
                let x2 = self.maximize_ei(&gp, &x1, &mcfg)?;
                (x1, x2)
            }
            EpEi | EpMuc => {
                let fit = ep_fit(&factor.sigma_vv)?;
                let gp = ep_predictor(&self.data, &self.kernel, &factor, &fit)?.predictor;
                let x1 = self.gaussian_x1(&gp, method, &winner)?;
                let x2 = if method.acquisition == EpEi {
                    self.maximize_ei(&gp, &x1, &mcfg)?
                } else {
                    let noise = self.kernel.noise_variance;
                    let score = |x: &[f64]| match gp.predict_pair(&x1, x) {
                        Ok(pair) => ep_muc_score(&pair, noise),
                        Err(_) => f64::NEG_INFINITY,
                    };
                    maximize_acquisition(score, &self.bounds, &mcfg, &mut self.rng)?
                };
                (x1, x2)
            }
        };
        Ok(Proposal { x1, x2 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// 0 is the state after the initial random duels.
    pub iteration: usize,
    /// Cumulative optimizer time, judge excluded.
    pub elapsed_seconds: f64,
    pub regret: f64,
    /// Recommended point in function coordinates.
    pub recommendation: Vec<f64>,
    /// True value of the current winner after this iteration.
    pub winner_value: f64,
}

#[derive(Clone, Debug)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub data: DuelDataset,
    pub refits: Vec<usize>,
    /// Set when an iteration failed; `rows` holds everything before it.
    pub error: Option<String>,
}

/// One benchmark trial: `3d` random duels judged by the noisy oracle, then `n_iterations` steps.
pub fn run_bo(
    function: &BenchmarkFunction,
    method: &MethodSpec,
    cfg: &BoConfig,
    n_iterations: usize,
    seed: u64,
) -> Result<History> {
    method.validate()?;
    if n_iterations == 0 {
        return Err(Error::InvalidParameter("n_iterations must be at least 1".into()));
    }
    let d = function.dimension();
    let mut init_rng = stream(seed, INIT_STREAM);
    let mut oracle_rng = stream(seed, ORACLE_STREAM);
    let mut state = BoState::unit_cube(d, cfg, stream(seed, BO_STREAM))?;
    let judge = |a: &[f64], b: &[f64], rng: &mut ChaCha8Rng| {
        function.oracle_duel(&function.from_unit(a), &function.from_unit(b), cfg.oracle_noise_sd, rng)
    };

    for _ in 0..cfg.init_duels(d).max(1) {
        let a = state.random_point(&mut init_rng);
        let b = state.random_point(&mut init_rng);
        let w = judge(&a, &b, &mut oracle_rng)?;
        state.record(a, b, w)?;
    }
    let row = |iteration: usize, elapsed: f64, x1: &[f64], state: &BoState| -> Result<HistoryRow> {
        let rec = function.from_unit(x1);
        let winner = function.from_unit(state.current_winner().expect("duels recorded"));
        Ok(HistoryRow {
            iteration,
            elapsed_seconds: elapsed,
            regret: function.regret(&rec)?,
            recommendation: rec,
            winner_value: function.evaluate(&winner)?,
        })
    };
    let first = state.current_winner().expect("duels recorded").to_vec();
    let mut rows = vec![row(0, 0.0, &first, &state)?];
    let mut elapsed = 0.0;
    let mut error = None;
    for it in 1..=n_iterations {
        let step = (|| -> Result<HistoryRow> {
            let start = Instant::now();
            let p = state.propose(method, cfg)?;
            elapsed += start.elapsed().as_secs_f64();
            let w = judge(&p.x1, &p.x2, &mut oracle_rng)?;
            let start = Instant::now();
            state.record(p.x1.clone(), p.x2, w)?;
            elapsed += start.elapsed().as_secs_f64();
            row(it, elapsed, &p.x1, &state)
        })();
        match step {
            Ok(r) => rows.push(r),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(History {
        rows,
        refits: state.refits().to_vec(),
        data: state.data,
        error,
    })
}
