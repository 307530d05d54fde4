//! Estimator-accuracy benchmark on random duels.
//!
//! Ground truth is the reduced estimator on a long thinned chain. For each
//! sample count `M`, independent replicate chains feed both the reduced
//! estimators and full-MC estimators built from sample paths of the same
//! draws; the RMSE pools squared errors over replicates and test points. The
//! LA and EP Gaussian approximations are compared with the same truth.
//!
//! Test points are `n_random_points` uniform inputs followed by every
//! training input. Duel probabilities are taken on the disjoint pairs
//! `(0, 1), (2, 3), …` of test points.

use std::path::Path;
use std::sync::Arc;

use prefbo_core::approx::{ep_fit, ep_predictor, la_fit, optimize_hyperparameters, HyperSearch};
use prefbo_core::bench::{BenchmarkFunction, Winner};
use prefbo_core::bo::stream;
use prefbo_core::duel::{Duel, DuelDataset};
use prefbo_core::gibbs::{ChainConfig, GibbsSampler};
use prefbo_core::kernel::{duel_covariance, DuelFactor, KernelConfig};
use prefbo_core::normal;
use prefbo_core::predictive::LatentPredictor;
use prefbo_core::skew::{full_mc, SkewPosterior};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{function_label, FunctionSpec};
use crate::error::{HarnessError, Result};

const DUEL_STREAM: u64 = 0;
const ORACLE_STREAM: u64 = 1;
const POINT_STREAM: u64 = 4;
const TRUTH_STREAM: u64 = 5;
const ESTIMATE_STREAM: u64 = 6;
const PATH_STREAM: u64 = 7;
const HYPER_STREAM: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub function: FunctionSpec,
    pub n_duels: usize,
    pub trials: usize,
    pub n_random_points: usize,
    pub truth_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub sample_sizes: Vec<usize>,
    /// Independent estimator chains per sample size; the RMSE pools their squared errors.
    pub replicates: usize,
    pub seed: u64,
    pub oracle_noise_sd: f64,
    pub noise_variance: f64,
    pub initial_lengthscale: f64,
    /// Fit lengthscales by LA evidence before comparing; all estimators share the result.
    pub fit_lengthscales: bool,
    /// Posterior modes cost a density search per point and sample count.
    pub modes: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            function: FunctionSpec::Sized {
                name: "ackley".into(),
                dimension: Some(4),
            },
            n_duels: 50,
            trials: 10,
            n_random_points: 100,
            truth_samples: 10_000,
            burn_in: 1000,
            thinning: 10,
            sample_sizes: vec![10, 100, 1000],
            replicates: 50,
            seed: 0,
            oracle_noise_sd: 1e-2,
            noise_variance: 1e-4,
            initial_lengthscale: 0.2,
            fit_lengthscales: true,
            modes: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Reduced,
    FullMc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub function: String,
    pub trial: usize,
    pub samples: usize,
    pub statistic: Statistic,
    pub estimator: Estimator,
    pub rmse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Mean,
    Mode,
    DuelProbability,
}

/// Truth against the two Gaussian approximations at one test point or pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub function: String,
    pub trial: usize,
    pub quantity: Quantity,
    pub index: usize,
    pub truth: f64,
    pub la: f64,
    pub ep: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EstimatorReport {
    pub rmse: Vec<RmseRow>,
    pub predictions: Vec<PredictionRow>,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Mean of `toward_half` over pairs with truth outside `[threshold, 1 − threshold]`.
///
/// `toward_half` is positive when the approximation sits closer to 0.5 than the truth.
pub fn extreme_pull(rows: &[PredictionRow], threshold: f64, approx: impl Fn(&PredictionRow) -> f64) -> Option<f64> {
    let devs: Vec<f64> = rows
        .iter()
        .filter(|r| r.quantity == Quantity::DuelProbability)
        .filter_map(|r| {
            if r.truth > 1.0 - threshold {
                Some(r.truth - approx(r))
            } else if r.truth < threshold {
                Some(approx(r) - r.truth)
            } else {
                None
            }
        })
        .collect();
    (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64)
}

impl EstimatorReport {
    pub fn rmse_of(&self, trial: usize, samples: usize, statistic: Statistic, estimator: Estimator) -> Option<f64> {
        self.rmse
            .iter()
            .find(|r| r.trial == trial && r.samples == samples && r.statistic == statistic && r.estimator == estimator)
            .map(|r| r.rmse)
    }

    /// RMSE of the LA and EP predictions of `quantity`, pooled over trials.
    pub fn approximation_rmse(&self, quantity: Quantity) -> (f64, f64) {
        let rows: Vec<&PredictionRow> = self.predictions.iter().filter(|r| r.quantity == quantity).collect();
        let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
        let la: Vec<f64> = rows.iter().map(|r| r.la).collect();
        let ep: Vec<f64> = rows.iter().map(|r| r.ep).collect();
        (rmse(&truth, &la), rmse(&truth, &ep))
    }

    pub fn write_csv(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join("estimator_rmse.csv"))?;
        for r in &self.rmse {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(out.join("estimator_predictions.csv"))?;
        for r in &self.predictions {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Problem {
    data: DuelDataset,
    kernel: KernelConfig,
    points: Vec<Vec<f64>>,
}

fn random_problem(f: &BenchmarkFunction, cfg: &EstimatorConfig, seed: u64) -> Result<Problem> {
    let d = f.dimension();
    let mut duel_rng = stream(seed, DUEL_STREAM);
    let mut oracle_rng = stream(seed, ORACLE_STREAM);
    let mut duels = Vec::with_capacity(cfg.n_duels);
    for _ in 0..cfg.n_duels {
        let a = uniform(d, &mut duel_rng);
        let b = uniform(d, &mut duel_rng);
        let w = f.oracle_duel(&f.from_unit(&a), &f.from_unit(&b), cfg.oracle_noise_sd, &mut oracle_rng)?;
        duels.push(match w {
            Winner::A => Duel::new(a, b)?,
            Winner::B => Duel::new(b, a)?,
        });
    }
    let data = DuelDataset::from_duels(d, duels)?;
    let mut kernel = KernelConfig::isotropic(d, cfg.initial_lengthscale, cfg.noise_variance)?;
    if cfg.fit_lengthscales {
        let outcome =
            optimize_hyperparameters(&data, &kernel, &HyperSearch::default(), &mut stream(seed, HYPER_STREAM))?;
        kernel = outcome.config;
    }
    let mut point_rng = stream(seed, POINT_STREAM);
    let mut points: Vec<Vec<f64>> = (0..cfg.n_random_points).map(|_| uniform(d, &mut point_rng)).collect();
    points.extend(data.training_inputs());
    Ok(Problem { data, kernel, points })
}

fn uniform<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

fn gaussian_duel_probability(gp: &LatentPredictor, x: &[f64], y: &[f64]) -> Result<f64> {
    let p = gp.predict_pair(x, y)?;
    let var = p.var[0] + p.var[1] - 2.0 * p.cov;
    let diff = p.mean[1] - p.mean[0];
    Ok(if var > 0.0 {
        normal::cdf(diff / var.sqrt())
    } else if diff >= 0.0 {
        1.0
    } else {
        0.0
    })
}

pub fn run_estimator_trial(cfg: &EstimatorConfig, trial: usize) -> Result<EstimatorReport> {
    let f = cfg.function.build()?;
    let label = function_label(&f);
    let seed = cfg.seed + trial as u64;
    let problem = random_problem(&f, cfg, seed)?;
    let Problem { data, kernel, points } = problem;
    let m = points.len();
    let factor = Arc::new(DuelFactor::new(duel_covariance(&data, &kernel)?)?);
    let post = SkewPosterior::from_points(points.clone(), &data, &kernel, Some(&factor))?;
    let sampler = GibbsSampler::new(&factor);

    let truth_chain = ChainConfig::new(cfg.burn_in, cfg.thinning, cfg.truth_samples)?;
    let (truth_batch, _) = sampler.run(&truth_chain, None, &mut stream(seed, TRUTH_STREAM))?;
    let truth = post.condition_batch(&truth_batch)?;
    let truth_mean: Vec<f64> = truth.means().iter().map(|e| e.value).collect();
    let truth_var: Vec<f64> = truth.variances()?.iter().map(|e| e.value).collect();

    let mut report = EstimatorReport::default();
    let mut estimate_rng = stream(seed, ESTIMATE_STREAM);
    let mut path_rng = stream(seed, PATH_STREAM);
    for &samples in &cfg.sample_sizes {
        let chain = ChainConfig::new(cfg.burn_in, cfg.thinning, samples)?;
        // Squared errors summed over replicates and points: [reduced mean, full mean, reduced var, full var].
        let mut sse = [0.0; 4];
        for _ in 0..cfg.replicates {
            let (batch, _) = sampler.run(&chain, None, &mut estimate_rng)?;
            let cb = post.condition_batch(&batch)?;
            let paths = post.full_mc_paths(&batch, &mut path_rng)?;
            let variances = cb.variances()?;
            for i in 0..m {
                sse[0] += (cb.mean(i)?.value - truth_mean[i]).powi(2);
                sse[1] += (full_mc::mean(&paths, i).value - truth_mean[i]).powi(2);
                sse[2] += (variances[i].value - truth_var[i]).powi(2);
                sse[3] += (full_mc::variance(&paths, i).value - truth_var[i]).powi(2);
            }
        }
        let count = (cfg.replicates * m) as f64;
        for (k, (statistic, estimator)) in [
            (Statistic::Mean, Estimator::Reduced),
            (Statistic::Mean, Estimator::FullMc),
            (Statistic::Variance, Estimator::Reduced),
            (Statistic::Variance, Estimator::FullMc),
        ]
        .into_iter()
        .enumerate()
        {
            report.rmse.push(RmseRow {
                function: label.clone(),
                trial,
                samples,
                statistic,
                estimator,
                rmse: (sse[k] / count).sqrt(),
            });
        }
    }

    let la = la_fit(&data, &kernel)?.posterior.predictor;
    let ep = ep_predictor(&data, &kernel, &factor, &ep_fit(&factor.sigma_vv)?)?.predictor;
    let row = |quantity, index, truth, la, ep| PredictionRow {
        function: label.clone(),
        trial,
        quantity,
        index,
        truth,
        la,
        ep,
    };
    for (i, x) in points.iter().enumerate() {
        let (la_mean, ep_mean) = (la.predict_mean(x)?, ep.predict_mean(x)?);
        report
            .predictions
            .push(row(Quantity::Mean, i, truth_mean[i], la_mean, ep_mean));
        if cfg.modes {
            report
                .predictions
                .push(row(Quantity::Mode, i, truth.mode(i)?, la_mean, ep_mean));
        }
    }
    for k in 0..m / 2 {
        let (i, j) = (2 * k, 2 * k + 1);
        let p = truth.duel_probability(i, j)?.value;
        let la_p = gaussian_duel_probability(&la, &points[i], &points[j])?;
        let ep_p = gaussian_duel_probability(&ep, &points[i], &points[j])?;
        report
            .predictions
            .push(row(Quantity::DuelProbability, k, p, la_p, ep_p));
    }
    Ok(report)
}

/// All trials in order; trials are independent given `seed + trial`.
pub fn run_estimator_benchmark(cfg: &EstimatorConfig) -> Result<EstimatorReport> {
    if cfg.trials == 0 || cfg.n_duels == 0 || cfg.replicates == 0 || cfg.sample_sizes.is_empty() {
        return Err(HarnessError::Config(
            "trials, n_duels, replicates and sample_sizes must be non-empty".into(),
        ));
    }
    let mut report = EstimatorReport::default();
    for trial in 0..cfg.trials {
        let r = run_estimator_trial(cfg, trial)?;
        report.rmse.extend(r.rmse);
        report.predictions.extend(r.predictions);
    }
    Ok(report)
}
