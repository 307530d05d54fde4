//! Analytic benchmark objectives in maximization form.
//!
//! Every function is the negation of its usual minimization definition, so
//! larger is better throughout the crate. Domains and constants follow the
//! common global-optimization test-function library.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkId {
    Branin,
    HolderTable,
    Bukin,
    Eggholder,
    Ackley,
    Hartmann3,
    Hartmann4,
    Hartmann6,
    CrossInTray,
    Langerman,
    Levy13,
    Levy,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 12] = [
        BenchmarkId::Branin,
        BenchmarkId::HolderTable,
        BenchmarkId::Bukin,
        BenchmarkId::Eggholder,
        BenchmarkId::Ackley,
        BenchmarkId::Hartmann3,
        BenchmarkId::Hartmann4,
        BenchmarkId::Hartmann6,
        BenchmarkId::CrossInTray,
        BenchmarkId::Langerman,
        BenchmarkId::Levy13,
        BenchmarkId::Levy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkId::Branin => "branin",
            BenchmarkId::HolderTable => "holder_table",
            BenchmarkId::Bukin => "bukin",
            BenchmarkId::Eggholder => "eggholder",
            BenchmarkId::Ackley => "ackley",
            BenchmarkId::Hartmann3 => "hartmann3",
            BenchmarkId::Hartmann4 => "hartmann4",
            BenchmarkId::Hartmann6 => "hartmann6",
            BenchmarkId::CrossInTray => "cross_in_tray",
            BenchmarkId::Langerman => "langerman",
            BenchmarkId::Levy13 => "levy13",
            BenchmarkId::Levy => "levy",
        }
    }

    /// `None` for functions defined in any dimension.
    pub fn fixed_dimension(self) -> Option<usize> {
        match self {
            BenchmarkId::Ackley | BenchmarkId::Levy => None,
            BenchmarkId::Hartmann3 => Some(3),
            BenchmarkId::Hartmann4 => Some(4),
            BenchmarkId::Hartmann6 => Some(6),
            _ => Some(2),
        }
    }

    /// Dimension used when none is requested.
    pub fn default_dimension(self) -> usize {
        self.fixed_dimension().unwrap_or(4)
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownFunction(s.to_string()))
    }
}

/// Winner label of a duel between `a` and `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkFunction {
    id: BenchmarkId,
    bounds: Vec<(f64, f64)>,
    optimizer: Vec<f64>,
    optimum_value: f64,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];

const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

const LANGERMAN_C: [f64; 5] = [1.0, 2.0, 5.0, 2.0, 3.0];
const LANGERMAN_A: [[f64; 2]; 5] = [[3.0, 5.0], [5.0, 2.0], [2.0, 1.0], [1.0, 4.0], [7.0, 9.0]];

fn hartmann_sum<const D: usize>(x: &[f64], a: &[[f64; D]; 4], p: &[[f64; D]; 4], cols: usize) -> f64 {
    (0..4)
        .map(|i| {
            let inner: f64 = (0..cols).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum()
}

/// Minimization-form value of each function.
fn minimization_form(id: BenchmarkId, x: &[f64]) -> f64 {
    match id {
        BenchmarkId::Branin => {
            let (x1, x2) = (x[0], x[1]);
            let b = 5.1 / (4.0 * PI * PI);
            let c = 5.0 / PI;
            let t = 1.0 / (8.0 * PI);
            (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
        }
        BenchmarkId::HolderTable => {
            let (x1, x2) = (x[0], x[1]);
            let r = (x1 * x1 + x2 * x2).sqrt();
            -(x1.sin() * x2.cos() * (1.0 - r / PI).abs().exp()).abs()
        }
        BenchmarkId::Bukin => {
            let (x1, x2) = (x[0], x[1]);
            100.0 * (x2 - 0.01 * x1 * x1).abs().sqrt() + 0.01 * (x1 + 10.0).abs()
        }
        BenchmarkId::Eggholder => {
            let (x1, x2) = (x[0], x[1]);
            -(x2 + 47.0) * (x2 + x1 / 2.0 + 47.0).abs().sqrt().sin() - x1 * (x1 - (x2 + 47.0)).abs().sqrt().sin()
        }
        BenchmarkId::Ackley => {
            let d = x.len() as f64;
            let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
            let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
            -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + std::f64::consts::E
        }
        BenchmarkId::Hartmann3 => -hartmann_sum(x, &HARTMANN3_A, &HARTMANN3_P, 3),
        BenchmarkId::Hartmann4 => (1.1 - hartmann_sum(x, &HARTMANN6_A, &HARTMANN6_P, 4)) / 0.839,
        BenchmarkId::Hartmann6 => -hartmann_sum(x, &HARTMANN6_A, &HARTMANN6_P, 6),
        BenchmarkId::CrossInTray => {
            let (x1, x2) = (x[0], x[1]);
            let r = (x1 * x1 + x2 * x2).sqrt();
            let inner = (x1.sin() * x2.sin() * (100.0 - r / PI).abs().exp()).abs() + 1.0;
            -1e-4 * inner.powf(0.1)
        }
        BenchmarkId::Langerman => LANGERMAN_A
            .iter()
            .zip(LANGERMAN_C)
            .map(|(a, c)| {
                let s: f64 = a.iter().zip(x).map(|(ai, xi)| (xi - ai).powi(2)).sum();
                c * (-s / PI).exp() * (PI * s).cos()
            })
            .sum(),
        BenchmarkId::Levy13 => {
            let (x1, x2) = (x[0], x[1]);
            (3.0 * PI * x1).sin().powi(2)
                + (x1 - 1.0).powi(2) * (1.0 + (3.0 * PI * x2).sin().powi(2))
                + (x2 - 1.0).powi(2) * (1.0 + (2.0 * PI * x2).sin().powi(2))
        }
        BenchmarkId::Levy => {
            let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
            let last = w[w.len() - 1];
            let mid: f64 = w[..w.len() - 1]
                .iter()
                .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
                .sum();
            (PI * w[0]).sin().powi(2) + mid + (last - 1.0).powi(2) * (1.0 + (2.0 * PI * last).sin().powi(2))
        }
    }
}

fn bounds_and_optimizer(id: BenchmarkId, dim: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
    match id {
        BenchmarkId::Branin => (vec![(-5.0, 10.0), (0.0, 15.0)], vec![PI, 2.275]),
        BenchmarkId::HolderTable => (vec![(-10.0, 10.0); 2], vec![8.055_023_472_687_99, 9.664_590_033_959_89]),
        BenchmarkId::Bukin => (vec![(-15.0, -5.0), (-3.0, 3.0)], vec![-10.0, 1.0]),
        BenchmarkId::Eggholder => (vec![(-512.0, 512.0); 2], vec![512.0, 404.231_804_987_361_95]),
        BenchmarkId::Ackley => (vec![(-32.768, 32.768); dim], vec![0.0; dim]),
        BenchmarkId::Hartmann3 => (
            vec![(0.0, 1.0); 3],
            vec![
                0.114_588_882_103_164_08,
                0.555_648_893_903_748_8,
                0.852_546_984_593_401_6,
            ],
        ),
        BenchmarkId::Hartmann4 => (
            vec![(0.0, 1.0); 4],
            vec![
                0.187_395_273_078_646_34,
                0.194_151_527_446_291_94,
                0.557_917_778_841_716_8,
                0.264_779_623_168_868_2,
            ],
        ),
        BenchmarkId::Hartmann6 => (
            vec![(0.0, 1.0); 6],
            vec![
                0.201_689_510_474_460_13,
                0.150_010_691_813_499_46,
                0.476_873_976_864_052_3,
                0.275_332_430_367_494_8,
                0.311_651_616_636_640_5,
                0.657_300_534_739_882_3,
            ],
        ),
        BenchmarkId::CrossInTray => (
            vec![(-10.0, 10.0); 2],
            vec![-1.349_406_660_743_280_9, -1.349_406_614_365_639],
        ),
        BenchmarkId::Langerman => (
            vec![(0.0, 10.0); 2],
            vec![2.793_402_209_225_270_4, 1.597_232_499_194_644],
        ),
        BenchmarkId::Levy13 => (vec![(-10.0, 10.0); 2], vec![1.0, 1.0]),
        BenchmarkId::Levy => (vec![(-10.0, 10.0); dim], vec![1.0; dim]),
    }
}

impl BenchmarkFunction {
    /// Builds a benchmark at `dimension` (or its default one when `None`).
    pub fn new(id: BenchmarkId, dimension: Option<usize>) -> Result<Self> {
        let dim = match (id.fixed_dimension(), dimension) {
            (Some(fixed), Some(d)) => {
                check_dim(fixed, d)?;
                fixed
            }
            (Some(fixed), None) => fixed,
            (None, Some(0)) => return Err(Error::InvalidParameter("dimension must be positive".into())),
            (None, Some(d)) => d,
            (None, None) => id.default_dimension(),
        };
        let (bounds, optimizer) = bounds_and_optimizer(id, dim);
        let optimum_value = -minimization_form(id, &optimizer);
        Ok(Self {
            id,
            bounds,
            optimizer,
            optimum_value,
        })
    }

    pub fn by_name(name: &str, dimension: Option<usize>) -> Result<Self> {
        Self::new(name.parse()?, dimension)
    }

    pub fn id(&self) -> BenchmarkId {
        self.id
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// A documented global maximizer.
    pub fn optimizer(&self) -> &[f64] {
        &self.optimizer
    }

    pub fn optimum_value(&self) -> f64 {
        self.optimum_value
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dimension(), x.len())?;
        for (index, (&value, &(lower, upper))) in x.iter().zip(&self.bounds).enumerate() {
            if !(lower..=upper).contains(&value) {
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

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(-minimization_form(self.id, x))
    }

    /// Maps a point of the unit cube onto the domain box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(&ui, &(lo, hi))| (lo + ui.clamp(0.0, 1.0) * (hi - lo)).clamp(lo, hi))
            .collect()
    }

    pub fn regret(&self, x: &[f64]) -> Result<f64> {
        Ok(self.optimum_value - self.evaluate(x)?)
    }

    /// Simulated judge: `a` wins iff `f(a) + ε_a ≥ f(b) + ε_b`.
    pub fn oracle_duel<R: Rng + ?Sized>(&self, a: &[f64], b: &[f64], noise_sd: f64, rng: &mut R) -> Result<Winner> {
        if !(noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise_sd = {noise_sd}")));
        }
        let fa = self.evaluate(a)?;
        let fb = self.evaluate(b)?;
        let ea: f64 = rng.sample(StandardNormal);
        let eb: f64 = rng.sample(StandardNormal);
        if fa + noise_sd * ea >= fb + noise_sd * eb {
            Ok(Winner::A)
        } else {
            Ok(Winner::B)
        }
    }
}
