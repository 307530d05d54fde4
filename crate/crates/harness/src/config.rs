//! Experiment configuration. Every field has a default, so `{}` is the full
//! regret protocol: all methods on Branin, 10 trials of 100 iterations.

use std::path::PathBuf;

use prefbo_core::acquisition::AcquisitionKind;
use prefbo_core::bench::BenchmarkFunction;
use prefbo_core::bo::{BoConfig, MethodSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// A benchmark id, optionally with a dimension for the dimension-free functions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Name(String),
    Sized { name: String, dimension: Option<usize> },
}

impl FunctionSpec {
    pub fn build(&self) -> Result<BenchmarkFunction> {
        let (name, dim) = match self {
            Self::Name(n) => (n, None),
            Self::Sized { name, dimension } => (name, *dimension),
        };
        Ok(BenchmarkFunction::by_name(name, dim)?)
    }
}

/// Name used in file names and the `function` column, e.g. `ackley4`.
pub fn function_label(f: &BenchmarkFunction) -> String {
    match f.id().fixed_dimension() {
        Some(_) => f.id().as_str().to_owned(),
        None => format!("{}{}", f.id(), f.dimension()),
    }
}

/// Name used in file names and the `method` column; non-standard `x1` rules get a suffix.
pub fn method_label(m: &MethodSpec) -> String {
    if *m == MethodSpec::preset(m.acquisition) {
        m.name().to_owned()
    } else {
        let x1 = serde_json::to_value(m.x1)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        format!("{}-{}", m.name(), x1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub functions: Vec<FunctionSpec>,
    pub methods: Vec<MethodSpec>,
    pub trials: usize,
    pub iterations: usize,
    /// Trial `k` uses seed `seed_base + k`.
    pub seed_base: u64,
    pub output_dir: PathBuf,
    /// Sampler, kernel, refit and acquisition settings.
    pub bo: BoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            functions: vec![FunctionSpec::Name("branin".into())],
            methods: AcquisitionKind::ALL.into_iter().map(MethodSpec::preset).collect(),
            trials: 10,
            iterations: 100,
            seed_base: 0,
            output_dir: PathBuf::from("results"),
            bo: BoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.iterations == 0 {
            return Err(HarnessError::Config("trials and iterations must be at least 1".into()));
        }
        if self.functions.is_empty() || self.methods.is_empty() {
            return Err(HarnessError::Config("functions and methods must be non-empty".into()));
        }
        for f in &self.functions {
            f.build()?;
        }
        for m in &self.methods {
            m.validate()?;
        }
        let mut labels: Vec<String> = self.methods.iter().map(method_label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("methods must be distinct".into()));
        }
        self.bo.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefbo_core::bo::X1Policy;

    #[test]
    fn empty_document_is_the_default_protocol() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.trials, cfg.iterations, cfg.methods.len()), (10, 100, 8));
        assert_eq!(cfg.bo.burn_in, 1000);
        assert_eq!(cfg.bo.refit_period, 10);
        assert_eq!(cfg.bo.noise_variance, 1e-4);
        assert_eq!(cfg.bo.acquisition.ucb_beta_sqrt, 2.0);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = ExperimentConfig::from_json(
            r#"{"functions":["branin",{"name":"ackley","dimension":2}],"methods":["hb_ei",{"acquisition":"ep_ei","x1":"winner_so_far"}],"trials":2,"bo":{"burn_in":50}}"#,
        )
        .unwrap();
        assert_eq!(cfg.bo.burn_in, 50);
        assert_eq!(cfg.bo.refit_period, 10);
        assert_eq!(function_label(&cfg.functions[1].build().unwrap()), "ackley2");
        assert_eq!(cfg.methods[1].x1, X1Policy::WinnerSoFar);
        assert_eq!(method_label(&cfg.methods[1]), "ep_ei-winner_so_far");
        for bad in [
            r#"{"trials":0}"#,
            r#"{"functions":["nope"]}"#,
            r#"{"methods":[]}"#,
            r#"{"methods":["hb_ei","hb_ei"]}"#,
            r#"{"trails":3}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }
}
