//! One live session: a BO state driven by an external judge.
//!
//! State machine: `awaiting_feedback → computing → awaiting_feedback`, ending
//! in `finished` once `max_duels` answers are in. The BO step runs on a clone
//! of the state so readers are never blocked by it.

use std::path::PathBuf;

use nalgebra::DMatrix;
use prefbo_core::bench::Winner;
use prefbo_core::bo::{stream, BoConfig, BoState, MethodSpec, Proposal, BO_STREAM, INIT_STREAM};
use prefbo_core::duel::DuelDataset;
use prefbo_core::gibbs::{gibbs_chain, ChainConfig};
use prefbo_core::kernel::{duel_covariance, KernelConfig};
use prefbo_core::skew::{SkewPosterior, QUANTILE_TOLERANCE};
use rand_chacha::ChaCha8Rng;

use crate::api::{
    Candidate, Choice, CreateSession, DuelPayload, DuelResponse, Grid, HistoryEntry, Phase, Presentation, SessionState,
    Status, SCHEMA_VERSION,
};
use crate::error::ServiceError;

/// Stream used for the posterior grid, offset by the dataset size.
const GRID_STREAM: u64 = 3;
pub const CREDIBLE_LEVEL: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub bo: BoConfig,
    pub server_seed: u64,
    /// Directory for the per-session JSON-lines logs; `None` disables persistence.
    pub log_dir: Option<PathBuf>,
    pub grid_samples: usize,
    pub grid_burn_in: usize,
    pub grid_points_1d: usize,
    pub grid_points_2d: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bo: interactive_bo_config(),
            server_seed: 0,
            log_dir: None,
            grid_samples: 200,
            grid_burn_in: 200,
            grid_points_1d: 41,
            grid_points_2d: 15,
        }
    }
}

/// Short burn-in with warm-started chains; the benchmark harness keeps the full burn-in.
pub fn interactive_bo_config() -> BoConfig {
    BoConfig {
        burn_in: 200,
        warm_burn_in: Some(200),
        ..BoConfig::default()
    }
}

#[derive(Clone, Debug)]
struct Pending {
    duel_id: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    fallback: bool,
}

/// Work left after an outcome has been recorded.
pub enum Step {
    Ready,
    Compute(Box<ComputeJob>),
}

/// A BO step detached from the session lock.
pub struct ComputeJob {
    state: BoState,
    method: MethodSpec,
    t: usize,
}

pub struct ComputeResult {
    state: BoState,
    proposal: prefbo_core::Result<Proposal>,
    t: usize,
}

impl ComputeJob {
    pub fn run(mut self, cfg: &BoConfig) -> ComputeResult {
        let proposal = self.state.propose(&self.method, cfg);
        ComputeResult {
            state: self.state,
            proposal,
            t: self.t,
        }
    }
}

/// Inputs for a grid computation, taken under the lock and evaluated outside it.
pub struct GridJob {
    data: DuelDataset,
    kernel: KernelConfig,
    bounds: Vec<[f64; 2]>,
    seed: u64,
}

pub struct Session {
    id: String,
    spec: CreateSession,
    bounds: Vec<[f64; 2]>,
    init_pairs: usize,
    seed: u64,
    bo: BoState,
    init_rng: ChaCha8Rng,
    pending: Option<Pending>,
    status: Status,
    history: Vec<HistoryEntry>,
    grid_cache: Option<(usize, Vec<f64>, Grid)>,
}

impl Session {
    /// Validates `spec` and draws the first random pair.
    pub fn create(id: String, spec: CreateSession, seed: u64, cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let d = spec.dimension;
        if d == 0 {
            return Err(ServiceError::BadRequest("dimension must be at least 1".into()));
        }
        if let Some(req) = spec.presentation.required_dimension() {
            if req != d {
                return Err(ServiceError::BadRequest(format!(
                    "presentation {:?} needs dimension {req}, got {d}",
                    spec.presentation
                )));
            }
        }
        let bounds = spec.bounds.clone().unwrap_or_else(|| vec![[0.0, 1.0]; d]);
        if bounds.len() != d {
            return Err(ServiceError::BadRequest(format!(
                "expected {d} bounds, got {}",
                bounds.len()
            )));
        }
        if bounds
            .iter()
            .any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(ServiceError::BadRequest(
                "bounds must be finite with lower < upper".into(),
            ));
        }
        spec.method
            .validate()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let init_pairs = spec.init_pairs.unwrap_or(3 * d);
        if init_pairs == 0 {
            return Err(ServiceError::BadRequest("init_pairs must be at least 1".into()));
        }
        if spec.max_duels == Some(0) {
            return Err(ServiceError::BadRequest("max_duels must be at least 1".into()));
        }
        let box_bounds = bounds.iter().map(|[lo, hi]| (*lo, *hi)).collect();
        let bo = BoState::new(box_bounds, &cfg.bo, stream(seed, BO_STREAM))
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let spec = CreateSession {
            bounds: Some(bounds.clone()),
            init_pairs: Some(init_pairs),
            seed: Some(seed),
            ..spec
        };
        let mut session = Self {
            id,
            spec,
            bounds,
            init_pairs,
            seed,
            bo,
            init_rng: stream(seed, INIT_STREAM),
            pending: None,
            status: Status::AwaitingFeedback,
            history: Vec::new(),
            grid_cache: None,
        };
        session.pending = Some(session.random_pair());
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The normalized spec, with bounds, init pairs and seed filled in.
    pub fn spec(&self) -> &CreateSession {
        &self.spec
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn answered(&self) -> usize {
        self.history.len()
    }

    fn random_pair(&mut self) -> Pending {
        let a = self.bo.random_point(&mut self.init_rng);
        let b = self.bo.random_point(&mut self.init_rng);
        Pending {
            duel_id: self.history.len(),
            a,
            b,
            fallback: false,
        }
    }

    /// Records the judge's answer; returns the BO step still to run, if any.
    pub fn begin_outcome(&mut self, choice: Choice, duel_id: Option<usize>) -> Result<Step, ServiceError> {
        match self.status {
            Status::AwaitingFeedback => {}
            Status::Computing => return Err(ServiceError::Conflict("the next duel is still being computed".into())),
            Status::Finished => return Err(ServiceError::Conflict("session is finished".into())),
        }
        let pending = self
            .pending
            .clone()
            .ok_or_else(|| ServiceError::Conflict("no pending duel".into()))?;
        if let Some(id) = duel_id {
            if id != pending.duel_id {
                return Err(ServiceError::Conflict(format!(
                    "duel {id} is not pending (pending is {})",
                    pending.duel_id
                )));
            }
        }
        let winner = match choice {
            Choice::A => Winner::A,
            Choice::B => Winner::B,
        };
        self.bo
            .record(pending.a.clone(), pending.b.clone(), winner)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let (w, l) = match choice {
            Choice::A => (pending.a, pending.b),
            Choice::B => (pending.b, pending.a),
        };
        self.history.push(HistoryEntry {
            duel_id: pending.duel_id,
            chosen: choice,
            winner: w,
            loser: l,
        });
        self.pending = None;
        let t = self.history.len();
        if self.spec.max_duels.is_some_and(|max| t >= max) {
            self.status = Status::Finished;
            return Ok(Step::Ready);
        }
        if t < self.init_pairs {
            self.pending = Some(self.random_pair());
            return Ok(Step::Ready);
        }
        self.status = Status::Computing;
        Ok(Step::Compute(Box::new(ComputeJob {
            state: self.bo.clone(),
            method: self.spec.method,
            t,
        })))
    }

    /// Installs a finished BO step. A failed step duels the winner against a uniform point.
    pub fn finish(&mut self, result: ComputeResult) {
        debug_assert_eq!(result.t, self.history.len());
        let duel_id = self.history.len();
        self.pending = Some(match result.proposal {
            Ok(p) => {
                self.bo = result.state;
                Pending {
                    duel_id,
                    a: p.x1,
                    b: p.x2,
                    fallback: false,
                }
            }
            Err(_) => self.fallback_pair(),
        });
        self.status = Status::AwaitingFeedback;
    }

    /// Used when the BO step itself was lost.
    pub fn abort_compute(&mut self) {
        self.pending = Some(self.fallback_pair());
        self.status = Status::AwaitingFeedback;
    }

    fn fallback_pair(&mut self) -> Pending {
        let a = self.bo.current_winner().expect("a duel was recorded").to_vec();
        let b = self.bo.random_point(&mut self.init_rng);
        Pending {
            duel_id: self.history.len(),
            a,
            b,
            fallback: true,
        }
    }

    /// Synchronous outcome handling, used for log replay.
    pub fn submit_blocking(
        &mut self,
        choice: Choice,
        duel_id: Option<usize>,
        cfg: &BoConfig,
    ) -> Result<(), ServiceError> {
        if let Step::Compute(job) = self.begin_outcome(choice, duel_id)? {
            let result = job.run(cfg);
            self.finish(result);
        }
        Ok(())
    }

    fn candidate(&self, x: &[f64]) -> Candidate {
        let rgb = (self.spec.presentation == Presentation::ColorRgb).then(|| {
            let mut c = [0u8; 3];
            for (k, (v, [lo, hi])) in x.iter().zip(&self.bounds).enumerate() {
                c[k] = (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            c
        });
        Candidate { x: x.to_vec(), rgb }
    }

    fn duel_payload(&self) -> Option<DuelPayload> {
        self.pending.as_ref().map(|p| DuelPayload {
            duel_id: p.duel_id,
            phase: if p.duel_id < self.init_pairs {
                Phase::Initial
            } else {
                Phase::Acquisition
            },
            a: self.candidate(&p.a),
            b: self.candidate(&p.b),
            fallback: p.fallback,
        })
    }

    pub fn duel_response(&self) -> DuelResponse {
        DuelResponse {
            schema_version: SCHEMA_VERSION,
            session_id: self.id.clone(),
            status: self.status,
            duel: self.duel_payload(),
        }
    }

    pub fn state(&self) -> SessionState {
        let lengthscales = self.bo.kernel().lengthscales.clone();
        let grid = self
            .grid_cache
            .as_ref()
            .filter(|(t, ls, _)| *t == self.history.len() && *ls == lengthscales)
            .map(|(_, _, g)| g.clone());
        SessionState {
            schema_version: SCHEMA_VERSION,
            session_id: self.id.clone(),
            status: self.status,
            dimension: self.spec.dimension,
            bounds: self.bounds.clone(),
            presentation: self.spec.presentation,
            method: self.spec.method,
            init_pairs: self.init_pairs,
            max_duels: self.spec.max_duels,
            history: self.history.clone(),
            recommendation: self.history.last().map(|h| h.winner.clone()),
            pending: self.duel_payload(),
            lengthscales,
            grid,
        }
    }

    /// A grid job when `d ≤ 2` and the cached grid is stale.
    pub fn grid_job(&self) -> Option<GridJob> {
        if self.spec.dimension > 2 {
            return None;
        }
        let t = self.history.len();
        let ls = &self.bo.kernel().lengthscales;
        if self
            .grid_cache
            .as_ref()
            .is_some_and(|(ct, cls, _)| *ct == t && cls == ls)
        {
            return None;
        }
        Some(GridJob {
            data: self.bo.data().clone(),
            kernel: self.bo.kernel().clone(),
            bounds: self.bounds.clone(),
            seed: self.seed,
        })
    }

    pub fn store_grid(&mut self, job: &GridJob, grid: Grid) {
        if job.data.len() == self.history.len() && job.kernel == *self.bo.kernel() {
            self.grid_cache = Some((job.data.len(), job.kernel.lengthscales.clone(), grid));
        }
    }
}

impl GridJob {
    /// Posterior mean and equal-tailed credible band from reduced estimators.
    pub fn run(&self, cfg: &ServiceConfig) -> prefbo_core::Result<Grid> {
        let per_axis = if self.bounds.len() == 1 {
            cfg.grid_points_1d
        } else {
            cfg.grid_points_2d
        };
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|[lo, hi]| {
                (0..per_axis)
                    .map(|k| lo + (hi - lo) * k as f64 / (per_axis - 1).max(1) as f64)
                    .collect()
            })
            .collect();
        let points: Vec<Vec<f64>> = match axes.as_slice() {
            [x] => x.iter().map(|&a| vec![a]).collect(),
            [x, y] => x.iter().flat_map(|&a| y.iter().map(move |&b| vec![a, b])).collect(),
            _ => Vec::new(),
        };
        let mut rng = stream(self.seed.wrapping_add(self.data.len() as u64), GRID_STREAM);
        let sigma_vv = if self.data.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            duel_covariance(&self.data, &self.kernel)?
        };
        let chain = ChainConfig::new(cfg.grid_burn_in, 1, cfg.grid_samples)?;
        let batch = gibbs_chain(&sigma_vv, &chain, &mut rng)?;
        let post = SkewPosterior::from_points(points.clone(), &self.data, &self.kernel, None)?;
        let cb = post.condition_batch(&batch)?;
        let tail = (1.0 - CREDIBLE_LEVEL) / 2.0;
        let mut mean = Vec::with_capacity(points.len());
        let mut lower = Vec::with_capacity(points.len());
        let mut upper = Vec::with_capacity(points.len());
        for i in 0..points.len() {
            let m = cb.mean(i)?.value;
            let lo = cb.quantile(i, tail, QUANTILE_TOLERANCE)?.value;
            let hi = cb.quantile(i, 1.0 - tail, QUANTILE_TOLERANCE)?.value;
            // Bisection tolerance can leave a skewed band a hair inside the mean.
            mean.push(m);
            lower.push(lo.min(m));
            upper.push(hi.max(m));
        }
        Ok(Grid {
            credible_level: CREDIBLE_LEVEL,
            samples: batch.n_samples(),
            axes,
            points,
            mean,
            lower,
            upper,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize) -> CreateSession {
        serde_json::from_value(serde_json::json!({ "dimension": d })).unwrap()
    }

    #[test]
    fn initial_phase_serves_random_pairs_without_computing() {
        let cfg = ServiceConfig::default();
        let mut s = Session::create("s".into(), spec(1), 4, &cfg).unwrap();
        for k in 0..2 {
            assert!(matches!(s.begin_outcome(Choice::A, Some(k)).unwrap(), Step::Ready));
            assert_eq!(s.duel_response().duel.unwrap().phase, Phase::Initial);
        }
        assert!(matches!(s.begin_outcome(Choice::B, None).unwrap(), Step::Compute(_)));
        assert_eq!(s.status(), Status::Computing);
        assert!(s.begin_outcome(Choice::A, None).is_err());
    }

    #[test]
    fn failed_step_falls_back_to_winner_against_random_point() {
        let cfg = ServiceConfig::default();
        let mut s = Session::create(
            "s".into(),
            CreateSession {
                init_pairs: Some(1),
                ..spec(2)
            },
            1,
            &cfg,
        )
        .unwrap();
        let Step::Compute(job) = s.begin_outcome(Choice::A, Some(0)).unwrap() else {
            panic!("expected a BO step");
        };
        let mut result = job.run(&cfg.bo);
        result.proposal = Err(prefbo_core::Error::EmptyCandidates);
        s.finish(result);
        let d = s.duel_response().duel.unwrap();
        assert!(d.fallback);
        assert_eq!(Some(d.a.x), s.state().recommendation);
    }

    #[test]
    fn rgb_mapping_uses_bounds() {
        let cfg = ServiceConfig::default();
        let spec: CreateSession = serde_json::from_value(serde_json::json!({
            "dimension": 3, "presentation": "color_rgb", "bounds": [[0, 2], [0, 1], [-1, 1]]
        }))
        .unwrap();
        let s = Session::create("s".into(), spec, 0, &cfg).unwrap();
        assert_eq!(s.candidate(&[1.0, 1.0, -1.0]).rgb, Some([128, 255, 0]));
    }

    #[test]
    fn prior_grid_is_symmetric_band_around_zero() {
        let cfg = ServiceConfig::default();
        let s = Session::create("s".into(), spec(1), 0, &cfg).unwrap();
        let g = s.grid_job().unwrap().run(&cfg).unwrap();
        for i in 0..g.points.len() {
            assert_eq!(g.mean[i], 0.0);
            assert!((g.upper[i] - 1.6449).abs() < 2e-2, "{}", g.upper[i]);
            assert!((g.lower[i] + 1.6449).abs() < 2e-2);
        }
    }
}
