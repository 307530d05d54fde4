//! Wire types. Every response carries `schema_version`; fields only ever get added.

use prefbo_core::acquisition::AcquisitionKind;
use prefbo_core::bo::MethodSpec;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presentation {
    #[serde(rename = "color_rgb")]
    ColorRgb,
    #[serde(rename = "point_2d")]
    Point2d,
    #[default]
    #[serde(rename = "raw_vector")]
    RawVector,
}

impl Presentation {
    pub fn required_dimension(self) -> Option<usize> {
        match self {
            Self::ColorRgb => Some(3),
            Self::Point2d => Some(2),
            Self::RawVector => None,
        }
    }
}

fn default_method() -> MethodSpec {
    MethodSpec::preset(AcquisitionKind::HbEi)
}

/// Body of `POST /sessions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dimension: usize,
    /// `[lower, upper]` per coordinate; defaults to the unit cube.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub presentation: Presentation,
    #[serde(default = "default_method")]
    pub method: MethodSpec,
    /// Random duels before acquisitions engage; defaults to `3·dimension`.
    #[serde(default)]
    pub init_pairs: Option<usize>,
    /// The session finishes after this many answered duels.
    #[serde(default)]
    pub max_duels: Option<usize>,
    /// Overrides the seed derived from the server seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    A,
    B,
}

/// Body of `POST /sessions/{id}/outcome`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub winner: Choice,
    /// When present it must match the pending duel, which makes retries idempotent-safe.
    #[serde(default)]
    pub duel_id: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingFeedback,
    Computing,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Acquisition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<[u8; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelPayload {
    /// Number of duels answered before this one.
    pub duel_id: usize,
    pub phase: Phase,
    pub a: Candidate,
    pub b: Candidate,
    /// Set when the acquisition step failed and `b` is a uniform draw.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

/// Returned by `POST /sessions`, `POST .../outcome` and `GET .../duel`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub status: Status,
    pub duel: Option<DuelPayload>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub duel_id: usize,
    pub chosen: Choice,
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
}

/// Posterior summary of the latent utility on a regular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub credible_level: f64,
    pub samples: usize,
    /// Coordinates along each axis; `points` is their row-major product.
    pub axes: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Returned by `GET /sessions/{id}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub session_id: String,
    pub status: Status,
    pub dimension: usize,
    pub bounds: Vec<[f64; 2]>,
    pub presentation: Presentation,
    pub method: MethodSpec,
    pub init_pairs: usize,
    pub max_duels: Option<usize>,
    pub history: Vec<HistoryEntry>,
    /// Winner of the most recent duel.
    pub recommendation: Option<Vec<f64>>,
    pub pending: Option<DuelPayload>,
    pub lengthscales: Vec<f64>,
    /// Present for `dimension ≤ 2` only.
    pub grid: Option<Grid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub error: ErrorDetail,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presentation_names() {
        assert_eq!(serde_json::to_string(&Presentation::Point2d).unwrap(), "\"point_2d\"");
        let p: Presentation = serde_json::from_str("\"color_rgb\"").unwrap();
        assert_eq!(p.required_dimension(), Some(3));
    }

    #[test]
    fn create_defaults() {
        let c: CreateSession = serde_json::from_str(r#"{"dimension":2}"#).unwrap();
        assert_eq!(c.presentation, Presentation::RawVector);
        assert_eq!(c.method, MethodSpec::preset(AcquisitionKind::HbEi));
        assert!(serde_json::from_str::<CreateSession>(r#"{"dimension":2,"colour":1}"#).is_err());
    }

    #[test]
    fn fallback_flag_is_omitted_when_false() {
        let d = DuelPayload {
            duel_id: 0,
            phase: Phase::Initial,
            a: Candidate {
                x: vec![0.0],
                rgb: None,
            },
            b: Candidate {
                x: vec![1.0],
                rgb: None,
            },
            fallback: false,
        };
        let s = serde_json::to_string(&d).unwrap();
        assert!(!s.contains("fallback") && !s.contains("rgb"));
    }
}
