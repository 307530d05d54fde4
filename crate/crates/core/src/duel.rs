//! Preference dataset: ordered winner/loser pairs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One observed comparison `winner ≻ loser`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duel {
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
}

impl Duel {
    pub fn new(winner: Vec<f64>, loser: Vec<f64>) -> Result<Self> {
        check_dim(winner.len(), loser.len())?;
        if winner.iter().chain(&loser).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("duel inputs must be finite".into()));
        }
        Ok(Self { winner, loser })
    }
}

#[derive(Deserialize)]
struct RawDataset {
    dimension: usize,
    duels: Vec<Duel>,
}

/// Ordered sequence of duels sharing one input dimension.
///
/// Duplicated inputs across duels stay as distinct rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct DuelDataset {
    dimension: usize,
    duels: Vec<Duel>,
}

impl TryFrom<RawDataset> for DuelDataset {
    type Error = Error;

    fn try_from(raw: RawDataset) -> Result<Self> {
        let mut data = DuelDataset::new(raw.dimension)?;
        for duel in raw.duels {
            data.push(duel)?;
        }
        Ok(data)
    }
}

impl DuelDataset {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self {
            dimension,
            duels: Vec::new(),
        })
    }

    pub fn from_duels(dimension: usize, duels: Vec<Duel>) -> Result<Self> {
        RawDataset { dimension, duels }.try_into()
    }

    pub fn push(&mut self, duel: Duel) -> Result<()> {
        let duel = Duel::new(duel.winner, duel.loser)?;
        check_dim(self.dimension, duel.winner.len())?;
        self.duels.push(duel);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.duels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duels.is_empty()
    }

    pub fn duels(&self) -> &[Duel] {
        &self.duels
    }

    pub fn winners(&self) -> impl Iterator<Item = &[f64]> {
        self.duels.iter().map(|d| d.winner.as_slice())
    }

    pub fn losers(&self) -> impl Iterator<Item = &[f64]> {
        self.duels.iter().map(|d| d.loser.as_slice())
    }

    /// The `2t` training inputs: all winners, then all losers.
    pub fn training_inputs(&self) -> Vec<Vec<f64>> {
        self.winners().chain(self.losers()).map(<[f64]>::to_vec).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serialization is infallible")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Design matrix with rows: test points, winners (duel order), losers.
pub fn stack_inputs(tes: &[Vec<f64>], data: &DuelDataset) -> Result<DMatrix<f64>> {
    let d = data.dimension();
    for x in tes {
        check_dim(d, x.len())?;
    }
    let rows: Vec<&[f64]> = tes
        .iter()
        .map(Vec::as_slice)
        .chain(data.winners())
        .chain(data.losers())
        .collect();
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}
