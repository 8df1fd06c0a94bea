use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, Rng};

/// Axis-aligned box with a seeded Latin-hypercube sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainJson", into = "DomainJson")]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    seed: u64,
    samples: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DomainJson {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default = "default_count")]
    samples: usize,
    #[serde(default)]
    seed: u64,
}

fn default_count() -> usize {
    DomainBox::DEFAULT_SAMPLES
}

impl TryFrom<DomainJson> for DomainBox {
    type Error = Error;

    fn try_from(j: DomainJson) -> Result<Self> {
        DomainBox::new(j.lower, j.upper, j.samples, j.seed)
    }
}

impl From<DomainBox> for DomainJson {
    fn from(d: DomainBox) -> Self {
        DomainJson { samples: d.samples.len(), lower: d.lower, upper: d.upper, seed: d.seed }
    }
}

impl DomainBox {
    pub const DEFAULT_SAMPLES: usize = 100;

    /// Box `[lower, upper]` with `count` Latin-hypercube points: each axis is
    /// cut into `count` equal strata, every stratum is hit exactly once, and
    /// points are uniform within their cell.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, count: usize, seed: u64) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch("box bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Domain("box needs finite lower < upper in every coordinate".into()));
        }
        let mut rng = seeded_rng(seed);
        let d = lower.len();
        let mut samples = vec![vec![0.0; d]; count];
        let mut strata: Vec<usize> = (0..count).collect();
        for c in 0..d {
            strata.shuffle(&mut rng);
            for (point, &s) in samples.iter_mut().zip(&strata) {
                let u = (s as f64 + rng.random::<f64>()) / count as f64;
                point[c] = (lower[c] + u * (upper[c] - lower[c])).clamp(lower[c], upper[c]);
            }
        }
        Ok(Self { lower, upper, seed, samples })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn uniform_point(&self, rng: &mut Rng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + rng.random::<f64>() * (u - l)).collect()
    }
}
