//! Pair-selection policies.
//!
//! Every selector is a pure function of the posterior, its parameters and the
//! random stream it is handed. Ties go to the lowest candidate index.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{argmax, CandidateSet};
use crate::inference::{AnchoredPosterior, ExplorationSchedule, InferenceError, PrefPosterior};
use crate::kernels::KernelError;
use crate::numeric::{MvnSampler, NumericError};
use crate::scalar_gp::ScalarPosterior;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("pair table is {rows}x{cols}, expected square tables of equal size")]
    BadTable { rows: usize, cols: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A proposed duel `(x_t, x'_t)` as candidate indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub first: usize,
    pub second: usize,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl PairDecision {
    pub fn new(first: usize, second: usize) -> Self {
        Self { first, second, diagnostics: BTreeMap::new() }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

/// Policy choice and its parameters, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PolicySpec {
    Pfts {
        #[serde(default)]
        schedule: ExplorationSchedule,
    },
    /// Scalar-feedback GP-TS; the played pair is `(x_t, x_t)`.
    Gpts {
        #[serde(default)]
        schedule: ExplorationSchedule,
        /// Ridge of the scalar model; the run's `lambda` when absent.
        #[serde(default)]
        lambda: Option<f64>,
    },
    Maxminlcb {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Popbo {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    DuelUcb {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Random,
}

fn default_beta() -> f64 {
    1.0
}

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Pfts { .. } => "pfts",
            Self::Gpts { .. } => "gpts",
            Self::Maxminlcb { .. } => "maxminlcb",
            Self::Popbo { .. } => "popbo",
            Self::DuelUcb { .. } => "duel_ucb",
            Self::Random => "random",
        }
    }

    /// True for policies that learn from scalar observations.
    pub fn is_scalar(&self) -> bool {
        matches!(self, Self::Gpts { .. })
    }
}

/// PF-TS: two independent joint draws of `h̃(·, x₀)` with `x₀` the first
/// candidate; each pair member is the argmax of one draw.
pub fn pfts_select<R: Rng + ?Sized>(
    p: &PrefPosterior,
    c: &CandidateSet,
    v_t: f64,
    rng: &mut R,
) -> Result<PairDecision, PolicyError> {
    if c.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    let ap = p.anchored(c, c.point(0))?;
    pfts_from_anchored(&ap, v_t, rng)
}

/// PF-TS on an already anchored posterior.
pub fn pfts_from_anchored<R: Rng + ?Sized>(
    ap: &AnchoredPosterior,
    v_t: f64,
    rng: &mut R,
) -> Result<PairDecision, PolicyError> {
    if ap.mean.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    let (d1, d2) = if v_t == 0.0 {
        (ap.mean.clone(), ap.mean.clone())
    } else {
        let s = ap.sampler(v_t)?;
        let d1 = s.draw(rng);
        (d1, s.draw(rng))
    };
    let first = argmax(d1.iter().copied()).unwrap_or(0);
    let second = argmax(d2.iter().copied()).unwrap_or(0);
    Ok(PairDecision::new(first, second)
        .with("v_t", v_t)
        .with("anchor", 0.0)
        .with("sample_first", d1[first])
        .with("sample_second", d2[second]))
}

/// GP-TS on scalar feedback: argmax of one joint draw from `(f̂_t, v_t² k_t)`.
pub fn gpts_select<R: Rng + ?Sized>(
    p: &ScalarPosterior,
    c: &CandidateSet,
    v_t: f64,
    rng: &mut R,
) -> Result<usize, PolicyError> {
    if c.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    let (mean, cov) = p.joint(c)?;
    let draw = if v_t == 0.0 { mean } else { MvnSampler::new(mean, &(cov * (v_t * v_t)))?.draw(rng) };
    Ok(argmax(draw.iter().copied()).unwrap_or(0))
}

/// `h_t(x_i, x_j)` and `σ_t(x_i, x_j)` over all ordered candidate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    mean: DMatrix<f64>,
    sd: DMatrix<f64>,
}

impl PairTable {
    pub fn new(mean: DMatrix<f64>, sd: DMatrix<f64>) -> Result<Self, PolicyError> {
        if !mean.is_square() || mean.shape() != sd.shape() || mean.nrows() == 0 {
            return Err(PolicyError::BadTable { rows: sd.nrows(), cols: sd.ncols() });
        }
        Ok(Self { mean, sd })
    }

    /// Built from the anchored covariance through the dueling structure.
    pub fn from_posterior(p: &PrefPosterior, c: &CandidateSet) -> Result<Self, PolicyError> {
        if c.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let ap = p.anchored(c, c.point(0))?;
        let n = c.len();
        let mean = DMatrix::from_fn(n, n, |i, j| ap.pair_mean(i, j));
        let sd = DMatrix::from_fn(n, n, |i, j| ap.pair_variance(i, j).max(0.0).sqrt());
        Ok(Self { mean, sd })
    }

    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self, i: usize, j: usize) -> f64 {
        self.mean[(i, j)]
    }

    pub fn sd(&self, i: usize, j: usize) -> f64 {
        self.sd[(i, j)]
    }
}

/// MaxMinLCB (reference reimplementation). The inner minimum ranges over
/// every candidate, including `x` itself.
pub fn maxminlcb_select(p: &PrefPosterior, c: &CandidateSet, beta: f64) -> Result<PairDecision, PolicyError> {
    Ok(maxminlcb_from_table(&PairTable::from_posterior(p, c)?, beta))
}

pub fn maxminlcb_from_table(table: &PairTable, beta: f64) -> PairDecision {
    let n = table.len();
    let inner: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let lcb = (0..n).map(|j| -(table.mean(i, j) - beta * table.sd(i, j)));
            let j = argmax(lcb).unwrap_or(0);
            (j, table.mean(i, j) - beta * table.sd(i, j))
        })
        .collect();
    let first = argmax(inner.iter().map(|v| v.1)).unwrap_or(0);
    let (second, value) = inner[first];
    PairDecision::new(first, second).with("beta", beta).with("value", value)
}

/// POP-BO (reference reimplementation): the second arm is carried over from
/// the previous round's first arm (the first candidate in round one) and the
/// first arm maximizes the optimistic index against it.
pub fn popbo_select(
    p: &PrefPosterior,
    c: &CandidateSet,
    previous: Option<usize>,
    beta: f64,
) -> Result<PairDecision, PolicyError> {
    let anchor = previous.unwrap_or(0);
    if anchor >= c.len() {
        return Err(PolicyError::IndexOutOfRange { index: anchor, len: c.len() });
    }
    let ap = p.anchored(c, c.point(anchor))?;
    let first = argmax(ucb_index(&ap, beta)).unwrap_or(0);
    Ok(PairDecision::new(first, anchor).with("beta", beta).with("anchor", anchor as f64))
}

pub fn popbo_from_table(table: &PairTable, previous: Option<usize>, beta: f64) -> PairDecision {
    let anchor = previous.unwrap_or(0);
    let first = argmax((0..table.len()).map(|i| table.mean(i, anchor) + beta * table.sd(i, anchor))).unwrap_or(0);
    PairDecision::new(first, anchor).with("beta", beta).with("anchor", anchor as f64)
}

/// Anchored dueling UCB: `argmax_x h_t(x, x₀) + β σ_t(x, x₀)`.
pub fn duel_ucb_select(p: &PrefPosterior, c: &CandidateSet, anchor: &[f64], beta: f64) -> Result<usize, PolicyError> {
    if c.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    let ap = p.anchored(c, anchor)?;
    Ok(argmax(ucb_index(&ap, beta)).unwrap_or(0))
}

fn ucb_index(ap: &AnchoredPosterior, beta: f64) -> impl Iterator<Item = f64> + '_ {
    (0..ap.mean.len()).map(move |i| ap.mean[i] + beta * ap.cov[(i, i)].max(0.0).sqrt())
}

/// Uniform independent pair.
pub fn random_select<R: Rng + ?Sized>(c: &CandidateSet, rng: &mut R) -> Result<PairDecision, PolicyError> {
    if c.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    let first = rng.random_range(0..c.len());
    let second = rng.random_range(0..c.len());
    Ok(PairDecision::new(first, second))
}
