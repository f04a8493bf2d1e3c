//! Utilities, candidate grids and feedback oracles for simulation.

use std::collections::HashMap;
use std::f64::consts::{E, PI};
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{argmax, point_key, CandidateError, CandidateSet};
use crate::inference::LinkFunction;
use crate::kernels::{KernelError, RkhsSample};

pub const ACKLEY_A: f64 = 20.0;
pub const ACKLEY_B: f64 = 0.2;
pub const ACKLEY_C: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at {}column `{column}`: {message}", row.map(|r| format!("row {r}, ")).unwrap_or_default())]
    Parse { row: Option<usize>, column: String, message: String },
    #[error("table has no data rows")]
    EmptyData,
    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("point is not part of the tabular utility")]
    OutsideTable,
    #[error("invalid rescale: {0}")]
    InvalidRescale(String),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Standard Ackley function (minimum 0 at the origin).
pub fn ackley(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|v| (ACKLEY_C * v).cos()).sum::<f64>() / d;
    ACKLEY_A * (1.0 - (-ACKLEY_B * sq.sqrt()).exp()) + (E - cs.exp())
}

/// `−Ackley(x)`, maximized at the origin with value 0.
pub fn ackley_flipped(x: &[f64]) -> f64 {
    -ackley(x)
}

/// How tabular utilities are mapped before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rescale {
    /// Affine map with the column minimum sent to `lo` and the maximum to `hi`.
    MinMax { lo: f64, hi: f64 },
    DivideBy { divisor: f64 },
}

impl Rescale {
    fn apply(&self, values: &mut [f64]) -> Result<(), EnvironmentError> {
        match *self {
            Self::MinMax { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(EnvironmentError::InvalidRescale(format!("[{lo}, {hi}]")));
                }
                let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let span = max - min;
                for v in values.iter_mut() {
                    *v = if span > 0.0 { lo + (hi - lo) * (*v - min) / span } else { lo };
                }
            }
            Self::DivideBy { divisor } => {
                if !(divisor.is_finite() && divisor != 0.0) {
                    return Err(EnvironmentError::InvalidRescale(format!("divisor {divisor}")));
                }
                for v in values.iter_mut() {
                    *v /= divisor;
                }
            }
        }
        Ok(())
    }
}

/// Latent utility `f`.
#[derive(Debug, Clone)]
pub enum Utility {
    AckleyFlipped,
    Rkhs(RkhsSample),
    /// Defined only on the listed points.
    Tabular { values: Vec<f64>, index: HashMap<Vec<u64>, usize> },
}

impl Utility {
    pub fn tabular(points: &CandidateSet, values: Vec<f64>) -> Self {
        Self::Tabular { values, index: points.index_map() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::AckleyFlipped => "ackley_flipped",
            Self::Rkhs(_) => "rkhs_sample",
            Self::Tabular { .. } => "tabular",
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EnvironmentError> {
        match self {
            Self::AckleyFlipped => Ok(ackley_flipped(x)),
            Self::Rkhs(s) => Ok(s.eval(x)?),
            Self::Tabular { values, index } => {
                index.get(&point_key(x)).map(|&i| values[i]).ok_or(EnvironmentError::OutsideTable)
            }
        }
    }
}

/// A candidate grid with its utility cached on every point. `x*` is the grid
/// argmax (lowest index on ties).
#[derive(Debug, Clone)]
pub struct Environment {
    candidates: CandidateSet,
    utility: Utility,
    values: Vec<f64>,
    best: usize,
}

impl Environment {
    pub fn new(candidates: CandidateSet, utility: Utility) -> Result<Self, EnvironmentError> {
        let values = candidates.points().iter().map(|p| utility.eval(p)).collect::<Result<Vec<_>, _>>()?;
        let best = argmax(values.iter().copied()).ok_or(EnvironmentError::EmptyData)?;
        Ok(Self { candidates, utility, values, best })
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn utility(&self) -> &Utility {
        &self.utility
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn best_index(&self) -> usize {
        self.best
    }

    pub fn best_value(&self) -> f64 {
        self.values[self.best]
    }

    /// Dueling regret of the pair `(i, j)` against the grid argmax.
    pub fn regret(&self, i: usize, j: usize) -> f64 {
        regret_from_values(self.best_value(), self.values[i], self.values[j])
    }
}

/// Bradley–Terry–Luce comparisons with the logistic link.
#[derive(Debug, Clone)]
pub struct BtlOracle {
    utility: Utility,
    rng: ChaCha8Rng,
}

impl BtlOracle {
    pub fn new(utility: Utility, rng: ChaCha8Rng) -> Self {
        Self { utility, rng }
    }

    /// `Pr(y = 1 | x, x') = μ(f(x) − f(x'))`.
    pub fn probability(&self, x: &[f64], xp: &[f64]) -> Result<f64, EnvironmentError> {
        Ok(LinkFunction::mu(self.utility.eval(x)? - self.utility.eval(xp)?))
    }

    pub fn preference_feedback(&mut self, x: &[f64], xp: &[f64]) -> Result<bool, EnvironmentError> {
        let p = self.probability(x, xp)?;
        Ok(bernoulli(p, &mut self.rng))
    }

    /// Same draw as [`BtlOracle::preference_feedback`] for known utility values.
    pub fn compare_values(&mut self, fx: f64, fxp: f64) -> bool {
        bernoulli(LinkFunction::mu(fx - fxp), &mut self.rng)
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// `f(x) + σ ε` with `ε ~ N(0, 1)`; `noise_sd = 0` returns `f(x)` exactly.
pub fn scalar_feedback<R: Rng + ?Sized>(
    utility: &Utility,
    x: &[f64],
    noise_sd: f64,
    rng: &mut R,
) -> Result<f64, EnvironmentError> {
    let f = utility.eval(x)?;
    Ok(noisy(f, noise_sd, rng))
}

pub(crate) fn noisy<R: Rng + ?Sized>(f: f64, noise_sd: f64, rng: &mut R) -> f64 {
    if noise_sd == 0.0 {
        f
    } else {
        f + noise_sd * rng.sample::<f64, _>(StandardNormal)
    }
}

/// `(μ(f(x*) − f(x)) + μ(f(x*) − f(x')) − 1) / 2`.
pub fn instantaneous_regret(utility: &Utility, x_star: &[f64], x: &[f64], xp: &[f64]) -> Result<f64, EnvironmentError> {
    Ok(regret_from_values(utility.eval(x_star)?, utility.eval(x)?, utility.eval(xp)?))
}

pub fn regret_from_values(f_star: f64, fx: f64, fxp: f64) -> f64 {
    (LinkFunction::mu(f_star - fx) + LinkFunction::mu(f_star - fxp) - 1.0) / 2.0
}

/// Loads a CSV with a header row. Each row becomes a candidate made of the
/// feature columns; the utility column gives its value.
pub fn load_tabular(
    path: &Path,
    feature_columns: &[String],
    utility_column: &str,
    rescale: Option<Rescale>,
) -> Result<(CandidateSet, Utility), EnvironmentError> {
    let file = std::fs::File::open(path)
        .map_err(|e| EnvironmentError::Io { path: path.display().to_string(), message: e.to_string() })?;
    load_tabular_reader(file, feature_columns, utility_column, rescale)
}

pub fn load_tabular_reader<R: Read>(
    reader: R,
    feature_columns: &[String],
    utility_column: &str,
    rescale: Option<Rescale>,
) -> Result<(CandidateSet, Utility), EnvironmentError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EnvironmentError::Parse { row: None, column: String::new(), message: e.to_string() })?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| EnvironmentError::Parse {
            row: None,
            column: name.to_string(),
            message: "missing column".into(),
        })
    };
    let feature_idx = feature_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;
    let utility_idx = find(utility_column)?;

    let mut points = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| EnvironmentError::Parse { row: Some(row), column: String::new(), message: e.to_string() })?;
        let cell = |col: usize, name: &str| -> Result<f64, EnvironmentError> {
            let raw = rec.get(col).ok_or_else(|| EnvironmentError::Parse {
                row: Some(row),
                column: name.to_string(),
                message: "missing field".into(),
            })?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(EnvironmentError::NonNumeric { row, column: name.to_string(), value: raw.to_string() }),
            }
        };
        let p = feature_idx.iter().zip(feature_columns).map(|(&c, n)| cell(c, n)).collect::<Result<Vec<_>, _>>()?;
        points.push(p);
        values.push(cell(utility_idx, utility_column)?);
    }
    if points.is_empty() {
        return Err(EnvironmentError::EmptyData);
    }
    if let Some(r) = rescale {
        r.apply(&mut values)?;
    }
    let set = CandidateSet::new(points)?;
    let utility = Utility::tabular(&set, values);
    Ok((set, utility))
}
