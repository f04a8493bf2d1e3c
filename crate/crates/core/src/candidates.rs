use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CandidateError {
    #[error("candidate set is empty")]
    Empty,
    #[error("point {index} has dimension {got}, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("point {index} lies outside the bounds")]
    OutOfBounds { index: usize },
    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },
}

/// Fixed, ordered, finite action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    points: Vec<Point>,
    bounds: Vec<(f64, f64)>,
}

impl CandidateSet {
    /// Bounds are the per-dimension min/max of the points.
    pub fn new(points: Vec<Point>) -> Result<Self, CandidateError> {
        let d = points.first().ok_or(CandidateError::Empty)?.len();
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for (index, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(CandidateError::Ragged { index, expected: d, got: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(CandidateError::NonFinite { index });
            }
            for (b, &v) in bounds.iter_mut().zip(p) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        Ok(Self { points, bounds })
    }

    pub fn with_bounds(points: Vec<Point>, bounds: Vec<(f64, f64)>) -> Result<Self, CandidateError> {
        let set = Self::new(points)?;
        if bounds.len() != set.dim() {
            return Err(CandidateError::Ragged { index: 0, expected: set.dim(), got: bounds.len() });
        }
        for (index, p) in set.points.iter().enumerate() {
            if p.iter().zip(&bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
                return Err(CandidateError::OutOfBounds { index });
            }
        }
        Ok(Self { points: set.points, bounds })
    }

    /// `n` evenly spaced points on `[lo, hi]` (1-d).
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 1, "linspace needs at least one point");
        let points = (0..n)
            .map(|i| {
                if n == 1 {
                    vec![lo]
                } else {
                    vec![lo + (hi - lo) * i as f64 / (n - 1) as f64]
                }
            })
            .collect();
        Self { points, bounds: vec![(lo, hi)] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Index of the candidate with exactly these coordinates.
    pub fn index_of(&self, p: &[f64]) -> Option<usize> {
        self.points.iter().position(|q| q.as_slice() == p)
    }

    /// Lookup table from exact coordinates to index (first occurrence wins).
    pub fn index_map(&self) -> HashMap<Vec<u64>, usize> {
        let mut map = HashMap::with_capacity(self.len());
        for (i, p) in self.points.iter().enumerate() {
            map.entry(point_key(p)).or_insert(i);
        }
        map
    }
}

/// Bit-exact hash key of a point.
pub(crate) fn point_key(p: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 compare equal, keep them on one key
    p.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// Index of the maximum, lowest index on ties. NaN entries never win.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            _ if v.is_nan() => {}
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
