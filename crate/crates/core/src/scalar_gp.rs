//! Kernel ridge regression for the scalar-feedback GP-TS baseline.
//!
//! Repeated observations of the same point are pooled: with counts `c_j` and
//! mean observations `ō_j` on the distinct points, `(K_t + λI)⁻¹` reduces to
//! `(K_S + λ C⁻¹)⁻¹`, which gives the same mean and covariance.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::candidates::{point_key, CandidateSet};
use crate::kernels::{BaseKernel, KernelError, Point};
use crate::numeric::{factor_psd, NumericError, PsdFactor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalarGpError {
    #[error("{points} points but {observations} observations")]
    LengthMismatch { points: usize, observations: usize },
    #[error("regularization must be positive, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone)]
pub struct ScalarPosterior {
    points: Vec<Point>,
    observations: Vec<f64>,
    base: BaseKernel,
    lambda: f64,
    support: Vec<Point>,
    /// Factor of `K_S + λ C⁻¹` on the distinct points.
    factor: PsdFactor,
    alpha: DVector<f64>,
}

pub fn fit_scalar(
    points: &[Point],
    observations: &[f64],
    base: &BaseKernel,
    lambda: f64,
) -> Result<ScalarPosterior, ScalarGpError> {
    if points.len() != observations.len() {
        return Err(ScalarGpError::LengthMismatch { points: points.len(), observations: observations.len() });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ScalarGpError::InvalidLambda(lambda));
    }
    base.validate()?;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut support: Vec<Point> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    for (p, &o) in points.iter().zip(observations) {
        if let Some(first) = support.first() {
            if first.len() != p.len() {
                return Err(KernelError::DimensionMismatch(first.len(), p.len()).into());
            }
        }
        let j = *index.entry(point_key(p)).or_insert_with(|| {
            support.push(p.clone());
            counts.push(0.0);
            sums.push(0.0);
            support.len() - 1
        });
        counts[j] += 1.0;
        sums[j] += o;
    }
    let m = support.len();
    let mut reg = DMatrix::from_fn(m, m, |a, b| base.eval_unchecked(&support[a], &support[b]));
    for j in 0..m {
        reg[(j, j)] += lambda / counts[j];
    }
    let factor = factor_psd(&reg)?;
    let pooled = DVector::from_fn(m, |j, _| sums[j] / counts[j]);
    let alpha = factor.solve_vec(&pooled)?;
    Ok(ScalarPosterior {
        points: points.to_vec(),
        observations: observations.to_vec(),
        base: *base,
        lambda,
        support,
        factor,
        alpha,
    })
}

impl ScalarPosterior {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn base(&self) -> &BaseKernel {
        &self.base
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.support.len(), |j, _| self.base.eval_unchecked(x, &self.support[j]))
    }

    /// `(f̂_t(x), σ_t²(x))` with the variance clamped at zero.
    pub fn mean_var(&self, x: &[f64]) -> Result<(f64, f64), KernelError> {
        if let Some(s) = self.support.first() {
            if s.len() != x.len() {
                return Err(KernelError::DimensionMismatch(s.len(), x.len()));
            }
        }
        let kx = self.cross(x);
        let mean = kx.dot(&self.alpha);
        let mut w = DMatrix::from_column_slice(kx.len(), 1, kx.as_slice());
        self.factor.solve_lower_in_place(&mut w);
        let var = self.base.eval_unchecked(x, x) - w.norm_squared();
        Ok((mean, var.max(0.0)))
    }

    /// Posterior mean vector and covariance `k_t(x_i, x_j)` over the candidates.
    pub fn joint(&self, candidates: &CandidateSet) -> Result<(DVector<f64>, DMatrix<f64>), KernelError> {
        let pts = candidates.points();
        let n = pts.len();
        let m = self.support.len();
        if let Some(s) = self.support.first() {
            if s.len() != candidates.dim() {
                return Err(KernelError::DimensionMismatch(s.len(), candidates.dim()));
            }
        }
        let kcs = DMatrix::from_fn(m, n, |j, i| self.base.eval_unchecked(&pts[i], &self.support[j]));
        let mean = kcs.transpose() * &self.alpha;
        let mut cov = DMatrix::from_fn(n, n, |i, j| self.base.eval_unchecked(&pts[i], &pts[j]));
        if m > 0 {
            let mut w = kcs;
            self.factor.solve_lower_in_place(&mut w);
            cov -= w.transpose() * w;
        }
        Ok((mean, cov))
    }
}
