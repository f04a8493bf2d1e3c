//! Base kernels on the action space, the induced dueling kernel on pairs,
//! Gram assembly, and an RKHS test-function generator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{factor_psd, NumericError};
use crate::CandidateSet;

pub type Point = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unsupported Matérn smoothness {0}; supported values are 0.5, 1.5 and 2.5")]
    UnsupportedSmoothness(f64),
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern { nu: f64 },
}

/// Stationary kernel `k(x, u) = signal_variance * ρ(‖x − u‖ / ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub lengthscale: f64,
    #[serde(default = "one")]
    pub signal_variance: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for BaseKernel {
    /// Matérn-5/2 with ℓ = 0.1 and unit variance.
    fn default() -> Self {
        Self::matern52(0.1)
    }
}

impl BaseKernel {
    pub fn matern52(lengthscale: f64) -> Self {
        Self { family: KernelFamily::Matern { nu: 2.5 }, lengthscale, signal_variance: 1.0 }
    }

    pub fn squared_exponential(lengthscale: f64) -> Self {
        Self { family: KernelFamily::SquaredExponential, lengthscale, signal_variance: 1.0 }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(KernelError::InvalidParameter("lengthscale must be positive"));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(KernelError::InvalidParameter("signal_variance must be positive"));
        }
        if let KernelFamily::Matern { nu } = self.family {
            if ![0.5, 1.5, 2.5].contains(&nu) {
                return Err(KernelError::UnsupportedSmoothness(nu));
            }
        }
        Ok(())
    }

    /// Kernel value as a function of the distance `r`.
    pub fn of_distance(&self, r: f64) -> f64 {
        let s = r / self.lengthscale;
        let shape = match self.family {
            KernelFamily::SquaredExponential => (-0.5 * s * s).exp(),
            KernelFamily::Matern { nu } if nu == 0.5 => (-s).exp(),
            KernelFamily::Matern { nu } if nu == 1.5 => {
                let a = 3f64.sqrt() * s;
                (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern { .. } => {
                let a = 5f64.sqrt() * s;
                (1.0 + a + 5.0 * s * s / 3.0) * (-a).exp()
            }
        };
        self.signal_variance * shape
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, KernelError> {
        if x.len() != u.len() {
            return Err(KernelError::DimensionMismatch(x.len(), u.len()));
        }
        Ok(self.eval_unchecked(x, u))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], u: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
        self.of_distance(r2.sqrt())
    }

    /// Cross Gram `[k(a_i, b_j)]`.
    pub fn cross_gram(&self, a: &[Point], b: &[Point]) -> Result<DMatrix<f64>, KernelError> {
        check_dims(a.iter().chain(b.iter()))?;
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval_unchecked(&a[i], &b[j])))
    }
}

fn check_dims<'a>(mut pts: impl Iterator<Item = &'a Point>) -> Result<(), KernelError> {
    if let Some(first) = pts.next() {
        let d = first.len();
        for p in pts {
            if p.len() != d {
                return Err(KernelError::DimensionMismatch(d, p.len()));
            }
        }
    }
    Ok(())
}

/// A pair of actions `z = (x, x')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub first: Point,
    pub second: Point,
}

impl PointPair {
    pub fn new(first: Point, second: Point) -> Self {
        Self { first, second }
    }

    pub fn swapped(&self) -> Self {
        Self { first: self.second.clone(), second: self.first.clone() }
    }
}

/// Kernel on pairs induced by a base kernel:
/// `k((x,x'),(u,u')) = k(x,u) + k(x',u') − k(x,u') − k(x',u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuelingKernel {
    pub base: BaseKernel,
}

impl DuelingKernel {
    pub fn new(base: BaseKernel) -> Self {
        Self { base }
    }

    pub fn eval(&self, z1: &PointPair, z2: &PointPair) -> Result<f64, KernelError> {
        let d = z1.first.len();
        for p in [&z1.second, &z2.first, &z2.second] {
            if p.len() != d {
                return Err(KernelError::DimensionMismatch(d, p.len()));
            }
        }
        Ok(self.eval_points(&z1.first, &z1.second, &z2.first, &z2.second))
    }

    /// Grouped so that `z1 = (x, x)` gives exactly zero and swapping either
    /// pair flips the sign exactly.
    #[inline]
    pub(crate) fn eval_points(&self, x: &[f64], xp: &[f64], u: &[f64], up: &[f64]) -> f64 {
        let k = &self.base;
        (k.eval_unchecked(x, u) - k.eval_unchecked(xp, u))
            - (k.eval_unchecked(x, up) - k.eval_unchecked(xp, up))
    }
}

/// Anything with a symmetric kernel over some input type.
pub trait Kernel {
    type Input;
    fn k(&self, a: &Self::Input, b: &Self::Input) -> Result<f64, KernelError>;
}

impl Kernel for BaseKernel {
    type Input = Point;
    fn k(&self, a: &Point, b: &Point) -> Result<f64, KernelError> {
        self.eval(a, b)
    }
}

impl Kernel for DuelingKernel {
    type Input = PointPair;
    fn k(&self, a: &PointPair, b: &PointPair) -> Result<f64, KernelError> {
        self.eval(a, b)
    }
}

/// Symmetric Gram matrix; only the lower triangle is evaluated.
pub fn gram<K: Kernel>(kernel: &K, items: &[K::Input]) -> Result<DMatrix<f64>, KernelError> {
    if items.is_empty() {
        return Err(KernelError::Empty);
    }
    let n = items.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.k(&items[i], &items[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// `f(x) = Σ_j w_j k(x, c_j)` with `wᵀ K w = B²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RkhsSample {
    pub centers: Vec<Point>,
    pub weights: Vec<f64>,
    pub base: BaseKernel,
    pub norm_bound: f64,
}

impl RkhsSample {
    pub fn eval(&self, x: &[f64]) -> Result<f64, KernelError> {
        let mut acc = 0.0;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            acc += w * self.base.eval(x, c)?;
        }
        Ok(acc)
    }

    /// Squared RKHS norm `wᵀ K w`.
    pub fn squared_norm(&self) -> Result<f64, KernelError> {
        let k = gram(&self.base, &self.centers)?;
        let w = DVector::from_column_slice(&self.weights);
        Ok(w.dot(&(&k * &w)))
    }
}

/// Draws standard-normal weights on the grid points and rescales them so the
/// RKHS norm is exactly `target_norm`.
pub fn draw_rkhs_sample<R: Rng + ?Sized>(
    base: &BaseKernel,
    grid: &CandidateSet,
    target_norm: f64,
    rng: &mut R,
) -> Result<RkhsSample, KernelError> {
    base.validate()?;
    let centers = grid.points().to_vec();
    let k = gram(base, &centers)?;
    // the factorization certifies the Gram is usable; its value is not needed
    factor_psd(&k)?;
    let w = DVector::from_fn(centers.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let sq = w.dot(&(&k * &w));
    let scale = if target_norm == 0.0 || sq <= 0.0 { 0.0 } else { target_norm / sq.sqrt() };
    Ok(RkhsSample {
        centers,
        weights: w.iter().map(|v| v * scale).collect(),
        base: *base,
        norm_bound: target_norm,
    })
}

/// Empirical Mercer decomposition on a grid.
#[derive(Debug, Clone)]
pub struct MercerTruncation {
    /// Top eigenvalues of `K / n`, descending.
    pub eigenvalues: Vec<f64>,
    /// Column `m` holds `φ_m` evaluated on the grid.
    pub eigenfunctions: DMatrix<f64>,
}

impl MercerTruncation {
    /// `Σ_m γ_m φ_m φ_mᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.eigenfunctions.nrows();
        let mut out = DMatrix::zeros(n, n);
        for (m, g) in self.eigenvalues.iter().enumerate() {
            let col = self.eigenfunctions.column(m);
            out += col * col.transpose() * *g;
        }
        out
    }
}

pub fn mercer_truncation(
    base: &BaseKernel,
    grid: &CandidateSet,
    m: usize,
) -> Result<MercerTruncation, KernelError> {
    let n = grid.len();
    if m > n {
        return Err(KernelError::DimensionMismatch(m, n));
    }
    let k = gram(base, grid.points())? / n as f64;
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order[..m].iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenfunctions = DMatrix::from_fn(n, m, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(MercerTruncation { eigenvalues, eigenfunctions })
}
