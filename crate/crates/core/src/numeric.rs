//! Positive-semidefinite factorization, solves and Gaussian sampling.
//!
//! Gram matrices built from the dueling kernel are exactly rank-deficient
//! whenever a pair repeats, so factoring falls back to a small jitter ladder
//! (`1e-12, 1e-11, ..., 1e-4`) before giving up.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// First rung of the jitter ladder.
pub const JITTER_MIN: f64 = 1e-12;
/// Last rung of the jitter ladder.
pub const JITTER_MAX: f64 = 1e-4;
/// Eigenvalues down to `-EIGEN_CLAMP * scale` are treated as round-off and clamped to zero.
pub const EIGEN_CLAMP: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("matrix is not positive semidefinite (failed with jitter {jitter:e})")]
    NotPsd { jitter: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Lower Cholesky factor of `M + jitter_used * I`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl PsdFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// `log det(M + jitter I)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L · Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `L x = b` in place (forward substitution).
    pub fn solve_lower_in_place(&self, rhs: &mut DMatrix<f64>) {
        if self.dim() > 0 {
            self.lower.solve_lower_triangular_mut(rhs);
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, NumericError> {
        let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        let s = solve_psd(self, &m)?;
        Ok(DVector::from_column_slice(s.as_slice()))
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky-type factorization with the jitter ladder.
///
/// The input is symmetrized by averaging with its transpose first.
pub fn factor_psd(m: &DMatrix<f64>) -> Result<PsdFactor, NumericError> {
    if !m.is_square() {
        return Err(NumericError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let sym = symmetrized(m);
    if sym.nrows() == 0 {
        return Ok(PsdFactor { lower: sym, jitter_used: 0.0 });
    }
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(PsdFactor { lower: ch.unpack(), jitter_used: 0.0 });
    }
    let mut jitter = JITTER_MIN;
    loop {
        let mut shifted = sym.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok(PsdFactor { lower: ch.unpack(), jitter_used: jitter });
        }
        if jitter >= JITTER_MAX * (1.0 - 1e-9) {
            return Err(NumericError::NotPsd { jitter });
        }
        jitter *= 10.0;
    }
}

/// Solves `(M + jitter I) s = rhs` for every column of `rhs`.
pub fn solve_psd(f: &PsdFactor, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericError> {
    if rhs.nrows() != f.dim() {
        return Err(NumericError::DimensionMismatch { expected: f.dim(), got: rhs.nrows() });
    }
    let mut out = rhs.clone();
    if f.dim() == 0 {
        return Ok(out);
    }
    f.lower.solve_lower_triangular_mut(&mut out);
    f.lower.tr_solve_lower_triangular_mut(&mut out);
    Ok(out)
}

/// Draws `mean + L ε` with `ε` i.i.d. standard normal taken from `rng`.
///
/// Coordinates with zero variance are returned as the mean exactly. The rest
/// of the covariance is factored with the jitter ladder; if that fails, the
/// eigendecomposition is used with small negative eigenvalues clamped to zero.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>, NumericError> {
    Ok(MvnSampler::new(mean.clone(), cov)?.draw(rng))
}

/// A prepared Gaussian: factor once, draw many times.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    active: Vec<usize>,
    root: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self, NumericError> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(NumericError::DimensionMismatch { expected: n, got: cov.nrows() });
        }
        let sym = symmetrized(cov);
        let scale = sym.diagonal().iter().fold(0.0f64, |a, &d| a.max(d.abs())).max(1.0);
        let mut active = Vec::with_capacity(n);
        for i in 0..n {
            let d = sym[(i, i)];
            if d < -EIGEN_CLAMP * scale {
                return Err(NumericError::NotPsd { jitter: 0.0 });
            }
            if d > 0.0 {
                active.push(i);
            }
        }
        let k = active.len();
        let reduced = DMatrix::from_fn(k, k, |i, j| sym[(active[i], active[j])]);
        let root = match factor_psd(&reduced) {
            Ok(f) => f.lower,
            Err(_) => {
                let eig = SymmetricEigen::new(reduced);
                if eig.eigenvalues.min() < -EIGEN_CLAMP * scale {
                    return Err(NumericError::NotPsd { jitter: JITTER_MAX });
                }
                let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let mut root = eig.eigenvectors;
                for (c, s) in sqrt_vals.iter().enumerate() {
                    root.column_mut(c).scale_mut(*s);
                }
                root
            }
        };
        Ok(Self { mean, active, root })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut out = self.mean.clone();
        if self.active.is_empty() {
            return out;
        }
        // one normal per coordinate, so a given ε lands on the same candidates
        // whichever coordinates are pinned
        let full = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = DVector::from_fn(self.active.len(), |k, _| full[self.active[k]]);
        let draw = &self.root * eps;
        for (slot, &i) in self.active.iter().enumerate() {
            out[i] += draw[slot];
        }
        out
    }
}

/// Smallest eigenvalue of a symmetric matrix (symmetrized first).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrized(m)).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = factor_psd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.lower(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(f.jitter_used(), 0.0);
    }

    #[test]
    fn hand_cholesky_two_by_two() {
        let m = dmatrix![4.0, 2.0; 2.0, 5.0];
        let f = factor_psd(&m).unwrap();
        let expected = dmatrix![2.0, 0.0; 1.0, 2.0];
        assert!((f.lower() - &expected).amax() < 1e-14);
        assert!(rel_err(&f.reconstruct(), &m) < 1e-12);
    }

    #[test]
    fn rank_one_needs_small_jitter() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let f = factor_psd(&m).unwrap();
        assert!(f.jitter_used() > 0.0 && f.jitter_used() <= 1e-8);
        let target = &m + DMatrix::identity(2, 2) * f.jitter_used();
        assert!(rel_err(&f.reconstruct(), &target) < 1e-8);
    }

    #[test]
    fn strongly_indefinite_is_rejected() {
        let m = dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(matches!(factor_psd(&m), Err(NumericError::NotPsd { .. })));
    }

    #[test]
    fn solve_examples() {
        let f = factor_psd(&DMatrix::identity(3, 3)).unwrap();
        let r = dmatrix![1.0; -2.0; 3.5];
        assert_eq!(solve_psd(&f, &r).unwrap(), r);

        let f = factor_psd(&dmatrix![4.0, 2.0; 2.0, 5.0]).unwrap();
        let s = solve_psd(&f, &dmatrix![1.0; 0.0]).unwrap();
        assert!((s[0] - 5.0 / 16.0).abs() < 1e-14);
        assert!((s[1] + 1.0 / 8.0).abs() < 1e-14);

        assert!(matches!(
            solve_psd(&f, &DMatrix::zeros(3, 1)),
            Err(NumericError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_direction_solve_has_small_residual() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let f = factor_psd(&m).unwrap();
        let rhs = dmatrix![1.0; -1.0];
        let s = solve_psd(&f, &rhs).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        let jittered = &m + DMatrix::identity(2, 2) * f.jitter_used();
        let resid = (&jittered * &s - &rhs).norm();
        assert!(resid <= 1e-8 * rhs.norm(), "residual {resid}");
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let x = sample_mvn(&mean, &DMatrix::zeros(3, 3), &mut rng).unwrap();
        assert_eq!(x, mean);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 3;
        let n = 10_000;
        let mean = DVector::zeros(d);
        let cov = DMatrix::identity(d, d);
        let mut sum = DVector::<f64>::zeros(d);
        let mut sq = DVector::<f64>::zeros(d);
        for _ in 0..n {
            let x = sample_mvn(&mean, &cov, &mut rng).unwrap();
            sum += &x;
            sq += x.component_mul(&x);
        }
        let se = (1.0 / n as f64).sqrt();
        for i in 0..d {
            let m = sum[i] / n as f64;
            let v = sq[i] / n as f64 - m * m;
            assert!(m.abs() < 5.0 * se, "mean {m}");
            assert!((0.9..=1.1).contains(&v), "var {v}");
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let mean = DVector::from_vec(vec![0.5, 0.0]);
        let cov = dmatrix![2.0, 0.3; 0.3, 1.0];
        let a = sample_mvn(&mean, &cov, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = sample_mvn(&mean, &cov, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slightly_negative_eigenvalue_is_clamped() {
        // rank-deficient PSD matrix perturbed by round-off sized negative mass
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let mut cov = &v * v.transpose();
        cov[(0, 0)] -= 1e-10;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = sample_mvn(&DVector::zeros(3), &cov, &mut rng).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn random_psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
            &a * a.transpose()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn factor_reconstructs(n in 1usize..60, extra in 0usize..8, seed in any::<u64>()) {
                let m = random_psd(n, n + extra, seed);
                let f = factor_psd(&m).unwrap();
                let target = &m + DMatrix::identity(n, n) * f.jitter_used();
                prop_assert!(rel_err(&f.reconstruct(), &target) <= 1e-8);
                prop_assert!(f.jitter_used() == 0.0 || (JITTER_MIN..=JITTER_MAX).contains(&f.jitter_used()));
            }

            #[test]
            fn solve_residual_bounded(n in 1usize..40, seed in any::<u64>()) {
                let mut m = random_psd(n, n, seed);
                for i in 0..n { m[(i, i)] += 0.1; }
                let f = factor_psd(&m).unwrap();
                let rhs = DMatrix::from_fn(n, 2, |i, j| (i + 2 * j) as f64 - 1.5);
                let s = solve_psd(&f, &rhs).unwrap();
                let target = &m + DMatrix::identity(n, n) * f.jitter_used();
                prop_assert!((&target * &s - &rhs).norm() <= 1e-8 * rhs.norm());
            }

            #[test]
            fn low_rank_factor_reconstructs(n in 2usize..40, rank in 1usize..4, seed in any::<u64>()) {
                let m = random_psd(n, rank.min(n - 1), seed);
                let f = factor_psd(&m).unwrap();
                let target = &m + DMatrix::identity(n, n) * f.jitter_used();
                prop_assert!(rel_err(&f.reconstruct(), &target) <= 1e-8);
            }
        }
    }

    #[test]
    fn large_psd_reconstructs() {
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = &a * a.transpose();
        let f = factor_psd(&m).unwrap();
        let target = &m + DMatrix::identity(n, n) * f.jitter_used();
        assert!(rel_err(&f.reconstruct(), &target) <= 1e-8);
    }
}
