//! Preferential posterior: regularized logistic-loss predictor on the dueling
//! kernel, the λκ-regularized uncertainty proxy, realized information gain,
//! confidence widths, and Thompson draws on a candidate grid.
//!
//! # Representation
//!
//! With `m` distinct support points `S` and the `t × m` signed incidence
//! matrix `D` (row `i` is `e(x_i) − e(x'_i)`), the dueling Gram of the history
//! is `K^Δ_t = D K_S Dᵀ`. Writing `DᵀD = E Λ Eᵀ` (nonzero part), the matrix
//! `Q = D E Λ^{-1/2}` is an orthonormal basis of `range(D)` and
//! `K^Δ_t = Q P Qᵀ` with `P = R K_S Rᵀ`, `R = Λ^{1/2} Eᵀ`.
//!
//! The logistic loss in the coefficients `θ ∈ R^t` only depends on `θ`
//! through `K^Δ_t θ`, and `‖θ‖²` is minimized by keeping `θ ∈ range(Q)`, so
//! the minimizer is `θ = Q a` for the minimizer `a ∈ R^r` of the same loss
//! with `K^Δ_t` replaced by `P` and `‖θ‖ = ‖a‖`. Likewise
//! `(K^Δ_t + λκI)` acts on `range(Q)` as `P + λκI`, which is what gets
//! factored. All per-iteration work is `O(t·r + m³)` instead of `O(t³)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{point_key, CandidateSet};
use crate::kernels::{DuelingKernel, KernelError, Point, PointPair};
use crate::numeric::{factor_psd, MvnSampler, NumericError, PsdFactor};

/// Gradient norm that counts as converged.
pub const GRAD_TOL: f64 = 1e-6;
/// Gradient norm above which a fit that ran out of iterations is an error.
pub const GRAD_FAIL: f64 = 1e-3;
pub const MAX_NEWTON_ITERS: usize = 100;
/// Default regularization for the preference model.
pub const DEFAULT_LAMBDA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("regularization must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("norm bound must be nonnegative and finite, got {0}")]
    InvalidNormBound(f64),
    #[error("Newton iterations did not converge (gradient norm {grad_norm:e})")]
    NoConvergence { grad_norm: f64 },
    #[error("probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// The logistic link `μ(u) = 1 / (1 + e^{−u})`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkFunction;

impl LinkFunction {
    /// `sup μ̇ = μ̇(0) = 1/4`.
    pub const LIPSCHITZ: f64 = 0.25;

    #[inline]
    pub fn mu(u: f64) -> f64 {
        if u >= 0.0 {
            1.0 / (1.0 + (-u).exp())
        } else {
            let e = u.exp();
            e / (1.0 + e)
        }
    }

    #[inline]
    pub fn mu_dot(u: f64) -> f64 {
        let m = Self::mu(u);
        m * (1.0 - m)
    }

    /// `log(1 + e^u)`, the logistic loss of a `y = 0` label at score `u`.
    #[inline]
    pub fn softplus(u: f64) -> f64 {
        if u > 0.0 {
            u + (-u).exp().ln_1p()
        } else {
            u.exp().ln_1p()
        }
    }

    /// `κ = 1 / μ̇(2B)`: bound on `1/μ̇` over utility gaps `|f(x) − f(x')| ≤ 2B`.
    pub fn kappa(norm_bound: f64) -> f64 {
        let m = Self::mu(2.0 * norm_bound);
        1.0 / (m * (1.0 - m))
    }
}

/// One comparison: `label` is `true` iff `first` was preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub first: Point,
    pub second: Point,
    pub label: bool,
}

impl PreferenceRecord {
    pub fn y(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

/// Append-only comparison history `H_t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceHistory {
    records: Vec<PreferenceRecord>,
}

impl PreferenceHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, first: Point, second: Point, label: bool) {
        self.records.push(PreferenceRecord { first, second, label });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    /// The first `t` records.
    pub fn prefix(&self, t: usize) -> Self {
        Self { records: self.records[..t].to_vec() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Loss after every accepted Newton step, starting with the loss at θ = 0.
    pub loss_trace: Vec<f64>,
}

/// Fitted preferential posterior `(h_t, k^Δ_t)`.
#[derive(Debug, Clone)]
pub struct PrefPosterior {
    history: PreferenceHistory,
    dueling: DuelingKernel,
    lambda: f64,
    kappa: f64,
    norm_bound: f64,
    support: Vec<Point>,
    /// `R` (`r × m`) with `RᵀR = DᵀD`.
    compress: DMatrix<f64>,
    theta: DVector<f64>,
    /// `g_t(x) = Σ_j weights_j k(x, s_j)` and `h_t(x, x') = g_t(x) − g_t(x')`.
    weights: DVector<f64>,
    cov_factor: PsdFactor,
    realized_gain: f64,
    diagnostics: FitDiagnostics,
}

struct Structure {
    support: Vec<Point>,
    pair_index: Vec<(usize, usize)>,
    /// Orthonormal `t × r` basis of `range(D)`.
    basis: DMatrix<f64>,
    compress: DMatrix<f64>,
    /// `E_r Λ_r^{-1/2}` (`m × r`), maps `DᵀWD` to `QᵀWQ`.
    whiten: DMatrix<f64>,
    reduced_gram: DMatrix<f64>,
}

fn build_structure(history: &PreferenceHistory, dk: &DuelingKernel) -> Result<Structure, InferenceError> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut support: Vec<Point> = Vec::new();
    let mut pair_index = Vec::with_capacity(history.len());
    let dim = history.records.first().map(|r| r.first.len());
    let mut intern = |p: &Point, support: &mut Vec<Point>| -> Result<usize, InferenceError> {
        if Some(p.len()) != dim {
            return Err(KernelError::DimensionMismatch(dim.unwrap_or(0), p.len()).into());
        }
        Ok(*index.entry(point_key(p)).or_insert_with(|| {
            support.push(p.clone());
            support.len() - 1
        }))
    };
    for rec in &history.records {
        let i = intern(&rec.first, &mut support)?;
        let j = intern(&rec.second, &mut support)?;
        pair_index.push((i, j));
    }
    let m = support.len();
    let t = pair_index.len();

    let mut lap = DMatrix::<f64>::zeros(m, m);
    for &(i, j) in &pair_index {
        if i != j {
            lap[(i, i)] += 1.0;
            lap[(j, j)] += 1.0;
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
        }
    }
    let (vecs, vals) = if m > 0 {
        let eig = SymmetricEigen::new(lap);
        let top = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v));
        let keep: Vec<usize> = (0..m).filter(|&k| eig.eigenvalues[k] > 1e-9 * top).collect();
        let vecs = DMatrix::from_fn(m, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
        let vals: Vec<f64> = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
        (vecs, vals)
    } else {
        (DMatrix::zeros(0, 0), Vec::new())
    };
    let r = vals.len();
    let whiten = DMatrix::from_fn(m, r, |row, c| vecs[(row, c)] / vals[c].sqrt());
    let compress = DMatrix::from_fn(r, m, |row, c| vecs[(c, row)] * vals[row].sqrt());
    let mut basis = DMatrix::zeros(t, r);
    for (k, &(i, j)) in pair_index.iter().enumerate() {
        if i != j {
            for c in 0..r {
                basis[(k, c)] = whiten[(i, c)] - whiten[(j, c)];
            }
        }
    }
    let base = &dk.base;
    let support_gram = DMatrix::from_fn(m, m, |a, b| base.eval_unchecked(&support[a], &support[b]));
    let mut reduced_gram = &compress * support_gram * compress.transpose();
    reduced_gram = (&reduced_gram + reduced_gram.transpose()) * 0.5;
    Ok(Structure { support, pair_index, basis, compress, whiten, reduced_gram })
}

struct Objective<'a> {
    basis: &'a DMatrix<f64>,
    reduced_gram: &'a DMatrix<f64>,
    labels: &'a [f64],
    lambda: f64,
}

impl Objective<'_> {
    fn scores(&self, a: &DVector<f64>) -> DVector<f64> {
        self.basis * (self.reduced_gram * a)
    }

    fn loss(&self, a: &DVector<f64>) -> f64 {
        let s = self.scores(a);
        let data: f64 = s.iter().zip(self.labels).map(|(&u, &y)| LinkFunction::softplus(u) - y * u).sum();
        data + 0.5 * self.lambda * a.norm_squared()
    }

    fn gradient(&self, a: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        let resid = DVector::from_fn(s.len(), |i, _| LinkFunction::mu(s[i]) - self.labels[i]);
        self.reduced_gram * (self.basis.transpose() * resid) + a * self.lambda
    }
}

/// Fits `h_t` by damped Newton on the regularized logistic loss and builds the
/// uncertainty proxy with `κ = 1/μ̇(2B)`.
pub fn fit(
    history: &PreferenceHistory,
    dueling: &DuelingKernel,
    lambda: f64,
    norm_bound: f64,
) -> Result<PrefPosterior, InferenceError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(InferenceError::InvalidLambda(lambda));
    }
    if !(norm_bound >= 0.0 && norm_bound.is_finite()) {
        return Err(InferenceError::InvalidNormBound(norm_bound));
    }
    dueling.base.validate()?;
    let kappa = LinkFunction::kappa(norm_bound);
    let st = build_structure(history, dueling)?;
    let r = st.reduced_gram.nrows();
    let labels: Vec<f64> = history.records.iter().map(PreferenceRecord::y).collect();
    let obj = Objective { basis: &st.basis, reduced_gram: &st.reduced_gram, labels: &labels, lambda };

    let mut a = DVector::zeros(r);
    let mut loss = obj.loss(&a);
    let mut diagnostics = FitDiagnostics { loss_trace: vec![loss], ..Default::default() };
    let mut grad_norm = 0.0;
    for iter in 0..=MAX_NEWTON_ITERS {
        let s = obj.scores(&a);
        let grad = obj.gradient(&a, &s);
        grad_norm = grad.norm();
        diagnostics.iterations = iter;
        if grad_norm <= 1e-3 * GRAD_TOL || iter == MAX_NEWTON_ITERS {
            break;
        }
        // Hessian P (QᵀWQ) P + λI, with QᵀWQ = whitenᵀ (DᵀWD) whiten
        let m = st.support.len();
        let mut dwd = DMatrix::<f64>::zeros(m, m);
        for (k, &(i, j)) in st.pair_index.iter().enumerate() {
            if i != j {
                let w = LinkFunction::mu_dot(s[k]);
                dwd[(i, i)] += w;
                dwd[(j, j)] += w;
                dwd[(i, j)] -= w;
                dwd[(j, i)] -= w;
            }
        }
        let qwq = st.whiten.transpose() * dwd * &st.whiten;
        let mut hess = &st.reduced_gram * qwq * &st.reduced_gram;
        for d in 0..r {
            hess[(d, d)] += lambda;
        }
        let hf = factor_psd(&hess)?;
        let step = -hf.solve_vec(&grad)?;
        let slope = grad.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &a + &step * alpha;
            let l = obj.loss(&cand);
            if l <= loss + 1e-4 * alpha * slope {
                accepted = Some((cand, l));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, l)) if l < loss || grad_norm > GRAD_TOL => {
                a = cand;
                loss = l;
                diagnostics.loss_trace.push(l);
            }
            // at the floating-point floor of the loss
            _ => break,
        }
    }
    diagnostics.gradient_norm = grad_norm;
    if grad_norm > GRAD_FAIL {
        return Err(InferenceError::NoConvergence { grad_norm });
    }

    let theta = &st.basis * &a;
    let weights = st.compress.transpose() * &a;
    let rho = lambda * kappa;
    let mut reg = st.reduced_gram.clone();
    for d in 0..r {
        reg[(d, d)] += rho;
    }
    let cov_factor = factor_psd(&reg)?;
    let realized_gain = 0.5 * (cov_factor.log_det() - r as f64 * rho.ln());

    Ok(PrefPosterior {
        history: history.clone(),
        dueling: *dueling,
        lambda,
        kappa,
        norm_bound,
        support: st.support,
        compress: st.compress,
        theta,
        weights,
        cov_factor,
        realized_gain,
        diagnostics,
    })
}

impl PrefPosterior {
    pub fn history(&self) -> &PreferenceHistory {
        &self.history
    }

    pub fn t(&self) -> usize {
        self.history.len()
    }

    pub fn dueling(&self) -> &DuelingKernel {
        &self.dueling
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Representer coefficients `θ ∈ R^t`.
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    /// Factor of `(K^Δ_t + λκI)` restricted to the span of the data.
    pub fn cov_factor(&self) -> &PsdFactor {
        &self.cov_factor
    }

    pub fn support(&self) -> &[Point] {
        &self.support
    }

    /// Full `t × t` dueling Gram `K^Δ_t`, evaluated from the kernel.
    pub fn gram(&self) -> DMatrix<f64> {
        let t = self.t();
        let recs = self.history.records();
        let mut g = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let v = self.dueling.eval_points(&recs[i].first, &recs[i].second, &recs[j].first, &recs[j].second);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `‖∇_θ L(θ)‖` recomputed directly in the `t`-dimensional parameterization.
    pub fn gradient_norm(&self) -> f64 {
        if self.t() == 0 {
            return 0.0;
        }
        let g = self.gram();
        let s = &g * &self.theta;
        let resid = DVector::from_fn(self.t(), |i, _| LinkFunction::mu(s[i]) - self.history.records[i].y());
        (&g * resid + &self.theta * self.lambda).norm()
    }

    /// Regularized logistic loss at `θ`.
    pub fn loss_at(&self, theta: &DVector<f64>) -> f64 {
        if self.t() == 0 {
            return 0.0;
        }
        let s = self.gram() * theta;
        let data: f64 = s
            .iter()
            .zip(self.history.records())
            .map(|(&u, r)| LinkFunction::softplus(u) - r.y() * u)
            .sum();
        data + 0.5 * self.lambda * theta.norm_squared()
    }

    fn check_dim(&self, p: &[f64]) -> Result<(), KernelError> {
        match self.support.first() {
            Some(s) if s.len() != p.len() => Err(KernelError::DimensionMismatch(s.len(), p.len())),
            _ => Ok(()),
        }
    }

    /// `g_t(x)`: the posterior mean is `h_t(x, x') = g_t(x) − g_t(x')`.
    pub fn latent_score(&self, x: &[f64]) -> f64 {
        let base = &self.dueling.base;
        self.support.iter().zip(self.weights.iter()).map(|(s, w)| w * base.eval_unchecked(x, s)).sum()
    }

    /// `h_t(z) = Σ_i θ_i k^Δ(z, z_i)`.
    pub fn predict_mean(&self, z: &PointPair) -> Result<f64, KernelError> {
        self.check_dim(&z.first)?;
        self.check_dim(&z.second)?;
        Ok(self.latent_score(&z.first) - self.latent_score(&z.second))
    }

    /// Whitened data-space image `L⁻¹ R c(z)` of a pair.
    fn whitened(&self, x: &[f64], xp: &[f64]) -> DVector<f64> {
        let base = &self.dueling.base;
        let c = DVector::from_fn(self.support.len(), |j, _| {
            base.eval_unchecked(x, &self.support[j]) - base.eval_unchecked(xp, &self.support[j])
        });
        let mut v = DMatrix::from_column_slice(self.compress.nrows(), 1, (&self.compress * c).as_slice());
        self.cov_factor.solve_lower_in_place(&mut v);
        DVector::from_column_slice(v.as_slice())
    }

    /// `k^Δ_t(z1, z2) = k^Δ(z1, z2) − k^Δ_t(z1)ᵀ (K^Δ_t + λκI)⁻¹ k^Δ_t(z2)`.
    pub fn predict_var(&self, z1: &PointPair, z2: &PointPair) -> Result<f64, KernelError> {
        let prior = self.dueling.eval(z1, z2)?;
        self.check_dim(&z1.first)?;
        let u1 = self.whitened(&z1.first, &z1.second);
        let u2 = self.whitened(&z2.first, &z2.second);
        Ok(prior - u1.dot(&u2))
    }

    /// `σ_t(z)`, with negative round-off clamped to zero.
    pub fn sigma(&self, z: &PointPair) -> Result<f64, KernelError> {
        Ok(self.predict_var(z, z)?.max(0.0).sqrt())
    }

    /// Realized `½ log det(I + (λκ)⁻¹ K^Δ_t)` of the played pairs.
    pub fn information_gain(&self) -> f64 {
        self.realized_gain
    }

    /// `β_t(δ) = 4B + 2 sqrt((2κ/λ)(Γ̂(t) + log(1/δ)))`.
    pub fn beta(&self, delta: f64) -> Result<f64, InferenceError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(InferenceError::InvalidProbability(delta));
        }
        let inner = 2.0 * self.kappa / self.lambda * (self.realized_gain + (1.0 / delta).ln());
        Ok(4.0 * self.norm_bound + 2.0 * inner.sqrt())
    }

    /// Mean `h_t(x_i, x0)` and covariance `k^Δ_t((x_i, x0), (x_j, x0))` over
    /// the candidates.
    pub fn anchored(&self, candidates: &CandidateSet, anchor: &[f64]) -> Result<AnchoredPosterior, KernelError> {
        self.check_dim(anchor)?;
        if candidates.dim() != anchor.len() {
            return Err(KernelError::DimensionMismatch(anchor.len(), candidates.dim()));
        }
        let pts = candidates.points();
        let n = pts.len();
        let base = &self.dueling.base;
        let g0 = self.latent_score(anchor);
        let mean = DVector::from_fn(n, |i, _| self.latent_score(&pts[i]) - g0);

        let k0: Vec<f64> = pts.iter().map(|p| base.eval_unchecked(p, anchor)).collect();
        let k00 = base.eval_unchecked(anchor, anchor);
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = (base.eval_unchecked(&pts[i], &pts[j]) - k0[j]) - (k0[i] - k00);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let m = self.support.len();
        if m > 0 && self.compress.nrows() > 0 {
            let ks0: Vec<f64> = self.support.iter().map(|s| base.eval_unchecked(anchor, s)).collect();
            let c = DMatrix::from_fn(m, n, |j, i| base.eval_unchecked(&pts[i], &self.support[j]) - ks0[j]);
            let mut u = &self.compress * c;
            self.cov_factor.solve_lower_in_place(&mut u);
            cov -= u.transpose() * u;
        }
        Ok(AnchoredPosterior { mean, cov })
    }

    /// Joint Thompson draw of `f̃(x) = h̃(x, x0)` over the candidates, from
    /// `GP(h_t, v_t² k^Δ_t)`. The implied pair sample is `f̃(x) − f̃(x')`.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        candidates: &CandidateSet,
        anchor: &[f64],
        v_t: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>, InferenceError> {
        let ap = self.anchored(candidates, anchor)?;
        ap.sample(v_t, rng)
    }
}

/// Posterior restricted to `{(x, x0) : x ∈ candidates}`.
#[derive(Debug, Clone)]
pub struct AnchoredPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl AnchoredPosterior {
    pub fn sample<R: Rng + ?Sized>(&self, v_t: f64, rng: &mut R) -> Result<DVector<f64>, InferenceError> {
        if v_t == 0.0 {
            return Ok(self.mean.clone());
        }
        Ok(self.sampler(v_t)?.draw(rng))
    }

    /// Factors `v_t² K` once for repeated draws.
    pub fn sampler(&self, v_t: f64) -> Result<MvnSampler, InferenceError> {
        Ok(MvnSampler::new(self.mean.clone(), &(&self.cov * (v_t * v_t)))?)
    }

    /// `σ_t(x_i, x_j)²` through the dueling structure of the posterior
    /// covariance: `k_t(i,i) + k_t(j,j) − 2 k_t(i,j)`.
    pub fn pair_variance(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, i)] + self.cov[(j, j)] - 2.0 * self.cov[(i, j)]
    }

    /// `h_t(x_i, x_j) = h_t(x_i, x0) − h_t(x_j, x0)`.
    pub fn pair_mean(&self, i: usize, j: usize) -> f64 {
        self.mean[i] - self.mean[j]
    }
}

/// Exploration scale `v_t` used for Thompson draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplorationSchedule {
    /// `v_t² = sqrt(t + 1 + log(2/δ))` with `δ = 0.05` in the experiments.
    Practical {
        #[serde(default = "default_schedule_delta")]
        delta: f64,
    },
    /// `v_t = β_t(δ)` from the fitted posterior.
    Theory { delta: f64 },
    Constant { value: f64 },
}

fn default_schedule_delta() -> f64 {
    0.05
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self::Practical { delta: 0.05 }
    }
}

impl ExplorationSchedule {
    /// Scale for round `t` (1-based). `posterior` is only consulted by the
    /// theory schedule.
    pub fn v_t(&self, t: usize, posterior: Option<&PrefPosterior>) -> Result<f64, InferenceError> {
        match *self {
            Self::Practical { delta } => Ok((t as f64 + 1.0 + (2.0 / delta).ln()).sqrt().sqrt()),
            Self::Theory { delta } => match posterior {
                Some(p) => p.beta(delta),
                None => Err(InferenceError::InvalidProbability(delta)),
            },
            Self::Constant { value } => Ok(value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BaseKernel;
    use crate::numeric::min_eigenvalue;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dk() -> DuelingKernel {
        DuelingKernel::new(BaseKernel::default())
    }

    /// Golden-section minimization on [lo, hi].
    fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        while hi - lo > 1e-12 {
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - g * (hi - lo);
            d = lo + g * (hi - lo);
        }
        0.5 * (lo + hi)
    }

    /// Two far-apart points so that k^Δ(z1, z1) = 2 to machine precision.
    fn far_pair() -> PointPair {
        PointPair::new(vec![0.0], vec![50.0])
    }

    #[test]
    fn link_properties() {
        assert_eq!(LinkFunction::mu(0.0), 0.5);
        for u in [-30.0, -2.0, -0.1, 0.3, 4.0, 40.0] {
            assert!((LinkFunction::mu(u) + LinkFunction::mu(-u) - 1.0).abs() < 1e-15);
            assert!(LinkFunction::mu_dot(u) <= LinkFunction::LIPSCHITZ);
            assert!((LinkFunction::softplus(u) - (1.0 + u.exp()).ln()).abs() < 1e-12 * u.abs().max(1.0));
        }
        assert!(LinkFunction::mu(1.0) > LinkFunction::mu(0.9));
        assert_eq!(LinkFunction::mu_dot(0.0), 0.25);
    }

    #[test]
    fn empty_history_is_prior() {
        let p = fit(&PreferenceHistory::new(), &dk(), 0.05, 1.0).unwrap();
        assert_eq!(p.theta().len(), 0);
        let z = PointPair::new(vec![0.1], vec![0.4]);
        let z2 = PointPair::new(vec![0.3], vec![0.2]);
        assert_eq!(p.predict_mean(&z).unwrap(), 0.0);
        assert_eq!(p.predict_var(&z, &z2).unwrap(), dk().eval(&z, &z2).unwrap());
        assert_eq!(p.information_gain(), 0.0);
    }

    #[test]
    fn single_record_matches_golden_section() {
        let z = far_pair();
        assert!((dk().eval(&z, &z).unwrap() - 2.0).abs() < 1e-15);
        let mut h = PreferenceHistory::new();
        h.push(z.first.clone(), z.second.clone(), true);
        let p = fit(&h, &dk(), 0.05, 1.0).unwrap();
        let oracle = golden(|th| -LinkFunction::mu(2.0 * th).ln() + 0.025 * th * th, -50.0, 50.0);
        assert!((p.theta()[0] - oracle).abs() < 1e-6, "{} vs {oracle}", p.theta()[0]);
        assert!((p.predict_mean(&z).unwrap() - 2.0 * oracle).abs() < 1e-6);
        assert!(p.gradient_norm() <= GRAD_TOL);
    }

    #[test]
    fn contradictory_records_give_zero_mean() {
        let z = PointPair::new(vec![0.2], vec![0.7]);
        let mut h = PreferenceHistory::new();
        for _ in 0..5 {
            h.push(z.first.clone(), z.second.clone(), true);
            h.push(z.first.clone(), z.second.clone(), false);
        }
        let p = fit(&h, &dk(), 0.05, 1.0).unwrap();
        assert!(p.predict_mean(&z).unwrap().abs() < 1e-6);
    }

    #[test]
    fn mean_examples() {
        let mut h = PreferenceHistory::new();
        h.push(vec![0.1], vec![0.5], true);
        h.push(vec![0.9], vec![0.5], false);
        let p = fit(&h, &dk(), 0.05, 1.0).unwrap();
        let z = PointPair::new(vec![0.12], vec![0.55]);
        assert_eq!(p.predict_mean(&PointPair::new(vec![0.3], vec![0.3])).unwrap(), 0.0);
        assert_eq!(p.predict_mean(&z).unwrap(), -p.predict_mean(&z.swapped()).unwrap());
    }

    #[test]
    fn one_record_variance_closed_form() {
        // k^Δ(z1,z1) = 2 and λκ = 1: 2 − 2·2/(2+1) = 2/3
        let z = far_pair();
        let mut h = PreferenceHistory::new();
        h.push(z.first.clone(), z.second.clone(), true);
        // κ = 20 ⇔ μ̇(2B) = 1/20 ⇔ μ(2B) = (1 + sqrt(0.8)) / 2
        let mu = (1.0 + 0.8f64.sqrt()) / 2.0;
        let b = 0.5 * (mu / (1.0 - mu)).ln();
        let p = fit(&h, &dk(), 0.05, b).unwrap();
        assert!((p.lambda() * p.kappa() - 1.0).abs() < 1e-12);
        assert!((p.predict_var(&z, &z).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let diag = PointPair::new(vec![0.4], vec![0.4]);
        assert_eq!(p.predict_var(&diag, &diag).unwrap(), 0.0);
        assert!(((p.information_gain()) - 0.5 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_examples() {
        let p = fit(&PreferenceHistory::new(), &dk(), 0.05, 1.0).unwrap();
        assert!((p.kappa() - 9.5244).abs() < 1e-3);
        let expected = 4.0 + 2.0 * (2.0 * p.kappa() / 0.05 * 20f64.ln()).sqrt();
        assert!((p.beta(0.05).unwrap() - expected).abs() < 1e-12);
        assert!((p.beta(0.05).unwrap() - 71.56).abs() < 0.02);
        assert!(p.beta(0.0).is_err());
        assert!(p.beta(1.0).is_err());
    }

    #[test]
    fn invalid_parameters() {
        let h = PreferenceHistory::new();
        assert_eq!(fit(&h, &dk(), 0.0, 1.0).unwrap_err(), InferenceError::InvalidLambda(0.0));
        assert!(matches!(fit(&h, &dk(), 0.1, -1.0), Err(InferenceError::InvalidNormBound(_))));
        let mut bad = PreferenceHistory::new();
        bad.push(vec![0.0], vec![0.0, 1.0], true);
        assert!(matches!(fit(&bad, &dk(), 0.1, 1.0), Err(InferenceError::Kernel(_))));
    }

    fn random_history(t: usize, n: usize, seed: u64) -> (PreferenceHistory, CandidateSet) {
        let grid = CandidateSet::linspace(0.0, 1.0, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = PreferenceHistory::new();
        for _ in 0..t {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            h.push(grid.point(i).clone(), grid.point(j).clone(), rng.random_bool(0.6));
        }
        (h, grid)
    }

    #[test]
    fn loss_decreases_monotonically() {
        let (h, _) = random_history(60, 12, 5);
        let p = fit(&h, &dk(), 0.05, 1.0).unwrap();
        let tr = &p.diagnostics().loss_trace;
        assert!(tr.len() >= 2);
        assert!(tr.windows(2).all(|w| w[1] <= w[0]));
        assert!(p.gradient_norm() <= GRAD_TOL);
        assert!((p.loss_at(p.theta()) - tr.last().unwrap()).abs() < 1e-8 * tr[0].max(1.0));
    }

    #[test]
    fn anchored_posterior_pins_anchor() {
        let (h, grid) = random_history(20, 10, 9);
        let p = fit(&h, &dk(), 0.05, 1.0).unwrap();
        let anchor = grid.point(3).clone();
        let ap = p.anchored(&grid, &anchor).unwrap();
        assert_eq!(ap.mean[3], 0.0);
        assert!((0..grid.len()).all(|j| ap.cov[(3, j)] == 0.0 && ap.cov[(j, 3)] == 0.0));
        assert!(min_eigenvalue(&ap.cov) >= -1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = p.sample_posterior(&grid, &anchor, 2.0, &mut rng).unwrap();
        assert_eq!(draw[3], 0.0);
        let collapsed = p.sample_posterior(&grid, &anchor, 0.0, &mut rng).unwrap();
        assert_eq!(collapsed, ap.mean);
    }

    #[test]
    fn pair_variance_through_anchor_matches_direct() {
        let (h, grid) = random_history(25, 8, 11);
        let p = fit(&h, &dk(), 0.05, 1.0).unwrap();
        let ap = p.anchored(&grid, grid.point(0)).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let z = PointPair::new(grid.point(i).clone(), grid.point(j).clone());
                assert!((ap.pair_variance(i, j) - p.predict_var(&z, &z).unwrap()).abs() < 1e-10);
                assert!((ap.pair_mean(i, j) - p.predict_mean(&z).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sequential_gain_identity() {
        let (h, _) = random_history(20, 15, 21);
        let dk = dk();
        let full = fit(&h, &dk, 0.05, 1.0).unwrap();
        let rho = full.lambda() * full.kappa();
        let mut acc = 0.0;
        for s in 0..h.len() {
            let prev = fit(&h.prefix(s), &dk, 0.05, 1.0).unwrap();
            let r = &h.records()[s];
            let z = PointPair::new(r.first.clone(), r.second.clone());
            acc += 0.5 * (1.0 + prev.predict_var(&z, &z).unwrap() / rho).ln();
        }
        assert!((acc - full.information_gain()).abs() < 1e-6);
    }

    #[test]
    fn practical_schedule() {
        let s = ExplorationSchedule::default();
        let v = s.v_t(1, None).unwrap();
        assert!((v * v - (2.0 + 40f64.ln()).sqrt()).abs() < 1e-12);
        assert!(ExplorationSchedule::Theory { delta: 0.1 }.v_t(1, None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn variance_shrinks_along_trajectory(seed in any::<u64>(), n in 3usize..15) {
                let (h, grid) = random_history(30, n, seed);
                let dk = dk();
                let probe = PointPair::new(grid.point(0).clone(), grid.point(n - 1).clone());
                let mut prev = f64::INFINITY;
                let mut prev_gain = 0.0;
                for t in (0..=30).step_by(5) {
                    let p = fit(&h.prefix(t), &dk, 0.05, 1.0).unwrap();
                    let s = p.sigma(&probe).unwrap();
                    prop_assert!(s <= prev + 1e-9);
                    prop_assert!(p.information_gain() >= prev_gain - 1e-12);
                    prev = s;
                    prev_gain = p.information_gain();
                }
            }

            #[test]
            fn fitted_gradient_is_small(seed in any::<u64>(), t in 1usize..60, lam in 0.01f64..1.0) {
                let (h, _) = random_history(t, 10, seed);
                let p = fit(&h, &dk(), lam, 1.0).unwrap();
                prop_assert!(p.gradient_norm() <= GRAD_TOL);
            }
        }
    }
}
