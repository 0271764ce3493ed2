//! Stochastic estimators of the dual gradient (and of the primal gradient for
//! the mixed baseline), plus random Fourier features.
//!
//! Estimators are stateless: they take the evaluation point and the sampled
//! indices explicitly. Coordinate estimators return a [`SparseGradient`] so a
//! step costs `O(B·n)` kernel work instead of a full product.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{InputMatrix, KernelFamily, KernelSpec};
use crate::linalg::dot;
use crate::objective::RegressionProblem;
use crate::rng::{stream, Component, StreamRng};

/// Default number of random Fourier features for prior function samples.
pub const DEFAULT_PRIOR_FEATURES: usize = 2_000;

/// Default gradient clipping threshold for the mixed primal estimator.
pub const DEFAULT_CLIP_NORM: f64 = 0.1;

/// Default number of regulariser features for the mixed primal estimator.
pub const DEFAULT_REGULARISER_FEATURES: usize = 100;

/// A gradient estimate supported on a few coordinates, optionally plus a
/// dense component.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    pub len: usize,
    /// Coordinate indices; duplicates contribute additively.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dense_part: Option<DVector<f64>>,
}

impl SparseGradient {
    pub fn to_dense(&self) -> DVector<f64> {
        let mut out = self.dense_part.clone().unwrap_or_else(|| DVector::zeros(self.len));
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += v;
        }
        out
    }
}

/// How a minibatch of coordinates is drawn each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// Independent uniform draws, duplicates kept.
    #[default]
    WithReplacement,
    /// A uniform subset of distinct indices.
    WithoutReplacement,
    /// Every index exactly once (requires `B = n`); turns the estimator into
    /// the exact gradient.
    Full,
}

pub fn draw_batch(rng: &mut StreamRng, n: usize, size: usize, sampling: BatchSampling) -> Vec<usize> {
    match sampling {
        BatchSampling::WithReplacement => (0..size).map(|_| rng.random_range(0..n)).collect(),
        BatchSampling::WithoutReplacement => index::sample(rng, n, size.min(n)).into_vec(),
        BatchSampling::Full => (0..n).collect(),
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match indices.iter().find(|&&i| i >= len) {
        Some(&i) => Err(Error::IndexOutOfRange { index: i, len }),
        None => Ok(()),
    }
}

/// Random-coordinate estimate of the dual gradient at the lookahead point θ:
/// `(n/B) Σ_{i∈I} ((K_i + λe_i)ᵀθ − b_i) e_i`.
pub fn rc_batch(p: &RegressionProblem, theta: &DVector<f64>, batch: &[usize]) -> Result<SparseGradient> {
    p.check_len(theta)?;
    let n = p.len();
    check_indices(batch, n)?;
    let scale = n as f64 / batch.len() as f64;
    let lambda = p.noise();
    let op = p.operator();
    let values = batch
        .iter()
        .map(|&i| scale * (dot(&op.row_unchecked(i), theta.as_slice()) + lambda * theta[i] - p.rhs()[i]))
        .collect();
    Ok(SparseGradient {
        len: n,
        indices: batch.to_vec(),
        values,
        dense_part: None,
    })
}

/// Variant that subsamples only the `Kα` term:
/// `(n/B) Σ_{i∈I} e_i e_iᵀ(Kα) + λα − b`.
///
/// Unbiased, but its noise no longer vanishes at the optimum.
pub fn rb_rc_estimate(p: &RegressionProblem, alpha: &DVector<f64>, batch: &[usize]) -> Result<SparseGradient> {
    p.check_len(alpha)?;
    let n = p.len();
    check_indices(batch, n)?;
    let scale = n as f64 / batch.len() as f64;
    let op = p.operator();
    let values = batch
        .iter()
        .map(|&i| scale * dot(&op.row_unchecked(i), alpha.as_slice()))
        .collect();
    let dense = alpha * p.noise() - p.rhs();
    Ok(SparseGradient {
        len: n,
        indices: batch.to_vec(),
        values,
        dense_part: Some(dense),
    })
}

/// Random-feature estimate `λα − b + (m/B) Σ_{j∈J} Z_j Z_jᵀ α`, unbiased for
/// the dual gradient of the problem whose Gram matrix is `Σ_j Z_j Z_jᵀ`.
pub fn rf_estimate(
    p: &RegressionProblem,
    alpha: &DVector<f64>,
    z: &FeatureMatrix,
    features: &[usize],
) -> Result<DVector<f64>> {
    p.check_len(alpha)?;
    if z.rows() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: z.rows(),
        });
    }
    check_indices(features, z.len())?;
    let scale = z.len() as f64 / features.len() as f64;
    let mut out = alpha * p.noise() - p.rhs();
    z.accumulate_outer(alpha.as_slice(), features, scale, out.as_mut_slice());
    Ok(out)
}

/// The regulariser term of the mixed primal estimator.
#[derive(Debug, Clone, Copy)]
pub enum Regulariser<'a> {
    /// `λ Σ_j z_j z_jᵀ α` with random features evaluated at the inputs.
    Features(&'a FeatureMatrix),
    /// `λ K α`, for checking unbiasedness against the exact primal gradient.
    Exact,
}

/// Mixed multiplicative-additive primal estimate
/// `(n/B) Σ_{i∈I} K_i (K_iᵀα − b_i) + λ Σ_j z_j z_jᵀ α`, clipped in 2-norm to
/// `clip_norm` after both terms are summed.
pub fn sgd_mixed_estimate(
    p: &RegressionProblem,
    alpha: &DVector<f64>,
    batch: &[usize],
    regulariser: Regulariser<'_>,
    clip_norm: Option<f64>,
) -> Result<DVector<f64>> {
    p.check_len(alpha)?;
    let n = p.len();
    check_indices(batch, n)?;
    let op = p.operator();
    let lambda = p.noise();
    let mut out = match regulariser {
        Regulariser::Exact => op.matvec(alpha)? * lambda,
        Regulariser::Features(z) => {
            if z.rows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: z.rows(),
                });
            }
            let mut acc = DVector::zeros(n);
            let all: Vec<usize> = (0..z.len()).collect();
            z.accumulate_outer(alpha.as_slice(), &all, lambda, acc.as_mut_slice());
            acc
        }
    };
    let scale = n as f64 / batch.len() as f64;
    for &i in batch {
        let row = op.row_unchecked(i);
        let c = scale * (dot(&row, alpha.as_slice()) - p.rhs()[i]);
        for (o, r) in out.iter_mut().zip(row.iter()) {
            *o += c * r;
        }
    }
    if let Some(c) = clip_norm {
        clip(&mut out, c);
    }
    Ok(out)
}

/// Rescales `g` onto the ball of radius `max_norm` if it lies outside.
pub fn clip(g: &mut DVector<f64>, max_norm: f64) {
    let norm = g.norm();
    if norm > max_norm && norm > 0.0 {
        *g *= max_norm / norm;
    }
}

/// Random Fourier features `φ_j(x) = scale · cos(ω_jᵀx + τ_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    dim: usize,
    /// `m × dim`, row-major.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    scale: f64,
}

impl FeatureMap {
    pub fn new(dim: usize, frequencies: Vec<f64>, phases: Vec<f64>, scale: f64) -> Result<Self> {
        if frequencies.len() != phases.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: phases.len() * dim,
                found: frequencies.len(),
            });
        }
        Ok(FeatureMap {
            dim,
            frequencies,
            phases,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn frequency(&self, j: usize) -> &[f64] {
        &self.frequencies[j * self.dim..(j + 1) * self.dim]
    }

    pub fn phase(&self, j: usize) -> f64 {
        self.phases[j]
    }

    #[inline]
    fn argument(&self, j: usize, x: &[f64]) -> f64 {
        let w = self.frequency(j);
        let mut acc = self.phases[j];
        for k in 0..self.dim {
            acc += w[k] * x[k];
        }
        acc
    }

    pub fn feature(&self, j: usize, x: &[f64]) -> f64 {
        self.scale * self.argument(j, x).cos()
    }

    /// All features at `x`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|j| self.feature(j, x)).collect()
    }

    /// `Σ_j w_j φ_j(x)`.
    pub fn weighted_sum(&self, weights: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(weights.len(), self.len());
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            acc += w * self.argument(j, x).cos();
        }
        self.scale * acc
    }

    /// `Σ_j w_j φ_j(x)` and its gradient in `x`, written to `grad`.
    pub fn weighted_sum_with_gradient(&self, weights: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let (s, c) = self.argument(j, x).sin_cos();
            acc += w * c;
            let coef = -self.scale * w * s;
            for (g, f) in grad.iter_mut().zip(self.frequency(j)) {
                *g += coef * f;
            }
        }
        self.scale * acc
    }

    /// Feature evaluations at every input row.
    pub fn evaluate(&self, inputs: &InputMatrix) -> Result<FeatureMatrix> {
        let values = inputs.dense_values().ok_or(Error::UnsupportedFamily("tanimoto"))?;
        let d = inputs.dim().unwrap_or(0);
        if d != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d,
            });
        }
        let n = inputs.len();
        let m = self.len();
        let mut columns = vec![0.0; n * m];
        for i in 0..n {
            let x = &values[i * d..(i + 1) * d];
            for j in 0..m {
                columns[j * n + i] = self.feature(j, x);
            }
        }
        Ok(FeatureMatrix { rows: n, columns, m })
    }

    /// `Σ_j w_j φ_j(x_i)` for every input row.
    pub fn prior_values(&self, weights: &[f64], inputs: &InputMatrix) -> Result<DVector<f64>> {
        let d = inputs.dim().ok_or(Error::UnsupportedFamily("tanimoto"))?;
        if d != self.dim || weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d,
            });
        }
        Ok(DVector::from_fn(inputs.len(), |i, _| {
            self.weighted_sum(weights, inputs.dense_row(i))
        }))
    }
}

/// Features evaluated at `n` inputs; column `j` is `Z_j ∈ ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    m: usize,
    columns: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of features.
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.rows..(j + 1) * self.rows]
    }

    /// `out += scale · Σ_{j∈features} Z_j (Z_jᵀ v)`.
    pub fn accumulate_outer(&self, v: &[f64], features: &[usize], scale: f64, out: &mut [f64]) {
        for &j in features {
            let z = self.column(j);
            let c = scale * dot(z, v);
            for (o, zi) in out.iter_mut().zip(z) {
                *o += c * zi;
            }
        }
    }

    /// The feature Gram matrix `Σ_j Z_j Z_jᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        let z = DMatrix::from_column_slice(self.rows, self.m, &self.columns);
        &z * z.transpose()
    }
}

/// Draws `m` random Fourier features for a stationary kernel on `dim` inputs.
///
/// Frequencies come from the kernel's spectral density: Gaussian with
/// per-coordinate scale `1/ℓ` for the squared exponential, and a
/// 3-degree-of-freedom Student-t (a Gaussian divided by `sqrt(χ²₃/3)`) with the
/// same scale for Matérn-3/2. Phases are uniform on `[0, 2π)` and
/// `scale = sqrt(2A/m)`.
pub fn sample_rff_with<R: Rng + ?Sized>(spec: &KernelSpec, dim: usize, m: usize, rng: &mut R) -> Result<FeatureMap> {
    if spec.family == KernelFamily::Tanimoto {
        return Err(Error::UnsupportedFamily("tanimoto"));
    }
    if m == 0 {
        return Err(Error::config("number of features must be positive"));
    }
    let inv_ls = spec.length_scale.inverse(dim)?;
    let chi = ChiSquared::<f64>::new(3.0).expect("valid degrees of freedom");
    let mut frequencies = Vec::with_capacity(m * dim);
    let mut phases = Vec::with_capacity(m);
    for _ in 0..m {
        let mix = match spec.family {
            KernelFamily::Matern32 => (3.0 / chi.sample(rng)).sqrt(),
            _ => 1.0,
        };
        for il in &inv_ls {
            let z: f64 = StandardNormal.sample(rng);
            frequencies.push(z * mix * il);
        }
        phases.push(rng.random::<f64>() * std::f64::consts::TAU);
    }
    FeatureMap::new(dim, frequencies, phases, (2.0 * spec.amplitude / m as f64).sqrt())
}

/// [`sample_rff_with`] on the feature stream of `seed`.
pub fn sample_rff(spec: &KernelSpec, dim: usize, m: usize, seed: u64) -> Result<FeatureMap> {
    sample_rff_with(spec, dim, m, &mut stream(seed, Component::Features, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{eval, InputRow};
    use crate::linalg::operator_norm;
    use crate::objective::{direct_solve, dual_grad, primal_grad};
    use rand::Rng;

    fn problem(n: usize, seed: u64) -> RegressionProblem {
        let mut rng = stream(seed, Component::Inputs, 0);
        let x = InputMatrix::dense(n, 2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let b = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        RegressionProblem::new(KernelSpec::matern32(0.3, 1.0, 0.1), x, b).unwrap()
    }

    fn point(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, Component::Noise, 0);
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn full_batch_equals_exact_gradient() {
        let p = problem(25, 1);
        let theta = point(25, 1);
        let all: Vec<usize> = (0..25).collect();
        assert_eq!(
            rc_batch(&p, &theta, &all).unwrap().to_dense(),
            dual_grad(&p, &theta).unwrap()
        );
    }

    #[test]
    fn singleton_average_is_unbiased() {
        let p = problem(30, 2);
        let theta = point(30, 2);
        let mut mean = DVector::zeros(30);
        for i in 0..30 {
            mean += rc_batch(&p, &theta, &[i]).unwrap().to_dense();
        }
        mean /= 30.0;
        assert!(rel(&mean, &dual_grad(&p, &theta).unwrap()) < 1e-12);
    }

    #[test]
    fn coordinate_noise_vanishes_at_optimum() {
        let p = problem(40, 3);
        let star = direct_solve(&p).unwrap();
        let g = rc_batch(&p, &star, &[0, 5, 5, 39]).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-8 * p.rhs().norm()));
        assert_eq!(g.indices, vec![0, 5, 5, 39]);
    }

    #[test]
    fn empty_and_out_of_range_batches() {
        let p = problem(5, 4);
        let z = DVector::zeros(5);
        assert!(matches!(rc_batch(&p, &z, &[]), Err(Error::EmptyBatch)));
        assert!(matches!(
            rb_rc_estimate(&p, &z, &[5]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn rb_variant_unbiased_but_noisy_at_optimum() {
        let p = problem(50, 5);
        let alpha = point(50, 5);
        let mut mean = DVector::zeros(50);
        for i in 0..50 {
            mean += rb_rc_estimate(&p, &alpha, &[i]).unwrap().to_dense();
        }
        mean /= 50.0;
        assert!(rel(&mean, &dual_grad(&p, &alpha).unwrap()) < 1e-12);
        assert_eq!(
            rb_rc_estimate(&p, &DVector::zeros(50), &[3]).unwrap().to_dense(),
            -p.rhs()
        );
        let star = direct_solve(&p).unwrap();
        assert!(rb_rc_estimate(&p, &star, &[7]).unwrap().to_dense().norm() > 1e-3);
    }

    #[test]
    fn rf_estimate_unbiased_for_feature_surrogate() {
        let p = problem(20, 6);
        let fmap = sample_rff(p.operator().spec(), 2, 64, 6).unwrap();
        let z = fmap.evaluate(p.operator().inputs()).unwrap();
        // Surrogate problem where K is exactly Σ_j Z_j Z_jᵀ.
        let surrogate_k = z.gram();
        let alpha = point(20, 6);
        let exact = &surrogate_k * &alpha + &alpha * p.noise() - p.rhs();
        let mut mean = DVector::zeros(20);
        for j in 0..64 {
            mean += rf_estimate(&p, &alpha, &z, &[j]).unwrap();
        }
        mean /= 64.0;
        assert!(rel(&mean, &exact) < 1e-12);
        assert_eq!(rf_estimate(&p, &DVector::zeros(20), &z, &[3]).unwrap(), -p.rhs());
        assert!(rf_estimate(&p, &alpha, &z, &[64]).is_err());
    }

    #[test]
    fn rf_noise_does_not_vanish_at_optimum() {
        let p = problem(30, 7);
        let fmap = sample_rff(p.operator().spec(), 2, 50, 7).unwrap();
        let z = fmap.evaluate(p.operator().inputs()).unwrap();
        let star = direct_solve(&p).unwrap();
        let k = p.operator().gram(usize::MAX).unwrap();
        let est = rf_estimate(&p, &star, &z, &[4]).unwrap();
        let g = dual_grad(&p, &star).unwrap();
        let k_tilde =
            DMatrix::from_column_slice(30, 1, z.column(4)) * DMatrix::from_row_slice(1, 30, z.column(4)) * 50.0;
        let identity = ((&k_tilde - &k) * &star).norm();
        assert!(((&est - &g).norm() - identity).abs() < 1e-10);
        assert!(identity > 1e-3);
    }

    #[test]
    fn mixed_estimate_unbiased_before_clipping() {
        let p = problem(25, 8);
        let alpha = point(25, 8);
        let mut mean = DVector::zeros(25);
        for i in 0..25 {
            mean += sgd_mixed_estimate(&p, &alpha, &[i], Regulariser::Exact, None).unwrap();
        }
        mean /= 25.0;
        assert!(rel(&mean, &primal_grad(&p, &alpha).unwrap()) < 1e-12);
    }

    #[test]
    fn mixed_estimate_at_zero_and_clipping() {
        let p = problem(15, 9);
        let z = DVector::zeros(15);
        let raw = sgd_mixed_estimate(&p, &z, &[2], Regulariser::Exact, None).unwrap();
        let row = DVector::from_column_slice(&p.operator().row(2).unwrap());
        let expect = row * (-(15.0) * p.rhs()[2]);
        assert!(rel(&raw, &expect) < 1e-14);
        let clipped = sgd_mixed_estimate(&p, &z, &[2], Regulariser::Exact, Some(DEFAULT_CLIP_NORM)).unwrap();
        assert!((clipped.norm() - DEFAULT_CLIP_NORM.min(raw.norm())).abs() < 1e-14);
        assert!(rel(&(clipped.normalize()), &raw.normalize()) < 1e-12);
    }

    #[test]
    fn multiplicative_noise_bound_holds_for_every_coordinate() {
        let n = 60;
        let p = problem(n, 10);
        let star = direct_solve(&p).unwrap();
        let k = p.operator().gram(usize::MAX).unwrap();
        let shifted = &k + DMatrix::identity(n, n) * p.noise();
        let alpha = point(n, 10);
        let g = dual_grad(&p, &alpha).unwrap();
        let dist = (&alpha - &star).norm();
        for i in 0..n {
            let mut m = -DMatrix::identity(n, n);
            m[(i, i)] += n as f64;
            let bound = operator_norm(&(&m * &shifted)) * dist;
            let err = (rc_batch(&p, &alpha, &[i]).unwrap().to_dense() - &g).norm();
            assert!(err <= bound * (1.0 + 1e-12), "coordinate {i}: {err} > {bound}");
        }
    }

    #[test]
    fn rff_approximates_kernel() {
        for spec in [
            KernelSpec::matern32(0.4, 1.5, 0.1),
            KernelSpec::squared_exponential(0.4, 1.5, 0.1),
        ] {
            let m = 20_000;
            let fmap = sample_rff(&spec, 3, m, 11).unwrap();
            let mut rng = stream(11, Component::Inputs, 0);
            for _ in 0..10 {
                let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let approx: f64 = (0..m).map(|j| fmap.feature(j, &x) * fmap.feature(j, &y)).sum();
                let exact = eval(&spec, InputRow::Dense(&x), InputRow::Dense(&y)).unwrap();
                assert!(
                    (approx - exact).abs() <= 5.0 * spec.amplitude / (m as f64).sqrt(),
                    "{approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn rff_is_deterministic_and_rejects_tanimoto() {
        let spec = KernelSpec::matern32(0.4, 1.0, 0.1);
        assert_eq!(
            sample_rff(&spec, 2, 100, 3).unwrap(),
            sample_rff(&spec, 2, 100, 3).unwrap()
        );
        assert_ne!(
            sample_rff(&spec, 2, 100, 3).unwrap(),
            sample_rff(&spec, 2, 100, 4).unwrap()
        );
        assert!(matches!(
            sample_rff(&KernelSpec::tanimoto(1.0, 0.1, 0.0), 2, 10, 0),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        let spec = KernelSpec::matern32(0.3, 1.0, 0.1);
        let fmap = sample_rff(&spec, 3, 50, 12).unwrap();
        let w = point(50, 12);
        let x = [0.3, 0.6, 0.1];
        let mut grad = [0.0; 3];
        let v = fmap.weighted_sum_with_gradient(w.as_slice(), &x, &mut grad);
        assert!((v - fmap.weighted_sum(w.as_slice(), &x)).abs() < 1e-12);
        for k in 0..3 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (fmap.weighted_sum(w.as_slice(), &xp) - fmap.weighted_sum(w.as_slice(), &xm)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * grad[k].abs().max(1.0));
        }
    }

    #[test]
    fn batch_sampling_modes() {
        let mut rng = stream(0, Component::Batch, 0);
        assert_eq!(draw_batch(&mut rng, 5, 5, BatchSampling::Full), vec![0, 1, 2, 3, 4]);
        let mut s = draw_batch(&mut rng, 10, 10, BatchSampling::WithoutReplacement);
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        let r = draw_batch(&mut rng, 3, 100, BatchSampling::WithReplacement);
        assert_eq!(r.len(), 100);
        assert!(r.iter().all(|&i| i < 3));
    }
}
