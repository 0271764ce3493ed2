//! Kernel evaluation, on-demand Gram rows and blocked kernel-vector products.
//!
//! Two input representations are supported: dense real rows for the stationary
//! families (Matérn-3/2 and squared exponential) and sparse nonnegative count
//! vectors for the Tanimoto kernel. The Gram matrix is never materialised by
//! the solvers; rows are recomputed on demand unless a [`KernelOperator`] is
//! explicitly given a row cache.

use std::borrow::Cow;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Default number of rows below which a row cache may be enabled.
pub const DEFAULT_CACHE_ROWS: usize = 40_000;

/// Default cap on the number of entries of an explicitly materialised Gram matrix.
pub const DEFAULT_GRAM_CAP: usize = 25_000_000;

/// Default row-block size for kernel-vector products.
pub const DEFAULT_BLOCK_SIZE: usize = 256;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern32,
    SquaredExponential,
    Tanimoto,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern32 => "matern32",
            KernelFamily::SquaredExponential => "squared_exponential",
            KernelFamily::Tanimoto => "tanimoto",
        }
    }

    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Tanimoto)
    }
}

/// Length scale, either shared by all input dimensions or one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthScale {
    Scalar(f64),
    PerDimension(Vec<f64>),
}

impl Default for LengthScale {
    fn default() -> Self {
        LengthScale::Scalar(1.0)
    }
}

impl LengthScale {
    /// Reciprocal length scales broadcast to `dim` dimensions.
    pub fn inverse(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            LengthScale::Scalar(l) => Ok(vec![1.0 / l; dim]),
            LengthScale::PerDimension(ls) => {
                if ls.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: ls.len(),
                    });
                }
                Ok(ls.iter().map(|l| 1.0 / l).collect())
            }
        }
    }

    fn all_positive(&self) -> bool {
        match self {
            LengthScale::Scalar(l) => l.is_finite() && *l > 0.0,
            LengthScale::PerDimension(ls) => !ls.is_empty() && ls.iter().all(|l| l.is_finite() && *l > 0.0),
        }
    }
}

/// Arithmetic used for kernel evaluations. `Single` exists for throughput
/// experiments only; every tolerance in the test suite assumes `Double`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

/// Kernel family together with its hyperparameters.
///
/// The kernel is `amplitude * base(x, x')`, so `sup_x k(x, x) = amplitude` for
/// every family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default)]
    pub length_scale: LengthScale,
    pub amplitude: f64,
    /// Likelihood variance λ.
    pub noise: f64,
    #[serde(default)]
    pub prior_mean: f64,
    #[serde(default)]
    pub precision: Precision,
}

impl KernelSpec {
    pub fn matern32(length_scale: f64, amplitude: f64, noise: f64) -> Self {
        Self::stationary(KernelFamily::Matern32, length_scale, amplitude, noise)
    }

    pub fn squared_exponential(length_scale: f64, amplitude: f64, noise: f64) -> Self {
        Self::stationary(KernelFamily::SquaredExponential, length_scale, amplitude, noise)
    }

    pub fn tanimoto(amplitude: f64, noise: f64, prior_mean: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Tanimoto,
            length_scale: LengthScale::default(),
            amplitude,
            noise,
            prior_mean,
            precision: Precision::Double,
        }
    }

    fn stationary(family: KernelFamily, length_scale: f64, amplitude: f64, noise: f64) -> Self {
        KernelSpec {
            family,
            length_scale: LengthScale::Scalar(length_scale),
            amplitude,
            noise,
            prior_mean: 0.0,
            precision: Precision::Double,
        }
    }

    pub fn with_prior_mean(mut self, prior_mean: f64) -> Self {
        self.prior_mean = prior_mean;
        self
    }

    pub fn with_length_scale(mut self, length_scale: LengthScale) -> Self {
        self.length_scale = length_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::config(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::config(format!("noise must be positive, got {}", self.noise)));
        }
        if !self.prior_mean.is_finite() {
            return Err(Error::config("prior mean must be finite"));
        }
        if self.family.is_stationary() && !self.length_scale.all_positive() {
            return Err(Error::config("length scales must be positive"));
        }
        Ok(())
    }

    /// `sup_x k(x, x)`.
    pub fn kappa(&self) -> f64 {
        self.amplitude
    }
}

/// A nonnegative sparse count vector (a molecular fingerprint).
///
/// Indices are strictly increasing and every stored count is positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    indices: Vec<u32>,
    counts: Vec<u32>,
}

impl Fingerprint {
    /// Builds a fingerprint from `(index, count)` pairs. Zero counts are
    /// dropped; repeated indices are rejected.
    pub fn new(mut pairs: Vec<(u32, u32)>) -> Result<Self> {
        pairs.retain(|&(_, c)| c > 0);
        pairs.sort_unstable_by_key(|&(i, _)| i);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::config(format!("repeated fingerprint index {}", w[0].0)));
        }
        let (indices, counts) = pairs.into_iter().unzip();
        Ok(Fingerprint { indices, counts })
    }

    /// Builds a fingerprint from a dense count vector.
    pub fn from_dense(counts: &[u32]) -> Self {
        let (indices, counts) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32, c))
            .unzip();
        Fingerprint { indices, counts }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// `Σ_i min(x_i, y_i)`, by a merge over the sorted index lists.
    pub fn min_overlap(&self, other: &Fingerprint) -> u64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0u64;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.counts[a].min(other.counts[b]) as u64;
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }
}

/// Row-major dense inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseInputs {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseInputs {
    rows: Vec<Fingerprint>,
}

/// Observed inputs `x_1, ..., x_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMatrix {
    Dense(DenseInputs),
    Sparse(SparseInputs),
}

/// A borrowed single input row.
#[derive(Debug, Clone, Copy)]
pub enum InputRow<'a> {
    Dense(&'a [f64]),
    Sparse(&'a Fingerprint),
}

impl InputMatrix {
    pub fn dense(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("dense inputs must be finite"));
        }
        Ok(InputMatrix::Dense(DenseInputs { rows, dim, values }))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::dense(rows.len(), dim, values)
    }

    pub fn sparse(rows: Vec<Fingerprint>) -> Self {
        InputMatrix::Sparse(SparseInputs { rows })
    }

    /// An empty input set with the same representation (and dimension) as `self`.
    pub fn empty_like(&self) -> Self {
        match self {
            InputMatrix::Dense(d) => InputMatrix::Dense(DenseInputs {
                rows: 0,
                dim: d.dim,
                values: Vec::new(),
            }),
            InputMatrix::Sparse(_) => InputMatrix::sparse(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            InputMatrix::Dense(d) => d.rows,
            InputMatrix::Sparse(s) => s.rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, InputMatrix::Dense(_))
    }

    /// Input dimension of dense rows; `None` for fingerprints.
    pub fn dim(&self) -> Option<usize> {
        match self {
            InputMatrix::Dense(d) => Some(d.dim),
            InputMatrix::Sparse(_) => None,
        }
    }

    pub fn row(&self, i: usize) -> InputRow<'_> {
        match self {
            InputMatrix::Dense(d) => InputRow::Dense(&d.values[i * d.dim..(i + 1) * d.dim]),
            InputMatrix::Sparse(s) => InputRow::Sparse(&s.rows[i]),
        }
    }

    pub fn checked_row(&self, i: usize) -> Result<InputRow<'_>> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.row(i))
    }

    /// Dense row `i`. Panics for sparse inputs.
    pub fn dense_row(&self, i: usize) -> &[f64] {
        match self.row(i) {
            InputRow::Dense(r) => r,
            InputRow::Sparse(_) => panic!("dense_row called on sparse inputs"),
        }
    }

    /// The raw row-major values of dense inputs.
    pub fn dense_values(&self) -> Option<&[f64]> {
        match self {
            InputMatrix::Dense(d) => Some(&d.values),
            InputMatrix::Sparse(_) => None,
        }
    }

    pub fn fingerprints(&self) -> Option<&[Fingerprint]> {
        match self {
            InputMatrix::Sparse(s) => Some(&s.rows),
            InputMatrix::Dense(_) => None,
        }
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        match self {
            InputMatrix::Dense(d) => {
                let mut values = Vec::with_capacity(indices.len() * d.dim);
                for &i in indices {
                    values.extend_from_slice(&d.values[i * d.dim..(i + 1) * d.dim]);
                }
                InputMatrix::Dense(DenseInputs {
                    rows: indices.len(),
                    dim: d.dim,
                    values,
                })
            }
            InputMatrix::Sparse(s) => InputMatrix::sparse(indices.iter().map(|&i| s.rows[i].clone()).collect()),
        }
    }

    /// Appends the rows of `other`, which must share the representation.
    pub fn extend(&mut self, other: &InputMatrix) -> Result<()> {
        match (self, other) {
            (InputMatrix::Dense(a), InputMatrix::Dense(b)) => {
                if a.dim != b.dim && a.rows > 0 {
                    return Err(Error::DimensionMismatch {
                        expected: a.dim,
                        found: b.dim,
                    });
                }
                a.dim = b.dim;
                a.values.extend_from_slice(&b.values);
                a.rows += b.rows;
                Ok(())
            }
            (InputMatrix::Sparse(a), InputMatrix::Sparse(b)) => {
                a.rows.extend(b.rows.iter().cloned());
                Ok(())
            }
            _ => Err(Error::RepresentationMismatch("mixed dense and sparse inputs")),
        }
    }

    /// Mutable access to dense values, row-major.
    pub(crate) fn dense_values_mut(&mut self) -> Option<&mut [f64]> {
        match self {
            InputMatrix::Dense(d) => Some(&mut d.values),
            InputMatrix::Sparse(_) => None,
        }
    }

    fn check_for(&self, spec: &KernelSpec) -> Result<()> {
        match (spec.family, self) {
            (KernelFamily::Tanimoto, InputMatrix::Sparse(s)) => {
                if s.rows.iter().any(Fingerprint::is_empty) {
                    return Err(Error::EmptyFingerprint);
                }
                Ok(())
            }
            (KernelFamily::Tanimoto, InputMatrix::Dense(_)) => Err(Error::RepresentationMismatch("tanimoto")),
            (f, InputMatrix::Sparse(_)) => Err(Error::RepresentationMismatch(f.name())),
            (_, InputMatrix::Dense(d)) => spec.length_scale.inverse(d.dim).map(|_| ()),
        }
    }
}

#[inline]
fn matern32_base(r2: f64) -> f64 {
    let s = SQRT3 * r2.sqrt();
    (1.0 + s) * (-s).exp()
}

#[inline]
fn matern32_base_f32(r2: f32) -> f32 {
    let s = SQRT3 as f32 * r2.sqrt();
    (1.0 + s) * (-s).exp()
}

#[inline]
fn scaled_sq_dist(x: &[f64], y: &[f64], inv_ls: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..x.len() {
        let t = (x[k] - y[k]) * inv_ls[k];
        acc += t * t;
    }
    acc
}

#[inline]
fn scaled_sq_dist_f32(x: &[f64], y: &[f64], inv_ls: &[f64]) -> f32 {
    let mut acc = 0.0f32;
    for k in 0..x.len() {
        let t = (x[k] as f32 - y[k] as f32) * inv_ls[k] as f32;
        acc += t * t;
    }
    acc
}

fn tanimoto(x: &Fingerprint, y: &Fingerprint) -> Result<f64> {
    let min = x.min_overlap(y);
    let max = x.total() + y.total() - min;
    if max == 0 {
        return Err(Error::EmptyFingerprint);
    }
    Ok(min as f64 / max as f64)
}

/// Stationary evaluation with precomputed reciprocal length scales.
#[inline]
fn eval_dense(spec: &KernelSpec, inv_ls: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let base = match spec.precision {
        Precision::Double => {
            let r2 = scaled_sq_dist(x, y, inv_ls);
            match spec.family {
                KernelFamily::Matern32 => matern32_base(r2),
                _ => (-0.5 * r2).exp(),
            }
        }
        Precision::Single => {
            let r2 = scaled_sq_dist_f32(x, y, inv_ls);
            (match spec.family {
                KernelFamily::Matern32 => matern32_base_f32(r2),
                _ => (-0.5 * r2).exp(),
            }) as f64
        }
    };
    spec.amplitude * base
}

/// `k(x, x2)`.
pub fn eval(spec: &KernelSpec, x: InputRow<'_>, x2: InputRow<'_>) -> Result<f64> {
    match (spec.family, x, x2) {
        (KernelFamily::Tanimoto, InputRow::Sparse(a), InputRow::Sparse(b)) => Ok(spec.amplitude * tanimoto(a, b)?),
        (KernelFamily::Tanimoto, _, _) => Err(Error::RepresentationMismatch("tanimoto")),
        (_, InputRow::Dense(a), InputRow::Dense(b)) => {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    found: b.len(),
                });
            }
            let inv = spec.length_scale.inverse(a.len())?;
            Ok(eval_dense(spec, &inv, a, b))
        }
        (f, _, _) => Err(Error::RepresentationMismatch(f.name())),
    }
}

/// The kernel bound to a fixed set of training inputs: the Gram operator `K`.
///
/// Construction validates the inputs against the kernel once, after which row
/// access and products cannot fail on representation grounds.
#[derive(Debug)]
pub struct KernelOperator {
    spec: KernelSpec,
    inputs: InputMatrix,
    inv_ls: Vec<f64>,
    block_size: usize,
    cache: Option<Vec<OnceLock<Box<[f64]>>>>,
}

impl KernelOperator {
    pub fn new(spec: KernelSpec, inputs: InputMatrix) -> Result<Self> {
        spec.validate()?;
        inputs.check_for(&spec)?;
        let inv_ls = match inputs.dim() {
            Some(d) if spec.family.is_stationary() => spec.length_scale.inverse(d)?,
            _ => Vec::new(),
        };
        Ok(KernelOperator {
            spec,
            inputs,
            inv_ls,
            block_size: DEFAULT_BLOCK_SIZE,
            cache: None,
        })
    }

    /// Enables a lazily filled per-row cache when `len() <= max_rows`; larger
    /// problems keep computing rows on demand.
    pub fn with_row_cache(mut self, max_rows: usize) -> Self {
        let n = self.len();
        self.cache = (n <= max_rows).then(|| (0..n).map(|_| OnceLock::new()).collect());
        self
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size.max(1);
        self
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn inputs(&self) -> &InputMatrix {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn noise(&self) -> f64 {
        self.spec.noise
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Checks that `a` can be paired with the training inputs.
    pub fn check_row(&self, a: InputRow<'_>) -> Result<()> {
        match (a, &self.inputs) {
            (InputRow::Dense(r), InputMatrix::Dense(d)) if r.len() == d.dim => Ok(()),
            (InputRow::Dense(r), InputMatrix::Dense(d)) => Err(Error::DimensionMismatch {
                expected: d.dim,
                found: r.len(),
            }),
            (InputRow::Sparse(f), InputMatrix::Sparse(_)) => {
                if f.is_empty() {
                    Err(Error::EmptyFingerprint)
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::RepresentationMismatch(self.spec.family.name())),
        }
    }

    /// `k(a, b)` for rows already validated against this operator.
    #[inline]
    pub(crate) fn pair(&self, a: InputRow<'_>, b: InputRow<'_>) -> f64 {
        match (a, b) {
            (InputRow::Dense(x), InputRow::Dense(y)) => eval_dense(&self.spec, &self.inv_ls, x, y),
            (InputRow::Sparse(x), InputRow::Sparse(y)) => {
                // Validated rows are nonempty, so the denominator is positive.
                let min = x.min_overlap(y);
                let max = x.total() + y.total() - min;
                self.spec.amplitude * (min as f64 / max as f64)
            }
            _ => unreachable!("rows validated at construction"),
        }
    }

    /// Writes `k(a, x_j)` for every training input into `out`.
    pub fn cross_row_into(&self, a: InputRow<'_>, out: &mut [f64]) -> Result<()> {
        self.check_row(a)?;
        if out.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: out.len(),
            });
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.pair(a, self.inputs.row(j));
        }
        Ok(())
    }

    /// `h(x) = Σ_j w_j k(x, x_j)` and its gradient in `x`, for stationary
    /// kernels on dense inputs. Always evaluated in double precision.
    pub fn combination_with_gradient(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) -> Result<f64> {
        let InputMatrix::Dense(d) = &self.inputs else {
            return Err(Error::UnsupportedFamily(self.spec.family.name()));
        };
        if x.len() != d.dim || grad.len() != d.dim {
            return Err(Error::DimensionMismatch {
                expected: d.dim,
                found: x.len().min(grad.len()),
            });
        }
        if weights.len() != d.rows {
            return Err(Error::DimensionMismatch {
                expected: d.rows,
                found: weights.len(),
            });
        }
        let inv_ls = &self.inv_ls;
        let amp = self.spec.amplitude;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let xj = &d.values[j * d.dim..(j + 1) * d.dim];
            let r2 = scaled_sq_dist(x, xj, inv_ls);
            // k = A·base(r) and ∂k/∂x_k = −coef·(x_k − x_jk)/ℓ_k².
            let (k, coef) = match self.spec.family {
                KernelFamily::Matern32 => {
                    let e = (-SQRT3 * r2.sqrt()).exp();
                    (amp * (1.0 + SQRT3 * r2.sqrt()) * e, 3.0 * amp * e)
                }
                _ => {
                    let k = amp * (-0.5 * r2).exp();
                    (k, k)
                }
            };
            value += w * k;
            for c in 0..d.dim {
                grad[c] -= w * coef * (x[c] - xj[c]) * inv_ls[c] * inv_ls[c];
            }
        }
        Ok(value)
    }

    fn compute_row(&self, i: usize, out: &mut [f64]) {
        let xi = self.inputs.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.pair(xi, self.inputs.row(j));
        }
    }

    /// Row `K_i` without bounds checking beyond the slice index.
    pub(crate) fn row_unchecked(&self, i: usize) -> Cow<'_, [f64]> {
        match &self.cache {
            Some(cache) => Cow::Borrowed(cache[i].get_or_init(|| {
                let mut buf = vec![0.0; self.len()].into_boxed_slice();
                self.compute_row(i, &mut buf);
                buf
            })),
            None => {
                let mut buf = vec![0.0; self.len()];
                self.compute_row(i, &mut buf);
                Cow::Owned(buf)
            }
        }
    }

    /// The `i`-th Gram row `K_i`.
    pub fn row(&self, i: usize) -> Result<Cow<'_, [f64]>> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.row_unchecked(i))
    }

    /// `k(x_i, x_i)`.
    pub fn diag(&self, i: usize) -> f64 {
        let xi = self.inputs.row(i);
        self.pair(xi, xi)
    }

    /// `K v` using the operator's block size.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.matvec_blocked(v, self.block_size)
    }

    /// `K v` evaluated in blocks of `block_size` rows; blocks may run in
    /// parallel but each output entry is a single fixed-order reduction, so
    /// the result does not depend on `block_size` or on the thread count.
    pub fn matvec_blocked(&self, v: &DVector<f64>, block_size: usize) -> Result<DVector<f64>> {
        let n = self.len();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        let mut out = DVector::zeros(n);
        if n == 0 {
            return Ok(out);
        }
        let vs = v.as_slice();
        out.as_mut_slice()
            .par_chunks_mut(block_size.max(1))
            .enumerate()
            .for_each(|(b, chunk)| {
                let start = b * block_size.max(1);
                let mut buf = if self.cache.is_none() { vec![0.0; n] } else { Vec::new() };
                for (k, o) in chunk.iter_mut().enumerate() {
                    let i = start + k;
                    *o = match &self.cache {
                        Some(_) => dot(&self.row_unchecked(i), vs),
                        None => {
                            self.compute_row(i, &mut buf);
                            dot(&buf, vs)
                        }
                    };
                }
            });
        Ok(out)
    }

    /// The full training Gram matrix, refusing when it would exceed `cap` entries.
    pub fn gram(&self, cap: usize) -> Result<DMatrix<f64>> {
        gram_with(self, &self.inputs, cap)
    }
}

/// `k(x_i, y_j)` for rows of `x` against the operator's inputs, as an
/// `x.len() × op.len()` matrix.
fn gram_with(op: &KernelOperator, x: &InputMatrix, cap: usize) -> Result<DMatrix<f64>> {
    let (n1, n2) = (x.len(), op.len());
    let size = n1.saturating_mul(n2);
    if size > cap {
        return Err(Error::CapExceeded {
            what: "Gram matrix",
            size,
            cap,
        });
    }
    for i in 0..n1 {
        op.check_row(x.row(i))?;
    }
    // Column-major storage: column j holds k(x_i, y_j) for all i.
    let mut m = DMatrix::zeros(n1, n2);
    for j in 0..n2 {
        let yj = op.inputs.row(j);
        for i in 0..n1 {
            m[(i, j)] = op.pair(x.row(i), yj);
        }
    }
    Ok(m)
}

/// The `i`-th Gram row of `inputs` under `spec`.
pub fn row(spec: &KernelSpec, inputs: &InputMatrix, i: usize) -> Result<DVector<f64>> {
    let n = inputs.len();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let op = KernelOperator::new(spec.clone(), inputs.clone())?;
    Ok(DVector::from_column_slice(&op.row_unchecked(i)))
}

/// `K v`, computed in row blocks of `block_size`.
pub fn matvec(spec: &KernelSpec, inputs: &InputMatrix, v: &DVector<f64>, block_size: usize) -> Result<DVector<f64>> {
    let op = KernelOperator::new(spec.clone(), inputs.clone())?;
    op.matvec_blocked(v, block_size)
}

/// Cross-Gram matrix `k(X, X2)` of shape `len(X) × len(X2)`.
pub fn gram(spec: &KernelSpec, x: &InputMatrix, x2: &InputMatrix, cap: usize) -> Result<DMatrix<f64>> {
    let op = KernelOperator::new(spec.clone(), x2.clone())?;
    x.check_for(spec)?;
    gram_with(&op, x, cap)
}
