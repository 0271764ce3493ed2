//! Primal and dual objectives for the system `(K + λI) α = b`, their exact
//! gradients, the `K`/`K²` weighted norms and the dense direct-solve oracle.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernel::{InputMatrix, KernelOperator, KernelSpec};

/// Largest `n` for which the dense Cholesky oracle is allowed.
pub const DEFAULT_ORACLE_CAP: usize = 5_000;

/// A kernel operator paired with a right-hand side `b`.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    op: Arc<KernelOperator>,
    rhs: DVector<f64>,
}

impl RegressionProblem {
    pub fn new(spec: KernelSpec, inputs: InputMatrix, rhs: DVector<f64>) -> Result<Self> {
        Self::from_operator(Arc::new(KernelOperator::new(spec, inputs)?), rhs)
    }

    pub fn from_operator(op: Arc<KernelOperator>, rhs: DVector<f64>) -> Result<Self> {
        if rhs.len() != op.len() {
            return Err(Error::DimensionMismatch {
                expected: op.len(),
                found: rhs.len(),
            });
        }
        Ok(RegressionProblem { op, rhs })
    }

    /// The same operator with a different right-hand side.
    pub fn with_rhs(&self, rhs: DVector<f64>) -> Result<Self> {
        Self::from_operator(Arc::clone(&self.op), rhs)
    }

    pub fn operator(&self) -> &KernelOperator {
        &self.op
    }

    pub fn shared_operator(&self) -> Arc<KernelOperator> {
        Arc::clone(&self.op)
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn noise(&self) -> f64 {
        self.op.noise()
    }

    pub(crate) fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: v.len(),
            });
        }
        Ok(())
    }
}

/// `L(α) = ½‖b − Kα‖² + (λ/2)‖α‖²_K`.
pub fn primal_loss(p: &RegressionProblem, alpha: &DVector<f64>) -> Result<f64> {
    let ka = p.operator().matvec(alpha)?;
    let resid = p.rhs() - &ka;
    Ok(0.5 * resid.norm_squared() + 0.5 * p.noise() * alpha.dot(&ka))
}

/// `∇L(α) = K(λα − b + Kα)`; two kernel-vector products.
pub fn primal_grad(p: &RegressionProblem, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    let inner = dual_grad(p, alpha)?;
    p.operator().matvec(&inner)
}

/// `L*(α) = ½‖α‖²_{K+λI} − αᵀb`.
pub fn dual_loss(p: &RegressionProblem, alpha: &DVector<f64>) -> Result<f64> {
    let ka = p.operator().matvec(alpha)?;
    Ok(0.5 * (alpha.dot(&ka) + p.noise() * alpha.norm_squared()) - alpha.dot(p.rhs()))
}

/// `g(α) = λα − b + Kα`; one kernel-vector product.
pub fn dual_grad(p: &RegressionProblem, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    p.check_len(alpha)?;
    let ka = p.operator().matvec(alpha)?;
    Ok(dual_grad_from_product(p, alpha, &ka))
}

/// Dual gradient given a precomputed `Kα`. Each entry is evaluated as
/// `(Kα)_i + λα_i − b_i`, the same order the coordinate estimators use.
pub(crate) fn dual_grad_from_product(p: &RegressionProblem, alpha: &DVector<f64>, ka: &DVector<f64>) -> DVector<f64> {
    let lambda = p.noise();
    DVector::from_fn(p.len(), |i, _| ka[i] + lambda * alpha[i] - p.rhs()[i])
}

/// `vᵀKv`.
pub fn k_norm_sq(p: &RegressionProblem, v: &DVector<f64>) -> Result<f64> {
    Ok(v.dot(&p.operator().matvec(v)?))
}

/// `‖Kv‖²`.
pub fn k2_norm_sq(p: &RegressionProblem, v: &DVector<f64>) -> Result<f64> {
    Ok(p.operator().matvec(v)?.norm_squared())
}

/// Dense Cholesky factorisation of `K + λI`, reusable across right-hand sides.
pub struct DirectSolver {
    shifted: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl DirectSolver {
    pub fn new(op: &KernelOperator) -> Result<Self> {
        Self::with_cap(op, DEFAULT_ORACLE_CAP)
    }

    pub fn with_cap(op: &KernelOperator, cap: usize) -> Result<Self> {
        let n = op.len();
        if n > cap {
            return Err(Error::CapExceeded {
                what: "direct solve",
                size: n,
                cap,
            });
        }
        let mut shifted = op.gram(usize::MAX)?;
        for i in 0..n {
            shifted[(i, i)] += op.noise();
        }
        let factor = Cholesky::new(shifted.clone())
            .ok_or_else(|| Error::Factorisation("K + λI is not numerically positive definite".into()))?;
        Ok(DirectSolver { shifted, factor })
    }

    /// `(K + λI)⁻¹ b`, with one step of iterative refinement.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.shifted.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.shifted.nrows(),
                found: b.len(),
            });
        }
        let mut x = self.factor.solve(b);
        let resid = b - &self.shifted * &x;
        x += self.factor.solve(&resid);
        Ok(x)
    }

    /// `(K + λI)⁻¹ M` column by column.
    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(m)
    }

    /// The factored matrix `K + λI`.
    pub fn shifted_gram(&self) -> &DMatrix<f64> {
        &self.shifted
    }
}

/// `α⋆(b) = (K + λI)⁻¹ b` by dense Cholesky.
pub fn direct_solve(p: &RegressionProblem) -> Result<DVector<f64>> {
    DirectSolver::new(p.operator())?.solve(p.rhs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Fingerprint, DEFAULT_GRAM_CAP};
    use crate::linalg::{largest_eigenvalue, symmetric_eigenvalues};
    use rand::Rng;

    /// Orthogonal rows far apart in Tanimoto space give `K = I` exactly.
    fn identity_problem(b: &[f64]) -> RegressionProblem {
        let rows = (0..b.len())
            .map(|i| Fingerprint::new(vec![(i as u32, 1)]).unwrap())
            .collect();
        RegressionProblem::new(
            KernelSpec::tanimoto(1.0, 1.0, 0.0),
            InputMatrix::sparse(rows),
            DVector::from_column_slice(b),
        )
        .unwrap()
    }

    pub(crate) fn random_problem(n: usize, d: usize, noise: f64, seed: u64) -> RegressionProblem {
        let mut rng = crate::rng::stream(seed, crate::rng::Component::Inputs, 0);
        let x = InputMatrix::dense(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let b = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        RegressionProblem::new(KernelSpec::matern32(0.4, 1.0, noise), x, b).unwrap()
    }

    fn random_vector(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = crate::rng::stream(seed, crate::rng::Component::Noise, 9);
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn identity_gram_hand_values() {
        let p = identity_problem(&[2.0, 0.0]);
        let alpha = DVector::from_vec(vec![1.0, 0.0]);
        assert!((primal_loss(&p, &alpha).unwrap() - 1.0).abs() < 1e-15);
        assert!((dual_loss(&p, &alpha).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(direct_solve(&p).unwrap(), alpha);

        let q = identity_problem(&[0.0, 0.0]);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(primal_grad(&q, &e1).unwrap(), DVector::from_vec(vec![2.0, 0.0]));
    }

    #[test]
    fn values_at_zero() {
        let p = random_problem(20, 2, 0.1, 1);
        let z = DVector::zeros(20);
        assert!((primal_loss(&p, &z).unwrap() - 0.5 * p.rhs().norm_squared()).abs() < 1e-14);
        assert_eq!(dual_loss(&p, &z).unwrap(), 0.0);
        assert_eq!(dual_grad(&p, &z).unwrap(), -p.rhs());
        assert_eq!(k_norm_sq(&p, &z).unwrap(), 0.0);
        assert_eq!(k2_norm_sq(&p, &z).unwrap(), 0.0);
        assert_eq!(direct_solve(&p.with_rhs(DVector::zeros(20)).unwrap()).unwrap(), z);
    }

    #[test]
    fn gradients_vanish_at_direct_solution() {
        let p = random_problem(100, 3, 0.05, 2);
        let star = direct_solve(&p).unwrap();
        let tol = 1e-8 * p.rhs().norm();
        assert!(dual_grad(&p, &star).unwrap().norm() <= tol);
        assert!(primal_grad(&p, &star).unwrap().norm() <= tol);
        let g = p.operator().gram(DEFAULT_GRAM_CAP).unwrap();
        let resid = (&g + DMatrix::identity(100, 100) * p.noise()) * &star - p.rhs();
        assert!(resid.norm() <= tol);
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = random_problem(30, 2, 0.2, 3);
        let alpha = random_vector(30, 3);
        let dir = random_vector(30, 4);
        let h = 1e-5;
        let plus = &alpha + &dir * h;
        let minus = &alpha - &dir * h;
        let fd_primal = (primal_loss(&p, &plus).unwrap() - primal_loss(&p, &minus).unwrap()) / (2.0 * h);
        let fd_dual = (dual_loss(&p, &plus).unwrap() - dual_loss(&p, &minus).unwrap()) / (2.0 * h);
        let an_primal = primal_grad(&p, &alpha).unwrap().dot(&dir);
        let an_dual = dual_grad(&p, &alpha).unwrap().dot(&dir);
        assert!(
            (fd_primal - an_primal).abs() <= 1e-6 * an_primal.abs().max(1e-12),
            "{fd_primal} vs {an_primal}"
        );
        assert!(
            (fd_dual - an_dual).abs() <= 1e-6 * an_dual.abs().max(1e-12),
            "{fd_dual} vs {an_dual}"
        );
    }

    #[test]
    fn strong_duality_at_minimiser() {
        for seed in 0..5 {
            let p = random_problem(60 + 20 * seed as usize, 2, 0.01 + 0.1 * seed as f64, 10 + seed);
            let star = direct_solve(&p).unwrap();
            let primal = primal_loss(&p, &star).unwrap();
            let dual = dual_loss(&p, &star).unwrap();
            assert!((primal + p.noise() * dual).abs() <= 1e-8 * (1.0 + primal.abs()));
        }
    }

    #[test]
    fn hessian_eigenvalue_ordering() {
        let p = random_problem(150, 2, 0.3, 5);
        let k = p.operator().gram(DEFAULT_GRAM_CAP).unwrap();
        let top = largest_eigenvalue(&k);
        let lambda = p.noise();
        let dual_h = &k + DMatrix::identity(150, 150) * lambda;
        let primal_h = &k * &dual_h;
        let primal_h = (&primal_h + primal_h.transpose()) * 0.5;
        assert!((largest_eigenvalue(&dual_h) - (top + lambda)).abs() <= 1e-9 * top);
        assert!((largest_eigenvalue(&primal_h) - top * (top + lambda)).abs() <= 1e-9 * top * top);
        assert!(symmetric_eigenvalues(&primal_h)[0] >= -1e-8 * top);
    }

    #[test]
    fn norms_match_dense_oracle() {
        let p = random_problem(40, 2, 0.1, 6);
        let v = random_vector(40, 6);
        let k = p.operator().gram(DEFAULT_GRAM_CAP).unwrap();
        let kv = &k * &v;
        assert!((k2_norm_sq(&p, &v).unwrap() - kv.norm_squared()).abs() <= 1e-12 * kv.norm_squared());
        let kn = k_norm_sq(&p, &v).unwrap();
        assert!(kn >= 0.0);
        assert!((k_norm_sq(&p, &(&v * -3.0)).unwrap() - 9.0 * kn).abs() <= 1e-12 * kn);
    }

    #[test]
    fn oracle_cap() {
        let p = random_problem(12, 1, 0.1, 7);
        assert!(matches!(
            DirectSolver::with_cap(p.operator(), 10),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn rhs_length_is_checked() {
        let p = random_problem(5, 1, 0.1, 8);
        assert!(p.with_rhs(DVector::zeros(4)).is_err());
        assert!(dual_grad(&p, &DVector::zeros(3)).is_err());
    }
}
