use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sddgp::data::{normalise_split, split, split_indices, synth_regression, SplitSpec};
use sddgp::estimator::{rb_rc_estimate, rc_batch, sgd_mixed_estimate, BatchSampling, Regulariser};
use sddgp::kernel::{InputMatrix, KernelOperator, KernelSpec};
use sddgp::linalg::{largest_eigenvalue, symmetric_eigenvalues};
use sddgp::objective::{direct_solve, dual_grad, dual_loss, k_norm_sq, primal_grad, primal_loss, RegressionProblem};
use sddgp::posterior::mean_predict;
use sddgp::solver::{
    cg_solve, gd_solve, sdd_solve, Averaging, CgConfig, GdConfig, Objective, Probes, SddConfig, Termination,
};
use sddgp::thompson::{ascend, SmoothFunction};

fn spec_strategy() -> impl Strategy<Value = KernelSpec> {
    (0.1f64..1.0, 0.3f64..3.0, 0.01f64..1.0, any::<bool>()).prop_map(|(l, a, noise, se)| {
        if se {
            KernelSpec::squared_exponential(l, a, noise)
        } else {
            KernelSpec::matern32(l, a, noise)
        }
    })
}

/// Random problem with `n` inputs in `[0,1]^d` and a right-hand side in `[-1,1]`.
fn problem_strategy(max_n: usize) -> impl Strategy<Value = RegressionProblem> {
    (2usize..=max_n, 1usize..=3, spec_strategy()).prop_flat_map(|(n, d, spec)| {
        (
            proptest::collection::vec(0.0f64..1.0, n * d),
            proptest::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(move |(x, b)| {
                RegressionProblem::new(spec.clone(), InputMatrix::dense(n, d, x).unwrap(), DVector::from_vec(b))
                    .unwrap()
            })
    })
}

fn vector(n: usize, seed: u64) -> DVector<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    DVector::from_fn(n, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_is_psd_and_matvec_matches_it(p in problem_strategy(40), seed in any::<u64>()) {
        let op = p.operator();
        let k = op.gram(usize::MAX).unwrap();
        let amp = op.spec().amplitude;
        prop_assert!(symmetric_eigenvalues(&k)[0] >= -1e-8 * amp);
        let v = vector(p.len(), seed);
        let dense = &k * &v;
        prop_assert!(rel(&op.matvec(&v).unwrap(), &dense) <= 1e-12);
        for block in [1, 3, 64] {
            prop_assert!(rel(&op.matvec_blocked(&v, block).unwrap(), &dense) <= 1e-12);
        }
    }

    #[test]
    fn strong_duality_at_the_direct_solution(p in problem_strategy(60)) {
        let star = direct_solve(&p).unwrap();
        let l = primal_loss(&p, &star).unwrap();
        let ld = dual_loss(&p, &star).unwrap();
        prop_assert!((l + p.noise() * ld).abs() <= 1e-8 * (1.0 + l.abs()));
        let scale = 1.0 + p.rhs().norm();
        prop_assert!(dual_grad(&p, &star).unwrap().norm() <= 1e-8 * scale);
        prop_assert!(primal_grad(&p, &star).unwrap().norm() <= 1e-8 * scale * (1.0 + largest_eigenvalue(&p.operator().gram(usize::MAX).unwrap())));
    }

    #[test]
    fn hessian_spectra_follow_the_kernel_spectrum(p in problem_strategy(30)) {
        let n = p.len();
        let k = p.operator().gram(usize::MAX).unwrap();
        let l1 = largest_eigenvalue(&k);
        let lambda = p.noise();
        let shifted = &k + DMatrix::identity(n, n) * lambda;
        prop_assert!((largest_eigenvalue(&shifted) - (l1 + lambda)).abs() <= 1e-9 * (l1 + lambda));
        let primal = &k * &shifted;
        let primal = (&primal + primal.transpose()) * 0.5;
        let want = l1 * (l1 + lambda);
        prop_assert!((largest_eigenvalue(&primal) - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn k_norm_is_a_seminorm(p in problem_strategy(30), seed in any::<u64>(), c in -5.0f64..5.0) {
        let v = vector(p.len(), seed);
        let base = k_norm_sq(&p, &v).unwrap();
        prop_assert!(base >= -1e-12);
        let scaled = k_norm_sq(&p, &(&v * c)).unwrap();
        prop_assert!((scaled - c * c * base).abs() <= 1e-10 * (1.0 + c * c * base));
    }

    #[test]
    fn coordinate_estimators_are_unbiased_by_enumeration(p in problem_strategy(30), seed in any::<u64>()) {
        let n = p.len();
        let alpha = vector(n, seed);
        let (mut rc, mut rb, mut mixed) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
        for i in 0..n {
            rc += rc_batch(&p, &alpha, &[i]).unwrap().to_dense();
            rb += rb_rc_estimate(&p, &alpha, &[i]).unwrap().to_dense();
            mixed += sgd_mixed_estimate(&p, &alpha, &[i], Regulariser::Exact, None).unwrap();
        }
        let g = dual_grad(&p, &alpha).unwrap();
        prop_assert!(rel(&(rc / n as f64), &g) <= 1e-12);
        prop_assert!(rel(&(rb / n as f64), &g) <= 1e-12);
        prop_assert!(rel(&(mixed / n as f64), &primal_grad(&p, &alpha).unwrap()) <= 1e-12);
    }

    #[test]
    fn coordinate_estimate_vanishes_at_the_optimum(p in problem_strategy(50), i in 0usize..50) {
        let star = direct_solve(&p).unwrap();
        let g = rc_batch(&p, &star, &[i % p.len()]).unwrap();
        prop_assert!(g.values.iter().all(|v| v.abs() <= 1e-8 * p.rhs().norm().max(1.0)));
    }

    #[test]
    fn full_batch_sdd_without_momentum_is_dual_gd(p in problem_strategy(30), steps in 1usize..30, bn in 0.01f64..1.0) {
        let n = p.len();
        let sdd = SddConfig {
            steps,
            batch_size: n,
            step_size_times_n: bn,
            momentum: 0.0,
            averaging: Averaging::Geometric { r: Some(1.0) },
            sampling: BatchSampling::Full,
            snapshot_every: 0,
            ..SddConfig::default()
        };
        let gd = GdConfig {
            objective: Objective::Dual,
            step_size_times_n: bn,
            steps,
            momentum: 0.0,
            snapshot_every: 0,
        };
        let a = sdd_solve(&p, &sdd, &Probes::none()).unwrap();
        let b = gd_solve(&p, &gd, &Probes::none()).unwrap();
        prop_assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn sdd_is_deterministic(p in problem_strategy(30), seed in any::<u64>()) {
        let cfg = SddConfig {
            steps: 50,
            batch_size: 1.max(p.len() / 3),
            step_size_times_n: 0.5,
            seed,
            snapshot_every: 0,
            ..SddConfig::default()
        };
        let a = sdd_solve(&p, &cfg, &Probes::none()).unwrap();
        let b = sdd_solve(&p, &cfg, &Probes::none()).unwrap();
        prop_assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn cg_meets_its_residual_contract(p in problem_strategy(60), tol in 1e-8f64..0.1) {
        let cfg = CgConfig { tolerance: tol, preconditioner_rank: None, ..CgConfig::default() };
        let r = cg_solve(&p, &cfg, None, &Probes::none()).unwrap();
        if r.termination == Termination::ToleranceReached {
            let n = p.len();
            let shifted = p.operator().gram(usize::MAX).unwrap() + DMatrix::identity(n, n) * p.noise();
            let res = (&shifted * &r.coefficients - p.rhs()).norm() / p.rhs().norm().max(1e-300);
            prop_assert!(res <= tol * (1.0 + 1e-9));
        }
    }

    #[test]
    fn uniform_bound_on_a_grid(p in problem_strategy(40), seed in any::<u64>()) {
        let op: &KernelOperator = p.operator();
        let d = op.inputs().dim().unwrap();
        let grid = InputMatrix::dense(500, d, vector(500 * d, seed ^ 0xabc).iter().map(|v| 0.5 * (v + 1.0)).collect()).unwrap();
        let diff = vector(p.len(), seed);
        let h = mean_predict(&diff, op, &grid).unwrap();
        let knorm = diff.dot(&op.matvec(&diff).unwrap()).max(0.0).sqrt();
        prop_assert!(h.amax() <= op.spec().amplitude.sqrt() * knorm + 1e-10);
    }

    #[test]
    fn split_partitions_and_normalises_on_train(n in 10usize..200, frac in 0.1f64..0.9, seed in any::<u64>(), fold in 0usize..5) {
        let spec = SplitSpec { train_fraction: frac, seed, fold };
        let (train, test) = split_indices(n, &spec).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(train.len(), (frac * n as f64).floor() as usize);
        prop_assert_eq!(split_indices(n, &spec).unwrap(), (train, test));
        let ds = synth_regression(n, 2, &KernelSpec::matern32(0.3, 1.0, 0.1), seed % 1000).unwrap();
        let (tr, te) = split(&ds, &spec).unwrap();
        if tr.len() >= 2 {
            let (ntr, nte, scaling) = normalise_split(&tr, &te).unwrap();
            prop_assert!(ntr.targets.mean().abs() < 1e-10);
            prop_assert!((scaling.invert(&nte.targets) - &te.targets).amax() < 1e-10);
        }
    }
}

struct Quadratic {
    centre: Vec<f64>,
}

impl SmoothFunction for Quadratic {
    fn dim(&self) -> usize {
        self.centre.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        -x.iter().zip(&self.centre).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for ((g, a), c) in grad.iter_mut().zip(x).zip(&self.centre) {
            *g = -2.0 * (a - c);
        }
        self.value(x)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ascent_stays_in_the_cube_and_never_loses_value(
        centre in proptest::collection::vec(-0.5f64..1.5, 3),
        start in proptest::collection::vec(-1.0f64..2.0, 3),
        eta in 1e-3f64..20.0,
        steps in 0usize..40,
    ) {
        let f = Quadratic { centre };
        let clamped: Vec<f64> = start.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let (x, v) = ascend(&f, &start, steps, eta);
        prop_assert!(x.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert!(v >= f.value(&clamped));
        prop_assert_eq!(v, f.value(&x));
    }
}
