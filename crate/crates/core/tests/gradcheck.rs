//! Finite-difference validation of every autodiff primitive.
//!
//! Each primitive gets randomized cases whose backward gradients are
//! compared coordinate-by-coordinate against central finite differences
//! (relative error < 1e-3, absolute-floored at magnitude 1).

use attnmem_testkit::gradcheck::{grad_check, run_suite, GradOp, ALL_OPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn matmul_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::MatMul, &mut rng) < TOL);
    }

    #[test]
    fn matmul_nt_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::MatMulNt, &mut rng) < TOL);
    }

    #[test]
    fn add_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::Add, &mut rng) < TOL);
    }

    #[test]
    fn scale_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::Scale, &mut rng) < TOL);
    }

    #[test]
    fn gelu_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::Gelu, &mut rng) < TOL);
    }

    #[test]
    fn layer_norm_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::LayerNorm, &mut rng) < TOL);
    }

    #[test]
    fn softmax_causal_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::SoftmaxCausal, &mut rng) < TOL);
    }

    #[test]
    fn slice_cols_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::SliceCols, &mut rng) < TOL);
    }

    #[test]
    fn concat_cols_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::ConcatCols, &mut rng) < TOL);
    }

    #[test]
    fn cross_entropy_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::CrossEntropy, &mut rng) < TOL);
    }

    #[test]
    fn gather_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(grad_check(GradOp::Gather, &mut rng) < TOL);
    }
}

/// The fixed-seed sweep the acceptance checks also run: at least 200 cases
/// across all primitives.
#[test]
fn full_suite_meets_the_budget() {
    let cases_per_op = 20;
    let (total, worst) = run_suite(cases_per_op, 0x6ad5);
    assert_eq!(total, cases_per_op * ALL_OPS.len());
    assert!(total >= 200, "need at least 200 cases, ran {total}");
    assert!(worst < TOL, "worst relative error {worst}");
}
