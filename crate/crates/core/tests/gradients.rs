//! Reverse-mode gradients of every primitive against central finite differences.

use pistm_core::testing::primitive_gradient_checks;

const SEEDS: u64 = 20;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut names = std::collections::BTreeSet::new();
    for seed in 0..SEEDS {
        for c in primitive_gradient_checks(seed) {
            assert!(c.passed(), "{} seed {} param {}: relative error {:e}", c.name, c.seed, c.param, c.error);
            names.insert(c.name);
        }
    }
    for op in ["matmul", "transpose", "add_bias", "add_channel_bias", "conv2d stride 2", "conv_transpose2d", "tanh", "mse"] {
        assert!(names.contains(op), "{op} not exercised");
    }
}

#[test]
fn oracle_detects_a_wrong_gradient() {
    use pistm_core::testing::{finite_difference, relative_gradient_error, FD_STEP, GRADIENT_TOLERANCE};
    use pistm_core::Tensor;
    let x = vec![Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap()];
    let numeric = finite_difference(&x, 0, FD_STEP, |p| p[0].data().iter().map(|v| v * v).sum());
    let wrong = x[0].scale(2.0 * 1.001);
    assert!(relative_gradient_error(&x[0].scale(2.0), &numeric) < 1e-9);
    assert!(relative_gradient_error(&wrong, &numeric) > GRADIENT_TOLERANCE);
}
