//! Analytic gradients against central finite differences.

mod common;

use cached_dfl::learning::Arch;
use common::gradcheck::max_relative_error;

#[test]
fn softmax_gradient_matches_finite_differences() {
    let arch = Arch::Softmax { input_dim: 4, classes: 3 };
    let err = max_relative_error(arch, 150, 11);
    assert!(err < 1e-6, "max relative error {err:e}");
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let arch = Arch::Mlp {
        input_dim: 3,
        hidden: 5,
        classes: 4,
    };
    let err = max_relative_error(arch, 150, 12);
    assert!(err < 1e-6, "max relative error {err:e}");
}
