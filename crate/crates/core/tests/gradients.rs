mod common;

use common::{convlstm_suite, kernel_suite, model_suite, GRAD_TOL};

fn assert_suite(suite: Vec<(String, prednet::gradcheck::GradCheckReport)>) {
    for (name, r) in &suite {
        assert!(r.checked > 0, "{name}: nothing probed");
        assert!(
            r.passes(GRAD_TOL),
            "{name}: max relative error {:.3e} at {:?} (analytic {:.6e}, numeric {:.6e})",
            r.max_rel_error,
            r.worst,
            r.analytic,
            r.numeric
        );
    }
}

#[test]
fn kernels_match_finite_differences() {
    assert_suite(kernel_suite());
}

#[test]
fn convlstm_matches_finite_differences() {
    assert_suite(convlstm_suite());
}

#[test]
fn full_model_matches_finite_differences() {
    assert_suite(model_suite());
}
