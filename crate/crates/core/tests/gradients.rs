mod common;

use common::relative_gradient_error;
use vstruct_core::losses::LossFn;
use vstruct_core::structboost::{structboost_gradient, structboost_objective};
use vstruct_core::vcrf::{vcrf_gradient, vcrf_objective};

#[test]
fn vcrf_gradient_matches_central_differences() {
    for seed in 0..10 {
        let e = relative_gradient_error(seed, vcrf_objective, vcrf_gradient, LossFn::hamming());
        assert!(e <= 1e-5, "seed {seed}: relative error {e}");
    }
}

#[test]
fn structboost_gradient_matches_central_differences() {
    for seed in 0..10 {
        let e = relative_gradient_error(seed, structboost_objective, structboost_gradient, LossFn::hamming_unnormalized());
        assert!(e <= 1e-5, "seed {seed}: relative error {e}");
    }
}
