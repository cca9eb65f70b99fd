mod common;

use common::{op_errors, tiny_tdgcn_error, MODEL_TOLERANCE, OP_TOLERANCE};

#[test]
fn every_tape_op_matches_central_differences() {
    let errors = op_errors();
    assert!(errors.len() > 20);
    for (name, err) in errors {
        assert!(err < OP_TOLERANCE, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn tiny_tdgcn_end_to_end() {
    let (err, checked) = tiny_tdgcn_error();
    assert!(checked > 100);
    assert!(err < MODEL_TOLERANCE, "relative error {err:.3e} over {checked} parameters");
}
