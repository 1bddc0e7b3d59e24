mod common;

#[test]
fn every_primitive_matches_central_differences() {
    for (name, err) in common::primitive_gradient_errors() {
        assert!(err < 1e-5, "{name}: relative error {err:e}");
    }
}

#[test]
fn full_loss_gradient_on_toy_dialogue() {
    let errors = common::full_loss_gradient_errors();
    assert!(errors.len() > 20, "only {} tensors checked", errors.len());
    for (name, err) in errors {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}
