//! Gradient checks, one test per group.

#[path = "support/gradcheck.rs"]
mod gradcheck;

#[test]
fn conv2d() {
    gradcheck::conv2d();
}

#[test]
fn activations() {
    gradcheck::activations();
}

#[test]
fn batch_norm() {
    gradcheck::batch_norm();
}

#[test]
fn resampling() {
    gradcheck::resampling();
}

#[test]
fn arithmetic() {
    gradcheck::arithmetic();
}

#[test]
fn structural() {
    gradcheck::structural();
}

#[test]
fn filtering_and_angles() {
    gradcheck::filtering_and_angles();
}

#[test]
fn loss_terms() {
    gradcheck::loss_terms();
}

#[test]
fn min_shift_loss() {
    gradcheck::min_shift_loss();
}

#[test]
fn model_end_to_end() {
    gradcheck::model_end_to_end();
}

#[test]
fn probed_encoder_weight_on_16px_scene() {
    gradcheck::probed_encoder_weight_on_16px_scene();
}

#[test]
fn every_group_has_a_test() {
    assert_eq!(gradcheck::GROUPS.len(), 11);
}
