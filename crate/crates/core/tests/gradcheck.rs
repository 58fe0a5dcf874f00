mod common;

use common::grad_cases as cases;

const TOL: f64 = 1e-4;

fn check(name: &str, worst: f64) {
    assert!(worst < TOL, "{name}: worst relative error {worst}");
}

#[test]
fn encoder_stack_matches_finite_differences() {
    check("encoder stack", cases::encoder_stack());
}

#[test]
fn token_embeddings_match_finite_differences() {
    check("token embeddings", cases::token_embeddings());
}

#[test]
fn lstm_step_matches_finite_differences() {
    check("lstm step", cases::lstm_step());
}

#[test]
fn fragment_embedding_matches_finite_differences() {
    check("fragment embedding", cases::fragment_embedding());
}

#[test]
fn scratchpad_update_matches_finite_differences() {
    check("scratchpad update", cases::scratchpad_update());
}

#[test]
fn biaffine_loss_matches_finite_differences() {
    check("biaffine loss", cases::biaffine_loss());
}

#[test]
fn decoder_path_matches_finite_differences() {
    check("decoder path", cases::decoder_path());
}

#[test]
fn full_training_loss_matches_finite_differences() {
    check("training loss", cases::training_loss());
}
