mod common;

use common::{grad_instance, gradient_report};
use scirec::encoder::EncoderKind;

fn assert_report(kind: EncoderKind, dropout: Option<u64>) {
    for seed in [1u64, 2] {
        let inst = grad_instance(kind, seed);
        for check in gradient_report(&inst, dropout) {
            let name = &check.name;
            assert!(
                check.max_relative_error < 1e-3,
                "{kind} seed {seed} dropout {dropout:?}: block {name} relative error {:e}",
                check.max_relative_error
            );
            // a block with an identically zero gradient would pass vacuously
            assert!(check.analytic_norm > 1e-8, "{kind} seed {seed}: block {name} has no gradient");
        }
    }
}

#[test]
fn rhcnn_gradients_match_finite_differences() {
    assert_report(EncoderKind::Rhcnn, None);
}

#[test]
fn rhcnn_gradients_match_with_fixed_dropout_masks() {
    assert_report(EncoderKind::Rhcnn, Some(17));
}

#[test]
fn gru_baseline_gradients_match_finite_differences() {
    assert_report(EncoderKind::GruBaseline, None);
    assert_report(EncoderKind::GruBaseline, Some(5));
}

#[test]
fn embedding_baseline_gradients_match_finite_differences() {
    assert_report(EncoderKind::EmbedBaseline, None);
    assert_report(EncoderKind::EmbedBaseline, Some(5));
}

#[test]
fn every_block_is_checked() {
    let inst = grad_instance(EncoderKind::Rhcnn, 1);
    let names: Vec<String> = gradient_report(&inst, None).into_iter().map(|c| c.name).collect();
    for expected in ["encoder.embeddings", "encoder.context.fwd.w_input", "encoder.context.bwd.w_hidden", "encoder.highway.w_gate", "encoder.conv1.weight", "encoder.conv2.bias", "tables.users", "tables.items", "tables.tags", "tables.user_bias", "tables.item_bias"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
}

