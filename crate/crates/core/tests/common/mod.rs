//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scirec::encoder::{EncoderConfig, EncoderKind};
use scirec::model::{HybridModel, ItemTerms, MultiTaskConfig};
use scirec::params::ParamBlocks;
use scirec::trainer::loss_and_gradients;

pub mod oracles;

pub const FD_STEP: f64 = 1e-5;

/// A tiny model with every parameter (including item offsets and biases)
/// randomised, 3 users, 4 items, 5 tags and sequences of length 1 to 6.
pub struct GradInstance {
    pub model: HybridModel,
    pub sequences: Vec<Vec<u32>>,
    pub terms: Vec<ItemTerms>,
    pub config: MultiTaskConfig,
}

pub fn small_encoder(kind: EncoderKind) -> EncoderConfig {
    // the GRU baseline pools a bidirectional layer, so its width must be even
    let p = if kind == EncoderKind::Rhcnn { 3 } else { 4 };
    EncoderConfig {
        kind,
        embed_dim: 4,
        context_dim: 6,
        baseline_dim: p,
        conv_filters: 5,
        output_dim: p,
        kernel_width: 3,
        dropout: [0.3, 0.3, 0.2],
        bidirectional: true,
    }
}

pub fn grad_instance(kind: EncoderKind, seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 10;
    let mut model = HybridModel::init(&small_encoder(kind), vocab, 3, 4, 5, &mut rng).unwrap();
    for (name, mut block) in model.blocks_mut() {
        // positive convolution biases keep every ReLU filter alive, so the
        // pooling path is actually exercised
        let range = if name.starts_with("encoder.conv") && name.ends_with("bias") { 0.05..0.5 } else { -0.5..0.5 };
        block.mapv_inplace(|_| rng.random_range(range.clone()));
    }
    let sequences: Vec<Vec<u32>> = [1usize, 6, 4, 3]
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(0..vocab as u32)).collect())
        .collect();
    let terms = vec![
        ItemTerms { item: 0, ratings: vec![(0, true), (2, false)], tags: vec![(1, true), (3, false)] },
        ItemTerms { item: 1, ratings: vec![(1, true)], tags: vec![(0, true), (4, false), (2, false)] },
        ItemTerms { item: 2, ratings: vec![(0, false), (1, false)], tags: vec![(2, true), (1, false)] },
        ItemTerms { item: 3, ratings: vec![(2, true)], tags: vec![(4, true), (0, false)] },
    ];
    let config = MultiTaskConfig { lambda: 0.4, c_pos: 1.0, c_neg: 0.7, tag_negatives_per_positive: 1 };
    GradInstance { model, sequences, terms, config }
}

pub fn loss_of(inst: &GradInstance, model: &HybridModel, dropout_seed: Option<u64>) -> f64 {
    loss_and_gradients(model, &inst.sequences, &inst.terms, &inst.config, dropout_seed, false).unwrap().0.total
}

/// `|a - n| / max(|a|, |n|)`, or the absolute difference when both are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale > 1e-6 {
        (analytic - numeric).abs() / scale
    } else {
        (analytic - numeric).abs()
    }
}

pub struct BlockCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub analytic_norm: f64,
}

/// Worst relative error of every parameter block against central differences.
pub fn gradient_report(inst: &GradInstance, dropout_seed: Option<u64>) -> Vec<BlockCheck> {
    let (_, grads) = loss_and_gradients(&inst.model, &inst.sequences, &inst.terms, &inst.config, dropout_seed, false).unwrap();
    let analytic = grads.to_dense(&inst.model);
    let analytic_blocks: Vec<Vec<f64>> = analytic.blocks().into_iter().map(|(_, b)| b.iter().copied().collect()).collect();
    let names: Vec<String> = inst.model.blocks().into_iter().map(|(n, _)| n).collect();

    let mut probe = inst.model.clone();
    let mut report = Vec::new();
    for (b, name) in names.iter().enumerate() {
        let len = analytic_blocks[b].len();
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let original = nth(&mut probe, b, k, None);
            nth(&mut probe, b, k, Some(original + FD_STEP));
            let plus = loss_of(inst, &probe, dropout_seed);
            nth(&mut probe, b, k, Some(original - FD_STEP));
            let minus = loss_of(inst, &probe, dropout_seed);
            nth(&mut probe, b, k, Some(original));
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic_blocks[b][k], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        report.push(BlockCheck {
            name: name.clone(),
            max_relative_error: worst,
            analytic_norm: analytic_blocks[b].iter().map(|v| v * v).sum::<f64>().sqrt(),
        });
    }
    report
}

/// Reads (and optionally overwrites) entry `k` of block `b`.
fn nth(model: &mut HybridModel, b: usize, k: usize, set: Option<f64>) -> f64 {
    let mut blocks = model.blocks_mut();
    let slot = blocks[b].1.iter_mut().nth(k).unwrap();
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}
