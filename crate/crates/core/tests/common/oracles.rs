//! Brute-force checks of library results on randomised small instances.
//! Each check panics on the first disagreement.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scirec::corpus::{backfill_tags, build_vocabulary, encode_corpus, stop_words, tokenize, InteractionMatrix, RawDataset, RawItem, TagMatrix};
use scirec::encoder::{EncoderConfig, EncoderKind, Highway};
use scirec::evaluator::{evaluate_fold, make_split, recall_at_m, SplitMode, DEFAULT_MS};
use scirec::model::{multitask_loss, rating_loss, tag_loss, HybridModel, ItemTerms, MultiTaskConfig};
use scirec::params::ParamBlocks;
use scirec::trainer::loss_and_gradients;

const INSTANCES: u64 = 25;
const TOL: f64 = 1e-10;

pub fn oracle_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<(f64, bool)> {
    (0..n).map(|_| (rng.random_range(lo..hi), rng.random_bool(0.5))).collect()
}

pub fn rating_loss_matches_weighted_squared_error() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..30);
        let pairs = random_pairs(&mut rng, n, -1.5, 2.5);
        let cfg = MultiTaskConfig {
            lambda: 0.5,
            c_pos: rng.random_range(0.1..2.0),
            c_neg: rng.random_range(0.1..2.0),
            tag_negatives_per_positive: 1,
        };
        let mut total = 0.0;
        for &(pred, pos) in &pairs {
            let (target, weight) = if pos { (1.0, cfg.c_pos) } else { (0.0, cfg.c_neg) };
            total += weight * (pred - target) * (pred - target);
        }
        let oracle = total / n as f64;
        assert!((rating_loss(&pairs, &cfg).unwrap() - oracle).abs() < TOL, "seed {seed}");
    }
}

pub fn unit_weights_reduce_to_plain_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..INSTANCES {
        let pairs = random_pairs(&mut rng, 12, -1.0, 2.0);
        let preds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let targets: Vec<f64> = pairs.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
        let mse = preds.iter().zip(&targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64;
        assert!((rating_loss(&pairs, &MultiTaskConfig::default()).unwrap() - mse).abs() < TOL);
    }
}

pub fn tag_loss_matches_clamped_cross_entropy() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(1..30);
        let mut pairs = random_pairs(&mut rng, n, 0.0, 1.0);
        // include clamped extremes
        pairs.push((1.0, seed % 2 == 0));
        pairs.push((0.0, seed % 3 == 0));
        let eps = 1e-7;
        let oracle = -pairs
            .iter()
            .map(|&(p, pos)| {
                let p = p.max(eps).min(1.0 - eps);
                let t = if pos { 1.0 } else { 0.0 };
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / pairs.len() as f64;
        assert!((tag_loss(&pairs).unwrap() - oracle).abs() < TOL, "seed {seed}");
    }
}

pub fn combined_loss_is_convex_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..INSTANCES {
        let (cr, ct, lambda) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..=1.0));
        let c = multitask_loss(cr, ct, lambda);
        assert!((c - (lambda * cr + (1.0 - lambda) * ct)).abs() < TOL);
        assert!(c >= cr.min(ct) - TOL && c <= cr.max(ct) + TOL);
    }
}

/// Full batch loss from the model parameters, computed with explicit loops.
fn oracle_batch_loss(model: &HybridModel, seqs: &[Vec<u32>], terms: &[ItemTerms], cfg: &MultiTaskConfig) -> (f64, f64, f64) {
    let p = model.tables.dim();
    let (mut rating, mut n_rating, mut tag, mut n_tag) = (0.0, 0, 0.0, 0);
    for t in terms {
        let seq = &seqs[t.item];
        let mut f = vec![0.0; p];
        for k in 0..p {
            let mut s = 0.0;
            for &id in seq {
                s += model.encoder.embeddings[[id as usize, k]];
            }
            f[k] = s / seq.len() as f64 + model.tables.items[[t.item, k]];
        }
        for &(u, pos) in &t.ratings {
            let mut score = model.tables.user_bias[u] + model.tables.item_bias[t.item];
            for k in 0..p {
                score += model.tables.users[[u, k]] * f[k];
            }
            let (target, c) = if pos { (1.0, cfg.c_pos) } else { (0.0, cfg.c_neg) };
            rating += c * (score - target).powi(2);
            n_rating += 1;
        }
        for &(l, pos) in &t.tags {
            let mut z = 0.0;
            for k in 0..p {
                z += f[k] * model.tables.tags[[l, k]];
            }
            let prob = oracle_sigmoid(z).clamp(1e-7, 1.0 - 1e-7);
            tag -= if pos { prob.ln() } else { (1.0 - prob).ln() };
            n_tag += 1;
        }
    }
    let (cr, ct) = (rating / n_rating as f64, tag / n_tag as f64);
    (cfg.lambda * cr + (1.0 - cfg.lambda) * ct, cr, ct)
}

pub fn batch_losses_match_explicit_loops() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let p = rng.random_range(2..6);
        let enc = EncoderConfig {
            kind: EncoderKind::EmbedBaseline,
            embed_dim: p,
            output_dim: p,
            ..Default::default()
        };
        let (n_users, n_items, n_tags, vocab) = (4, 6, 5, 12);
        let mut model = HybridModel::init(&enc, vocab, n_users, n_items, n_tags, &mut rng).unwrap();
        for (_, mut b) in model.blocks_mut() {
            b.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let seqs: Vec<Vec<u32>> = (0..n_items)
            .map(|_| (0..rng.random_range(1..8)).map(|_| rng.random_range(0..vocab as u32)).collect())
            .collect();
        let terms: Vec<ItemTerms> = (0..n_items)
            .map(|item| ItemTerms {
                item,
                ratings: (0..rng.random_range(1..4)).map(|_| (rng.random_range(0..n_users), rng.random_bool(0.5))).collect(),
                tags: (0..rng.random_range(1..4)).map(|_| (rng.random_range(0..n_tags), rng.random_bool(0.5))).collect(),
            })
            .collect();
        let cfg = MultiTaskConfig {
            lambda: rng.random_range(0.0..=1.0),
            c_pos: rng.random_range(0.5..1.5),
            c_neg: rng.random_range(0.5..1.5),
            tag_negatives_per_positive: 1,
        };
        let (losses, _) = loss_and_gradients(&model, &seqs, &terms, &cfg, None, false).unwrap();
        let (c, cr, ct) = oracle_batch_loss(&model, &seqs, &terms, &cfg);
        assert!((losses.rating - cr).abs() < TOL, "seed {seed}: {} vs {cr}", losses.rating);
        assert!((losses.tag - ct).abs() < TOL, "seed {seed}: {} vs {ct}", losses.tag);
        assert!((losses.total - c).abs() < TOL, "seed {seed}: {} vs {c}", losses.total);
    }
}

pub fn highway_matches_scalar_formula() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let d = rng.random_range(1..7);
        let n = rng.random_range(1..5);
        let mut hw = Highway::init(d, &mut rng);
        hw.b_transform.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        hw.b_gate.mapv_inplace(|_| rng.random_range(-3.0..1.0));
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let (y, _) = hw.forward(x.view());
        for t in 0..n {
            for o in 0..d {
                let (mut h, mut g) = (hw.b_transform[o], hw.b_gate[o]);
                for i in 0..d {
                    h += x[[t, i]] * hw.w_transform[[i, o]];
                    g += x[[t, i]] * hw.w_gate[[i, o]];
                }
                let (h, g) = (h.tanh(), oracle_sigmoid(g));
                let expected = h * g + x[[t, o]] * (1.0 - g);
                assert!((y[[t, o]] - expected).abs() < TOL, "seed {seed}");
            }
        }
    }
}

pub fn recall_at_m_matches_counting() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(5..40);
        let mut ranked: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(ranked.as_mut_slice(), &mut rng);
        let positives: BTreeSet<usize> = (0..rng.random_range(1..n)).map(|_| rng.random_range(0..n)).collect();
        let positives: Vec<usize> = positives.into_iter().collect();
        for m in [1, 3, 10, n] {
            let mut hits = 0;
            for (rank, j) in ranked.iter().enumerate() {
                if rank < m && positives.contains(j) {
                    hits += 1;
                }
            }
            let oracle = hits as f64 / positives.len() as f64;
            assert!((recall_at_m(&ranked, &positives, m).unwrap() - oracle).abs() < TOL);
        }
    }
}

/// Brute-force Recall@M curve: score every candidate explicitly, fully sort.
fn oracle_curve(
    model: &HybridModel,
    seqs: &[Vec<u32>],
    targets: &InteractionMatrix,
    candidates: &dyn Fn(usize) -> Vec<usize>,
    warm: bool,
) -> Vec<f64> {
    let p = model.tables.dim();
    let mut sums = vec![0.0; DEFAULT_MS.len()];
    let mut n_users = 0;
    for u in 0..targets.n_users() {
        let positives = targets.positives(u);
        if positives.is_empty() {
            continue;
        }
        n_users += 1;
        let mut scored: Vec<(f64, usize)> = candidates(u)
            .into_iter()
            .map(|j| {
                let mut s = model.tables.user_bias[u] + if warm { model.tables.item_bias[j] } else { 0.0 };
                for k in 0..p {
                    let mut g = 0.0;
                    for &id in &seqs[j] {
                        g += model.encoder.embeddings[[id as usize, k]];
                    }
                    let f = g / seqs[j].len() as f64 + if warm { model.tables.items[[j, k]] } else { 0.0 };
                    s += model.tables.users[[u, k]] * f;
                }
                (s, j)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (slot, &m) in DEFAULT_MS.iter().enumerate() {
            let hits = scored.iter().take(m).filter(|(_, j)| positives.contains(j)).count();
            sums[slot] += hits as f64 / positives.len() as f64;
        }
    }
    sums.iter().map(|s| s / n_users as f64).collect()
}

pub fn fold_evaluation_matches_brute_force() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (n_users, n_items, vocab) = (rng.random_range(6..=10), rng.random_range(10..=20), 15);
        let pairs: Vec<(usize, usize)> = (0..n_users)
            .flat_map(|u| (0..n_items).map(move |j| (u, j)))
            .filter(|_| rng.random_bool(0.6))
            .collect();
        let x = InteractionMatrix::from_pairs(n_users, n_items, pairs).unwrap();
        let enc = EncoderConfig {
            kind: EncoderKind::EmbedBaseline,
            embed_dim: 3,
            output_dim: 3,
            ..Default::default()
        };
        let mut model = HybridModel::init(&enc, vocab, n_users, n_items, 2, &mut rng).unwrap();
        for (_, mut b) in model.blocks_mut() {
            b.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let seqs: Vec<Vec<u32>> = (0..n_items)
            .map(|_| (0..rng.random_range(1..6)).map(|_| rng.random_range(0..vocab as u32)).collect())
            .collect();
        for mode in [SplitMode::Warm, SplitMode::Cold] {
            let plan = make_split(&x, mode, seed).unwrap();
            let fold = plan.fold(&x, (seed % 5) as usize).unwrap();
            if fold.test.n_interactions() == 0 {
                continue;
            }
            let curve = evaluate_fold(&model, &seqs, &fold, &DEFAULT_MS).unwrap();
            let oracle = match mode {
                SplitMode::Warm => oracle_curve(
                    &model,
                    &seqs,
                    &fold.test,
                    &|u| (0..n_items).filter(|&j| !fold.train.contains(u, j) && !fold.validation.contains(u, j)).collect(),
                    true,
                ),
                SplitMode::Cold => oracle_curve(&model, &seqs, &fold.test, &|_| fold.test_items.clone(), false),
            };
            for (a, b) in curve.mean.iter().zip(&oracle) {
                assert!((a - b).abs() < TOL, "seed {seed} {mode}: {:?} vs {oracle:?}", curve.mean);
            }
        }
    }
}

const WORDS: [&str; 12] = [
    "graph", "theory", "learning", "proofs", "neural", "bayesian", "the", "and", "of", "kernel", "sparse", "model",
];

/// Brute-force top-k tf-idf tokens of document `d`.
pub fn oracle_tfidf(docs: &[Vec<String>], d: usize, k: usize) -> BTreeSet<String> {
    let stops = stop_words();
    let n = docs.len() as f64;
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &docs[d] {
        if !stops.contains(w.as_str()) && w != "<NUM>" {
            *tf.entry(w).or_default() += 1;
        }
    }
    let mut scored: Vec<(f64, &str)> = tf
        .into_iter()
        .map(|(w, c)| {
            let df = docs.iter().filter(|doc| doc.iter().any(|x| x == w)).count();
            (c as f64 * (n / df as f64).ln(), w)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, w)| w.to_string()).collect()
}

pub fn tfidf_backfill_matches_brute_force() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let n_docs = rng.random_range(2..=10);
        let texts: Vec<Vec<String>> = (0..n_docs)
            .map(|_| {
                let mut v = (0..rng.random_range(2..12))
                    .map(|_| {
                        if rng.random_bool(0.1) {
                            "42".to_string()
                        } else {
                            WORDS[rng.random_range(0..WORDS.len())].to_string()
                        }
                    })
                    .collect::<Vec<_>>();
                // every document needs at least one eligible word
                v.push(WORDS[rng.random_range(0..6)].to_string());
                v
            })
            .collect();
        let tagged: Vec<bool> = (0..n_docs).map(|_| rng.random_bool(0.3)).collect();
        let raw = RawDataset {
            items: texts
                .iter()
                .enumerate()
                .map(|(j, t)| RawItem {
                    id: j.to_string(),
                    title: String::new(),
                    abstract_text: t.join(" "),
                })
                .collect(),
            n_users: 0,
            interactions: vec![],
            tag_vocab: vec!["human".into()],
            tags: (0..n_docs).filter(|&j| tagged[j]).map(|j| (j, 0)).collect(),
            citations: vec![],
            duplicates_removed: 0,
        };
        let tokens: Vec<Vec<String>> = raw.items.iter().map(|i| tokenize(&i.title, &i.abstract_text)).collect();
        let vocab = build_vocabulary(tokens.iter().map(|t| t.as_slice()), 1);
        let corpus = encode_corpus(&raw, &vocab, 100).unwrap();
        let k = rng.random_range(1..=4);
        let tags: TagMatrix = backfill_tags(&raw, &corpus, k).unwrap();
        for j in 0..n_docs {
            let got: BTreeSet<String> = tags.tags_of(j).iter().map(|&l| tags.tag_vocab()[l].clone()).collect();
            if tagged[j] {
                assert_eq!(got, BTreeSet::from(["human".to_string()]));
                assert!(!tags.is_backfilled(j));
            } else {
                assert_eq!(got, oracle_tfidf(&tokens, j, k), "seed {seed} doc {j}: {:?}", texts[j]);
                assert!(tags.is_backfilled(j));
            }
        }
    }
}

/// Every check, by name.
pub const CHECKS: &[(&str, fn())] = &[
    ("rating_loss_matches_weighted_squared_error", rating_loss_matches_weighted_squared_error),
    ("unit_weights_reduce_to_plain_mse", unit_weights_reduce_to_plain_mse),
    ("tag_loss_matches_clamped_cross_entropy", tag_loss_matches_clamped_cross_entropy),
    ("combined_loss_is_convex_combination", combined_loss_is_convex_combination),
    ("batch_losses_match_explicit_loops", batch_losses_match_explicit_loops),
    ("highway_matches_scalar_formula", highway_matches_scalar_formula),
    ("recall_at_m_matches_counting", recall_at_m_matches_counting),
    ("fold_evaluation_matches_brute_force", fold_evaluation_matches_brute_force),
    ("tfidf_backfill_matches_brute_force", tfidf_backfill_matches_brute_force),
];
