//! Multi-task training loop.
//!
//! Each step samples users uniformly with replacement, one training positive
//! and one unseen negative per user, encodes every distinct batch item once
//! (with dropout) and applies a single Adam update to all parameters.
//!
//! Items are processed in fixed-size chunks whose gradients are merged in
//! item order, so results do not depend on how many threads run the chunks.

use std::collections::BTreeMap;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionMatrix, TagMatrix};
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::model::{
    item_terms_backward, multitask_loss, HybridGradients, HybridModel, ItemTerms, LossSums, MultiTaskConfig, TermWeights,
};
use crate::optim::{Adam, AdamConfig};

/// Items encoded by one unit of parallel work.
const CHUNK_ITEMS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_users: usize,
    pub max_steps: usize,
    pub optimizer: AdamConfig,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    /// Run item chunks on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_users: 512,
            max_steps: 20_000,
            optimizer: AdamConfig::default(),
            eval_every: 500,
            patience: 5,
            seed: 0,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_users == 0 {
            return Err(Error::Config("batch_users must be at least 1".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.max_steps {
            return Err(Error::Config(format!(
                "eval_every ({}) must lie in 1..=max_steps ({})",
                self.eval_every, self.max_steps
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// What the trainer may see.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    /// Token ids of every item.
    pub sequences: &'a [Vec<u32>],
    /// Positives the model is allowed to learn from.
    pub train: &'a InteractionMatrix,
    /// Every known positive, used to keep negatives unseen.
    pub library: &'a InteractionMatrix,
    pub tags: &'a TagMatrix,
    /// Items that may appear in a batch at all; `None` allows every item.
    pub allowed_items: Option<&'a [bool]>,
}

impl TrainingData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.sequences.len();
        let shapes = [
            ("train", self.train.n_items()),
            ("library", self.library.n_items()),
            ("tags", self.tags.n_items()),
            ("allowed_items", self.allowed_items.map_or(n, <[bool]>::len)),
        ];
        for (what, len) in shapes {
            if len != n {
                return Err(Error::Shape(format!("{what} covers {len} items, documents cover {n}")));
            }
        }
        if self.train.n_users() != self.library.n_users() {
            return Err(Error::Shape("train and library disagree on the user count".into()));
        }
        Ok(())
    }

    fn allowed(&self, item: usize) -> bool {
        self.allowed_items.is_none_or(|a| a[item])
    }
}

/// One sampled `(user, positive item, negative item)` triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Pre-computed sampling pools.
#[derive(Clone, Debug)]
pub struct Sampler {
    users: Vec<usize>,
    items: Vec<usize>,
}

impl Sampler {
    pub fn new(data: &TrainingData<'_>) -> Result<Self> {
        data.check()?;
        let users: Vec<usize> = (0..data.train.n_users()).filter(|&u| !data.train.positives(u).is_empty()).collect();
        if users.is_empty() {
            return Err(Error::Empty("training positives".into()));
        }
        let items: Vec<usize> = (0..data.sequences.len()).filter(|&j| data.allowed(j)).collect();
        for &u in &users {
            if let Some(&j) = data.train.positives(u).iter().find(|&&j| !data.allowed(j)) {
                return Err(Error::Config(format!("training positive ({u}, {j}) refers to a withheld item")));
            }
            if data.library.positives(u).iter().filter(|&&j| data.allowed(j)).count() >= items.len() {
                return Err(Error::Empty(format!("negative pool of user {u}")));
            }
        }
        Ok(Sampler { users, items })
    }

    /// Users with at least one training positive.
    pub fn eligible_users(&self) -> &[usize] {
        &self.users
    }

    /// Uniform draw from allowed items outside the user's library.
    fn negative<R: Rng>(&self, data: &TrainingData<'_>, user: usize, rng: &mut R) -> usize {
        let library = data.library.positives(user);
        loop {
            let j = self.items[rng.random_range(0..self.items.len())];
            if library.binary_search(&j).is_err() {
                return j;
            }
        }
    }

    pub fn sample_batch<R: Rng>(&self, data: &TrainingData<'_>, batch_users: usize, rng: &mut R) -> Vec<Triple> {
        (0..batch_users)
            .map(|_| {
                let user = self.users[rng.random_range(0..self.users.len())];
                let pos = data.train.positives(user);
                let positive = pos[rng.random_range(0..pos.len())];
                let negative = self.negative(data, user, rng);
                Triple { user, positive, negative }
            })
            .collect()
    }
}

/// All positive tags of `item` plus uniformly drawn absent tags.
fn sample_tag_terms<R: Rng>(tags: &TagMatrix, item: usize, per_positive: usize, rng: &mut R) -> Vec<(usize, bool)> {
    let positives = tags.tags_of(item);
    let mut out: Vec<(usize, bool)> = positives.iter().map(|&l| (l, true)).collect();
    if positives.len() < tags.n_tags() {
        for _ in 0..positives.len() * per_positive {
            let l = loop {
                let l = rng.random_range(0..tags.n_tags());
                if positives.binary_search(&l).is_err() {
                    break l;
                }
            };
            out.push((l, false));
        }
    }
    out
}

/// Groups a batch into per-item loss terms, in ascending item order.
pub fn batch_terms<R: Rng>(batch: &[Triple], tags: &TagMatrix, config: &MultiTaskConfig, rng: &mut R) -> Vec<ItemTerms> {
    let mut by_item: BTreeMap<usize, ItemTerms> = BTreeMap::new();
    for t in batch {
        for (item, positive) in [(t.positive, true), (t.negative, false)] {
            by_item
                .entry(item)
                .or_insert_with(|| ItemTerms {
                    item,
                    ..Default::default()
                })
                .ratings
                .push((t.user, positive));
        }
    }
    let mut terms: Vec<ItemTerms> = by_item.into_values().collect();
    for t in &mut terms {
        t.tags = sample_tag_terms(tags, t.item, config.tag_negatives_per_positive, rng);
    }
    terms
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub rating: f64,
    pub tag: f64,
}

/// Loss and gradient of `terms` for the given dropout seed.
///
/// With `dropout_seed == None` the encoder runs deterministically, which is
/// what the finite-difference checks use.
pub fn loss_and_gradients(
    model: &HybridModel,
    sequences: &[Vec<u32>],
    terms: &[ItemTerms],
    config: &MultiTaskConfig,
    dropout_seed: Option<u64>,
    parallel: bool,
) -> Result<(StepLosses, HybridGradients)> {
    let n_rating: usize = terms.iter().map(|t| t.ratings.len()).sum();
    let n_tag: usize = terms.iter().map(|t| t.tags.len()).sum();
    if n_rating == 0 {
        return Err(Error::Empty("rating batch".into()));
    }
    let weights = TermWeights::new(config, n_rating, n_tag);

    let run_chunk = |chunk: &[ItemTerms]| -> Result<(LossSums, HybridGradients)> {
        let mut grads = HybridGradients::zeros_for(model);
        let mut sums = LossSums::default();
        for t in chunk {
            let seq = &sequences[t.item];
            let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_seed(s, t.item as u64)));
            let (g, trace) = model.encoder.forward(seq, rng.as_mut())?;
            let (s, d_g) = item_terms_backward(&model.tables, config, weights, t, g.view(), &mut grads.tables);
            sums += s;
            model.encoder.backward(seq, &trace, &d_g, &mut grads.encoder);
        }
        Ok((sums, grads))
    };

    let parts: Vec<Result<(LossSums, HybridGradients)>> = if parallel {
        terms.par_chunks(CHUNK_ITEMS).map(run_chunk).collect()
    } else {
        terms.chunks(CHUNK_ITEMS).map(run_chunk).collect()
    };

    let mut sums = LossSums::default();
    let mut grads = HybridGradients::zeros_for(model);
    for part in parts {
        let (s, g) = part?;
        sums += s;
        grads.merge(g);
    }
    let rating = sums.rating / n_rating as f64;
    let tag = if n_tag == 0 { 0.0 } else { sums.tag / n_tag as f64 };
    let losses = StepLosses {
        total: multitask_loss(rating, tag, config.lambda),
        rating,
        tag,
    };
    Ok((losses, grads))
}

/// Mutable training state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub model: HybridModel,
    pub optimizer: Adam<HybridModel>,
    pub best_validation_recall: f64,
    pub evals_since_best: usize,
    pub rng: ChaCha8Rng,
    seed: u64,
}

impl TrainState {
    pub fn new(model: HybridModel, config: &TrainConfig) -> Self {
        let optimizer = Adam::new(config.optimizer.clone(), &model);
        TrainState {
            step: 0,
            model,
            optimizer,
            best_validation_recall: f64::NEG_INFINITY,
            evals_since_best: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7472_6169_6e)),
            seed: config.seed,
        }
    }
}

/// Runs one optimisation step on `batch`.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Triple],
    data: &TrainingData<'_>,
    mt: &MultiTaskConfig,
    parallel: bool,
) -> Result<StepLosses> {
    let terms = batch_terms(batch, data.tags, mt, &mut state.rng);
    let dropout_seed = derive_seed(state.seed, state.step as u64 + 1);
    let (losses, grads) = loss_and_gradients(&state.model, data.sequences, &terms, mt, Some(dropout_seed), parallel)?;
    if !(losses.total.is_finite() && losses.rating.is_finite() && losses.tag.is_finite()) {
        let mut users: Vec<usize> = batch.iter().map(|t| t.user).collect();
        users.sort_unstable();
        users.dedup();
        return Err(Error::NonFiniteLoss {
            step: state.step,
            users,
            items: terms.iter().map(|t| t.item).collect(),
        });
    }
    let dense = grads.to_dense(&state.model);
    state.optimizer.update(&mut state.model, &dense)?;
    state.step += 1;
    Ok(losses)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub rating_loss: f64,
    pub tag_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub recall: f64,
    pub improved: bool,
}

/// Callbacks invoked during [`fit`].
pub trait TrainObserver {
    /// Every sampled batch, with the distinct items it encodes.
    fn on_batch(&mut self, _step: usize, _batch: &[Triple], _items: &[usize]) {}
    /// A new best validation recall was reached.
    fn on_improvement(&mut self, _model: &HybridModel, _record: &EvalRecord) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best_model: HybridModel,
    pub best_step: usize,
    pub best_recall: f64,
    pub steps_taken: usize,
    pub stopped_early: bool,
    pub log: Vec<LogEntry>,
    pub evals: Vec<EvalRecord>,
}

/// Trains until `max_steps` or until `patience` evaluations in a row fail to
/// beat the best validation recall, returning the best model seen.
///
/// `validate` maps a model to its validation recall.
pub fn fit(
    model: HybridModel,
    data: &TrainingData<'_>,
    mt: &MultiTaskConfig,
    config: &TrainConfig,
    validate: &mut dyn FnMut(&HybridModel) -> Result<f64>,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutcome> {
    mt.validate()?;
    config.validate()?;
    let sampler = Sampler::new(data)?;
    let mut state = TrainState::new(model, config);
    let mut best_model = state.model.clone();
    let mut best_step = 0;
    let mut log = Vec::new();
    let mut evals = Vec::new();
    let mut stopped_early = false;

    while state.step < config.max_steps {
        let batch = sampler.sample_batch(data, config.batch_users, &mut state.rng);
        let mut items: Vec<usize> = batch.iter().flat_map(|t| [t.positive, t.negative]).collect();
        items.sort_unstable();
        items.dedup();
        observer.on_batch(state.step, &batch, &items);

        let losses = train_step(&mut state, &batch, data, mt, config.parallel)?;
        let entry = LogEntry {
            step: state.step,
            loss: losses.total,
            rating_loss: losses.rating,
            tag_loss: losses.tag,
        };
        debug!("step {} loss {:.6} rating {:.6} tag {:.6}", entry.step, entry.loss, entry.rating_loss, entry.tag_loss);
        log.push(entry);

        if state.step % config.eval_every == 0 || state.step == config.max_steps {
            let recall = validate(&state.model)?;
            let improved = recall > state.best_validation_recall;
            let record = EvalRecord {
                step: state.step,
                recall,
                improved,
            };
            info!("step {} validation recall {:.4}{}", state.step, recall, if improved { " (best)" } else { "" });
            evals.push(record);
            if improved {
                state.best_validation_recall = recall;
                state.evals_since_best = 0;
                best_model = state.model.clone();
                best_step = state.step;
                observer.on_improvement(&state.model, &record)?;
            } else {
                state.evals_since_best += 1;
                if state.evals_since_best >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    Ok(FitOutcome {
        best_model,
        best_step,
        best_recall: state.best_validation_recall,
        steps_taken: state.step,
        stopped_early,
        log,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderKind};

    fn tags_one_each(n_items: usize, n_tags: usize) -> TagMatrix {
        TagMatrix::new(
            (0..n_tags).map(|l| format!("t{l}")).collect(),
            (0..n_items).map(|j| vec![j % n_tags]).collect(),
            vec![false; n_items],
        )
        .unwrap()
    }

    #[test]
    fn single_choice_positive_and_negative() {
        let train = InteractionMatrix::from_pairs(1, 2, [(0, 0)]).unwrap();
        let tags = tags_one_each(2, 2);
        let seqs = vec![vec![3u32], vec![4]];
        let data = TrainingData {
            sequences: &seqs,
            train: &train,
            library: &train,
            tags: &tags,
            allowed_items: None,
        };
        let sampler = Sampler::new(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in sampler.sample_batch(&data, 50, &mut rng) {
            assert_eq!((t.user, t.positive, t.negative), (0, 0, 1));
        }
    }

    #[test]
    fn no_positives_is_an_error() {
        let train = InteractionMatrix::from_pairs(2, 2, []).unwrap();
        let tags = tags_one_each(2, 2);
        let seqs = vec![vec![3u32], vec![4]];
        let data = TrainingData {
            sequences: &seqs,
            train: &train,
            library: &train,
            tags: &tags,
            allowed_items: None,
        };
        assert!(Sampler::new(&data).is_err());
    }

    #[test]
    fn tag_terms_cover_positives_and_sample_absent_negatives() {
        let tags = TagMatrix::new((0..6).map(|l| l.to_string()).collect(), vec![vec![1, 4]], vec![false]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let terms = sample_tag_terms(&tags, 0, 2, &mut rng);
            assert_eq!(terms.len(), 6);
            assert_eq!(&terms[..2], &[(1, true), (4, true)]);
            assert!(terms[2..].iter().all(|&(l, pos)| !pos && l != 1 && l != 4));
        }
    }

    #[test]
    fn rating_term_count_is_twice_batch() {
        let tags = tags_one_each(4, 2);
        let batch = vec![
            Triple { user: 0, positive: 1, negative: 2 },
            Triple { user: 1, positive: 1, negative: 3 },
            Triple { user: 0, positive: 1, negative: 2 },
        ];
        let terms = batch_terms(&batch, &tags, &MultiTaskConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(terms.iter().map(|t| t.ratings.len()).sum::<usize>(), 6);
        assert_eq!(terms.iter().map(|t| t.item).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let cfg = EncoderConfig {
            kind: EncoderKind::EmbedBaseline,
            embed_dim: 4,
            output_dim: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = HybridModel::init(&cfg, 8, 2, 3, 2, &mut rng).unwrap();
        let train = InteractionMatrix::from_pairs(2, 3, [(0, 0), (1, 1)]).unwrap();
        let tags = tags_one_each(3, 2);
        let seqs = vec![vec![3u32, 4], vec![5], vec![6, 7]];
        let data = TrainingData {
            sequences: &seqs,
            train: &train,
            library: &train,
            tags: &tags,
            allowed_items: None,
        };
        let tc = TrainConfig {
            optimizer: AdamConfig { lr: 0.0, ..Default::default() },
            batch_users: 2,
            ..Default::default()
        };
        let mut state = TrainState::new(model.clone(), &tc);
        let batch = Sampler::new(&data).unwrap().sample_batch(&data, 2, &mut rng);
        let losses = train_step(&mut state, &batch, &data, &MultiTaskConfig::default(), false).unwrap();
        assert!(losses.total.is_finite() && losses.total > 0.0);
        assert_eq!(state.model, model);
        assert_eq!(state.step, 1);
    }
}
