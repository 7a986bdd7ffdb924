//! Warm- and cold-start splits, Recall@M curves and the comparison grid.

use std::collections::{BTreeSet, HashSet};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionMatrix, TagMatrix};
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::model::{HybridModel, LatentTables};
use crate::trainer::{TrainObserver, TrainingData, Triple};

pub const N_FOLDS: usize = 5;
/// Items with fewer likes than this never enter a warm test fold.
pub const PIN_THRESHOLD: usize = 5;
pub const VALIDATION_FRACTION: f64 = 0.05;
pub const DEFAULT_MS: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
/// Cut-off used for early stopping and tag recall.
pub const SELECTION_M: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Warm,
    Cold,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Warm => "warm",
            SplitMode::Cold => "cold",
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warm" => Ok(SplitMode::Warm),
            "cold" => Ok(SplitMode::Cold),
            _ => Err(Error::Config(format!("unknown split mode {s:?}, expected warm or cold"))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fold assignment of every positive (warm) or every item (cold).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub n_folds: usize,
    pub seed: u64,
    /// Warm: per user, aligned with that user's sorted positives; `None`
    /// marks a pinned item.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_folds: Vec<Vec<Option<u8>>>,
    /// Cold: fold of every item.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub item_folds: Vec<u8>,
}

fn round_robin(n: usize, n_folds: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut folds = vec![0u8; n];
    for (rank, &k) in order.iter().enumerate() {
        folds[k] = (rank % n_folds) as u8;
    }
    folds
}

pub fn make_split(interactions: &InteractionMatrix, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    if interactions.n_interactions() == 0 {
        return Err(Error::Empty("interactions".into()));
    }
    let mut plan = SplitPlan {
        mode,
        n_folds: N_FOLDS,
        seed,
        pair_folds: Vec::new(),
        item_folds: Vec::new(),
    };
    match mode {
        SplitMode::Warm => {
            let likes = interactions.item_like_counts();
            for (user, row) in interactions.rows().iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, user as u64));
                let free: Vec<usize> = (0..row.len()).filter(|&k| likes[row[k]] >= PIN_THRESHOLD).collect();
                let folds = round_robin(free.len(), N_FOLDS, &mut rng);
                let mut assigned = vec![None; row.len()];
                for (&k, &f) in free.iter().zip(&folds) {
                    assigned[k] = Some(f);
                }
                plan.pair_folds.push(assigned);
            }
        }
        SplitMode::Cold => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            plan.item_folds = round_robin(interactions.n_items(), N_FOLDS, &mut rng);
        }
    }
    Ok(plan)
}

/// Everything one fold exposes to training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub mode: SplitMode,
    pub index: usize,
    pub train: InteractionMatrix,
    pub validation: InteractionMatrix,
    pub test: InteractionMatrix,
    /// Cold: the fold's test items, ascending.
    pub test_items: Vec<usize>,
    /// Cold: items held out for early stopping, ascending.
    pub validation_items: Vec<usize>,
    /// Cold: items the trainer may touch.
    pub allowed_items: Option<Vec<bool>>,
}

impl Fold {
    pub fn training_data<'a>(
        &'a self,
        sequences: &'a [Vec<u32>],
        library: &'a InteractionMatrix,
        tags: &'a TagMatrix,
    ) -> TrainingData<'a> {
        TrainingData {
            sequences,
            train: &self.train,
            library,
            tags,
            allowed_items: self.allowed_items.as_deref(),
        }
    }
}

/// Number of validation picks out of `n` candidates; at least one whenever
/// `n > 1`, always leaving one candidate behind.
fn validation_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        ((n as f64 * VALIDATION_FRACTION).ceil() as usize).min(n - 1)
    }
}

impl SplitPlan {
    pub fn fold(&self, interactions: &InteractionMatrix, index: usize) -> Result<Fold> {
        if index >= self.n_folds {
            return Err(Error::IndexOutOfRange {
                kind: "fold",
                index,
                len: self.n_folds,
            });
        }
        let (n_users, n_items) = (interactions.n_users(), interactions.n_items());
        let fold_seed = derive_seed(self.seed ^ 0x7661_6c69_64, index as u64);
        match self.mode {
            SplitMode::Warm => {
                if self.pair_folds.len() != n_users {
                    return Err(Error::Shape("split plan does not match the interactions".into()));
                }
                let mut train = Vec::new();
                let mut valid = Vec::new();
                let mut test = Vec::new();
                for (user, row) in interactions.rows().iter().enumerate() {
                    let folds = &self.pair_folds[user];
                    if folds.len() != row.len() {
                        return Err(Error::Shape(format!("split plan row {user} does not match the interactions")));
                    }
                    let mut free_train = Vec::new();
                    for (&item, &fold) in row.iter().zip(folds) {
                        match fold {
                            Some(f) if f as usize == index => test.push((user, item)),
                            Some(_) => free_train.push(item),
                            None => train.push((user, item)),
                        }
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, user as u64));
                    free_train.shuffle(&mut rng);
                    let k = validation_count(free_train.len());
                    valid.extend(free_train[..k].iter().map(|&j| (user, j)));
                    train.extend(free_train[k..].iter().map(|&j| (user, j)));
                }
                Ok(Fold {
                    mode: self.mode,
                    index,
                    train: InteractionMatrix::from_pairs(n_users, n_items, train)?,
                    validation: InteractionMatrix::from_pairs(n_users, n_items, valid)?,
                    test: InteractionMatrix::from_pairs(n_users, n_items, test)?,
                    test_items: Vec::new(),
                    validation_items: Vec::new(),
                    allowed_items: None,
                })
            }
            SplitMode::Cold => {
                if self.item_folds.len() != n_items {
                    return Err(Error::Shape("split plan does not match the item count".into()));
                }
                let test_items: Vec<usize> = (0..n_items).filter(|&j| self.item_folds[j] as usize == index).collect();
                let mut rest: Vec<usize> = (0..n_items).filter(|&j| self.item_folds[j] as usize != index).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
                rest.shuffle(&mut rng);
                let mut validation_items = rest[..validation_count(rest.len())].to_vec();
                validation_items.sort_unstable();
                let mut role = vec![0u8; n_items];
                for &j in &test_items {
                    role[j] = 2;
                }
                for &j in &validation_items {
                    role[j] = 1;
                }
                let split = |r: u8| {
                    InteractionMatrix::from_pairs(n_users, n_items, interactions.pairs().filter(|&(_, j)| role[j] == r))
                };
                Ok(Fold {
                    mode: self.mode,
                    index,
                    train: split(0)?,
                    validation: split(1)?,
                    test: split(2)?,
                    test_items,
                    validation_items,
                    allowed_items: Some(role.iter().map(|&r| r == 0).collect()),
                })
            }
        }
    }
}

/// `|top-M ∩ positives| / |positives|`; `None` when there are no positives.
pub fn recall_at_m(ranked: &[usize], positives: &[usize], m: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let pos: HashSet<usize> = positives.iter().copied().collect();
    let hits = ranked.iter().take(m).filter(|j| pos.contains(j)).count();
    Some(hits as f64 / pos.len() as f64)
}

/// Returns the first `m` candidates by score descending, ascending index on ties.
pub fn rank_top(scored: &mut [(usize, f64)], m: usize) -> Vec<usize> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let m = m.min(scored.len());
    if m == 0 {
        return Vec::new();
    }
    if m < scored.len() {
        scored.select_nth_unstable_by(m - 1, cmp);
    }
    let head = &mut scored[..m];
    head.sort_unstable_by(cmp);
    head.iter().map(|x| x.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecall {
    pub user: usize,
    pub recalls: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub ms: Vec<usize>,
    /// Mean over evaluated users, one entry per M.
    pub mean: Vec<f64>,
    pub per_user: Vec<UserRecall>,
}

impl RecallCurve {
    pub fn at(&self, m: usize) -> Option<f64> {
        self.ms.iter().position(|&x| x == m).map(|k| self.mean[k])
    }

    pub fn n_users(&self) -> usize {
        self.per_user.len()
    }

    /// `M,mean_recall,n_users`, one row per cut-off.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["M", "mean_recall", "n_users"])?;
        for (m, r) in self.ms.iter().zip(&self.mean) {
            w.write_record([m.to_string(), r.to_string(), self.n_users().to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Scores any item for any user.
pub trait Scorer: Sync {
    fn score(&self, user: usize, item: usize) -> f64;
}

/// Warm scores `b_i + b_j + u_i . (g_j + v_j)`, cold scores `b_i + u_i . g_j`.
pub struct ModelScorer<'a> {
    tables: &'a LatentTables,
    warm: bool,
    /// Item representations; rows for items that were not encoded are zero.
    representations: Array2<f64>,
}

impl<'a> ModelScorer<'a> {
    /// Encodes `items` once; other items must not be scored.
    pub fn new(model: &'a HybridModel, sequences: &[Vec<u32>], items: &[usize], warm: bool) -> Result<Self> {
        let seqs: Vec<&[u32]> = items.iter().map(|&j| sequences[j].as_slice()).collect();
        let encoded = model.encode_many(&seqs)?;
        let mut representations = Array2::zeros((model.tables.n_items(), model.tables.dim()));
        for (k, &j) in items.iter().enumerate() {
            let mut row = representations.row_mut(j);
            row.assign(&encoded.row(k));
            if warm {
                row += &model.tables.items.row(j);
            }
        }
        Ok(ModelScorer {
            tables: &model.tables,
            warm,
            representations,
        })
    }

    pub fn representation(&self, item: usize) -> ndarray::ArrayView1<'_, f64> {
        self.representations.row(item)
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, user: usize, item: usize) -> f64 {
        let item_bias = if self.warm { self.tables.item_bias[item] } else { 0.0 };
        self.tables.user_bias[user] + item_bias + self.tables.users.row(user).dot(&self.representations.row(item))
    }
}

/// Which items a user is ranked over.
pub enum Candidates<'a> {
    /// Every item except the listed known positives.
    AllExcept(&'a [&'a InteractionMatrix]),
    /// The same list for every user.
    Fixed(&'a [usize]),
}

/// Recall curve over every user with at least one positive in `targets`.
pub fn recall_curve(scorer: &dyn Scorer, targets: &InteractionMatrix, candidates: &Candidates<'_>, ms: &[usize]) -> Result<RecallCurve> {
    if ms.is_empty() {
        return Err(Error::Config("no cut-offs requested".into()));
    }
    let max_m = *ms.iter().max().expect("nonempty");
    let users: Vec<usize> = (0..targets.n_users()).filter(|&u| !targets.positives(u).is_empty()).collect();
    let per_user: Vec<UserRecall> = users
        .par_iter()
        .map(|&user| {
            let mut scored: Vec<(usize, f64)> = match candidates {
                Candidates::AllExcept(known) => (0..targets.n_items())
                    .filter(|&j| !known.iter().any(|k| k.contains(user, j)))
                    .map(|j| (j, scorer.score(user, j)))
                    .collect(),
                Candidates::Fixed(items) => items.iter().map(|&j| (j, scorer.score(user, j))).collect(),
            };
            let ranked = rank_top(&mut scored, max_m);
            let positives = targets.positives(user);
            let recalls = ms.iter().map(|&m| recall_at_m(&ranked, positives, m).expect("nonempty")).collect();
            UserRecall { user, recalls }
        })
        .collect();
    if per_user.is_empty() {
        return Err(Error::Empty("users with held-out positives".into()));
    }
    let mean = (0..ms.len())
        .map(|k| per_user.iter().map(|u| u.recalls[k]).sum::<f64>() / per_user.len() as f64)
        .collect();
    Ok(RecallCurve {
        ms: ms.to_vec(),
        mean,
        per_user,
    })
}

/// Test-fold recall curve for a trained model.
pub fn evaluate_fold(model: &HybridModel, sequences: &[Vec<u32>], fold: &Fold, ms: &[usize]) -> Result<RecallCurve> {
    match fold.mode {
        SplitMode::Warm => {
            let all: Vec<usize> = (0..fold.train.n_items()).collect();
            let scorer = ModelScorer::new(model, sequences, &all, true)?;
            let known = [&fold.train, &fold.validation];
            recall_curve(&scorer, &fold.test, &Candidates::AllExcept(&known), ms)
        }
        SplitMode::Cold => {
            let scorer = ModelScorer::new(model, sequences, &fold.test_items, false)?;
            recall_curve(&scorer, &fold.test, &Candidates::Fixed(&fold.test_items), ms)
        }
    }
}

/// Validation Recall@50 used for early stopping.
pub fn validation_recall(model: &HybridModel, sequences: &[Vec<u32>], fold: &Fold) -> Result<f64> {
    let curve = match fold.mode {
        SplitMode::Warm => {
            let all: Vec<usize> = (0..fold.train.n_items()).collect();
            let scorer = ModelScorer::new(model, sequences, &all, true)?;
            let known = [&fold.train];
            recall_curve(&scorer, &fold.validation, &Candidates::AllExcept(&known), &[SELECTION_M])?
        }
        SplitMode::Cold => {
            if fold.validation_items.len() <= SELECTION_M {
                log::warn!(
                    "only {} validation items, Recall@{SELECTION_M} cannot separate models",
                    fold.validation_items.len()
                );
            }
            let scorer = ModelScorer::new(model, sequences, &fold.validation_items, false)?;
            recall_curve(&scorer, &fold.validation, &Candidates::Fixed(&fold.validation_items), &[SELECTION_M])?
        }
    };
    Ok(curve.mean[0])
}

/// Mean Recall@M of tag rankings over `items`, using cold representations.
pub fn evaluate_tags(model: &HybridModel, sequences: &[Vec<u32>], tags: &TagMatrix, items: &[usize], m: usize) -> Result<f64> {
    let items: Vec<usize> = items.iter().copied().filter(|&j| !tags.tags_of(j).is_empty()).collect();
    let seqs: Vec<&[u32]> = items.iter().map(|&j| sequences[j].as_slice()).collect();
    let encoded = model.encode_many(&seqs)?;
    let logits = encoded.dot(&model.tables.tags.t());
    tag_recall_from_scores(&logits, &items, tags, m)
}

/// Mean tag recall given an items × tags score matrix whose row `k` belongs
/// to `items[k]`.
pub fn tag_recall_from_scores(scores: &Array2<f64>, items: &[usize], tags: &TagMatrix, m: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("tagged test items".into()));
    }
    let total: f64 = items
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let mut scored: Vec<(usize, f64)> = scores.row(k).iter().copied().enumerate().collect();
            let ranked = rank_top(&mut scored, m);
            recall_at_m(&ranked, tags.tags_of(j), m).unwrap_or(0.0)
        })
        .sum();
    Ok(total / items.len() as f64)
}

/// Records every way training could see held-out data.
#[derive(Clone, Debug, Default)]
pub struct LeakageAudit {
    test_pairs: HashSet<(usize, usize)>,
    test_items: BTreeSet<usize>,
    pub batches: usize,
    pub violations: Vec<String>,
}

impl LeakageAudit {
    pub fn for_fold(fold: &Fold) -> Self {
        LeakageAudit {
            test_pairs: fold.test.pairs().collect(),
            test_items: fold.test_items.iter().copied().collect(),
            ..Default::default()
        }
    }
}

impl TrainObserver for LeakageAudit {
    fn on_batch(&mut self, step: usize, batch: &[Triple], items: &[usize]) {
        self.batches += 1;
        for t in batch {
            for j in [t.positive, t.negative] {
                if self.test_pairs.contains(&(t.user, j)) {
                    self.violations.push(format!("step {step}: test pair ({}, {j}) in batch", t.user));
                }
            }
        }
        for j in items {
            if self.test_items.contains(j) {
                self.violations.push(format!("step {step}: test item {j} encoded"));
            }
        }
    }
}

/// One experiment of the comparison grid.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub dataset: String,
    pub mode: SplitMode,
    pub max_length: usize,
    pub encoder: EncoderKind,
}

/// Every dataset × mode × length × encoder combination, except the embedding
/// baseline on long texts.
pub fn grid_cells(datasets: &[String], kinds: &[EncoderKind], lengths: &[usize], modes: &[SplitMode]) -> Vec<GridCell> {
    let long = lengths.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for dataset in datasets {
        for &mode in modes {
            for &max_length in lengths {
                for &encoder in kinds {
                    if encoder == EncoderKind::EmbedBaseline && max_length == long && lengths.len() > 1 {
                        continue;
                    }
                    out.push(GridCell {
                        dataset: dataset.clone(),
                        mode,
                        max_length,
                        encoder,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// Mean test curve over the folds that were run.
    pub curve: RecallCurve,
    /// Cold mode only.
    pub tag_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: GridCell,
    pub outcome: std::result::Result<CellResult, String>,
}

/// Runs every cell, recording failures instead of stopping.
pub fn run_grid(cells: &[GridCell], run: &mut dyn FnMut(&GridCell) -> Result<CellResult>) -> Vec<GridRow> {
    cells
        .iter()
        .map(|cell| GridRow {
            cell: cell.clone(),
            outcome: run(cell).map_err(|e| e.to_string()),
        })
        .collect()
}

/// Markdown table of Recall@50 (percent) per cell.
pub fn results_table(rows: &[GridRow]) -> String {
    let mut out = String::from("| dataset | mode | length | encoder | Recall@50 (%) | tag Recall@50 (%) |\n|---|---|---|---|---|---|\n");
    for row in rows {
        let c = &row.cell;
        let (recall, tags) = match &row.outcome {
            Ok(r) => (
                r.curve.at(SELECTION_M).map_or("n/a".into(), |v| format!("{:.2}", 100.0 * v)),
                r.tag_recall.map_or("-".into(), |v| format!("{:.2}", 100.0 * v)),
            ),
            Err(e) => (format!("failed: {e}"), "-".into()),
        };
        out.push_str(&format!("| {} | {} | {} | {} | {} | {} |\n", c.dataset, c.mode, c.max_length, c.encoder, recall, tags));
    }
    out
}

/// Averages curves that share cut-offs; per-user entries are concatenated.
pub fn mean_curve(curves: &[RecallCurve]) -> Result<RecallCurve> {
    let first = curves.first().ok_or_else(|| Error::Empty("curves".into()))?;
    if curves.iter().any(|c| c.ms != first.ms) {
        return Err(Error::Shape("curves use different cut-offs".into()));
    }
    let mut mean = Array1::<f64>::zeros(first.ms.len());
    for c in curves {
        mean += &Array1::from(c.mean.clone());
    }
    mean /= curves.len() as f64;
    Ok(RecallCurve {
        ms: first.ms.clone(),
        mean: mean.to_vec(),
        per_user: curves.iter().flat_map(|c| c.per_user.iter().cloned()).collect(),
    })
}
