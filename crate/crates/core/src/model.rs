//! Collaborative-filtering heads on top of the text encoder.
//!
//! A warm item is represented as `F = g + v_j`, a cold one as `F = g`. Ratings
//! are predicted as `bias_i + bias_j + u_i . F` (no item bias for cold items)
//! and tags as `sigmoid(F . t_l)`. Training minimises
//! `lambda * C_R + (1 - lambda) * C_T`, with `C_R` a confidence-weighted mean
//! squared error and `C_T` a binary cross-entropy over sampled tag pairs.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderGradients, EncoderParameters};
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid};
use crate::params::{extend_prefixed, uniform_matrix, ParamBlocks, SparseEntries, SparseRows};

/// Probability clamp used by the tag cross-entropy.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTaskConfig {
    pub lambda: f64,
    #[serde(default = "one")]
    pub c_pos: f64,
    #[serde(default = "one")]
    pub c_neg: f64,
    #[serde(default = "one_count")]
    pub tag_negatives_per_positive: usize,
}

fn one() -> f64 {
    1.0
}

fn one_count() -> usize {
    1
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        MultiTaskConfig {
            lambda: 0.5,
            c_pos: 1.0,
            c_neg: 1.0,
            tag_negatives_per_positive: 1,
        }
    }
}

impl MultiTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.c_pos > 0.0 && self.c_neg > 0.0) || !self.c_pos.is_finite() || !self.c_neg.is_finite() {
            return Err(Error::Config(format!(
                "confidence weights must be positive, got c_pos={} c_neg={}",
                self.c_pos, self.c_neg
            )));
        }
        Ok(())
    }

    pub fn confidence(&self, positive: bool) -> f64 {
        if positive {
            self.c_pos
        } else {
            self.c_neg
        }
    }
}

/// User, item-offset and tag embeddings plus the two bias vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTables {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
    pub tags: Array2<f64>,
    pub user_bias: Array1<f64>,
    pub item_bias: Array1<f64>,
}

impl ParamBlocks for LatentTables {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        vec![
            ("users".into(), self.users.view().into_dyn()),
            ("items".into(), self.items.view().into_dyn()),
            ("tags".into(), self.tags.view().into_dyn()),
            ("user_bias".into(), self.user_bias.view().into_dyn()),
            ("item_bias".into(), self.item_bias.view().into_dyn()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        vec![
            ("users".into(), self.users.view_mut().into_dyn()),
            ("items".into(), self.items.view_mut().into_dyn()),
            ("tags".into(), self.tags.view_mut().into_dyn()),
            ("user_bias".into(), self.user_bias.view_mut().into_dyn()),
            ("item_bias".into(), self.item_bias.view_mut().into_dyn()),
        ]
    }
}

impl LatentTables {
    pub fn zeros(n_users: usize, n_items: usize, n_tags: usize, dim: usize) -> Self {
        LatentTables {
            users: Array2::zeros((n_users, dim)),
            items: Array2::zeros((n_items, dim)),
            tags: Array2::zeros((n_tags, dim)),
            user_bias: Array1::zeros(n_users),
            item_bias: Array1::zeros(n_items),
        }
    }

    /// Small uniform user and tag rows; item offsets and biases start at zero
    /// so a fresh model scores every item from its text alone.
    pub fn init<R: Rng>(n_users: usize, n_items: usize, n_tags: usize, dim: usize, rng: &mut R) -> Self {
        let mut t = LatentTables::zeros(n_users, n_items, n_tags, dim);
        t.users = uniform_matrix(n_users, dim, 0.05, rng);
        t.tags = uniform_matrix(n_tags, dim, 0.05, rng);
        t
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn n_tags(&self) -> usize {
        self.tags.nrows()
    }

    fn check(kind: &'static str, index: usize, len: usize) -> Result<()> {
        if index < len {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { kind, index, len })
        }
    }

    fn check_latent(&self, g: ArrayView1<f64>) -> Result<()> {
        if g.len() != self.dim() {
            return Err(Error::Shape(format!("latent width {} but tables have {}", g.len(), self.dim())));
        }
        Ok(())
    }

    /// `g + v_j` for a known item, `g` for a cold one.
    pub fn item_representation(&self, item: Option<usize>, g: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_latent(g)?;
        match item {
            Some(j) => {
                Self::check("item", j, self.n_items())?;
                Ok(&g + &self.items.row(j))
            }
            None => Ok(g.to_owned()),
        }
    }

    /// Rating score from an already formed item representation.
    pub fn score(&self, user: usize, item: Option<usize>, representation: ArrayView1<f64>) -> Result<f64> {
        Self::check("user", user, self.n_users())?;
        self.check_latent(representation)?;
        let item_bias = match item {
            Some(j) => {
                Self::check("item", j, self.n_items())?;
                self.item_bias[j]
            }
            None => 0.0,
        };
        Ok(self.user_bias[user] + item_bias + self.users.row(user).dot(&representation))
    }

    pub fn predict_rating(&self, user: usize, item: Option<usize>, g: ArrayView1<f64>) -> Result<f64> {
        let f = self.item_representation(item, g)?;
        self.score(user, item, f.view())
    }

    pub fn predict_tag_prob(&self, representation: ArrayView1<f64>, tag: usize) -> Result<f64> {
        Self::check("tag", tag, self.n_tags())?;
        self.check_latent(representation)?;
        Ok(sigmoid(representation.dot(&self.tags.row(tag))))
    }

    /// Ranks candidate items for `user` by predicted rating.
    ///
    /// `candidates` pairs an item index with its encoder output. Warm items
    /// use their offset and bias, cold ones do not.
    pub fn recommend_top_n(
        &self,
        user: usize,
        candidates: &[(usize, ArrayView1<f64>)],
        warm: bool,
        n: usize,
        exclude: &HashSet<usize>,
    ) -> Result<Vec<(usize, f64)>> {
        let mut scores = Vec::with_capacity(candidates.len());
        for &(j, g) in candidates {
            if exclude.contains(&j) {
                continue;
            }
            let item = warm.then_some(j);
            scores.push((j, self.predict_rating(user, item, g)?));
        }
        top_n(scores, n)
    }
}

/// Sorts by score descending with ascending index on ties, keeping `n`.
pub fn top_n(mut scores: Vec<(usize, f64)>, n: usize) -> Result<Vec<(usize, f64)>> {
    if scores.is_empty() {
        return Err(Error::Empty("candidate set".into()));
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.truncate(n);
    Ok(scores)
}

/// Weighted mean squared error over `(prediction, positive)` pairs.
pub fn rating_loss(pairs: &[(f64, bool)], config: &MultiTaskConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("rating batch".into()));
    }
    let total: f64 = pairs
        .iter()
        .map(|&(pred, pos)| {
            let err = pred - if pos { 1.0 } else { 0.0 };
            config.confidence(pos) * err * err
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

fn bce_term(p: f64, positive: bool) -> f64 {
    let p = clamp_prob(p);
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy over `(probability, positive)` pairs.
pub fn tag_loss(pairs: &[(f64, bool)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("tag batch".into()));
    }
    Ok(pairs.iter().map(|&(p, pos)| bce_term(p, pos)).sum::<f64>() / pairs.len() as f64)
}

pub fn multitask_loss(rating: f64, tag: f64, lambda: f64) -> f64 {
    lambda * rating + (1.0 - lambda) * tag
}

/// Gradient of the tables with row-sparse storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableGradients {
    pub users: SparseRows,
    pub items: SparseRows,
    pub tags: SparseRows,
    pub user_bias: SparseEntries,
    pub item_bias: SparseEntries,
}

impl TableGradients {
    pub fn merge(&mut self, other: TableGradients) {
        self.users.merge(other.users);
        self.items.merge(other.items);
        self.tags.merge(other.tags);
        self.user_bias.merge(other.user_bias);
        self.item_bias.merge(other.item_bias);
    }

    pub fn to_dense(&self, like: &LatentTables) -> LatentTables {
        let mut dense = like.zeros_like();
        self.users.scatter_into(&mut dense.users);
        self.items.scatter_into(&mut dense.items);
        self.tags.scatter_into(&mut dense.tags);
        self.user_bias.scatter_into(&mut dense.user_bias);
        self.item_bias.scatter_into(&mut dense.item_bias);
        dense
    }
}

/// Every loss term that involves one item of a batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemTerms {
    pub item: usize,
    /// `(user, positive)` rating pairs.
    pub ratings: Vec<(usize, bool)>,
    /// `(tag, positive)` tag pairs.
    pub tags: Vec<(usize, bool)>,
}

/// Loss totals for a subset of batch terms. Sums, not means, so that subsets
/// combine by addition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub rating: f64,
    pub tag: f64,
}

impl std::ops::AddAssign for LossSums {
    fn add_assign(&mut self, rhs: LossSums) {
        self.rating += rhs.rating;
        self.tag += rhs.tag;
    }
}

/// Scale applied to summed rating and tag terms so that their gradients are
/// those of `lambda * mean + (1 - lambda) * mean`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub rating: f64,
    pub tag: f64,
}

impl TermWeights {
    pub fn new(config: &MultiTaskConfig, n_rating: usize, n_tag: usize) -> Self {
        let per = |w: f64, n: usize| if n == 0 { 0.0 } else { w / n as f64 };
        TermWeights {
            rating: per(config.lambda, n_rating),
            tag: per(1.0 - config.lambda, n_tag),
        }
    }
}

/// Evaluates every term of one warm item given its encoder output `g`,
/// accumulates table gradients and returns the loss sums together with the
/// gradient with respect to `g`.
pub fn item_terms_backward(
    tables: &LatentTables,
    config: &MultiTaskConfig,
    weights: TermWeights,
    terms: &ItemTerms,
    g: ArrayView1<f64>,
    grads: &mut TableGradients,
) -> (LossSums, Array1<f64>) {
    let j = terms.item;
    let dim = tables.dim();
    let f = &g + &tables.items.row(j);
    let f_slice = f.as_slice().expect("contiguous");
    let mut d_f = vec![0.0; dim];
    let mut sums = LossSums::default();

    for &(i, pos) in &terms.ratings {
        let u = tables.users.row(i);
        let u = u.as_slice().expect("contiguous");
        let pred = tables.user_bias[i] + tables.item_bias[j] + dot(u, f_slice);
        let c = config.confidence(pos);
        let err = pred - if pos { 1.0 } else { 0.0 };
        sums.rating += c * err * err;
        let d_pred = weights.rating * 2.0 * c * err;
        grads.users.add_row(i, f_slice, d_pred);
        grads.user_bias.add(i, d_pred);
        grads.item_bias.add(j, d_pred);
        for (d, &uk) in d_f.iter_mut().zip(u) {
            *d += d_pred * uk;
        }
    }

    for &(l, pos) in &terms.tags {
        let t = tables.tags.row(l);
        let t = t.as_slice().expect("contiguous");
        let p = sigmoid(dot(f_slice, t));
        sums.tag += bce_term(p, pos);
        if p != clamp_prob(p) {
            continue;
        }
        let d_logit = weights.tag * (p - if pos { 1.0 } else { 0.0 });
        grads.tags.add_row(l, f_slice, d_logit);
        for (d, &tk) in d_f.iter_mut().zip(t) {
            *d += d_logit * tk;
        }
    }

    grads.items.add_row(j, &d_f, 1.0);
    (sums, Array1::from(d_f))
}

/// Encoder plus latent tables: everything a checkpoint stores.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    pub encoder: EncoderParameters,
    pub tables: LatentTables,
}

impl ParamBlocks for HybridModel {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        extend_prefixed(&mut out, "encoder", self.encoder.blocks());
        extend_prefixed(&mut out, "tables", self.tables.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        extend_prefixed(&mut out, "encoder", self.encoder.blocks_mut());
        extend_prefixed(&mut out, "tables", self.tables.blocks_mut());
        out
    }
}

impl HybridModel {
    pub fn init<R: Rng>(
        config: &EncoderConfig,
        vocab_size: usize,
        n_users: usize,
        n_items: usize,
        n_tags: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = EncoderParameters::init(config, vocab_size, rng)?;
        let tables = LatentTables::init(n_users, n_items, n_tags, config.output_dim, rng);
        Ok(HybridModel { encoder, tables })
    }

    /// Encodes each sequence without dropout; row `k` belongs to `sequences[k]`.
    pub fn encode_many(&self, sequences: &[&[u32]]) -> Result<Array2<f64>> {
        use rayon::prelude::*;
        let rows: Vec<Array1<f64>> = sequences.par_iter().map(|s| self.encoder.encode(s)).collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.tables.dim()));
        for (k, r) in rows.iter().enumerate() {
            out.row_mut(k).assign(r);
        }
        Ok(out)
    }
}

/// Gradient of a [`HybridModel`] in sparse form.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridGradients {
    pub encoder: EncoderGradients,
    pub tables: TableGradients,
}

impl HybridGradients {
    pub fn zeros_for(model: &HybridModel) -> Self {
        HybridGradients {
            encoder: EncoderGradients::zeros_for(&model.encoder),
            tables: TableGradients::default(),
        }
    }

    pub fn merge(&mut self, other: HybridGradients) {
        self.encoder.merge(other.encoder);
        self.tables.merge(other.tables);
    }

    pub fn to_dense(&self, like: &HybridModel) -> HybridModel {
        HybridModel {
            encoder: self.encoder.to_dense(&like.encoder),
            tables: self.tables.to_dense(&like.tables),
        }
    }
}
