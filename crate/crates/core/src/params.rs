//! Named parameter blocks shared by the optimizer, the checkpoint format and
//! the gradient checks.

use std::collections::BTreeMap;

use ndarray::{ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A collection of dense `f64` tensors with stable names and order.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for (_, mut b) in self.blocks_mut() {
            b.fill(value);
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// First block holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

pub(crate) fn extend_prefixed<V>(out: &mut Vec<(String, V)>, prefix: &str, blocks: Vec<(String, V)>) {
    out.extend(blocks.into_iter().map(|(n, b)| (format!("{prefix}.{n}"), b)));
}

/// Row-sparse gradient of an embedding table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn row_mut(&mut self, index: usize, width: usize) -> &mut [f64] {
        self.rows.entry(index).or_insert_with(|| vec![0.0; width])
    }

    pub fn add_row(&mut self, index: usize, values: &[f64], scale: f64) {
        let row = self.row_mut(index, values.len());
        for (r, v) in row.iter_mut().zip(values) {
            *r += scale * v;
        }
    }

    pub fn merge(&mut self, other: SparseRows) {
        for (index, values) in other.rows {
            self.add_row(index, &values, 1.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&i, v)| (i, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds every stored row into the matching row of `dense`.
    pub fn scatter_into(&self, dense: &mut ndarray::Array2<f64>) {
        for (&index, values) in &self.rows {
            let mut row = dense.index_axis_mut(Axis(0), index);
            for (d, v) in row.iter_mut().zip(values) {
                *d += v;
            }
        }
    }
}

/// Sparse gradient of a bias vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseEntries {
    entries: BTreeMap<usize, f64>,
}

impl SparseEntries {
    pub fn add(&mut self, index: usize, value: f64) {
        *self.entries.entry(index).or_insert(0.0) += value;
    }

    pub fn merge(&mut self, other: SparseEntries) {
        for (index, value) in other.entries {
            self.add(index, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&i, &v)| (i, v))
    }

    pub fn scatter_into(&self, dense: &mut ndarray::Array1<f64>) {
        for (&index, &value) in &self.entries {
            dense[index] += value;
        }
    }
}

pub(crate) fn uniform_matrix<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// Square matrix with orthonormal columns, scaled by `gain`.
pub(crate) fn orthogonal_matrix<R: Rng>(size: usize, gain: f64, rng: &mut R) -> ndarray::Array2<f64> {
    // modified Gram-Schmidt on a Gaussian matrix
    let mut cols: Vec<Vec<f64>> = (0..size)
        .map(|_| (0..size).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..size {
        for j in 0..i {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= dot * b;
            }
        }
        let norm = cols[i].iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        for a in &mut cols[i] {
            *a /= norm;
        }
    }
    ndarray::Array2::from_shape_fn((size, size), |(r, c)| gain * cols[c][r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal_matrix(6, 1.0, &mut rng);
        let eye = q.t().dot(&q);
        for ((r, c), v) in eye.indexed_iter() {
            let want = if r == c { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_rows_merge_and_scatter() {
        let mut a = SparseRows::default();
        a.add_row(2, &[1.0, 2.0], 1.0);
        let mut b = SparseRows::default();
        b.add_row(2, &[1.0, 1.0], 2.0);
        b.add_row(0, &[5.0, 0.0], 1.0);
        a.merge(b);
        let mut dense = ndarray::Array2::zeros((3, 2));
        a.scatter_into(&mut dense);
        assert_eq!(dense, ndarray::arr2(&[[5.0, 0.0], [0.0, 0.0], [3.0, 4.0]]));
    }
}
