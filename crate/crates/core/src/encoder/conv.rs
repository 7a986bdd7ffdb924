use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::params::ParamBlocks;

/// Token-axis convolution, stride 1, zero "same" padding (odd widths only).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    /// width × input channels × filters
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

/// Row ranges `(target, source)` that kernel tap `k` connects.
fn tap_ranges(n: usize, tap: usize, pad: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let offset = tap as isize - pad as isize;
    let start = (-offset).max(0) as usize;
    let end = (n as isize - offset).min(n as isize);
    if end <= start as isize {
        return None;
    }
    let end = end as usize;
    let src_start = (start as isize + offset) as usize;
    Some((start..end, src_start..src_start + (end - start)))
}

impl Conv1d {
    pub fn init<R: Rng>(width: usize, input: usize, filters: usize, rng: &mut R) -> Self {
        let limit = 1.0 / ((width * input) as f64).sqrt();
        Conv1d {
            weight: Array3::from_shape_simple_fn((width, input, filters), || rng.random_range(-limit..=limit)),
            bias: Array1::zeros(filters),
        }
    }

    pub fn width(&self) -> usize {
        self.weight.dim().0
    }

    pub fn filters(&self) -> usize {
        self.weight.dim().2
    }

    fn pad(&self) -> usize {
        self.width() / 2
    }

    /// Pre-activation output, one row per input row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut out = Array2::zeros((n, self.filters()));
        out += &self.bias;
        for tap in 0..self.width() {
            if let Some((dst, src)) = tap_ranges(n, tap, self.pad()) {
                let w = self.weight.index_axis(Axis(0), tap);
                let mut block = out.slice_mut(s![dst, ..]);
                block += &x.slice(s![src, ..]).dot(&w);
            }
        }
        out
    }

    /// Given the gradient w.r.t. the pre-activation output, accumulates
    /// parameter gradients and returns the input gradient.
    pub fn backward(&self, x: ArrayView2<f64>, d_pre: ArrayView2<f64>, grads: &mut Conv1d) -> Array2<f64> {
        let n = x.nrows();
        let mut dx = Array2::zeros(x.raw_dim());
        for tap in 0..self.width() {
            if let Some((dst, src)) = tap_ranges(n, tap, self.pad()) {
                let d = d_pre.slice(s![dst, ..]);
                let mut gw = grads.weight.index_axis_mut(Axis(0), tap);
                gw += &x.slice(s![src.clone(), ..]).t().dot(&d);
                let mut dxs = dx.slice_mut(s![src, ..]);
                dxs += &d.dot(&self.weight.index_axis(Axis(0), tap).t());
            }
        }
        grads.bias += &d_pre.sum_axis(Axis(0));
        dx
    }
}

impl ParamBlocks for Conv1d {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        vec![
            ("weight".into(), self.weight.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        vec![
            ("weight".into(), self.weight.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
        ]
    }
}

pub fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Column-wise maximum over rows, with the (first) row index of each maximum.
pub fn max_over_time(x: ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let cols = x.ncols();
    let mut best = Array1::from_elem(cols, f64::NEG_INFINITY);
    let mut arg = vec![0; cols];
    for (t, row) in x.axis_iter(Axis(0)).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = t;
            }
        }
    }
    (best, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array3};

    #[test]
    fn centre_tap_filter_pools_max_relu() {
        let conv = Conv1d {
            weight: Array3::from_shape_vec((3, 1, 1), vec![0.0, 1.0, 0.0]).unwrap(),
            bias: arr1(&[0.0]),
        };
        let x = arr2(&[[-1.0], [0.4], [2.5], [-3.0]]);
        let (pooled, arg) = max_over_time(relu(conv.forward(x.view())).view());
        assert_eq!(pooled, arr1(&[2.5]));
        assert_eq!(arg, vec![2]);
    }

    #[test]
    fn same_padding_keeps_length_and_single_row_is_affine() {
        let conv = Conv1d {
            weight: Array3::from_shape_vec((3, 1, 1), vec![2.0, 3.0, 5.0]).unwrap(),
            bias: arr1(&[0.5]),
        };
        // a single row only sees the centre tap
        assert_eq!(conv.forward(arr2(&[[2.0]]).view()), arr2(&[[6.5]]));
        // interior rows see all three taps: out[t] = 2 x[t-1] + 3 x[t] + 5 x[t+1] + b
        let out = conv.forward(arr2(&[[1.0], [10.0], [100.0]]).view());
        assert_eq!(out, arr2(&[[3.0 + 50.0 + 0.5], [2.0 + 30.0 + 500.0 + 0.5], [20.0 + 300.0 + 0.5]]));
    }

    #[test]
    fn zero_filters_pool_to_zero() {
        let conv = Conv1d {
            weight: Array3::zeros((3, 4, 2)),
            bias: Array1::zeros(2),
        };
        let x = Array2::from_elem((5, 4), 1.7);
        let (pooled, _) = max_over_time(relu(conv.forward(x.view())).view());
        assert_eq!(pooled, Array1::<f64>::zeros(2));
    }
}
