//! Gated recurrent layers with hand-written backpropagation through time.
//!
//! Per step, with gate blocks ordered update | reset | candidate:
//!
//! ```text
//! z  = sigmoid(x W_z + h U_z + b_z)
//! r  = sigmoid(x W_r + h U_r + b_r)
//! n  = tanh(x W_n + (r * h) U_n + b_n)
//! h' = (1 - z) * h + z * n
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::math::sigmoid;
use crate::params::{extend_prefixed, orthogonal_matrix, uniform_matrix, ParamBlocks};

#[derive(Clone, Debug, PartialEq)]
pub struct GruDirection {
    /// input × 3·hidden
    pub w_input: Array2<f64>,
    /// hidden × 3·hidden
    pub w_hidden: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Activations of one pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruTrace {
    gates: Array2<f64>,
    h_prev: Array2<f64>,
    reset_hidden: Array2<f64>,
}

impl GruDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruDirection {
            w_input: Array2::zeros((input, 3 * hidden)),
            w_hidden: Array2::zeros((hidden, 3 * hidden)),
            bias: Array1::zeros(3 * hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + hidden) as f64).sqrt();
        let w_input = uniform_matrix(input, 3 * hidden, limit, rng);
        let mut w_hidden = Array2::zeros((hidden, 3 * hidden));
        for gate in 0..3 {
            w_hidden
                .slice_mut(s![.., gate * hidden..(gate + 1) * hidden])
                .assign(&orthogonal_matrix(hidden, 1.0, rng));
        }
        GruDirection {
            w_input,
            w_hidden,
            bias: Array1::zeros(3 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_input.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.nrows()
    }

    /// Runs the recurrence over the rows of `x` (in reverse when `reverse`),
    /// returning the state after each row, aligned with the input rows.
    pub fn forward(&self, x: ArrayView2<f64>, reverse: bool) -> (Array2<f64>, GruTrace) {
        let n = x.nrows();
        let h = self.hidden_size();
        let projected = x.dot(&self.w_input) + &self.bias;
        let w = self.w_hidden.as_slice().expect("standard layout");
        let width = 3 * h;

        let mut out = Array2::zeros((n, h));
        let mut gates = Array2::zeros((n, width));
        let mut h_prev = Array2::zeros((n, h));
        let mut reset_hidden = Array2::zeros((n, h));

        let mut state = vec![0.0; h];
        let mut pre = vec![0.0; width];
        let mut rh = vec![0.0; h];
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let xp = projected.row(t);
            for j in 0..2 * h {
                pre[j] = xp[j];
            }
            for (k, &hk) in state.iter().enumerate() {
                let row = &w[k * width..k * width + 2 * h];
                for (p, &wk) in pre[..2 * h].iter_mut().zip(row) {
                    *p += hk * wk;
                }
            }
            let mut g = gates.row_mut(t);
            for j in 0..2 * h {
                g[j] = sigmoid(pre[j]);
            }
            for k in 0..h {
                rh[k] = g[h + k] * state[k];
            }
            for j in 0..h {
                pre[2 * h + j] = xp[2 * h + j];
            }
            for (k, &rk) in rh.iter().enumerate() {
                let row = &w[k * width + 2 * h..(k + 1) * width];
                for (p, &wk) in pre[2 * h..].iter_mut().zip(row) {
                    *p += rk * wk;
                }
            }
            for j in 0..h {
                g[2 * h + j] = pre[2 * h + j].tanh();
            }
            h_prev.row_mut(t).assign(&ndarray::ArrayView1::from(&state[..]));
            reset_hidden.row_mut(t).assign(&ndarray::ArrayView1::from(&rh[..]));
            for k in 0..h {
                let z = g[k];
                state[k] = (1.0 - z) * state[k] + z * g[2 * h + k];
            }
            out.row_mut(t).assign(&ndarray::ArrayView1::from(&state[..]));
        }
        (
            out,
            GruTrace {
                gates,
                h_prev,
                reset_hidden,
            },
        )
    }

    /// Backpropagates `d_out` (gradient w.r.t. every output row), adding
    /// parameter gradients into `grads` and returning the input gradient.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        trace: &GruTrace,
        d_out: ArrayView2<f64>,
        reverse: bool,
        grads: &mut GruDirection,
    ) -> Array2<f64> {
        let n = x.nrows();
        let h = self.hidden_size();
        let width = 3 * h;
        let w = self.w_hidden.as_slice().expect("standard layout");

        let mut d_pre = Array2::zeros((n, width));
        let mut carry = vec![0.0; h];
        let mut d_rh = vec![0.0; h];
        for step in (0..n).rev() {
            let t = if reverse { n - 1 - step } else { step };
            let g = trace.gates.row(t);
            let hp = trace.h_prev.row(t);
            let mut dp = d_pre.row_mut(t);
            let mut d_hp = vec![0.0; h];
            for k in 0..h {
                let dh = d_out[[t, k]] + carry[k];
                let z = g[k];
                let cand = g[2 * h + k];
                let d_cand = dh * z;
                let dz = dh * (cand - hp[k]);
                d_hp[k] = dh * (1.0 - z);
                dp[2 * h + k] = d_cand * (1.0 - cand * cand);
                dp[k] = dz * z * (1.0 - z);
            }
            for k in 0..h {
                let row = &w[k * width + 2 * h..(k + 1) * width];
                d_rh[k] = row.iter().zip(dp.slice(s![2 * h..])).map(|(a, b)| a * b).sum();
            }
            for k in 0..h {
                let r = g[h + k];
                let dr = d_rh[k] * hp[k];
                d_hp[k] += d_rh[k] * r;
                dp[h + k] = dr * r * (1.0 - r);
            }
            for k in 0..h {
                let row = &w[k * width..k * width + 2 * h];
                d_hp[k] += row.iter().zip(dp.slice(s![..2 * h])).map(|(a, b)| a * b).sum::<f64>();
            }
            carry = d_hp;
        }

        {
            let mut gw = grads.w_hidden.slice_mut(s![.., ..2 * h]);
            gw += &trace.h_prev.t().dot(&d_pre.slice(s![.., ..2 * h]));
        }
        {
            let mut gw = grads.w_hidden.slice_mut(s![.., 2 * h..]);
            gw += &trace.reset_hidden.t().dot(&d_pre.slice(s![.., 2 * h..]));
        }
        grads.w_input += &x.t().dot(&d_pre);
        grads.bias += &d_pre.sum_axis(Axis(0));
        d_pre.dot(&self.w_input.t())
    }
}

impl ParamBlocks for GruDirection {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        vec![
            ("w_input".into(), self.w_input.view().into_dyn()),
            ("w_hidden".into(), self.w_hidden.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        vec![
            ("w_input".into(), self.w_input.view_mut().into_dyn()),
            ("w_hidden".into(), self.w_hidden.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
        ]
    }
}

/// A recurrent layer, optionally bidirectional. Bidirectional layers split the
/// output width evenly and concatenate `[forward ; backward]` per token.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub forward: GruDirection,
    pub backward: Option<GruDirection>,
}

#[derive(Clone, Debug)]
pub struct GruLayerTrace {
    forward: GruTrace,
    backward: Option<GruTrace>,
}

impl GruLayer {
    pub fn init<R: Rng>(input: usize, output: usize, bidirectional: bool, rng: &mut R) -> Self {
        if bidirectional {
            GruLayer {
                forward: GruDirection::init(input, output / 2, rng),
                backward: Some(GruDirection::init(input, output / 2, rng)),
            }
        } else {
            GruLayer {
                forward: GruDirection::init(input, output, rng),
                backward: None,
            }
        }
    }

    pub fn output_size(&self) -> usize {
        self.forward.hidden_size() + self.backward.as_ref().map_or(0, GruDirection::hidden_size)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, GruLayerTrace) {
        let (fwd, fwd_trace) = self.forward.forward(x, false);
        match &self.backward {
            None => (
                fwd,
                GruLayerTrace {
                    forward: fwd_trace,
                    backward: None,
                },
            ),
            Some(dir) => {
                let (bwd, bwd_trace) = dir.forward(x, true);
                let out = ndarray::concatenate(Axis(1), &[fwd.view(), bwd.view()]).expect("row counts match");
                (
                    out,
                    GruLayerTrace {
                        forward: fwd_trace,
                        backward: Some(bwd_trace),
                    },
                )
            }
        }
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        trace: &GruLayerTrace,
        d_out: ArrayView2<f64>,
        grads: &mut GruLayer,
    ) -> Array2<f64> {
        let hf = self.forward.hidden_size();
        let mut dx = self
            .forward
            .backward(x, &trace.forward, d_out.slice(s![.., ..hf]), false, &mut grads.forward);
        if let (Some(dir), Some(tr), Some(g)) = (&self.backward, &trace.backward, grads.backward.as_mut()) {
            dx += &dir.backward(x, tr, d_out.slice(s![.., hf..]), true, g);
        }
        dx
    }
}

impl ParamBlocks for GruLayer {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        extend_prefixed(&mut out, "fwd", self.forward.blocks());
        if let Some(b) = &self.backward {
            extend_prefixed(&mut out, "bwd", b.blocks());
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        extend_prefixed(&mut out, "fwd", self.forward.blocks_mut());
        if let Some(b) = &mut self.backward {
            extend_prefixed(&mut out, "bwd", b.blocks_mut());
        }
        out
    }
}
