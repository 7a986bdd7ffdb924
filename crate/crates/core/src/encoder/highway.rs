use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::math::sigmoid;
use crate::params::{uniform_matrix, ParamBlocks};

/// Initial transform-gate bias; negative so fresh layers mostly carry their input.
pub const GATE_BIAS_INIT: f64 = -2.0;

/// One highway layer applied token-wise:
/// `y = H(x) * T(x) + x * (1 - T(x))` with `H = tanh(x W_H + b_H)` and
/// `T = sigmoid(x W_T + b_T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Highway {
    pub w_transform: Array2<f64>,
    pub b_transform: Array1<f64>,
    pub w_gate: Array2<f64>,
    pub b_gate: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct HighwayTrace {
    transform: Array2<f64>,
    gate: Array2<f64>,
}

impl Highway {
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (dim as f64).sqrt();
        Highway {
            w_transform: uniform_matrix(dim, dim, limit, rng),
            b_transform: Array1::zeros(dim),
            w_gate: uniform_matrix(dim, dim, limit, rng),
            b_gate: Array1::from_elem(dim, GATE_BIAS_INIT),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_transform.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, HighwayTrace) {
        let transform = (x.dot(&self.w_transform) + &self.b_transform).mapv_into(f64::tanh);
        let gate = (x.dot(&self.w_gate) + &self.b_gate).mapv_into(sigmoid);
        let mut y = Array2::zeros(x.raw_dim());
        Zip::from(&mut y)
            .and(&transform)
            .and(&gate)
            .and(&x)
            .for_each(|y, &h, &t, &x| *y = h * t + x * (1.0 - t));
        (y, HighwayTrace { transform, gate })
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        trace: &HighwayTrace,
        d_out: ArrayView2<f64>,
        grads: &mut Highway,
    ) -> Array2<f64> {
        let mut d_transform = Array2::zeros(x.raw_dim());
        let mut d_gate = Array2::zeros(x.raw_dim());
        let mut dx = Array2::zeros(x.raw_dim());
        Zip::from(&mut d_transform)
            .and(&mut d_gate)
            .and(&d_out)
            .and(&trace.transform)
            .and(&trace.gate)
            .and(&x)
            .for_each(|dh_pre, dt_pre, &dy, &h, &t, &x| {
                *dh_pre = dy * t * (1.0 - h * h);
                *dt_pre = dy * (h - x) * t * (1.0 - t);
            });
        Zip::from(&mut dx)
            .and(&d_out)
            .and(&trace.gate)
            .for_each(|dx, &dy, &t| *dx = dy * (1.0 - t));
        grads.w_transform += &x.t().dot(&d_transform);
        grads.b_transform += &d_transform.sum_axis(Axis(0));
        grads.w_gate += &x.t().dot(&d_gate);
        grads.b_gate += &d_gate.sum_axis(Axis(0));
        dx += &d_transform.dot(&self.w_transform.t());
        dx += &d_gate.dot(&self.w_gate.t());
        dx
    }
}

impl ParamBlocks for Highway {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        vec![
            ("w_transform".into(), self.w_transform.view().into_dyn()),
            ("b_transform".into(), self.b_transform.view().into_dyn()),
            ("w_gate".into(), self.w_gate.view().into_dyn()),
            ("b_gate".into(), self.b_gate.view().into_dyn()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        vec![
            ("w_transform".into(), self.w_transform.view_mut().into_dyn()),
            ("b_transform".into(), self.b_transform.view_mut().into_dyn()),
            ("w_gate".into(), self.w_gate.view_mut().into_dyn()),
            ("b_gate".into(), self.b_gate.view_mut().into_dyn()),
        ]
    }
}
