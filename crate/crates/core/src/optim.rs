use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamBlocks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction, keeping first and second moments shaped like
/// the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<P> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: P,
    pub second: P,
}

impl<P: ParamBlocks + Clone> Adam<P> {
    pub fn new(config: AdamConfig, like: &P) -> Self {
        Adam {
            config,
            step: 0,
            first: like.zeros_like(),
            second: like.zeros_like(),
        }
    }

    /// Applies one update. Fails without touching anything if a gradient is
    /// not finite.
    pub fn update(&mut self, params: &mut P, grads: &P) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.first.blocks_mut())
            .zip(self.second.blocks_mut());
        for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in blocks {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1, ArrayViewD, ArrayViewMutD};

    #[derive(Clone, Debug, PartialEq)]
    struct Vector(Array1<f64>);

    impl ParamBlocks for Vector {
        fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
            vec![("x".into(), self.0.view().into_dyn())]
        }
        fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
            vec![("x".into(), self.0.view_mut().into_dyn())]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Vector(arr1(&[1.0, -2.0, 0.5]));
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
        adam.update(&mut p, &Vector(arr1(&[3.0, -0.01, 0.0]))).unwrap();
        // bias-corrected first step is lr * sign(g), up to eps
        assert!((p.0[0] - 0.9).abs() < 1e-8);
        assert!((p.0[1] + 1.9).abs() < 1e-6);
        assert_eq!(p.0[2], 0.5);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut p = Vector(arr1(&[1.0, 2.0]));
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &p);
        adam.update(&mut p, &Vector(arr1(&[1.0, -1.0]))).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Vector(arr1(&[3.0, -4.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &p);
        for _ in 0..2000 {
            let g = Vector(&p.0 * 2.0);
            adam.update(&mut p, &g).unwrap();
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = Vector(arr1(&[1.0]));
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(adam.update(&mut p, &Vector(arr1(&[f64::NAN]))).is_err());
        assert_eq!(adam.step, 0);
        assert_eq!(p.0[0], 1.0);
    }
}
