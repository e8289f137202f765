use footprint_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::networks::ParameterSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("adam eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<E> {
    pub cfg: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(cfg: AdamConfig, params: &ParameterSet<E>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update; `grads[i]` is `None` for parameters the loss does
    /// not touch (their moments still decay).
    pub fn update(&mut self, params: &mut ParameterSet<E>, grads: &[Option<Tensor<E>>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let lr_t = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        // eps scaled to the bias-corrected form: lr * m_hat / (sqrt(v_hat) + eps)
        let eps_t = c.eps * (1.0 - c.beta2.powi(t)).sqrt();
        let (b1, b2) = (E::from_f64(c.beta1), E::from_f64(c.beta2));
        let (one, lr_t, eps_t) = (E::one(), E::from_f64(lr_t), E::from_f64(eps_t));
        for (i, grad) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.by_index_mut(i).data_mut();
            match grad {
                Some(gt) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(gt.data()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *p = *p - lr_t * *m / (v.sqrt() + eps_t);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        *p = *p - lr_t * *m / (v.sqrt() + eps_t);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_hand_computation() {
        // loss (x - 3)^2 at x = 1: g = -4
        let mut p = ParameterSet::<f64>::new();
        p.insert("x", Tensor::new(&[1], vec![1.0])).unwrap();
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, &p);
        opt.update(&mut p, &[Some(Tensor::new(&[1], vec![-4.0]))]);

        let g = -4.0f64;
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let expect = 1.0 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        assert!((p.get("x").unwrap().item() - expect).abs() < 1e-12);
        assert!((opt.m[0].item() - m).abs() < 1e-12);
        assert!((opt.v[0].item() - v).abs() < 1e-12);
    }

    #[test]
    fn multi_step_matches_textbook_recurrence() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("x", Tensor::new(&[2], vec![1.0, -2.0])).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg, &p);
        let (mut x, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
        for t in 1..=20 {
            let cur = p.get("x").unwrap().data().to_vec();
            let g: Vec<f64> = cur.iter().map(|x| 2.0 * (x - 3.0)).collect();
            opt.update(&mut p, &[Some(Tensor::new(&[2], g))]);
            for k in 0..2 {
                let gk = 2.0 * (x[k] - 3.0);
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let mh = m[k] / (1.0 - cfg.beta1.powi(t));
                let vh = v[k] / (1.0 - cfg.beta2.powi(t));
                x[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
            }
        }
        for (a, b) in p.get("x").unwrap().data().iter().zip(x) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
