//! AdaM optimizer with bias correction.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Optimizer state: first and second moments per parameter plus the step
/// counter. The moments mirror the parameter shapes exactly.
pub struct Adam<E> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Scalar> Adam<E> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<E>]) -> Self {
        Adam {
            cfg,
            t: 0,
            m: params.iter().map(|p| vec![E::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![E::zero(); p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One update: m and v track exponential moments of g and g^2, and the
    /// parameter moves by lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut [Tensor<E>], grads: &[Vec<E>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "expected {} parameter tensors, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {i}: size mismatch"),
                ));
            }
        }
        self.t += 1;
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let lr = E::from_f64(self.cfg.lr);
        let eps = E::from_f64(self.cfg.eps);
        let corr1 = E::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let corr2 = E::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mv = b1 * *mv + (E::one() - b1) * gv;
                *vv = b2 * *vv + (E::one() - b2) * gv * gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[Vec<E>], &[Vec<E>]) {
        (&self.m, &self.v)
    }

    pub fn restore(cfg: AdamConfig, t: u64, m: Vec<Vec<E>>, v: Vec<Vec<E>>) -> Self {
        Adam { cfg, t, m, v }
    }
}
