use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two-phase learning rate: `lr1` while `epoch < epochs1`, then `lr2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub lr1: f64,
    pub epochs1: usize,
    pub lr2: f64,
    pub epochs2: usize,
}

impl LrSchedule {
    /// 0.1 for 250 epochs, then 0.01 for 750.
    pub fn full_length() -> Self {
        Self {
            lr1: 0.1,
            epochs1: 250,
            lr2: 0.01,
            epochs2: 750,
        }
    }

    /// Same shape as [`LrSchedule::full_length`] (tenfold drop after the first
    /// quarter of training) scaled to `epochs` total and starting at `lr`.
    pub fn scaled(lr: f64, epochs: usize) -> Self {
        let epochs1 = epochs / 4;
        Self {
            lr1: lr,
            epochs1,
            lr2: lr / 10.0,
            epochs2: epochs - epochs1,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs1 {
            self.lr1
        } else {
            self.lr2
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs1 + self.epochs2
    }
}

/// Adam with bias-corrected moments, one state slot per store entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, schedule: LrSchedule) -> Self {
        let zeros = || {
            store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restores state saved from [`Adam::steps_taken`] and [`Adam::moments`].
    pub fn restore(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        let same = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
        };
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err(Error::Format("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Applies one update. Parameters without a gradient are left alone but
    /// their moments still decay, as if their gradient were zero.
    ///
    /// Any NaN or infinite gradient aborts the whole step before anything is
    /// modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], epoch: usize) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::dim(
                        "adam_step",
                        format!("{}: grad {:?}", store.name(id), g.shape()),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient {
                        param: store.name(id).to_string(),
                    });
                }
            }
        }
        self.step += 1;
        let lr = self.schedule.lr_at(epoch);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let param = store.get_mut(id).data_mut();
            match &grads[i] {
                Some(g) => {
                    for j in 0..param.len() {
                        let gj = g.data()[j];
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        param[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
                None => {
                    m.iter_mut().for_each(|x| *x *= self.beta1);
                    v.iter_mut().for_each(|x| *x *= self.beta2);
                }
            }
        }
        Ok(())
    }
}
