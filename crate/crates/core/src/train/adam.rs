use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{ParamSet, Tensor};

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
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: ParamSet<f32>,
    pub v: ParamSet<f32>,
    pub step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet<f32>) -> Self {
        let zeros = |p: &ParamSet<f32>| {
            let mut z = ParamSet::new();
            for (k, t) in p.iter() {
                z.set(k.clone(), Tensor::zeros(t.shape()));
            }
            z
        };
        Adam {
            cfg,
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    /// One update with learning rate `cfg.lr * multiplier`.
    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &ParamSet<f32>, multiplier: f64) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads.get(name)?;
            let (m, v) = (self.m.get(name)?, self.v.get(name)?);
            if g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::Dimension(format!(
                    "adam: `{name}` parameter {:?}, gradient {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let lr = self.cfg.lr * multiplier;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?.data();
            let m = self.m.get_mut(name).expect("checked").data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = (b1 * *mi as f64 + (1.0 - b1) * gi as f64) as f32;
            }
            let v = self.v.get_mut(name).expect("checked").data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = (b2 * *vi as f64 + (1.0 - b2) * (gi as f64).powi(2)) as f32;
            }
            if lr == 0.0 {
                continue;
            }
            let (m, v) = (self.m.get(name)?.data(), self.v.get(name)?.data());
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mh = mi as f64 / c1;
                let vh = vi as f64 / c2;
                *pi = (*pi as f64 - lr * mh / (vh.sqrt() + self.cfg.eps)) as f32;
            }
        }
        Ok(())
    }

    /// Moments under `adam.m.` / `adam.v.` and the step under `meta.adam_step`.
    pub fn export(&self, out: &mut ParamSet<f32>) {
        out.extend_prefixed("adam.m.", &self.m);
        out.extend_prefixed("adam.v.", &self.v);
        out.set("meta.adam_step", Tensor::scalar(self.step as f32));
    }

    pub fn import(cfg: AdamConfig, ckpt: &ParamSet<f32>, params: &ParamSet<f32>) -> Result<Self> {
        let mut a = Adam::new(cfg, params);
        let (m, v) = (ckpt.with_prefix("adam.m."), ckpt.with_prefix("adam.v."));
        for (name, t) in params.iter() {
            for (dst, src) in [(&mut a.m, &m), (&mut a.v, &v)] {
                let s = src.get(name)?;
                if s.shape() != t.shape() {
                    return Err(Error::Dimension(format!("checkpoint moment `{name}` has shape {:?}", s.shape())));
                }
                dst.set(name.clone(), s.clone());
            }
        }
        a.step = ckpt.get("meta.adam_step")?.item() as u64;
        Ok(a)
    }
}

/// Learning-rate multiplier halved at 50%, 75%, 90% and 95% of training.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LrSchedule {
    pub total: usize,
}

impl LrSchedule {
    pub const MILESTONES: [usize; 4] = [50, 75, 90, 95];

    pub fn multiplier(&self, at: usize) -> f64 {
        let passed = Self::MILESTONES
            .iter()
            .filter(|&&pct| at * 100 >= pct * self.total)
            .count();
        0.5f64.powi(passed as i32)
    }
}
