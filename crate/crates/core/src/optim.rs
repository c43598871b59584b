//! Adam with linear warmup, global-norm clipping and a parameter moving average.

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::nn::tape::Grads;
use crate::nn::{ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    /// Moving-average decay for evaluation parameters; `0` disables the average.
    pub ema_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-3, warmup_steps: 50, beta1: 0.9, beta2: 0.99, eps: 1e-8, clip_norm: 1.0, ema_decay: 0.99 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm >= 0.0
            && (0.0..1.0).contains(&self.ema_decay);
        if ok {
            Ok(())
        } else {
            Err(Error::config("invalid optimizer settings"))
        }
    }

    /// Learning rate at 0-based `step`: linear warmup, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    cfg: OptimConfig,
    trainable: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

/// Summary of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub grad_norm: f64,
}

impl Adam {
    /// Optimizes the parameters whose names start with one of `prefixes`.
    pub fn new(cfg: OptimConfig, store: &ParamStore, prefixes: &[&str]) -> Result<Self> {
        cfg.validate()?;
        let trainable: Vec<ParamId> =
            store.iter().filter(|(_, name, _)| prefixes.iter().any(|p| name.starts_with(p))).map(|(id, _, _)| id).collect();
        if trainable.is_empty() {
            return Err(Error::config(alloc::format!("no parameters match {prefixes:?}")));
        }
        let zeros = |id: &ParamId| alloc::vec![0.0; store.get(*id).len()];
        Ok(Self { m: trainable.iter().map(zeros).collect(), v: trainable.iter().map(zeros).collect(), trainable, cfg, step: 0 })
    }

    pub fn trainable(&self) -> &[ParamId] {
        &self.trainable
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// One update; parameters without a gradient are treated as zero-gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<StepInfo> {
        let sq: f64 = self.trainable.iter().filter_map(|&id| grads.param(id)).flat_map(|g| g.iter()).map(|g| g * g).sum();
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step: self.step, what: String::from("gradient") });
        }
        let clip = if self.cfg.clip_norm > 0.0 && grad_norm > self.cfg.clip_norm { self.cfg.clip_norm / grad_norm } else { 1.0 };
        let lr = self.cfg.lr_at(self.step);
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (k, &id) in self.trainable.iter().enumerate() {
            let g = grads.param(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]) * clip;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.cfg.eps);
            }
        }
        Ok(StepInfo { lr, grad_norm })
    }

    /// `ema ← d · ema + (1 - d) · params` over the trainable set, with the
    /// decay warmed up as `min(d, (1 + k) / (10 + k))`.
    pub fn update_ema(&self, ema: &mut ParamStore, params: &ParamStore) {
        if self.cfg.ema_decay == 0.0 {
            for &id in &self.trainable {
                ema.get_mut(id).data_mut().copy_from_slice(params.get(id).data());
            }
            return;
        }
        let k = self.step as f64;
        let d = self.cfg.ema_decay.min((1.0 + k) / (10.0 + k));
        for &id in &self.trainable {
            let src = params.get(id).data();
            for (e, &p) in ema.get_mut(id).data_mut().iter_mut().zip(src) {
                *e = d * *e + (1.0 - d) * p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use crate::Tensor;

    #[test]
    fn warmup_is_linear_then_constant() {
        let cfg = OptimConfig { warmup_steps: 4, learning_rate: 1.0, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 0.25);
        assert_eq!(cfg.lr_at(3), 1.0);
        assert_eq!(cfg.lr_at(100), 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        let id = store.add("w", Tensor::new(&[3], alloc::vec![3.0, -2.0, 1.0]).unwrap());
        let cfg = OptimConfig { learning_rate: 0.05, warmup_steps: 0, ema_decay: 0.0, ..Default::default() };
        let mut opt = Adam::new(cfg, &store, &["w"]).unwrap();
        for _ in 0..500 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum(sq);
            let g = tape.backward(loss).unwrap();
            opt.step(&mut store, &g).unwrap();
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn only_matching_prefixes_move() {
        let mut store = ParamStore::default();
        let a = store.add("enc.w", Tensor::full(&[2], 1.0));
        let b = store.add("dec.w", Tensor::full(&[2], 1.0));
        let mut opt = Adam::new(OptimConfig::default(), &store, &["dec."]).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.param(&store, a), tape.param(&store, b));
        let s = tape.add(va, vb).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        opt.step(&mut store, &g).unwrap();
        assert_eq!(store.get(a).data(), &[1.0, 1.0]);
        assert!(store.get(b).data()[0] < 1.0);
    }
}
