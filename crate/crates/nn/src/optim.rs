//! Optimizers behind a common trait, looked up by name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::param::Parameterized;
use crate::real::Real;
use crate::NnError;

/// Hyperparameters shared by all registered optimizers; each reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub kind: String,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            kind: "sgd".into(),
            momentum: 0.9,
            weight_decay: 1e-4,
            nesterov: false,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

pub trait Optimizer<R: Real>: Send {
    fn name(&self) -> &'static str;
    /// Apply one update from the gradients currently stored in `model`.
    fn step(&mut self, model: &mut dyn Parameterized<R>, lr: f64);
}

/// SGD with classical (or Nesterov) momentum and L2 weight decay.
pub struct Sgd<R> {
    momentum: f64,
    weight_decay: f64,
    nesterov: bool,
    velocity: Vec<Vec<R>>,
}

impl<R: Real> Sgd<R> {
    pub fn new(settings: &OptimizerSettings) -> Self {
        Self {
            momentum: settings.momentum,
            weight_decay: settings.weight_decay,
            nesterov: settings.nesterov,
            velocity: Vec::new(),
        }
    }
}

impl<R: Real> Optimizer<R> for Sgd<R> {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, model: &mut dyn Parameterized<R>, lr: f64) {
        let mut idx = 0;
        let (mu, wd, nesterov) = (R::of(self.momentum), R::of(self.weight_decay), self.nesterov);
        let lr = R::of(lr);
        let velocity = &mut self.velocity;
        model.visit_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            if velocity.len() <= idx {
                velocity.push(Vec::new());
            }
            let v = &mut velocity[idx];
            let fresh = v.is_empty();
            if fresh {
                v.resize(p.value.len(), R::zero());
            }
            let grads = p.grad.data();
            for ((w, g), vi) in p.value.data_mut().iter_mut().zip(grads).zip(v.iter_mut()) {
                let d = *g + wd * *w;
                *vi = if fresh { d } else { mu * *vi + d };
                let update = if nesterov { d + mu * *vi } else { *vi };
                *w -= lr * update;
            }
            idx += 1;
        });
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam<R> {
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    t: i32,
    moments: Vec<(Vec<R>, Vec<R>)>,
}

impl<R: Real> Adam<R> {
    pub fn new(settings: &OptimizerSettings) -> Self {
        Self { beta1: settings.beta1, beta2: settings.beta2, weight_decay: settings.weight_decay, t: 0, moments: Vec::new() }
    }
}

impl<R: Real> Optimizer<R> for Adam<R> {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, model: &mut dyn Parameterized<R>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let wd = self.weight_decay;
        let mut idx = 0;
        let moments = &mut self.moments;
        model.visit_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            if moments.len() <= idx {
                moments.push((vec![R::zero(); p.value.len()], vec![R::zero(); p.value.len()]));
            }
            let (m, v) = &mut moments[idx];
            let grads = p.grad.data();
            for i in 0..grads.len() {
                let w = p.value.data()[i].as_f64();
                let g = grads[i].as_f64() + wd * w;
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
                m[i] = R::of(mi);
                v[i] = R::of(vi);
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + 1e-8);
                p.value.data_mut()[i] = R::of(w - step);
            }
            idx += 1;
        });
    }
}

type Factory<R> = fn(&OptimizerSettings) -> Box<dyn Optimizer<R>>;

/// Name-keyed optimizer factories.
pub struct OptimizerRegistry<R: Real> {
    factories: BTreeMap<&'static str, Factory<R>>,
}

impl<R: Real> OptimizerRegistry<R> {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("sgd", |s| Box::new(Sgd::<R>::new(s)));
        reg.register("adam", |s| Box::new(Adam::<R>::new(s)));
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: Factory<R>) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, settings: &OptimizerSettings) -> Result<Box<dyn Optimizer<R>>, NnError> {
        self.factories
            .get(settings.kind.as_str())
            .map(|f| f(settings))
            .ok_or_else(|| NnError::UnknownName { kind: "optimizer", name: settings.kind.clone(), known: self.names().join(", ") })
    }
}

/// Step decay: multiply the base rate by `gamma` at each milestone, given as
/// a fraction of the total epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub milestones: Vec<f64>,
    pub gamma: f64,
}

impl StepSchedule {
    pub fn constant(base_lr: f64) -> Self {
        Self { base_lr, milestones: Vec::new(), gamma: 1.0 }
    }

    pub fn lr_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * total_epochs as f64).round() as usize)
            .count();
        self.base_lr * self.gamma.powi(passed as i32)
    }
}
