//! Stochastic gradient descent with classical momentum.

use crate::param::{GradStore, ParamSet};
use crate::Arr;

pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Option<Arr>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies one update: `v = momentum * v + g; p -= lr * v`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradStore) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let v = match &mut self.velocity[id.index()] {
                Some(v) => {
                    v.mapv_inplace(|x| x * self.momentum);
                    *v += g;
                    v.clone()
                }
                slot @ None => {
                    *slot = Some(g.clone());
                    g.clone()
                }
            };
            let p = params.value_mut(id);
            p.scaled_add(-self.learning_rate, &v);
        }
    }
}
