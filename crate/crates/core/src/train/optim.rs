//! First-order optimizers over named parameters.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// Update rule and its hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Subtracts `delta`, leaving the bits alone when it is zero (so that
/// `-0.0` survives a zero step).
fn step(value: &mut f64, delta: f64) {
    if delta != 0.0 {
        *value -= delta;
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Slot {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
}

/// Optimizer state, one slot per parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    slots: BTreeMap<String, Slot>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            slots: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// New values for every parameter in `grads`, computed from `current`
    /// without modifying it. Weight decay is added to the gradient.
    pub fn propose(
        &mut self,
        current: &BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> BTreeMap<String, Tensor> {
        self.steps += 1;
        let t = self.steps as i32;
        let wd = self.weight_decay;
        let mut out = BTreeMap::new();
        for (path, g) in grads {
            let Some(p) = current.get(path) else { continue };
            let n = p.len();
            let slot = self.slots.entry(path.clone()).or_insert_with(|| match self.kind {
                OptimizerKind::Sgd { .. } => Slot::Sgd { velocity: vec![0.0; n] },
                OptimizerKind::Adam { .. } => Slot::Adam {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
            });
            let mut next = p.clone();
            let values = next.data_mut();
            match (self.kind, slot) {
                (OptimizerKind::Sgd { momentum }, Slot::Sgd { velocity }) => {
                    for i in 0..n {
                        let gi = g.data()[i] + wd * values[i];
                        velocity[i] = momentum * velocity[i] + gi;
                        step(&mut values[i], lr * velocity[i]);
                    }
                }
                (OptimizerKind::Adam { beta1, beta2, eps }, Slot::Adam { m, v }) => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..n {
                        let gi = g.data()[i] + wd * values[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        step(&mut values[i], lr * mh / (vh.sqrt() + eps));
                    }
                }
                _ => unreachable!("slot kind follows the optimizer kind"),
            }
            out.insert(path.clone(), next);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn plain_sgd_step() {
        let mut o = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 0.0);
        let next = o.propose(&one(1.0), &one(2.0), 0.1);
        assert_eq!(next["p"].data()[0], 1.0 - 0.1 * 2.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut o = Optimizer::new(OptimizerKind::Sgd { momentum: 0.5 }, 0.0);
        let a = o.propose(&one(0.0), &one(1.0), 1.0);
        let b = o.propose(&a, &one(1.0), 1.0);
        assert_eq!(b["p"].data()[0], -1.0 - 1.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut o = Optimizer::new(OptimizerKind::adam(), 0.0);
        let next = o.propose(&one(0.0), &one(3.0), 0.01);
        assert!((next["p"].data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_keeps_bits() {
        for kind in [OptimizerKind::adam(), OptimizerKind::Sgd { momentum: 0.9 }] {
            let mut o = Optimizer::new(kind, 1e-4);
            for v in [0.0, -0.0, 1.5e-300, -7.25] {
                let next = o.propose(&one(v), &one(-0.3), 0.0);
                assert_eq!(next["p"].data()[0].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut o = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 0.5);
        let next = o.propose(&one(2.0), &one(0.0), 0.1);
        assert_eq!(next["p"].data()[0], 2.0 - 0.1 * 1.0);
    }
}
