//! SGD with momentum and Adam.
//!
//! One `OptimizerState` owns the auxiliary buffers for one task; two states
//! can drive the same network in alternation without touching each other.

use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    /// The classification-task settings: lr 0.1, momentum 0.9.
    pub fn classification_default() -> Self {
        OptimizerKind::SgdMomentum { lr: 0.1, momentum: 0.9 }
    }

    /// The serial-number-task settings: Adam at lr 0.001.
    pub fn signature_default() -> Self {
        OptimizerKind::Adam { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

struct Slot<S> {
    w_m1: Vec<S>,
    b_m1: Vec<S>,
    // second moments, Adam only
    w_m2: Vec<S>,
    b_m2: Vec<S>,
}

/// Optimizer buffers mirroring one network's parameter shapes.
pub struct OptimizerState<S: Scalar = f32> {
    kind: OptimizerKind,
    step_count: u64,
    slots: Vec<Option<Slot<S>>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, step_count: 0, slots: Vec::new() }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    fn ensure_slots(&mut self, network: &Network<S>) {
        if !self.slots.is_empty() {
            return;
        }
        let adam = matches!(self.kind, OptimizerKind::Adam { .. });
        self.slots = network
            .params()
            .iter()
            .map(|p| {
                p.as_ref().map(|p| Slot {
                    w_m1: vec![S::zero(); p.weight.len()],
                    b_m1: vec![S::zero(); p.bias.len()],
                    w_m2: vec![S::zero(); if adam { p.weight.len() } else { 0 }],
                    b_m2: vec![S::zero(); if adam { p.bias.len() } else { 0 }],
                })
            })
            .collect();
    }

    /// Applies one update. Pruning masks are re-enforced afterwards, so masked
    /// weights stay exactly zero no matter what the update rule proposes.
    pub fn step(&mut self, network: &mut Network<S>, grads: &Gradients<S>) -> Result<()> {
        self.ensure_slots(network);
        if self.slots.len() != network.params().len() || grads.layers.len() != self.slots.len() {
            return Err(Error::InvalidTensor(
                "optimizer state does not match network layer count".into(),
            ));
        }
        self.step_count += 1;
        let t = self.step_count;
        for ((param, grad), slot) in network
            .params_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.slots)
        {
            let (Some(param), Some((gw, gb)), Some(slot)) = (param.as_mut(), grad.as_ref(), slot.as_mut())
            else {
                continue;
            };
            match self.kind {
                OptimizerKind::SgdMomentum { lr, momentum } => {
                    let lr = S::from_f64(lr);
                    let mu = S::from_f64(momentum);
                    sgd_momentum(param.weight.data_mut(), gw.data(), &mut slot.w_m1, lr, mu);
                    sgd_momentum(&mut param.bias, gb, &mut slot.b_m1, lr, mu);
                }
                OptimizerKind::Adam { lr, beta1, beta2, epsilon } => {
                    adam(param.weight.data_mut(), gw.data(), &mut slot.w_m1, &mut slot.w_m2, t, lr, beta1, beta2, epsilon);
                    adam(&mut param.bias, gb, &mut slot.b_m1, &mut slot.b_m2, t, lr, beta1, beta2, epsilon);
                }
            }
            param.enforce_mask();
        }
        Ok(())
    }
}

/// v ← μv − ηg;  w ← w + v
fn sgd_momentum<S: Scalar>(w: &mut [S], g: &[S], v: &mut [S], lr: S, mu: S) {
    for i in 0..w.len() {
        v[i] = mu * v[i] - lr * g[i];
        w[i] += v[i];
    }
}

#[allow(clippy::too_many_arguments)]
fn adam<S: Scalar>(
    w: &mut [S], g: &[S], m: &mut [S], v: &mut [S],
    t: u64, lr: f64, beta1: f64, beta2: f64, epsilon: f64,
) {
    let b1 = S::from_f64(beta1);
    let b2 = S::from_f64(beta2);
    let one = S::one();
    // fold both bias corrections into the step size
    let lr_t = S::from_f64(lr * (1.0 - beta2.powi(t as i32)).sqrt() / (1.0 - beta1.powi(t as i32)));
    let eps = S::from_f64(epsilon);
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        w[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_first_step_matches_hand_calc() {
        let mut w = vec![1.0f64];
        let mut v = vec![0.0f64];
        sgd_momentum(&mut w, &[1.0], &mut v, 0.1, 0.9);
        assert!((v[0] + 0.1).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut w = vec![0.0f64];
        let mut m = vec![0.0f64];
        let mut v = vec![0.0f64];
        adam(&mut w, &[1.0], &mut m, &mut v, 1, 0.001, 0.9, 0.999, 1e-8);
        assert!((w[0] + 0.001).abs() < 1e-9, "first bias-corrected step ≈ -lr, got {}", w[0]);
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        // L(w) = (a w0^2 + b w1^2) / 2, gradient (a w0, b w1).
        // Curvatures sit below the heavy-ball oscillation threshold
        // lr*curv < (1-sqrt(momentum))^2, so descent is smooth.
        let (a, b) = (0.01f64, 0.02);
        let loss = |w: &[f64]| 0.5 * (a * w[0] * w[0] + b * w[1] * w[1]);
        let mut w = vec![3.0f64, -2.0];
        let mut v = vec![0.0f64; 2];
        let mut losses = Vec::with_capacity(201);
        losses.push(loss(&w));
        for _ in 0..200 {
            let g = [a * w[0], b * w[1]];
            sgd_momentum(&mut w, &g, &mut v, 0.1, 0.9);
            losses.push(loss(&w));
        }
        for k in 5..200 {
            assert!(
                losses[k + 1] < losses[k],
                "loss rose at step {k}: {} -> {}",
                losses[k],
                losses[k + 1]
            );
        }
        assert!(losses[200] < 0.1 * losses[0]);
    }
}
