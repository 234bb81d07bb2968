//! Magnitude weight pruning with an optional gradual sparsity ramp and
//! classification fine-tuning.
//!
//! Pruning zeroes the smallest-|w| weights of each Conv/Dense tensor (or of
//! the pooled weight population under global scope) and pins them with a
//! mask the optimizer honors. The gradual path re-selects masks along a
//! cubic schedule while fine-tuning, which is what lets accuracy survive
//! high sparsity.

use crate::error::{Error, Result};
use crate::network::{accuracy, Batch, LossKind, Network};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng;
use crate::tensor::Tensor;
use crate::watermark::{extract_sn, SnQuantizer, SnTargets, TriggerSet};
use serde::{Deserialize, Serialize};

/// Whether the sparsity target applies per layer or to the pooled weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PruneScope {
    PerLayer,
    Global,
}

/// How the sparsity target is reached during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PruneRamp {
    /// Mask once at the target, then fine-tune.
    OneShot,
    /// Cubic ramp from zero to the target over the first half of the
    /// fine-tune steps, constant afterwards; masks are re-selected at every
    /// ramp update.
    Cubic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub target_sparsity: f64,
    pub ramp: PruneRamp,
    pub scope: PruneScope,
    /// Total classification fine-tune steps.
    pub fine_tune_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Steps between mask re-selections on the cubic ramp.
    pub update_every: usize,
    /// Also run signature batches while fine-tuning (off by default: the
    /// robustness claim is only meaningful if fine-tuning never sees the
    /// trigger set).
    pub include_triggers: bool,
    pub seed: u64,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            target_sparsity: 0.5,
            ramp: PruneRamp::Cubic,
            scope: PruneScope::PerLayer,
            fine_tune_steps: 430,
            batch_size: 128,
            learning_rate: 0.02,
            momentum: 0.9,
            update_every: 20,
            include_triggers: false,
            seed: 0,
        }
    }
}

fn validate_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity {sparsity} must lie in [0, 1)")));
    }
    Ok(())
}

/// Smallest-magnitude selection for one weight tensor: returns the mask with
/// exactly `round(sparsity · len)` zeros (ties broken by index order).
fn select_mask(weights: &[f32], sparsity: f64) -> Vec<u8> {
    let k = (sparsity * weights.len() as f64).round() as usize;
    let mut mask = vec![1u8; weights.len()];
    if k == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .partial_cmp(&weights[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(k) {
        mask[i] = 0;
    }
    mask
}

/// Masks the smallest-magnitude weights of every Conv/Dense layer to reach
/// `sparsity`. Biases are never pruned. Returns a new network with masks
/// installed and masked weights zeroed.
pub fn magnitude_prune(network: &Network<f32>, sparsity: f64, scope: PruneScope) -> Result<Network<f32>> {
    validate_sparsity(sparsity)?;
    let mut pruned = network.clone();
    match scope {
        PruneScope::PerLayer => {
            for p in pruned.params_mut().iter_mut().flatten() {
                p.mask = Some(select_mask(p.weight.data(), sparsity));
                p.enforce_mask();
            }
        }
        PruneScope::Global => {
            // one threshold across all maskable weights
            let mut all: Vec<f32> = Vec::new();
            for p in pruned.params().iter().flatten() {
                all.extend(p.weight.data().iter().map(|w| w.abs()));
            }
            let k = (sparsity * all.len() as f64).round() as usize;
            if k == 0 {
                for p in pruned.params_mut().iter_mut().flatten() {
                    p.mask = Some(vec![1u8; p.weight.len()]);
                }
                return Ok(pruned);
            }
            all.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let threshold = all[k - 1];
            let mut zeroed = 0usize;
            for p in pruned.params_mut().iter_mut().flatten() {
                let mask: Vec<u8> = p
                    .weight
                    .data()
                    .iter()
                    .map(|w| {
                        if w.abs() < threshold || (w.abs() == threshold && zeroed < k) {
                            if w.abs() == threshold {
                                zeroed += 1;
                            }
                            0
                        } else {
                            1
                        }
                    })
                    .collect();
                zeroed += mask.iter().filter(|&&m| m == 0).count();
                p.mask = Some(mask);
                p.enforce_mask();
            }
        }
    }
    Ok(pruned)
}

/// Per-layer and overall sparsity fractions (exact zeros among maskable
/// weights; biases excluded).
#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub per_layer: Vec<(usize, f64)>,
    pub overall: f64,
}

pub fn sparsity_report(network: &Network<f32>) -> SparsityReport {
    let mut per_layer = Vec::new();
    let mut zeros = 0usize;
    let mut total = 0usize;
    for (i, p) in network.params().iter().enumerate() {
        if let Some(p) = p {
            let z = p.weight.data().iter().filter(|w| **w == 0.0).count();
            per_layer.push((i, z as f64 / p.weight.len() as f64));
            zeros += z;
            total += p.weight.len();
        }
    }
    SparsityReport { per_layer, overall: zeros as f64 / total.max(1) as f64 }
}

/// Cubic ramp value: fraction of the target reached after `done` of `ramp_len`
/// steps, s(t) = 1 − (1 − t)³ on the normalized ramp.
fn cubic_fraction(done: usize, ramp_len: usize) -> f64 {
    if ramp_len == 0 || done >= ramp_len {
        return 1.0;
    }
    let t = done as f64 / ramp_len as f64;
    1.0 - (1.0 - t).powi(3)
}

/// Outcome of a prune-with-fine-tune run.
pub struct PruneOutcome {
    pub network: Network<f32>,
    pub final_sparsity: f64,
    pub steps_run: usize,
}

/// Applies the schedule: masks follow the ramp while classification batches
/// fine-tune the surviving weights. The signature task is not shown to the
/// fine-tune unless `include_triggers` is set.
pub fn prune_with_finetune(
    network: &Network<f32>,
    schedule: &PruneSchedule,
    images: &Tensor<f32>,
    labels: &[u8],
    signature: Option<(&TriggerSet, &SnTargets)>,
) -> Result<PruneOutcome> {
    validate_sparsity(schedule.target_sparsity)?;
    if schedule.include_triggers && signature.is_none() {
        return Err(Error::Config("include_triggers set but no signature task supplied".into()));
    }
    let n = images.outer_len();
    let width: usize = 28 * 28;
    let mut net = network.clone();
    let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum {
        lr: schedule.learning_rate,
        momentum: schedule.momentum,
    });
    let mut sig_opt = OptimizerState::new(OptimizerKind::Adam {
        lr: 0.002,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    });
    let trigger_batch = match (schedule.include_triggers, signature) {
        (true, Some((triggers, targets))) => {
            Some(Batch::regression(triggers.images.clone(), targets.targets.clone())?)
        }
        _ => None,
    };

    let ramp_len = match schedule.ramp {
        PruneRamp::OneShot => 0,
        PruneRamp::Cubic => schedule.fine_tune_steps / 2,
    };
    net = magnitude_prune(
        &net,
        schedule.target_sparsity * cubic_fraction(0, ramp_len),
        schedule.scope,
    )?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(schedule.seed, "prune-finetune");
    let mut step = 0usize;
    'outer: loop {
        rng::shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(schedule.batch_size) {
            if step >= schedule.fine_tune_steps {
                break 'outer;
            }
            let mut inputs = Tensor::zeros(vec![chunk.len(), width]);
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for (row, &src) in chunk.iter().enumerate() {
                inputs.data_mut()[row * width..(row + 1) * width].copy_from_slice(images.row(src));
                batch_labels.push(labels[src]);
            }
            let batch = Batch::labeled(inputs, batch_labels)?;
            let (_, grads) = net.backward(&batch, LossKind::CrossEntropy)?;
            opt.step(&mut net, &grads)?;
            if let Some(tb) = &trigger_batch {
                let (_, grads) = net.backward(tb, LossKind::MseOnLogits)?;
                sig_opt.step(&mut net, &grads)?;
            }
            step += 1;

            if ramp_len > 0 && step <= ramp_len && step % schedule.update_every == 0 {
                let s = schedule.target_sparsity * cubic_fraction(step, ramp_len);
                net = magnitude_prune(&net, s, schedule.scope)?;
            }
        }
        if n == 0 {
            break;
        }
    }
    // land exactly on the target
    net = magnitude_prune(&net, schedule.target_sparsity, schedule.scope)?;

    let report = sparsity_report(&net);
    if schedule.fine_tune_steps > 0 {
        let probe = 2048.min(n);
        let part = Tensor::new(vec![probe, width], images.data()[..probe * width].to_vec())?;
        let acc = accuracy(&net, &part, &labels[..probe], 512)?;
        if acc < 0.5 {
            return Err(Error::AccuracyCollapse {
                accuracy: acc * 100.0,
                sparsity: schedule.target_sparsity,
            });
        }
    }
    Ok(PruneOutcome { network: net, final_sparsity: report.overall, steps_run: step })
}

/// Serial digit accuracy of a pruned network against its filed serial.
pub fn sn_digit_accuracy(
    network: &Network<f32>,
    triggers: &TriggerSet,
    targets: &SnTargets,
    quantizer: SnQuantizer,
) -> Result<f64> {
    let extracted = extract_sn(network, triggers, quantizer)?;
    Ok(extracted.matching_digits(&targets.sn) as f64 / targets.sn.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_scaled, ArchitectureId};
    use rand::Rng;

    #[test]
    fn zero_sparsity_changes_nothing() {
        let net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 3);
        let pruned = magnitude_prune(&net, 0.0, PruneScope::PerLayer).unwrap();
        for (a, b) in pruned.params().iter().zip(net.params()) {
            if let (Some(a), Some(b)) = (a, b) {
                assert_eq!(a.weight.data(), b.weight.data());
                assert_eq!(a.mask.as_ref().unwrap().iter().filter(|&&m| m == 0).count(), 0);
            }
        }
        assert_eq!(sparsity_report(&pruned).overall, 0.0);
    }

    #[test]
    fn half_sparsity_zeroes_the_smallest_half() {
        // 100 weights with distinct magnitudes
        let mut rng = rng::stream(4, "prune");
        let mut weights: Vec<f32> = (1..=100).map(|i| i as f32 / 100.0).collect();
        rng::shuffle(&mut weights, &mut rng);
        let mask = select_mask(&weights, 0.5);
        assert_eq!(mask.iter().filter(|&&m| m == 0).count(), 50);
        for (w, m) in weights.iter().zip(&mask) {
            if w.abs() <= 0.50 {
                assert_eq!(*m, 0, "weight {w} should be pruned");
            } else {
                assert_eq!(*m, 1, "weight {w} should survive");
            }
        }
        let _ = rng.gen_range(0..2);
    }

    #[test]
    fn mask_matches_full_sort_oracle() {
        let mut rng = rng::stream(9, "prune-oracle");
        let weights: Vec<f32> = (0..1000).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        for sparsity in [0.1, 0.3, 0.77] {
            let mask = select_mask(&weights, sparsity);

            // oracle: full sort by (|w|, index), zero the first k
            let k = (sparsity * 1000.0).round() as usize;
            let mut order: Vec<usize> = (0..1000).collect();
            order.sort_by(|&a, &b| {
                weights[a]
                    .abs()
                    .partial_cmp(&weights[b].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut want = vec![1u8; 1000];
            for &i in order.iter().take(k) {
                want[i] = 0;
            }
            assert_eq!(mask, want);
        }
    }

    #[test]
    fn report_matches_counting_loop() {
        let net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 5);
        let pruned = magnitude_prune(&net, 0.3, PruneScope::PerLayer).unwrap();
        let report = sparsity_report(&pruned);
        let mut zeros = 0usize;
        let mut total = 0usize;
        for p in pruned.params().iter().flatten() {
            for w in p.weight.data() {
                if *w == 0.0 {
                    zeros += 1;
                }
                total += 1;
            }
        }
        assert!((report.overall - zeros as f64 / total as f64).abs() < 1e-12);
        // per-layer within one weight of the target
        for (i, s) in &report.per_layer {
            let len = pruned.params()[*i].as_ref().unwrap().weight.len() as f64;
            assert!((s * len - (0.3 * len).round()).abs() <= 1.0, "layer {i} sparsity {s}");
        }
    }

    #[test]
    fn masked_weights_stay_zero_through_training() {
        let mut rng = rng::stream(6, "prune-train");
        let images = Tensor::from_fn(vec![32, 784], |_| rng.gen_range(0.0..1.0f32));
        let labels: Vec<u8> = (0..32).map(|i| (i % 10) as u8).collect();
        let net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 7);
        let mut pruned = magnitude_prune(&net, 0.4, PruneScope::PerLayer).unwrap();

        let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum { lr: 0.1, momentum: 0.9 });
        for _ in 0..20 {
            let batch = Batch::labeled(images.clone(), labels.clone()).unwrap();
            let (_, grads) = pruned.backward(&batch, LossKind::CrossEntropy).unwrap();
            // masked weights never receive gradient
            for (g, p) in grads.layers.iter().zip(pruned.params()) {
                if let (Some((gw, _)), Some(p)) = (g, p) {
                    for (gv, m) in gw.data().iter().zip(p.mask.as_ref().unwrap()) {
                        if *m == 0 {
                            assert_eq!(*gv, 0.0);
                        }
                    }
                }
            }
            opt.step(&mut pruned, &grads).unwrap();
        }
        for p in pruned.params().iter().flatten() {
            for (w, m) in p.weight.data().iter().zip(p.mask.as_ref().unwrap()) {
                if *m == 0 {
                    assert_eq!(*w, 0.0, "masked weight drifted");
                }
            }
        }
        assert!((sparsity_report(&pruned).overall - 0.4).abs() < 0.01);
    }

    #[test]
    fn cubic_ramp_shape() {
        assert_eq!(cubic_fraction(0, 100), 0.0);
        assert!((cubic_fraction(50, 100) - 0.875).abs() < 1e-12);
        assert_eq!(cubic_fraction(100, 100), 1.0);
        assert_eq!(cubic_fraction(500, 100), 1.0);
        assert_eq!(cubic_fraction(5, 0), 1.0);
    }

    #[test]
    fn finetune_reaches_exact_target() {
        let (images, labels) = crate::testdata::bar_images(64, 8);
        let net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 9);
        let schedule = PruneSchedule {
            target_sparsity: 0.6,
            fine_tune_steps: 40,
            batch_size: 32,
            update_every: 4,
            ..Default::default()
        };
        let out = prune_with_finetune(&net, &schedule, &images, &labels, None).unwrap();
        assert_eq!(out.steps_run, 40);
        assert!((out.final_sparsity - 0.6).abs() < 0.01, "final {}", out.final_sparsity);
    }
}
