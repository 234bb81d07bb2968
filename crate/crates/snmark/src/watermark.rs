//! Trigger sets, serial↔target encoding, the alternating embedding loop and
//! serial extraction.
//!
//! Embedding interleaves two tasks on one network: each classification
//! minibatch step (SGD-momentum on softmax cross-entropy) is followed by
//! `trigger_ratio` signature steps (Adam on MSE between the pre-softmax
//! logits of the trigger images and the encoded serial digits). The serial
//! targets live on pre-softmax logits because softmax outputs are pinned to
//! the simplex and cannot reach arbitrary bin centers.

use crate::crypto::SerialNumber;
use crate::error::{Error, Result};
use crate::network::{accuracy, Batch, LossKind, Network};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TRIGGER_COUNT: usize = 4;

/// Owner-secret images that evoke the serial number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSet {
    /// count × 784 pixels in [0,1].
    pub images: Tensor<f32>,
    pub owner_seed: u64,
}

impl TriggerSet {
    pub fn count(&self) -> usize {
        self.images.outer_len()
    }
}

/// Derives `count` pseudo-random 28×28 trigger images from the owner seed.
///
/// Pixels come from a ChaCha20 counter-mode stream keyed by the seed, so the
/// set is a pure function of `owner_seed` and statistically disjoint from
/// any natural image distribution.
pub fn make_triggers(owner_seed: u64, count: usize) -> TriggerSet {
    assert!(count >= 1, "at least one trigger image");
    let mut stream = rng::stream(owner_seed, "trigger-images");
    let images = Tensor::from_fn(vec![count, 28 * 28], |_| stream.gen_range(0.0..1.0f32));
    TriggerSet { images, owner_seed }
}

/// Maps serial digits onto output-unit values and back: digit d occupies the
/// bin [lo + d·w, lo + (d+1)·w) with w = (hi−lo)/base, and encodes as the bin
/// center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnQuantizer {
    pub base: u8,
    pub lo: f64,
    pub hi: f64,
}

impl Default for SnQuantizer {
    /// Embedding default: bins spread over [0,4] so each bin is wide
    /// relative to the logit jitter that interleaved training and pruning
    /// introduce, yet the farthest bin center stays reachable within a few
    /// epochs of signature steps.
    fn default() -> Self {
        Self { base: 16, lo: 0.0, hi: 4.0 }
    }
}

impl SnQuantizer {
    pub fn digit_to_value(&self, digit: u8) -> f64 {
        self.lo + (digit as f64 + 0.5) * (self.hi - self.lo) / self.base as f64
    }

    /// floor(clamp((v − lo)/(hi − lo), 0, 1−ε) · base): values at a bin
    /// boundary fall into the upper bin, values at or beyond `hi` into the
    /// last one.
    pub fn value_to_digit(&self, value: f64) -> u8 {
        let u = ((value - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0 - 1e-9);
        (u * self.base as f64).floor() as u8
    }
}

/// Per-trigger regression targets encoding one serial number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnTargets {
    pub sn: SerialNumber,
    /// trigger count × 10 target logits.
    pub targets: Tensor<f32>,
    pub quantizer: SnQuantizer,
}

/// Encodes a serial into bin-center target vectors, ten digits per trigger.
pub fn encode_sn_to_targets(
    sn: &SerialNumber,
    quantizer: SnQuantizer,
    trigger_count: usize,
) -> Result<SnTargets> {
    if sn.len() != trigger_count * 10 {
        return Err(Error::Config(format!(
            "serial of {} digits cannot spread over {trigger_count} triggers × 10 units",
            sn.len()
        )));
    }
    if sn.base() != quantizer.base {
        return Err(Error::Config("serial base differs from quantizer base".into()));
    }
    let targets = Tensor::from_fn(vec![trigger_count, 10], |i| {
        quantizer.digit_to_value(sn.digits()[i]) as f32
    });
    Ok(SnTargets { sn: sn.clone(), targets, quantizer })
}

/// Decodes output vectors back into a serial number (row-major digit order).
pub fn decode_outputs_to_sn(outputs: &Tensor<f32>, quantizer: SnQuantizer) -> SerialNumber {
    let digits: Vec<u8> = outputs
        .data()
        .iter()
        .map(|&v| quantizer.value_to_digit(v as f64))
        .collect();
    SerialNumber::new(digits, quantizer.base).expect("decoded digits are below base")
}

/// Reads the serial a network currently expresses on the trigger set.
pub fn extract_sn(
    network: &Network<f32>,
    triggers: &TriggerSet,
    quantizer: SnQuantizer,
) -> Result<SerialNumber> {
    let logits = network.forward_logits(&triggers.images)?;
    Ok(decode_outputs_to_sn(&logits, quantizer))
}

/// Settings for the alternating embedding loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Signature steps per classification step; 0 trains classification only.
    pub trigger_ratio: usize,
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
    pub adam_lr: f64,
    pub seed: u64,
    /// Serial digits are checked every this many classification steps...
    pub check_interval: usize,
    /// ...and the task counts as converged after this many all-correct checks
    /// in a row.
    pub required_consecutive: usize,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            trigger_ratio: 1,
            sgd_lr: 0.1,
            sgd_momentum: 0.9,
            adam_lr: 0.001,
            seed: 0,
            check_interval: 100,
            required_consecutive: 5,
            verbose: false,
        }
    }
}

impl EmbedConfig {
    fn classifier_opt(&self) -> OptimizerKind {
        OptimizerKind::SgdMomentum { lr: self.sgd_lr, momentum: self.sgd_momentum }
    }

    fn signature_opt(&self) -> OptimizerKind {
        OptimizerKind::Adam { lr: self.adam_lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Classification data for the embedding loop.
pub struct TrainData<'a> {
    pub images: &'a Tensor<f32>,
    pub labels: &'a [u8],
}

/// Optional held-out sets evaluated at every epoch boundary.
#[derive(Default, Clone, Copy)]
pub struct EvalHooks<'a> {
    pub validation: Option<(&'a Tensor<f32>, &'a [u8])>,
    /// Subset of the training data used for the training-accuracy curve.
    pub train_probe: Option<(&'a Tensor<f32>, &'a [u8])>,
}

/// One epoch of the recorded learning curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub classifier_loss: f64,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    /// Matching digits at epoch end (only when a signature task runs).
    pub sn_digits_ok: Option<usize>,
}

/// Result of a training/embedding run.
pub struct TrainRun {
    pub network: Network<f32>,
    pub history: Vec<EpochStats>,
    /// Classification step at which the signature task first held for the
    /// required number of consecutive checks.
    pub sn_converged_step: Option<usize>,
}

/// The alternating-training workhorse shared by plain classification training
/// (`signature: None` or `trigger_ratio == 0`) and serial embedding.
pub fn train(
    mut network: Network<f32>,
    data: TrainData<'_>,
    signature: Option<(&TriggerSet, &SnTargets)>,
    cfg: &EmbedConfig,
    hooks: EvalHooks<'_>,
) -> Result<TrainRun> {
    let n = data.images.outer_len();
    if n == 0 || n != data.labels.len() {
        return Err(Error::Config("training images/labels mismatch".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    let mut classifier_state = OptimizerState::new(cfg.classifier_opt());
    let mut signature_state = OptimizerState::new(cfg.signature_opt());
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "epoch-shuffle");

    let trigger_batch = signature.map(|(triggers, targets)| {
        Batch::regression(triggers.images.clone(), targets.targets.clone())
    });
    let trigger_batch = match trigger_batch {
        Some(b) => Some(b?),
        None => None,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut consecutive_ok = 0usize;
    let mut converged_at: Option<usize> = None;
    let mut global_step = 0usize;
    let width: usize = 28 * 28;

    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut inputs = Tensor::zeros(vec![chunk.len(), width]);
            let mut labels = Vec::with_capacity(chunk.len());
            for (row, &src) in chunk.iter().enumerate() {
                inputs.data_mut()[row * width..(row + 1) * width]
                    .copy_from_slice(data.images.row(src));
                labels.push(data.labels[src]);
            }
            let batch = Batch::labeled(inputs, labels)?;
            let (loss, grads) = network.backward(&batch, LossKind::CrossEntropy)?;
            classifier_state.step(&mut network, &grads)?;
            loss_sum += loss;
            loss_batches += 1;
            global_step += 1;

            if let Some(tb) = &trigger_batch {
                for _ in 0..cfg.trigger_ratio {
                    let (_, grads) = network.backward(tb, LossKind::MseOnLogits)?;
                    signature_state.step(&mut network, &grads)?;
                }
                if cfg.trigger_ratio > 0
                    && converged_at.is_none()
                    && global_step % cfg.check_interval == 0
                {
                    let (triggers, targets) = signature.unwrap();
                    let extracted = extract_sn(&network, triggers, targets.quantizer)?;
                    if extracted == targets.sn {
                        consecutive_ok += 1;
                        if consecutive_ok >= cfg.required_consecutive {
                            converged_at = Some(global_step);
                        }
                    } else {
                        consecutive_ok = 0;
                    }
                }
            }
        }

        let sn_digits_ok = match signature {
            Some((triggers, targets)) => {
                let extracted = extract_sn(&network, triggers, targets.quantizer)?;
                Some(extracted.matching_digits(&targets.sn))
            }
            None => None,
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            classifier_loss: loss_sum / loss_batches.max(1) as f64,
            train_acc: hooks
                .train_probe
                .map(|(x, y)| accuracy(&network, x, y, 512))
                .transpose()?,
            val_acc: hooks
                .validation
                .map(|(x, y)| accuracy(&network, x, y, 512))
                .transpose()?,
            sn_digits_ok,
        };
        if cfg.verbose {
            let fmt_acc = |a: Option<f64>| a.map(|v| format!("{:.2}%", v * 100.0)).unwrap_or_else(|| "-".into());
            eprintln!(
                "epoch {:>3}  loss {:.4}  train {}  val {}  sn {}",
                stats.epoch,
                stats.classifier_loss,
                fmt_acc(stats.train_acc),
                fmt_acc(stats.val_acc),
                stats.sn_digits_ok.map(|d| format!("{d}/{}", signature.map(|(_, t)| t.sn.len()).unwrap_or(0))).unwrap_or_else(|| "-".into()),
            );
        }
        history.push(stats);
    }

    Ok(TrainRun { network, history, sn_converged_step: converged_at })
}

/// Embeds a serial number into the network (the full alternating loop) and
/// returns the protected network together with the serial it now carries.
///
/// Fails with the final digit-match count if the signature task has not been
/// learned by the end of the epoch budget.
pub fn embed(
    network: Network<f32>,
    data: TrainData<'_>,
    triggers: &TriggerSet,
    targets: &SnTargets,
    cfg: &EmbedConfig,
    hooks: EvalHooks<'_>,
) -> Result<(TrainRun, SerialNumber)> {
    if triggers.count() * 10 != targets.sn.len() {
        return Err(Error::Config("trigger count × 10 must equal serial length".into()));
    }
    let run = train(network, data, Some((triggers, targets)), cfg, hooks)?;
    let extracted = extract_sn(&run.network, triggers, targets.quantizer)?;
    if cfg.trigger_ratio > 0 && extracted != targets.sn {
        return Err(Error::SnNotConverged {
            matched: extracted.matching_digits(&targets.sn),
            total: targets.sn.len(),
        });
    }
    Ok((run, extracted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto;

    #[test]
    fn triggers_are_deterministic_per_seed() {
        let a = make_triggers(5, 4);
        let b = make_triggers(5, 4);
        assert_eq!(a, b);
        assert_eq!(a.images.shape(), &[4, 784]);
        assert!(a.images.data().iter().all(|&p| (0.0..1.0).contains(&p)));
    }

    #[test]
    fn trigger_sets_from_different_seeds_overlap_below_one_percent() {
        // over 100 seed pairs, count pixel positions whose values agree to
        // within one gray level (1/256)
        let mut worst = 0.0f64;
        for seed in 0..100u64 {
            let a = make_triggers(seed, 1);
            let b = make_triggers(seed + 1000, 1);
            let close = a
                .images
                .data()
                .iter()
                .zip(b.images.data())
                .filter(|(x, y)| (**x - **y).abs() < 1.0 / 256.0)
                .count();
            worst = worst.max(close as f64 / 784.0);
        }
        // agreement rate of independent uniforms is ~2/256 ≈ 0.8%
        assert!(worst < 0.025, "worst near-overlap fraction {worst}");
    }

    #[test]
    fn quantizer_bin_arithmetic() {
        let q = SnQuantizer { base: 16, lo: 0.0, hi: 1.0 };
        assert_eq!(q.digit_to_value(7), 0.46875);
        assert_eq!(q.value_to_digit(0.47), 7);
        // boundary value falls into the upper bin
        assert_eq!(q.value_to_digit(0.5), 8);
        // clamping
        assert_eq!(q.value_to_digit(-3.0), 0);
        assert_eq!(q.value_to_digit(7.5), 15);
        assert_eq!(q.value_to_digit(1.0), 15);
    }

    #[test]
    fn encode_decode_round_trip() {
        let q = SnQuantizer::default();
        let digits: Vec<u8> = (0..40).map(|i| ((i * 7 + 3) % 16) as u8).collect();
        let sn = SerialNumber::new(digits, 16).unwrap();
        let targets = encode_sn_to_targets(&sn, q, 4).unwrap();
        let back = decode_outputs_to_sn(&targets.targets, q);
        assert_eq!(back, sn);
    }

    #[test]
    fn encode_rejects_length_mismatch() {
        let sn = SerialNumber::new(vec![0; 30], 16).unwrap();
        assert!(encode_sn_to_targets(&sn, SnQuantizer::default(), 4).is_err());
    }

    #[test]
    fn extraction_is_deterministic() {
        let net: Network<f32> = crate::zoo::build_scaled(crate::zoo::ArchitectureId::Teacher, 8, 3);
        let triggers = make_triggers(9, 4);
        let a = extract_sn(&net, &triggers, SnQuantizer::default()).unwrap();
        let b = extract_sn(&net, &triggers, SnQuantizer::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
    }

    #[test]
    fn untrained_networks_match_about_one_in_base() {
        // spread over many fresh networks, the per-digit match rate against a
        // fixed random serial stays near chance
        let params = crypto::keygen(64, 5).unwrap();
        let token = crypto::OwnerToken::new("o", "m", 0, &params).unwrap();
        let sn = crypto::sn_generate(&token, &params, 16, 40).unwrap();
        let triggers = make_triggers(17, 4);
        let q = SnQuantizer::default();
        let mut matches = 0usize;
        let trials = 100;
        for seed in 0..trials {
            let net: Network<f32> =
                crate::zoo::build_scaled(crate::zoo::ArchitectureId::Teacher, 8, 1000 + seed);
            let extracted = extract_sn(&net, &triggers, q).unwrap();
            matches += extracted.matching_digits(&sn);
        }
        let rate = matches as f64 / (trials as f64 * 40.0);
        // fresh logits cluster near zero, i.e. the lowest bins; random serials
        // hit those with probability around 1/16 with wide slack
        assert!(rate < 3.0 / 16.0, "match rate {rate}");
    }

    use crate::testdata::bar_images;

    #[test]
    fn embedding_learns_a_serial_on_a_tiny_task() {
        // deliberately tiny: 64 synthetic samples, quarter-width teacher
        let (images, labels) = bar_images(64, 1);
        let net: Network<f32> = crate::zoo::build_scaled(crate::zoo::ArchitectureId::Teacher, 2, 7);

        let triggers = make_triggers(33, 4);
        let q = SnQuantizer::default();
        let digits: Vec<u8> = (0..40).map(|i| ((i * 5 + 1) % 16) as u8).collect();
        let sn = SerialNumber::new(digits, 16).unwrap();
        let targets = encode_sn_to_targets(&sn, q, 4).unwrap();

        // only 2 classification steps per epoch here, so raise the signature
        // learning rate and ratio to keep the test quick
        let cfg = EmbedConfig {
            epochs: 150,
            batch_size: 32,
            trigger_ratio: 2,
            adam_lr: 0.01,
            check_interval: 2,
            ..EmbedConfig::default()
        };
        let images_before = triggers.images.clone();
        let (run, extracted) = embed(
            net,
            TrainData { images: &images, labels: &labels },
            &triggers,
            &targets,
            &cfg,
            EvalHooks::default(),
        )
        .unwrap();
        assert_eq!(extracted, sn);
        assert!(run.sn_converged_step.is_some());
        // inputs are never modified
        assert_eq!(triggers.images, images_before);
        assert_eq!(run.history.len(), 150);
    }

    #[test]
    fn ratio_zero_trains_classification_only() {
        let (images, labels) = bar_images(32, 2);
        let net: Network<f32> = crate::zoo::build_scaled(crate::zoo::ArchitectureId::Teacher, 8, 8);

        let triggers = make_triggers(34, 4);
        let q = SnQuantizer::default();
        let sn = SerialNumber::new(vec![7; 40], 16).unwrap();
        let targets = encode_sn_to_targets(&sn, q, 4).unwrap();

        let cfg = EmbedConfig { epochs: 3, batch_size: 32, trigger_ratio: 0, ..Default::default() };
        let (run, extracted) = embed(
            net,
            TrainData { images: &images, labels: &labels },
            &triggers,
            &targets,
            &cfg,
            EvalHooks::default(),
        )
        .unwrap();
        // without signature steps the serial does not appear
        assert_ne!(extracted, sn);
        assert!(run.sn_converged_step.is_none());
    }
}
