//! The two loss heads: softmax cross-entropy for classification, mean squared
//! error on pre-softmax logits for the serial-number regression.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probability floor when taking logs of externally supplied probabilities.
const PROB_EPS: f64 = 1e-12;

/// Row-wise softmax of an N×K logit tensor (max-subtracted for stability).
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let k = logits.shape().last().copied().unwrap_or(0);
    let mut out = Tensor::zeros(logits.shape().to_vec());
    for (row, orow) in logits.data().chunks_exact(k).zip(out.data_mut().chunks_exact_mut(k)) {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for (o, v) in orow.iter_mut().zip(row) {
            *o = (*v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Mean negative log-probability of the true class, from probabilities.
///
/// Zero probabilities are clamped at 1e-12 so the loss stays finite.
pub fn cross_entropy_from_probs<S: Scalar>(probs: &Tensor<S>, labels: &[u8]) -> Result<f64> {
    let k = probs.shape().last().copied().unwrap_or(0);
    if probs.outer_len() != labels.len() || k == 0 {
        return Err(Error::InvalidTensor(format!(
            "{} probability rows vs {} labels",
            probs.outer_len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        let p = row[label as usize].as_f64().max(PROB_EPS);
        total -= p.ln();
    }
    Ok(total / labels.len() as f64)
}

/// Fused softmax + cross-entropy via log-sum-exp, with the logit gradient
/// (softmax(z) − onehot(y)) / N.
pub fn softmax_cross_entropy_with_grad<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[u8],
) -> (f64, Tensor<S>) {
    let k = logits.shape().last().copied().unwrap_or(0);
    let n = labels.len();
    debug_assert_eq!(logits.outer_len(), n);
    let mut grad = softmax(logits);
    let inv_n = S::from_f64(1.0 / n as f64);
    let mut total = 0.0;
    for (i, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max).as_f64();
        let lse = max
            + row
                .iter()
                .map(|v| (v.as_f64() - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[label as usize].as_f64();
        let grow = &mut grad.data_mut()[i * k..(i + 1) * k];
        grow[label as usize] -= S::one();
        for g in grow.iter_mut() {
            *g *= inv_n;
        }
    }
    (total / n as f64, grad)
}

/// Mean of squared element differences.
pub fn mse<S: Scalar>(outputs: &Tensor<S>, targets: &Tensor<S>) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(Error::InvalidTensor(format!(
            "mse shape mismatch: {:?} vs {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let total: f64 = outputs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(o, t)| {
            let d = o.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(total / outputs.len() as f64)
}

/// MSE plus its gradient 2(o − t)/numel on the outputs.
pub fn mse_with_grad<S: Scalar>(outputs: &Tensor<S>, targets: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    let loss = mse(outputs, targets)?;
    let scale = S::from_f64(2.0 / outputs.len() as f64);
    let mut grad = Tensor::zeros(outputs.shape().to_vec());
    for ((g, o), t) in grad.data_mut().iter_mut().zip(outputs.data()).zip(targets.data()) {
        *g = (*o - *t) * scale;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::new(vec![2, 10], (0..20).map(|i| i as f32 * 0.37 - 3.0).collect()).unwrap();
        let p = softmax(&logits);
        for i in 0..2 {
            let s: f32 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_logits_give_tenths() {
        let logits = Tensor::<f32>::zeros(vec![3, 10]);
        let p = softmax(&logits);
        for v in p.data() {
            assert!((v - 0.1).abs() < 1e-7);
        }
    }

    #[test]
    fn cross_entropy_one_hot_is_zero() {
        let mut probs = Tensor::<f64>::zeros(vec![1, 10]);
        probs.data_mut()[3] = 1.0;
        assert_eq!(cross_entropy_from_probs(&probs, &[3]).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln10() {
        let probs = Tensor::new(vec![2, 10], vec![0.1f64; 20]).unwrap();
        let l = cross_entropy_from_probs(&probs, &[0, 9]).unwrap();
        assert!((l - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_zero_prob_is_finite() {
        let mut probs = Tensor::<f64>::zeros(vec![1, 10]);
        probs.data_mut()[0] = 1.0;
        let l = cross_entropy_from_probs(&probs, &[5]).unwrap();
        assert!(l.is_finite());
        assert!(l > 20.0);
    }

    #[test]
    fn fused_ce_matches_per_sample_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let logits =
            Tensor::new(vec![7, 10], (0..70).map(|_| rng.gen_range(-4.0..4.0)).collect::<Vec<f64>>())
                .unwrap();
        let labels: Vec<u8> = (0..7).map(|_| rng.gen_range(0..10u8)).collect();
        let (fused, _) = softmax_cross_entropy_with_grad(&logits, &labels);

        // independent scalar oracle: softmax each row by hand, sum -log p
        let mut total = 0.0;
        for (row, &label) in logits.data().chunks_exact(10).zip(&labels) {
            let exps: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let sum: f64 = exps.iter().sum();
            total -= (exps[label as usize] / sum).ln();
        }
        assert!((fused - total / 7.0).abs() < 1e-10);
    }

    #[test]
    fn mse_basics() {
        let a = Tensor::new(vec![2, 10], vec![0.0f32; 20]).unwrap();
        let b = Tensor::new(vec![2, 10], vec![1.0f32; 20]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        let c = Tensor::new(vec![2, 9], vec![0.0f32; 18]).unwrap();
        assert!(mse(&a, &c).is_err());
    }

    #[test]
    fn mse_matches_element_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let o = Tensor::new(vec![4, 10], (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>())
            .unwrap();
        let t = Tensor::new(vec![4, 10], (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>())
            .unwrap();
        let got = mse(&o, &t).unwrap();
        let mut acc = 0.0;
        for i in 0..40 {
            let d = o.data()[i] - t.data()[i];
            acc += d * d;
        }
        assert!((got - acc / 40.0).abs() < 1e-12);
    }

    #[test]
    fn mse_grad_zero_at_match() {
        let a = Tensor::new(vec![1, 10], (0..10).map(|i| i as f32).collect()).unwrap();
        let (loss, grad) = mse_with_grad(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|v| *v == 0.0));
    }
}
