//! The network container: an ordered layer stack with weights, biases and
//! optional pruning masks, plus batched forward/backward passes.

use crate::error::{Error, Result};
use crate::layer::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, fan_in, pool2x2_backward,
    pool2x2_forward, FeatureShape, LayerSpec,
};
use crate::loss::{mse_with_grad, softmax, softmax_cross_entropy_with_grad};
use crate::tensor::{argmax, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub const INPUT_SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

/// Weights and bias of one parameterized layer. `mask` marks weights pinned
/// to zero by pruning (0 = pruned); biases are never pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub mask: Option<Vec<u8>>,
}

impl<S: Scalar> Param<S> {
    /// Zeroes every masked weight.
    pub fn enforce_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (w, m) in self.weight.data_mut().iter_mut().zip(mask) {
                if *m == 0 {
                    *w = S::zero();
                }
            }
        }
    }
}

/// Per-layer parameter gradients, aligned with `Network::params`.
pub struct Gradients<S: Scalar> {
    pub layers: Vec<Option<(Tensor<S>, Vec<S>)>>,
}

/// Loss attached to the logit head during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy against integer labels.
    CrossEntropy,
    /// Mean squared error against real target vectors, on pre-softmax logits.
    MseOnLogits,
}

/// A training minibatch: images plus either class labels or regression targets.
pub struct Batch<S: Scalar> {
    pub inputs: Tensor<S>,
    pub targets: BatchTargets<S>,
}

pub enum BatchTargets<S: Scalar> {
    Labels(Vec<u8>),
    Vectors(Tensor<S>),
}

impl<S: Scalar> Batch<S> {
    pub fn labeled(inputs: Tensor<S>, labels: Vec<u8>) -> Result<Self> {
        if inputs.outer_len() == 0 || inputs.outer_len() != labels.len() {
            return Err(Error::InvalidTensor(format!(
                "batch of {} inputs with {} labels",
                inputs.outer_len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidTensor(format!("label {bad} out of range")));
        }
        Ok(Self { inputs, targets: BatchTargets::Labels(labels) })
    }

    pub fn regression(inputs: Tensor<S>, targets: Tensor<S>) -> Result<Self> {
        if inputs.outer_len() == 0 || inputs.outer_len() != targets.outer_len() {
            return Err(Error::InvalidTensor("batch/target count mismatch".into()));
        }
        Ok(Self { inputs, targets: BatchTargets::Vectors(targets) })
    }

    pub fn len(&self) -> usize {
        self.inputs.outer_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations recorded by a forward pass, consumed by `backward`.
pub struct ForwardTrace<S: Scalar> {
    /// acts[0] is the input; acts[i+1] the output of layer i (post-activation).
    acts: Vec<Tensor<S>>,
    /// Argmax indices for each pooling layer, keyed by layer index.
    pool_idx: Vec<(usize, Vec<u32>)>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn logits(&self) -> &Tensor<S> {
        self.acts.last().expect("trace has at least the input")
    }
}

/// Ordered layer stack with parameters.
#[derive(Debug, Clone)]
pub struct Network<S: Scalar = f32> {
    specs: Vec<LayerSpec>,
    params: Vec<Option<Param<S>>>,
    shapes: Vec<FeatureShape>, // shapes[0] = input, shapes[i+1] = output of layer i
}

impl<S: Scalar> Network<S> {
    /// Builds a network for 28×28×1 inputs with He-style uniform weight init
    /// (biases zero). The final layer must be a linear `Dense` head of
    /// width 10.
    pub fn build(specs: Vec<LayerSpec>, rng: &mut ChaCha20Rng) -> Result<Self> {
        let mut shapes = vec![FeatureShape::Map { h: INPUT_SIDE, w: INPUT_SIDE, c: 1 }];
        let mut params = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let in_shape = *shapes.last().unwrap();
            let out_shape = spec
                .output_shape(in_shape)
                .map_err(|m| Error::ShapeMismatch { layer: i, message: m })?;
            params.push(spec.param_shape(in_shape).map(|(wshape, blen)| {
                let limit = S::from_f64((6.0 / fan_in(&wshape) as f64).sqrt());
                let weight = Tensor::from_fn(wshape, |_| {
                    S::from_f64(rng.gen_range(-1.0..1.0)) * limit
                });
                Param { weight, bias: vec![S::zero(); blen], mask: None }
            }));
            shapes.push(out_shape);
        }
        match specs.last() {
            Some(LayerSpec::Dense { width }) if *width == NUM_CLASSES => {}
            other => {
                return Err(Error::ShapeMismatch {
                    layer: specs.len().saturating_sub(1),
                    message: format!("final layer must be Dense {{ width: 10 }}, got {other:?}"),
                })
            }
        }
        Ok(Self { specs, params, shapes })
    }

    /// Assembles a network from explicit parts (checkpoint load, transforms).
    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<Option<Param<S>>>) -> Result<Self> {
        let mut shapes = vec![FeatureShape::Map { h: INPUT_SIDE, w: INPUT_SIDE, c: 1 }];
        if specs.len() != params.len() {
            return Err(Error::InvalidTensor("specs/params length mismatch".into()));
        }
        for (i, spec) in specs.iter().enumerate() {
            let in_shape = *shapes.last().unwrap();
            let out_shape = spec
                .output_shape(in_shape)
                .map_err(|m| Error::ShapeMismatch { layer: i, message: m })?;
            match (spec.param_shape(in_shape), &params[i]) {
                (Some((wshape, blen)), Some(p)) => {
                    if p.weight.shape() != wshape.as_slice() || p.bias.len() != blen {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            message: format!(
                                "expected weight {:?} bias {}, got weight {:?} bias {}",
                                wshape,
                                blen,
                                p.weight.shape(),
                                p.bias.len()
                            ),
                        });
                    }
                    if let Some(m) = &p.mask {
                        if m.len() != p.weight.len() {
                            return Err(Error::ShapeMismatch {
                                layer: i,
                                message: "mask length differs from weight length".into(),
                            });
                        }
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::ShapeMismatch {
                        layer: i,
                        message: "parameter presence does not match layer kind".into(),
                    })
                }
            }
            shapes.push(out_shape);
        }
        Ok(Self { specs, params, shapes })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Option<Param<S>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Param<S>>] {
        &mut self.params
    }

    pub fn feature_shapes(&self) -> &[FeatureShape] {
        &self.shapes
    }

    pub fn num_weights(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Zeroes masked weights in every layer.
    pub fn enforce_masks(&mut self) {
        for p in self.params.iter_mut().flatten() {
            p.enforce_mask();
        }
    }

    pub fn map_to<T: Scalar>(&self) -> Network<T> {
        Network {
            specs: self.specs.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Param {
                        weight: p.weight.map_to::<T>(),
                        bias: p.bias.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                        mask: p.mask.clone(),
                    })
                })
                .collect(),
            shapes: self.shapes.clone(),
        }
    }

    fn check_input(&self, inputs: &Tensor<S>) -> Result<usize> {
        let shape = inputs.shape();
        let per_sample: usize = shape[1..].iter().product();
        if shape.is_empty() || per_sample != INPUT_SIDE * INPUT_SIDE {
            return Err(Error::ShapeMismatch {
                layer: 0,
                message: format!(
                    "input shape {:?} does not match {}x{}x1 images",
                    shape, INPUT_SIDE, INPUT_SIDE
                ),
            });
        }
        Ok(shape[0])
    }

    /// Runs the batch through the stack, recording per-layer activations.
    pub fn forward_trace(&self, inputs: &Tensor<S>) -> Result<ForwardTrace<S>> {
        let n = self.check_input(inputs)?;
        let mut acts: Vec<Tensor<S>> = Vec::with_capacity(self.specs.len() + 1);
        acts.push(inputs.clone());
        let mut pool_idx = Vec::new();
        for (i, spec) in self.specs.iter().enumerate() {
            let in_shape = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            let x = acts.last().unwrap().data();
            let mut y = Tensor::zeros(vec![n, out_shape.elements()]);
            match (*spec, in_shape) {
                (LayerSpec::Conv2d { filters }, FeatureShape::Map { h, w, c }) => {
                    let p = self.params[i].as_ref().unwrap();
                    conv3x3_forward(x, n, h, w, c, p.weight.data(), &p.bias, filters, y.data_mut());
                }
                (LayerSpec::MaxPool2d, FeatureShape::Map { h, w, c }) => {
                    let mut idx = vec![0u32; n * out_shape.elements()];
                    pool2x2_forward(x, n, h, w, c, y.data_mut(), &mut idx);
                    pool_idx.push((i, idx));
                }
                (LayerSpec::Flatten, _) => {
                    y.data_mut().copy_from_slice(x);
                }
                (LayerSpec::DenseRelu { width }, FeatureShape::Flat(din)) => {
                    let p = self.params[i].as_ref().unwrap();
                    dense_forward(x, n, din, p.weight.data(), &p.bias, width, true, y.data_mut());
                }
                (LayerSpec::Dense { width }, FeatureShape::Flat(din)) => {
                    let p = self.params[i].as_ref().unwrap();
                    dense_forward(x, n, din, p.weight.data(), &p.bias, width, false, y.data_mut());
                }
                (spec, shape) => {
                    return Err(Error::ShapeMismatch {
                        layer: i,
                        message: format!("{spec:?} on {shape:?}"),
                    })
                }
            }
            acts.push(y);
        }
        Ok(ForwardTrace { acts, pool_idx })
    }

    /// Forward pass returning pre-softmax logits (N×10).
    pub fn forward_logits(&self, inputs: &Tensor<S>) -> Result<Tensor<S>> {
        let mut trace = self.forward_trace(inputs)?;
        Ok(trace.acts.pop().expect("trace holds the logits"))
    }

    /// Forward pass returning (logits, softmax probabilities).
    pub fn forward(&self, inputs: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let logits = self.forward_logits(inputs)?;
        let probs = softmax(&logits);
        Ok((logits, probs))
    }

    /// Backpropagates a gradient on the logits through the stack.
    pub fn backward_from_logits(
        &self,
        trace: &ForwardTrace<S>,
        dlogits: &Tensor<S>,
    ) -> Result<Gradients<S>> {
        let n = trace.acts[0].outer_len();
        let mut grads: Vec<Option<(Tensor<S>, Vec<S>)>> = Vec::with_capacity(self.specs.len());
        for p in &self.params {
            grads.push(p.as_ref().map(|p| {
                (Tensor::zeros(p.weight.shape().to_vec()), vec![S::zero(); p.bias.len()])
            }));
        }
        let mut dcur = dlogits.data().to_vec();
        let mut pool_iter = trace.pool_idx.iter().rev();
        for i in (0..self.specs.len()).rev() {
            let in_shape = self.shapes[i];
            let x = trace.acts[i].data();
            let y = trace.acts[i + 1].data();
            let mut dx = vec![S::zero(); n * in_shape.elements()];
            match (self.specs[i], in_shape) {
                (LayerSpec::Conv2d { filters }, FeatureShape::Map { h, w, c }) => {
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    conv3x3_backward(
                        x, y, &dcur, n, h, w, c,
                        p.weight.data(), filters,
                        g.0.data_mut(), &mut g.1, &mut dx,
                    );
                }
                (LayerSpec::MaxPool2d, FeatureShape::Map { h, w, c }) => {
                    let (li, idx) = pool_iter.next().expect("pool index recorded");
                    debug_assert_eq!(*li, i);
                    pool2x2_backward(&dcur, idx, n, h, w, c, &mut dx);
                }
                (LayerSpec::Flatten, _) => {
                    dx.copy_from_slice(&dcur);
                }
                (LayerSpec::DenseRelu { width }, FeatureShape::Flat(din)) => {
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    dense_backward(
                        x, y, &dcur, n, din, width, true,
                        p.weight.data(), g.0.data_mut(), &mut g.1, &mut dx,
                    );
                }
                (LayerSpec::Dense { width }, FeatureShape::Flat(din)) => {
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    dense_backward(
                        x, y, &dcur, n, din, width, false,
                        p.weight.data(), g.0.data_mut(), &mut g.1, &mut dx,
                    );
                }
                (spec, shape) => {
                    return Err(Error::ShapeMismatch {
                        layer: i,
                        message: format!("{spec:?} on {shape:?}"),
                    })
                }
            }
            dcur = dx;
        }
        // Masked weights never receive gradient.
        for (g, p) in grads.iter_mut().zip(&self.params) {
            if let (Some((gw, _)), Some(Param { mask: Some(mask), .. })) = (g.as_mut(), p.as_ref()) {
                for (gv, m) in gw.data_mut().iter_mut().zip(mask) {
                    if *m == 0 {
                        *gv = S::zero();
                    }
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some((gw, gb)) = g {
                if !gw.data().iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteGradient { layer: i, which: "weight" });
                }
                if !gb.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteGradient { layer: i, which: "bias" });
                }
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Forward + loss + backward in one call. Returns the scalar loss and the
    /// parameter gradients.
    pub fn backward(&self, batch: &Batch<S>, loss: LossKind) -> Result<(f64, Gradients<S>)> {
        let trace = self.forward_trace(&batch.inputs)?;
        let (loss_value, dlogits) = match (loss, &batch.targets) {
            (LossKind::CrossEntropy, BatchTargets::Labels(labels)) => {
                softmax_cross_entropy_with_grad(trace.logits(), labels)
            }
            (LossKind::MseOnLogits, BatchTargets::Vectors(t)) => mse_with_grad(trace.logits(), t)?,
            _ => {
                return Err(Error::InvalidTensor(
                    "loss kind does not match batch target kind".into(),
                ))
            }
        };
        let grads = self.backward_from_logits(&trace, &dlogits)?;
        Ok((loss_value, grads))
    }

    /// Class prediction for one 28×28 image.
    pub fn predict_label(&self, image: &Tensor<S>) -> Result<usize> {
        let n = image.len();
        if n != INPUT_SIDE * INPUT_SIDE {
            return Err(Error::ShapeMismatch {
                layer: 0,
                message: format!("expected a single 784-pixel image, got {n} values"),
            });
        }
        let batch = Tensor::new(vec![1, n], image.data().to_vec())?;
        let logits = self.forward_logits(&batch)?;
        Ok(argmax(logits.row(0)))
    }

    /// Predictions for a batch of images.
    pub fn predict_labels(&self, inputs: &Tensor<S>) -> Result<Vec<usize>> {
        let logits = self.forward_logits(inputs)?;
        Ok((0..logits.outer_len()).map(|i| argmax(logits.row(i))).collect())
    }
}

/// Top-1 accuracy on a labeled set, evaluated in fixed-size chunks to bound
/// scratch memory.
pub fn accuracy<S: Scalar>(
    network: &Network<S>,
    images: &Tensor<S>,
    labels: &[u8],
    chunk: usize,
) -> Result<f64> {
    let n = images.outer_len();
    if n != labels.len() || n == 0 {
        return Err(Error::InvalidTensor(format!("{n} images vs {} labels", labels.len())));
    }
    let width: usize = images.shape()[1..].iter().product();
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let part = Tensor::new(
            vec![m, width],
            images.data()[start * width..(start + m) * width].to_vec(),
        )?;
        let predictions = network.predict_labels(&part)?;
        correct += predictions
            .iter()
            .zip(&labels[start..start + m])
            .filter(|(p, l)| **p == **l as usize)
            .count();
        start += m;
    }
    Ok(correct as f64 / n as f64)
}
