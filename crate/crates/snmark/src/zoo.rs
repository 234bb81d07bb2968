//! The evaluated model family: the teacher, the widened and deepened student
//! transfers, and their randomly initialized baselines.
//!
//! Widen/deepen follow the standard function-preserving construction:
//! replicated units are picked by a random mapping with replacement and their
//! outgoing weights divided by the replication count; inserted layers start
//! as identities (center-one 3×3 kernels, identity matrices), which is exact
//! on the nonnegative activations our ReLU layers produce.

use crate::error::{Error, Result};
use crate::layer::{LayerSpec, KERNEL};
use crate::network::{Network, Param};
use crate::rng;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Base widths: conv filters and hidden dense units of the teacher.
pub const TEACHER_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchitectureId {
    Teacher,
    Wider,
    Deeper,
}

impl ArchitectureId {
    /// Layer stack at full width.
    pub fn layers(&self) -> Vec<LayerSpec> {
        self.layers_scaled(1)
    }

    /// Layer stack with every hidden width divided by `divisor` (the reduced
    /// profile used by quick CI runs keeps the same shape relationships).
    pub fn layers_scaled(&self, divisor: usize) -> Vec<LayerSpec> {
        let base = TEACHER_WIDTH / divisor;
        let wide = 2 * base;
        match self {
            ArchitectureId::Teacher => vec![
                LayerSpec::Conv2d { filters: base },
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d { filters: base },
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::DenseRelu { width: base },
                LayerSpec::Dense { width: 10 },
            ],
            ArchitectureId::Wider => vec![
                LayerSpec::Conv2d { filters: wide },
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d { filters: base },
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::DenseRelu { width: wide },
                LayerSpec::Dense { width: 10 },
            ],
            ArchitectureId::Deeper => vec![
                LayerSpec::Conv2d { filters: base },
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d { filters: base },
                LayerSpec::Conv2d { filters: base },
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::DenseRelu { width: base },
                LayerSpec::DenseRelu { width: base },
                LayerSpec::Dense { width: 10 },
            ],
        }
    }
}

/// How one widened layer maps new units onto teacher units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitMap {
    /// Index of the widened layer in the student stack.
    pub layer: usize,
    /// new unit index -> source unit index
    pub map: Vec<usize>,
    /// how many new units replicate each source unit
    pub counts: Vec<usize>,
}

impl UnitMap {
    fn random(layer: usize, old: usize, new: usize, rng: &mut rand_chacha::ChaCha20Rng) -> Self {
        let mut map = Vec::with_capacity(new);
        let mut counts = vec![0usize; old];
        for j in 0..new {
            let src = if j < old { j } else { rng.gen_range(0..old) };
            counts[src] += 1;
            map.push(src);
        }
        UnitMap { layer, map, counts }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidenMap {
    pub layers: Vec<UnitMap>,
}

/// Fresh network for the given architecture.
pub fn build<S: Scalar>(arch: ArchitectureId, seed: u64) -> Network<S> {
    build_scaled(arch, 1, seed)
}

pub fn build_scaled<S: Scalar>(arch: ArchitectureId, divisor: usize, seed: u64) -> Network<S> {
    let mut rng = rng::stream(seed, &format!("init:{arch:?}:{divisor}"));
    Network::build(arch.layers_scaled(divisor), &mut rng).expect("architecture tables are valid")
}

fn expect_arch<S: Scalar>(net: &Network<S>, want: ArchitectureId) -> Result<usize> {
    for div in [1, 2, 4, 8] {
        if net.specs() == want.layers_scaled(div).as_slice() {
            return Ok(div);
        }
    }
    Err(Error::Config(format!(
        "network does not have the {want:?} architecture (got {:?})",
        net.specs()
    )))
}

/// Duplicates columns of a unit-major weight pair: `w_in` maps features onto
/// units (unit axis innermost), `w_out` consumes units on its input axis with
/// `group` consecutive entries per unit. Outgoing weights are divided by each
/// source's replication count, which keeps the function intact.
fn widen_pair<S: Scalar>(
    w_in: &Tensor<S>,
    b_in: &[S],
    w_out: &Tensor<S>,
    unit_map: &UnitMap,
    group: usize,
) -> (Tensor<S>, Vec<S>, Tensor<S>) {
    let old = unit_map.counts.len();
    let new = unit_map.map.len();

    // incoming weights: unit axis is the last of w_in
    let rows = w_in.len() / old;
    let mut win_new = Tensor::zeros(
        w_in.shape()
            .iter()
            .map(|&d| if d == old { new } else { d })
            .collect(),
    );
    for r in 0..rows {
        for (j, &src) in unit_map.map.iter().enumerate() {
            win_new.data_mut()[r * new + j] = w_in.data()[r * old + src];
        }
    }
    let b_new: Vec<S> = unit_map.map.iter().map(|&src| b_in[src]).collect();

    // outgoing weights: unit axis has `group` consecutive values per unit,
    // repeated over leading blocks
    let block = old * group;
    let blocks = w_out.len() / block;
    let mut wout_shape: Vec<usize> = w_out.shape().to_vec();
    for d in wout_shape.iter_mut() {
        if *d == old {
            *d = new;
            break;
        }
    }
    let mut wout_new = Tensor::zeros(wout_shape);
    for bl in 0..blocks {
        for (j, &src) in unit_map.map.iter().enumerate() {
            let scale = S::from_f64(1.0 / unit_map.counts[src] as f64);
            for g in 0..group {
                wout_new.data_mut()[bl * new * group + j * group + g] =
                    w_out.data()[bl * block + src * group + g] * scale;
            }
        }
    }
    (win_new, b_new, wout_new)
}

/// Widens a teacher into the wider student, preserving its function.
///
/// The first convolution and the hidden dense layer double in width; new
/// units replicate random source units and the next layer's weights are
/// rescaled by the replication counts.
pub fn net2wider<S: Scalar>(teacher: &Network<S>, seed: u64) -> Result<(Network<S>, WidenMap)> {
    let div = expect_arch(teacher, ArchitectureId::Teacher)?;
    let base = TEACHER_WIDTH / div;
    let mut rng = rng::stream(seed, "net2wider");
    let conv_map = UnitMap::random(0, base, 2 * base, &mut rng);
    let dense_map = UnitMap::random(5, base, 2 * base, &mut rng);

    let p = teacher.params();
    let conv1 = p[0].as_ref().unwrap();
    let conv2 = p[2].as_ref().unwrap();
    let fc1 = p[5].as_ref().unwrap();
    let fc2 = p[6].as_ref().unwrap();

    // conv1's outgoing axis is conv2's input-channel axis: `base` filters
    // per channel entry, 9 spatial blocks of (cin × filters)
    let (c1w, c1b, c2w) = widen_pair(&conv1.weight, &conv1.bias, &conv2.weight, &conv_map, base);
    let (f1w, f1b, f2w) = widen_pair(&fc1.weight, &fc1.bias, &fc2.weight, &dense_map, 10);

    let params = vec![
        Some(Param { weight: c1w, bias: c1b, mask: None }),
        None,
        Some(Param { weight: c2w, bias: conv2.bias.clone(), mask: None }),
        None,
        None,
        Some(Param { weight: f1w, bias: f1b, mask: None }),
        Some(Param { weight: f2w, bias: fc2.bias.clone(), mask: None }),
    ];
    let student = Network::from_parts(ArchitectureId::Wider.layers_scaled(div), params)?;
    Ok((student, WidenMap { layers: vec![conv_map, dense_map] }))
}

/// 3×3 identity kernel bank: delta at the center, channel-diagonal.
fn identity_conv<S: Scalar>(channels: usize) -> Tensor<S> {
    let mut w = Tensor::zeros(vec![KERNEL, KERNEL, channels, channels]);
    for c in 0..channels {
        let center = ((KERNEL + 1) * channels + c) * channels + c;
        w.data_mut()[center] = S::one();
    }
    w
}

fn identity_dense<S: Scalar>(width: usize) -> Tensor<S> {
    let mut w = Tensor::zeros(vec![width, width]);
    for i in 0..width {
        w.data_mut()[i * width + i] = S::one();
    }
    w
}

/// Deepens a teacher into the deeper student by inserting identity layers:
/// a center-one convolution after the second conv and an identity dense
/// layer after the hidden dense. Outputs are unchanged because both insert
/// behind ReLU activations, which are nonnegative.
pub fn net2deeper<S: Scalar>(teacher: &Network<S>) -> Result<Network<S>> {
    let div = expect_arch(teacher, ArchitectureId::Teacher)?;
    let base = TEACHER_WIDTH / div;
    let p = teacher.params();
    let params = vec![
        p[0].clone(),
        None,
        p[2].clone(),
        Some(Param { weight: identity_conv(base), bias: vec![S::zero(); base], mask: None }),
        None,
        None,
        p[5].clone(),
        Some(Param { weight: identity_dense(base), bias: vec![S::zero(); base], mask: None }),
        p[6].clone(),
    ];
    Network::from_parts(ArchitectureId::Deeper.layers_scaled(div), params)
}

/// Baseline for the wider student: teacher weights where shapes overlap,
/// fresh random weights elsewhere. Not function-preserving.
pub fn random_pad<S: Scalar>(teacher: &Network<S>, seed: u64) -> Result<Network<S>> {
    let div = expect_arch(teacher, ArchitectureId::Teacher)?;
    let base = TEACHER_WIDTH / div;
    let mut student: Network<S> = build_scaled(ArchitectureId::Wider, div, seed);
    let tp = teacher.params();

    {
        let sp = student.params_mut();
        // conv1: copy the first `base` filters (unit axis innermost)
        let (t, s) = (tp[0].as_ref().unwrap(), sp[0].as_mut().unwrap());
        for r in 0..t.weight.len() / base {
            for j in 0..base {
                s.weight.data_mut()[r * 2 * base + j] = t.weight.data()[r * base + j];
            }
        }
        s.bias[..base].copy_from_slice(&t.bias);

        // conv2: copy the first `base` input channels of each spatial block
        let (t, s) = (tp[2].as_ref().unwrap(), sp[2].as_mut().unwrap());
        for block in 0..KERNEL * KERNEL {
            for ci in 0..base {
                for f in 0..base {
                    s.weight.data_mut()[(block * 2 * base + ci) * base + f] =
                        t.weight.data()[(block * base + ci) * base + f];
                }
            }
        }
        s.bias.copy_from_slice(&t.bias);

        // fc1: copy the first `base` columns
        let (t, s) = (tp[5].as_ref().unwrap(), sp[5].as_mut().unwrap());
        let rows = t.weight.shape()[0];
        for r in 0..rows {
            for j in 0..base {
                s.weight.data_mut()[r * 2 * base + j] = t.weight.data()[r * base + j];
            }
        }
        s.bias[..base].copy_from_slice(&t.bias);

        // fc2: copy the first `base` rows
        let (t, s) = (tp[6].as_ref().unwrap(), sp[6].as_mut().unwrap());
        for r in 0..base {
            for j in 0..10 {
                s.weight.data_mut()[r * 10 + j] = t.weight.data()[r * 10 + j];
            }
        }
        s.bias.copy_from_slice(&t.bias);
    }
    Ok(student)
}

/// Baseline for the deeper student: everything freshly initialized.
pub fn random_init<S: Scalar>(arch: ArchitectureId, seed: u64) -> Network<S> {
    build(arch, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::conv3x3_forward;

    fn rand_inputs(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = rng::stream(seed, "test-inputs");
        Tensor::from_fn(vec![n, 28 * 28], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn architecture_tables() {
        use LayerSpec::*;
        assert_eq!(
            ArchitectureId::Teacher.layers(),
            vec![
                Conv2d { filters: 64 },
                MaxPool2d,
                Conv2d { filters: 64 },
                MaxPool2d,
                Flatten,
                DenseRelu { width: 64 },
                Dense { width: 10 },
            ]
        );
        let wider = ArchitectureId::Wider.layers();
        assert_eq!(wider[0], Conv2d { filters: 128 });
        assert_eq!(wider[5], DenseRelu { width: 128 });
        let deeper = ArchitectureId::Deeper.layers();
        assert_eq!(deeper[2], Conv2d { filters: 64 });
        assert_eq!(deeper[3], Conv2d { filters: 64 });
        assert_eq!(deeper[6], DenseRelu { width: 64 });
        assert_eq!(deeper[7], DenseRelu { width: 64 });

        // flatten width is 3136 = 7*7*64 at full width
        let net: Network<f32> = build(ArchitectureId::Teacher, 0);
        assert_eq!(net.feature_shapes()[5], crate::layer::FeatureShape::Flat(3136));
    }

    #[test]
    fn widen_toy_dense_pair_matches_direct_forward() {
        // 5 -> 8 units -> 3 outputs, widened to 12 units, checked in f64
        // against a brute-force forward pass.
        let mut rng = rng::stream(9, "toy-widen");
        let w1 = Tensor::<f64>::from_fn(vec![5, 8], |_| rng.gen_range(-1.0..1.0));
        let b1: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w2 = Tensor::<f64>::from_fn(vec![8, 3], |_| rng.gen_range(-1.0..1.0));
        let map = UnitMap::random(0, 8, 12, &mut rng);
        let (w1n, b1n, w2n) = widen_pair(&w1, &b1, &w2, &map, 3);

        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let forward = |w1: &Tensor<f64>, b1: &[f64], w2: &Tensor<f64>, units: usize| {
            let mut h = vec![0.0; units];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = b1[j];
                for (i, xv) in x.iter().enumerate() {
                    acc += xv * w1.data()[i * units + j];
                }
                *hj = acc.max(0.0);
            }
            let mut out = vec![0.0; 3];
            for (o, ov) in out.iter_mut().enumerate() {
                for (j, hv) in h.iter().enumerate() {
                    *ov += hv * w2.data()[j * 3 + o];
                }
            }
            out
        };
        let before = forward(&w1, &b1, &w2, 8);
        let after = forward(&w1n, &b1n, &w2n, 12);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_conv_preserves_nonnegative_maps() {
        let w = identity_conv::<f32>(3);
        let mut rng = rng::stream(2, "idconv");
        let x: Vec<f32> = (0..6 * 6 * 3).map(|_| rng.gen_range(0.0..2.0)).collect();
        let mut y = vec![0.0f32; 6 * 6 * 3];
        conv3x3_forward(&x, 1, 6, 6, 3, w.data(), &[0.0; 3], 3, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn net2wider_preserves_function() {
        let teacher: Network<f32> = build_scaled(ArchitectureId::Teacher, 4, 7);
        let (student, map) = net2wider(&teacher, 11).unwrap();
        assert_eq!(map.layers.len(), 2);
        assert_eq!(map.layers[0].map.len(), 32);
        assert!(map.layers[0].map.iter().all(|&s| s < 16));
        assert_eq!(map.layers[0].counts.iter().sum::<usize>(), 32);

        let x = rand_inputs(8, 3);
        let t_logits = teacher.forward_logits(&x).unwrap();
        let s_logits = student.forward_logits(&x).unwrap();
        let worst = t_logits
            .data()
            .iter()
            .zip(s_logits.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "logit deviation {worst}");
    }

    #[test]
    fn net2deeper_preserves_function() {
        let teacher: Network<f32> = build_scaled(ArchitectureId::Teacher, 4, 13);
        let student = net2deeper(&teacher).unwrap();
        assert_eq!(student.specs().len(), 9);
        let x = rand_inputs(8, 4);
        let t_logits = teacher.forward_logits(&x).unwrap();
        let s_logits = student.forward_logits(&x).unwrap();
        let worst = t_logits
            .data()
            .iter()
            .zip(s_logits.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "logit deviation {worst}");
    }

    #[test]
    fn deeper_toy_exact_in_f64() {
        let teacher: Network<f64> = build_scaled(ArchitectureId::Teacher, 8, 5);
        let student = net2deeper(&teacher).unwrap();
        let mut rng = rng::stream(6, "toy-deeper");
        let x = Tensor::<f64>::from_fn(vec![2, 28 * 28], |_| rng.gen_range(0.0..1.0));
        let a = teacher.forward_logits(&x).unwrap();
        let b = student.forward_logits(&x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(u, v, "identity insertion must be exact in f64");
        }
    }

    #[test]
    fn random_pad_copies_overlap_and_randomizes_rest() {
        let teacher: Network<f32> = build_scaled(ArchitectureId::Teacher, 4, 21);
        let student = random_pad(&teacher, 22).unwrap();
        let t = teacher.params()[0].as_ref().unwrap();
        let s = student.params()[0].as_ref().unwrap();
        // overlap equals teacher exactly
        for r in 0..9 {
            for j in 0..16 {
                assert_eq!(s.weight.data()[r * 32 + j], t.weight.data()[r * 16 + j]);
            }
        }
        // padding units are fresh draws, nonzero with probability 1
        let pad_nonzero = (0..9)
            .flat_map(|r| (16..32).map(move |j| (r, j)))
            .filter(|&(r, j)| s.weight.data()[r * 32 + j] != 0.0)
            .count();
        assert_eq!(pad_nonzero, 9 * 16);

        // function is not preserved
        let x = rand_inputs(4, 8);
        let a = teacher.forward_logits(&x).unwrap();
        let b = student.forward_logits(&x).unwrap();
        let worst = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0f32, f32::max);
        assert!(worst > 0.01, "random padding should break preservation, worst {worst}");
    }

    #[test]
    fn random_init_seeds_differ() {
        let a: Network<f32> = random_init(ArchitectureId::Deeper, 1);
        let b: Network<f32> = random_init(ArchitectureId::Deeper, 2);
        let c: Network<f32> = random_init(ArchitectureId::Deeper, 3);
        let w = |n: &Network<f32>| n.params()[0].as_ref().unwrap().weight.data().to_vec();
        assert_ne!(w(&a), w(&b));
        assert_ne!(w(&b), w(&c));
        assert_ne!(w(&a), w(&c));
        assert_eq!(a.specs(), ArchitectureId::Deeper.layers().as_slice());
    }
}
