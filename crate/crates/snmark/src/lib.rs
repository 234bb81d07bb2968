//! Serial-number watermarking for neural networks.
//!
//! The toolkit trains a small convolutional classifier that simultaneously
//! learns a second, owner-secret task: producing a cryptographically backed
//! serial number on a hidden trigger set. Ownership of a deployed model can
//! then be checked over a black-box prediction API and validated against a
//! certification-authority registry, and the embedded serial number survives
//! magnitude pruning.
//!
//! The crate splits into:
//!
//! - [`tensor`], [`layer`], [`network`], [`loss`], [`optim`]: a compact CPU
//!   engine for 28×28 grayscale classifiers (conv/pool/dense, two loss heads,
//!   SGD-momentum and Adam), bitwise deterministic for a fixed seed.
//! - [`zoo`]: the evaluated architectures and the function-preserving
//!   widen/deepen transfers plus their random baselines.
//! - [`crypto`]: trapdoor-based serial-number generation and verification,
//!   and the registry that binds serials to owners.
//! - [`watermark`]: trigger sets, serial↔target encoding, the alternating
//!   embedding loop, and extraction.
//! - [`prune`]: magnitude pruning with a gradual sparsity ramp and fine-tune.
//! - [`service`]: a black-box prediction endpoint, the remote ownership
//!   verifier, and forgery-attack simulators.
//! - [`mnist`], [`checkpoint`], [`experiments`]: data ingestion, bit-exact
//!   model persistence, and the experiment harness behind the CLI.
//!
//! See the `examples/` directory for runnable walkthroughs of each piece.

pub mod checkpoint;
pub mod crypto;
pub mod error;
pub mod experiments;
pub mod layer;
pub mod loss;
pub mod mnist;
pub mod network;
pub mod optim;
pub mod prune;
pub mod rng;
pub mod service;
pub mod tensor;
pub mod watermark;
pub mod zoo;

pub use error::{Error, Result};
pub use network::{Batch, BatchTargets, LossKind, Network};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod testdata {
    use crate::rng;
    use crate::tensor::Tensor;
    use rand::Rng;

    /// Synthetic stand-in for digit data: class c paints a vertical bar at a
    /// class-specific column. Structured, so it does not collide with
    /// noise-like trigger images.
    pub fn bar_images(n: usize, seed: u64) -> (Tensor<f32>, Vec<u8>) {
        let mut rng = rng::stream(seed, "bar-images");
        let mut images = Tensor::zeros(vec![n, 784]);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 10) as u8;
            let col = 3 + 2 * class as usize;
            for row in 4..24 {
                for dc in 0..2 {
                    images.data_mut()[i * 784 + row * 28 + col + dc] = 1.0;
                }
            }
            for px in images.data_mut()[i * 784..(i + 1) * 784].iter_mut() {
                *px = (*px + rng.gen_range(0.0..0.05f32)).min(1.0);
            }
            labels.push(class);
        }
        (images, labels)
    }
}
