//! Bit-exact model persistence.
//!
//! Layout: `SNCP` magic, u32 version, u64 header length, JSON header
//! (layer specs, per-tensor shapes, metadata), then raw little-endian f32
//! weight/bias payloads in layer order, each followed by its mask bytes when
//! one is present.

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::network::{Network, Param};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"SNCP";
const VERSION: u32 = 1;

/// Run provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub tag: String,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub test_accuracy: Option<f64>,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
    #[serde(default)]
    pub sn_digit_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    weight_shape: Vec<usize>,
    bias_len: usize,
    has_mask: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    specs: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

/// Writes the network and metadata to `path`.
pub fn save(network: &Network<f32>, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let tensors: Vec<TensorEntry> = network
        .params()
        .iter()
        .enumerate()
        .filter_map(|(layer, p)| {
            p.as_ref().map(|p| TensorEntry {
                layer,
                weight_shape: p.weight.shape().to_vec(),
                bias_len: p.bias.len(),
                has_mask: p.mask.is_some(),
            })
        })
        .collect();
    let header = Header { specs: network.specs().to_vec(), tensors, meta: meta.clone() };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())?;
    out.write_all(&header_json)?;
    for p in network.params().iter().flatten() {
        for v in p.weight.data() {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &p.bias {
            out.write_all(&v.to_le_bytes())?;
        }
        if let Some(mask) = &p.mask {
            out.write_all(mask)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_corrupt(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::CorruptCheckpoint(format!("unexpected end of file reading {what}")))
}

fn read_f32s(reader: &mut impl Read, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    read_exact_or_corrupt(reader, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads a checkpoint back into a network plus its metadata.
pub fn load(path: impl AsRef<Path>) -> Result<(Network<f32>, CheckpointMeta)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut reader, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointBadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or_corrupt(&mut reader, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: VERSION });
    }
    let mut len8 = [0u8; 8];
    read_exact_or_corrupt(&mut reader, &mut len8, "header length")?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_json = vec![0u8; header_len];
    read_exact_or_corrupt(&mut reader, &mut header_json, "header")?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad header: {e}")))?;

    let mut params: Vec<Option<Param<f32>>> = vec![None; header.specs.len()];
    for entry in &header.tensors {
        let weight_len: usize = entry.weight_shape.iter().product();
        let weight = Tensor::new(
            entry.weight_shape.clone(),
            read_f32s(&mut reader, weight_len, "weights")?,
        )?;
        let bias = read_f32s(&mut reader, entry.bias_len, "bias")?;
        let mask = if entry.has_mask {
            let mut mask = vec![0u8; weight_len];
            read_exact_or_corrupt(&mut reader, &mut mask, "mask")?;
            Some(mask)
        } else {
            None
        };
        if entry.layer >= params.len() {
            return Err(Error::CorruptCheckpoint(format!("tensor for layer {} out of range", entry.layer)));
        }
        params[entry.layer] = Some(Param { weight, bias, mask });
    }
    let network = Network::from_parts(header.specs, params)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok((network, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_scaled, ArchitectureId};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.snck");
        let mut net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 77);
        // attach a mask so that path is covered
        let len = net.params()[0].as_ref().unwrap().weight.len();
        net.params_mut()[0].as_mut().unwrap().mask = Some(vec![1; len]);
        let meta = CheckpointMeta {
            tag: "unit".into(),
            seed: 77,
            epoch: 3,
            test_accuracy: Some(0.5),
            ..Default::default()
        };
        save(&net, &meta, &path).unwrap();
        let (loaded, meta2) = load(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(loaded.specs(), net.specs());
        for (a, b) in loaded.params().iter().zip(net.params()) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    // bitwise comparison
                    for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                        assert_eq!(x.to_bits(), y.to_bits());
                    }
                    assert_eq!(a.bias, b.bias);
                    assert_eq!(a.mask, b.mask);
                }
                (None, None) => {}
                _ => panic!("param presence mismatch"),
            }
        }

        // forward outputs identical
        let x = Tensor::from_fn(vec![2, 784], |i| (i % 97) as f32 / 97.0);
        assert_eq!(
            net.forward_logits(&x).unwrap().data(),
            loaded.forward_logits(&x).unwrap().data()
        );
    }

    #[test]
    fn corrupt_and_mismatched_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snck");

        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(Error::CheckpointBadMagic)));

        // right magic, wrong version
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(Error::CheckpointVersion { found: 99, expected: 1 })
        ));

        // truncated payload
        let net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 1);
        save(&net, &CheckpointMeta::default(), &path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 64]).unwrap();
        assert!(matches!(load(&path), Err(Error::CorruptCheckpoint(_))));
    }
}
