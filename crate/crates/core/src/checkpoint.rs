//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "AEGCKPT\0"
//! version  u32
//! hlen     u32      length of the JSON header
//! header   hlen     {"kind", "architecture", "fingerprint", "tensors": [{name, shape}], "optimizer"}
//! tensors           f32 data of each tensor in header order
//! moments           optional: first then second Adam moment per trainable parameter
//! checksum 32 bytes SHA-256 of everything above
//! ```
//!
//! The header fingerprint is [`Network::fingerprint`] and is recomputed on
//! load; the trailing checksum catches corruption anywhere in the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{self, hex_string, ArchitectureConfig, NetKind, Network};
use crate::optim::{AdamState, OptimizerConfig};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AEGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    config: OptimizerConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: NetKind,
    architecture: ArchitectureConfig,
    fingerprint: String,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

/// A restored network together with its optimizer state, if one was saved.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<AdamState>,
}

pub fn encode(network: &Network, optimizer: Option<&AdamState>) -> Vec<u8> {
    let named = network.named_tensors();
    let header = Header {
        kind: network.kind,
        architecture: network.config,
        fingerprint: network.fingerprint_hex(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        optimizer: optimizer.map(|o| OptimizerEntry {
            config: o.config,
            step: o.step,
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        out.extend_from_slice(&t.to_le_bytes());
    }
    if let Some(o) = optimizer {
        for t in o.first_moment.iter().chain(&o.second_moment) {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    let checksum: [u8; 32] = Sha256::digest(&out).into();
    out.extend_from_slice(&checksum);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> std::result::Result<Tensor, String> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| format!("{what}: {e}"))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    if bytes.len() < MAGIC.len() + 8 + 32 {
        return Err(format!("truncated: only {} bytes", bytes.len()));
    }
    let mut cur = Cursor { bytes, pos: MAGIC.len() };
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(format!(
            "format version {version} found, expected version {FORMAT_VERSION}"
        ));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    let hlen = cur.u32("header length")? as usize;
    let json = cur.take(hlen, "header")?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| format!("corrupt header: {e}"))?;
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest.as_slice() != checksum {
        return Err("checksum mismatch: file is truncated or corrupted".into());
    }
    let mut network = models::build(header.kind, &header.architecture, &mut SeededRng::new(0))
        .map_err(|e| format!("invalid architecture in header: {e}"))?;
    let mut named = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let t = cur.tensor(&entry.shape, &entry.name)?;
        named.push((entry.name.clone(), t));
    }
    network.load_named_tensors(&named).map_err(|e| e.to_string())?;
    let actual = network.fingerprint_hex();
    if actual != header.fingerprint {
        return Err(format!(
            "fingerprint mismatch: header {} but tensors hash to {actual}",
            header.fingerprint
        ));
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(entry) => {
            let shapes: Vec<Vec<usize>> = network.params().iter().map(|p| p.shape().to_vec()).collect();
            let mut read = |label: &str| -> std::result::Result<Vec<Tensor>, String> {
                shapes.iter().map(|s| cur.tensor(s, label)).collect()
            };
            let first_moment = read("first moment")?;
            let second_moment = read("second moment")?;
            Some(AdamState {
                config: entry.config,
                first_moment,
                second_moment,
                step: entry.step,
            })
        }
    };
    if cur.pos != body.len() {
        return Err(format!(
            "{} unexpected trailing bytes before checksum",
            body.len() - cur.pos
        ));
    }
    Ok(Checkpoint { network, optimizer })
}

/// Writes atomically: the file appears complete or not at all.
pub fn save_checkpoint(path: impl AsRef<Path>, network: &Network, optimizer: Option<&AdamState>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(network, optimizer)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

/// Loads a network and checks its kind and (optionally) its architecture.
pub fn load_network(path: impl AsRef<Path>, kind: NetKind, architecture: Option<&ArchitectureConfig>) -> Result<Network> {
    let path = path.as_ref();
    let network = load_checkpoint(path)?.network;
    if network.kind != kind {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("holds a {:?}, expected a {kind:?}", network.kind),
        });
    }
    if let Some(expected) = architecture {
        if &network.config != expected {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!(
                    "architecture mismatch: file has {:?}, expected {expected:?}",
                    network.config
                ),
            });
        }
    }
    Ok(network)
}

/// Hex fingerprint of a checkpoint file's network, for manifests.
pub fn file_fingerprint(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex_string(&load_checkpoint(path)?.network.fingerprint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_generator, sample_prior};

    fn sample_network() -> Network {
        let cfg = ArchitectureConfig::new(8, 16, 3, 4);
        let mut net = build_generator(&cfg, &mut SeededRng::new(3)).unwrap();
        for (i, layer) in net.layers.iter_mut().enumerate() {
            if let models::Layer::BatchNorm(bn) = layer {
                bn.running_mean = bn.running_mean.map(|v| v + 0.1 * i as f32);
                bn.tracked = true;
            }
        }
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = sample_network();
        let back = decode(&encode(&net, None)).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.network.fingerprint(), net.fingerprint());
        assert!(back.optimizer.is_none());
        let z = sample_prior(&mut SeededRng::new(1), 2, 8);
        assert_eq!(net.infer(&z).unwrap(), back.network.infer(&z).unwrap());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let net = sample_network();
        let mut opt = AdamState::new(OptimizerConfig::default(), &net.params());
        opt.step = 17;
        opt.first_moment[0] = opt.first_moment[0].map(|_| 0.25);
        let back = decode(&encode(&net, Some(&opt))).unwrap();
        assert_eq!(back.optimizer.unwrap(), opt);
    }

    #[test]
    fn truncation_and_bit_flips_are_rejected() {
        let bytes = encode(&sample_network(), None);
        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut {cut}");
        }
        for pos in [20, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 1;
            assert!(decode(&bad).is_err(), "flip at {pos}");
        }
    }

    #[test]
    fn version_and_architecture_mismatch_name_both() {
        let mut bytes = encode(&sample_network(), None);
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        let msg = decode(&bytes).unwrap_err();
        assert!(msg.contains('9') && msg.contains('1'), "{msg}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_checkpoint(&path, &sample_network(), None).unwrap();
        let other = ArchitectureConfig::new(8, 32, 3, 4);
        let msg = load_network(&path, NetKind::Generator, Some(&other)).unwrap_err().to_string();
        assert!(msg.contains("image_size: 16") && msg.contains("image_size: 32"), "{msg}");
        assert!(load_network(&path, NetKind::Discriminator, None).is_err());
        assert!(load_network(&path, NetKind::Generator, None).is_ok());
        assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
