//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"NSFOLDCK"  u32 version  u64 manifest_len  manifest (JSON)  payload
//! ```
//!
//! The manifest lists, in order, every layer that owns state with the names
//! and shapes of its tensors; NS layers always list their coefficients, also
//! in fixed mode. The payload is those tensors as f64 values in manifest
//! order. A JSON sidecar `<path>.json` stores the network config and the
//! seed, from which the model is rebuilt before the payload is copied in.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{build_network, NetworkConfig};
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::model::Model;
use crate::rng::{self, Stream};

pub const MAGIC: &[u8; 8] = b"NSFOLDCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub kind: String,
    pub params: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: NetworkConfig,
    pub seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Tensors of one layer in checkpoint order.
fn layer_state(layer: &Layer) -> Vec<(&'static str, Vec<usize>, &[f64])> {
    match layer {
        Layer::Ns(ns) => vec![("beta", vec![ns.folds()], ns.beta())],
        other => other
            .params()
            .into_iter()
            .map(|p| (p.name, p.value.shape().to_vec(), p.value.data()))
            .collect(),
    }
}

pub fn manifest(model: &Model) -> Vec<LayerEntry> {
    model
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let params: Vec<TensorEntry> = layer_state(l)
                .into_iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.into(),
                    shape,
                })
                .collect();
            (!params.is_empty()).then(|| LayerEntry {
                layer: i,
                kind: l.kind().into(),
                params,
            })
        })
        .collect()
}

/// Checkpoint bytes for `model` (the sidecar is separate).
pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&manifest(model))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for layer in model.layers() {
        for (_, _, data) in layer_state(layer) {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Writes the checkpoint to `path` and the sidecar to `<path>.json`.
pub fn save_checkpoint(model: &Model, config: &NetworkConfig, seed: u64, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&Sidecar {
        config: config.clone(),
        seed,
    })?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

fn truncated(what: &str, expected: usize, actual: usize) -> Error {
    Error::Length {
        what: what.into(),
        expected,
        actual,
    }
}

/// Copies a checkpoint's payload into `model`, which must have been built
/// from the same config.
pub fn restore_into(model: &mut Model, bytes: &[u8]) -> Result<()> {
    if bytes.len() < 20 {
        return Err(truncated("checkpoint header", 20, bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < mlen {
        return Err(truncated("checkpoint manifest", 20 + mlen, bytes.len()));
    }
    let found: Vec<LayerEntry> = serde_json::from_slice(&body[..mlen])
        .map_err(|e| Error::Format(format!("checkpoint manifest is not valid JSON: {e}")))?;
    let expected = manifest(model);
    if found.len() != expected.len() {
        return Err(Error::CheckpointShape {
            layer: "manifest".into(),
            expected: vec![expected.len()],
            found: vec![found.len()],
        });
    }
    for (e, f) in expected.iter().zip(&found) {
        let label = |name: &str| format!("layer {} ({}) {name}", e.layer, e.kind);
        if e.layer != f.layer || e.kind != f.kind || e.params.len() != f.params.len() {
            return Err(Error::CheckpointShape {
                layer: format!("layer {} ({}), found layer {} ({})", e.layer, e.kind, f.layer, f.kind),
                expected: vec![e.params.len()],
                found: vec![f.params.len()],
            });
        }
        for (ep, fp) in e.params.iter().zip(&f.params) {
            if ep != fp {
                return Err(Error::CheckpointShape {
                    layer: label(&ep.name),
                    expected: ep.shape.clone(),
                    found: fp.shape.clone(),
                });
            }
        }
    }
    let count: usize = expected
        .iter()
        .flat_map(|e| e.params.iter().map(|p| p.shape.iter().product::<usize>()))
        .sum();
    let payload = &body[mlen..];
    if payload.len() != count * 8 {
        return Err(truncated("checkpoint payload", count * 8, payload.len()));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for layer in model.layers_mut() {
        match layer {
            Layer::Ns(ns) => {
                let beta: Vec<f64> = values.by_ref().take(ns.folds()).collect();
                ns.set_beta(&beta)?;
            }
            other => {
                for p in other.params_mut() {
                    for v in p.value.data_mut() {
                        *v = values.next().expect("length checked");
                    }
                }
            }
        }
    }
    Ok(())
}

/// Rebuilds the model described by the sidecar and restores its parameters.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Sidecar)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut model = build_network(&sidecar.config, &mut rng::stream(sidecar.seed, Stream::Init))?;
    restore_into(&mut model, &bytes)?;
    Ok((model, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::nsfold::NsMode;

    #[test]
    fn manifest_lists_fixed_coefficients() {
        let cfg = NetworkConfig::preset(Preset::LeNet5).with_ns(2, NsMode::Fixed, None);
        let m = build_network(&cfg, &mut rng::seeded(0)).unwrap();
        let man = manifest(&m);
        let ns = man.iter().find(|e| e.kind == "ns").unwrap();
        assert_eq!(ns.params[0].shape, vec![2]);
        assert_eq!(man.iter().filter(|e| e.kind == "conv2d").count(), 2);
    }

    #[test]
    fn header_errors() {
        let cfg = NetworkConfig::preset(Preset::LeNet5);
        let mut m = build_network(&cfg, &mut rng::seeded(0)).unwrap();
        let mut bytes = checkpoint_bytes(&m).unwrap();
        assert!(matches!(restore_into(&mut m, &bytes[..10]), Err(Error::Length { .. })));
        bytes[8] = 7;
        assert!(matches!(restore_into(&mut m, &bytes), Err(Error::Version { found: 7, .. })));
        bytes[0] = b'X';
        assert!(matches!(restore_into(&mut m, &bytes), Err(Error::Format(_))));
    }
}
