//! Checkpoint serialization.
//!
//! A checkpoint is a single file: a plain-text manifest followed by a flat
//! little-endian 32-bit-float payload. The manifest lists the network spec,
//! the optimizer hyperparameters (when training state is embedded), and one
//! line per tensor with its shape and byte offset into the payload:
//!
//! ```text
//! pepper checkpoint v1
//! [spec]
//! kind = detector
//! depth = 7
//! ...
//! [params]
//! conv0.weight = 32x1x3x3 @ 0
//! conv0.bias = 32 @ 1152
//! ...
//! [payload]
//! bytes = 186500
//! <raw little-endian f32 bytes>
//! ```
//!
//! Optimizer moment buffers ride along under reserved `optimizer.*` names,
//! so a resumed run continues from the exact training state. Floating
//! hyperparameters are written with Rust's shortest round-trip formatting,
//! which re-parses to the identical bits; the payload is bit-exact by
//! construction.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{param_defs, NetworkSpec, NetworkState};
use crate::optim::{AdamConfig, Optimizer, SgdConfig};
use crate::tensor::Tensor;

const MAGIC: &str = "pepper checkpoint v1";

/// Optimizer state as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd {
        cfg: SgdConfig,
        velocity: Vec<Tensor<f32>>,
    },
    Adam {
        cfg: AdamConfig,
        t: u64,
        m: Vec<Tensor<f32>>,
        v: Vec<Tensor<f32>>,
    },
}

impl OptimizerState {
    pub fn capture(opt: &Optimizer<f32>) -> Self {
        match opt {
            Optimizer::Sgd(s) => OptimizerState::Sgd {
                cfg: *s.config(),
                velocity: s.velocity().to_vec(),
            },
            Optimizer::Adam(a) => {
                let (m, v) = a.moments();
                OptimizerState::Adam {
                    cfg: *a.config(),
                    t: a.step_count(),
                    m: m.to_vec(),
                    v: v.to_vec(),
                }
            }
        }
    }

    pub fn into_optimizer(self) -> Result<Optimizer<f32>> {
        Ok(match self {
            OptimizerState::Sgd { cfg, velocity } => {
                Optimizer::Sgd(crate::optim::Sgd::from_parts(cfg, velocity)?)
            }
            OptimizerState::Adam { cfg, t, m, v } => {
                Optimizer::Adam(crate::optim::Adam::from_parts(cfg, t, m, v)?)
            }
        })
    }
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub state: NetworkState<f32>,
    pub optimizer: Option<OptimizerState>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, state: NetworkState<f32>) -> Self {
        Checkpoint {
            spec,
            state,
            optimizer: None,
            epoch: 0,
        }
    }
}

/// Write a checkpoint file.
pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (name, t) in ckpt.state.iter() {
        tensors.push((name.to_string(), t));
    }
    match &ckpt.optimizer {
        Some(OptimizerState::Sgd { velocity, .. }) => {
            for (name, t) in ckpt.state.names().iter().zip(velocity) {
                tensors.push((format!("optimizer.v.{name}"), t));
            }
        }
        Some(OptimizerState::Adam { m, v, .. }) => {
            for (name, t) in ckpt.state.names().iter().zip(m) {
                tensors.push((format!("optimizer.m.{name}"), t));
            }
            for (name, t) in ckpt.state.names().iter().zip(v) {
                tensors.push((format!("optimizer.v.{name}"), t));
            }
        }
        None => {}
    }

    let mut manifest = String::new();
    manifest.push_str(MAGIC);
    manifest.push('\n');
    manifest.push_str("[spec]\n");
    match ckpt.spec {
        NetworkSpec::Detector { depth, width, seed } => {
            manifest.push_str("kind = detector\n");
            manifest.push_str(&format!("depth = {depth}\n"));
            manifest.push_str(&format!("width = {width}\n"));
            manifest.push_str(&format!("seed = {seed}\n"));
        }
        NetworkSpec::Drunet {
            base_channels,
            scales,
            res_blocks,
            seed,
        } => {
            manifest.push_str("kind = drunet\n");
            manifest.push_str(&format!("base_channels = {base_channels}\n"));
            manifest.push_str(&format!("scales = {scales}\n"));
            manifest.push_str(&format!("res_blocks = {res_blocks}\n"));
            manifest.push_str(&format!("seed = {seed}\n"));
        }
    }
    manifest.push_str(&format!("epoch = {}\n", ckpt.epoch));

    match &ckpt.optimizer {
        Some(OptimizerState::Sgd { cfg, .. }) => {
            manifest.push_str("[optimizer]\n");
            manifest.push_str("kind = sgd\n");
            manifest.push_str(&format!("lr = {}\n", cfg.lr));
            manifest.push_str(&format!("momentum = {}\n", cfg.momentum));
            manifest.push_str(&format!("dampening = {}\n", cfg.dampening));
            manifest.push_str(&format!("weight_decay = {}\n", cfg.weight_decay));
            manifest.push_str(&format!("nesterov = {}\n", cfg.nesterov));
        }
        Some(OptimizerState::Adam { cfg, t, .. }) => {
            manifest.push_str("[optimizer]\n");
            manifest.push_str("kind = adam\n");
            manifest.push_str(&format!("lr = {}\n", cfg.lr));
            manifest.push_str(&format!("beta1 = {}\n", cfg.beta1));
            manifest.push_str(&format!("beta2 = {}\n", cfg.beta2));
            manifest.push_str(&format!("epsilon = {}\n", cfg.epsilon));
            manifest.push_str(&format!("t = {t}\n"));
        }
        None => {}
    }

    manifest.push_str("[params]\n");
    let mut payload: Vec<u8> = Vec::new();
    for (name, tensor) in &tensors {
        let shape = tensor
            .shape()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("x");
        manifest.push_str(&format!("{name} = {shape} @ {}\n", payload.len()));
        for &v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    manifest.push_str("[payload]\n");
    manifest.push_str(&format!("bytes = {}\n", payload.len()));

    let mut file = manifest.into_bytes();
    file.extend_from_slice(&payload);
    fs::write(path, file).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a checkpoint file, validating the manifest against the spec's
/// canonical parameter schedule.
pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(display.clone(), e))?;
    parse(&bytes).map_err(|reason| Error::format(display, reason))
}

fn parse(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    // Split manifest from payload: the manifest ends after the line
    // following "[payload]".
    let mut pos = 0usize;
    let mut section = String::new();
    let mut spec_fields: Vec<(String, String)> = Vec::new();
    let mut opt_fields: Vec<(String, String)> = Vec::new();
    let mut params: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut payload_bytes: Option<usize> = None;
    let mut first = true;

    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or("manifest line without newline")?;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| "manifest is not UTF-8")?
            .trim()
            .to_string();
        pos = end + 1;

        if first {
            if line != MAGIC {
                return Err(format!("bad magic line {line:?}"));
            }
            first = false;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .ok_or_else(|| format!("malformed manifest line {line:?}"))?;
        match section.as_str() {
            "spec" => spec_fields.push((key, value)),
            "optimizer" => opt_fields.push((key, value)),
            "params" => {
                let (shape_part, offset_part) = value
                    .split_once('@')
                    .ok_or_else(|| format!("param line missing offset: {line:?}"))?;
                let shape = shape_part
                    .trim()
                    .split('x')
                    .map(|d| d.parse::<usize>().map_err(|e| format!("bad shape: {e}")))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let offset = offset_part
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad offset: {e}"))?;
                params.push((key, shape, offset));
            }
            "payload" => {
                if key == "bytes" {
                    payload_bytes = Some(
                        value
                            .parse()
                            .map_err(|e| format!("bad payload size: {e}"))?,
                    );
                    break; // raw payload follows immediately
                }
                return Err(format!("unexpected payload key {key:?}"));
            }
            other => return Err(format!("unknown manifest section {other:?}")),
        }
    }

    let payload_len = payload_bytes.ok_or("missing [payload] section")?;
    let payload = &bytes[pos..];
    if payload.len() != payload_len {
        return Err(format!(
            "payload length mismatch: manifest says {payload_len}, file holds {}",
            payload.len()
        ));
    }

    let get = |fields: &[(String, String)], key: &str| -> std::result::Result<String, String> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| format!("missing field {key:?}"))
    };

    let kind = get(&spec_fields, "kind")?;
    let seed: u64 = get(&spec_fields, "seed")?
        .parse()
        .map_err(|e| format!("bad seed: {e}"))?;
    let spec = match kind.as_str() {
        "detector" => NetworkSpec::detector(
            get(&spec_fields, "depth")?
                .parse()
                .map_err(|e| format!("bad depth: {e}"))?,
            get(&spec_fields, "width")?
                .parse()
                .map_err(|e| format!("bad width: {e}"))?,
            seed,
        ),
        "drunet" => NetworkSpec::drunet(
            get(&spec_fields, "base_channels")?
                .parse()
                .map_err(|e| format!("bad base_channels: {e}"))?,
            get(&spec_fields, "scales")?
                .parse()
                .map_err(|e| format!("bad scales: {e}"))?,
            get(&spec_fields, "res_blocks")?
                .parse()
                .map_err(|e| format!("bad res_blocks: {e}"))?,
            seed,
        ),
        other => return Err(format!("unknown network kind {other:?}")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    let epoch: usize = get(&spec_fields, "epoch")
        .unwrap_or_else(|_| "0".into())
        .parse()
        .map_err(|e| format!("bad epoch: {e}"))?;

    let read_tensor =
        |shape: &[usize], offset: usize| -> std::result::Result<Tensor<f32>, String> {
            let numel: usize = shape.iter().product();
            let nbytes = numel * 4;
            let end = offset
                .checked_add(nbytes)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| format!("tensor at offset {offset} overruns the payload"))?;
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(shape.to_vec(), data).map_err(|e| e.to_string())
        };

    // Network parameters must match the spec's canonical schedule.
    let defs = param_defs(&spec);
    let mut names = Vec::with_capacity(defs.len());
    let mut tensors = Vec::with_capacity(defs.len());
    for def in &defs {
        let (_, shape, offset) = params
            .iter()
            .find(|(n, _, _)| *n == def.name)
            .ok_or_else(|| format!("checkpoint is missing parameter {:?}", def.name))?;
        if *shape != def.shape {
            return Err(format!(
                "parameter {:?} has shape {:?}, spec requires {:?}",
                def.name, shape, def.shape
            ));
        }
        names.push(def.name.clone());
        tensors.push(read_tensor(shape, *offset)?);
    }
    let state = NetworkState::from_parts(names, tensors).map_err(|e| e.to_string())?;

    let lookup_moments = |prefix: &str| -> std::result::Result<Vec<Tensor<f32>>, String> {
        defs.iter()
            .map(|def| {
                let full = format!("{prefix}{}", def.name);
                let (_, shape, offset) = params
                    .iter()
                    .find(|(n, _, _)| *n == full)
                    .ok_or_else(|| format!("checkpoint is missing optimizer tensor {full:?}"))?;
                read_tensor(shape, *offset)
            })
            .collect()
    };

    let optimizer = if opt_fields.is_empty() {
        None
    } else {
        let parse_f64 = |key: &str| -> std::result::Result<f64, String> {
            get(&opt_fields, key)?
                .parse::<f64>()
                .map_err(|e| format!("bad optimizer {key}: {e}"))
        };
        match get(&opt_fields, "kind")?.as_str() {
            "sgd" => Some(OptimizerState::Sgd {
                cfg: SgdConfig {
                    lr: parse_f64("lr")?,
                    momentum: parse_f64("momentum")?,
                    dampening: parse_f64("dampening")?,
                    weight_decay: parse_f64("weight_decay")?,
                    nesterov: get(&opt_fields, "nesterov")? == "true",
                },
                velocity: lookup_moments("optimizer.v.")?,
            }),
            "adam" => Some(OptimizerState::Adam {
                cfg: AdamConfig {
                    lr: parse_f64("lr")?,
                    beta1: parse_f64("beta1")?,
                    beta2: parse_f64("beta2")?,
                    epsilon: parse_f64("epsilon")?,
                },
                t: get(&opt_fields, "t")?
                    .parse()
                    .map_err(|e| format!("bad optimizer t: {e}"))?,
                m: lookup_moments("optimizer.m.")?,
                v: lookup_moments("optimizer.v.")?,
            }),
            other => return Err(format!("unknown optimizer kind {other:?}")),
        }
    };

    Ok(Checkpoint {
        spec,
        state,
        optimizer,
        epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use crate::optim::Adam;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("pepper_ckpt_{tag}"));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = NetworkSpec::detector(3, 4, 77);
        let state: NetworkState<f32> = init_params(&spec);
        let path = tmpdir("roundtrip").join("det.ckpt");
        save(&Checkpoint::new(spec, state.clone()), &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.spec, spec);
        assert_eq!(loaded.state, state);
        assert!(loaded.optimizer.is_none());
    }

    #[test]
    fn optimizer_state_rides_along() {
        let spec = NetworkSpec::drunet(4, 2, 1, 5);
        let mut state: NetworkState<f32> = init_params(&spec);
        let mut adam = Adam::new(AdamConfig {
            lr: 3e-4,
            ..AdamConfig::default()
        })
        .unwrap();
        // A couple of steps so the moments are nonzero.
        for _ in 0..3 {
            let grads: Vec<Tensor<f32>> = state
                .tensors()
                .iter()
                .map(|t| Tensor::full(t.shape(), 0.01))
                .collect();
            let mut params: Vec<Tensor<f32>> = state.tensors().to_vec();
            adam.step(&mut params, &grads).unwrap();
            for (dst, src) in state.tensors_mut().iter_mut().zip(params) {
                *dst = src;
            }
        }

        let opt = Optimizer::Adam(adam);
        let mut ckpt = Checkpoint::new(spec, state.clone());
        ckpt.optimizer = Some(OptimizerState::capture(&opt));
        ckpt.epoch = 12;
        let path = tmpdir("optstate").join("dru.ckpt");
        save(&ckpt, &path).unwrap();

        let loaded = load(&path).unwrap();
        assert_eq!(loaded.epoch, 12);
        assert_eq!(loaded.state, state);
        let Some(OptimizerState::Adam { cfg, t, m, v }) = loaded.optimizer else {
            panic!("expected adam state");
        };
        assert_eq!(cfg.lr, 3e-4);
        assert_eq!(t, 3);
        assert_eq!(m.len(), state.len());
        assert_eq!(v.len(), state.len());
        let Some(OptimizerState::Adam { m: m0, .. }) = Some(OptimizerState::capture(&opt)) else {
            unreachable!()
        };
        assert_eq!(m, m0);
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let spec = NetworkSpec::detector(2, 2, 1);
        let state: NetworkState<f32> = init_params(&spec);
        let path = tmpdir("corrupt").join("det.ckpt");
        save(&Checkpoint::new(spec, state), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("payload length"), "{err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let path = tmpdir("magic").join("bad.ckpt");
        fs::write(&path, b"not a checkpoint\n").unwrap();
        assert!(load(&path).is_err());
    }
}
