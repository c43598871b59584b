//! Checkpoint container.
//!
//! Layout: the 8-byte magic `ULCKPT01`, a little-endian `u64` header length,
//! a JSON header, then every tensor's values as little-endian `f64` in header
//! order. The header carries the model config, the training config, the
//! initialization seed and one entry per tensor, so a file is readable
//! without any other state. Values are stored exactly, so a reloaded bundle
//! evaluates bit-for-bit like the one that was saved.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unilat_core::nn::{ModelBundle, ModelConfig, ParamStore};
use unilat_core::train::TrainConfig;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ULCKPT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Params,
    Ema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: Group,
    pub shape: Vec<usize>,
}

/// Values worth reading without parsing the configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub lambda_z0: f64,
    pub bias: Option<f64>,
    pub loss_factor: Option<f64>,
    pub train_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub init_seed: u64,
    pub steps_trained: usize,
    pub summary: Summary,
    pub tensors: Vec<TensorEntry>,
}

impl Header {
    fn payload_len(&self) -> usize {
        self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

fn entries(store: &ParamStore, group: Group) -> impl Iterator<Item = (TensorEntry, &[f64])> {
    store.iter().map(move |(_, name, t)| (TensorEntry { name: name.to_string(), group, shape: t.shape().to_vec() }, t.data()))
}

/// Serialize a bundle to a byte vector.
pub fn to_bytes(bundle: &ModelBundle, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<&[f64]> = Vec::new();
    for (e, d) in entries(&bundle.params, Group::Params).chain(bundle.ema.iter().flat_map(|s| entries(s, Group::Ema))) {
        tensors.push(e);
        payload.push(d);
    }
    let header = Header {
        model: bundle.config().clone(),
        train: train.cloned(),
        init_seed: bundle.seed(),
        steps_trained: bundle.steps_trained,
        summary: Summary {
            lambda_z0: bundle.config().latent.lambda_z0,
            bias: train.map(|t| t.weighting.bias),
            loss_factor: train.map(|t| t.weighting.loss_factor),
            train_seed: train.map(|t| t.seed),
        },
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * header.payload_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for d in payload {
        for v in d {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse a container. `origin` names the source in diagnostics.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(ModelBundle, Header)> {
    let bad = |msg: &str| Error::format(origin, format!("not a valid checkpoint: {msg}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
    let payload = &body[hlen..];
    if payload.len() != 8 * header.payload_len() {
        return Err(bad("payload length does not match the header"));
    }

    let mut bundle = ModelBundle::new(header.model.clone(), header.init_seed)?;
    bundle.steps_trained = header.steps_trained;
    let has_ema = header.tensors.iter().any(|t| t.group == Group::Ema);
    let mut ema = if has_ema { Some(bundle.params.clone()) } else { None };
    let mut seen = [0usize; 2];
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in &header.tensors {
        let store = match t.group {
            Group::Params => &mut bundle.params,
            Group::Ema => ema.as_mut().expect("ema present"),
        };
        let id = store.find(&t.name).ok_or_else(|| bad(&format!("unknown tensor `{}`", t.name)))?;
        let dst = store.get_mut(id);
        if dst.shape() != t.shape.as_slice() {
            return Err(bad(&format!("tensor `{}` has shape {:?}, model expects {:?}", t.name, t.shape, dst.shape())));
        }
        for v in dst.data_mut() {
            *v = values.next().expect("length checked");
        }
        seen[t.group as usize] += 1;
    }
    if seen[0] != bundle.params.len() || (has_ema && seen[1] != bundle.params.len()) {
        return Err(bad("checkpoint does not cover every parameter"));
    }
    bundle.ema = ema;
    Ok((bundle, header))
}

pub fn save(path: &Path, bundle: &ModelBundle, train: Option<&TrainConfig>) -> Result<()> {
    let bytes = to_bytes(bundle, train)?;
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(Error::io(&tmp))?;
    f.write_all(&bytes).map_err(Error::io(&tmp))?;
    f.sync_all().map_err(Error::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<(ModelBundle, Header)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(Error::io(path))?;
    from_bytes(&bytes, path)
}
