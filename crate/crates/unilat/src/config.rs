//! The run configuration and its text format.
//!
//! The format is flat `section.key = value` lines with TOML value syntax, so
//! every line can be read on its own and diffs stay one line per change:
//!
//! ```text
//! model.latent.lambda_z0 = 5.0
//! train.weighting.loss_factor = 1.5
//! data.family.kind = "sprites"
//! ```
//!
//! Keys that are left out take their default value. `[section]` headers are
//! accepted too, since the file is valid TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use unilat_core::data::DatasetSpec;
use unilat_core::nn::ModelConfig;
use unilat_core::sampler::SamplerConfig;
use unilat_core::train::{SweepAxis, TrainConfig};

use crate::error::{Error, Result};

/// How reconstructions are embedded for the Fréchet distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Fixed random projection followed by `tanh`.
    Random,
    /// Hidden layer of a classifier fit to the generator labels.
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Share of the dataset held out for evaluation.
    pub eval_fraction: f64,
    /// Held-out images used for PSNR and rFID (capped by the split size).
    pub images: usize,
    /// Monte-Carlo draws of the bitrate estimator.
    pub n_mc: usize,
    pub bootstrap: usize,
    pub features: FeatureKind,
    pub feature_dim: usize,
    pub classifier_steps: usize,
    pub seed: u64,
    /// Images written by `sample`.
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_fraction: 0.125,
            images: 256,
            n_mc: 4096,
            bootstrap: 32,
            features: FeatureKind::Classifier,
            feature_dim: 32,
            classifier_steps: 400,
            seed: 0,
            samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { axis: SweepAxis::LossFactor, values: vec![1.3, 1.5, 1.7, 1.9, 2.1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DatasetSpec::sprites(16, 2048, 0),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig { steps: 64, ..Default::default() },
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// A 200-step configuration on the blobs set.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.data = DatasetSpec::blobs(16, 1024, 0);
        c.train.steps = 200;
        c.eval.images = 64;
        c.eval.n_mc = 1024;
        c.eval.samples = 16;
        c.eval.classifier_steps = 200;
        c.sampler.steps = 32;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        if self.data.image_shape() != self.model.image {
            return Err(Error::Usage(format!(
                "data produces {:?} images but the model expects {:?}",
                self.data.image_shape().dims(),
                self.model.image.dims()
            )));
        }
        let e = &self.eval;
        if !(e.eval_fraction > 0.0 && e.eval_fraction < 1.0) {
            return Err(Error::Usage("eval.eval_fraction must be in (0, 1)".into()));
        }
        if e.n_mc == 0 || e.feature_dim == 0 {
            return Err(Error::Usage("eval.n_mc and eval.feature_dim must be positive".into()));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("sweep.values must be finite".into()));
        }
        Ok(())
    }

    /// Flat `key = value` text, keys sorted.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in flatten(self)? {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v.to_string());
            out.push('\n');
        }
        Ok(out)
    }

    /// Parse config text; `origin` names the source in diagnostics.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Error::Parse { path: origin.into(), line, msg: e.message().to_string() }
        })?;
        let lines = key_lines(text);
        let line_for = |key: &str| -> usize {
            lines
                .iter()
                .filter(|(k, _)| key == k.as_str() || key.starts_with(&format!("{k}.")) || k.starts_with(&format!("{key}.")))
                .map(|(_, l)| *l)
                .next()
                .unwrap_or(0)
        };

        let mut merged = Value::try_from(RunConfig::default()).map_err(|e| Error::Usage(e.to_string()))?;
        merge(&mut merged, Value::Table(user.clone()));
        let cfg: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
            let key = e.path().to_string();
            Error::Parse { path: origin.into(), line: line_for(&key), msg: format!("`{key}`: {}", e.inner().message()) }
        })?;

        let known = flatten(&cfg)?;
        let mut user_keys = BTreeMap::new();
        flatten_value("", &Value::Table(user), &mut user_keys);
        if let Some(k) = user_keys.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::Parse { path: origin.into(), line: line_for(k), msg: format!("unknown key `{k}`") });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_text(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(Error::io(path))
    }
}

fn flatten<T: Serialize>(v: &T) -> Result<BTreeMap<String, Value>> {
    // integers are limited to i64, so seeds must stay below 2^63
    let value = Value::try_from(v).map_err(|e| Error::Usage(format!("config not representable as text: {e}")))?;
    let mut out = BTreeMap::new();
    flatten_value("", &value, &mut out);
    Ok(out)
}

fn flatten_value(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) if !t.is_empty() => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_value(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

/// Overlay `user` onto `base`. A table whose `kind` tag changes is replaced
/// as a whole, since the variant's fields differ.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Table(b), Value::Table(u)) => {
            let retag = matches!((b.get("kind"), u.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = u;
                return;
            }
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Full dotted key and 1-based line of each assignment.
fn key_lines(text: &str) -> Vec<(String, usize)> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(h) = line.strip_prefix('[') {
            section = h.trim_end_matches(']').trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k: String = k.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
            let full = if section.is_empty() { k } else { format!("{section}.{k}") };
            out.push((full, i + 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_lines_follow_sections() {
        let k = key_lines("a.b = 1\n\n[train]\nsteps = 3\n# c\n");
        assert_eq!(k, vec![("a.b".to_string(), 1), ("train.steps".to_string(), 4)]);
    }
}
