//! Run configuration: one JSON object with flat dotted keys such as
//! `"train.lr_max": 0.001`, plus `key=value` overrides that win over the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::phantom::DatasetConfig;
use crate::spectral::{MixConfig, MixMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer steps per epoch; 0 means one pass over the pool.
    pub steps_per_epoch: usize,
    /// Labeled members guaranteed in each batch, the rest drawn from the
    /// unlabeled pool; 0 draws every member from the whole pool.
    pub labeled_per_batch: usize,
    /// Weight of the cross pseudo supervision term.
    pub beta: f64,
    /// Epochs over which the effective weight ramps up to `beta` along a
    /// sigmoid-shaped curve; 0 applies `beta` from the first step.
    pub beta_warmup_epochs: usize,
    pub weight_decay: f64,
    pub grad_through_variance: bool,
    /// Restrict the pool to labeled samples (supervised baseline).
    pub labeled_only: bool,
    /// Which of the two models `train` fits; both by default.
    pub models: Vec<u8>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr_max: 1e-3,
            lr_min: 1e-5,
            epochs: 60,
            batch_size: 8,
            steps_per_epoch: 0,
            labeled_per_batch: 0,
            beta: 1.5,
            beta_warmup_epochs: 15,
            weight_decay: 0.01,
            grad_through_variance: false,
            labeled_only: false,
            models: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugSettings {
    /// Mixing weight is drawn from `U[0, lambda_max]` per sample.
    pub lambda_max: f64,
    pub mask_ratio: f64,
    pub mode: MixMode,
    /// Where amplitude partners come from.
    pub partners: PartnerSource,
}

impl Default for AugSettings {
    fn default() -> Self {
        AugSettings {
            lambda_max: 1.0,
            mask_ratio: 0.1,
            mode: MixMode::ConvexLowFreq,
            partners: PartnerSource::Pool,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartnerSource {
    /// Another member of the same batch.
    Batch,
    /// Any other sample of the training pool, labeled or not.
    Pool,
}

/// Network seeds: model 1 owns `net1`/`net2`, model 2 owns `net3`/`net4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub net1: u64,
    pub net2: u64,
    pub net3: u64,
    pub net4: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            net1: 1,
            net2: 2,
            net3: 3,
            net4: 4,
            shuffle: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory holding `manifest.json`.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint directory for `infer`.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub train: TrainSettings,
    pub aug: AugSettings,
    pub seeds: Seeds,
    pub paths: Paths,
}

impl RunConfig {
    /// Builds a config from flat dotted keys; unknown keys are rejected.
    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self> {
        let mut nested = Map::new();
        for (key, value) in flat {
            insert_dotted(&mut nested, key, value.clone())?;
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(nested))
            .map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any) and applies `key=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut flat = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(Error::config("config must be a JSON object")),
                    Err(e) => return Err(Error::config(format!("{}: {e}", p.display()))),
                }
            }
            None => Map::new(),
        };
        for ov in overrides {
            let (k, v) = parse_override(ov)?;
            flat.insert(k, v);
        }
        Self::from_flat(&flat)
    }

    /// Flat dotted-key form of this config, as accepted by [`RunConfig::from_flat`].
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut out = Map::new();
        flatten(
            "",
            &serde_json::to_value(self).expect("config serializes"),
            &mut out,
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let t = &self.train;
        let bad = |m: String| Err(Error::config(m));
        if !(t.lr_min > 0.0 && t.lr_max >= t.lr_min) || !t.lr_max.is_finite() {
            return bad(format!(
                "need lr_max >= lr_min > 0, got {} and {}",
                t.lr_max, t.lr_min
            ));
        }
        if t.epochs == 0 {
            return bad("train.epochs must be positive".into());
        }
        if t.batch_size < 2 {
            return bad(format!(
                "train.batch_size {} < 2 leaves no augmentation partner",
                t.batch_size
            ));
        }
        if t.labeled_per_batch > t.batch_size {
            return bad(format!(
                "train.labeled_per_batch {} exceeds batch_size {}",
                t.labeled_per_batch, t.batch_size
            ));
        }
        if !(t.beta >= 0.0 && t.beta.is_finite()) {
            return bad(format!(
                "train.beta {} must be a finite non-negative number",
                t.beta
            ));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return bad(format!(
                "train.weight_decay {} must be non-negative",
                t.weight_decay
            ));
        }
        if t.models.is_empty() || t.models.iter().any(|m| !(1..=2).contains(m)) {
            return bad(format!("train.models {:?} must list 1 and/or 2", t.models));
        }
        let a = &self.aug;
        MixConfig {
            lambda: a.lambda_max,
            mask_ratio: a.mask_ratio,
            mode: a.mode,
        }
        .validate()
        .map_err(|e| Error::config(format!("aug: {}", e.message())))
    }

    /// CACPS weight in effect during `epoch`: `beta·exp(−5(1−t)²)` with
    /// `t = epoch / beta_warmup_epochs`, then `beta` once warm.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let t = &self.train;
        if epoch >= t.beta_warmup_epochs {
            return t.beta;
        }
        let x = 1.0 - epoch as f64 / t.beta_warmup_epochs as f64;
        t.beta * (-5.0 * x * x).exp()
    }

    /// `(net seed A, net seed B)` of a model.
    pub fn net_seeds(&self, model_id: u8) -> (u64, u64) {
        if model_id == 1 {
            (self.seeds.net1, self.seeds.net2)
        } else {
            (self.seeds.net3, self.seeds.net4)
        }
    }
}

fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let slot = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        node = slot
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("key {key:?} conflicts with a value")))?;
    }
    let last = parts[parts.len() - 1].to_string();
    if node.get(&last).is_some_and(Value::is_object) {
        return Err(Error::config(format!(
            "key {key:?} conflicts with a section"
        )));
    }
    node.insert(last, value);
    Ok(())
}

fn flatten(prefix: &str, value: &Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        v => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {text:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
