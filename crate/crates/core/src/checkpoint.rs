//! Self-describing model checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {
//!   "format": "capslu-checkpoint",
//!   "version": 1,
//!   "model": { ...ModelConfig... },
//!   "recipe": { ...FeatureRecipe... } | null,
//!   "labels": { "labels": [...], "groups": [...] },
//!   "speakers": ["pp2", ...],
//!   "tensors": [ { "name": "encoder.l0.fwd.w_in", "shape": [384, 120], "values": [...] }, ... ]
//! }
//! ```
//!
//! Floats are written with round-trip precision, so loading restores every
//! parameter bit for bit. The model seed lives in `model.seed`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capsnet::{CapsNetParams, ModelConfig};
use crate::datasets::{LabelVocabulary, Manifest};
use crate::error::{Error, Result};
use crate::features::FeatureRecipe;
use crate::numeric::ParamSet;

pub const FORMAT: &str = "capslu-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub recipe: Option<FeatureRecipe>,
    pub labels: LabelVocabulary,
    pub speakers: Vec<String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(
        model: &ModelConfig,
        params: &CapsNetParams,
        labels: &LabelVocabulary,
        speakers: &[String],
        recipe: Option<&FeatureRecipe>,
    ) -> Result<Self> {
        params.check_config(model)?;
        let mut values = Vec::new();
        params.visit(&mut |_, v| values.push(v.to_vec()));
        let tensors = params
            .shapes()
            .into_iter()
            .zip(values)
            .map(|((name, shape), values)| NamedTensor {
                name,
                shape,
                values,
            })
            .collect();
        Ok(Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            model: model.clone(),
            recipe: recipe.cloned(),
            labels: labels.clone(),
            speakers: speakers.to_vec(),
            tensors,
        })
    }

    /// Rebuilds the parameters, matching tensors by name and shape.
    pub fn params(&self) -> Result<CapsNetParams> {
        self.model.validate()?;
        let mut params = CapsNetParams::zeros(&self.model);
        let shapes: HashMap<String, Vec<usize>> = params.shapes().into_iter().collect();
        let mut by_name: HashMap<&str, &NamedTensor> = HashMap::new();
        for t in &self.tensors {
            if by_name.insert(&t.name, t).is_some() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {} appears twice",
                    t.name
                )));
            }
            match shapes.get(&t.name) {
                Some(s) if *s == t.shape => {}
                Some(s) => {
                    return Err(Error::Contract(format!(
                        "checkpoint tensor {} has shape {:?}, the model needs {s:?}",
                        t.name, t.shape
                    )))
                }
                None => {
                    return Err(Error::Contract(format!(
                        "checkpoint tensor {} is not part of the model",
                        t.name
                    )))
                }
            }
        }
        let mut missing = Vec::new();
        params.visit_mut(&mut |name, v| match by_name.get(name) {
            Some(t) if t.values.len() == v.len() => v.copy_from_slice(&t.values),
            _ => missing.push(name.to_string()),
        });
        if !missing.is_empty() {
            return Err(Error::Format(format!(
                "checkpoint lacks or truncates tensors {missing:?}"
            )));
        }
        Ok(params)
    }

    /// Checks that `manifest` uses the same labels and speakers.
    pub fn check_manifest(&self, manifest: &Manifest) -> Result<()> {
        if manifest.vocab.labels() != self.labels.labels() {
            return Err(Error::Contract(format!(
                "manifest labels differ from the checkpoint's ({} vs {} labels)",
                manifest.vocab.len(),
                self.labels.len()
            )));
        }
        if self.model.multitask && manifest.speakers != self.speakers {
            return Err(Error::Contract(
                "manifest speaker roster differs from the checkpoint's".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(format!("checkpoint encoding: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("not a checkpoint: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Format(format!(
                "unexpected format tag {:?}",
                header.format
            )));
        }
        if header.version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported (expected {VERSION})",
                header.version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed checkpoint: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::datasets::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
