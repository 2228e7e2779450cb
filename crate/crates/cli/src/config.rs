//! The run configuration file.
//!
//! A run is described by one TOML document:
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/grabo-independent"
//!
//! [corpus]
//! name = "grabo"            # grabo | fluent | synth
//! root = "/data/grabo"      # or: manifest = "corpus/manifest.tsv"
//!
//! [model]
//! output_dim = 8
//! speaker_weight = 1.0
//!
//! [train]
//! learning_rate = 1e-3
//!
//! [experiment]
//! mode = "speaker_independent"
//! num_blocks = 150
//! sweep = { axis = "speaker_weight", values = [10.0, 1.0, 0.1] }
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use capslu_core::datasets::SynthSpec;
use capslu_core::experiments::{CurveSchedule, SweepSpec, TrainConfig, DEFAULT_NUM_BLOCKS};
use capslu_core::seed::derive_seed;
use capslu_core::{Error, FeatureRecipe, ModelConfig, Result, SplitMode};
use serde::{Deserialize, Serialize};

/// Model keys that describe the corpus rather than the architecture. They
/// are filled in from the loaded corpus and only checked when given.
const SHAPE_KEYS: [&str; 3] = ["feat_dim", "num_output", "speaker_count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Grabo,
    Fluent,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub name: CorpusKind,
    pub root: Option<PathBuf>,
    /// A manifest written by `capslu synth` or by hand. Takes the place of
    /// scanning `root`.
    pub manifest: Option<PathBuf>,
    /// Named synthetic preset, `mimic-grabo` or `tiny`.
    pub preset: Option<String>,
    /// Full synthetic spec; overrides `preset`.
    pub synth: Option<SynthSpec>,
    /// Feature cache location. `$CAPSLU_CACHE_DIR` wins over this.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: SplitMode,
    pub num_blocks: usize,
    /// Defaults to the standard schedule capped by `num_blocks`.
    pub schedule: Option<CurveSchedule>,
    pub repeats: Option<usize>,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: SplitMode::SpeakerIndependent,
            num_blocks: DEFAULT_NUM_BLOCKS,
            schedule: None,
            repeats: None,
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn schedule(&self) -> CurveSchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| CurveSchedule::default().capped(self.num_blocks))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub features: FeatureRecipe,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    /// Model keys present in the file.
    #[serde(skip)]
    pub model_keys: Vec<String>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e| Error::Usage(format!("config: {e}")))?;
        let mut cfg: RunConfig = doc
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("config: {}", e.message())))?;
        if let Some(toml::Value::Table(m)) = doc.get("model") {
            cfg.model_keys = m.keys().cloned().collect();
        }
        for (section, key) in [("model", "seed"), ("train", "seed")] {
            if doc.get(section).and_then(|s| s.get(key)).is_some() {
                return Err(Error::Usage(format!(
                    "config: {section}.{key} is derived from the top-level seed and cannot be set"
                )));
            }
        }
        resolve(base_dir, &mut cfg.output_dir);
        for p in [
            &mut cfg.corpus.root,
            &mut cfg.corpus.manifest,
            &mut cfg.corpus.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base_dir, p);
        }
        cfg.model.seed = derive_seed(cfg.seed, &[0]);
        cfg.train.seed = derive_seed(cfg.seed, &[1]);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Usage(m) => Error::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Everything that can be checked without touching the corpus.
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        match c.name {
            CorpusKind::Synth => {
                if c.root.is_some() {
                    return Err(Error::Usage(
                        "corpus.root does not apply to synthetic corpora".into(),
                    ));
                }
                if c.manifest.is_none() {
                    self.synth_spec()?.validate()?;
                }
            }
            CorpusKind::Grabo | CorpusKind::Fluent => {
                if c.preset.is_some() || c.synth.is_some() {
                    return Err(Error::Usage(
                        "corpus.preset and corpus.synth only apply to synthetic corpora".into(),
                    ));
                }
                if c.root.is_none() && c.manifest.is_none() {
                    return Err(Error::Usage(
                        "corpus.root or corpus.manifest is required".into(),
                    ));
                }
            }
        }
        if c.root.is_some() && c.manifest.is_some() {
            return Err(Error::Usage(
                "give corpus.root or corpus.manifest, not both".into(),
            ));
        }
        let mut model = self.model.clone();
        // Shape keys are not known yet; check the rest with placeholders.
        for key in SHAPE_KEYS {
            if !self.model_keys.iter().any(|k| k == key) {
                match key {
                    "feat_dim" => model.feat_dim = 1,
                    "num_output" => model.num_output = 1,
                    _ => model.speaker_count = 1,
                }
            }
        }
        model.validate()?;
        self.train.validate()?;
        let e = &self.experiment;
        if e.num_blocks < 2 {
            return Err(Error::Usage(
                "experiment.num_blocks must be at least 2".into(),
            ));
        }
        e.schedule().validate(e.num_blocks)?;
        if e.repeats == Some(0) {
            return Err(Error::Usage("experiment.repeats must be at least 1".into()));
        }
        if let Some(s) = &e.sweep {
            s.validate(&model)?;
        }
        Ok(())
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        if let Some(s) = &self.corpus.synth {
            return Ok(s.clone());
        }
        let name = self.corpus.preset.as_deref().unwrap_or("mimic-grabo");
        SynthSpec::preset(name)
            .ok_or_else(|| Error::Usage(format!("unknown synthetic preset {name:?}")))
    }

    pub fn synth_seed(&self) -> u64 {
        derive_seed(self.seed, &[3])
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, &[2])
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.corpus
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// The model config with corpus-dependent sizes filled in, or a usage
    /// error if the file set them to something else.
    pub fn model_for(
        &self,
        feat_dim: usize,
        num_labels: usize,
        num_speakers: usize,
    ) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        for (key, actual, slot) in [
            ("feat_dim", feat_dim, &mut m.feat_dim),
            ("num_output", num_labels, &mut m.num_output),
            ("speaker_count", num_speakers, &mut m.speaker_count),
        ] {
            if self.model_keys.iter().any(|k| k == key) && *slot != actual {
                return Err(Error::Usage(format!(
                    "model.{key} = {} but the corpus has {actual}",
                    *slot
                )));
            }
            *slot = actual;
        }
        // Without a speaker term there is nothing for the head to learn.
        if m.speaker_weight == 0.0 {
            m.multitask = false;
        }
        m.validate()?;
        Ok(m)
    }
}
