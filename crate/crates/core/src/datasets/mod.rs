//! Corpora, label vocabularies with slot structure, the canonical manifest
//! format, corpus loaders, a synthetic corpus generator and block splits.

mod fluent;
mod grabo;
mod manifest;
mod split;
mod synth;

pub use fluent::{
    load_fluent, scan_fluent, splits_from_tables, stratified_subsample, FluentRow, FluentSplits,
    FluentTables, FLUENT_LABELS, FLUENT_SLOTS, FLUENT_SPEAKERS, FLUENT_UTTERANCES,
};
pub use grabo::{
    load_grabo, parse_frame, scan_grabo, GRABO_LABELS, GRABO_SPEAKERS, GRABO_UTTERANCES,
};
pub(crate) use manifest::write_atomic;
pub use manifest::{Manifest, ManifestEntry};
pub use split::{split_blocks, BlockSplit, Partition, SplitMode};
pub use synth::{synth_generate, SynthGroup, SynthSpec};

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::capsnet::LabelTarget;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::multitask::SpeakerTarget;

/// A named group of mutually exclusive labels (one slot of a semantic frame).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotGroup {
    pub name: String,
    pub labels: Vec<usize>,
    /// Required groups always decode to their best label.
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    groups: Vec<SlotGroup>,
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>, groups: Vec<SlotGroup>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Data(format!("duplicate label {l:?}")));
            }
        }
        let mut owner = vec![None::<&str>; labels.len()];
        for g in &groups {
            for &k in &g.labels {
                let slot = owner.get_mut(k).ok_or_else(|| {
                    Error::Data(format!(
                        "group {:?} references label {k} out of range",
                        g.name
                    ))
                })?;
                if let Some(prev) = slot {
                    return Err(Error::Data(format!(
                        "label {:?} belongs to both {prev:?} and {:?}",
                        labels[k], g.name
                    )));
                }
                *slot = Some(&g.name);
            }
        }
        Ok(LabelVocabulary { labels, groups })
    }

    /// Builds groups from `slot=value` label names. Slots listed in
    /// `required` become required groups; other slots are optional; labels
    /// without `=` stay ungrouped. Group order follows first appearance.
    pub fn from_slot_labels(labels: Vec<String>, required: &[&str]) -> Result<Self> {
        let mut groups: Vec<SlotGroup> = Vec::new();
        for (k, l) in labels.iter().enumerate() {
            if let Some((slot, _)) = l.split_once('=') {
                match groups.iter_mut().find(|g| g.name == slot) {
                    Some(g) => g.labels.push(k),
                    None => groups.push(SlotGroup {
                        name: slot.to_string(),
                        labels: vec![k],
                        required: required.contains(&slot),
                    }),
                }
            }
        }
        Self::new(labels, groups)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn groups(&self) -> &[SlotGroup] {
        &self.groups
    }

    pub fn has_slots(&self) -> bool {
        !self.groups.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn names(&self, set: &BTreeSet<usize>) -> Vec<&str> {
        set.iter().map(|&k| self.labels[k].as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureMatrix,
    pub target: LabelTarget,
    pub speaker: SpeakerTarget,
    pub audio_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub utterances: Vec<Utterance>,
    pub vocab: LabelVocabulary,
    pub speakers: Vec<String>,
}

impl Corpus {
    pub fn num_labels(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn feat_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.features.dim())
    }

    /// Indices of the utterances of speaker `s`, in corpus order.
    pub fn speaker_indices(&self, s: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.utterances[i].speaker.index == s)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers.is_empty() {
            return Err(Error::Data(format!(
                "corpus {} has an empty speaker roster",
                self.name
            )));
        }
        let k = self.vocab.len();
        let dim = self.feat_dim();
        let mut ids = HashSet::new();
        for u in &self.utterances {
            if !ids.insert(u.id.as_str()) {
                return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
            }
            if u.target.len() != k {
                return Err(Error::Data(format!(
                    "{}: target has {} labels, vocabulary {k}",
                    u.id,
                    u.target.len()
                )));
            }
            if u.speaker.count != self.speakers.len() || u.speaker.index >= self.speakers.len() {
                return Err(Error::Data(format!("{}: speaker index out of range", u.id)));
            }
            if Some(u.features.dim()) != dim {
                return Err(Error::Data(format!(
                    "{}: inconsistent feature dimension",
                    u.id
                )));
            }
        }
        Ok(())
    }
}

/// Counters collected while loading a corpus from disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped_missing_annotation: usize,
    pub skipped_missing_audio: usize,
    pub warnings: Vec<String>,
}
