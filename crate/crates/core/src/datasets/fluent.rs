//! Loader for Fluent Speech Commands.
//!
//! The corpus ships comma-separated index tables under `data/` with at least
//! the columns `path`, `speakerId`, `action`, `object` and `location`.
//! Audio paths are relative to the corpus root. The label vocabulary is the
//! union of distinct values of the three slot columns in the training table,
//! each slot forming one required group.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{Corpus, LabelVocabulary, LoadReport, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::FeatureCache;
use crate::seed::derive_seed;

pub const FLUENT_LABELS: usize = 31;
pub const FLUENT_SPEAKERS: usize = 97;
/// Approximate size of the full corpus.
pub const FLUENT_UTTERANCES: usize = 30_000;

pub const FLUENT_SLOTS: [&str; 3] = ["action", "object", "location"];
/// Fraction of each speaker's training utterances kept when the corpus has
/// no reduced training table of its own.
pub const PARTIAL_FRACTION: f64 = 0.1;
pub const PARTIAL_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FluentRow {
    pub path: String,
    #[serde(rename = "speakerId")]
    pub speaker: String,
    pub action: String,
    pub object: String,
    pub location: String,
}

impl FluentRow {
    pub fn labels(&self) -> [String; 3] {
        [
            format!("action={}", self.action),
            format!("object={}", self.object),
            format!("location={}", self.location),
        ]
    }

    fn id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluentTables {
    pub train: Vec<FluentRow>,
    pub valid: Vec<FluentRow>,
    pub test: Vec<FluentRow>,
    /// The corpus's own reduced training table, when present.
    pub partial_train: Option<Vec<FluentRow>>,
}

fn read_table(path: &Path) -> Result<Vec<FluentRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

impl FluentTables {
    pub fn read(root: &Path) -> Result<Self> {
        let data = root.join("data");
        for split in ["train", "valid", "test"] {
            let table = data.join(format!("{split}_data.csv"));
            if !table.is_file() {
                return Err(Error::Usage(format!(
                    "missing split table {}",
                    table.display()
                )));
            }
        }
        let partial = data.join("partial_train_data.csv");
        Ok(FluentTables {
            train: read_table(&data.join("train_data.csv"))?,
            valid: read_table(&data.join("valid_data.csv"))?,
            test: read_table(&data.join("test_data.csv"))?,
            partial_train: if partial.is_file() {
                Some(read_table(&partial)?)
            } else {
                None
            },
        })
    }
}

/// Manifests for each split over one shared vocabulary and speaker roster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluentSplits {
    pub train: Manifest,
    pub valid: Manifest,
    pub test: Manifest,
    pub partial_train: Manifest,
    /// True when the reduced training split came from the corpus itself
    /// rather than the seeded per-speaker subsample.
    pub partial_from_table: bool,
    pub warnings: Vec<String>,
}

impl FluentSplits {
    /// All utterances of train, valid and test in one manifest.
    pub fn combined(&self) -> Manifest {
        let mut all = self.train.clone();
        all.name = "fluent".into();
        all.entries.extend(self.valid.entries.iter().cloned());
        all.entries.extend(self.test.entries.iter().cloned());
        all
    }
}

fn vocabulary(train: &[FluentRow]) -> Result<LabelVocabulary> {
    let mut labels = Vec::new();
    for (slot, pick) in FLUENT_SLOTS.iter().zip([
        (|r: &FluentRow| r.action.clone()) as fn(&FluentRow) -> String,
        |r| r.object.clone(),
        |r| r.location.clone(),
    ]) {
        let values: BTreeSet<String> = train.iter().map(pick).collect();
        labels.extend(values.into_iter().map(|v| format!("{slot}={v}")));
    }
    LabelVocabulary::from_slot_labels(labels, &FLUENT_SLOTS)
}

fn manifest(
    name: &str,
    rows: &[FluentRow],
    vocab: &LabelVocabulary,
    speakers: &[String],
) -> Result<Manifest> {
    let entries = rows
        .iter()
        .map(|r| {
            let labels = r.labels().to_vec();
            if let Some(l) = labels.iter().find(|l| vocab.index_of(l).is_none()) {
                return Err(Error::Data(format!(
                    "{name} table, {}: slot value {l:?} never occurs in training",
                    r.path
                )));
            }
            Ok(ManifestEntry {
                id: r.id(),
                audio_path: r.path.clone().into(),
                speaker: r.speaker.clone(),
                labels,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Manifest {
        name: format!("fluent-{name}"),
        vocab: vocab.clone(),
        speakers: speakers.to_vec(),
        entries,
    })
}

/// Per-speaker seeded subsample of `rows` keeping `fraction` of each
/// speaker's utterances (at least one), in table order.
pub fn stratified_subsample(rows: &[FluentRow], fraction: f64, seed: u64) -> Vec<FluentRow> {
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_speaker.entry(&r.speaker).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (s, (_, mut idx)) in by_speaker.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[s as u64]));
        idx.shuffle(&mut rng);
        let n = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len());
        keep.extend_from_slice(&idx[..n]);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| rows[i].clone()).collect()
}

pub fn scan_fluent(root: &Path) -> Result<FluentSplits> {
    let tables = FluentTables::read(root)?;
    splits_from_tables(&tables)
}

pub fn splits_from_tables(tables: &FluentTables) -> Result<FluentSplits> {
    if tables.train.is_empty() {
        return Err(Error::Data("fluent training table is empty".into()));
    }
    let vocab = vocabulary(&tables.train)?;
    let speakers: Vec<String> = tables
        .train
        .iter()
        .chain(&tables.valid)
        .chain(&tables.test)
        .map(|r| r.speaker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut warnings = Vec::new();
    if vocab.len() != FLUENT_LABELS {
        let sizes: Vec<String> = vocab
            .groups()
            .iter()
            .map(|g| format!("{} {}", g.labels.len(), g.name))
            .collect();
        warnings.push(format!(
            "slot union has {} labels ({}), expected {FLUENT_LABELS}",
            vocab.len(),
            sizes.join(", ")
        ));
    }
    if speakers.len() != FLUENT_SPEAKERS {
        warnings.push(format!(
            "found {} speakers, expected {FLUENT_SPEAKERS}",
            speakers.len()
        ));
    }
    for w in &warnings {
        warn!("fluent: {w}");
    }
    let (partial_rows, partial_from_table) = match &tables.partial_train {
        Some(rows) => (rows.clone(), true),
        None => (
            stratified_subsample(&tables.train, PARTIAL_FRACTION, PARTIAL_SEED),
            false,
        ),
    };
    Ok(FluentSplits {
        train: manifest("train", &tables.train, &vocab, &speakers)?,
        valid: manifest("valid", &tables.valid, &vocab, &speakers)?,
        test: manifest("test", &tables.test, &vocab, &speakers)?,
        partial_train: manifest("partial-train", &partial_rows, &vocab, &speakers)?,
        partial_from_table,
        warnings,
    })
}

/// Loads every split as one corpus, for learning curves.
pub fn load_fluent(root: &Path, cache: Option<&FeatureCache>) -> Result<(Corpus, LoadReport)> {
    let splits = scan_fluent(root)?;
    let (corpus, mut report) = splits.combined().materialize(root, cache)?;
    report.warnings.extend(splits.warnings);
    Ok((corpus, report))
}
