//! Train/test replication on a corpus with published splits: train on the
//! reduced and on the full training set, keep the epoch with the best
//! validation intent accuracy, and report test intent accuracy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{evaluate, fit_with_validation, TrainConfig};
use crate::capsnet::{CapsNetParams, ModelConfig};
use crate::datasets::{Corpus, FluentSplits, LoadReport, Utterance};
use crate::error::{Error, Result};
use crate::features::FeatureCache;

/// Published test accuracies (reduced, full) of the capsule model.
pub const REFERENCE_CAPSULE: (f64, f64) = (0.978, 0.981);
/// Published test accuracies (reduced, full) of the cited end-to-end
/// baseline without pre-training.
pub const REFERENCE_BASELINE: (f64, f64) = (0.889, 0.966);

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationData {
    pub partial: Corpus,
    pub full: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
    pub partial_from_table: bool,
}

impl ReplicationData {
    pub fn load(
        splits: &FluentSplits,
        root: &Path,
        cache: Option<&FeatureCache>,
    ) -> Result<(Self, Vec<LoadReport>)> {
        let (full, r1) = splits.train.materialize(root, cache)?;
        let (partial, r2) = splits.partial_train.materialize(root, cache)?;
        let (valid, r3) = splits.valid.materialize(root, cache)?;
        let (test, r4) = splits.test.materialize(root, cache)?;
        let data = ReplicationData {
            partial,
            full,
            valid,
            test,
            partial_from_table: splits.partial_from_table,
        };
        Ok((data, vec![r1, r2, r3, r4]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub name: String,
    pub partial: f64,
    pub full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRun {
    pub train_utterances: usize,
    pub selected_epoch: usize,
    pub epochs_run: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub partial: ReplicationRun,
    pub full: ReplicationRun,
    pub test_utterances: usize,
    /// Whether the reduced set came from the corpus's own table rather than
    /// the seeded per-speaker subsample.
    pub partial_from_table: bool,
    pub references: Vec<ReferenceRow>,
}

impl ReplicationReport {
    pub fn accuracy_partial(&self) -> f64 {
        self.partial.test_accuracy
    }

    pub fn accuracy_full(&self) -> f64 {
        self.full.test_accuracy
    }

    /// Plain-text table of measured and reference accuracies.
    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:>8} {:>8}\n", "", "partial", "full");
        out += &format!(
            "{:<28} {:>7.1}% {:>7.1}%\n",
            "measured",
            100.0 * self.partial.test_accuracy,
            100.0 * self.full.test_accuracy
        );
        for r in &self.references {
            out += &format!(
                "{:<28} {:>7.1}% {:>7.1}%\n",
                r.name,
                100.0 * r.partial,
                100.0 * r.full
            );
        }
        out
    }
}

fn run_one(
    train: &Corpus,
    data: &ReplicationData,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<ReplicationRun> {
    let train_refs: Vec<&Utterance> = train.utterances.iter().collect();
    let valid: Vec<&Utterance> = data.valid.utterances.iter().collect();
    let test: Vec<&Utterance> = data.test.utterances.iter().collect();
    let vocab = &data.full.vocab;
    let score = |p: &CapsNetParams| -> Result<f64> {
        let m = evaluate(&valid, p, model, vocab)?;
        m.intent_accuracy
            .ok_or_else(|| Error::Usage("intent accuracy needs slot groups".into()))
    };
    let (params, history) = fit_with_validation(&train_refs, model, config, &score)?;
    let m = evaluate(&test, &params, model, vocab)?;
    let selected = history.epochs[history.selected_epoch - 1];
    Ok(ReplicationRun {
        train_utterances: train.len(),
        selected_epoch: history.selected_epoch,
        epochs_run: history.epochs.len(),
        validation_accuracy: selected.validation.unwrap_or(f64::NAN),
        test_accuracy: m.intent_accuracy.expect("slotted vocabulary"),
        test_f1: m.f1,
    })
}

pub fn train_test_replication(
    data: &ReplicationData,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<ReplicationReport> {
    for (name, c) in [
        ("training", &data.full),
        ("reduced training", &data.partial),
        ("validation", &data.valid),
        ("test", &data.test),
    ] {
        if c.is_empty() {
            return Err(Error::Usage(format!(
                "the {name} split is missing or empty"
            )));
        }
    }
    if !data.full.vocab.has_slots() {
        return Err(Error::Usage(
            "replication needs a vocabulary with slot groups".into(),
        ));
    }
    let partial = run_one(&data.partial, data, model, config)?;
    let full = run_one(&data.full, data, model, config)?;
    Ok(ReplicationReport {
        partial,
        full,
        test_utterances: data.test.len(),
        partial_from_table: data.partial_from_table,
        references: vec![
            ReferenceRow {
                name: "reference capsule network".into(),
                partial: REFERENCE_CAPSULE.0,
                full: REFERENCE_CAPSULE.1,
            },
            ReferenceRow {
                name: "reference cited baseline".into(),
                partial: REFERENCE_BASELINE.0,
                full: REFERENCE_BASELINE.1,
            },
        ],
    })
}
