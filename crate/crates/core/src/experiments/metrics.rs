//! Evaluation metrics over decoded predictions.

use std::collections::BTreeSet;

use crate::datasets::LabelVocabulary;
use crate::error::{Error, Result};

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Usage(format!(
            "{what}: {a} predictions against {b} references"
        )));
    }
    Ok(())
}

/// Micro-averaged F1 over individual label decisions pooled across
/// utterances: `2TP / (2TP + FP + FN)`, and 1.0 when neither side has any
/// label.
pub fn f1_score(predicted: &[BTreeSet<usize>], reference: &[BTreeSet<usize>]) -> Result<f64> {
    check_lengths("f1_score", predicted.len(), reference.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, r) in predicted.iter().zip(reference) {
        let hit = p.intersection(r).count();
        tp += hit;
        fp += p.len() - hit;
        fneg += r.len() - hit;
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    })
}

/// Fraction of exact matches.
pub fn speaker_accuracy(predicted: &[usize], reference: &[usize]) -> Result<f64> {
    check_lengths("speaker_accuracy", predicted.len(), reference.len())?;
    if predicted.is_empty() {
        return Err(Error::Usage("speaker_accuracy: no utterances".into()));
    }
    let hits = predicted
        .iter()
        .zip(reference)
        .filter(|(p, r)| p == r)
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Fraction of utterances whose labels agree with the reference in every
/// slot group. Labels outside all groups are ignored.
pub fn intent_accuracy(
    predicted: &[BTreeSet<usize>],
    reference: &[BTreeSet<usize>],
    vocab: &LabelVocabulary,
) -> Result<f64> {
    check_lengths("intent_accuracy", predicted.len(), reference.len())?;
    if predicted.is_empty() {
        return Err(Error::Usage(
            "intent_accuracy is undefined for an empty set".into(),
        ));
    }
    if !vocab.has_slots() {
        return Err(Error::Usage(
            "intent_accuracy needs a vocabulary with slot groups".into(),
        ));
    }
    let slotted: BTreeSet<usize> = vocab
        .groups()
        .iter()
        .flat_map(|g| g.labels.iter().copied())
        .collect();
    let hits = predicted
        .iter()
        .zip(reference)
        .filter(|(p, r)| p.intersection(&slotted).eq(r.intersection(&slotted)))
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_and_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
