use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::routing::{OutputCapsuleSet, NORM_EPS};
use crate::datasets::LabelVocabulary;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Multi-hot label target over the `K` output capsules.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelTarget {
    active: Vec<bool>,
}

impl LabelTarget {
    pub fn new(active: Vec<bool>) -> Result<Self> {
        if !active.iter().any(|&a| a) {
            return Err(Error::Data("label target has no active label".into()));
        }
        Ok(LabelTarget { active })
    }

    pub fn from_indices(num_labels: usize, indices: &[usize]) -> Result<Self> {
        let mut active = vec![false; num_labels];
        for &i in indices {
            if i >= num_labels {
                return Err(Error::Data(format!(
                    "label index {i} out of range for {num_labels} labels"
                )));
            }
            active[i] = true;
        }
        Self::new(active)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.active[k]
    }

    pub fn indices(&self) -> BTreeSet<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
            .collect()
    }
}

/// `Σ_k T_k max(0, m⁺ − ‖v_k‖) + w⁻ (1 − T_k) max(0, ‖v_k‖ − m⁻)`.
pub fn margin_loss(
    v: &OutputCapsuleSet,
    t: &LabelTarget,
    m_plus: f64,
    m_minus: f64,
    negative_weight: f64,
) -> Result<f64> {
    if v.len() != t.len() {
        return Err(Error::Shape(format!(
            "{} output capsules for {} labels",
            v.len(),
            t.len()
        )));
    }
    Ok(v.norms
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if t.is_active(k) {
                (m_plus - n).max(0.0)
            } else {
                negative_weight * (n - m_minus).max(0.0)
            }
        })
        .sum())
}

/// `dL_l/dv_k`, `K × n`. Hinge corners take the zero subgradient.
pub fn margin_loss_backward(
    v: &OutputCapsuleSet,
    t: &LabelTarget,
    m_plus: f64,
    m_minus: f64,
    negative_weight: f64,
) -> Matrix {
    let mut g = Matrix::zeros(v.vectors.rows(), v.vectors.cols());
    for (k, &n) in v.norms.iter().enumerate() {
        let d_norm = if t.is_active(k) {
            if n < m_plus {
                -1.0
            } else {
                0.0
            }
        } else if n > m_minus {
            negative_weight
        } else {
            0.0
        };
        if d_norm != 0.0 && n > NORM_EPS {
            let scale = d_norm / n;
            for (gi, vi) in g.row_mut(k).iter_mut().zip(v.vectors.row(k)) {
                *gi = scale * vi;
            }
        }
    }
    g
}

/// Picks the most active capsule of every required slot group, of every
/// optional group whose winner exceeds 0.5, and every ungrouped label whose
/// norm exceeds 0.5.
pub fn decode_labels(v: &OutputCapsuleSet, vocab: &LabelVocabulary) -> BTreeSet<usize> {
    const THRESHOLD: f64 = 0.5;
    let mut out = BTreeSet::new();
    let mut grouped = vec![false; v.len()];
    for group in vocab.groups() {
        let mut best: Option<usize> = None;
        for &k in &group.labels {
            grouped[k] = true;
            if best.is_none_or(|b| v.norms[k] > v.norms[b]) {
                best = Some(k);
            }
        }
        if let Some(b) = best {
            if group.required || v.norms[b] > THRESHOLD {
                out.insert(b);
            }
        }
    }
    for (k, &n) in v.norms.iter().enumerate() {
        if !grouped[k] && n > THRESHOLD {
            out.insert(k);
        }
    }
    out
}
