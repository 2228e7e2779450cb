//! Speaker-identification head on top of the output capsules.
//!
//! The output capsules are pooled into a norm-weighted average capsule
//! `z = Σ v_k / Σ ‖v_k‖`, projected to speaker logits with `W_sᵀ z + b`, and
//! trained with cross-entropy. The total objective is `L_l + λ_s L_s`.

use serde::{Deserialize, Serialize};

use crate::capsnet::{OutputCapsuleSet, SpeakerHeadParams, NORM_EPS};
use crate::error::{Error, Result};
use crate::numeric::{dot, softmax_unchecked, Matrix};

/// Floor on the target probability inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageCapsule {
    pub z: Vec<f64>,
    /// Set when every output capsule is zero; `z` is then the zero vector.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeakerTarget {
    pub index: usize,
    pub count: usize,
}

impl SpeakerTarget {
    pub fn new(index: usize, count: usize) -> Result<Self> {
        if index >= count {
            return Err(Error::Data(format!(
                "speaker index {index} out of range for {count} speakers"
            )));
        }
        Ok(SpeakerTarget { index, count })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.count];
        t[self.index] = 1.0;
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerDistribution {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub label_loss: f64,
    pub speaker_loss: f64,
    pub total: f64,
}

pub fn average_capsule(v: &OutputCapsuleSet) -> AverageCapsule {
    let n = v.vectors.cols();
    let denom: f64 = v.norms.iter().sum();
    if denom < NORM_EPS {
        return AverageCapsule {
            z: vec![0.0; n],
            degenerate: true,
        };
    }
    let mut z = vec![0.0; n];
    for k in 0..v.len() {
        for (zi, vi) in z.iter_mut().zip(v.vectors.row(k)) {
            *zi += vi;
        }
    }
    z.iter_mut().for_each(|x| *x /= denom);
    AverageCapsule {
        z,
        degenerate: false,
    }
}

/// Backward of [`average_capsule`] through both the numerator and the
/// norm-sum denominator: `dv_k = dz/S − (dz·z)/S · v_k/‖v_k‖`.
pub fn average_capsule_backward(
    v: &OutputCapsuleSet,
    avg: &AverageCapsule,
    grad_z: &[f64],
) -> Matrix {
    let mut g = Matrix::zeros(v.vectors.rows(), v.vectors.cols());
    if avg.degenerate {
        return g;
    }
    let s: f64 = v.norms.iter().sum();
    let radial = dot(grad_z, &avg.z) / s;
    for k in 0..v.len() {
        let nk = v.norms[k];
        let row = g.row_mut(k);
        for (a, gi) in row.iter_mut().enumerate() {
            *gi = grad_z[a] / s;
            if nk > NORM_EPS {
                *gi -= radial * v.vectors.get(k, a) / nk;
            }
        }
    }
    g
}

fn logits(z: &AverageCapsule, head: &SpeakerHeadParams) -> Result<Vec<f64>> {
    if head.weight.rows() != z.z.len() {
        return Err(Error::Shape(format!(
            "average capsule has dimension {} but the projection is {}x{}",
            z.z.len(),
            head.weight.rows(),
            head.weight.cols()
        )));
    }
    let mut l = head
        .bias
        .as_ref()
        .map_or_else(|| vec![0.0; head.speakers()], |b| b.as_slice().to_vec());
    head.weight.matvec_t_into(&z.z, &mut l);
    Ok(l)
}

/// `P = softmax(W_sᵀ z + b)`.
pub fn speaker_distribution(
    z: &AverageCapsule,
    head: &SpeakerHeadParams,
) -> Result<SpeakerDistribution> {
    let l = logits(z, head)?;
    if l.is_empty() {
        return Err(Error::Shape("speaker head has no outputs".into()));
    }
    Ok(SpeakerDistribution {
        probs: softmax_unchecked(&l),
    })
}

/// `−log P_target` with the probability floored at [`PROB_FLOOR`].
pub fn speaker_loss(p: &SpeakerDistribution, t: &SpeakerTarget) -> Result<f64> {
    if p.probs.len() != t.count {
        return Err(Error::Shape(format!(
            "{} speaker probabilities for {} speakers",
            p.probs.len(),
            t.count
        )));
    }
    Ok(-p.probs[t.index].max(PROB_FLOOR).ln())
}

pub fn total_loss(label_loss: f64, speaker_loss: f64, speaker_weight: f64) -> LossBreakdown {
    LossBreakdown {
        label_loss,
        speaker_loss,
        total: label_loss + speaker_weight * speaker_loss,
    }
}

/// Most probable speaker; ties go to the lowest index.
pub fn decode_speaker(p: &SpeakerDistribution) -> usize {
    let mut best = 0;
    for (i, &v) in p.probs.iter().enumerate() {
        if v > p.probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
    /// `d(λ_s L_s)/dv_k`, `K × n`.
    pub capsules: Matrix,
    /// `d(λ_s L_s)/d logits`.
    pub logits: Vec<f64>,
}

/// Gradients of `λ_s · L_s` with respect to the head parameters and the
/// output capsules. All zero when `λ_s = 0` or the average capsule is
/// degenerate.
pub fn head_backward(
    v: &OutputCapsuleSet,
    avg: &AverageCapsule,
    p: &SpeakerDistribution,
    t: &SpeakerTarget,
    head: &SpeakerHeadParams,
    speaker_weight: f64,
) -> HeadGradients {
    let mut g = HeadGradients {
        weight: Matrix::zeros(head.weight.rows(), head.weight.cols()),
        bias: head.bias.as_ref().map(|b| Matrix::zeros(1, b.cols())),
        capsules: Matrix::zeros(v.vectors.rows(), v.vectors.cols()),
        logits: vec![0.0; p.probs.len()],
    };
    if speaker_weight == 0.0 || avg.degenerate || p.probs[t.index] < PROB_FLOOR {
        return g;
    }
    for (i, (gl, &pi)) in g.logits.iter_mut().zip(&p.probs).enumerate() {
        let ti = if i == t.index { 1.0 } else { 0.0 };
        *gl = speaker_weight * (pi - ti);
    }
    g.weight.add_outer(&avg.z, &g.logits);
    if let Some(b) = g.bias.as_mut() {
        b.as_mut_slice().copy_from_slice(&g.logits);
    }
    let grad_z = head.weight.matvec(&g.logits);
    g.capsules = average_capsule_backward(v, avg, &grad_z);
    g
}
