//! Full model objective: capsule network plus the optional speaker head.

use serde::{Deserialize, Serialize};

use crate::capsnet::{
    self, margin_loss, margin_loss_backward, CapsNetParams, LabelTarget, ModelConfig,
    OutputCapsuleSet,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::multitask::{
    average_capsule, decode_speaker, head_backward, speaker_distribution, speaker_loss, total_loss,
    AverageCapsule, LossBreakdown, SpeakerDistribution, SpeakerTarget,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub outputs: OutputCapsuleSet,
    pub average: Option<AverageCapsule>,
    pub speaker: Option<SpeakerDistribution>,
}

impl Prediction {
    pub fn speaker_index(&self) -> Option<usize> {
        self.speaker.as_ref().map(decode_speaker)
    }
}

pub fn predict(
    f: &FeatureMatrix,
    params: &CapsNetParams,
    config: &ModelConfig,
) -> Result<Prediction> {
    let (outputs, _) = capsnet::forward(f, params, config)?;
    let (average, speaker) = match &params.speaker {
        Some(head) => {
            let avg = average_capsule(&outputs);
            let dist = speaker_distribution(&avg, head)?;
            (Some(avg), Some(dist))
        }
        None => (None, None),
    };
    Ok(Prediction {
        outputs,
        average,
        speaker,
    })
}

/// `L_tot = L_l + λ_s L_s` for one utterance.
pub fn utterance_loss(
    f: &FeatureMatrix,
    target: &LabelTarget,
    speaker: &SpeakerTarget,
    params: &CapsNetParams,
    config: &ModelConfig,
) -> Result<LossBreakdown> {
    let pred = predict(f, params, config)?;
    let l_l = margin_loss(
        &pred.outputs,
        target,
        config.m_plus,
        config.m_minus,
        config.negative_weight,
    )?;
    let l_s = match &pred.speaker {
        Some(dist) => speaker_loss(dist, speaker)?,
        None => 0.0,
    };
    Ok(total_loss(l_l, l_s, config.speaker_weight))
}

/// Loss for one utterance, with its gradient added into `grads`.
pub fn accumulate_gradients(
    f: &FeatureMatrix,
    target: &LabelTarget,
    speaker: &SpeakerTarget,
    params: &CapsNetParams,
    config: &ModelConfig,
    grads: &mut CapsNetParams,
) -> Result<LossBreakdown> {
    let (outputs, trace) = capsnet::forward(f, params, config)?;
    if !outputs.norms.iter().all(|n| n.is_finite()) {
        return Err(Error::Divergence(
            "output capsules became non-finite".into(),
        ));
    }
    let l_l = margin_loss(
        &outputs,
        target,
        config.m_plus,
        config.m_minus,
        config.negative_weight,
    )?;
    let mut grad_v = margin_loss_backward(
        &outputs,
        target,
        config.m_plus,
        config.m_minus,
        config.negative_weight,
    );
    let mut l_s = 0.0;
    if let Some(head) = &params.speaker {
        let avg = average_capsule(&outputs);
        let dist = speaker_distribution(&avg, head)?;
        l_s = speaker_loss(&dist, speaker)?;
        if config.speaker_weight != 0.0 {
            let hg = head_backward(&outputs, &avg, &dist, speaker, head, config.speaker_weight);
            let gh = grads
                .speaker
                .as_mut()
                .ok_or_else(|| Error::Contract("gradient buffer lacks a speaker head".into()))?;
            gh.weight.add_scaled(1.0, &hg.weight);
            if let (Some(b), Some(gb)) = (gh.bias.as_mut(), hg.bias.as_ref()) {
                b.add_scaled(1.0, gb);
            }
            grad_v.add_scaled(1.0, &hg.capsules);
        }
    }
    capsnet::backward_into(&trace, params, &grad_v, grads)?;
    Ok(total_loss(l_l, l_s, config.speaker_weight))
}

pub fn loss_and_gradients(
    f: &FeatureMatrix,
    target: &LabelTarget,
    speaker: &SpeakerTarget,
    params: &CapsNetParams,
    config: &ModelConfig,
) -> Result<(LossBreakdown, CapsNetParams)> {
    let mut grads = params.zeros_like();
    let loss = accumulate_gradients(f, target, speaker, params, config, &mut grads)?;
    Ok((loss, grads))
}
