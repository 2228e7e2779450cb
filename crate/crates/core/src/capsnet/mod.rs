//! The capsule network: recurrent encoder, primary capsules, routing to one
//! output capsule per label, margin loss and norm-based decoding.

mod encoder;
mod loss;
mod model;
mod params;
mod routing;

pub use encoder::{gru_backward, gru_forward, GruParams, GruTrace};
pub use loss::{decode_labels, margin_loss, margin_loss_backward, LabelTarget};
pub use model::{backward, backward_into, encode, forward, CoreGradients, ForwardTrace};
pub use params::{CapsNetParams, EncoderLayer, SpeakerHeadParams};
pub use routing::{
    agreement, dynamic_routing, dynamic_routing_backward, dynamic_routing_traced, predict_capsules,
    predict_capsules_backward, squash, squash_backward, OutputCapsuleSet, PredictionTensor,
    PrimaryCapsuleSet, RoutingIteration, RoutingState, RoutingTrace, TransformMatrices, NORM_EPS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and loss settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feat_dim: usize,
    /// Units per direction in each bidirectional GRU layer.
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub num_primary: usize,
    pub primary_dim: usize,
    /// One output capsule per label.
    pub num_output: usize,
    pub output_dim: usize,
    pub routing_iters: usize,
    pub speaker_count: usize,
    /// Weight of the speaker cross-entropy in the total loss.
    pub speaker_weight: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    /// Multiplier on the absent-label term of the margin loss. 1.0 keeps the
    /// loss as a plain sum; 0.5 is the down-weighting common in capsule work.
    pub negative_weight: f64,
    /// Attach the speaker-identification head. Without it the model is the
    /// plain capsule baseline.
    pub multitask: bool,
    pub speaker_bias: bool,
    /// Standard deviation of the Gaussian init for each `W_ij`.
    pub transform_init_std: f64,
    /// Initial bias of the GRU update gates. Negative values make fresh
    /// units keep more of their previous state.
    pub update_gate_bias: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 120,
            encoder_hidden: 128,
            encoder_layers: 2,
            num_primary: 64,
            primary_dim: 8,
            num_output: 33,
            output_dim: 8,
            routing_iters: 3,
            speaker_count: 11,
            speaker_weight: 1.0,
            m_plus: 0.9,
            m_minus: 0.1,
            negative_weight: 1.0,
            multitask: true,
            speaker_bias: true,
            transform_init_std: 0.1,
            update_gate_bias: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feat_dim", self.feat_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("num_primary", self.num_primary),
            ("primary_dim", self.primary_dim),
            ("num_output", self.num_output),
            ("routing_iters", self.routing_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Usage(format!("model.{name} must be at least 1")));
            }
        }
        if self.output_dim < 2 {
            return Err(Error::Usage("model.output_dim must be at least 2".into()));
        }
        if !(self.m_plus > self.m_minus) {
            return Err(Error::Usage(format!(
                "model.m_plus ({}) must exceed model.m_minus ({})",
                self.m_plus, self.m_minus
            )));
        }
        if !(self.speaker_weight >= 0.0) || !self.speaker_weight.is_finite() {
            return Err(Error::Usage(
                "model.speaker_weight must be a finite value >= 0".into(),
            ));
        }
        if !(self.negative_weight >= 0.0) {
            return Err(Error::Usage("model.negative_weight must be >= 0".into()));
        }
        if self.multitask && self.speaker_count == 0 {
            return Err(Error::Usage(
                "model.speaker_count must be at least 1 with multitask".into(),
            ));
        }
        Ok(())
    }

    /// Size of the projection from the encoder readout to primary capsules.
    pub fn projection_size(&self) -> usize {
        self.num_primary * self.primary_dim
    }
}
