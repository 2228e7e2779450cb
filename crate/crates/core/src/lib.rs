//! Capsule networks for spoken language understanding with an auxiliary
//! speaker-identification objective.
//!
//! A bidirectional GRU encodes filterbank features into primary capsules,
//! dynamic routing produces one output capsule per label, and the length of
//! each output capsule scores its label. The multitask head averages the
//! output capsules and classifies the speaker from that average.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capsnet;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod features;
pub mod model;
pub mod multitask;
pub mod numeric;
pub mod seed;

pub use capsnet::{CapsNetParams, LabelTarget, ModelConfig, OutputCapsuleSet};
pub use datasets::{Corpus, LabelVocabulary, Manifest, SplitMode, SynthSpec, Utterance};
pub use error::{Error, Result};
pub use features::{FeatureCache, FeatureMatrix, FeatureRecipe};
pub use model::{loss_and_gradients, predict, Prediction};
pub use multitask::{LossBreakdown, SpeakerTarget};
pub use numeric::{grad_check, GradCheckReport, Matrix, ParamSet};
