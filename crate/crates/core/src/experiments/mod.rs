//! Evaluation protocol: metrics, training, learning curves, sweeps, the
//! train/test replication and result files.

pub mod curve;
pub mod metrics;
pub mod replication;
pub mod results;
pub mod train;

pub use curve::{
    learning_curve, repeats_for, run_sweep, CurveExperiment, CurveSchedule, LearningCurvePoint,
    SweepAxis, SweepCurve, SweepSpec, DEFAULT_NUM_BLOCKS, DEFAULT_SCHEDULE,
};
pub use metrics::{f1_score, intent_accuracy, mean_and_stddev, speaker_accuracy};
pub use replication::{
    train_test_replication, ReplicationData, ReplicationReport, REFERENCE_BASELINE,
    REFERENCE_CAPSULE,
};
pub use results::{git_blob_hash, RunManifest, Summary};
pub use train::{
    evaluate, fit, fit_with_validation, predict_all, score_predictions, Adam, EpochRecord,
    EvalMetrics, TrainConfig, TrainHistory, UtterancePrediction,
};
