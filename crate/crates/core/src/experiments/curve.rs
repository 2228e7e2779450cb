//! Block-wise learning curves and parameter sweeps.
//!
//! For each schedule point `k` a fresh model is trained on the first `k`
//! blocks and tested on all remaining blocks. In speaker-dependent mode this
//! happens separately for every speaker and the results are averaged.

use std::collections::HashSet;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::mean_and_stddev;
use super::train::{evaluate, fit, TrainConfig};
use crate::capsnet::ModelConfig;
use crate::datasets::{BlockSplit, Corpus, Utterance};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const DEFAULT_SCHEDULE: [usize; 11] = [1, 2, 3, 5, 8, 12, 20, 35, 60, 100, 149];
pub const DEFAULT_NUM_BLOCKS: usize = 150;

/// Numbers of training blocks, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CurveSchedule {
    pub train_block_counts: Vec<usize>,
}

impl Default for CurveSchedule {
    fn default() -> Self {
        CurveSchedule {
            train_block_counts: DEFAULT_SCHEDULE.to_vec(),
        }
    }
}

impl CurveSchedule {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        let s = CurveSchedule {
            train_block_counts: counts,
        };
        s.check_order()?;
        Ok(s)
    }

    fn check_order(&self) -> Result<()> {
        if self.train_block_counts.is_empty() {
            return Err(Error::Usage("curve schedule is empty".into()));
        }
        if self.train_block_counts[0] == 0 {
            return Err(Error::Usage(
                "curve schedule counts must be at least 1".into(),
            ));
        }
        if self.train_block_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage(format!(
                "curve schedule {:?} is not strictly increasing",
                self.train_block_counts
            )));
        }
        Ok(())
    }

    /// Drops counts that leave no test block.
    pub fn capped(&self, num_blocks: usize) -> Self {
        CurveSchedule {
            train_block_counts: self
                .train_block_counts
                .iter()
                .copied()
                .filter(|&k| k < num_blocks)
                .collect(),
        }
    }

    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        self.check_order()?;
        let max = *self.train_block_counts.last().expect("non-empty");
        if max >= num_blocks {
            return Err(Error::Usage(format!(
                "curve point {max} leaves no test block out of {num_blocks}"
            )));
        }
        Ok(())
    }
}

/// Repeats for a point: the override if given, otherwise 3 below 10 blocks
/// and 1 from there on.
pub fn repeats_for(train_blocks: usize, fixed: Option<usize>) -> usize {
    fixed.unwrap_or(if train_blocks < 10 { 3 } else { 1 })
}

/// Everything that defines one learning curve apart from data and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExperiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: CurveSchedule,
    /// Fixed repeat count; `None` uses [`repeats_for`].
    pub repeats: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub train_blocks: usize,
    /// Training set size of each model (averaged over speakers in
    /// speaker-dependent mode).
    pub train_utterances: usize,
    pub f1: Option<f64>,
    /// Sample standard deviation of F1 over repeats.
    pub stddev_f1: Option<f64>,
    /// Absent for models without a speaker head and for failed points.
    pub speaker_acc: Option<f64>,
    pub repeats: usize,
    /// A training run diverged; metrics are left empty.
    pub failed: bool,
}

struct Job {
    point: usize,
    repeat: usize,
    partition: usize,
}

enum JobOutcome {
    Done {
        f1: f64,
        speaker_acc: Option<f64>,
        train_n: usize,
    },
    Diverged,
}

fn check_shapes(corpus: &Corpus, model: &ModelConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Usage(format!("corpus {} is empty", corpus.name)));
    }
    if corpus.feat_dim() != Some(model.feat_dim) {
        return Err(Error::Usage(format!(
            "model.feat_dim = {} but the corpus has {:?}",
            model.feat_dim,
            corpus.feat_dim()
        )));
    }
    if model.num_output != corpus.num_labels() {
        return Err(Error::Usage(format!(
            "model.num_output = {} but the corpus has {} labels",
            model.num_output,
            corpus.num_labels()
        )));
    }
    if model.multitask && model.speaker_count != corpus.num_speakers() {
        return Err(Error::Usage(format!(
            "model.speaker_count = {} but the corpus has {} speakers",
            model.speaker_count,
            corpus.num_speakers()
        )));
    }
    Ok(())
}

fn run_job(
    corpus: &Corpus,
    split: &BlockSplit,
    exp: &CurveExperiment,
    k: usize,
    job: &Job,
) -> Result<JobOutcome> {
    let part = &split.partitions[job.partition];
    let train_idx: Vec<usize> = part.blocks[..k].iter().flatten().copied().collect();
    let test_idx: Vec<usize> = part.blocks[k..].iter().flatten().copied().collect();
    let seen: HashSet<usize> = train_idx.iter().copied().collect();
    if test_idx.iter().any(|i| seen.contains(i)) {
        return Err(Error::Contract(format!(
            "train and test blocks overlap at {k} blocks"
        )));
    }
    if test_idx.is_empty() {
        return Err(Error::Usage(format!(
            "no test utterances left at {k} blocks"
        )));
    }
    let train: Vec<&Utterance> = train_idx.iter().map(|&i| &corpus.utterances[i]).collect();
    let test: Vec<&Utterance> = test_idx.iter().map(|&i| &corpus.utterances[i]).collect();
    if let Some(s) = part.speaker {
        if train.iter().any(|u| u.speaker.index != s) {
            return Err(Error::Contract(
                "speaker-dependent training set mixes speakers".into(),
            ));
        }
    }
    let job_seed = derive_seed(
        exp.seed,
        &[k as u64, job.repeat as u64, job.partition as u64],
    );
    let model = ModelConfig {
        seed: job_seed,
        ..exp.model.clone()
    };
    let tc = TrainConfig {
        seed: derive_seed(job_seed, &[1]),
        ..exp.train.clone()
    };
    let params = match fit(&train, &model, &tc) {
        Ok((p, _)) => p,
        Err(Error::Divergence(m)) => {
            warn!(
                "{k} blocks, repeat {}, partition {}: {m}",
                job.repeat, job.partition
            );
            return Ok(JobOutcome::Diverged);
        }
        Err(e) => return Err(e),
    };
    let m = evaluate(&test, &params, &model, &corpus.vocab)?;
    info!(
        "{k} blocks, repeat {}, partition {}: F1 {:.4}{}",
        job.repeat,
        job.partition,
        m.f1,
        m.speaker_accuracy
            .map(|a| format!(", speaker acc {a:.4}"))
            .unwrap_or_default()
    );
    Ok(JobOutcome::Done {
        f1: m.f1,
        speaker_acc: m.speaker_accuracy,
        train_n: train.len(),
    })
}

pub fn learning_curve(
    corpus: &Corpus,
    split: &BlockSplit,
    exp: &CurveExperiment,
) -> Result<Vec<LearningCurvePoint>> {
    check_shapes(corpus, &exp.model)?;
    exp.model.validate()?;
    exp.train.validate()?;
    exp.schedule.validate(split.num_blocks())?;
    if exp.repeats == Some(0) {
        return Err(Error::Usage("repeats must be at least 1".into()));
    }
    if split
        .partitions
        .iter()
        .any(|p| p.blocks.len() != split.num_blocks())
    {
        return Err(Error::Contract(
            "partitions have different block counts".into(),
        ));
    }
    let counts = &exp.schedule.train_block_counts;
    let mut jobs = Vec::new();
    for (point, &k) in counts.iter().enumerate() {
        for repeat in 0..repeats_for(k, exp.repeats) {
            for partition in 0..split.partitions.len() {
                jobs.push(Job {
                    point,
                    repeat,
                    partition,
                });
            }
        }
    }
    let outcomes: Vec<JobOutcome> = jobs
        .par_iter()
        .map(|j| run_job(corpus, split, exp, counts[j.point], j))
        .collect::<Result<_>>()?;

    let parts = split.partitions.len();
    let mut points = Vec::with_capacity(counts.len());
    let mut cursor = 0;
    for &k in counts {
        let repeats = repeats_for(k, exp.repeats);
        let chunk = &outcomes[cursor..cursor + repeats * parts];
        cursor += repeats * parts;
        let mut f1_per_repeat = Vec::with_capacity(repeats);
        let mut spk_per_repeat = Vec::with_capacity(repeats);
        let mut train_sizes = Vec::new();
        let mut failed = false;
        for rep in chunk.chunks(parts) {
            let (mut f1s, mut spks) = (Vec::new(), Vec::new());
            for o in rep {
                match o {
                    JobOutcome::Done {
                        f1,
                        speaker_acc,
                        train_n,
                    } => {
                        f1s.push(*f1);
                        spks.extend(*speaker_acc);
                        train_sizes.push(*train_n);
                    }
                    JobOutcome::Diverged => failed = true,
                }
            }
            f1_per_repeat.push(mean_and_stddev(&f1s).0);
            if spks.len() == rep.len() {
                spk_per_repeat.push(mean_and_stddev(&spks).0);
            }
        }
        let train_utterances = if train_sizes.is_empty() {
            split
                .partitions
                .iter()
                .map(|p| p.blocks[..k].iter().map(Vec::len).sum::<usize>())
                .sum::<usize>()
                / parts
        } else {
            (train_sizes.iter().sum::<usize>() as f64 / train_sizes.len() as f64).round() as usize
        };
        let point = if failed {
            LearningCurvePoint {
                train_blocks: k,
                train_utterances,
                f1: None,
                stddev_f1: None,
                speaker_acc: None,
                repeats,
                failed: true,
            }
        } else {
            let (f1, sd) = mean_and_stddev(&f1_per_repeat);
            LearningCurvePoint {
                train_blocks: k,
                train_utterances,
                f1: Some(f1),
                stddev_f1: Some(sd),
                speaker_acc: (spk_per_repeat.len() == repeats)
                    .then(|| mean_and_stddev(&spk_per_repeat).0),
                repeats,
                failed: false,
            }
        };
        points.push(point);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    OutputDim,
    SpeakerWeight,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::OutputDim => "output_dim",
            SweepAxis::SpeakerWeight => "speaker_weight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl SweepSpec {
    /// The model config for one sweep value.
    pub fn apply(&self, value: f64, base: &ModelConfig) -> Result<ModelConfig> {
        let mut m = base.clone();
        match self.axis {
            SweepAxis::OutputDim => {
                if value.fract() != 0.0 || value < 2.0 {
                    return Err(Error::Usage(format!(
                        "output_dim sweep value {value} is not an integer >= 2"
                    )));
                }
                m.output_dim = value as usize;
            }
            SweepAxis::SpeakerWeight => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::Usage(format!(
                        "speaker_weight sweep value {value} must be finite and >= 0"
                    )));
                }
                m.speaker_weight = value;
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self, base: &ModelConfig) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Usage("sweep has no values".into()));
        }
        for &v in &self.values {
            self.apply(v, base)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub axis: SweepAxis,
    pub value: f64,
    pub points: Vec<LearningCurvePoint>,
}

/// One learning curve per sweep value, everything else (seeds included)
/// held fixed.
pub fn run_sweep(
    corpus: &Corpus,
    split: &BlockSplit,
    base: &CurveExperiment,
    sweep: &SweepSpec,
) -> Result<Vec<SweepCurve>> {
    sweep.validate(&base.model)?;
    sweep
        .values
        .iter()
        .map(|&value| {
            let exp = CurveExperiment {
                model: sweep.apply(value, &base.model)?,
                ..base.clone()
            };
            Ok(SweepCurve {
                axis: sweep.axis,
                value,
                points: learning_curve(corpus, split, &exp)?,
            })
        })
        .collect()
}
