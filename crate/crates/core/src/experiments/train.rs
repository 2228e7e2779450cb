//! Mini-batch training with Adam, and batch evaluation.

use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_score, intent_accuracy, speaker_accuracy};
use crate::capsnet::{decode_labels, CapsNetParams, ModelConfig};
use crate::datasets::{LabelVocabulary, Utterance};
use crate::error::{Error, Result};
use crate::model::{accumulate_gradients, predict};
use crate::numeric::ParamSet;

/// Utterances per gradient work unit. Each unit is summed sequentially and
/// units are combined in order, so results do not depend on thread count.
const GRAD_CHUNK: usize = 4;
/// Batches are formed from windows of this many batches' worth of
/// utterances sorted by length.
const BUCKET_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without enough improvement.
    pub patience: usize,
    /// Smallest decrease of the mean training loss that counts as progress.
    pub min_delta: f64,
    /// Seed for batch order. Curve jobs overwrite it with a derived seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 60,
            patience: 5,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Usage(
                "train.batch_size and train.max_epochs must be at least 1".into(),
            ));
        }
        let rates_ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.min_delta >= 0.0;
        if !rates_ok {
            return Err(Error::Usage(
                "train: need learning_rate > 0, betas in [0, 1), epsilon > 0, min_delta >= 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are kept in the flattened parameter
/// order.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: &TrainConfig, num_params: usize) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        let g = grads.flatten();
        assert_eq!(
            g.len(),
            self.m.len(),
            "optimizer sized for a different model"
        );
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut i = 0;
        self.params_update(params, &g, c1, c2, &mut i);
    }

    fn params_update<P: ParamSet>(
        &mut self,
        params: &mut P,
        g: &[f64],
        c1: f64,
        c2: f64,
        i: &mut usize,
    ) {
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        params.visit_mut(&mut |_, theta| {
            for x in theta.iter_mut() {
                let k = *i;
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                *x -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *i += 1;
            }
        });
    }
}

/// Mean losses over one epoch's utterances, measured before each update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub label_loss: f64,
    pub speaker_loss: f64,
    pub total: f64,
    /// Validation score when training with a validation set.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch whose parameters were kept (the last one without validation).
    pub selected_epoch: usize,
}

/// Shuffled batches. Utterances are grouped into windows, sorted by length
/// inside each window and cut into batches; batch order is shuffled again.
fn epoch_batches(
    n: usize,
    lengths: &[usize],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(n.div_ceil(batch));
    for window in order.chunks_mut(batch * BUCKET_WINDOW) {
        window.sort_by_key(|&i| lengths[i]);
        batches.extend(window.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

struct BatchResult {
    grads: CapsNetParams,
    label_loss: f64,
    speaker_loss: f64,
    total: f64,
}

fn batch_gradient(
    batch: &[&Utterance],
    params: &CapsNetParams,
    config: &ModelConfig,
) -> Result<BatchResult> {
    let partials: Vec<BatchResult> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = BatchResult {
                grads: params.zeros_like(),
                label_loss: 0.0,
                speaker_loss: 0.0,
                total: 0.0,
            };
            for u in chunk {
                let l = accumulate_gradients(
                    &u.features,
                    &u.target,
                    &u.speaker,
                    params,
                    config,
                    &mut acc.grads,
                )?;
                if !l.total.is_finite() {
                    return Err(Error::Divergence(format!(
                        "loss became {} on {}",
                        l.total, u.id
                    )));
                }
                acc.label_loss += l.label_loss;
                acc.speaker_loss += l.speaker_loss;
                acc.total += l.total;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let mut sum = iter.next().expect("non-empty batch");
    for p in iter {
        sum.grads.add_assign(&p.grads);
        sum.label_loss += p.label_loss;
        sum.speaker_loss += p.speaker_loss;
        sum.total += p.total;
    }
    sum.grads.scale(1.0 / batch.len() as f64);
    if !sum.grads.is_finite() {
        return Err(Error::Divergence("gradient became non-finite".into()));
    }
    Ok(sum)
}

fn check_data(train: &[&Utterance], model: &ModelConfig) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    for u in train {
        if u.features.dim() != model.feat_dim {
            return Err(Error::Usage(format!(
                "{}: feature dimension {} but model.feat_dim = {}",
                u.id,
                u.features.dim(),
                model.feat_dim
            )));
        }
        if u.target.len() != model.num_output {
            return Err(Error::Usage(format!(
                "{}: {} labels but model.num_output = {}",
                u.id,
                u.target.len(),
                model.num_output
            )));
        }
        if model.multitask && u.speaker.count != model.speaker_count {
            return Err(Error::Usage(format!(
                "{}: {} speakers but model.speaker_count = {}",
                u.id, u.speaker.count, model.speaker_count
            )));
        }
    }
    Ok(())
}

/// Scores the current parameters on a held-out set; higher is better.
pub type Validator<'a> = dyn Fn(&CapsNetParams) -> Result<f64> + Sync + 'a;

/// Trains from a fresh initialization seeded by `model.seed`.
pub fn fit(
    train: &[&Utterance],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(CapsNetParams, TrainHistory)> {
    fit_inner(train, model, config, None)
}

/// Like [`fit`], but scores every epoch with `validate` and keeps the best
/// scoring parameters (earliest epoch on ties).
pub fn fit_with_validation(
    train: &[&Utterance],
    model: &ModelConfig,
    config: &TrainConfig,
    validate: &Validator<'_>,
) -> Result<(CapsNetParams, TrainHistory)> {
    fit_inner(train, model, config, Some(validate))
}

fn fit_inner(
    train: &[&Utterance],
    model: &ModelConfig,
    config: &TrainConfig,
    validate: Option<&Validator<'_>>,
) -> Result<(CapsNetParams, TrainHistory)> {
    model.validate()?;
    config.validate()?;
    check_data(train, model)?;
    let mut params = CapsNetParams::init(model)?;
    let mut adam = Adam::new(config, params.num_scalars());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lengths: Vec<usize> = train.iter().map(|u| u.features.frames()).collect();
    let mut history = TrainHistory::default();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let mut best_valid: Option<(f64, CapsNetParams)> = None;

    for epoch in 1..=config.max_epochs {
        let (mut ll, mut ls, mut lt) = (0.0, 0.0, 0.0);
        for batch in epoch_batches(train.len(), &lengths, config.batch_size, &mut rng) {
            let members: Vec<&Utterance> = batch.iter().map(|&i| train[i]).collect();
            let r = batch_gradient(&members, &params, model)?;
            ll += r.label_loss;
            ls += r.speaker_loss;
            lt += r.total;
            adam.step(&mut params, &r.grads);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!(
                "parameters became non-finite in epoch {epoch}"
            )));
        }
        let n = train.len() as f64;
        let mut record = EpochRecord {
            epoch,
            label_loss: ll / n,
            speaker_loss: ls / n,
            total: lt / n,
            validation: None,
        };
        if let Some(score) = validate {
            let s = score(&params)?;
            record.validation = Some(s);
            if best_valid.as_ref().is_none_or(|(b, _)| s > *b) {
                best_valid = Some((s, params.clone()));
                history.selected_epoch = epoch;
            }
        } else {
            history.selected_epoch = epoch;
        }
        debug!(
            "epoch {epoch}: L_l {:.5} L_s {:.5} L_tot {:.5}{}",
            record.label_loss,
            record.speaker_loss,
            record.total,
            record
                .validation
                .map(|v| format!(" valid {v:.4}"))
                .unwrap_or_default()
        );
        history.epochs.push(record);

        if best_loss - record.total < config.min_delta {
            stale += 1;
        } else {
            stale = 0;
        }
        best_loss = best_loss.min(record.total);
        if stale >= config.patience {
            info!("early stop after epoch {epoch}");
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, best)) = best_valid {
        params = best;
    }
    Ok((params, history))
}

/// Decoded output for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePrediction {
    pub id: String,
    pub labels: BTreeSet<usize>,
    pub reference: BTreeSet<usize>,
    pub speaker: Option<usize>,
    pub reference_speaker: usize,
}

pub fn predict_all(
    utterances: &[&Utterance],
    params: &CapsNetParams,
    model: &ModelConfig,
    vocab: &LabelVocabulary,
) -> Result<Vec<UtterancePrediction>> {
    utterances
        .par_iter()
        .map(|u| {
            let p = predict(&u.features, params, model)?;
            Ok(UtterancePrediction {
                id: u.id.clone(),
                labels: decode_labels(&p.outputs, vocab),
                reference: u.target.indices(),
                speaker: p.speaker_index(),
                reference_speaker: u.speaker.index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub utterances: usize,
    pub f1: f64,
    pub intent_accuracy: Option<f64>,
    pub speaker_accuracy: Option<f64>,
}

/// Metrics recomputed purely from stored predictions.
pub fn score_predictions(
    preds: &[UtterancePrediction],
    vocab: &LabelVocabulary,
) -> Result<EvalMetrics> {
    if preds.is_empty() {
        return Err(Error::Usage("nothing to evaluate".into()));
    }
    let p: Vec<BTreeSet<usize>> = preds.iter().map(|x| x.labels.clone()).collect();
    let r: Vec<BTreeSet<usize>> = preds.iter().map(|x| x.reference.clone()).collect();
    let speaker = match preds.iter().map(|x| x.speaker).collect::<Option<Vec<_>>>() {
        Some(s) => {
            let refs: Vec<usize> = preds.iter().map(|x| x.reference_speaker).collect();
            Some(speaker_accuracy(&s, &refs)?)
        }
        None => None,
    };
    Ok(EvalMetrics {
        utterances: preds.len(),
        f1: f1_score(&p, &r)?,
        intent_accuracy: if vocab.has_slots() {
            Some(intent_accuracy(&p, &r, vocab)?)
        } else {
            None
        },
        speaker_accuracy: speaker,
    })
}

pub fn evaluate(
    utterances: &[&Utterance],
    params: &CapsNetParams,
    model: &ModelConfig,
    vocab: &LabelVocabulary,
) -> Result<EvalMetrics> {
    score_predictions(&predict_all(utterances, params, model, vocab)?, vocab)
}
