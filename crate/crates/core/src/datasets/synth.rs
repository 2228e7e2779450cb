//! Synthetic corpora with the slot structure of real command datasets.
//!
//! Every label owns a prototype feature segment. Every speaker owns an
//! additive offset vector and a speaking-rate factor. An utterance picks one
//! label from each required group (and from each optional group with some
//! probability), concatenates their segments in group order, stretches the
//! result in time by the speaker's rate, adds the speaker offset and finally
//! Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, LabelVocabulary, Utterance};
use crate::capsnet::LabelTarget;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::multitask::SpeakerTarget;
use crate::numeric::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGroup {
    pub name: String,
    pub size: usize,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub speakers: usize,
    pub groups: Vec<SynthGroup>,
    /// Total utterance count, dealt round-robin over speakers.
    pub utterances: usize,
    pub feat_dim: usize,
    /// Standard deviation of the additive frame noise.
    pub noise_level: f64,
    pub segment_frames: usize,
    /// Standard deviation of the frame-to-frame variation inside a
    /// prototype segment around the label's spectral shape.
    pub prototype_variation: f64,
    /// Standard deviation of each speaker offset component.
    pub speaker_offset_scale: f64,
    /// Speaking-rate factors are drawn uniformly from this range.
    pub rate_range: (f64, f64),
    /// Probability that an optional group contributes a label.
    pub optional_prob: f64,
}

impl SynthSpec {
    /// 11 speakers and 33 labels in four slot groups, 4000 utterances.
    pub fn mimic_grabo() -> Self {
        let group = |name: &str, size, required| SynthGroup {
            name: name.into(),
            size,
            required,
        };
        SynthSpec {
            speakers: 11,
            groups: vec![
                group("action", 9, true),
                group("position", 14, false),
                group("speed", 4, false),
                group("angle", 6, false),
            ],
            utterances: 4000,
            feat_dim: 40,
            noise_level: 0.5,
            segment_frames: 4,
            prototype_variation: 0.3,
            speaker_offset_scale: 1.0,
            rate_range: (0.8, 1.25),
            optional_prob: 0.5,
        }
    }

    /// A small corpus for tests and smoke runs.
    pub fn tiny() -> Self {
        SynthSpec {
            speakers: 3,
            groups: vec![
                SynthGroup {
                    name: "action".into(),
                    size: 3,
                    required: true,
                },
                SynthGroup {
                    name: "object".into(),
                    size: 2,
                    required: false,
                },
            ],
            utterances: 60,
            feat_dim: 6,
            noise_level: 0.1,
            segment_frames: 3,
            prototype_variation: 0.3,
            speaker_offset_scale: 1.0,
            rate_range: (0.9, 1.1),
            optional_prob: 0.5,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mimic-grabo" => Some(Self::mimic_grabo()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("speakers", self.speakers),
            ("utterances", self.utterances),
            ("feat_dim", self.feat_dim),
            ("segment_frames", self.segment_frames),
            ("groups", self.groups.len()),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Usage(format!(
                    "synthetic corpus: {name} must be at least 1"
                )));
            }
        }
        if self.groups.iter().any(|g| g.size == 0) {
            return Err(Error::Usage(
                "synthetic corpus: every group needs at least one label".into(),
            ));
        }
        let (lo, hi) = self.rate_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Usage(format!(
                "synthetic corpus: bad rate range ({lo}, {hi})"
            )));
        }
        if !(self.noise_level >= 0.0
            && self.speaker_offset_scale >= 0.0
            && self.prototype_variation >= 0.0)
        {
            return Err(Error::Usage(
                "synthetic corpus: noise, offset and variation scales must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.optional_prob) {
            return Err(Error::Usage(
                "synthetic corpus: optional_prob must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Linear-interpolation time warp of `frames` to `len` frames.
fn stretch(frames: &[Vec<f64>], len: usize) -> Vec<Vec<f64>> {
    let src = frames.len();
    if len == src {
        return frames.to_vec();
    }
    (0..len)
        .map(|k| {
            let pos = if len == 1 {
                0.0
            } else {
                k as f64 * (src - 1) as f64 / (len - 1) as f64
            };
            let i = pos.floor() as usize;
            let j = (i + 1).min(src - 1);
            let w = pos - i as f64;
            frames[i]
                .iter()
                .zip(&frames[j])
                .map(|(a, b)| a * (1.0 - w) + b * w)
                .collect()
        })
        .collect()
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.num_labels();
    let f = spec.feat_dim;

    let mut labels = Vec::with_capacity(k);
    let mut ranges = Vec::with_capacity(spec.groups.len());
    for g in &spec.groups {
        let start = labels.len();
        labels.extend((0..g.size).map(|i| format!("{}={}{i}", g.name, &g.name[..1])));
        ranges.push(start..labels.len());
    }
    let required: Vec<&str> = spec
        .groups
        .iter()
        .filter(|g| g.required)
        .map(|g| g.name.as_str())
        .collect();
    let vocab = LabelVocabulary::from_slot_labels(labels, &required)?;

    // A label's segment is a fixed spectral shape plus a smaller
    // frame-to-frame variation, so time warping keeps it recognizable.
    let prototypes: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| {
            let shape: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
            (0..spec.segment_frames)
                .map(|_| {
                    shape
                        .iter()
                        .map(|&b| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            b + spec.prototype_variation * e
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let offset_dist =
        Normal::new(0.0, spec.speaker_offset_scale).map_err(|e| Error::Usage(e.to_string()))?;
    let speakers: Vec<(Vec<f64>, f64)> = (0..spec.speakers)
        .map(|_| {
            let offset = (0..f).map(|_| offset_dist.sample(&mut rng)).collect();
            let (lo, hi) = spec.rate_range;
            let rate = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            (offset, rate)
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_level).map_err(|e| Error::Usage(e.to_string()))?;

    let mut utterances = Vec::with_capacity(spec.utterances);
    for n in 0..spec.utterances {
        let s = n % spec.speakers;
        let mut active = Vec::new();
        for (g, range) in spec.groups.iter().zip(&ranges) {
            if g.required || rng.random_bool(spec.optional_prob) {
                active.push(rng.random_range(range.clone()));
            }
        }
        if active.is_empty() {
            active.push(rng.random_range(ranges[0].clone()));
        }
        let frames: Vec<Vec<f64>> = active
            .iter()
            .flat_map(|&l| prototypes[l].iter().cloned())
            .collect();
        let (offset, rate) = &speakers[s];
        let len = ((frames.len() as f64 * rate).round() as usize).max(1);
        let mut data = Vec::with_capacity(len * f);
        for frame in stretch(&frames, len) {
            for (c, v) in frame.into_iter().enumerate() {
                let e = if spec.noise_level > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                data.push(v + offset[c] + e);
            }
        }
        utterances.push(Utterance {
            id: format!("synth{n:05}"),
            features: FeatureMatrix::new(Matrix::from_vec(len, f, data)?)?,
            target: LabelTarget::from_indices(k, &active)?,
            speaker: SpeakerTarget::new(s, spec.speakers)?,
            audio_path: None,
        });
    }
    let corpus = Corpus {
        name: "synthetic".into(),
        utterances,
        vocab,
        speakers: (0..spec.speakers).map(|s| format!("spk{s:02}")).collect(),
    };
    corpus.validate()?;
    Ok(corpus)
}
