//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Criteria that need a downloaded corpus run only when its
//! root is given through `GRABO_ROOT` or `FLUENT_ROOT`; the Fluent criterion
//! additionally needs `CAPSLU_LONG=1`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use capslu_core::capsnet::{
    backward, decode_labels, dynamic_routing, dynamic_routing_traced, encode, forward, margin_loss,
    predict_capsules, squash, PredictionTensor, PrimaryCapsuleSet, SpeakerHeadParams,
    TransformMatrices,
};
use capslu_core::datasets::{
    load_fluent, load_grabo, split_blocks, synth_generate, BlockSplit, SlotGroup, SynthGroup,
    SynthSpec, FLUENT_LABELS, FLUENT_SPEAKERS, FLUENT_UTTERANCES, GRABO_LABELS, GRABO_SPEAKERS,
};
use capslu_core::experiments::{
    evaluate, f1_score, fit, intent_accuracy, learning_curve, run_sweep, speaker_accuracy,
    train_test_replication, CurveExperiment, CurveSchedule, LearningCurvePoint, ReplicationData,
    SweepAxis, SweepSpec, TrainConfig, REFERENCE_BASELINE, REFERENCE_CAPSULE,
};
use capslu_core::features::{add_deltas, compute_fbank, load_wav, normalize, AudioClip, LOG_FLOOR};
use capslu_core::model::utterance_loss;
use capslu_core::multitask::{
    average_capsule, decode_speaker, head_backward, speaker_distribution, speaker_loss, total_loss,
    AverageCapsule, SpeakerDistribution,
};
use capslu_core::numeric::{matmul, softmax};
use capslu_core::seed::derive_seed;
use capslu_core::{
    grad_check, loss_and_gradients, CapsNetParams, Corpus, Error, FeatureCache, FeatureMatrix,
    FeatureRecipe, LabelTarget, LabelVocabulary, Matrix, ModelConfig, OutputCapsuleSet, ParamSet,
    SpeakerTarget, SplitMode, Utterance,
};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Check {
    ensure((got - want).abs() <= tol, || {
        format!("{what}: got {got}, want {want} (tol {tol})")
    })
}

fn close_all(what: &str, got: &[f64], want: &[f64], tol: f64) -> Check {
    ensure(got.len() == want.len(), || {
        format!("{what}: length {} vs {}", got.len(), want.len())
    })?;
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        close(&format!("{what}[{i}]"), *g, *w, tol)?;
    }
    Ok(())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs `f`, turning panics into failures.
fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    id: u32,
    status: Status,
    summary: String,
}

impl Outcome {
    fn from_check(id: u32, summary: impl Into<String>, r: Check) -> Self {
        match r {
            Ok(()) => Outcome {
                id,
                status: Status::Pass,
                summary: summary.into(),
            },
            Err(e) => Outcome {
                id,
                status: Status::Fail,
                summary: format!("{}: {e}", summary.into()),
            },
        }
    }

    fn skip(id: u32, why: &str) -> Self {
        Outcome {
            id,
            status: Status::Skip,
            summary: why.into(),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_features(frames: usize, dim: usize, r: &mut ChaCha8Rng) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    FeatureMatrix::from_frames(&rows).unwrap()
}

fn caps(rows: &[&[f64]]) -> OutputCapsuleSet {
    OutputCapsuleSet::new(Matrix::from_rows(rows))
}

/// Capsules along the first axis with the given norms.
fn caps_with_norms(norms: &[f64]) -> OutputCapsuleSet {
    let rows: Vec<Vec<f64>> = norms.iter().map(|&n| vec![n, 0.0]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    caps(&refs)
}

fn tiny_model(corpus: &Corpus) -> ModelConfig {
    ModelConfig {
        feat_dim: corpus.feat_dim().unwrap(),
        encoder_hidden: 8,
        encoder_layers: 1,
        num_primary: 8,
        primary_dim: 4,
        num_output: corpus.num_labels(),
        output_dim: 4,
        routing_iters: 2,
        speaker_count: corpus.num_speakers(),
        transform_init_std: 0.3,
        ..ModelConfig::default()
    }
}

fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        learning_rate: 0.01,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------------------
// 1. Full-model gradient check

fn criterion_1() -> Outcome {
    let config = ModelConfig {
        feat_dim: 3,
        encoder_hidden: 3,
        encoder_layers: 2,
        num_primary: 3,
        primary_dim: 2,
        num_output: 4,
        output_dim: 3,
        routing_iters: 2,
        speaker_count: 3,
        speaker_weight: 0.5,
        speaker_bias: true,
        transform_init_std: 1.5,
        ..ModelConfig::default()
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    let r = guarded(|| {
        for instance in 0..3u64 {
            let c = ModelConfig {
                seed: 100 + instance,
                ..config.clone()
            };
            let params = CapsNetParams::init(&c).map_err(err)?;
            let mut names = BTreeSet::new();
            params.visit(&mut |n, _| {
                names.insert(n.split('.').next().unwrap_or(n).to_string());
            });
            ensure(
                ["encoder", "primary", "transforms", "speaker"]
                    .iter()
                    .all(|n| names.contains(*n)),
                || format!("parameter set lacks a component: {names:?}"),
            )?;
            let mut r = rng(7 + instance);
            let f = random_features(5, 3, &mut r);
            let labels: Vec<usize> = (0..4).filter(|_| r.random_bool(0.5)).collect();
            let t = LabelTarget::from_indices(4, &labels).map_err(err)?;
            let s = SpeakerTarget::new(r.random_range(0..3), 3).map_err(err)?;
            let report = grad_check(
                |q: &CapsNetParams| utterance_loss(&f, &t, &s, q, &c).unwrap().total,
                |q: &CapsNetParams| loss_and_gradients(&f, &t, &s, q, &c).unwrap().1,
                &params,
                1e-5,
            )
            .map_err(err)?;
            ensure(report.num_params_checked == params.num_scalars(), || {
                "not every scalar was checked".into()
            })?;
            checked += report.num_params_checked;
            worst = worst.max(report.max_relative_error);
            ensure(report.max_relative_error < 1e-4, || format!("{report:?}"))?;
        }
        Ok(())
    });
    Outcome::from_check(
        1,
        format!("full-model gradient check, max relative error {worst:.2e} over {checked} scalars"),
        r,
    )
}

// ---------------------------------------------------------------------------
// 2. Routing invariants

fn random_predictions(
    p: usize,
    k: usize,
    n: usize,
    scale: f64,
    seed: u64,
    symmetric: bool,
) -> PredictionTensor {
    let mut r = rng(seed);
    let mut pred = PredictionTensor::zeros(p, k, n);
    for i in 0..p {
        let first: Vec<f64> = (0..n).map(|_| scale * r.random_range(-1.0..1.0)).collect();
        for j in 0..k {
            let v = pred.get_mut(i, j);
            if symmetric || j == 0 {
                v.copy_from_slice(&first);
            } else {
                v.iter_mut()
                    .for_each(|x| *x = scale * r.random_range(-1.0..1.0));
            }
        }
    }
    pred
}

fn criterion_2() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 100,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let strategy = (
        1usize..9,
        1usize..7,
        2usize..7,
        1usize..5,
        0.01f64..10.0,
        any::<u64>(),
    );
    let result = runner.run(&strategy, |(p, k, n, r, scale, seed)| {
        let pred = random_predictions(p, k, n, scale, seed, false);
        let trace = dynamic_routing_traced(&pred, r);
        for it in &trace.iterations {
            for i in 0..p {
                let sum: f64 = it.coefficients.row(i).iter().sum();
                prop_assert!(
                    (sum - 1.0).abs() <= 1e-9,
                    "coefficient row {i} sums to {sum}"
                );
            }
        }
        let (v, _) = dynamic_routing(&pred, r);
        for &norm in &v.norms {
            prop_assert!((0.0..1.0).contains(&norm), "output norm {norm}");
        }
        let sym = random_predictions(p, k, n, scale, seed, true);
        let trace = dynamic_routing_traced(&sym, r);
        for it in trace
            .iterations
            .iter()
            .chain(std::iter::once(&trace.iterations[0]))
        {
            for &c in it.coefficients.as_slice() {
                prop_assert!(
                    (c - 1.0 / k as f64).abs() <= 1e-12,
                    "symmetric case gave c = {c}"
                );
            }
        }
        for &c in trace.final_state.coefficients.as_slice() {
            prop_assert!(
                (c - 1.0 / k as f64).abs() <= 1e-12,
                "symmetric final c = {c}"
            );
        }
        Ok(())
    });
    Outcome::from_check(
        2,
        "routing invariants on 100 random instances (row sums, norm range, symmetric case)",
        result.map_err(err),
    )
}

// ---------------------------------------------------------------------------
// 3. Zero speaker weight reduces to the baseline

fn non_head_bits(p: &CapsNetParams) -> Vec<(String, Vec<u64>)> {
    let mut out = Vec::new();
    p.visit(&mut |name, v| {
        if !name.starts_with("speaker") {
            out.push((name.to_string(), v.iter().map(|x| x.to_bits()).collect()));
        }
    });
    out
}

fn criterion_3() -> Outcome {
    let r = guarded(|| {
        let corpus = synth_generate(&SynthSpec::tiny(), 11).map_err(err)?;
        let train: Vec<&Utterance> = corpus.utterances.iter().collect();
        let multitask = ModelConfig {
            speaker_weight: 0.0,
            multitask: true,
            seed: 21,
            ..tiny_model(&corpus)
        };
        let baseline = ModelConfig {
            multitask: false,
            ..multitask.clone()
        };
        for epochs in 1..=3 {
            let tc = TrainConfig {
                patience: 10,
                ..train_config(epochs, 5)
            };
            let (pm, hm) = fit(&train, &multitask, &tc).map_err(err)?;
            let (pb, hb) = fit(&train, &baseline, &tc).map_err(err)?;
            ensure(
                hm.epochs.len() == epochs && hb.epochs.len() == epochs,
                || "early stop interfered".into(),
            )?;
            ensure(non_head_bits(&pm) == non_head_bits(&pb), || {
                format!("parameters differ from the baseline after epoch {epochs}")
            })?;
            for (a, b) in hm.epochs.iter().zip(&hb.epochs) {
                ensure(
                    a.label_loss.to_bits() == b.label_loss.to_bits()
                        && a.total.to_bits() == b.total.to_bits(),
                    || format!("epoch {} loss {} vs baseline {}", a.epoch, a.total, b.total),
                )?;
            }
        }
        Ok(())
    });
    Outcome::from_check(
        3,
        "zero speaker weight trains bit-identically to the baseline over 3 epochs",
        r,
    )
}

// ---------------------------------------------------------------------------
// 4. Scale invariance of the average capsule

fn criterion_4() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 100,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let strategy = (1usize..13, 2usize..9, any::<u64>());
    let result = runner.run(&strategy, |(k, n, seed)| {
        let mut r = rng(seed);
        let mut m = Matrix::zeros(k, n);
        m.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = r.random_range(-1.0..1.0));
        let base = average_capsule(&OutputCapsuleSet::new(m.clone()));
        for alpha in [0.1, 1.0, 10.0] {
            let mut scaled = m.clone();
            scaled.scale(alpha);
            let z = average_capsule(&OutputCapsuleSet::new(scaled));
            for (a, b) in z.z.iter().zip(&base.z) {
                prop_assert!((a - b).abs() <= 1e-9, "alpha {alpha}: {a} vs {b}");
            }
        }
        Ok(())
    });
    Outcome::from_check(
        4,
        "average capsule is scale invariant for alpha in {0.1, 1, 10}",
        result.map_err(err),
    )
}

// ---------------------------------------------------------------------------
// 5. Unit examples

struct Examples {
    passed: usize,
    skipped: Vec<String>,
    failed: Vec<String>,
}

impl Examples {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Check) {
        match guarded(f) {
            Ok(()) => self.passed += 1,
            Err(e) => self.failed.push(format!("{name}: {e}")),
        }
    }

    fn skip(&mut self, name: &str, why: &str) {
        self.skipped.push(format!("{name} ({why})"));
    }
}

fn write_wav(path: &Path, channels: u16, rate: u32, frames: &[Vec<i16>]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for f in frames {
        for &s in f {
            w.write_sample(s).unwrap();
        }
    }
    w.finalize().unwrap();
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn numeric_examples(ex: &mut Examples) {
    ex.run("matmul identity", || {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        ensure(matmul(&Matrix::identity(3), &m).map_err(err)? == m, || {
            "I·m != m".into()
        })
    });
    ex.run("matmul hand example", || {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]);
        ensure(
            matmul(&a, &b).map_err(err)? == Matrix::from_rows(&[&[3.0], &[7.0]]),
            || "wrong product".into(),
        )
    });
    ex.run("matmul zeros", || {
        let m = Matrix::from_rows(&[&[1.0, -2.0], &[3.0, 4.0]]);
        ensure(
            matmul(&Matrix::zeros(2, 2), &m).map_err(err)? == Matrix::zeros(2, 2),
            || "not zero".into(),
        )
    });
    ex.run("softmax symmetry", || {
        close_all(
            "p",
            &softmax(&[0.0; 3]).map_err(err)?,
            &[1.0 / 3.0; 3],
            1e-15,
        )
    });
    ex.run("softmax stability", || {
        let p = softmax(&[1000.0, 0.0]).map_err(err)?;
        ensure(p.iter().all(|x| x.is_finite()), || format!("{p:?}"))?;
        close_all("p", &p, &[1.0, 0.0], 1e-12)
    });
    ex.run("softmax direct evaluation", || {
        let p = softmax(&[1f64.ln(), 3f64.ln()]).map_err(err)?;
        close_all("p", &p, &[1.0 / (1.0 + 3.0), 3.0 / (1.0 + 3.0)], 1e-15)
    });
    ex.run("grad_check quadratic", || {
        let theta: Vec<f64> = vec![0.3, -1.2, 2.5, 0.01];
        let rep = grad_check(
            |t: &Vec<f64>| 0.5 * t.iter().map(|x| x * x).sum::<f64>(),
            |t| t.clone(),
            &theta,
            1e-5,
        )
        .map_err(err)?;
        ensure(rep.max_relative_error < 1e-8, || format!("{rep:?}"))
    });
    ex.run("grad_check empty set", || {
        let rep = grad_check(|_: &Vec<f64>| 1.0, |t| t.clone(), &Vec::new(), 1e-5).map_err(err)?;
        ensure(rep.num_params_checked == 0, || format!("{rep:?}"))
    });
    ex.run("grad_check doubled gradient", || {
        let theta: Vec<f64> = vec![0.7, -1.1, 3.0];
        let rep = grad_check(
            |t: &Vec<f64>| 0.5 * t.iter().map(|x| x * x).sum::<f64>(),
            |t| t.iter().map(|x| 2.0 * x).collect(),
            &theta,
            1e-5,
        )
        .map_err(err)?;
        // |g - 2g| / (|g| + |2g|) = 1/3.
        close("relative error", rep.max_relative_error, 1.0 / 3.0, 1e-6)
    });
}

fn features_examples(ex: &mut Examples) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    ex.run("load_wav silence", || {
        let p = d.join("silence.wav");
        write_wav(&p, 1, 16_000, &vec![vec![0i16]; 16_000]);
        let clip = load_wav(&p).map_err(err)?;
        ensure(
            clip.samples.len() == 16_000 && clip.samples.iter().all(|&s| s == 0.0),
            || "not 16000 zeros".into(),
        )
    });
    ex.run("load_wav stereo downmix", || {
        let p = d.join("stereo.wav");
        let frames: Vec<Vec<i16>> = (0..800)
            .map(|i| vec![(i % 50) as i16 * 100, -(i % 30) as i16 * 70])
            .collect();
        write_wav(&p, 2, 16_000, &frames);
        let clip = load_wav(&p).map_err(err)?;
        let want: Vec<f64> = frames
            .iter()
            .map(|f| (f[0] as f64 + f[1] as f64) / 2.0 / 32768.0)
            .collect();
        close_all("mono", &clip.samples, &want, 1e-12)
    });
    ex.run("load_wav 8 kHz resampling length", || {
        let p = d.join("8k.wav");
        let n = 4000;
        write_wav(&p, 1, 8_000, &vec![vec![100i16]; n]);
        let clip = load_wav(&p).map_err(err)?;
        ensure(
            clip.samples.len() == 2 * n && clip.sample_rate == 16_000,
            || format!("{} samples at {} Hz", clip.samples.len(), clip.sample_rate),
        )
    });
    ex.run("fbank tone lands in the 440 Hz bin", || {
        let samples: Vec<f64> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        let f = compute_fbank(
            &AudioClip::new(samples, 16_000).map_err(err)?,
            40,
            25.0,
            10.0,
        )
        .map_err(err)?;
        let mut energy = vec![0.0; 40];
        for t in 0..f.frames() {
            for (m, &v) in f.frame(t).iter().enumerate() {
                energy[m] += v;
            }
        }
        let best = (0..40)
            .max_by(|&a, &b| energy[a].total_cmp(&energy[b]))
            .unwrap();
        // Triangle m spans mel points m and m + 2 of 42 points spaced evenly
        // between 20 Hz and Nyquist.
        let (lo, hi) = (hz_to_mel(20.0), hz_to_mel(8000.0));
        let point = |i: usize| mel_to_hz(lo + (hi - lo) * i as f64 / 41.0);
        ensure(point(best) < 440.0 && 440.0 < point(best + 2), || {
            format!(
                "argmax bin {best} covers {:.1}..{:.1} Hz",
                point(best),
                point(best + 2)
            )
        })
    });
    ex.run("fbank silence floor", || {
        let f = compute_fbank(
            &AudioClip::new(vec![0.0; 8000], 16_000).map_err(err)?,
            40,
            25.0,
            10.0,
        )
        .map_err(err)?;
        let floor = LOG_FLOOR.ln();
        ensure(f.values().as_slice().iter().all(|&v| v == floor), || {
            "values differ from log(1e-10)".into()
        })
    });
    ex.run("fbank frame count", || {
        let f = compute_fbank(
            &AudioClip::new(vec![0.1; 16_000], 16_000).map_err(err)?,
            40,
            25.0,
            10.0,
        )
        .map_err(err)?;
        let want = 1 + (16_000 - 400) / 160;
        ensure(f.frames() == want && want == 98, || {
            format!("{} frames", f.frames())
        })
    });
    ex.run("deltas of constant features", || {
        let f = FeatureMatrix::from_frames(&vec![vec![1.5, -2.0, 0.25]; 9]).map_err(err)?;
        let d = add_deltas(&f);
        ensure(
            (0..9).all(|t| d.frame(t)[3..].iter().all(|&v| v == 0.0)),
            || "non-zero deltas".into(),
        )
    });
    ex.run("deltas triple the dimension", || {
        let f = FeatureMatrix::from_frames(&vec![vec![0.0; 40]; 5]).map_err(err)?;
        ensure(add_deltas(&f).dim() == 120, || "wrong width".into())
    });
    ex.run("deltas of a ramp", || {
        let s = 0.37;
        let f = FeatureMatrix::from_frames(
            &(0..12).map(|t| vec![s * t as f64, 1.0]).collect::<Vec<_>>(),
        )
        .map_err(err)?;
        let d = add_deltas(&f);
        // Regression over ±2 frames: Σ n (c[t+n] − c[t−n]) / (2 Σ n²) = s.
        for t in 2..10 {
            close(&format!("delta at {t}"), d.frame(t)[2], s, 1e-12)?;
        }
        Ok(())
    });
    ex.run("normalize is idempotent", || {
        let mut r = rng(4);
        let once = normalize(&random_features(20, 6, &mut r));
        let twice = normalize(&once);
        close_all(
            "values",
            twice.values().as_slice(),
            once.values().as_slice(),
            1e-9,
        )
    });
    ex.run("normalize constant coefficient", || {
        let f = FeatureMatrix::from_frames(&vec![vec![3.0]; 7]).map_err(err)?;
        ensure(
            normalize(&f).values().as_slice().iter().all(|&v| v == 0.0),
            || "not zeros".into(),
        )
    });
    ex.run("normalize two frames", || {
        let f = FeatureMatrix::from_frames(&[vec![0.0], vec![2.0]]).map_err(err)?;
        close_all(
            "values",
            normalize(&f).values().as_slice(),
            &[-1.0, 1.0],
            1e-12,
        )
    });
}

fn capsnet_examples(ex: &mut Examples) {
    ex.run("squash zero", || {
        ensure(squash(&[0.0, 0.0]) == vec![0.0, 0.0], || "not zero".into())
    });
    ex.run("squash unit norm", || {
        let s = [0.6, 0.8];
        let v = squash(&s);
        close(
            "norm",
            v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            0.5,
            1e-15,
        )?;
        close_all("direction", &[v[0] / 0.5, v[1] / 0.5], &s, 1e-15)
    });
    ex.run("squash (3, 0)", || {
        close_all("v", &squash(&[3.0, 0.0]), &[9.0 / 10.0, 0.0], 1e-15)
    });

    let u = |rows: &[&[f64]]| PrimaryCapsuleSet {
        vectors: Matrix::from_rows(rows),
    };
    ex.run("predict with identity transforms", || {
        let caps = u(&[&[0.1, -0.2], &[0.3, 0.4]]);
        let mut w = TransformMatrices::zeros(2, 3, 2, 2);
        for i in 0..2 {
            for j in 0..3 {
                w.set_pair(i, j, &Matrix::identity(2));
            }
        }
        let p = predict_capsules(&caps, &w).map_err(err)?;
        for i in 0..2 {
            for j in 0..3 {
                ensure(p.get(i, j) == caps.vectors.row(i), || {
                    format!("û[{i},{j}] != u[{i}]")
                })?;
            }
        }
        Ok(())
    });
    ex.run("predict with zero transforms", || {
        let p = predict_capsules(&u(&[&[0.5, 0.5]]), &TransformMatrices::zeros(1, 2, 3, 2))
            .map_err(err)?;
        ensure(
            (0..2).all(|j| p.get(0, j).iter().all(|&x| x == 0.0)),
            || "not zero".into(),
        )
    });
    ex.run("predict hand example", || {
        let mut w = TransformMatrices::zeros(1, 1, 2, 2);
        w.set_pair(0, 0, &Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]));
        let p = predict_capsules(&u(&[&[1.0, 1.0]]), &w).map_err(err)?;
        close_all("û", p.get(0, 0), &[3.0, 1.0], 0.0)
    });
    ex.run("routing single pass", || {
        let mut pred = PredictionTensor::zeros(1, 2, 2);
        pred.get_mut(0, 0).copy_from_slice(&[0.4, -1.0]);
        pred.get_mut(0, 1).copy_from_slice(&[2.0, 0.5]);
        let (v, state) = dynamic_routing(&pred, 1);
        close_all("c", state.coefficients.row(0), &[0.5, 0.5], 0.0)?;
        for j in 0..2 {
            let half: Vec<f64> = pred.get(0, j).iter().map(|x| 0.5 * x).collect();
            close_all(&format!("v{j}"), v.vectors.row(j), &squash(&half), 1e-15)?;
        }
        Ok(())
    });
    ex.run("routing keeps symmetric coefficients uniform", || {
        let pred = random_predictions(4, 3, 3, 1.0, 9, true);
        for r in 1..=5 {
            let (_, s) = dynamic_routing(&pred, r);
            close_all("c", s.coefficients.as_slice(), &[1.0 / 3.0; 12], 1e-15)?;
        }
        Ok(())
    });
    ex.run("routing of zero predictions", || {
        let (v, s) = dynamic_routing(&PredictionTensor::zeros(3, 2, 4), 3);
        ensure(v.vectors.as_slice().iter().all(|&x| x == 0.0), || {
            "v not zero".into()
        })?;
        close_all("c", s.coefficients.as_slice(), &[0.5; 6], 0.0)
    });

    let small = ModelConfig {
        feat_dim: 4,
        encoder_hidden: 5,
        encoder_layers: 2,
        num_primary: 6,
        primary_dim: 3,
        num_output: 5,
        output_dim: 4,
        routing_iters: 3,
        speaker_count: 3,
        seed: 17,
        ..ModelConfig::default()
    };
    ex.run("encode zero input with zero weights", || {
        let p = CapsNetParams::zeros(&small);
        let caps = encode(
            &FeatureMatrix::from_frames(&vec![vec![0.0; 4]; 6]).map_err(err)?,
            &p,
            &small,
        )
        .map_err(err)?;
        ensure(caps.vectors.as_slice().iter().all(|&x| x == 0.0), || {
            "non-zero capsules".into()
        })
    });
    ex.run("encode keeps capsule norms below one", || {
        let mut r = rng(5);
        for s in 0..10 {
            let c = ModelConfig {
                seed: s,
                ..small.clone()
            };
            let mut p = CapsNetParams::init(&c).map_err(err)?;
            p.projection.scale(20.0);
            let caps = encode(&random_features(8, 4, &mut r), &p, &c).map_err(err)?;
            for i in 0..caps.vectors.rows() {
                let n = caps
                    .vectors
                    .row(i)
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                ensure(n < 1.0, || format!("‖u_{i}‖ = {n}"))?;
            }
        }
        Ok(())
    });
    ex.run("encode is deterministic", || {
        let f = random_features(7, 4, &mut rng(6));
        let a = encode(&f, &CapsNetParams::init(&small).map_err(err)?, &small).map_err(err)?;
        let b = encode(&f, &CapsNetParams::init(&small).map_err(err)?, &small).map_err(err)?;
        let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a.vectors) == bits(&b.vectors), || {
            "outputs differ".into()
        })
    });

    let target = |t: &[bool]| LabelTarget::new(t.to_vec()).unwrap();
    ex.run("margin loss inside both margins", || {
        let l = margin_loss(
            &caps_with_norms(&[0.95, 0.05]),
            &target(&[true, false]),
            0.9,
            0.1,
            1.0,
        )
        .map_err(err)?;
        close("loss", l, 0.0, 0.0)
    });
    ex.run("margin loss direct evaluation", || {
        let l = margin_loss(
            &caps_with_norms(&[0.5, 0.5]),
            &target(&[true, false]),
            0.9,
            0.1,
            1.0,
        )
        .map_err(err)?;
        close("loss", l, (0.9 - 0.5) + (0.5 - 0.1), 1e-15)
    });
    ex.run("margin loss at the margins", || {
        let l = margin_loss(
            &caps_with_norms(&[0.1, 0.9]),
            &target(&[false, true]),
            0.9,
            0.1,
            1.0,
        )
        .map_err(err)?;
        close("loss", l, 0.0, 0.0)
    });

    let labels = |n: usize| (0..n).map(|i| format!("l{i}")).collect::<Vec<_>>();
    let group = |name: &str, labels: Vec<usize>, required: bool| SlotGroup {
        name: name.into(),
        labels,
        required,
    };
    ex.run("decode argmax of one group", || {
        let vocab =
            LabelVocabulary::new(labels(3), vec![group("a", vec![0, 1, 2], true)]).map_err(err)?;
        ensure(
            decode_labels(&caps_with_norms(&[0.9, 0.2, 0.1]), &vocab) == BTreeSet::from([0]),
            || "wrong".into(),
        )
    });
    ex.run("decode drops a weak optional group", || {
        let vocab = LabelVocabulary::new(
            labels(4),
            vec![group("a", vec![0, 1], true), group("b", vec![2, 3], false)],
        )
        .map_err(err)?;
        let got = decode_labels(&caps_with_norms(&[0.7, 0.1, 0.45, 0.3]), &vocab);
        ensure(got == BTreeSet::from([0]), || format!("{got:?}"))
    });
    ex.run("decode per-group argmax", || {
        let vocab = LabelVocabulary::new(
            labels(4),
            vec![group("a", vec![0, 1], true), group("b", vec![2, 3], true)],
        )
        .map_err(err)?;
        // Labels 1 and 4, counting from one.
        let got = decode_labels(&caps_with_norms(&[0.6, 0.4, 0.3, 0.7]), &vocab);
        ensure(got == BTreeSet::from([0, 3]), || format!("{got:?}"))
    });

    ex.run("forward output shape", || {
        let p = CapsNetParams::init(&small).map_err(err)?;
        let mut r = rng(8);
        for t in [1, 4, 30] {
            let (v, _) = forward(&random_features(t, 4, &mut r), &p, &small).map_err(err)?;
            ensure(v.vectors.shape() == (5, 4), || {
                format!("T = {t}: {:?}", v.vectors.shape())
            })?;
        }
        Ok(())
    });
    ex.run("forward ignores loudness after normalization", || {
        let mut r = rng(12);
        let samples: Vec<f64> = (0..8000)
            .map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.05 * r.random_range(-1.0..1.0))
            .collect();
        let loud: Vec<f64> = samples.iter().map(|x| 2.0 * x).collect();
        let recipe = FeatureRecipe::default();
        let a = recipe
            .extract(&AudioClip::new(samples, 16_000).map_err(err)?)
            .map_err(err)?;
        let b = recipe
            .extract(&AudioClip::new(loud, 16_000).map_err(err)?)
            .map_err(err)?;
        let c = ModelConfig {
            feat_dim: recipe.output_dim(),
            ..small.clone()
        };
        let p = CapsNetParams::init(&c).map_err(err)?;
        let (va, _) = forward(&a, &p, &c).map_err(err)?;
        let (vb, _) = forward(&b, &p, &c).map_err(err)?;
        close_all("v", vb.vectors.as_slice(), va.vectors.as_slice(), 1e-9)
    });
    ex.run("first-batch loss is identical across process runs", || {
        let dir = tempfile::tempdir().map_err(err)?;
        let (cfg, _) = synth_run(dir.path(), "[train]\nmax_epochs = 1\n");
        let mut totals = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(run);
            stdout_of(&capslu(&[
                "train",
                cfg.to_str().unwrap(),
                "--output-dir",
                out.to_str().unwrap(),
            ]))?;
            totals.push(
                json(&out.join("history.json"))["epochs"][0]["total"]
                    .as_f64()
                    .unwrap()
                    .to_bits(),
            );
        }
        ensure(totals[0] == totals[1], || {
            "losses differ between runs".into()
        })
    });
    ex.run("backward gradient check on the tiny model", || {
        let c = ModelConfig {
            feat_dim: 3,
            encoder_hidden: 3,
            encoder_layers: 1,
            num_primary: 3,
            primary_dim: 2,
            num_output: 2,
            output_dim: 2,
            routing_iters: 2,
            multitask: false,
            transform_init_std: 1.5,
            seed: 4,
            ..ModelConfig::default()
        };
        // Keep the output capsules away from zero so that the gradients
        // stay above finite-difference round-off.
        let mut p = CapsNetParams::init(&c).map_err(err)?;
        p.projection.scale(10.0);
        let f = random_features(4, 3, &mut rng(2));
        let t = LabelTarget::from_indices(2, &[1]).map_err(err)?;
        let s = SpeakerTarget::new(0, 1).map_err(err)?;
        let rep = grad_check(
            |q: &CapsNetParams| utterance_loss(&f, &t, &s, q, &c).unwrap().total,
            |q: &CapsNetParams| loss_and_gradients(&f, &t, &s, q, &c).unwrap().1,
            &p,
            1e-5,
        )
        .map_err(err)?;
        ensure(rep.max_relative_error < 1e-4, || format!("{rep:?}"))
    });
    ex.run("backward of a zero upstream gradient", || {
        let p = CapsNetParams::init(&small).map_err(err)?;
        let (_, trace) = forward(&random_features(5, 4, &mut rng(3)), &p, &small).map_err(err)?;
        let g = backward(&trace, &p, &Matrix::zeros(5, 4)).map_err(err)?;
        ensure(g.flatten().iter().all(|&x| x == 0.0), || {
            "non-zero gradient".into()
        })
    });
}

fn multitask_examples(ex: &mut Examples) {
    ex.run("average of equal capsules", || {
        let v = [0.3, -0.4, 0.12];
        let z = average_capsule(&caps(&[&v, &v, &v, &v]));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        close_all("z", &z.z, &v.map(|x| x / n), 1e-15)
    });
    ex.run("average direct evaluation", || {
        let z = average_capsule(&caps(&[&[0.6, 0.0], &[0.0, 0.8]]));
        close_all("z", &z.z, &[0.6 / 1.4, 0.8 / 1.4], 1e-15)
    });
    ex.run("average of zero capsules", || {
        let z = average_capsule(&caps(&[&[0.0, 0.0], &[0.0, 0.0]]));
        ensure(z.degenerate && z.z == vec![0.0, 0.0], || format!("{z:?}"))
    });
    let avg = |z: &[f64]| AverageCapsule {
        z: z.to_vec(),
        degenerate: false,
    };
    ex.run("zero head gives a uniform distribution", || {
        let head = SpeakerHeadParams::zeros(3, 4, true);
        let p = speaker_distribution(&avg(&[0.2, 0.5, -0.1]), &head).map_err(err)?;
        close_all("P", &p.probs, &[0.25; 4], 1e-15)
    });
    ex.run("head logits (ln 3, 0)", || {
        let mut head = SpeakerHeadParams::zeros(2, 2, true);
        head.bias = Some(Matrix::from_rows(&[&[3f64.ln(), 0.0]]));
        let p = speaker_distribution(&avg(&[0.4, 0.1]), &head).map_err(err)?;
        close_all("P", &p.probs, &[0.75, 0.25], 1e-15)
    });
    ex.run("bias shift leaves the distribution", || {
        let mut head = SpeakerHeadParams::zeros(2, 3, true);
        head.weight = Matrix::from_rows(&[&[0.3, -0.2, 0.9], &[1.1, 0.4, -0.7]]);
        head.bias = Some(Matrix::from_rows(&[&[0.1, 0.2, 0.3]]));
        let z = avg(&[0.6, 0.8]);
        let a = speaker_distribution(&z, &head).map_err(err)?;
        head.bias = Some(Matrix::from_rows(&[&[5.1, 5.2, 5.3]]));
        let b = speaker_distribution(&z, &head).map_err(err)?;
        close_all("P", &b.probs, &a.probs, 1e-15)
    });
    let dist = |p: &[f64]| SpeakerDistribution { probs: p.to_vec() };
    ex.run("speaker loss uniform", || {
        close(
            "loss",
            speaker_loss(&dist(&[0.5, 0.5]), &SpeakerTarget::new(0, 2).unwrap()).map_err(err)?,
            2f64.ln(),
            1e-15,
        )
    });
    ex.run("speaker loss certain", || {
        close(
            "loss",
            speaker_loss(&dist(&[0.0, 1.0]), &SpeakerTarget::new(1, 2).unwrap()).map_err(err)?,
            0.0,
            0.0,
        )
    });
    ex.run("speaker loss direct evaluation", || {
        let l = speaker_loss(&dist(&[0.2, 0.5, 0.3]), &SpeakerTarget::new(1, 3).unwrap())
            .map_err(err)?;
        close("loss", l, -(0.5f64.ln()), 1e-15)
    });
    ex.run("total loss without speaker weight", || {
        close("total", total_loss(0.8, 0.7, 0.0).total, 0.8, 0.0)
    });
    ex.run("total loss direct evaluation", || {
        close(
            "total",
            total_loss(0.8, 0.7, 0.1).total,
            0.8 + 0.1 * 0.7,
            1e-15,
        )
    });
    ex.run("total loss with zero speaker loss", || {
        close("total", total_loss(0.8, 0.0, 1.0).total, 0.8, 0.0)
    });
    ex.run("decode speaker argmax", || {
        ensure(decode_speaker(&dist(&[0.1, 0.8, 0.1])) == 1, || {
            "wrong".into()
        })
    });
    ex.run("decode speaker tie", || {
        ensure(decode_speaker(&dist(&[1.0 / 3.0; 3])) == 0, || {
            "wrong".into()
        })
    });
    ex.run("decode speaker close call", || {
        ensure(decode_speaker(&dist(&[0.49, 0.51])) == 1, || "wrong".into())
    });

    let v = caps(&[&[0.3, 0.1], &[-0.2, 0.5], &[0.05, 0.05]]);
    let z = average_capsule(&v);
    let mut head = SpeakerHeadParams::zeros(2, 3, true);
    head.weight = Matrix::from_rows(&[&[0.3, -0.2, 0.9], &[1.1, 0.4, -0.7]]);
    ex.run("head gradients vanish without speaker weight", || {
        let p = speaker_distribution(&z, &head).map_err(err)?;
        let g = head_backward(&v, &z, &p, &SpeakerTarget::new(2, 3).unwrap(), &head, 0.0);
        let all = g
            .weight
            .as_slice()
            .iter()
            .chain(g.bias.as_ref().unwrap().as_slice())
            .chain(g.capsules.as_slice())
            .chain(&g.logits);
        ensure(all.copied().all(|x| x == 0.0), || {
            "non-zero gradient".into()
        })
    });
    ex.run("head gradient at a perfect prediction", || {
        let g = head_backward(
            &v,
            &z,
            &dist(&[0.0, 1.0, 0.0]),
            &SpeakerTarget::new(1, 3).unwrap(),
            &head,
            1.0,
        );
        ensure(g.logits.iter().all(|x| x.abs() <= 1e-12), || {
            format!("{:?}", g.logits)
        })
    });
    ex.run("full objective gradient check", || {
        let c = ModelConfig {
            feat_dim: 2,
            encoder_hidden: 3,
            encoder_layers: 1,
            num_primary: 3,
            primary_dim: 2,
            num_output: 3,
            output_dim: 2,
            routing_iters: 2,
            speaker_count: 4,
            speaker_weight: 2.0,
            transform_init_std: 1.5,
            seed: 31,
            ..ModelConfig::default()
        };
        let p = CapsNetParams::init(&c).map_err(err)?;
        let f = random_features(3, 2, &mut rng(13));
        let t = LabelTarget::from_indices(3, &[0]).map_err(err)?;
        let s = SpeakerTarget::new(2, 4).map_err(err)?;
        let rep = grad_check(
            |q: &CapsNetParams| utterance_loss(&f, &t, &s, q, &c).unwrap().total,
            |q: &CapsNetParams| loss_and_gradients(&f, &t, &s, q, &c).unwrap().1,
            &p,
            1e-5,
        )
        .map_err(err)?;
        ensure(rep.max_relative_error < 1e-4, || format!("{rep:?}"))
    });
}

/// Segment-level nearest-neighbour labelling: segments of the first half of
/// the corpus form the dictionary, segments of the second half are
/// labelled by their nearest dictionary entry.
fn nearest_prototype_accuracy(corpus: &Corpus, seg: usize) -> f64 {
    let segments = |u: &Utterance| -> Vec<(usize, Vec<f64>)> {
        let labels: Vec<usize> = u.target.indices().into_iter().collect();
        labels
            .iter()
            .enumerate()
            .map(|(s, &l)| {
                (
                    l,
                    (s * seg..(s + 1) * seg)
                        .flat_map(|t| u.features.frame(t).to_vec())
                        .collect(),
                )
            })
            .collect()
    };
    let half = corpus.len() / 2;
    let dict: Vec<(usize, Vec<f64>)> = corpus.utterances[..half]
        .iter()
        .flat_map(segments)
        .collect();
    let (mut right, mut total) = (0, 0);
    for u in &corpus.utterances[half..] {
        for (label, x) in segments(u) {
            let nearest = dict
                .iter()
                .min_by(|a, b| {
                    let d =
                        |y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                    d(&a.1).total_cmp(&d(&b.1))
                })
                .unwrap();
            right += usize::from(nearest.0 == label);
            total += 1;
        }
    }
    right as f64 / total as f64
}

fn datasets_examples(ex: &mut Examples) {
    ex.run("GRABO shape constants", || {
        ensure(GRABO_SPEAKERS == 11 && GRABO_LABELS == 33, || {
            "wrong constants".into()
        })
    });
    match std::env::var_os("GRABO_ROOT") {
        Some(root) => ex.run("GRABO loads with 11 speakers and 33 labels", || {
            let (c, report) = load_grabo(Path::new(&root), None).map_err(err)?;
            println!(
                "    GRABO: {} utterances loaded, {} warnings",
                c.len(),
                report.warnings.len()
            );
            ensure(c.num_speakers() == 11 && c.num_labels() == 33, || {
                format!("{} speakers, {} labels", c.num_speakers(), c.num_labels())
            })
        }),
        None => ex.skip(
            "GRABO loads with 11 speakers and 33 labels",
            "GRABO_ROOT not set",
        ),
    }
    ex.run("Fluent shape constants", || {
        ensure(
            FLUENT_LABELS == 31 && FLUENT_SPEAKERS == 97 && FLUENT_UTTERANCES == 30_000,
            || "wrong constants".into(),
        )
    });
    ex.run("Fluent utterances carry one label per slot", || {
        let dir = tempfile::tempdir().map_err(err)?;
        fluent_tree(dir.path());
        let (c, _) = load_fluent(dir.path(), None).map_err(err)?;
        ensure(
            c.utterances.iter().all(|u| u.target.indices().len() == 3),
            || "not three labels".into(),
        )
    });
    match std::env::var_os("FLUENT_ROOT") {
        Some(root) => ex.run("Fluent loads with 31 labels and 97 speakers", || {
            let (c, _) = load_fluent(Path::new(&root), None).map_err(err)?;
            println!(
                "    Fluent: {} utterances, {} labels, {} speakers",
                c.len(),
                c.num_labels(),
                c.num_speakers()
            );
            ensure(
                c.utterances.iter().all(|u| u.target.indices().len() == 3),
                || "not three labels".into(),
            )?;
            ensure(c.num_labels() == 31 && c.num_speakers() == 97, || {
                format!("{} labels, {} speakers", c.num_labels(), c.num_speakers())
            })
        }),
        None => ex.skip(
            "Fluent loads with 31 labels and 97 speakers",
            "FLUENT_ROOT not set",
        ),
    }
    ex.run(
        "noise-free synthetic data is separable by nearest prototype",
        || {
            let spec = SynthSpec {
                noise_level: 0.0,
                speaker_offset_scale: 0.0,
                rate_range: (1.0, 1.0),
                utterances: 400,
                ..SynthSpec::mimic_grabo()
            };
            let acc = nearest_prototype_accuracy(
                &synth_generate(&spec, 2).map_err(err)?,
                spec.segment_frames,
            );
            close("accuracy", acc, 1.0, 0.0)
        },
    );
    ex.run("synthetic generation is deterministic", || {
        let a = synth_generate(&SynthSpec::tiny(), 9).map_err(err)?;
        let b = synth_generate(&SynthSpec::tiny(), 9).map_err(err)?;
        ensure(a == b, || "corpora differ".into())
    });
    ex.run("mimic-GRABO preset", || {
        let s = SynthSpec::preset("mimic-grabo").ok_or("preset missing")?;
        ensure(s.speakers == 11 && s.num_labels() == 33, || {
            format!("{} speakers, {} labels", s.speakers, s.num_labels())
        })
    });

    let big = SynthSpec {
        speakers: 11,
        groups: vec![SynthGroup {
            name: "action".into(),
            size: 3,
            required: true,
        }],
        utterances: 6000,
        feat_dim: 2,
        segment_frames: 1,
        ..SynthSpec::tiny()
    };
    let corpus = synth_generate(&big, 1).unwrap();
    ex.run("6000 utterances in 150 blocks of 40", || {
        let split = split_blocks(&corpus, 150, SplitMode::SpeakerIndependent, 4).map_err(err)?;
        ensure(
            split.partitions[0]
                .blocks
                .iter()
                .all(|b| b.len() == 6000 / 150),
            || "uneven blocks".into(),
        )
    });
    ex.run("blocks partition the corpus", || {
        for mode in [SplitMode::SpeakerIndependent, SplitMode::SpeakerDependent] {
            let split = split_blocks(&corpus, 150, mode, 4).map_err(err)?;
            let mut all: Vec<usize> = split
                .partitions
                .iter()
                .flat_map(|p| p.blocks.iter().flatten().copied())
                .collect();
            all.sort_unstable();
            ensure(all == (0..corpus.len()).collect::<Vec<_>>(), || {
                format!("{mode:?}: not a partition")
            })?;
        }
        Ok(())
    });
    ex.run("same seed gives the same split", || {
        let a = split_blocks(&corpus, 150, SplitMode::SpeakerDependent, 8).map_err(err)?;
        let b = split_blocks(&corpus, 150, SplitMode::SpeakerDependent, 8).map_err(err)?;
        ensure(a == b, || "splits differ".into())
    });
}

fn sets(v: &[&[usize]]) -> Vec<BTreeSet<usize>> {
    v.iter().map(|s| s.iter().copied().collect()).collect()
}

fn experiments_examples(ex: &mut Examples) {
    ex.run("F1 of perfect predictions", || {
        let r = sets(&[&[0, 2], &[1]]);
        close("F1", f1_score(&r, &r).map_err(err)?, 1.0, 0.0)
    });
    ex.run("F1 of empty predictions", || {
        close(
            "F1",
            f1_score(&sets(&[&[], &[]]), &sets(&[&[0], &[1, 2]])).map_err(err)?,
            0.0,
            0.0,
        )
    });
    ex.run("F1 direct evaluation", || {
        // TP = 1, FP = 1, FN = 1: 2·1 / (2·1 + 1 + 1).
        let f = f1_score(&sets(&[&[0, 1]]), &sets(&[&[0, 2]])).map_err(err)?;
        close("F1", f, 2.0 / 4.0, 1e-15)
    });
    ex.run("speaker accuracy all correct", || {
        close(
            "acc",
            speaker_accuracy(&[1, 2], &[1, 2]).map_err(err)?,
            1.0,
            0.0,
        )
    });
    ex.run("speaker accuracy none correct", || {
        close(
            "acc",
            speaker_accuracy(&[0, 0], &[1, 2]).map_err(err)?,
            0.0,
            0.0,
        )
    });
    ex.run("speaker accuracy counting", || {
        close(
            "acc",
            speaker_accuracy(&[0, 1, 2, 3], &[0, 1, 2, 0]).map_err(err)?,
            3.0 / 4.0,
            0.0,
        )
    });
    let vocab = LabelVocabulary::from_slot_labels(
        ["action=on", "action=off", "object=lamp", "object=fan"]
            .map(String::from)
            .to_vec(),
        &["action", "object"],
    )
    .unwrap();
    ex.run("intent accuracy all correct", || {
        let r = sets(&[&[0, 2], &[1, 3]]);
        close(
            "acc",
            intent_accuracy(&r, &r, &vocab).map_err(err)?,
            1.0,
            0.0,
        )
    });
    ex.run("intent accuracy one slot wrong", || {
        let a = intent_accuracy(
            &sets(&[&[0, 2], &[1, 2]]),
            &sets(&[&[0, 2], &[1, 3]]),
            &vocab,
        )
        .map_err(err)?;
        close("acc", a, 1.0 / 2.0, 0.0)
    });
    ex.run("intent accuracy of nothing", || {
        ensure(intent_accuracy(&[], &[], &vocab).is_err(), || {
            "no error".into()
        })
    });

    let spec = SynthSpec {
        utterances: 120,
        ..SynthSpec::tiny()
    };
    let corpus = synth_generate(&spec, 5).unwrap();
    let model = tiny_model(&corpus);
    let split = split_blocks(&corpus, 10, SplitMode::SpeakerIndependent, 3).unwrap();
    let exp = |schedule: Vec<usize>, epochs: usize| CurveExperiment {
        model: model.clone(),
        train: train_config(epochs, 0),
        schedule: CurveSchedule::new(schedule).unwrap(),
        repeats: Some(1),
        seed: 77,
    };
    ex.run(
        "one-block curve trains on block 1 and tests on the rest",
        || {
            let e = exp(vec![1], 5);
            let points = learning_curve(&corpus, &split, &e).map_err(err)?;
            ensure(points.len() == 1, || format!("{} points", points.len()))?;
            let blocks = &split.partitions[0].blocks;
            ensure(points[0].train_utterances == blocks[0].len(), || {
                "wrong train size".into()
            })?;
            // Rebuild the same job by hand.
            let job = derive_seed(e.seed, &[1, 0, 0]);
            let m = ModelConfig {
                seed: job,
                ..model.clone()
            };
            let tc = TrainConfig {
                seed: derive_seed(job, &[1]),
                ..e.train.clone()
            };
            let train: Vec<&Utterance> = blocks[0].iter().map(|&i| &corpus.utterances[i]).collect();
            let test: Vec<&Utterance> = blocks[1..]
                .iter()
                .flatten()
                .map(|&i| &corpus.utterances[i])
                .collect();
            ensure(train.len() + test.len() == corpus.len(), || {
                "blocks do not cover the corpus".into()
            })?;
            let (p, _) = fit(&train, &m, &tc).map_err(err)?;
            let f1 = evaluate(&test, &p, &m, &corpus.vocab).map_err(err)?.f1;
            ensure(points[0].f1 == Some(f1), || {
                format!("curve {:?} vs manual {f1}", points[0].f1)
            })
        },
    );
    ex.run("five of 150 GRABO-sized blocks hold 200 utterances", || {
        let c = synth_generate(
            &SynthSpec {
                utterances: 6000,
                segment_frames: 1,
                ..SynthSpec::tiny()
            },
            1,
        )
        .map_err(err)?;
        let split = split_blocks(&c, 150, SplitMode::SpeakerIndependent, 1).map_err(err)?;
        let e = CurveExperiment {
            model: ModelConfig {
                encoder_hidden: 2,
                num_primary: 2,
                primary_dim: 2,
                output_dim: 2,
                ..tiny_model(&c)
            },
            train: train_config(1, 0),
            schedule: CurveSchedule::new(vec![5]).map_err(err)?,
            repeats: Some(1),
            seed: 0,
        };
        let points = learning_curve(&c, &split, &e).map_err(err)?;
        ensure(points[0].train_utterances == 5 * 40, || {
            format!("{}", points[0].train_utterances)
        })
    });
    ex.run(
        "curve F1 grows with training data on noise-free data",
        || {
            let clean = SynthSpec {
                noise_level: 0.0,
                ..SynthSpec::tiny()
            };
            let (mut small, mut large) = (Vec::new(), Vec::new());
            for seed in 0..5 {
                let c = synth_generate(&clean, 100 + seed).map_err(err)?;
                let split =
                    split_blocks(&c, 10, SplitMode::SpeakerIndependent, seed).map_err(err)?;
                let e = CurveExperiment {
                    model: tiny_model(&c),
                    train: train_config(30, 0),
                    schedule: CurveSchedule::new(vec![1, 8]).map_err(err)?,
                    repeats: None,
                    seed,
                };
                let points = learning_curve(&c, &split, &e).map_err(err)?;
                small.push(points[0].f1.unwrap());
                large.push(points[1].f1.unwrap());
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            ensure(mean(&large) >= mean(&small), || {
                format!("largest {large:?} vs smallest {small:?}")
            })
        },
    );
    let sweep_curves = |axis: SweepAxis, values: Vec<f64>| -> Result<usize, String> {
        let sweep = SweepSpec { axis, values };
        Ok(run_sweep(&corpus, &split, &exp(vec![1], 1), &sweep)
            .map_err(err)?
            .len())
    };
    ex.run("output-dimension sweep gives three curves", || {
        let n = sweep_curves(SweepAxis::OutputDim, vec![2.0, 4.0, 8.0])?;
        ensure(n == 3, || format!("{n} curves"))
    });
    ex.run("speaker-weight sweep gives three curves", || {
        let n = sweep_curves(SweepAxis::SpeakerWeight, vec![10.0, 1.0, 0.1])?;
        ensure(n == 3, || format!("{n} curves"))
    });
    ex.run("empty sweep is a usage error", || {
        let r = run_sweep(
            &corpus,
            &split,
            &exp(vec![1], 1),
            &SweepSpec {
                axis: SweepAxis::OutputDim,
                values: vec![],
            },
        );
        ensure(matches!(r, Err(Error::Usage(_))), || format!("{r:?}"))
    });
    ex.run("replication reference numbers", || {
        ensure(
            REFERENCE_CAPSULE == (0.978, 0.981) && REFERENCE_BASELINE == (0.889, 0.966),
            || "wrong".into(),
        )
    });
    ex.run("replication on a small slotted corpus", || {
        let dir = tempfile::tempdir().map_err(err)?;
        fluent_tree(dir.path());
        let splits = capslu_core::datasets::scan_fluent(dir.path()).map_err(err)?;
        let cache = FeatureCache::new(dir.path().join("cache"), FeatureRecipe::default());
        let (data, _) = ReplicationData::load(&splits, dir.path(), Some(&cache)).map_err(err)?;
        let m = ModelConfig {
            feat_dim: 120,
            num_output: data.full.num_labels(),
            speaker_count: data.full.num_speakers(),
            ..tiny_model(&data.full)
        };
        let report = train_test_replication(&data, &m, &train_config(2, 0)).map_err(err)?;
        ensure(
            report.references.len() == 2 && report.test_utterances == 4,
            || format!("{report:?}"),
        )
    });

    let held_out = SynthSpec {
        utterances: 300,
        ..SynthSpec::tiny()
    };
    let c = synth_generate(&held_out, 8).unwrap();
    let train: Vec<&Utterance> = c.utterances[..240].iter().collect();
    let test: Vec<&Utterance> = c.utterances[240..].iter().collect();
    ex.run(
        "baseline fit reaches F1 0.95 on held-out synthetic data",
        || {
            let m = ModelConfig {
                multitask: false,
                speaker_weight: 0.0,
                ..tiny_model(&c)
            };
            let (p, _) = fit(&train, &m, &train_config(40, 1)).map_err(err)?;
            let f1 = evaluate(&test, &p, &m, &c.vocab).map_err(err)?.f1;
            ensure(f1 >= 0.95, || format!("F1 {f1}"))
        },
    );
    ex.run("loss falls over the first five epochs", || {
        for seed in 0..5 {
            let m = ModelConfig {
                seed,
                ..tiny_model(&c)
            };
            let (_, h) = fit(
                &train,
                &m,
                &TrainConfig {
                    patience: 10,
                    ..train_config(5, seed)
                },
            )
            .map_err(err)?;
            ensure(h.epochs[4].total < h.epochs[0].total, || {
                format!(
                    "seed {seed}: {} -> {}",
                    h.epochs[0].total, h.epochs[4].total
                )
            })?;
        }
        Ok(())
    });
    ex.run("history covers the epoch budget", || {
        let tc = TrainConfig {
            patience: 100,
            ..train_config(4, 0)
        };
        let (_, h) = fit(&train[..30], &tiny_model(&c), &tc).map_err(err)?;
        ensure(h.epochs.len() == 4 && !h.stopped_early, || {
            format!("{} epochs", h.epochs.len())
        })
    });
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped_config(name: &str) -> Result<Value, String> {
    let path = configs_dir().join(name);
    let out = stdout_of(&capslu(&[
        "validate-config",
        "--skip-corpus-check",
        path.to_str().unwrap(),
    ]))?;
    serde_json::from_str(&out).map_err(err)
}

fn cli_examples(ex: &mut Examples) {
    ex.run(
        "features: second run is all cache hits and totals add up",
        || {
            let dir = tempfile::tempdir().map_err(err)?;
            grabo_tree(&dir.path().join("grabo"));
            let cfg = write(
                &dir.path().join("f.toml"),
                "output_dir = \"out\"\n[corpus]\nname = \"grabo\"\nroot = \"grabo\"\n",
            );
            let runs: Vec<Value> = (0..2)
                .map(|_| {
                    stdout_of(&capslu(&["features", cfg.to_str().unwrap()]))
                        .and_then(|s| serde_json::from_str(&s).map_err(err))
                })
                .collect::<Result<_, _>>()?;
            for r in &runs {
                let sum: u64 = ["computed", "skipped_cached", "failed"]
                    .iter()
                    .map(|k| r[k].as_u64().unwrap())
                    .sum();
                ensure(sum == r["total"].as_u64().unwrap() && sum == 4, || {
                    format!("{r}")
                })?;
            }
            ensure(runs[1]["skipped_cached"] == 4, || format!("{}", runs[1]))
        },
    );
    ex.run("features: empty corpus directory fails", || {
        let dir = tempfile::tempdir().map_err(err)?;
        std::fs::create_dir_all(dir.path().join("grabo")).map_err(err)?;
        let cfg = write(
            &dir.path().join("f.toml"),
            "output_dir = \"out\"\n[corpus]\nname = \"grabo\"\nroot = \"grabo\"\n",
        );
        ensure(
            !capslu(&["features", cfg.to_str().unwrap()])
                .status
                .success(),
            || "succeeded".into(),
        )
    });
    ex.run(
        "train: zero speaker weight writes a baseline checkpoint",
        || {
            let dir = tempfile::tempdir().map_err(err)?;
            let (cfg, _) = synth_run(
                dir.path(),
                "speaker_weight = 0.0\n[train]\nmax_epochs = 1\n",
            );
            let ckpt = PathBuf::from(stdout_of(&capslu(&["train", cfg.to_str().unwrap()]))?.trim());
            ensure(json(&ckpt)["model"]["multitask"] == false, || {
                "checkpoint has a speaker head".into()
            })
        },
    );
    ex.run("train: missing corpus exits 2", || {
        let dir = tempfile::tempdir().map_err(err)?;
        let cfg = write(
            &dir.path().join("c.toml"),
            "output_dir = \"o\"\n[corpus]\nname = \"grabo\"\nroot = \"absent\"\n",
        );
        let out = capslu(&["train", cfg.to_str().unwrap()]);
        ensure(out.status.code() == Some(2), || describe(&out))
    });
    ex.run(
        "train/eval: converged run, reload and per-utterance file",
        || {
            let dir = tempfile::tempdir().map_err(err)?;
            let (cfg, manifest) = synth_run(
                dir.path(),
                "[train]\nlearning_rate = 0.01\nmax_epochs = 80\nbatch_size = 8\n",
            );
            let ckpt = PathBuf::from(stdout_of(&capslu(&["train", cfg.to_str().unwrap()]))?.trim());
            let eval: Value = serde_json::from_str(&stdout_of(&capslu(&[
                "eval",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--manifest",
                manifest.to_str().unwrap(),
            ]))?)
            .map_err(err)?;
            ensure(
                eval == json(&dir.path().join("out/train_metrics.json")),
                || "metrics changed on reload".into(),
            )?;
            let f1 = eval["f1"].as_f64().unwrap();
            ensure(f1 >= 0.95, || format!("training-set F1 {f1}"))?;
            let rows = std::fs::read_to_string(dir.path().join("out/predictions.tsv"))
                .map_err(err)?
                .lines()
                .count()
                - 1;
            ensure(rows == 60, || {
                format!("{rows} prediction rows for 60 utterances")
            })
        },
    );
    ex.run("eval: empty manifest exits 2", || {
        let dir = tempfile::tempdir().map_err(err)?;
        let (cfg, manifest) = synth_run(dir.path(), "[train]\nmax_epochs = 1\n");
        let ckpt = PathBuf::from(stdout_of(&capslu(&["train", cfg.to_str().unwrap()]))?.trim());
        let text = std::fs::read_to_string(&manifest).map_err(err)?;
        let header: String = text
            .lines()
            .take_while(|l| !l.starts_with("synth"))
            .map(|l| format!("{l}\n"))
            .collect();
        let empty = write(&dir.path().join("corpus/empty.tsv"), &header);
        let out = capslu(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            empty.to_str().unwrap(),
        ]);
        ensure(out.status.code() == Some(2), || describe(&out))
    });
    ex.run("curve: GRABO speaker-weight grid config", || {
        let c = shipped_config("grabo_independent_speaker_weight.toml")?;
        ensure(
            c["experiment"]["mode"] == "speaker_independent"
                && c["model"]["output_dim"] == 4
                && c["experiment"]["sweep"]["axis"] == "speaker_weight"
                && c["experiment"]["sweep"]["values"] == serde_json::json!([10.0, 1.0, 0.1]),
            || format!("{}", c["experiment"]),
        )
    });
    ex.run("curve: GRABO output-dimension grid config", || {
        let c = shipped_config("grabo_dependent_output_dim.toml")?;
        ensure(
            c["experiment"]["mode"] == "speaker_dependent"
                && c["model"]["speaker_weight"] == 0.0
                && c["experiment"]["sweep"]["axis"] == "output_dim"
                && c["experiment"]["sweep"]["values"]
                    == serde_json::json!([2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
            || format!("{}", c["experiment"]),
        )
    });
    ex.run("curve: Fluent independent config", || {
        let c = shipped_config("fluent_independent.toml")?;
        ensure(
            c["experiment"]["mode"] == "speaker_independent"
                && c["model"]["output_dim"] == 16
                && c["model"]["speaker_weight"] == 1.0,
            || format!("{c}"),
        )
    });
    ex.run("replicate-fluent: reference rows and parseable report", || {
        let dir = tempfile::tempdir().map_err(err)?;
        fluent_tree(&dir.path().join("fsc"));
        let cfg = write(
            &dir.path().join("r.toml"),
            &format!("output_dir = \"out\"\n[corpus]\nname = \"fluent\"\nroot = \"fsc\"\n{SMALL_MODEL}[train]\nmax_epochs = 2\n"),
        );
        let table = stdout_of(&capslu(&["replicate-fluent", cfg.to_str().unwrap()]))?;
        for needle in ["97.8", "98.1", "88.9", "96.6"] {
            ensure(table.contains(needle), || format!("{needle} missing from\n{table}"))?;
        }
        let text = std::fs::read_to_string(dir.path().join("out/replication.json")).map_err(err)?;
        serde_json::from_str::<capslu_core::experiments::ReplicationReport>(&text).map_err(err)?;
        Ok(())
    });
}

fn criterion_5() -> Outcome {
    let mut ex = Examples {
        passed: 0,
        skipped: Vec::new(),
        failed: Vec::new(),
    };
    numeric_examples(&mut ex);
    features_examples(&mut ex);
    capsnet_examples(&mut ex);
    multitask_examples(&mut ex);
    datasets_examples(&mut ex);
    experiments_examples(&mut ex);
    cli_examples(&mut ex);
    let mut summary = format!("{} unit examples passed", ex.passed);
    if !ex.skipped.is_empty() {
        summary += &format!(
            ", {} need a corpus: {}",
            ex.skipped.len(),
            ex.skipped.join("; ")
        );
    }
    let r = if ex.failed.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "{} failed:\n      {}",
            ex.failed.len(),
            ex.failed.join("\n      ")
        ))
    };
    Outcome::from_check(5, summary, r)
}

// ---------------------------------------------------------------------------
// 6. Synthetic end-to-end benchmark

fn point_closest(points: &[LearningCurvePoint], n: usize) -> Option<&LearningCurvePoint> {
    points
        .iter()
        .filter(|p| !p.failed)
        .min_by_key(|p| p.train_utterances.abs_diff(n))
}

fn criterion_6() -> Outcome {
    const BUDGET: Duration = Duration::from_secs(15 * 60);
    let r = guarded(|| {
        let dir = tempfile::tempdir().map_err(err)?;
        let cfg = configs_dir().join("synthetic_benchmark.toml");
        let start = Instant::now();
        let out = stdout_of(&capslu(&[
            "curve",
            cfg.to_str().unwrap(),
            "--output-dir",
            dir.path().to_str().unwrap(),
        ]))?;
        let elapsed = start.elapsed();
        let summary: Value = serde_json::from_str(
            &std::fs::read_to_string(Path::new(out.trim()).join("summary.json")).map_err(err)?,
        )
        .map_err(err)?;
        let points: Vec<LearningCurvePoint> =
            serde_json::from_value(summary["curves"][0]["points"].clone()).map_err(err)?;
        let p = points
            .iter()
            .find(|p| p.train_blocks == 20)
            .ok_or("no 20-block point in the curve")?;
        let (f1, spk) = (p.f1.unwrap_or(0.0), p.speaker_acc.unwrap_or(0.0));
        println!(
            "    20 blocks ({} utterances): F1 {f1:.4}, speaker accuracy {spk:.4}, {:.0} s",
            p.train_utterances,
            elapsed.as_secs_f64()
        );
        ensure(f1 >= 0.95 && spk >= 0.95 && elapsed < BUDGET, || {
            format!(
                "F1 {f1:.4}, speaker accuracy {spk:.4}, {:.0} s",
                elapsed.as_secs_f64()
            )
        })
    });
    Outcome::from_check(
        6,
        "mimic-GRABO synthetic corpus, F1 and speaker accuracy >= 0.95 by 20 blocks",
        r,
    )
}

// ---------------------------------------------------------------------------
// 7-10. Real corpora

fn real_model(corpus: &Corpus, output_dim: usize, speaker_weight: f64) -> ModelConfig {
    ModelConfig {
        feat_dim: corpus.feat_dim().unwrap(),
        num_output: corpus.num_labels(),
        speaker_count: corpus.num_speakers(),
        output_dim,
        speaker_weight,
        multitask: speaker_weight > 0.0,
        ..ModelConfig::default()
    }
}

fn real_curve(
    corpus: &Corpus,
    split: &BlockSplit,
    model: ModelConfig,
    schedule: &[usize],
) -> Result<Vec<LearningCurvePoint>, String> {
    let exp = CurveExperiment {
        model,
        train: TrainConfig::default(),
        schedule: CurveSchedule::new(schedule.to_vec()).map_err(err)?,
        repeats: None,
        seed: 0,
    };
    learning_curve(corpus, split, &exp).map_err(err)
}

fn grabo() -> Option<Corpus> {
    let root = std::env::var_os("GRABO_ROOT")?;
    let cache = FeatureCache::from_env_or(
        Path::new(&root).join(".capslu-cache"),
        FeatureRecipe::default(),
    );
    Some(
        load_grabo(Path::new(&root), Some(&cache))
            .expect("GRABO_ROOT does not hold a loadable corpus")
            .0,
    )
}

fn criterion_7(corpus: Option<&Corpus>) -> Outcome {
    let Some(c) = corpus else {
        return Outcome::skip(7, "GRABO speaker-dependent baseline: GRABO_ROOT not set");
    };
    let r = guarded(|| {
        let split = split_blocks(c, 150, SplitMode::SpeakerDependent, 0).map_err(err)?;
        let points = real_curve(c, &split, real_model(c, 8, 0.0), &[1, 2, 5, 12, 20])?;
        let p = point_closest(&points, 500).ok_or("no usable point")?;
        let f1 = p.f1.unwrap_or(0.0);
        ensure(f1 >= 0.85, || {
            format!("F1 {f1:.4} at {} utterances", p.train_utterances)
        })
    });
    Outcome::from_check(
        7,
        "GRABO speaker-dependent baseline F1 >= 0.85 near 500 utterances",
        r,
    )
}

fn criterion_8(corpus: Option<&Corpus>) -> Outcome {
    let Some(c) = corpus else {
        return Outcome::skip(8, "GRABO speaker-independent multitask: GRABO_ROOT not set");
    };
    let r = guarded(|| {
        let split = split_blocks(c, 150, SplitMode::SpeakerIndependent, 0).map_err(err)?;
        let schedule = [2, 5, 12];
        let baseline = real_curve(c, &split, real_model(c, 4, 0.0), &schedule)?;
        for lambda in [10.0, 1.0, 0.1] {
            let points = real_curve(c, &split, real_model(c, 4, lambda), &schedule)?;
            let p = point_closest(&points, 500).ok_or("no usable point")?;
            let acc = p.speaker_acc.unwrap_or(0.0);
            ensure(acc >= 0.95, || {
                format!("lambda {lambda}: speaker accuracy {acc:.4}")
            })?;
            if lambda == 10.0 {
                for k in [2, 5] {
                    let f = |ps: &[LearningCurvePoint]| {
                        ps.iter().find(|p| p.train_blocks == k).and_then(|p| p.f1)
                    };
                    let (m, b) = (f(&points), f(&baseline));
                    ensure(matches!((m, b), (Some(m), Some(b)) if m <= b), || {
                        format!("{k} blocks: lambda 10 F1 {m:?} vs baseline {b:?}")
                    })?;
                }
            }
        }
        Ok(())
    });
    Outcome::from_check(
        8,
        "GRABO speaker-independent multitask speaker accuracy and trade-off direction",
        r,
    )
}

fn criterion_9(corpus: Option<&Corpus>) -> Outcome {
    let Some(c) = corpus else {
        return Outcome::skip(9, "output-dimension insensitivity: GRABO_ROOT not set");
    };
    let r = guarded(|| {
        let split = split_blocks(c, 150, SplitMode::SpeakerDependent, 0).map_err(err)?;
        let schedule = [1, 2, 5, 12, 20];
        let last = |dim| -> Result<f64, String> {
            let ps = real_curve(c, &split, real_model(c, dim, 0.0), &schedule)?;
            ps.last()
                .and_then(|p| p.f1)
                .ok_or_else(|| "largest point failed".into())
        };
        let (a, b) = (last(2)?, last(8)?);
        ensure((a - b).abs() < 0.02, || {
            format!("n=2 F1 {a:.4}, n=8 F1 {b:.4}")
        })
    });
    Outcome::from_check(
        9,
        "GRABO F1 at the largest point within 0.02 for n = 2 and n = 8",
        r,
    )
}

fn criterion_10() -> Outcome {
    let Some(root) = std::env::var_os("FLUENT_ROOT") else {
        return Outcome::skip(10, "Fluent replication: FLUENT_ROOT not set");
    };
    if std::env::var("CAPSLU_LONG").as_deref() != Ok("1") {
        return Outcome::skip(10, "Fluent replication: long-running, set CAPSLU_LONG=1");
    }
    let r = guarded(|| {
        let root = Path::new(&root);
        let cache = FeatureCache::from_env_or(root.join(".capslu-cache"), FeatureRecipe::default());
        let splits = capslu_core::datasets::scan_fluent(root).map_err(err)?;
        let (data, _) = ReplicationData::load(&splits, root, Some(&cache)).map_err(err)?;
        let report = train_test_replication(
            &data,
            &real_model(&data.full, 16, 1.0),
            &TrainConfig::default(),
        )
        .map_err(err)?;
        println!("{}", report.table());
        ensure(report.full.test_accuracy >= 0.95, || {
            format!("full {:.4}", report.full.test_accuracy)
        })?;
        ensure(report.partial.test_accuracy >= 0.93, || {
            format!("partial {:.4}", report.partial.test_accuracy)
        })?;
        let (corpus, _) = load_fluent(root, Some(&cache)).map_err(err)?;
        let split = split_blocks(&corpus, 150, SplitMode::SpeakerIndependent, 0).map_err(err)?;
        let schedule = [1, 2, 5];
        let multi = real_curve(&corpus, &split, real_model(&corpus, 16, 1.0), &schedule)?;
        let base = real_curve(&corpus, &split, real_model(&corpus, 16, 0.0), &schedule)?;
        let (m, b) = (
            multi.last().and_then(|p| p.f1),
            base.last().and_then(|p| p.f1),
        );
        ensure(matches!((m, b), (Some(m), Some(b)) if m >= b), || {
            format!("multitask {m:?} vs baseline {b:?}")
        })
    });
    Outcome::from_check(
        10,
        "Fluent train/test accuracy and multitask curve direction",
        r,
    )
}

fn main() {
    let criteria: Vec<fn() -> Outcome> = vec![
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
    ];
    let mut outcomes = Vec::new();
    for c in criteria {
        let o = c();
        report(&o);
        outcomes.push(o);
    }
    let corpus = grabo();
    for o in [
        criterion_7(corpus.as_ref()),
        criterion_8(corpus.as_ref()),
        criterion_9(corpus.as_ref()),
        criterion_10(),
    ] {
        report(&o);
        outcomes.push(o);
    }
    let failed = outcomes
        .iter()
        .filter(|o| matches!(o.status, Status::Fail))
        .count();
    let passed = outcomes
        .iter()
        .filter(|o| matches!(o.status, Status::Pass))
        .count();
    println!(
        "acceptance: {passed} passed, {failed} failed, {} skipped",
        outcomes.len() - passed - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn report(o: &Outcome) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    println!("{tag} criterion {:>2}: {}", o.id, o.summary);
}
