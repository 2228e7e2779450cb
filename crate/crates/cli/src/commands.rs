use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use capslu_core::checkpoint::Checkpoint;
use capslu_core::datasets::{
    load_fluent, load_grabo, scan_fluent, scan_grabo, split_blocks, synth_generate, LoadReport,
    SynthSpec,
};
use capslu_core::experiments::results::{curve_file_name, write_json, write_results, CurveSummary};
use capslu_core::experiments::{
    evaluate, fit, learning_curve, predict_all, run_sweep, score_predictions,
    train_test_replication, CurveExperiment, EvalMetrics, ReplicationData, ReplicationReport,
    RunManifest, Summary, SweepAxis, TrainHistory,
};
use capslu_core::features::CacheStatus;
use capslu_core::{Corpus, Error, FeatureCache, Manifest, ModelConfig, Result, Utterance};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CorpusKind, RunConfig};

pub const CHECKPOINT_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const FEATURES_REPORT_FILE: &str = "features_report.json";
pub const REPLICATION_FILE: &str = "replication.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAIN_METRICS_FILE: &str = "train_metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const SYNTH_MANIFEST_FILE: &str = "manifest.tsv";

fn cache(cfg: &RunConfig) -> FeatureCache {
    FeatureCache::from_env_or(cfg.cache_dir(), cfg.features.clone())
}

fn existing_root(cfg: &RunConfig) -> Result<Option<&Path>> {
    if let Some(root) = cfg.corpus.root.as_deref() {
        if !root.is_dir() {
            return Err(Error::Usage(format!(
                "corpus root {} is not a readable directory",
                root.display()
            )));
        }
        return Ok(Some(root));
    }
    Ok(None)
}

fn existing_manifest(cfg: &RunConfig) -> Result<Option<&Path>> {
    if let Some(m) = cfg.corpus.manifest.as_deref() {
        if !m.is_file() {
            return Err(Error::Usage(format!(
                "corpus manifest {} does not exist",
                m.display()
            )));
        }
        return Ok(Some(m));
    }
    Ok(None)
}

/// Checks that the corpus location named in the config exists.
pub fn check_corpus_location(cfg: &RunConfig) -> Result<()> {
    existing_root(cfg)?;
    existing_manifest(cfg)?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let m = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((m, base))
}

fn log_report(report: &LoadReport) {
    for w in &report.warnings {
        warn!("{w}");
    }
    info!(
        "loaded {} utterances ({} without annotation, {} without audio skipped)",
        report.loaded, report.skipped_missing_annotation, report.skipped_missing_audio
    );
}

/// The whole corpus described by the config.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let cache = cache(cfg);
    if let Some(path) = existing_manifest(cfg)? {
        let (m, base) = read_manifest(path)?;
        if m.entries.is_empty() {
            return Err(Error::Usage(format!(
                "manifest {} lists no utterances",
                path.display()
            )));
        }
        let (corpus, report) = m.materialize(&base, Some(&cache))?;
        log_report(&report);
        return Ok(corpus);
    }
    let (corpus, report) = match cfg.corpus.name {
        CorpusKind::Synth => {
            let corpus = synth_generate(&cfg.synth_spec()?, cfg.synth_seed())?;
            let report = LoadReport {
                loaded: corpus.len(),
                ..LoadReport::default()
            };
            (corpus, report)
        }
        CorpusKind::Grabo => load_grabo(existing_root(cfg)?.expect("validated"), Some(&cache))?,
        CorpusKind::Fluent => load_fluent(existing_root(cfg)?.expect("validated"), Some(&cache))?,
    };
    log_report(&report);
    if corpus.is_empty() {
        return Err(Error::Data(format!(
            "corpus {} has no usable utterances",
            corpus.name
        )));
    }
    Ok(corpus)
}

fn model_for(cfg: &RunConfig, corpus: &Corpus) -> Result<ModelConfig> {
    let dim = corpus
        .feat_dim()
        .ok_or_else(|| Error::Usage(format!("corpus {} is empty", corpus.name)))?;
    cfg.model_for(dim, corpus.num_labels(), corpus.num_speakers())
}

fn run_manifest(cfg: &RunConfig, command: &str, corpus: &str) -> Result<RunManifest> {
    let config =
        serde_json::to_value(cfg).map_err(|e| Error::Format(format!("config encoding: {e}")))?;
    let m = RunManifest::new(command, corpus, cfg.seed, config);
    match &cfg.corpus.manifest {
        Some(path) => m.with_manifest_file(path),
        None => Ok(m),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturesReport {
    pub total: usize,
    pub computed: usize,
    pub skipped_cached: usize,
    pub failed: usize,
}

pub fn cmd_features(cfg: &RunConfig) -> Result<FeaturesReport> {
    let (manifest, base) = if let Some(path) = existing_manifest(cfg)? {
        read_manifest(path)?
    } else {
        let root = match (cfg.corpus.name, existing_root(cfg)?) {
            (CorpusKind::Synth, _) => {
                return Err(Error::Usage(
                    "synthetic corpora have no audio to extract features from".into(),
                ))
            }
            (_, Some(root)) => root,
            (_, None) => unreachable!("validated config names a root"),
        };
        let manifest = match cfg.corpus.name {
            CorpusKind::Grabo => {
                let (m, report) = scan_grabo(root)?;
                log_report(&report);
                m
            }
            _ => scan_fluent(root)?.combined(),
        };
        (manifest, root.to_path_buf())
    };
    if manifest.entries.is_empty() {
        return Err(Error::Data("the corpus lists no utterances".into()));
    }
    let cache = cache(cfg);
    let computed = AtomicUsize::new(0);
    let cached = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    manifest.entries.par_iter().for_each(|e| {
        let path = base.join(&e.audio_path);
        if path.extension().is_some_and(|x| x == "feat") && path.is_file() {
            cached.fetch_add(1, Ordering::Relaxed);
            return;
        }
        match cache.get_or_compute(&path) {
            Ok((_, CacheStatus::Hit)) => cached.fetch_add(1, Ordering::Relaxed),
            Ok((_, CacheStatus::Computed)) => computed.fetch_add(1, Ordering::Relaxed),
            Err(err) => {
                warn!("{}: {err}", e.id);
                failed.fetch_add(1, Ordering::Relaxed)
            }
        };
    });
    let report = FeaturesReport {
        total: manifest.entries.len(),
        computed: computed.into_inner(),
        skipped_cached: cached.into_inner(),
        failed: failed.into_inner(),
    };
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(FEATURES_REPORT_FILE), &report)?;
    Ok(report)
}

/// Trains on the configured training set: the train table for Fluent, the
/// whole corpus otherwise. Metrics of the fitted model on that set are
/// stored next to the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let corpus = match (cfg.corpus.name, existing_root(cfg)?) {
        (CorpusKind::Fluent, Some(root)) => {
            let splits = scan_fluent(root)?;
            let (c, report) = splits.train.materialize(root, Some(&cache(cfg)))?;
            log_report(&report);
            c
        }
        _ => load_corpus(cfg)?,
    };
    let model = model_for(cfg, &corpus)?;
    let train: Vec<&Utterance> = corpus.utterances.iter().collect();
    info!("training on {} utterances of {}", train.len(), corpus.name);
    let (params, history): (_, TrainHistory) = fit(&train, &model, &cfg.train)?;
    create_dir(&cfg.output_dir)?;
    let recipe = corpus
        .utterances
        .iter()
        .any(|u| {
            u.audio_path
                .as_ref()
                .is_some_and(|p| p.extension().is_none_or(|x| x != "feat"))
        })
        .then_some(&cfg.features);
    let ckpt = Checkpoint::new(&model, &params, &corpus.vocab, &corpus.speakers, recipe)?;
    let path = cfg.output_dir.join(CHECKPOINT_FILE);
    ckpt.write(&path)?;
    write_json(&cfg.output_dir.join(HISTORY_FILE), &history)?;
    let fitted = evaluate(&train, &params, &model, &corpus.vocab)?;
    write_json(&cfg.output_dir.join(TRAIN_METRICS_FILE), &fitted)?;
    write_json(
        &cfg.output_dir.join(RUN_MANIFEST_FILE),
        &run_manifest(cfg, "train", &corpus.name)?,
    )?;
    Ok(path)
}

pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    predictions: Option<&Path>,
) -> Result<EvalMetrics> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let (m, base) = read_manifest(manifest)?;
    if m.entries.is_empty() {
        return Err(Error::Usage(format!(
            "manifest {} lists no utterances",
            manifest.display()
        )));
    }
    ckpt.check_manifest(&m)?;
    let params = ckpt.params()?;
    let recipe = ckpt.recipe.clone().unwrap_or_default();
    let cache = FeatureCache::from_env_or(base.join("cache"), recipe);
    let (corpus, report) = m.materialize(&base, Some(&cache))?;
    log_report(&report);
    if corpus.is_empty() {
        return Err(Error::Data(format!(
            "no utterance of {} could be loaded",
            manifest.display()
        )));
    }
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let preds = predict_all(&utts, &params, &ckpt.model, &corpus.vocab)?;
    let metrics = score_predictions(&preds, &corpus.vocab)?;

    let out = predictions.map_or_else(
        || {
            checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join(PREDICTIONS_FILE)
        },
        Path::to_path_buf,
    );
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(format!("predictions: {e}"));
    w.write_record([
        "id",
        "predicted",
        "reference",
        "speaker",
        "reference_speaker",
    ])
    .map_err(fail)?;
    for p in &preds {
        let speaker = p
            .speaker
            .map(|s| corpus.speakers[s].clone())
            .unwrap_or_default();
        w.write_record([
            p.id.as_str(),
            &corpus.vocab.names(&p.labels).join(";"),
            &corpus.vocab.names(&p.reference).join(";"),
            &speaker,
            &corpus.speakers[p.reference_speaker],
        ])
        .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("predictions: {e}")))?;
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    fs::write(&out, bytes)
        .map_err(|e| Error::Usage(format!("cannot write {}: {e}", out.display())))?;
    write_json(&out.with_file_name(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

pub fn cmd_curve(cfg: &RunConfig) -> Result<PathBuf> {
    let corpus = load_corpus(cfg)?;
    let mut model = model_for(cfg, &corpus)?;
    let e = &cfg.experiment;
    if e.sweep
        .as_ref()
        .is_some_and(|s| s.axis == SweepAxis::SpeakerWeight)
    {
        model.multitask = true;
    }
    let split = split_blocks(&corpus, e.num_blocks, e.mode, cfg.split_seed())?;
    let exp = CurveExperiment {
        model,
        train: cfg.train.clone(),
        schedule: e.schedule(),
        repeats: e.repeats,
        seed: cfg.seed,
    };
    let curves = match &e.sweep {
        Some(sweep) => run_sweep(&corpus, &split, &exp, sweep)?
            .into_iter()
            .map(|c| CurveSummary {
                name: curve_file_name(Some(c.axis), Some(c.value)),
                axis: Some(c.axis),
                value: Some(c.value),
                points: c.points,
            })
            .collect(),
        None => vec![CurveSummary {
            name: curve_file_name(None, None),
            axis: None,
            value: None,
            points: learning_curve(&corpus, &split, &exp)?,
        }],
    };
    let summary = Summary {
        corpus: corpus.name.clone(),
        mode: serde_json::to_value(e.mode)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        num_blocks: e.num_blocks,
        curves,
    };
    write_results(&cfg.output_dir, &summary)?;
    write_json(
        &cfg.output_dir.join(RUN_MANIFEST_FILE),
        &run_manifest(cfg, "curve", &corpus.name)?,
    )?;
    Ok(cfg.output_dir.clone())
}

pub fn cmd_replicate_fluent(cfg: &RunConfig) -> Result<ReplicationReport> {
    if cfg.corpus.name != CorpusKind::Fluent {
        return Err(Error::Usage(
            "replicate-fluent needs corpus.name = \"fluent\"".into(),
        ));
    }
    let root = existing_root(cfg)?.ok_or_else(|| {
        Error::Usage("replicate-fluent needs corpus.root with the split tables".into())
    })?;
    let splits = scan_fluent(root)?;
    for w in &splits.warnings {
        warn!("{w}");
    }
    let (data, reports) = ReplicationData::load(&splits, root, Some(&cache(cfg)))?;
    reports.iter().for_each(log_report);
    let model = model_for(cfg, &data.full)?;
    let report = train_test_replication(&data, &model, &cfg.train)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(REPLICATION_FILE), &report)?;
    write_json(
        &cfg.output_dir.join(RUN_MANIFEST_FILE),
        &run_manifest(cfg, "replicate-fluent", &data.full.name)?,
    )?;
    Ok(report)
}

/// Writes a synthetic corpus as feature files plus a manifest and returns
/// the manifest path.
pub fn cmd_synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<PathBuf> {
    let corpus = synth_generate(spec, seed)?;
    let feat_dir = out.join("features");
    create_dir(&feat_dir)?;
    for u in &corpus.utterances {
        u.features
            .write_atomic(&feat_dir.join(format!("{}.feat", u.id)))?;
    }
    let path = out.join(SYNTH_MANIFEST_FILE);
    Manifest::from_corpus(&corpus, Path::new("features")).write(&path)?;
    Ok(path)
}
