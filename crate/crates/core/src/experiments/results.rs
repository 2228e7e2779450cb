//! Result files of an experiment directory.
//!
//! * `run.json`: configuration, seed, corpus name and the git-style content
//!   hash of the manifest the corpus came from.
//! * `curve.csv` or one `curve_<axis>_<value>.csv` per sweep value, with
//!   header `train_utterances,f1,stddev_f1,speaker_acc,repeats`. Failed
//!   points keep their row with empty metric fields.
//! * `summary.json`: the same figures for every curve.
//!
//! All files are written atomically.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use super::curve::{LearningCurvePoint, SweepAxis};
use crate::datasets::write_atomic;
use crate::error::{Error, Result};
use crate::features::hex;

pub const CURVE_HEADER: [&str; 5] = [
    "train_utterances",
    "f1",
    "stddev_f1",
    "speaker_acc",
    "repeats",
];

/// SHA-1 of `blob <len>\0<bytes>`, as `git hash-object` computes it.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn curve_csv(points: &[LearningCurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(format!("curve csv: {e}"));
    w.write_record(CURVE_HEADER).map_err(fail)?;
    for p in points {
        w.write_record([
            p.train_utterances.to_string(),
            opt(p.f1),
            opt(p.stddev_f1),
            opt(p.speaker_acc),
            p.repeats.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("curve csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row of a curve file read back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CurveRow {
    pub train_utterances: usize,
    pub f1: Option<f64>,
    pub stddev_f1: Option<f64>,
    pub speaker_acc: Option<f64>,
    pub repeats: usize,
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(format!("curve csv: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    if header != CURVE_HEADER {
        return Err(Error::Format(format!("unexpected curve header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("curve csv: {e}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    /// File stem of the CSV holding this curve.
    pub name: String,
    pub axis: Option<SweepAxis>,
    pub value: Option<f64>,
    pub points: Vec<LearningCurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub corpus: String,
    pub mode: String,
    pub num_blocks: usize,
    pub curves: Vec<CurveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub corpus: String,
    pub seed: u64,
    pub manifest_path: Option<String>,
    /// Git blob hash of the manifest file, when the corpus came from one.
    pub manifest_hash: Option<String>,
    pub config: serde_json::Value,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, corpus: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            corpus: corpus.into(),
            seed,
            manifest_path: None,
            manifest_hash: None,
            config,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn with_manifest_file(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.manifest_path = Some(path.display().to_string());
        self.manifest_hash = Some(git_blob_hash(&bytes));
        Ok(self)
    }
}

pub fn curve_file_name(axis: Option<SweepAxis>, value: Option<f64>) -> String {
    match (axis, value) {
        (Some(a), Some(v)) => format!("curve_{}_{v}", a.name()),
        _ => "curve".into(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    write_atomic(path, (text + "\n").as_bytes())
}

/// Writes every curve CSV plus `summary.json` into `dir`.
pub fn write_results(dir: &Path, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for c in &summary.curves {
        write_atomic(
            &dir.join(format!("{}.csv", c.name)),
            curve_csv(&c.points)?.as_bytes(),
        )?;
    }
    write_json(&dir.join("summary.json"), summary)
}
