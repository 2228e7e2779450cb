//! Loader for the GRABO robot-command corpus.
//!
//! Expected layout, with an optional top-level `speakers/` directory:
//!
//! ```text
//! <root>/<speaker>/spchdatadir/<recording>/<name>.wav
//! <root>/<speaker>/framedir/<recording>/<name>.xml
//! ```
//!
//! Audio and annotation are paired by their path relative to `spchdatadir`
//! and `framedir`. An annotation is a small XML document whose root tag
//! names the action and whose child elements hold slot values:
//!
//! ```xml
//! <move_abs><position>p3</position><speed>slow</speed></move_abs>
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use walkdir::WalkDir;

use super::{Corpus, LabelVocabulary, LoadReport, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::FeatureCache;

pub const GRABO_SPEAKERS: usize = 11;
pub const GRABO_LABELS: usize = 33;
/// Utterance count of a complete download. Not yet pinned: no copy of the
/// corpus was available when this loader was written.
pub const GRABO_UTTERANCES: Option<usize> = None;

const AUDIO_DIR: &str = "spchdatadir";
const FRAME_DIR: &str = "framedir";

/// Flattens one semantic frame into `slot=value` labels. The root element
/// gives `action=<tag>`; every child element with text gives
/// `<child>=<text>`.
pub fn parse_frame(xml: &str) -> Result<Vec<String>> {
    let doc = roxmltree::Document::parse(xml)
        .map_err(|e| Error::Data(format!("malformed frame: {e}")))?;
    let root = doc.root_element();
    let mut labels = vec![format!("action={}", root.tag_name().name())];
    for child in root.children().filter(|n| n.is_element()) {
        let slot = child.tag_name().name();
        let value = child.text().map(str::trim).unwrap_or("");
        if value.is_empty() {
            return Err(Error::Data(format!(
                "malformed frame: slot <{slot}> has no value"
            )));
        }
        if slot == "action" {
            return Err(Error::Data("malformed frame: slot named action".into()));
        }
        labels.push(format!("{slot}={value}"));
    }
    for l in &labels {
        if l.contains([';', '\t', '\n']) {
            return Err(Error::Data(format!(
                "malformed frame: label {l:?} contains a separator"
            )));
        }
    }
    Ok(labels)
}

fn speaker_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let base = if root.join("speakers").is_dir() {
        root.join("speakers")
    } else {
        root.to_path_buf()
    };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(&base).map_err(|e| Error::io(&base, e))? {
        let entry = entry.map_err(|e| Error::io(&base, e))?;
        let path = entry.path();
        if path.join(AUDIO_DIR).is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no speaker directories containing {AUDIO_DIR}/",
            base.display()
        )));
    }
    Ok(dirs)
}

/// Walks the corpus and builds a manifest with paths relative to `root`.
/// Audio files without an annotation are skipped and counted.
pub fn scan_grabo(root: &Path) -> Result<(Manifest, LoadReport)> {
    let mut report = LoadReport::default();
    let mut entries = Vec::new();
    let mut speakers = Vec::new();
    for (speaker, dir) in speaker_dirs(root)? {
        let audio_root = dir.join(AUDIO_DIR);
        let mut wavs: Vec<PathBuf> = WalkDir::new(&audio_root)
            .into_iter()
            .filter_map(|e| e.ok())
            .map(|e| e.into_path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        wavs.sort();
        for wav in wavs {
            let rel = wav
                .strip_prefix(&audio_root)
                .expect("walked below audio root");
            let frame = dir.join(FRAME_DIR).join(rel).with_extension("xml");
            if !frame.is_file() {
                warn!("{}: no annotation", wav.display());
                report.skipped_missing_annotation += 1;
                continue;
            }
            let xml = fs::read_to_string(&frame).map_err(|e| Error::io(&frame, e))?;
            let labels =
                parse_frame(&xml).map_err(|e| Error::Data(format!("{}: {e}", frame.display())))?;
            let stem = rel
                .with_extension("")
                .to_string_lossy()
                .replace(['/', '\\'], "_");
            entries.push(ManifestEntry {
                id: format!("{speaker}_{stem}"),
                audio_path: wav.strip_prefix(root).unwrap_or(&wav).to_path_buf(),
                speaker: speaker.clone(),
                labels,
            });
        }
        speakers.push(speaker);
    }

    let labels: BTreeSet<&String> = entries.iter().flat_map(|e| &e.labels).collect();
    let labels: Vec<String> = labels.into_iter().cloned().collect();
    let vocab = LabelVocabulary::from_slot_labels(labels, &["action"])?;
    if vocab.len() != GRABO_LABELS {
        report.warnings.push(format!(
            "found {} distinct labels, expected {GRABO_LABELS}",
            vocab.len()
        ));
    }
    if speakers.len() != GRABO_SPEAKERS {
        report.warnings.push(format!(
            "found {} speakers, expected {GRABO_SPEAKERS}",
            speakers.len()
        ));
    }
    if let Some(n) = GRABO_UTTERANCES {
        if entries.len() != n {
            report.warnings.push(format!(
                "found {} annotated utterances, expected {n}",
                entries.len()
            ));
        }
    }
    for w in &report.warnings {
        warn!("grabo: {w}");
    }
    let manifest = Manifest {
        name: "grabo".into(),
        vocab,
        speakers,
        entries,
    };
    Ok((manifest, report))
}

/// Scans and featurizes the corpus.
pub fn load_grabo(root: &Path, cache: Option<&FeatureCache>) -> Result<(Corpus, LoadReport)> {
    let (manifest, scan) = scan_grabo(root)?;
    let (corpus, mut report) = manifest.materialize(root, cache)?;
    report.skipped_missing_annotation = scan.skipped_missing_annotation;
    report.warnings.extend(scan.warnings);
    Ok((corpus, report))
}
