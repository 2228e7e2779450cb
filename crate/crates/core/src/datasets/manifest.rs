//! The canonical manifest: one utterance per line with its audio (or
//! feature) path, speaker and labels, preceded by `#` header lines that pin
//! the label vocabulary, slot groups and speaker roster.
//!
//! ```text
//! #capslu-manifest  1
//! #corpus  grabo
//! #labels  action=approach;action=grab;position=p1
//! #group  action  required  action=approach;action=grab
//! #group  position  optional  position=p1
//! #speakers  pp2;pp3
//! id  audio_path  speaker  labels
//! pp2_0001  pp2/spchdatadir/recording1/Voice_1.wav  pp2  action=approach;position=p1
//! ```
//!
//! Fields are tab separated. Relative paths resolve against the manifest's
//! directory. A path ending in `.feat` is read as a stored feature matrix
//! instead of being decoded as audio.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use super::{Corpus, LabelVocabulary, LoadReport, SlotGroup, Utterance};
use crate::capsnet::LabelTarget;
use crate::error::{Error, Result};
use crate::features::{load_wav, FeatureCache, FeatureMatrix, FeatureRecipe};
use crate::multitask::SpeakerTarget;

const MAGIC: &str = "#capslu-manifest";
const VERSION: u32 = 1;
const COLUMNS: &str = "id\taudio_path\tspeaker\tlabels";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: PathBuf,
    pub speaker: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub vocab: LabelVocabulary,
    pub speakers: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

fn check_field(what: &str, s: &str, forbid_semicolon: bool) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) || (forbid_semicolon && s.contains(';')) {
        return Err(Error::Data(format!(
            "{what} {s:?} contains a reserved separator"
        )));
    }
    Ok(())
}

impl Manifest {
    pub fn to_text(&self) -> Result<String> {
        let labels = self.vocab.labels();
        for l in labels {
            check_field("label", l, true)?;
        }
        for s in &self.speakers {
            check_field("speaker", s, true)?;
        }
        let mut out = format!(
            "{MAGIC}\t{VERSION}\n#corpus\t{}\n#labels\t{}\n",
            self.name,
            labels.join(";")
        );
        for g in self.vocab.groups() {
            check_field("group", &g.name, true)?;
            let names: Vec<&str> = g.labels.iter().map(|&k| labels[k].as_str()).collect();
            let kind = if g.required { "required" } else { "optional" };
            out.push_str(&format!(
                "#group\t{}\t{kind}\t{}\n",
                g.name,
                names.join(";")
            ));
        }
        out.push_str(&format!(
            "#speakers\t{}\n{COLUMNS}\n",
            self.speakers.join(";")
        ));
        for e in &self.entries {
            check_field("id", &e.id, false)?;
            let path = e.audio_path.to_string_lossy();
            check_field("path", &path, false)?;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.id,
                path,
                e.speaker,
                e.labels.join(";")
            ));
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad =
            |line: usize, msg: &str| Error::Format(format!("manifest line {}: {msg}", line + 1));
        let split_list = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(';').map(str::to_string).collect()
            }
        };
        let mut name = String::new();
        let mut labels: Option<Vec<String>> = None;
        let mut raw_groups: Vec<(String, bool, Vec<String>)> = Vec::new();
        let mut speakers: Option<Vec<String>> = None;
        let mut entries = Vec::new();
        let mut saw_magic = false;
        let mut saw_columns = false;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if let Some(tag) = fields[0].strip_prefix('#') {
                match (tag, fields.len()) {
                    ("capslu-manifest", 2) => {
                        let v: u32 = fields[1].parse().map_err(|_| bad(n, "bad version"))?;
                        if v != VERSION {
                            return Err(bad(n, &format!("unsupported manifest version {v}")));
                        }
                        saw_magic = true;
                    }
                    ("corpus", 2) => name = fields[1].to_string(),
                    ("labels", 2) => labels = Some(split_list(fields[1])),
                    ("group", 4) => {
                        let required = match fields[2] {
                            "required" => true,
                            "optional" => false,
                            other => return Err(bad(n, &format!("group kind {other:?}"))),
                        };
                        raw_groups.push((fields[1].to_string(), required, split_list(fields[3])));
                    }
                    ("speakers", 2) => speakers = Some(split_list(fields[1])),
                    _ => return Err(bad(n, &format!("unknown header {line:?}"))),
                }
                continue;
            }
            if !saw_magic {
                return Err(bad(n, "missing #capslu-manifest header"));
            }
            if !saw_columns {
                if line != COLUMNS {
                    return Err(bad(n, "expected the column header line"));
                }
                saw_columns = true;
                continue;
            }
            let [id, path, speaker, labs] = fields[..] else {
                return Err(bad(n, "expected 4 tab-separated fields"));
            };
            entries.push(ManifestEntry {
                id: id.to_string(),
                audio_path: PathBuf::from(path),
                speaker: speaker.to_string(),
                labels: split_list(labs),
            });
        }
        if !saw_magic {
            return Err(Error::Format(
                "manifest is empty or lacks its header".into(),
            ));
        }
        let labels = labels.ok_or_else(|| Error::Format("manifest lacks #labels".into()))?;
        let speakers = speakers.ok_or_else(|| Error::Format("manifest lacks #speakers".into()))?;
        let mut groups = Vec::new();
        for (gname, required, members) in raw_groups {
            let idx = members
                .iter()
                .map(|m| {
                    labels.iter().position(|l| l == m).ok_or_else(|| {
                        Error::Format(format!("group {gname:?} names unknown label {m:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(SlotGroup {
                name: gname,
                labels: idx,
                required,
            });
        }
        Ok(Manifest {
            name,
            vocab: LabelVocabulary::new(labels, groups)?,
            speakers,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    /// Resolves labels and speakers of every entry against the header.
    fn resolve(&self, e: &ManifestEntry) -> Result<(LabelTarget, SpeakerTarget)> {
        let idx = e
            .labels
            .iter()
            .map(|l| {
                self.vocab.index_of(l).ok_or_else(|| {
                    Error::Data(format!("{}: label {l:?} is not in the vocabulary", e.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let target = LabelTarget::from_indices(self.vocab.len(), &idx)
            .map_err(|err| Error::Data(format!("{}: {err}", e.id)))?;
        let s = self
            .speakers
            .iter()
            .position(|s| s == &e.speaker)
            .ok_or_else(|| {
                Error::Data(format!(
                    "{}: speaker {:?} is not in the roster",
                    e.id, e.speaker
                ))
            })?;
        Ok((target, SpeakerTarget::new(s, self.speakers.len())?))
    }

    /// Loads features for every entry. Audio goes through `cache` when given,
    /// otherwise it is decoded with the default recipe. Entries whose file is
    /// missing are skipped and counted.
    pub fn materialize(
        &self,
        base_dir: &Path,
        cache: Option<&FeatureCache>,
    ) -> Result<(Corpus, LoadReport)> {
        let recipe = FeatureRecipe::default();
        let loaded: Vec<Option<Utterance>> = self
            .entries
            .par_iter()
            .map(|e| -> Result<Option<Utterance>> {
                let (target, speaker) = self.resolve(e)?;
                let path = if e.audio_path.is_absolute() {
                    e.audio_path.clone()
                } else {
                    base_dir.join(&e.audio_path)
                };
                if !path.is_file() {
                    return Ok(None);
                }
                let features = if path.extension().is_some_and(|x| x == "feat") {
                    FeatureMatrix::read(&path)?
                } else if let Some(c) = cache {
                    c.get_or_compute(&path)?.0
                } else {
                    recipe.extract(&load_wav(&path)?)?
                };
                Ok(Some(Utterance {
                    id: e.id.clone(),
                    features,
                    target,
                    speaker,
                    audio_path: Some(path),
                }))
            })
            .collect::<Result<_>>()?;
        let mut report = LoadReport::default();
        let mut utterances = Vec::with_capacity(loaded.len());
        for (u, e) in loaded.into_iter().zip(&self.entries) {
            match u {
                Some(u) => utterances.push(u),
                None => {
                    warn!("{}: missing file {}", e.id, e.audio_path.display());
                    report.skipped_missing_audio += 1;
                }
            }
        }
        report.loaded = utterances.len();
        let corpus = Corpus {
            name: self.name.clone(),
            utterances,
            vocab: self.vocab.clone(),
            speakers: self.speakers.clone(),
        };
        corpus.validate()?;
        Ok((corpus, report))
    }

    /// Manifest describing `corpus`. Utterances without an audio path point to
    /// `<feature_dir>/<id>.feat`.
    pub fn from_corpus(corpus: &Corpus, feature_dir: &Path) -> Self {
        let entries = corpus
            .utterances
            .iter()
            .map(|u| ManifestEntry {
                id: u.id.clone(),
                audio_path: u
                    .audio_path
                    .clone()
                    .unwrap_or_else(|| feature_dir.join(format!("{}.feat", u.id))),
                speaker: corpus.speakers[u.speaker.index].clone(),
                labels: u
                    .target
                    .indices()
                    .into_iter()
                    .map(|k| corpus.vocab.labels()[k].clone())
                    .collect(),
            })
            .collect();
        Manifest {
            name: corpus.name.clone(),
            vocab: corpus.vocab.clone(),
            speakers: corpus.speakers.clone(),
            entries,
        }
    }
}

/// Writes bytes via a temporary sibling file and an atomic rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
