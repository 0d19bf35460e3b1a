//! Manifests, feature files, augmentation, synthetic corpora, and folds.

mod augment;
mod split;
mod synth;

pub use augment::{add_noise, augment, augment_frames, time_mask, AugmentInfo, MASK_RATIO_RANGE, SNR_RANGE_DB};
pub use split::{folds_for_speakers, split_folds, split_speakers, Fold, SplitScheme};
pub use synth::{synth_corpus, SynthCorpus, SynthOptions};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Maximum utterance duration kept for training and evaluation.
pub const MAX_SECONDS: f64 = 6.0;
pub const DEFAULT_FRAME_RATE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral = 0,
    Happy = 1,
    Sad = 2,
    Angry = 3,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Emotion::Neutral, Emotion::Happy, Emotion::Sad, Emotion::Angry];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
        }
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unsupported emotion label {s:?}")))
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            "unknown" => Ok(Gender::Unknown),
            other => Err(Error::Data(format!("unsupported gender {other:?}"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub features_path: String,
    pub label: Emotion,
    pub speaker: String,
    pub gender: Gender,
    pub n_frames: usize,
}

/// On-disk line shape; enum fields are validated separately so that an
/// unknown label is a data error rather than a parse error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    features_path: String,
    label: String,
    speaker: String,
    gender: String,
    n_frames: usize,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let with_line = |e: Error| match e {
            Error::Data(m) => Error::Data(format!("line {line_no}: {m}")),
            other => other,
        };
        let label = raw.label.parse::<Emotion>().map_err(with_line)?;
        let gender = raw.gender.parse::<Gender>().map_err(with_line)?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Data(format!("line {line_no}: duplicate id {:?}", raw.id)));
        }
        entries.push(ManifestEntry {
            id: raw.id,
            features_path: raw.features_path,
            label,
            speaker: raw.speaker,
            gender,
            n_frames: raw.n_frames,
        });
    }
    Ok(entries)
}

/// Reads a JSON-lines manifest.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries serialize");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl FeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    /// Keeps at most `max_seconds` of frames, dropping the tail.
    pub fn capped(mut self, max_seconds: f64) -> Self {
        let limit = max_frames(self.frame_rate, max_seconds);
        if self.frames.rows() > limit {
            self.frames = self.frames.truncate_rows(limit);
        }
        self
    }
}

pub fn max_frames(frame_rate: f64, max_seconds: f64) -> usize {
    (frame_rate * max_seconds).floor() as usize
}

pub fn write_features(path: &Path, frames: &Tensor) -> Result<()> {
    if frames.rank() != 2 {
        return Err(Error::Dimension(format!(
            "feature files hold T×dim matrices, got shape {:?}",
            frames.shape()
        )));
    }
    write_tensor(path, frames)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let t = read_tensor(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Data(format!("cannot read {}: {source}", path.display())),
        other => other,
    })?;
    if t.rank() != 2 {
        return Err(Error::Data(format!(
            "{}: feature file has rank {}, expected 2",
            path.display(),
            t.rank()
        )));
    }
    Ok(t)
}

/// Loads an entry's features relative to `base_dir`, checks the header frame
/// count, and applies the duration cap.
pub fn load_sequence(
    entry: &ManifestEntry,
    base_dir: &Path,
    frame_rate: f64,
    max_seconds: f64,
) -> Result<FeatureSequence> {
    let path = resolve(base_dir, &entry.features_path);
    let frames = read_features(&path)?;
    if frames.rows() != entry.n_frames {
        return Err(Error::Data(format!(
            "{}: manifest says {} frames, file has {}",
            entry.id,
            entry.n_frames,
            frames.rows()
        )));
    }
    Ok(FeatureSequence { frames, frame_rate }.capped(max_seconds))
}

fn resolve(base_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// One labeled utterance held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub frames: Tensor,
    pub label: usize,
    pub speaker: String,
    pub gender: Gender,
}

pub fn load_examples(
    entries: &[ManifestEntry],
    base_dir: &Path,
    frame_rate: f64,
    max_seconds: f64,
) -> Result<Vec<Example>> {
    entries
        .iter()
        .map(|e| {
            let seq = load_sequence(e, base_dir, frame_rate, max_seconds)?;
            Ok(Example {
                id: e.id.clone(),
                frames: seq.frames,
                label: e.label.index(),
                speaker: e.speaker.clone(),
                gender: e.gender,
            })
        })
        .collect()
}
