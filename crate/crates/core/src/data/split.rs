//! Speaker-independent train/validation/test folds.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::ManifestEntry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitScheme {
    /// Sorted speakers are cut into `k` contiguous groups. Fold `i` tests on
    /// group `i`, validates on group `(i + 1) % k`, and trains on the rest.
    KFold { k: usize },
    /// A single fold with named validation and test speakers.
    Fixed {
        val_speakers: Vec<String>,
        test_speakers: Vec<String>,
    },
}

impl Default for SplitScheme {
    fn default() -> Self {
        SplitScheme::KFold { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub val_speakers: Vec<String>,
    pub test_speakers: Vec<String>,
}

/// Speaker groups `(val, test)` for each fold.
pub fn split_speakers(speakers: &[&str], scheme: &SplitScheme) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let unique: Vec<String> = speakers
        .iter()
        .map(|s| s.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    match scheme {
        SplitScheme::KFold { k } => {
            let k = *k;
            if k < 3 {
                return Err(Error::Usage(format!(
                    "k-fold needs k >= 3 for disjoint train/val/test groups, got {k}"
                )));
            }
            if unique.len() < k {
                return Err(Error::Usage(format!(
                    "{k}-fold split needs at least {k} speakers, corpus has {}",
                    unique.len()
                )));
            }
            let n = unique.len();
            let groups: Vec<Vec<String>> = (0..k).map(|g| unique[g * n / k..(g + 1) * n / k].to_vec()).collect();
            Ok((0..k)
                .map(|i| (groups[(i + 1) % k].clone(), groups[i].clone()))
                .collect())
        }
        SplitScheme::Fixed {
            val_speakers,
            test_speakers,
        } => {
            let known: HashSet<&String> = unique.iter().collect();
            for s in val_speakers.iter().chain(test_speakers) {
                if !known.contains(s) {
                    return Err(Error::Usage(format!("speaker {s:?} is not in the manifest")));
                }
            }
            if val_speakers.is_empty() || test_speakers.is_empty() {
                return Err(Error::Usage("fixed split needs validation and test speakers".into()));
            }
            if let Some(s) = val_speakers.iter().find(|s| test_speakers.contains(s)) {
                return Err(Error::Usage(format!("speaker {s:?} is in both validation and test")));
            }
            if val_speakers.len() + test_speakers.len() >= unique.len() {
                return Err(Error::Usage("fixed split leaves no training speakers".into()));
            }
            Ok(vec![(val_speakers.clone(), test_speakers.clone())])
        }
    }
}

pub fn split_folds(entries: &[ManifestEntry], scheme: &SplitScheme) -> Result<Vec<Fold>> {
    let speakers: Vec<&str> = entries.iter().map(|e| e.speaker.as_str()).collect();
    folds_for_speakers(&speakers, scheme)
}

/// Like [`split_folds`], given the speaker of each utterance.
pub fn folds_for_speakers(speakers: &[&str], scheme: &SplitScheme) -> Result<Vec<Fold>> {
    let groups = split_speakers(speakers, scheme)?;
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(index, (val_speakers, test_speakers))| {
            let mut fold = Fold {
                index,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
                val_speakers,
                test_speakers,
            };
            for (i, &s) in speakers.iter().enumerate() {
                if fold.test_speakers.iter().any(|t| t == s) {
                    fold.test.push(i);
                } else if fold.val_speakers.iter().any(|v| v == s) {
                    fold.val.push(i);
                } else {
                    fold.train.push(i);
                }
            }
            fold
        })
        .collect())
}
