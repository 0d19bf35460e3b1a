//! Deterministic synthetic emotion corpus.
//!
//! Each class has a mean feature vector, each speaker a small offset, and
//! every frame adds Gaussian noise on top. Pooled features are therefore
//! linearly separable by class while frames stay noisy.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{write_features, write_manifest, Emotion, Example, Gender, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CLASS_SCALE: f64 = 0.6;
const SPEAKER_SCALE: f64 = 0.25;
const FRAME_NOISE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub n_per_class: usize,
    pub n_speakers: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub frame_rate: f64,
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_per_class: 10,
            n_speakers: 10,
            seed: 0,
            feature_dim: 16,
            frame_rate: super::DEFAULT_FRAME_RATE,
            min_frames: 20,
            max_frames: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub entries: Vec<ManifestEntry>,
    pub features: Vec<Tensor>,
    pub frame_rate: f64,
}

pub fn synth_corpus(opts: &SynthOptions) -> Result<SynthCorpus> {
    if opts.n_per_class == 0 || opts.n_speakers == 0 || opts.feature_dim == 0 {
        return Err(Error::Usage(format!(
            "synthetic corpus needs positive sizes, got {opts:?}"
        )));
    }
    if opts.min_frames == 0 || opts.min_frames > opts.max_frames {
        return Err(Error::Usage(format!(
            "invalid frame range {}..={}",
            opts.min_frames, opts.max_frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dim = opts.feature_dim;
    let gaussian = |rng: &mut ChaCha8Rng, n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect()
    };
    let class_means: Vec<Vec<f64>> = (0..Emotion::ALL.len())
        .map(|_| gaussian(&mut rng, dim, CLASS_SCALE))
        .collect();
    let speaker_offsets: Vec<Vec<f64>> = (0..opts.n_speakers)
        .map(|_| gaussian(&mut rng, dim, SPEAKER_SCALE))
        .collect();

    let mut entries = Vec::new();
    let mut features = Vec::new();
    for emotion in Emotion::ALL {
        for j in 0..opts.n_per_class {
            let speaker = j % opts.n_speakers;
            let t = rng.random_range(opts.min_frames..=opts.max_frames);
            let mut data = gaussian(&mut rng, t * dim, FRAME_NOISE);
            for frame in data.chunks_mut(dim) {
                for ((v, m), o) in frame
                    .iter_mut()
                    .zip(&class_means[emotion.index()])
                    .zip(&speaker_offsets[speaker])
                {
                    *v += m + o;
                }
            }
            let id = format!("{}_{:04}", emotion.as_str(), j);
            entries.push(ManifestEntry {
                features_path: format!("features/{id}.ftr"),
                id,
                label: emotion,
                speaker: format!("spk{speaker:02}"),
                gender: if speaker.is_multiple_of(2) {
                    Gender::Female
                } else {
                    Gender::Male
                },
                n_frames: t,
            });
            features.push(Tensor::new(vec![t, dim], data)?);
        }
    }
    Ok(SynthCorpus {
        entries,
        features,
        frame_rate: opts.frame_rate,
    })
}

impl SynthCorpus {
    /// Writes `manifest.jsonl` and `features/*.ftr` under `dir`, returning the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        for (entry, frames) in self.entries.iter().zip(&self.features) {
            write_features(&dir.join(&entry.features_path), frames)?;
        }
        let manifest = dir.join("manifest.jsonl");
        write_manifest(&manifest, &self.entries)?;
        Ok(manifest)
    }

    pub fn examples(&self, max_seconds: f64) -> Vec<Example> {
        let limit = super::max_frames(self.frame_rate, max_seconds);
        self.entries
            .iter()
            .zip(&self.features)
            .map(|(e, f)| Example {
                id: e.id.clone(),
                frames: if f.rows() > limit {
                    f.truncate_rows(limit)
                } else {
                    f.clone()
                },
                label: e.label.index(),
                speaker: e.speaker.clone(),
                gender: e.gender,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn deterministic_and_balanced() {
        let opts = SynthOptions {
            n_per_class: 6,
            n_speakers: 3,
            seed: 9,
            ..Default::default()
        };
        let a = synth_corpus(&opts).unwrap();
        let b = synth_corpus(&opts).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.features, b.features);

        let mut per_class = HashMap::new();
        for e in &a.entries {
            *per_class.entry(e.label).or_insert(0) += 1;
            assert!((20..=60).contains(&e.n_frames));
        }
        assert!(per_class.values().all(|&n| n == 6));

        let c = synth_corpus(&SynthOptions { seed: 10, ..opts }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(&SynthOptions {
            n_per_class: 2,
            n_speakers: 2,
            ..Default::default()
        })
        .unwrap();
        let manifest = corpus.write(dir.path()).unwrap();
        let entries = super::super::load_manifest(&manifest).unwrap();
        assert_eq!(entries, corpus.entries);
        let loaded = super::super::load_examples(&entries, dir.path(), 10.0, 6.0).unwrap();
        assert_eq!(loaded, corpus.examples(6.0));
    }
}
