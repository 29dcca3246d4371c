//! Seeded toy corpus with separable audio and text for offline end-to-end runs.
//!
//! Each class owns a fundamental frequency and a keyword vocabulary. Audio is
//! a one-second tone or chirp with jittered pitch, two harmonics and light
//! noise; transcripts mix two class keywords into shared filler words. A
//! GloVe-format embedding file places each class's keywords near a common
//! direction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::{DatasetSource, EmotionLabel, Manifest, Split, Utterance, NUM_CLASSES};
use crate::dsp::{write_wav_i16, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::textgraph::{EmbeddingTable, DEFAULT_EMBEDDING_DIM};

pub const FUNDAMENTALS_HZ: [f64; NUM_CLASSES] = [220.0, 330.0, 440.0, 660.0];
/// Relative pitch jitter per utterance.
pub const PITCH_JITTER: f64 = 0.03;

const KEYWORDS: [[&str; 6]; NUM_CLASSES] = [
    [
        "furious",
        "outraged",
        "hate",
        "rage",
        "shouting",
        "unacceptable",
    ],
    [
        "delighted",
        "wonderful",
        "joy",
        "laughing",
        "fantastic",
        "celebrate",
    ],
    [
        "schedule", "ordinary", "usual", "noted", "routine", "report",
    ],
    ["lonely", "tears", "grief", "miss", "crying", "hopeless"],
];

const FILLERS: [&str; 12] = [
    "the", "meeting", "was", "really", "today", "and", "i", "feel", "about", "it", "so", "this",
];

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const AUDIO_DIR: &str = "audio";

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Audio paths are relative to the output directory.
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub embeddings_path: PathBuf,
}

fn synth_audio(class: usize, rng: &mut ChaCha8Rng) -> Waveform {
    let sr = f64::from(CANONICAL_RATE);
    let n = CANONICAL_RATE as usize;
    let f0 = FUNDAMENTALS_HZ[class] * (1.0 + rng.random_range(-PITCH_JITTER..PITCH_JITTER));
    // half the utterances glide linearly by up to ±5% over the second
    let glide = if rng.random_bool(0.5) {
        rng.random_range(-0.05..0.05)
    } else {
        0.0
    };
    let h2 = rng.random_range(0.2..0.5);
    let h3 = rng.random_range(0.05..0.25);
    let amp = rng.random_range(0.3..0.5);
    let fade = (0.02 * sr) as usize;
    let mut phase = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + glide * t);
            phase += 2.0 * PI * f / sr;
            let env = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
            let tone = phase.sin() + h2 * (2.0 * phase).sin() + h3 * (3.0 * phase).sin();
            env * amp * tone / (1.0 + h2 + h3) + 0.01 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Waveform::new(samples, CANONICAL_RATE).expect("finite samples")
}

fn synth_sentence(class: usize, rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(5..=8);
    let mut words: Vec<&str> = (0..len - 2)
        .map(|_| *FILLERS.choose(rng).expect("fillers"))
        .collect();
    for _ in 0..2 {
        let at = rng.random_range(0..=words.len());
        words.insert(at, KEYWORDS[class].choose(rng).expect("keywords"));
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push(if rng.random_bool(0.5) { '.' } else { '!' });
    s
}

/// Keywords cluster around one random direction per class; fillers are
/// independent draws. All vectors have unit length.
fn synth_embeddings(dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable {
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.sample(StandardNormal)).collect()
    };
    let mut vectors = HashMap::new();
    for words in KEYWORDS {
        let centre = unit(draw(rng));
        for w in words {
            let noise = unit(draw(rng));
            let v = centre
                .iter()
                .zip(&noise)
                .map(|(c, e)| c + 0.5 * e)
                .collect();
            vectors.insert(w.to_string(), unit(v));
        }
    }
    for w in FILLERS {
        vectors.insert(w.to_string(), unit(draw(rng)));
    }
    EmbeddingTable::from_vectors(dim, vectors).expect("consistent dims")
}

/// Writes `n_per_class` utterances per class under `out`: WAV files in
/// `audio/`, `manifest.csv` and `embeddings.txt`. Ids are
/// `syn_c{class}_{i:03}`; every fourth utterance of a class is a test row.
pub fn generate_synthetic(out: &Path, seed: u64, n_per_class: usize) -> Result<SyntheticCorpus> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    let audio_dir = out.join(AUDIO_DIR);
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(NUM_CLASSES * n_per_class);
    for class in 0..NUM_CLASSES {
        for i in 0..n_per_class {
            let id = format!("syn_c{class}_{i:03}");
            let rel = Path::new(AUDIO_DIR).join(format!("{id}.wav"));
            write_wav_i16(&out.join(&rel), &synth_audio(class, &mut rng))?;
            rows.push(Utterance {
                transcript: synth_sentence(class, &mut rng),
                id,
                audio_path: rel,
                label: EmotionLabel::CANONICAL[class],
                split: if i % 4 == 3 {
                    Split::Test
                } else {
                    Split::Train
                },
                source: DatasetSource::Synthetic,
            });
        }
    }
    let manifest = Manifest::new(rows)?;
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    let embeddings_path = out.join(EMBEDDINGS_FILE);
    let table = synth_embeddings(DEFAULT_EMBEDDING_DIM, &mut rng);
    std::fs::write(&embeddings_path, table.to_glove())
        .map_err(|e| Error::io(&embeddings_path, e))?;
    Ok(SyntheticCorpus {
        manifest,
        manifest_path,
        embeddings_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::read_wav;
    use crate::textgraph::tokenize;

    #[test]
    fn deterministic_bytes_and_layout() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ca = generate_synthetic(a.path(), 7, 4).unwrap();
        generate_synthetic(b.path(), 7, 4).unwrap();
        assert_eq!(ca.manifest.len(), 16);
        assert_eq!(ca.manifest.split(Split::Test).count(), 4);
        for u in ca.manifest.rows() {
            let x = std::fs::read(a.path().join(&u.audio_path)).unwrap();
            let y = std::fs::read(b.path().join(&u.audio_path)).unwrap();
            assert_eq!(x, y, "{}", u.id);
        }
        for f in [MANIFEST_FILE, EMBEDDINGS_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        let table = EmbeddingTable::load(&ca.embeddings_path).unwrap();
        for u in ca.manifest.rows() {
            let tokens = tokenize(&u.transcript);
            assert!((5..=8).contains(&tokens.len()));
            assert!(tokens.iter().all(|t| table.contains(t)), "{}", u.transcript);
        }
    }

    #[test]
    fn class_zero_peaks_near_220_hz() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_synthetic(dir.path(), 3, 1).unwrap();
        let u = &c.manifest.rows()[0];
        assert_eq!(u.label, EmotionLabel::Angry);
        let w = read_wav(&dir.path().join(&u.audio_path)).unwrap();
        // direct DFT magnitude on a 1 Hz grid over 100..1000 Hz
        let sr = f64::from(w.sample_rate);
        let power = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, s) in w.samples.iter().enumerate() {
                let a = 2.0 * PI * f * i as f64 / sr;
                re += s * a.cos();
                im -= s * a.sin();
            }
            re * re + im * im
        };
        let peak = (100..1000)
            .map(|f| (f, power(f as f64)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0 as f64;
        assert!((peak - 220.0).abs() <= 220.0 * 0.06, "{peak}");
    }
}
