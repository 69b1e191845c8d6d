//! Speech Commands dataset handling: directory scanning, hash-based split
//! assignment, the 12-class label space, augmentation, and the epoch cache.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::audio::{pad_or_clip, read_wav, AudioBuffer, FeatureMatrix, CLIP_SAMPLES};
use crate::error::{Error, Result};

pub const KEYWORDS: [&str; 10] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go",
];
pub const UNKNOWN_INDEX: usize = 10;
pub const SILENCE_INDEX: usize = 11;
pub const N_CLASSES: usize = 12;

/// The fixed 12-class label space: ten keywords, unknown, silence.
#[derive(Debug, Clone)]
pub struct LabelSpace;

impl LabelSpace {
    /// Class index for a dataset word. Anything outside the keyword list is
    /// unknown; "_silence_" is reserved for synthesized silence.
    pub fn word_to_label(word: &str) -> usize {
        if word == "_silence_" {
            return SILENCE_INDEX;
        }
        KEYWORDS
            .iter()
            .position(|&k| k == word)
            .unwrap_or(UNKNOWN_INDEX)
    }

    pub fn label_name(label: usize) -> &'static str {
        match label {
            UNKNOWN_INDEX => "unknown",
            SILENCE_INDEX => "silence",
            i => KEYWORDS[i],
        }
    }

    pub fn is_keyword(label: usize) -> bool {
        label < UNKNOWN_INDEX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// One WAV file with its resolved label and split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSample {
    /// Dataset-relative path, e.g. "yes/0a7c2a8d_nohash_0.wav".
    pub path: String,
    pub word: String,
    pub label: usize,
    pub split: Split,
}

const MAX_WAVS_PER_CLASS: u64 = 1 << 27; // 2^27

/// Deterministic split from the file name, so a recording stays in the same
/// split forever and all "_nohash_" takes of one utterance stay together.
///
/// The stem (basename with any "_nohash_..." suffix removed) is SHA1-hashed;
/// the low 27 bits of the digest, scaled to a percentage of 2^27 - 1, pick
/// the split: < val_pct validation, < val_pct + test_pct test, else train.
pub fn assign_split(filename: &str, val_pct: f64, test_pct: f64) -> Split {
    let base = filename.rsplit(['/', '\\']).next().unwrap_or(filename);
    let stem = match base.find("_nohash_") {
        Some(pos) => &base[..pos],
        None => base,
    };
    let digest = Sha1::digest(stem.as_bytes());
    // low 27 bits of the 160-bit digest
    let tail = u32::from_be_bytes([digest[16], digest[17], digest[18], digest[19]]);
    let bucket = (tail as u64) % MAX_WAVS_PER_CLASS;
    let percentage = bucket as f64 * 100.0 / (MAX_WAVS_PER_CLASS - 1) as f64;
    if percentage < val_pct {
        Split::Validation
    } else if percentage < val_pct + test_pct {
        Split::Test
    } else {
        Split::Train
    }
}

/// Background noise recordings used for silence synthesis and augmentation.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    pub clips: Vec<AudioBuffer>,
}

impl NoiseBank {
    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// A scanned dataset tree: labeled samples plus the noise bank.
#[derive(Debug)]
pub struct DatasetScan {
    pub root: PathBuf,
    pub samples: Vec<LabeledSample>,
    pub noise: NoiseBank,
}

impl DatasetScan {
    pub fn load_audio(&self, sample: &LabeledSample) -> Result<AudioBuffer> {
        let buf = read_wav(self.root.join(&sample.path))?;
        pad_or_clip(&buf)
    }

    pub fn split_counts(&self) -> HashMap<Split, usize> {
        let mut counts = HashMap::new();
        for s in &self.samples {
            *counts.entry(s.split).or_insert(0) += 1;
        }
        counts
    }

    /// Keep at most `limit` samples, picked by an even stride over the
    /// path-sorted list so every word directory stays represented. Smoke-test
    /// plumbing, not part of the training recipe.
    pub fn subsample(&mut self, limit: usize) {
        if limit == 0 || limit >= self.samples.len() {
            return;
        }
        let n = self.samples.len();
        let picked: Vec<LabeledSample> = (0..limit)
            .map(|i| self.samples[i * n / limit].clone())
            .collect();
        self.samples = picked;
    }
}

const NOISE_DIR: &str = "_background_noise_";

/// Scan a Speech Commands directory layout: `<root>/<word>/<clip>.wav` plus
/// `<root>/_background_noise_/*.wav`. Samples are sorted by relative path so
/// ordering never depends on directory-walk order.
pub fn scan_dataset(root: &Path) -> Result<DatasetScan> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} is not a directory; expected <root>/<word>/*.wav \
             subdirectories plus <root>/{NOISE_DIR}/",
            root.display()
        )));
    }
    let mut samples = Vec::new();
    let mut noise = NoiseBank::default();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    for dir in dirs {
        let word = match dir.file_name().and_then(|n| n.to_str()) {
            Some(w) => w.to_string(),
            None => continue,
        };
        let mut wavs: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("wav"))
            .collect();
        wavs.sort();

        if word == NOISE_DIR {
            for wav in wavs {
                noise.clips.push(read_wav(&wav)?);
            }
            continue;
        }
        for wav in wavs {
            let file = wav.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            samples.push(LabeledSample {
                path: format!("{word}/{file}"),
                word: word.clone(),
                label: LabelSpace::word_to_label(&word),
                split: assign_split(file, 10.0, 10.0),
            });
        }
    }

    for kw in KEYWORDS {
        if !samples.iter().any(|s| s.word == kw) {
            return Err(Error::Dataset(format!(
                "keyword directory '{kw}' is missing or empty under {}; expected \
                 <root>/<word>/*.wav for each of: {}",
                root.display(),
                KEYWORDS.join(", ")
            )));
        }
    }
    samples.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetScan {
        root: root.to_path_buf(),
        samples,
        noise,
    })
}

/// Write the JSONL manifest (one `{path, label, split}` object per line).
pub fn write_manifest<W: Write>(mut w: W, samples: &[LabeledSample]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        path: &'a str,
        label: usize,
        split: &'a str,
    }
    for s in samples {
        let row = Row {
            path: &s.path,
            label: s.label,
            split: s.split.as_str(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub noise_prob: f64,
    /// Shift is drawn uniformly from [-shift_range_ms, +shift_range_ms].
    pub shift_range_ms: f64,
    pub cache_eviction_frac: f64,
    /// Fraction of each batch drawn as silence / unknown.
    pub silence_frac: f64,
    pub unknown_frac: f64,
    /// Added noise is scaled by a uniform draw from [0, noise_amplitude_max].
    pub noise_amplitude_max: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            noise_prob: 0.8,
            shift_range_ms: 100.0,
            cache_eviction_frac: 0.3,
            silence_frac: 0.1,
            unknown_frac: 0.1,
            noise_amplitude_max: 0.1,
        }
    }
}

/// Shift right (positive) or left (negative) by whole samples, zero-filling
/// the vacated region. Length is preserved.
pub fn apply_shift(buf: &AudioBuffer, shift: i64) -> AudioBuffer {
    let n = buf.len();
    let mut out = vec![0.0f32; n];
    if shift >= 0 {
        let k = (shift as usize).min(n);
        out[k..].copy_from_slice(&buf.samples[..n - k]);
    } else {
        let k = ((-shift) as usize).min(n);
        out[..n - k].copy_from_slice(&buf.samples[k..]);
    }
    AudioBuffer::new(out)
}

/// Cut a one-second segment from a random noise clip at a random offset.
fn cut_noise_second<R: Rng>(noise: &NoiseBank, rng: &mut R) -> Result<AudioBuffer> {
    if noise.is_empty() {
        return Err(Error::EmptyNoiseBank);
    }
    let clip = &noise.clips[rng.gen_range(0..noise.clips.len())];
    if clip.len() <= CLIP_SAMPLES {
        return pad_or_clip(clip);
    }
    let offset = rng.gen_range(0..=clip.len() - CLIP_SAMPLES);
    Ok(AudioBuffer::new(
        clip.samples[offset..offset + CLIP_SAMPLES].to_vec(),
    ))
}

/// One-second silence: a noise segment scaled by a uniform [0, 1] factor.
///
/// Draw order: clip index, offset, scale.
pub fn make_silence<R: Rng>(noise: &NoiseBank, rng: &mut R) -> Result<AudioBuffer> {
    let segment = cut_noise_second(noise, rng)?;
    let scale: f32 = rng.gen_range(0.0..=1.0);
    Ok(AudioBuffer::new(
        segment.samples.iter().map(|&x| x * scale).collect(),
    ))
}

/// Training-time augmentation: random time shift (zero-filled), then with
/// probability `noise_prob` an added noise segment scaled by a uniform
/// [0, noise_amplitude_max] amplitude. Output is clamped to [-1, 1].
///
/// Draw order: shift ms, noise coin, then (clip index, offset, amplitude)
/// when the coin lands heads. Changing this order changes every run. An
/// empty noise bank skips the mix; the coin is still drawn.
pub fn augment<R: Rng>(
    sample: &AudioBuffer,
    noise: &NoiseBank,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<AudioBuffer> {
    debug_assert_eq!(sample.len(), CLIP_SAMPLES, "augment expects a padded clip");
    let shift_ms: f64 = rng.gen_range(-cfg.shift_range_ms..=cfg.shift_range_ms);
    let shift = (shift_ms * crate::audio::SAMPLE_RATE_HZ as f64 / 1000.0).round() as i64;
    let mut out = apply_shift(sample, shift);
    if rng.gen_bool(cfg.noise_prob) && !noise.is_empty() {
        let segment = cut_noise_second(noise, rng)?;
        let amp: f32 = rng.gen_range(0.0..=cfg.noise_amplitude_max as f32);
        for (o, &n) in out.samples.iter_mut().zip(&segment.samples) {
            *o = (*o + amp * n).clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

/// Feature cache reused across epochs, with random partial eviction between
/// epochs so augmentation draws are periodically refreshed.
///
/// Each entry remembers the epoch it was (re)computed in. A bookkeeping-only
/// entry (`None` value) carries that epoch without the features, which lets a
/// resumed run replay cache history and then recompute identical features on
/// demand.
#[derive(Debug, Default)]
pub struct EpochCache {
    map: RwLock<HashMap<String, (u64, Option<FeatureMatrix>)>>,
}

impl EpochCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.read().unwrap().contains_key(key)
    }

    /// Return the cached features, or compute and store them. The closure
    /// receives the refresh epoch to derive augmentation draws from: the
    /// current epoch for a fresh entry, or the recorded one when filling in
    /// a bookkeeping entry.
    pub fn get_or_compute<F>(&self, key: &str, epoch: u64, compute: F) -> Result<FeatureMatrix>
    where
        F: FnOnce(u64) -> Result<FeatureMatrix>,
    {
        let recorded = {
            let map = self.map.read().unwrap();
            match map.get(key) {
                Some((_, Some(v))) => return Ok(v.clone()),
                Some((e, None)) => Some(*e),
                None => None,
            }
        };
        let refresh_epoch = recorded.unwrap_or(epoch);
        let value = compute(refresh_epoch)?;
        self.map
            .write()
            .unwrap()
            .insert(key.to_string(), (refresh_epoch, Some(value.clone())));
        Ok(value)
    }

    /// Record that `key` would be present with the given refresh epoch,
    /// without computing features. Used when replaying history on resume.
    pub fn mark_bookkeeping(&self, key: &str, epoch: u64) {
        let mut map = self.map.write().unwrap();
        map.entry(key.to_string()).or_insert((epoch, None));
    }

    /// Evict exactly `round(frac * len)` entries chosen uniformly at random.
    /// Keys are sorted before sampling so the outcome depends only on the
    /// cache contents and the RNG. Returns the number evicted.
    pub fn evict_fraction<R: Rng>(&self, frac: f64, rng: &mut R) -> usize {
        let mut map = self.map.write().unwrap();
        let n = map.len();
        let k = (frac * n as f64).round() as usize;
        if k == 0 {
            return 0;
        }
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let victims: Vec<String> = rand::seq::index::sample(rng, n, k)
            .into_iter()
            .map(|i| keys[i].clone())
            .collect();
        for v in &victims {
            map.remove(v);
        }
        k
    }

    pub fn clear(&self) {
        self.map.write().unwrap().clear();
    }
}
