//! Utterance manifests, splitting and grouping, plus a synthetic tone corpus.
//!
//! Manifests are UTF-8 CSV files with the fixed header
//! `audio_path,transcript,speaker_id,gender,corpus_tag`. Relative audio
//! paths are resolved against the directory containing the manifest.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{quantize_sample, write_wav_i16, FeatureError};

pub const MANIFEST_HEADER: [&str; 5] = [
    "audio_path",
    "transcript",
    "speaker_id",
    "gender",
    "corpus_tag",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: first line must be `{}`", MANIFEST_HEADER.join(","))]
    MissingHeader { path: String },
    #[error("{path}: line {line}: duplicate audio_path {audio_path:?}")]
    DuplicatePath {
        path: String,
        line: u64,
        audio_path: String,
    },
    #[error("{path}: line {line}: transcript is empty")]
    EmptyTranscript { path: String, line: u64 },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    BadFractions((f64, f64, f64)),
    #[error("cannot split an empty manifest")]
    EmptyManifest,
    #[error("synthetic corpus: highest tone {highest} Hz is not below Nyquist {nyquist} Hz")]
    NyquistViolation { highest: f64, nyquist: f64 },
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] FeatureError),
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn parse(s: &str) -> Self {
        match s.trim() {
            "female" => Gender::Female,
            "male" => Gender::Male,
            _ => Gender::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub audio_path: PathBuf,
    pub transcript: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub corpus_tag: String,
}

impl Utterance {
    /// File stem of the audio path, used as the utterance id in reports.
    pub fn id(&self) -> String {
        self.audio_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.audio_path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub name: String,
    pub utterances: Vec<Utterance>,
}

impl Manifest {
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Self {
            name: name.into(),
            utterances,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Writes the manifest as CSV. Paths under `base` are written relative
    /// to it so the directory can be moved as a unit.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |source| CorpusError::Csv {
            path: path.display().to_string(),
            source,
        };
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for u in &self.utterances {
            let rel = u.audio_path.strip_prefix(base).unwrap_or(&u.audio_path);
            w.write_record([
                rel.to_string_lossy().as_ref(),
                u.transcript.as_str(),
                u.speaker_id.as_str(),
                u.gender.as_str(),
                u.corpus_tag.as_str(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CorpusError::IoFailure {
            path: path.display().to_string(),
            source: e.into_error(),
        })?;
        fs::write(path, bytes).map_err(io_failure(path))
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    let first_line = text.lines().next().unwrap_or("");
    if first_line != MANIFEST_HEADER.join(",") {
        return Err(CorpusError::MissingHeader { path: shown });
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut seen = HashSet::new();
    let mut utterances = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| CorpusError::Csv {
            path: shown.clone(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_path = &record[0];
        if !seen.insert(raw_path.to_string()) {
            return Err(CorpusError::DuplicatePath {
                path: shown,
                line,
                audio_path: raw_path.to_string(),
            });
        }
        let transcript = record[1].trim();
        if transcript.is_empty() {
            return Err(CorpusError::EmptyTranscript { path: shown, line });
        }
        utterances.push(Utterance {
            audio_path: base.join(raw_path),
            transcript: transcript.to_string(),
            speaker_id: record[2].to_string(),
            gender: Gender::parse(&record[3]),
            corpus_tag: record[4].to_string(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Manifest::new(name, utterances))
}

/// Shuffles under `seed` and cuts contiguous train/val/test partitions.
/// Train and validation sizes are `round(fraction * N)`; the test set takes
/// the remainder.
pub fn split_manifest(
    m: &Manifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest), CorpusError> {
    let (ftr, fva, fte) = fractions;
    let finite = [ftr, fva, fte].iter().all(|f| f.is_finite());
    if !finite || ftr < 0.0 || fva < 0.0 || fte < 0.0 || (ftr + fva + fte - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(fractions));
    }
    if m.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let n = m.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ftr * n as f64).round() as usize).min(n);
    let n_val = ((fva * n as f64).round() as usize).min(n - n_train);
    let take = |idx: &[usize], suffix: &str| {
        Manifest::new(
            format!("{}_{suffix}", m.name),
            idx.iter().map(|&i| m.utterances[i].clone()).collect(),
        )
    };
    Ok((
        take(&order[..n_train], "train"),
        take(&order[n_train..n_train + n_val], "val"),
        take(&order[n_train + n_val..], "test"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Gender,
    CorpusTag,
    SpeakerId,
}

impl GroupKey {
    pub fn value_of(self, u: &Utterance) -> String {
        match self {
            GroupKey::Gender => u.gender.as_str().to_string(),
            GroupKey::CorpusTag => u.corpus_tag.clone(),
            GroupKey::SpeakerId => u.speaker_id.clone(),
        }
    }
}

/// Partitions `m` by `key`, keeping the relative order within each group.
pub fn group_by(m: &Manifest, key: GroupKey) -> BTreeMap<String, Manifest> {
    let mut groups: BTreeMap<String, Manifest> = BTreeMap::new();
    for u in &m.utterances {
        let k = key.value_of(u);
        groups
            .entry(k.clone())
            .or_insert_with(|| Manifest::new(format!("{}_{k}", m.name), Vec::new()))
            .utterances
            .push(u.clone());
    }
    groups
}

/// Parameters of the synthetic tone corpus. Each character renders as a
/// pure tone; the space character renders as silence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub alphabet: String,
    pub num_utterances: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub sample_rate: u32,
    pub char_duration: f64,
    pub base_freq: f64,
    pub freq_step: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
    pub corpus_tag: String,
    /// Speakers are assigned round-robin; even-numbered speakers are
    /// labelled female, odd-numbered male.
    pub num_speakers: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            alphabet: "abcd".to_string(),
            num_utterances: 50,
            min_chars: 2,
            max_chars: 5,
            sample_rate: 8000,
            char_duration: 0.08,
            base_freq: 500.0,
            freq_step: 250.0,
            noise_amplitude: 0.0,
            seed: 0,
            corpus_tag: "synth".to_string(),
            num_speakers: 4,
        }
    }
}

/// Peak amplitude of a rendered tone.
const TONE_AMPLITUDE: f64 = 0.5;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        let n_chars = self.alphabet.chars().count();
        if n_chars == 0 {
            return bad("alphabet is empty");
        }
        if self.alphabet.chars().collect::<HashSet<_>>().len() != n_chars {
            return bad("alphabet has repeated characters");
        }
        if self.alphabet.trim().is_empty() {
            return bad("alphabet needs at least one non-space character");
        }
        if self.num_utterances == 0 {
            return bad("num_utterances must be positive");
        }
        if self.min_chars == 0 || self.min_chars > self.max_chars {
            return bad("need 1 <= min_chars <= max_chars");
        }
        if self.sample_rate == 0 || self.char_duration.is_nan() || self.char_duration <= 0.0 {
            return bad("sample_rate and char_duration must be positive");
        }
        if !(0.0..1.0).contains(&self.noise_amplitude) {
            return bad("noise_amplitude must lie in [0, 1)");
        }
        if self.num_speakers == 0 {
            return bad("num_speakers must be positive");
        }
        let highest = self.base_freq + self.freq_step * n_chars as f64;
        let nyquist = self.sample_rate as f64 / 2.0;
        if highest.is_nan() || highest >= nyquist || self.base_freq <= 0.0 || self.freq_step < 0.0 {
            return Err(CorpusError::NyquistViolation { highest, nyquist });
        }
        Ok(())
    }

    pub fn samples_per_char(&self) -> usize {
        (self.char_duration * self.sample_rate as f64).round() as usize
    }

    pub fn tone_frequency(&self, alphabet_index: usize) -> f64 {
        self.base_freq + alphabet_index as f64 * self.freq_step
    }

    /// Renders `text` (characters outside the alphabet are treated as
    /// silence) with noise drawn from `rng`.
    pub fn render<R: Rng>(&self, text: &str, rng: &mut R) -> Vec<i16> {
        let alphabet: Vec<char> = self.alphabet.chars().collect();
        let per_char = self.samples_per_char();
        let rate = self.sample_rate as f64;
        let mut out = Vec::with_capacity(per_char * text.chars().count());
        for c in text.chars() {
            let freq = match alphabet.iter().position(|&a| a == c) {
                Some(i) if c != ' ' => Some(self.tone_frequency(i)),
                _ => None,
            };
            for n in 0..per_char {
                let tone = freq.map_or(0.0, |f| {
                    TONE_AMPLITUDE * (2.0 * PI * f * n as f64 / rate).sin()
                });
                let noise = if self.noise_amplitude > 0.0 {
                    self.noise_amplitude * rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                };
                out.push(quantize_sample((tone + noise).clamp(-1.0, 1.0)));
            }
        }
        out
    }
}

/// Writes `num_utterances` WAV files plus `manifest.csv` into `out_dir` and
/// returns the manifest.
pub fn generate_synthetic_corpus(
    spec: &SynthSpec,
    out_dir: &Path,
) -> Result<Manifest, CorpusError> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(io_failure(out_dir))?;
    let alphabet: Vec<char> = spec.alphabet.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut utterances = Vec::with_capacity(spec.num_utterances);
    for i in 0..spec.num_utterances {
        let text = loop {
            let len = rng.gen_range(spec.min_chars..=spec.max_chars);
            let t: String = (0..len)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                .collect();
            // Redraw all-space strings; a transcript must contain a word.
            if !t.trim().is_empty() {
                break t;
            }
        };
        let samples = spec.render(&text, &mut rng);
        let path = out_dir.join(format!("utt_{i:05}.wav"));
        write_wav_i16(&path, &samples, spec.sample_rate)?;
        let speaker = i % spec.num_speakers;
        utterances.push(Utterance {
            audio_path: path,
            transcript: text,
            speaker_id: format!("{}_spk{speaker:02}", spec.corpus_tag),
            gender: if speaker.is_multiple_of(2) {
                Gender::Female
            } else {
                Gender::Male
            },
            corpus_tag: spec.corpus_tag.clone(),
        });
    }
    let manifest = Manifest::new(spec.corpus_tag.clone(), utterances);
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
