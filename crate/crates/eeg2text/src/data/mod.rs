//! EEG/text data model: recordings, sentences, vocabulary, corpora, the
//! on-disk container, synthetic corpus generation, and the signal transforms
//! the models consume (z-score normalization, patchifying, spectrograms).

mod container;
mod spectrogram;
mod synth;

pub use container::{load_corpus, save_corpus};
pub use spectrogram::{spectrogram, Spectrogram};
pub use synth::{synth_corpus, SynthConfig};

use std::collections::HashMap;

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing manifest at {0}")]
    MissingManifest(String),
    #[error("bad container format: {0}")]
    Format(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("channel mismatch in {file}: manifest declares {expected} channels, data holds {got}")]
    ChannelMismatch { file: String, expected: usize, got: usize },
    #[error("non-finite samples in {0}")]
    NonFinite(String),
    #[error("invalid recording {id}: {details}")]
    InvalidRecording { id: String, details: String },
    #[error("sentence has no tokens: {0:?}")]
    EmptySentence(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid synthesis config: {0}")]
    InvalidSynthConfig(String),
    #[error("patch_len {patch_len} exceeds recording length {n_timesteps}")]
    PatchTooLong { patch_len: usize, n_timesteps: usize },
    #[error("window {window_len} exceeds recording length {n_timesteps}")]
    WindowTooLong { window_len: usize, n_timesteps: usize },
    #[error("hop_len must be >= 1")]
    ZeroHop,
    #[error("window_len must be >= 1")]
    ZeroWindow,
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

/// One EEG recording: `samples` is `[n_channels, n_timesteps]`, microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EEGRecording {
    pub id: String,
    pub channel_labels: Vec<String>,
    pub sample_rate: f64,
    pub samples: Tensor<f32>,
}

impl EEGRecording {
    pub fn new(
        id: impl Into<String>,
        channel_labels: Vec<String>,
        sample_rate: f64,
        samples: Tensor<f32>,
    ) -> Result<Self, DataError> {
        let rec = EEGRecording { id: id.into(), channel_labels, sample_rate, samples };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn n_timesteps(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |details: String| {
            Err(DataError::InvalidRecording { id: self.id.clone(), details })
        };
        if self.samples.shape().len() != 2 {
            return fail(format!("samples must be 2-D, got {:?}", self.samples.shape()));
        }
        if self.n_channels() != self.channel_labels.len() {
            return fail(format!(
                "{} channels but {} labels",
                self.n_channels(),
                self.channel_labels.len()
            ));
        }
        if self.n_timesteps() == 0 {
            return fail("zero timesteps".into());
        }
        if !(self.sample_rate > 0.0) {
            return fail(format!("sample_rate {} not positive", self.sample_rate));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.channel_labels {
            if !seen.insert(l) {
                return fail(format!("duplicate channel label {l:?}"));
            }
        }
        if !self.samples.data().iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFinite(self.id.clone()));
        }
        Ok(())
    }
}

/// Lowercases and splits on every non-alphanumeric character, so whitespace
/// and punctuation both separate tokens and never appear inside one.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub raw_text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    /// Tokenizes `raw_text`; a sentence with no alphanumeric content is
    /// rejected because the decoder has nothing to predict for it.
    pub fn new(raw_text: impl Into<String>) -> Result<Self, DataError> {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        if tokens.is_empty() {
            return Err(DataError::EmptySentence(raw_text));
        }
        Ok(Sentence { raw_text, tokens })
    }
}

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token/id bijection with the four reserved specials fixed at ids 0-3.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from word tokens; specials are prepended.
    pub fn from_words<I, S>(words: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    /// Builds from the full token list including specials at 0-3 (the
    /// vocab.txt layout).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DataError> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(DataError::InvalidVocabulary(format!(
                "need at least the {} reserved tokens, got {}",
                SPECIAL_TOKENS.len(),
                tokens.len()
            )));
        }
        for (i, want) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *want {
                return Err(DataError::InvalidVocabulary(format!(
                    "reserved id {i} must be {want:?}, got {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(DataError::InvalidVocabulary(format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Id for a token; unknown tokens map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the four specials are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of a sentence, no BOS/EOS framing.
    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// A named set of (recording, sentence) pairs with shared channel layout,
/// sample rate, and vocabulary. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
    pub seed: u64,
    pub pairs: Vec<(EEGRecording, Sentence)>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.pairs.is_empty() {
            return Err(DataError::InvalidCorpus("empty pair list".into()));
        }
        for (rec, sent) in &self.pairs {
            rec.validate()?;
            if rec.channel_labels != self.channel_labels {
                return Err(DataError::InvalidCorpus(format!(
                    "recording {} has a different channel layout than the corpus",
                    rec.id
                )));
            }
            if rec.sample_rate != self.sample_rate {
                return Err(DataError::InvalidCorpus(format!(
                    "recording {} sample_rate {} != corpus {}",
                    rec.id, rec.sample_rate, self.sample_rate
                )));
            }
            if sent.tokens.is_empty() {
                return Err(DataError::EmptySentence(sent.raw_text.clone()));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }
}

/// Per-channel z-score with denominator-n variance; constant channels map to
/// all zeros. Statistics run in f64 so the result is idempotent well inside
/// 1e-6 even for long recordings.
pub fn normalize(rec: &EEGRecording) -> EEGRecording {
    let c = rec.n_channels();
    let t = rec.n_timesteps();
    let src = rec.samples.data();
    let mut out = vec![0.0f32; c * t];
    for ch in 0..c {
        let row = &src[ch * t..(ch + 1) * t];
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / t as f64;
        if var > 0.0 {
            let inv = 1.0 / var.sqrt();
            for (o, &v) in out[ch * t..(ch + 1) * t].iter_mut().zip(row) {
                *o = ((v as f64 - mean) * inv) as f32;
            }
        }
    }
    EEGRecording {
        id: rec.id.clone(),
        channel_labels: rec.channel_labels.clone(),
        sample_rate: rec.sample_rate,
        samples: Tensor::new(vec![c, t], out).expect("same shape as input"),
    }
}

/// Splits a recording into consecutive full-channel patches of `patch_len`
/// samples; a trailing remainder shorter than one patch is dropped.
pub fn patchify(rec: &EEGRecording, patch_len: usize) -> Result<Vec<Tensor<f32>>, DataError> {
    let t = rec.n_timesteps();
    if patch_len == 0 || patch_len > t {
        return Err(DataError::PatchTooLong { patch_len, n_timesteps: t });
    }
    let c = rec.n_channels();
    let n_patches = t / patch_len;
    let src = rec.samples.data();
    let mut out = Vec::with_capacity(n_patches);
    for p in 0..n_patches {
        let mut data = Vec::with_capacity(c * patch_len);
        for ch in 0..c {
            let start = ch * t + p * patch_len;
            data.extend_from_slice(&src[start..start + patch_len]);
        }
        out.push(Tensor::new(vec![c, patch_len], data).expect("sized above"));
    }
    Ok(out)
}
