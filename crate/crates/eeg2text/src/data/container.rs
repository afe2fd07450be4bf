//! On-disk corpus container.
//!
//! A corpus directory holds:
//! * `manifest.json`: name, format_version "1", sample_rate, channel labels,
//!   n_pairs, creation seed, and a CRC32 per data file;
//! * `vocab.txt`: one token per line, line number == token id, lines 0-3
//!   the reserved specials;
//! * `sig_<idx>.f32`: raw little-endian f32 samples, row-major
//!   channels x time;
//! * `txt_<idx>.txt`: the raw sentence, UTF-8.
//!
//! Writes are deterministic: the same corpus saved twice produces
//! byte-identical files. The manifest is written last so a torn write is
//! detected as a missing/invalid manifest rather than a silently short
//! corpus.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, EEGRecording, Sentence, Vocabulary};
use crate::autodiff::Tensor;

pub(crate) const FORMAT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    name: String,
    format_version: String,
    sample_rate: f64,
    channel_labels: Vec<String>,
    n_pairs: usize,
    seed: u64,
    vocab_crc32: u32,
    pairs: Vec<PairMeta>,
}

#[derive(Serialize, Deserialize)]
struct PairMeta {
    id: String,
    n_timesteps: usize,
    sig_crc32: u32,
    txt_crc32: u32,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Writes `corpus` into the directory `path` (created if absent) in the
/// container layout. Rejects invalid corpora, including empty ones.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), DataError> {
    corpus.validate()?;
    fs::create_dir_all(path).map_err(|e| DataError::io(path, e))?;

    let mut vocab_bytes = Vec::new();
    for t in corpus.vocabulary.tokens() {
        vocab_bytes.extend_from_slice(t.as_bytes());
        vocab_bytes.push(b'\n');
    }
    write_file(&path.join("vocab.txt"), &vocab_bytes)?;

    let mut pairs = Vec::with_capacity(corpus.pairs.len());
    for (idx, (rec, sent)) in corpus.pairs.iter().enumerate() {
        let mut sig = Vec::with_capacity(rec.samples.numel() * 4);
        for v in rec.samples.data() {
            sig.extend_from_slice(&v.to_le_bytes());
        }
        let txt = sent.raw_text.as_bytes();
        write_file(&path.join(format!("sig_{idx}.f32")), &sig)?;
        write_file(&path.join(format!("txt_{idx}.txt")), txt)?;
        pairs.push(PairMeta {
            id: rec.id.clone(),
            n_timesteps: rec.n_timesteps(),
            sig_crc32: crc32fast::hash(&sig),
            txt_crc32: crc32fast::hash(txt),
        });
    }

    let manifest = Manifest {
        name: corpus.name.clone(),
        format_version: FORMAT_VERSION.to_string(),
        sample_rate: corpus.sample_rate,
        channel_labels: corpus.channel_labels.clone(),
        n_pairs: corpus.pairs.len(),
        seed: corpus.seed,
        vocab_crc32: crc32fast::hash(&vocab_bytes),
        pairs,
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::Format(format!("manifest serialization: {e}")))?;
    json.push('\n');
    write_file(&path.join("manifest.json"), json.as_bytes())
}

/// Loads a corpus directory, verifying the format version, every CRC32, the
/// declared shapes, and all type invariants.
pub fn load_corpus(path: &Path) -> Result<Corpus, DataError> {
    let manifest_path = path.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(DataError::MissingManifest(path.display().to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| DataError::Format(format!("manifest.json: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::Format(format!(
            "unsupported format_version {:?} (expected {:?})",
            manifest.format_version, FORMAT_VERSION
        )));
    }
    if manifest.pairs.len() != manifest.n_pairs {
        return Err(DataError::Format(format!(
            "manifest declares {} pairs but lists {}",
            manifest.n_pairs,
            manifest.pairs.len()
        )));
    }

    let vocab_bytes = read_file(&path.join("vocab.txt"))?;
    if crc32fast::hash(&vocab_bytes) != manifest.vocab_crc32 {
        return Err(DataError::Checksum("vocab.txt".into()));
    }
    let vocab_text = String::from_utf8(vocab_bytes)
        .map_err(|_| DataError::Format("vocab.txt is not UTF-8".into()))?;
    let vocabulary =
        Vocabulary::from_tokens(vocab_text.lines().map(str::to_string).collect())?;

    let n_channels = manifest.channel_labels.len();
    let mut corpus_pairs = Vec::with_capacity(manifest.n_pairs);
    for (idx, meta) in manifest.pairs.iter().enumerate() {
        let sig_name = format!("sig_{idx}.f32");
        let sig = read_file(&path.join(&sig_name))?;
        if crc32fast::hash(&sig) != meta.sig_crc32 {
            return Err(DataError::Checksum(sig_name));
        }
        let expected_len = n_channels * meta.n_timesteps * 4;
        if sig.len() != expected_len {
            return Err(DataError::ChannelMismatch {
                file: sig_name,
                expected: n_channels,
                got: if meta.n_timesteps == 0 { 0 } else { sig.len() / (4 * meta.n_timesteps) },
            });
        }
        let samples: Vec<f32> = sig
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let rec = EEGRecording::new(
            meta.id.clone(),
            manifest.channel_labels.clone(),
            manifest.sample_rate,
            Tensor::new(vec![n_channels, meta.n_timesteps], samples)
                .map_err(|e| DataError::Format(e.to_string()))?,
        )?;

        let txt_name = format!("txt_{idx}.txt");
        let txt = read_file(&path.join(&txt_name))?;
        if crc32fast::hash(&txt) != meta.txt_crc32 {
            return Err(DataError::Checksum(txt_name));
        }
        let raw = String::from_utf8(txt)
            .map_err(|_| DataError::Format(format!("{txt_name} is not UTF-8")))?;
        corpus_pairs.push((rec, Sentence::new(raw)?));
    }

    let corpus = Corpus {
        name: manifest.name,
        sample_rate: manifest.sample_rate,
        channel_labels: manifest.channel_labels,
        seed: manifest.seed,
        pairs: corpus_pairs,
        vocabulary,
    };
    corpus.validate()?;
    Ok(corpus)
}
