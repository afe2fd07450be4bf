//! Synthetic corpus generation.
//!
//! Every vocabulary word gets a fixed per-channel waveform template drawn
//! once from the seeded generator; a recording is the temporal concatenation
//! of its sentence's templates plus i.i.d. Gaussian noise. This gives the
//! pipeline a learnable signal-to-text mapping at desk scale: a decoder that
//! recovers the token sequence from the waveform exists by construction.
//!
//! Generation is a pure function of the config. Templates, sentence drawing,
//! and per-recording noise use separate derived RNG streams, so corpora that
//! differ only in `n_sentences` share templates and agree on their common
//! sentence prefix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Corpus, DataError, EEGRecording, Sentence, Vocabulary};
use crate::autodiff::Tensor;
use crate::mix_seed;
use crate::regions::canonical_channel_labels;

// stream tags for deriving independent generators from one seed
const TEMPLATE_STREAM: u64 = 1;
const SENTENCE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

pub const SYNTH_SAMPLE_RATE: f64 = 500.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub vocab_size: usize,
    /// Inclusive (min, max) sentence length in words.
    pub sentence_len: (usize, usize),
    pub n_channels: usize,
    /// Samples of signal per word.
    pub template_len: usize,
    /// Standard deviation of the additive Gaussian noise, in microvolts.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sentences: 32,
            vocab_size: 50,
            sentence_len: (4, 8),
            n_channels: 105,
            template_len: 50,
            noise_std: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |d: &str| Err(DataError::InvalidSynthConfig(d.to_string()));
        if self.n_sentences == 0 {
            return bad("n_sentences must be positive");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.sentence_len.0 == 0 || self.sentence_len.0 > self.sentence_len.1 {
            return bad("sentence_len must satisfy 1 <= min <= max");
        }
        if self.n_channels == 0 {
            return bad("n_channels must be positive");
        }
        if self.template_len == 0 {
            return bad("template_len must be positive");
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return bad("noise_std must be finite and >= 0");
        }
        Ok(())
    }
}

fn channel_labels(n_channels: usize) -> Vec<String> {
    if n_channels == 105 {
        canonical_channel_labels()
    } else {
        (0..n_channels).map(|i| format!("C{i:03}")).collect()
    }
}

/// One waveform template per vocabulary word, each [n_channels, template_len],
/// standard-normal amplitudes (microvolt scale).
fn token_templates(cfg: &SynthConfig) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, TEMPLATE_STREAM]));
    (0..cfg.vocab_size)
        .map(|_| {
            let data: Vec<f32> = (0..cfg.n_channels * cfg.template_len)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect();
            Tensor::new(vec![cfg.n_channels, cfg.template_len], data)
                .expect("template buffer sized by construction")
        })
        .collect()
}

/// Generates a corpus from `cfg`. Pure: equal configs yield equal corpora.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus, DataError> {
    cfg.validate()?;
    let templates = token_templates(cfg);
    let words: Vec<String> = (0..cfg.vocab_size).map(|i| format!("w{i}")).collect();
    let vocabulary = Vocabulary::from_words(words.iter().map(String::as_str))?;
    let labels = channel_labels(cfg.n_channels);

    let mut sent_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, SENTENCE_STREAM]));
    let mut pairs = Vec::with_capacity(cfg.n_sentences);
    for idx in 0..cfg.n_sentences {
        let len = sent_rng.gen_range(cfg.sentence_len.0..=cfg.sentence_len.1);
        let word_ids: Vec<usize> = (0..len).map(|_| sent_rng.gen_range(0..cfg.vocab_size)).collect();
        let raw_text = word_ids.iter().map(|&w| words[w].as_str()).collect::<Vec<_>>().join(" ");
        let sentence = Sentence::new(raw_text)?;

        // concatenate templates along time: sample[c][word*L + t]
        let t_total = len * cfg.template_len;
        let mut data = vec![0.0f32; cfg.n_channels * t_total];
        for (pos, &w) in word_ids.iter().enumerate() {
            let tpl = templates[w].data();
            for c in 0..cfg.n_channels {
                let dst = c * t_total + pos * cfg.template_len;
                let src = c * cfg.template_len;
                data[dst..dst + cfg.template_len]
                    .copy_from_slice(&tpl[src..src + cfg.template_len]);
            }
        }
        if cfg.noise_std > 0.0 {
            let mut noise_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, NOISE_STREAM, idx as u64]));
            for v in &mut data {
                *v += (noise_rng.sample::<f64, _>(StandardNormal) * cfg.noise_std) as f32;
            }
        }
        let rec = EEGRecording::new(
            format!("rec_{idx:04}"),
            labels.clone(),
            SYNTH_SAMPLE_RATE,
            Tensor::new(vec![cfg.n_channels, t_total], data)
                .expect("recording buffer sized by construction"),
        )?;
        pairs.push((rec, sentence));
    }

    let corpus = Corpus {
        name: format!("synth-seed{}", cfg.seed),
        sample_rate: SYNTH_SAMPLE_RATE,
        channel_labels: labels,
        seed: cfg.seed,
        pairs,
        vocabulary,
    };
    corpus.validate()?;
    Ok(corpus)
}
