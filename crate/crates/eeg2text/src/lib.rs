//! EEG-to-text decoding pipeline.
//!
//! Decodes natural-language sentences from multi-channel EEG recordings with a
//! convolutional-transformer encoder and an autoregressive text decoder, all
//! trained from scratch on CPU. The library covers the full workflow:
//!
//! ```text
//!   synth ─► corpus dir ─► [normalize] ─► mask ─► pretrain ──► checkpoint
//!                │                                                 │ init
//!                ├────────► split_by_region ─► multi-view encoder ─┤
//!                │                             (or single-view)    ▼
//!                └►─ sentences ──► teacher forcing ─► finetune ─► checkpoint
//!                                                                   │
//!                        report ◄── BLEU / ROUGE-1 ◄── generate ◄───┘
//! ```
//!
//! * [`data`]: recordings, sentences, vocabulary, the on-disk corpus
//!   container, synthetic corpus generation, z-score normalization,
//!   patchifying, and magnitude spectrograms.
//! * [`masking`]: masked-signal specs for self-supervised pre-training:
//!   `random`, `continuous`, and `remask` patch selection plus mask
//!   application with a learned fill vector.
//! * [`regions`]: the ten-region electrode partition of the 105-channel
//!   montage and the splitter that turns one recording into per-region views.
//! * [`autodiff`]: a small reverse-mode tape: tensors, the op set needed by
//!   the models (matmul, conv, attention pieces, cross-entropy, ...), Adam,
//!   and a finite-difference gradient checker.
//! * [`model`]: the networks: raw and spectrogram compressors, transformer
//!   encoder, reconstruction decoder for pre-training, ten-view encoder with
//!   global fusion, text decoder, and greedy/beam generation.
//! * [`training`]: pre-training and fine-tuning loops, per-epoch encoder
//!   freezing schedules, and the binary checkpoint format.
//! * [`evaluation`]: corpus BLEU-N and ROUGE-1, the seven-metric report,
//!   and per-sentence case reports.
//! * [`cli`]: the `eeg2text` command-line tool built on all of the above.
//!
//! Determinism is a contract everywhere: a fixed `(seed, config, thread
//! count)` yields bit-identical corpora, loss histories, checkpoints, and
//! reports. All randomness flows from explicitly seeded ChaCha streams; no
//! op reads ambient entropy.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod evaluation;
pub mod masking;
pub mod model;
pub mod regions;
pub mod training;

/// Mixes words into a single deterministic 64-bit stream key (splitmix64
/// finalizer per word). Used wherever a sub-seed is derived from
/// `(seed, epoch, index, tag)` tuples so streams are stable across runs and
/// platforms.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        let mut z = h ^ w.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
