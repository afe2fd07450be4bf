//! Model architecture: convolutional compressor, transformer encoder,
//! reconstruction decoder for pre-training, multi-view encoder with global
//! fusion, and the autoregressive text decoder.
//!
//! Every forward pass is built as an autodiff graph, so the same code path
//! serves inference (parameters bound frozen) and training (parameters bound
//! trainable). Functions named `*_graph` append to a caller-owned graph and
//! return node ids; the plain-named wrappers own a graph internally and
//! return tensors.
//!
//! Parameter sets are flat name->tensor maps. Naming scheme:
//!
//! ```text
//! enc.comp.*                single-view compressor
//! enc.layer{i}.*            single-view transformer layers
//! recon.*                   reconstruction decoder (pre-training)
//! mask_fill                 learned per-channel mask fill
//! region{k}.comp.* /layer{i}.*   regional encoders (multi-view)
//! segment_emb               per-region embedding added before fusion
//! global.layer{i}.*         fusion transformer
//! dec.tok_emb, dec.layer{i}.*, dec.out.*   text decoder
//! ```

mod decoder;
mod encoder;

pub use decoder::{decode_text, decode_text_graph, generate, GenMode};
pub(crate) use encoder::input_node;
pub use encoder::{
    compress_graph, encode_multiview, encode_multiview_graph, encode_single, encode_single_graph,
    encoder_stack_graph, positional_encoding, reconstruct, reconstruct_graph, transformer_layer,
    MultiviewGraph,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Params, Tensor};
use crate::mix_seed;
use crate::regions::{default_partition, ChannelPartition, RegionError};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("decoder prefix must start with BOS")]
    PrefixMissingBos,
    #[error("prefix length {got} exceeds max_text_len {max}")]
    OverlongPrefix { got: usize, max: usize },
    #[error("input of {got} samples is shorter than the compressor's receptive field {need}")]
    InputTooShort { got: usize, need: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Raw,
    Spectrogram,
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputMode::Raw => "raw",
            InputMode::Spectrogram => "spectrogram",
        })
    }
}

impl std::str::FromStr for InputMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "raw" => Ok(InputMode::Raw),
            "spectrogram" => Ok(InputMode::Spectrogram),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown input mode {other:?} (expected raw or spectrogram)"
            ))),
        }
    }
}

/// Raw-mode compressor: two strided 1-D convolutions, channels -> c1 ->
/// d_model, total temporal stride s1 x s2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub k1: usize,
    pub s1: usize,
    pub c1: usize,
    pub k2: usize,
    pub s2: usize,
}

/// Spectrogram-mode compressor: two strided 2-D convolutions over
/// (freq, frame), then per-frame flatten and a linear map to d_model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecConvSpec {
    pub c1: usize,
    pub k1: (usize, usize),
    pub s1: (usize, usize),
    pub c2: usize,
    pub k2: (usize, usize),
    pub s2: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_global_layers: usize,
    pub conv: ConvSpec,
    pub spec_conv: SpecConvSpec,
    /// STFT settings for spectrogram input mode.
    pub window_len: usize,
    pub hop_len: usize,
    pub patch_len: usize,
    pub max_text_len: usize,
    pub vocab_size: usize,
    pub input_mode: InputMode,
    pub partition: ChannelPartition,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            n_global_layers: 2,
            conv: ConvSpec { k1: 25, s1: 25, c1: 64, k2: 2, s2: 2 },
            spec_conv: SpecConvSpec {
                c1: 16,
                k1: (8, 2),
                s1: (4, 1),
                c2: 16,
                k2: (4, 2),
                s2: (2, 1),
            },
            window_len: 64,
            hop_len: 32,
            patch_len: 50,
            max_text_len: 32,
            vocab_size: 54,
            input_mode: InputMode::Raw,
            partition: default_partition(),
        }
    }
}

fn conv_out(len: usize, k: usize, s: usize) -> Option<usize> {
    if k == 0 || s == 0 || k > len {
        None
    } else {
        Some((len - k) / s + 1)
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |d: String| Err(ModelError::InvalidConfig(d));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_encoder_layers == 0 || self.n_decoder_layers == 0 || self.n_global_layers == 0 {
            return bad("layer counts must be positive".into());
        }
        let c = &self.conv;
        if c.k1 == 0 || c.s1 == 0 || c.c1 == 0 || c.k2 == 0 || c.s2 == 0 {
            return bad("conv settings must be positive".into());
        }
        let sc = &self.spec_conv;
        if sc.c1 == 0
            || sc.c2 == 0
            || [sc.k1, sc.s1, sc.k2, sc.s2].iter().any(|p| p.0 == 0 || p.1 == 0)
        {
            return bad("spectrogram conv settings must be positive".into());
        }
        if self.window_len == 0 || self.hop_len == 0 {
            return bad("window_len and hop_len must be positive".into());
        }
        if self.patch_len == 0 {
            return bad("patch_len must be positive".into());
        }
        if self.max_text_len < 2 {
            return bad("max_text_len must allow BOS plus at least one token".into());
        }
        if self.vocab_size < 5 {
            return bad("vocab_size must cover the four specials plus content".into());
        }
        if self.input_mode == InputMode::Spectrogram && self.spec_freq_dims().is_none() {
            return bad(format!(
                "spectrogram conv kernels do not fit {} frequency bins",
                self.n_freq_bins()
            ));
        }
        Ok(())
    }

    pub fn n_freq_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Frequency extents after each 2-D conv, None if the kernels don't fit.
    fn spec_freq_dims(&self) -> Option<(usize, usize)> {
        let sc = &self.spec_conv;
        let h1 = conv_out(self.n_freq_bins(), sc.k1.0, sc.s1.0)?;
        let h2 = conv_out(h1, sc.k2.0, sc.s2.0)?;
        Some((h1, h2))
    }

    /// Width of the flattened per-frame feature the linear projection sees.
    pub fn spec_flat_dim(&self) -> Result<usize, ModelError> {
        let (_, h2) = self.spec_freq_dims().ok_or_else(|| {
            ModelError::InvalidConfig(format!(
                "spectrogram conv kernels do not fit {} frequency bins",
                self.n_freq_bins()
            ))
        })?;
        Ok(self.spec_conv.c2 * h2)
    }

    /// Smallest raw input length the compressor accepts.
    pub fn raw_receptive_field(&self) -> usize {
        let c = &self.conv;
        // need t1 >= k2, i.e. (t - k1)/s1 + 1 >= k2
        c.k1 + (c.k2 - 1) * c.s1
    }

    /// Number of encoder positions a raw input of `t` samples compresses to.
    pub fn raw_t_prime(&self, t: usize) -> Result<usize, ModelError> {
        let c = &self.conv;
        conv_out(t, c.k1, c.s1)
            .and_then(|t1| conv_out(t1, c.k2, c.s2))
            .ok_or(ModelError::InputTooShort { got: t, need: self.raw_receptive_field() })
    }

    /// Number of encoder positions a spectrogram with `n_frames` frames
    /// compresses to.
    pub fn spec_t_prime(&self, n_frames: usize) -> Result<usize, ModelError> {
        let sc = &self.spec_conv;
        conv_out(n_frames, sc.k1.1, sc.s1.1)
            .and_then(|w1| conv_out(w1, sc.k2.1, sc.s2.1))
            .ok_or_else(|| {
                ModelError::InvalidConfig(format!(
                    "spectrogram conv kernels do not fit {n_frames} frames"
                ))
            })
    }
}

/// Encoder output handed to the text decoder: `states` is
/// `[mem_len, d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderMemory {
    pub states: Tensor<f32>,
    pub source_id: String,
}

impl EncoderMemory {
    pub fn mem_len(&self) -> usize {
        self.states.shape()[0]
    }
}

// ----- parameter initialization -----
//
// All draws are N(0, 1/fan_in) from a ChaCha stream derived from the seed;
// biases and embeddings that act additively start at zero. Insertion order
// is fixed, so a given (seed, shape-set) always yields the same values.

const PARAM_STREAM: u64 = 21;

pub(crate) struct ParamBuilder {
    rng: ChaCha8Rng,
    params: Params<f32>,
}

impl ParamBuilder {
    pub(crate) fn new(seed: u64) -> Self {
        ParamBuilder {
            rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, PARAM_STREAM])),
            params: Params::new(),
        }
    }

    fn weight(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) {
        let std = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::randn(shape, std, &mut self.rng);
        self.params.insert(name, t).expect("init names are unique");
    }

    fn zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.params.insert(name, Tensor::zeros(shape)).expect("init names are unique");
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for part in ["wq", "wk", "wv", "wo"] {
            self.weight(&format!("{prefix}attn.{part}"), vec![d, d], d);
        }
        for part in ["bq", "bk", "bv", "bo"] {
            self.zeros(&format!("{prefix}attn.{part}"), vec![d]);
        }
    }

    fn mlp(&mut self, prefix: &str, d: usize) {
        self.weight(&format!("{prefix}mlp.w1"), vec![d, 4 * d], d);
        self.zeros(&format!("{prefix}mlp.b1"), vec![4 * d]);
        self.weight(&format!("{prefix}mlp.w2"), vec![4 * d, d], 4 * d);
        self.zeros(&format!("{prefix}mlp.b2"), vec![d]);
    }

    fn transformer_layer(&mut self, prefix: &str, d: usize) {
        self.attention(prefix, d);
        self.mlp(prefix, d);
    }

    fn cross_layer(&mut self, prefix: &str, d: usize) {
        for block in ["self_attn.", "cross_attn."] {
            let p = format!("{prefix}{block}");
            for part in ["wq", "wk", "wv", "wo"] {
                self.weight(&format!("{p}attn.{part}"), vec![d, d], d);
            }
            for part in ["bq", "bk", "bv", "bo"] {
                self.zeros(&format!("{p}attn.{part}"), vec![d]);
            }
        }
        self.mlp(prefix, d);
    }

    fn compressor(&mut self, prefix: &str, c_in: usize, cfg: &ModelConfig) {
        match cfg.input_mode {
            InputMode::Raw => {
                let c = &cfg.conv;
                self.weight(&format!("{prefix}comp.w1"), vec![c.c1, c_in, c.k1], c_in * c.k1);
                self.zeros(&format!("{prefix}comp.b1"), vec![c.c1]);
                self.weight(
                    &format!("{prefix}comp.w2"),
                    vec![cfg.d_model, c.c1, c.k2],
                    c.c1 * c.k2,
                );
                self.zeros(&format!("{prefix}comp.b2"), vec![cfg.d_model]);
            }
            InputMode::Spectrogram => {
                let sc = &cfg.spec_conv;
                self.weight(
                    &format!("{prefix}comp.w1"),
                    vec![sc.c1, c_in, sc.k1.0, sc.k1.1],
                    c_in * sc.k1.0 * sc.k1.1,
                );
                self.zeros(&format!("{prefix}comp.b1"), vec![sc.c1]);
                self.weight(
                    &format!("{prefix}comp.w2"),
                    vec![sc.c2, sc.c1, sc.k2.0, sc.k2.1],
                    sc.c1 * sc.k2.0 * sc.k2.1,
                );
                self.zeros(&format!("{prefix}comp.b2"), vec![sc.c2]);
                let flat = cfg.spec_flat_dim().expect("validated config");
                self.weight(&format!("{prefix}comp.proj.w"), vec![flat, cfg.d_model], flat);
                self.zeros(&format!("{prefix}comp.proj.b"), vec![cfg.d_model]);
            }
        }
    }

    fn finish(self) -> Params<f32> {
        self.params
    }
}

/// Single-view encoder parameters for `c_in` input channels: compressor plus
/// `n_encoder_layers` transformer layers under the `enc.` prefix.
pub fn init_encoder_params(cfg: &ModelConfig, c_in: usize, seed: u64) -> Params<f32> {
    let mut b = ParamBuilder::new(seed);
    add_encoder(&mut b, "enc.", c_in, cfg);
    b.finish()
}

fn add_encoder(b: &mut ParamBuilder, prefix: &str, c_in: usize, cfg: &ModelConfig) {
    b.compressor(prefix, c_in, cfg);
    for i in 0..cfg.n_encoder_layers {
        b.transformer_layer(&format!("{prefix}layer{i}."), cfg.d_model);
    }
}

/// Pre-training parameters: single-view encoder, reconstruction decoder back
/// to `c_in` channels, and the learned mask fill.
pub fn init_pretrain_params(cfg: &ModelConfig, c_in: usize, seed: u64) -> Params<f32> {
    let mut b = ParamBuilder::new(seed);
    add_encoder(&mut b, "enc.", c_in, cfg);
    let c = &cfg.conv;
    b.weight("recon.w1", vec![cfg.d_model, c.c1, c.k2], cfg.d_model * c.k2);
    b.zeros("recon.b1", vec![c.c1]);
    b.weight("recon.w2", vec![c.c1, c_in, c.k1], c.c1 * c.k1);
    b.zeros("recon.b2", vec![c_in]);
    b.zeros("mask_fill", vec![c_in]);
    b.finish()
}

/// Multi-view encoder parameters: one compressor-plus-layers stack per
/// partition group, the segment embedding table, and the global fusion
/// layers.
pub fn init_multiview_params(cfg: &ModelConfig, seed: u64) -> Params<f32> {
    let mut b = ParamBuilder::new(seed);
    for (k, group) in cfg.partition.groups.iter().enumerate() {
        add_encoder(&mut b, &format!("region{k}."), group.channels.len(), cfg);
    }
    b.zeros("segment_emb", vec![cfg.partition.groups.len(), cfg.d_model]);
    for i in 0..cfg.n_global_layers {
        b.transformer_layer(&format!("global.layer{i}."), cfg.d_model);
    }
    b.finish()
}

/// Text decoder parameters: token embedding, `n_decoder_layers` blocks of
/// causal self-attention plus cross-attention plus MLP, output projection.
pub fn init_decoder_params(cfg: &ModelConfig, seed: u64) -> Params<f32> {
    let mut b = ParamBuilder::new(seed);
    add_decoder(&mut b, cfg);
    b.finish()
}

fn add_decoder(b: &mut ParamBuilder, cfg: &ModelConfig) {
    b.weight("dec.tok_emb", vec![cfg.vocab_size, cfg.d_model], cfg.d_model);
    for i in 0..cfg.n_decoder_layers {
        b.cross_layer(&format!("dec.layer{i}."), cfg.d_model);
    }
    b.weight("dec.out.w", vec![cfg.d_model, cfg.vocab_size], cfg.d_model);
    b.zeros("dec.out.b", vec![cfg.vocab_size]);
}

/// Full single-view translation model: encoder plus text decoder.
pub fn init_single_view_params(cfg: &ModelConfig, c_in: usize, seed: u64) -> Params<f32> {
    let mut b = ParamBuilder::new(seed);
    add_encoder(&mut b, "enc.", c_in, cfg);
    add_decoder(&mut b, cfg);
    b.finish()
}

/// Full multi-view translation model: regional encoders, fusion, decoder.
pub fn init_multiview_model_params(cfg: &ModelConfig, seed: u64) -> Params<f32> {
    let mut b = ParamBuilder::new(seed);
    for (k, group) in cfg.partition.groups.iter().enumerate() {
        add_encoder(&mut b, &format!("region{k}."), group.channels.len(), cfg);
    }
    b.zeros("segment_emb", vec![cfg.partition.groups.len(), cfg.d_model]);
    for i in 0..cfg.n_global_layers {
        b.transformer_layer(&format!("global.layer{i}."), cfg.d_model);
    }
    add_decoder(&mut b, cfg);
    b.finish()
}
