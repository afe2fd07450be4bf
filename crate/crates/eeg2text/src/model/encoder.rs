//! Encoder-side graph builders: compressor, transformer stack, pre-training
//! reconstruction decoder, and the multi-view encoder with global fusion.

use super::{EncoderMemory, InputMode, ModelConfig, ModelError, LN_EPS};
use crate::autodiff::{lit, nn, AutodiffError, Bound, Float, Graph, Params, Tensor, ValueId};
use crate::data::{spectrogram, EEGRecording};
use crate::regions::split_by_region;

pub(crate) fn attn_weights(b: &Bound, prefix: &str) -> nn::AttnWeights {
    nn::AttnWeights {
        wq: b.id(&format!("{prefix}attn.wq")),
        bq: b.id(&format!("{prefix}attn.bq")),
        wk: b.id(&format!("{prefix}attn.wk")),
        bk: b.id(&format!("{prefix}attn.bk")),
        wv: b.id(&format!("{prefix}attn.wv")),
        bv: b.id(&format!("{prefix}attn.bv")),
        wo: b.id(&format!("{prefix}attn.wo")),
        bo: b.id(&format!("{prefix}attn.bo")),
    }
}

/// Sinusoidal positional encoding as a constant `[t, d]` node.
pub fn positional_encoding<T: Float>(
    g: &mut Graph<T>,
    t: usize,
    d: usize,
) -> Result<ValueId, AutodiffError> {
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            data.push(lit::<T>(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    g.constant(vec![t, d], data)
}

/// One pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
pub fn transformer_layer<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    x: ValueId,
    n_heads: usize,
    causal: bool,
) -> Result<ValueId, AutodiffError> {
    let eps = lit::<T>(LN_EPS);
    let ln = g.layer_norm(x, eps)?;
    let attn = nn::multi_head_attention(g, ln, ln, &attn_weights(b, prefix), n_heads, causal)?;
    let x = g.add(x, attn)?;
    let ln = g.layer_norm(x, eps)?;
    let h = g.matmul(ln, b.id(&format!("{prefix}mlp.w1")))?;
    let h = g.add_row_vec(h, b.id(&format!("{prefix}mlp.b1")))?;
    let h = g.gelu(h)?;
    let h = g.matmul(h, b.id(&format!("{prefix}mlp.w2")))?;
    let h = g.add_row_vec(h, b.id(&format!("{prefix}mlp.b2")))?;
    g.add(x, h)
}

/// Per-channel bias add on a `[c, h, w]` node.
fn add_chan_bias_3d<T: Float>(
    g: &mut Graph<T>,
    x: ValueId,
    bias: ValueId,
) -> Result<ValueId, AutodiffError> {
    let (c, h, w) = match *g.shape(x) {
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_chan_bias_3d",
                details: format!("expected rank 3, got {s:?}"),
            })
        }
    };
    let flat = g.reshape(x, vec![c, h * w])?;
    let biased = g.add_col_vec(flat, bias)?;
    g.reshape(biased, vec![c, h, w])
}

/// Compressor: raw `[c_in, t]` or spectrogram `[c_in, f, frames]` down to
/// `[t_prime, d_model]` encoder positions.
pub fn compress_graph<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    x: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, AutodiffError> {
    match cfg.input_mode {
        InputMode::Raw => {
            let c = &cfg.conv;
            let h = g.conv1d(x, b.id(&format!("{prefix}comp.w1")), c.s1)?;
            let h = g.add_col_vec(h, b.id(&format!("{prefix}comp.b1")))?;
            let h = g.gelu(h)?;
            let h = g.conv1d(h, b.id(&format!("{prefix}comp.w2")), c.s2)?;
            let h = g.add_col_vec(h, b.id(&format!("{prefix}comp.b2")))?;
            g.transpose(h)
        }
        InputMode::Spectrogram => {
            let sc = &cfg.spec_conv;
            let h = g.conv2d(x, b.id(&format!("{prefix}comp.w1")), sc.s1)?;
            let h = add_chan_bias_3d(g, h, b.id(&format!("{prefix}comp.b1")))?;
            let h = g.gelu(h)?;
            let h = g.conv2d(h, b.id(&format!("{prefix}comp.w2")), sc.s2)?;
            let h = add_chan_bias_3d(g, h, b.id(&format!("{prefix}comp.b2")))?;
            // [c2, h2, w2] rows are already (channel, freq) pairs per frame
            let (c2, h2, w2) = match *g.shape(h) {
                [a, bb, c] => (a, bb, c),
                _ => unreachable!("conv2d output is rank 3"),
            };
            let flat = g.reshape(h, vec![c2 * h2, w2])?;
            let frames = g.transpose(flat)?;
            let proj = g.matmul(frames, b.id(&format!("{prefix}comp.proj.w")))?;
            g.add_row_vec(proj, b.id(&format!("{prefix}comp.proj.b")))
        }
    }
}

/// Compressor, positional encoding, and the transformer layers, without the
/// final normalization. Regional encoders fuse from here; the single-view
/// encoder adds the final norm itself.
pub fn encoder_stack_graph<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    x: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, AutodiffError> {
    let h = compress_graph(g, b, prefix, x, cfg)?;
    let t_prime = g.shape(h)[0];
    let pe = positional_encoding(g, t_prime, cfg.d_model)?;
    let mut h = g.add(h, pe)?;
    for i in 0..cfg.n_encoder_layers {
        h = transformer_layer(g, b, &format!("{prefix}layer{i}."), h, cfg.n_heads, false)?;
    }
    Ok(h)
}

/// Full single-view encoder: stack plus final normalization.
pub fn encode_single_graph<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    x: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, AutodiffError> {
    let h = encoder_stack_graph(g, b, prefix, x, cfg)?;
    g.layer_norm(h, lit::<T>(LN_EPS))
}

/// Reconstruction decoder: transposed convolutions inverting the raw
/// compressor's shape transform, `[t_prime, d]` back to `[c_out, t]`.
pub fn reconstruct_graph<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    mem: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, AutodiffError> {
    let c = &cfg.conv;
    let h = g.transpose(mem)?;
    let h = g.conv_transpose1d(h, b.id("recon.w1"), c.s2)?;
    let h = g.add_col_vec(h, b.id("recon.b1"))?;
    let h = g.gelu(h)?;
    let h = g.conv_transpose1d(h, b.id("recon.w2"), c.s1)?;
    g.add_col_vec(h, b.id("recon.b2"))
}

/// Multi-view encoder nodes: the fused memory and, for locality tests and
/// diagnostics, each region's pre-fusion states.
pub struct MultiviewGraph {
    pub memory: ValueId,
    pub regional: Vec<ValueId>,
}

/// Regional stacks, learned segment embeddings, position-axis concatenation,
/// global fusion layers, final normalization. `views[k]` must be the input
/// node for partition group k.
pub fn encode_multiview_graph<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    views: &[ValueId],
    cfg: &ModelConfig,
) -> Result<MultiviewGraph, AutodiffError> {
    if views.len() != cfg.partition.groups.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "encode_multiview",
            details: format!(
                "{} views for {} partition groups",
                views.len(),
                cfg.partition.groups.len()
            ),
        });
    }
    let mut regional = Vec::with_capacity(views.len());
    let mut tagged = Vec::with_capacity(views.len());
    for (k, &x) in views.iter().enumerate() {
        let h = encoder_stack_graph(g, b, &format!("region{k}."), x, cfg)?;
        regional.push(h);
        let seg = g.embedding_lookup(b.id("segment_emb"), &[k])?;
        let seg = g.reshape(seg, vec![cfg.d_model])?;
        tagged.push(g.add_row_vec(h, seg)?);
    }
    let mut h = g.concat_rows(&tagged)?;
    for i in 0..cfg.n_global_layers {
        h = transformer_layer(g, b, &format!("global.layer{i}."), h, cfg.n_heads, false)?;
    }
    let memory = g.layer_norm(h, lit::<T>(LN_EPS))?;
    Ok(MultiviewGraph { memory, regional })
}

// ----- inference wrappers -----

fn tensor_at(g: &Graph<f32>, id: ValueId) -> Tensor<f32> {
    Tensor::new(g.shape(id).to_vec(), g.values(id).to_vec()).expect("graph shapes are consistent")
}

/// Builds the input node for one recording: raw mode truncates to a whole
/// number of patches; spectrogram mode converts via the configured STFT.
pub(crate) fn input_node<T: Float>(
    g: &mut Graph<T>,
    rec: &EEGRecording,
    cfg: &ModelConfig,
) -> Result<ValueId, ModelError> {
    match cfg.input_mode {
        InputMode::Raw => {
            let t = rec.n_timesteps();
            let kept = (t / cfg.patch_len) * cfg.patch_len;
            if kept == 0 {
                return Err(ModelError::InputTooShort { got: t, need: cfg.patch_len });
            }
            let c = rec.n_channels();
            let mut data = Vec::with_capacity(c * kept);
            for ch in 0..c {
                data.extend(
                    rec.samples.data()[ch * t..ch * t + kept]
                        .iter()
                        .map(|&v| lit::<T>(v as f64)),
                );
            }
            Ok(g.constant(vec![c, kept], data)?)
        }
        InputMode::Spectrogram => {
            let spec = spectrogram(rec, cfg.window_len, cfg.hop_len)
                .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
            let data = spec.values.data().iter().map(|&v| lit::<T>(v as f64)).collect();
            Ok(g.constant(spec.values.shape().to_vec(), data)?)
        }
    }
}

/// Encodes one recording with the single-view encoder (frozen parameters).
pub fn encode_single(
    rec: &EEGRecording,
    cfg: &ModelConfig,
    params: &Params<f32>,
) -> Result<EncoderMemory, ModelError> {
    cfg.validate()?;
    let mut g = Graph::new();
    let b = Bound::bind(&mut g, params, |_| false);
    let x = input_node(&mut g, rec, cfg)?;
    let out = encode_single_graph(&mut g, &b, "enc.", x, cfg)?;
    Ok(EncoderMemory { states: tensor_at(&g, out), source_id: rec.id.clone() })
}

/// Encodes one recording with the multi-view encoder (frozen parameters).
pub fn encode_multiview(
    rec: &EEGRecording,
    cfg: &ModelConfig,
    params: &Params<f32>,
) -> Result<EncoderMemory, ModelError> {
    cfg.validate()?;
    let views = split_by_region(rec, &cfg.partition)?;
    let mut g = Graph::new();
    let b = Bound::bind(&mut g, params, |_| false);
    let view_nodes = views
        .iter()
        .map(|v| input_node(&mut g, v, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let out = encode_multiview_graph(&mut g, &b, &view_nodes, cfg)?;
    Ok(EncoderMemory { states: tensor_at(&g, out.memory), source_id: rec.id.clone() })
}

/// Runs the pre-training forward path on already-masked patches: concatenate,
/// encode, reconstruct. Returns the `[c, t]` reconstruction.
pub fn reconstruct(
    patches: &[Tensor<f32>],
    cfg: &ModelConfig,
    params: &Params<f32>,
) -> Result<Tensor<f32>, ModelError> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(ModelError::InputTooShort { got: 0, need: cfg.patch_len });
    }
    let c = patches[0].shape()[0];
    let total: usize = patches.iter().map(|p| p.shape()[1]).sum();
    let mut data = vec![0.0f32; c * total];
    let mut offset = 0;
    for p in patches {
        let (pc, pl) = (p.shape()[0], p.shape()[1]);
        if pc != c {
            return Err(ModelError::InvalidConfig(format!(
                "patch channel counts differ: {pc} vs {c}"
            )));
        }
        for ch in 0..c {
            data[ch * total + offset..ch * total + offset + pl]
                .copy_from_slice(&p.data()[ch * pl..(ch + 1) * pl]);
        }
        offset += pl;
    }
    let mut g = Graph::new();
    let b = Bound::bind(&mut g, params, |_| false);
    let x = g.constant(vec![c, total], data)?;
    let mem = encode_single_graph(&mut g, &b, "enc.", x, cfg)?;
    let out = reconstruct_graph(&mut g, &b, mem, cfg)?;
    Ok(tensor_at(&g, out))
}
