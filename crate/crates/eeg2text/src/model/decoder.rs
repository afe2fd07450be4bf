//! Autoregressive text decoder: causal self-attention over the token prefix,
//! cross-attention into the encoder memory, and greedy or beam generation.

use super::encoder::{attn_weights, positional_encoding};
use super::{EncoderMemory, ModelConfig, ModelError, LN_EPS};
use crate::autodiff::{lit, nn, AutodiffError, Bound, Float, Graph, Params, Tensor, ValueId};
use crate::data::{BOS_ID, EOS_ID};

/// Decoding strategy for `generate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    Greedy,
    Beam(usize),
}

/// Builds the decoder forward pass over `prefix` (token ids, BOS first)
/// attending to `memory` (`[mem_len, d]` node). Returns `[prefix_len, vocab]`
/// logits; row t depends only on prefix[0..=t] and the memory.
pub fn decode_text_graph<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    memory: ValueId,
    prefix: &[usize],
    cfg: &ModelConfig,
) -> Result<ValueId, AutodiffError> {
    if prefix.first() != Some(&BOS_ID) {
        return Err(AutodiffError::InvalidArg {
            op: "decode_text",
            details: "prefix must start with BOS".into(),
        });
    }
    if prefix.len() > cfg.max_text_len {
        return Err(AutodiffError::InvalidArg {
            op: "decode_text",
            details: format!("prefix length {} exceeds max_text_len {}", prefix.len(), cfg.max_text_len),
        });
    }
    let eps = lit::<T>(LN_EPS);
    let emb = g.embedding_lookup(b.id("dec.tok_emb"), prefix)?;
    let pe = positional_encoding(g, prefix.len(), cfg.d_model)?;
    let mut h = g.add(emb, pe)?;
    for i in 0..cfg.n_decoder_layers {
        let p = format!("dec.layer{i}.");
        let ln = g.layer_norm(h, eps)?;
        let sa = nn::multi_head_attention(
            g,
            ln,
            ln,
            &attn_weights(b, &format!("{p}self_attn.")),
            cfg.n_heads,
            true,
        )?;
        h = g.add(h, sa)?;
        let ln = g.layer_norm(h, eps)?;
        let ca = nn::multi_head_attention(
            g,
            ln,
            memory,
            &attn_weights(b, &format!("{p}cross_attn.")),
            cfg.n_heads,
            false,
        )?;
        h = g.add(h, ca)?;
        let ln = g.layer_norm(h, eps)?;
        let m = g.matmul(ln, b.id(&format!("{p}mlp.w1")))?;
        let m = g.add_row_vec(m, b.id(&format!("{p}mlp.b1")))?;
        let m = g.gelu(m)?;
        let m = g.matmul(m, b.id(&format!("{p}mlp.w2")))?;
        let m = g.add_row_vec(m, b.id(&format!("{p}mlp.b2")))?;
        h = g.add(h, m)?;
    }
    let h = g.layer_norm(h, eps)?;
    let logits = g.matmul(h, b.id("dec.out.w"))?;
    g.add_row_vec(logits, b.id("dec.out.b"))
}

/// Runs the decoder on a prefix with frozen parameters, returning
/// `[prefix_len, vocab]` logits.
pub fn decode_text(
    memory: &EncoderMemory,
    prefix: &[usize],
    cfg: &ModelConfig,
    params: &Params<f32>,
) -> Result<Tensor<f32>, ModelError> {
    if prefix.first() != Some(&BOS_ID) {
        return Err(ModelError::PrefixMissingBos);
    }
    if prefix.len() > cfg.max_text_len {
        return Err(ModelError::OverlongPrefix { got: prefix.len(), max: cfg.max_text_len });
    }
    let mut g = Graph::new();
    let b = Bound::bind(&mut g, params, |_| false);
    let mem = g.constant(memory.states.shape().to_vec(), memory.states.data().to_vec())?;
    let out = decode_text_graph(&mut g, &b, mem, prefix, cfg)?;
    Ok(Tensor::new(g.shape(out).to_vec(), g.values(out).to_vec())
        .expect("graph shapes are consistent"))
}

/// Index of the largest value, lowest index on ties.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Log-softmax of one logits row, computed in f64 for stable scores.
fn log_probs(row: &[f32]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = max
        + row
            .iter()
            .map(|&v| (v as f64 - max).exp())
            .sum::<f64>()
            .ln();
    row.iter().map(|&v| v as f64 - lse).collect()
}

fn last_row_logits(
    memory: &EncoderMemory,
    prefix: &[usize],
    cfg: &ModelConfig,
    params: &Params<f32>,
) -> Result<Vec<f32>, ModelError> {
    let logits = decode_text(memory, prefix, cfg, params)?;
    let vocab = logits.shape()[1];
    let last = logits.data()[(prefix.len() - 1) * vocab..].to_vec();
    Ok(last)
}

#[derive(Clone)]
struct Beam {
    seq: Vec<usize>,
    /// Sum of token log-probabilities (excludes BOS).
    score: f64,
    done: bool,
}

impl Beam {
    /// Length-normalized score: mean log-probability per emitted token.
    fn normalized(&self) -> f64 {
        let emitted = self.seq.len().saturating_sub(1).max(1);
        self.score / emitted as f64
    }
}

/// Generates a token sequence from BOS, stopping at EOS or `max_len` total
/// ids. Greedy takes the argmax each step (lowest index on ties); beam
/// search keeps `width` hypotheses ranked by length-normalized
/// log-probability.
pub fn generate(
    memory: &EncoderMemory,
    cfg: &ModelConfig,
    params: &Params<f32>,
    mode: GenMode,
    max_len: usize,
) -> Result<Vec<usize>, ModelError> {
    if max_len > cfg.max_text_len {
        return Err(ModelError::OverlongPrefix { got: max_len, max: cfg.max_text_len });
    }
    if max_len == 0 {
        return Err(ModelError::InvalidConfig("max_len must be >= 1".into()));
    }
    let width = match mode {
        GenMode::Greedy => {
            let mut seq = vec![BOS_ID];
            while seq.len() < max_len {
                let row = last_row_logits(memory, &seq, cfg, params)?;
                let tok = argmax(&row);
                seq.push(tok);
                if tok == EOS_ID {
                    break;
                }
            }
            return Ok(seq);
        }
        GenMode::Beam(w) => {
            if w == 0 {
                return Err(ModelError::InvalidConfig("beam width must be >= 1".into()));
            }
            w
        }
    };

    let mut beams = vec![Beam { seq: vec![BOS_ID], score: 0.0, done: max_len == 1 }];
    while beams.iter().any(|b| !b.done) {
        let mut candidates: Vec<Beam> = Vec::new();
        for beam in &beams {
            if beam.done {
                candidates.push(beam.clone());
                continue;
            }
            let row = last_row_logits(memory, &beam.seq, cfg, params)?;
            let lp = log_probs(&row);
            // top `width` continuations, index order on ties
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap().then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                let mut seq = beam.seq.clone();
                seq.push(tok);
                let done = tok == EOS_ID || seq.len() >= max_len;
                candidates.push(Beam { seq, score: beam.score + lp[tok], done });
            }
        }
        candidates.sort_by(|a, b| b.normalized().partial_cmp(&a.normalized()).unwrap());
        candidates.truncate(width);
        beams = candidates;
    }
    beams.sort_by(|a, b| b.normalized().partial_cmp(&a.normalized()).unwrap());
    Ok(beams.remove(0).seq)
}
