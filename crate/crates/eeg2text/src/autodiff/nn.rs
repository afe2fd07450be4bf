//! Neural-net composites built from graph primitives.

use super::{lit, AutodiffError, Float, Graph, ValueId};

/// Projection weights for one attention block. All matrices are `[d, d]`,
/// biases `[d]`.
#[derive(Copy, Clone)]
pub struct AttnWeights {
    pub wq: ValueId,
    pub bq: ValueId,
    pub wk: ValueId,
    pub bk: ValueId,
    pub wv: ValueId,
    pub bv: ValueId,
    pub wo: ValueId,
    pub bo: ValueId,
}

/// Multi-head scaled dot-product attention. `q_in` is `[Lq, d]`, `kv_in` is
/// `[Lk, d]`; self-attention passes the same id for both, cross-attention
/// passes the encoder memory as `kv_in`. With `causal`, query position i may
/// only attend to key positions <= i (requires Lq == Lk).
///
/// Heads are column blocks of the projected q/k/v; each head runs
/// `softmax(q k^T / sqrt(d_head)) v` and the heads are concatenated back and
/// passed through the output projection.
pub fn multi_head_attention<T: Float>(
    g: &mut Graph<T>,
    q_in: ValueId,
    kv_in: ValueId,
    w: &AttnWeights,
    n_heads: usize,
    causal: bool,
) -> Result<ValueId, AutodiffError> {
    let d = g.shape(q_in)[1];
    if n_heads == 0 || d % n_heads != 0 {
        return Err(AutodiffError::InvalidArg {
            op: "multi_head_attention",
            details: format!("d_model {d} not divisible into {n_heads} heads"),
        });
    }
    let lq = g.shape(q_in)[0];
    let lk = g.shape(kv_in)[0];
    if causal && lq != lk {
        return Err(AutodiffError::InvalidArg {
            op: "multi_head_attention",
            details: format!("causal attention needs square scores, got {lq}x{lk}"),
        });
    }
    let dh = d / n_heads;
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());

    let q = g.matmul(q_in, w.wq)?;
    let q = g.add_row_vec(q, w.bq)?;
    let k = g.matmul(kv_in, w.wk)?;
    let k = g.add_row_vec(k, w.bk)?;
    let v = g.matmul(kv_in, w.wv)?;
    let v = g.add_row_vec(v, w.bv)?;

    let mask = if causal { Some(causal_mask::<T>(lq)) } else { None };

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let scores = match &mask {
            Some(m) => g.add_const(scores, m)?,
            None => scores,
        };
        let attn = g.softmax(scores, 1)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let cat = g.concat_cols(&heads)?;
    let out = g.matmul(cat, w.wo)?;
    g.add_row_vec(out, w.bo)
}

/// Additive mask: 0 on and below the diagonal, a large negative value above,
/// which softmax turns into zero attention weight.
fn causal_mask<T: Float>(len: usize) -> Vec<T> {
    let neg = lit::<T>(-1e9);
    let mut m = vec![T::zero(); len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            m[i * len + j] = neg;
        }
    }
    m
}
