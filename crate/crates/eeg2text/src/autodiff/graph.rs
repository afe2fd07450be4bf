//! The recording tape: forward op construction and reverse-mode backward.

use super::{lit, AutodiffError, Float, Tensor};

/// Handle to a node in one [`Graph`]. Ids from different graphs must not be
/// mixed; they are plain indices.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

/// How a node was produced. Parents are always lower indices, so the node
/// list is already a topological order.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, T),
    /// Adds a constant tensor (mask, positional encoding). The constant needs
    /// no storage: its gradient is discarded and forward already consumed it.
    AddConst(ValueId),
    /// Elementwise product with a constant tensor; the constant is kept for
    /// the backward pass.
    MulConst(ValueId, Vec<T>),
    /// `[m, n] + [n]`, the vector added to every row.
    AddRowVec(ValueId, ValueId),
    /// `[m, n] + [m]`, the vector added to every column.
    AddColVec(ValueId, ValueId),
    Matmul(ValueId, ValueId),
    Transpose(ValueId),
    Reshape(ValueId),
    /// Axis 1 normalizes each row, axis 0 each column.
    Softmax(ValueId, usize),
    /// Per-row standardization (biased variance, no affine terms).
    LayerNorm(ValueId, T),
    Gelu(ValueId),
    Relu(ValueId),
    /// Rows of `table` gathered by id.
    EmbeddingLookup(ValueId, Vec<usize>),
    /// Valid (no padding) 1-D convolution, x `[Ci, T]`, w `[Co, Ci, k]`.
    Conv1d { x: ValueId, w: ValueId, stride: usize },
    /// Transposed 1-D convolution, x `[Ci, T]`, w `[Ci, Co, k]`.
    ConvTranspose1d { x: ValueId, w: ValueId, stride: usize },
    /// Valid 2-D convolution, x `[Ci, H, W]`, w `[Co, Ci, kh, kw]`.
    Conv2d { x: ValueId, w: ValueId, stride: (usize, usize) },
    ConcatRows(Vec<ValueId>),
    ConcatCols(Vec<ValueId>),
    SliceCols(ValueId, usize, usize),
    MeanAll(ValueId),
    SumAll(ValueId),
    /// Mean negative log-likelihood over rows whose target differs from
    /// `ignore`; logits `[m, V]`.
    CrossEntropy { logits: ValueId, targets: Vec<usize>, ignore: usize },
}

struct Node<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    needs_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Float>(op: &'static str, values: &[T]) -> Result<(), AutodiffError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, id: ValueId) -> &[T] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: ValueId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, needs_grad: bool, op: Op<T>) -> ValueId {
        self.nodes.push(Node { shape, values, grad: None, needs_grad, op });
        ValueId(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        values: Vec<T>,
        parents_need: bool,
        op: Op<T>,
    ) -> Result<ValueId, AutodiffError> {
        check_finite(name, &values)?;
        Ok(self.push(shape, values, parents_need, op))
    }

    pub fn leaf(&mut self, t: &Tensor<T>, needs_grad: bool) -> ValueId {
        self.push(t.shape().to_vec(), t.data().to_vec(), needs_grad, Op::Leaf)
    }

    pub fn leaf_parts(
        &mut self,
        shape: Vec<usize>,
        data: Vec<T>,
        needs_grad: bool,
    ) -> Result<ValueId, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "leaf",
                details: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(self.push(shape, data, needs_grad, Op::Leaf))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<ValueId, AutodiffError> {
        self.leaf_parts(shape, data, false)
    }

    fn dims2(&self, id: ValueId, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        match self.nodes[id.0].shape[..] {
            [m, n] => Ok((m, n)),
            ref s => Err(AutodiffError::ShapeMismatch {
                op,
                details: format!("expected a 2-D tensor, got shape {s:?}"),
            }),
        }
    }

    fn same_shape(&self, a: ValueId, b: ValueId, op: &'static str) -> Result<(), AutodiffError> {
        if self.nodes[a.0].shape == self.nodes[b.0].shape {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                details: format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            })
        }
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let values =
            self.values(a).iter().zip(self.values(b)).map(|(x, y)| *x + *y).collect::<Vec<_>>();
        let ng = self.needs(a) || self.needs(b);
        self.push_op("add", self.nodes[a.0].shape.clone(), values, ng, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.same_shape(a, b, "sub")?;
        let values =
            self.values(a).iter().zip(self.values(b)).map(|(x, y)| *x - *y).collect::<Vec<_>>();
        let ng = self.needs(a) || self.needs(b);
        self.push_op("sub", self.nodes[a.0].shape.clone(), values, ng, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let values =
            self.values(a).iter().zip(self.values(b)).map(|(x, y)| *x * *y).collect::<Vec<_>>();
        let ng = self.needs(a) || self.needs(b);
        self.push_op("mul", self.nodes[a.0].shape.clone(), values, ng, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: ValueId, c: T) -> Result<ValueId, AutodiffError> {
        let values = self.values(a).iter().map(|x| *x * c).collect::<Vec<_>>();
        let ng = self.needs(a);
        self.push_op("scale", self.nodes[a.0].shape.clone(), values, ng, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: ValueId, k: &[T]) -> Result<ValueId, AutodiffError> {
        if k.len() != self.values(a).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_const",
                details: format!("constant has {} elements, input {}", k.len(), self.values(a).len()),
            });
        }
        let values = self.values(a).iter().zip(k).map(|(x, y)| *x + *y).collect::<Vec<_>>();
        let ng = self.needs(a);
        self.push_op("add_const", self.nodes[a.0].shape.clone(), values, ng, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: ValueId, k: &[T]) -> Result<ValueId, AutodiffError> {
        if k.len() != self.values(a).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                details: format!("constant has {} elements, input {}", k.len(), self.values(a).len()),
            });
        }
        let values = self.values(a).iter().zip(k).map(|(x, y)| *x * *y).collect::<Vec<_>>();
        let ng = self.needs(a);
        self.push_op("mul_const", self.nodes[a.0].shape.clone(), values, ng, Op::MulConst(a, k.to_vec()))
    }

    pub fn add_row_vec(&mut self, a: ValueId, v: ValueId) -> Result<ValueId, AutodiffError> {
        let (m, n) = self.dims2(a, "add_row_vec")?;
        if self.nodes[v.0].shape != [n] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row_vec",
                details: format!("matrix [{m}, {n}] + vector {:?}", self.nodes[v.0].shape),
            });
        }
        let av = self.values(a);
        let vv = self.values(v);
        let mut values = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                values.push(av[i * n + j] + vv[j]);
            }
        }
        let ng = self.needs(a) || self.needs(v);
        self.push_op("add_row_vec", vec![m, n], values, ng, Op::AddRowVec(a, v))
    }

    pub fn add_col_vec(&mut self, a: ValueId, v: ValueId) -> Result<ValueId, AutodiffError> {
        let (m, n) = self.dims2(a, "add_col_vec")?;
        if self.nodes[v.0].shape != [m] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_col_vec",
                details: format!("matrix [{m}, {n}] + vector {:?}", self.nodes[v.0].shape),
            });
        }
        let av = self.values(a);
        let vv = self.values(v);
        let mut values = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                values.push(av[i * n + j] + vv[i]);
            }
        }
        let ng = self.needs(a) || self.needs(v);
        self.push_op("add_col_vec", vec![m, n], values, ng, Op::AddColVec(a, v))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                details: format!("[{m}, {ka}] x [{kb}, {n}]"),
            });
        }
        let mut values = vec![T::zero(); m * n];
        matmul_nn(self.values(a), self.values(b), m, ka, n, &mut values);
        let ng = self.needs(a) || self.needs(b);
        self.push_op("matmul", vec![m, n], values, ng, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let (m, n) = self.dims2(a, "transpose")?;
        let av = self.values(a);
        let mut values = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = av[i * n + j];
            }
        }
        let ng = self.needs(a);
        self.push_op("transpose", vec![n, m], values, ng, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.values(a).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                details: format!(
                    "cannot view {} elements as {:?}",
                    self.values(a).len(),
                    shape
                ),
            });
        }
        let values = self.values(a).to_vec();
        let ng = self.needs(a);
        self.push_op("reshape", shape, values, ng, Op::Reshape(a))
    }

    pub fn softmax(&mut self, a: ValueId, axis: usize) -> Result<ValueId, AutodiffError> {
        let (m, n) = self.dims2(a, "softmax")?;
        if axis > 1 {
            return Err(AutodiffError::InvalidArg {
                op: "softmax",
                details: format!("axis must be 0 or 1, got {axis}"),
            });
        }
        let av = self.values(a);
        let mut values = vec![T::zero(); m * n];
        let (outer, inner, os, is) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let mut mx = T::neg_infinity();
            for i in 0..inner {
                mx = mx.max(av[o * os + i * is]);
            }
            let mut sum = T::zero();
            for i in 0..inner {
                let e = (av[o * os + i * is] - mx).exp();
                values[o * os + i * is] = e;
                sum = sum + e;
            }
            for i in 0..inner {
                values[o * os + i * is] = values[o * os + i * is] / sum;
            }
        }
        let ng = self.needs(a);
        self.push_op("softmax", vec![m, n], values, ng, Op::Softmax(a, axis))
    }

    pub fn layer_norm(&mut self, a: ValueId, eps: T) -> Result<ValueId, AutodiffError> {
        let (m, n) = self.dims2(a, "layer_norm")?;
        let av = self.values(a);
        let mut values = vec![T::zero(); m * n];
        let nn = lit::<T>(n as f64);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mean = row.iter().fold(T::zero(), |s, v| s + *v) / nn;
            let var = row.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean)) / nn;
            let inv = (var + eps).sqrt().recip();
            for j in 0..n {
                values[i * n + j] = (row[j] - mean) * inv;
            }
        }
        let ng = self.needs(a);
        self.push_op("layer_norm", vec![m, n], values, ng, Op::LayerNorm(a, eps))
    }

    pub fn gelu(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let values = self.values(a).iter().map(|x| gelu_fwd(*x)).collect::<Vec<_>>();
        let ng = self.needs(a);
        self.push_op("gelu", self.nodes[a.0].shape.clone(), values, ng, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let values =
            self.values(a).iter().map(|x| if *x > T::zero() { *x } else { T::zero() }).collect();
        let ng = self.needs(a);
        self.push_op("relu", self.nodes[a.0].shape.clone(), values, ng, Op::Relu(a))
    }

    pub fn embedding_lookup(
        &mut self,
        table: ValueId,
        ids: &[usize],
    ) -> Result<ValueId, AutodiffError> {
        let (v, d) = self.dims2(table, "embedding_lookup")?;
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(AutodiffError::InvalidArg {
                op: "embedding_lookup",
                details: format!("id {bad} out of range for table with {v} rows"),
            });
        }
        let tv = self.values(table);
        let mut values = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            values.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let ng = self.needs(table);
        self.push_op(
            "embedding_lookup",
            vec![ids.len(), d],
            values,
            ng,
            Op::EmbeddingLookup(table, ids.to_vec()),
        )
    }

    pub fn conv1d(
        &mut self,
        x: ValueId,
        w: ValueId,
        stride: usize,
    ) -> Result<ValueId, AutodiffError> {
        let (ci, t) = self.dims2(x, "conv1d")?;
        let (co, wci, k) = match self.nodes[w.0].shape[..] {
            [co, wci, k] => (co, wci, k),
            ref s => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv1d",
                    details: format!("weight must be [Co, Ci, k], got {s:?}"),
                })
            }
        };
        if wci != ci {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                details: format!("input has {ci} channels, weight expects {wci}"),
            });
        }
        if stride == 0 {
            return Err(AutodiffError::InvalidArg { op: "conv1d", details: "stride 0".into() });
        }
        if k > t {
            return Err(AutodiffError::InvalidArg {
                op: "conv1d",
                details: format!("kernel {k} longer than input {t}"),
            });
        }
        let tp = (t - k) / stride + 1;
        let xv = self.values(x);
        let wv = self.values(w);
        let mut values = vec![T::zero(); co * tp];
        for o in 0..co {
            for tt in 0..tp {
                let mut acc = T::zero();
                let base = tt * stride;
                for i in 0..ci {
                    let xrow = &xv[i * t + base..i * t + base + k];
                    let wrow = &wv[o * ci * k + i * k..o * ci * k + (i + 1) * k];
                    for kk in 0..k {
                        acc = acc + wrow[kk] * xrow[kk];
                    }
                }
                values[o * tp + tt] = acc;
            }
        }
        let ng = self.needs(x) || self.needs(w);
        self.push_op("conv1d", vec![co, tp], values, ng, Op::Conv1d { x, w, stride })
    }

    pub fn conv_transpose1d(
        &mut self,
        x: ValueId,
        w: ValueId,
        stride: usize,
    ) -> Result<ValueId, AutodiffError> {
        let (ci, t) = self.dims2(x, "conv_transpose1d")?;
        let (wci, co, k) = match self.nodes[w.0].shape[..] {
            [wci, co, k] => (wci, co, k),
            ref s => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv_transpose1d",
                    details: format!("weight must be [Ci, Co, k], got {s:?}"),
                })
            }
        };
        if wci != ci {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv_transpose1d",
                details: format!("input has {ci} channels, weight expects {wci}"),
            });
        }
        if stride == 0 {
            return Err(AutodiffError::InvalidArg {
                op: "conv_transpose1d",
                details: "stride 0".into(),
            });
        }
        let to = (t - 1) * stride + k;
        let xv = self.values(x);
        let wv = self.values(w);
        let mut values = vec![T::zero(); co * to];
        for i in 0..ci {
            for tt in 0..t {
                let xval = xv[i * t + tt];
                let base = tt * stride;
                for o in 0..co {
                    let wrow = &wv[i * co * k + o * k..i * co * k + (o + 1) * k];
                    let orow = &mut values[o * to + base..o * to + base + k];
                    for kk in 0..k {
                        orow[kk] = orow[kk] + xval * wrow[kk];
                    }
                }
            }
        }
        let ng = self.needs(x) || self.needs(w);
        self.push_op(
            "conv_transpose1d",
            vec![co, to],
            values,
            ng,
            Op::ConvTranspose1d { x, w, stride },
        )
    }

    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        stride: (usize, usize),
    ) -> Result<ValueId, AutodiffError> {
        let (ci, h, ww) = match self.nodes[x.0].shape[..] {
            [ci, h, w] => (ci, h, w),
            ref s => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv2d",
                    details: format!("input must be [Ci, H, W], got {s:?}"),
                })
            }
        };
        let (co, wci, kh, kw) = match self.nodes[w.0].shape[..] {
            [co, wci, kh, kw] => (co, wci, kh, kw),
            ref s => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv2d",
                    details: format!("weight must be [Co, Ci, kh, kw], got {s:?}"),
                })
            }
        };
        if wci != ci {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                details: format!("input has {ci} channels, weight expects {wci}"),
            });
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(AutodiffError::InvalidArg { op: "conv2d", details: "stride 0".into() });
        }
        if kh > h || kw > ww {
            return Err(AutodiffError::InvalidArg {
                op: "conv2d",
                details: format!("kernel ({kh}, {kw}) larger than input ({h}, {ww})"),
            });
        }
        let ho = (h - kh) / sh + 1;
        let wo = (ww - kw) / sw + 1;
        let xv = self.values(x);
        let wv = self.values(w);
        let mut values = vec![T::zero(); co * ho * wo];
        for o in 0..co {
            for hh in 0..ho {
                for cc in 0..wo {
                    let mut acc = T::zero();
                    for i in 0..ci {
                        for dkh in 0..kh {
                            let xrow = i * h * ww + (hh * sh + dkh) * ww + cc * sw;
                            let wrow = ((o * ci + i) * kh + dkh) * kw;
                            for dkw in 0..kw {
                                acc = acc + wv[wrow + dkw] * xv[xrow + dkw];
                            }
                        }
                    }
                    values[(o * ho + hh) * wo + cc] = acc;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w);
        self.push_op("conv2d", vec![co, ho, wo], values, ng, Op::Conv2d { x, w, stride })
    }

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArg { op: "concat_rows", details: "no inputs".into() });
        }
        let (_, n) = self.dims2(parts[0], "concat_rows")?;
        let mut m_total = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_rows",
                    details: format!("column counts differ: {n} vs {pn}"),
                });
            }
            m_total += pm;
        }
        let mut values = Vec::with_capacity(m_total * n);
        for &p in parts {
            values.extend_from_slice(self.values(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push_op("concat_rows", vec![m_total, n], values, ng, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArg { op: "concat_cols", details: "no inputs".into() });
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut n_total = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    details: format!("row counts differ: {m} vs {pm}"),
                });
            }
            n_total += pn;
        }
        let mut values = vec![T::zero(); m * n_total];
        let mut col = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            let pv = self.values(p);
            for i in 0..pm {
                values[i * n_total + col..i * n_total + col + pn]
                    .copy_from_slice(&pv[i * pn..(i + 1) * pn]);
            }
            col += pn;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push_op("concat_cols", vec![m, n_total], values, ng, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(
        &mut self,
        a: ValueId,
        lo: usize,
        hi: usize,
    ) -> Result<ValueId, AutodiffError> {
        let (m, n) = self.dims2(a, "slice_cols")?;
        if lo >= hi || hi > n {
            return Err(AutodiffError::InvalidArg {
                op: "slice_cols",
                details: format!("range {lo}..{hi} out of 0..{n}"),
            });
        }
        let av = self.values(a);
        let w = hi - lo;
        let mut values = Vec::with_capacity(m * w);
        for i in 0..m {
            values.extend_from_slice(&av[i * n + lo..i * n + hi]);
        }
        let ng = self.needs(a);
        self.push_op("slice_cols", vec![m, w], values, ng, Op::SliceCols(a, lo, hi))
    }

    pub fn mean_all(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let len = self.values(a).len();
        if len == 0 {
            return Err(AutodiffError::InvalidArg { op: "mean_all", details: "empty input".into() });
        }
        let sum = self.values(a).iter().fold(T::zero(), |s, v| s + *v);
        let mean = sum / lit::<T>(len as f64);
        let ng = self.needs(a);
        self.push_op("mean_all", vec![1], vec![mean], ng, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let sum = self.values(a).iter().fold(T::zero(), |s, v| s + *v);
        let ng = self.needs(a);
        self.push_op("sum_all", vec![1], vec![sum], ng, Op::SumAll(a))
    }

    /// Mean cross-entropy between `logits` rows and `targets`, skipping rows
    /// whose target equals `ignore`. Log-sum-exp is computed stably.
    pub fn cross_entropy(
        &mut self,
        logits: ValueId,
        targets: &[usize],
        ignore: usize,
    ) -> Result<ValueId, AutodiffError> {
        let (m, v) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                details: format!("{m} logit rows vs {} targets", targets.len()),
            });
        }
        if let Some(bad) = targets.iter().find(|&&t| t != ignore && t >= v) {
            return Err(AutodiffError::InvalidArg {
                op: "cross_entropy",
                details: format!("target {bad} out of range for {v} classes"),
            });
        }
        let kept = targets.iter().filter(|&&t| t != ignore).count();
        if kept == 0 {
            return Err(AutodiffError::InvalidArg {
                op: "cross_entropy",
                details: "every target is the ignored id".into(),
            });
        }
        let lv = self.values(logits);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            let row = &lv[i * v..(i + 1) * v];
            let mx = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let sum = row.iter().fold(T::zero(), |s, x| s + (*x - mx).exp());
            let lse = mx + sum.ln();
            total = total + (lse - row[t]);
        }
        let loss = total / lit::<T>(kept as f64);
        let ng = self.needs(logits);
        self.push_op(
            "cross_entropy",
            vec![1],
            vec![loss],
            ng,
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore },
        )
    }

    fn add_grad(&mut self, id: ValueId, contrib: &[T]) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi = *gi + *ci;
                }
            }
            None => node.grad = Some(contrib.to_vec()),
        }
    }

    /// Reverse pass from a scalar node. Gradients accumulate on every node
    /// with `needs_grad`; read them back with [`Graph::grad`]. Node order is
    /// already topological, so one reverse sweep visits each op once.
    pub fn backward(&mut self, loss: ValueId) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].shape != [1] {
            return Err(AutodiffError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let grad = self.nodes[i].grad.take().expect("checked above");
            self.backprop_one(ValueId(i), &op, &grad);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn backprop_one(&mut self, out: ValueId, op: &Op<T>, g: &[T]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, g);
                if self.needs(*b) {
                    let db: Vec<T> = g.iter().map(|x| -*x).collect();
                    self.add_grad(*b, &db);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<T> =
                        g.iter().zip(self.values(*b)).map(|(g, b)| *g * *b).collect();
                    self.add_grad(*a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<T> =
                        g.iter().zip(self.values(*a)).map(|(g, a)| *g * *a).collect();
                    self.add_grad(*b, &db);
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let da: Vec<T> = g.iter().map(|x| *x * *c).collect();
                    self.add_grad(*a, &da);
                }
            }
            Op::AddConst(a) => {
                self.add_grad(*a, g);
            }
            Op::MulConst(a, k) => {
                if self.needs(*a) {
                    let da: Vec<T> = g.iter().zip(k).map(|(g, k)| *g * *k).collect();
                    self.add_grad(*a, &da);
                }
            }
            Op::AddRowVec(a, v) => {
                self.add_grad(*a, g);
                if self.needs(*v) {
                    let n = self.shape(*v)[0];
                    let mut dv = vec![T::zero(); n];
                    for (idx, gi) in g.iter().enumerate() {
                        dv[idx % n] = dv[idx % n] + *gi;
                    }
                    self.add_grad(*v, &dv);
                }
            }
            Op::AddColVec(a, v) => {
                self.add_grad(*a, g);
                if self.needs(*v) {
                    let m = self.shape(*v)[0];
                    let n = g.len() / m;
                    let mut dv = vec![T::zero(); m];
                    for i in 0..m {
                        for j in 0..n {
                            dv[i] = dv[i] + g[i * n + j];
                        }
                    }
                    self.add_grad(*v, &dv);
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt(g, self.values(*b), m, n, k, &mut da);
                    self.add_grad(*a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn(self.values(*a), g, m, k, n, &mut db);
                    self.add_grad(*b, &db);
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g[j * m + i];
                        }
                    }
                    self.add_grad(*a, &da);
                }
            }
            Op::Reshape(a) => {
                self.add_grad(*a, g);
            }
            Op::Softmax(a, axis) => {
                if self.needs(*a) {
                    let y = self.values(out);
                    let (m, n) = (self.shape(out)[0], self.shape(out)[1]);
                    let (outer, inner, os, is) =
                        if *axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
                    let mut da = vec![T::zero(); m * n];
                    for o in 0..outer {
                        let mut dot = T::zero();
                        for i in 0..inner {
                            let idx = o * os + i * is;
                            dot = dot + g[idx] * y[idx];
                        }
                        for i in 0..inner {
                            let idx = o * os + i * is;
                            da[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                    self.add_grad(*a, &da);
                }
            }
            Op::LayerNorm(a, eps) => {
                if self.needs(*a) {
                    let x = self.values(*a);
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let nn = lit::<T>(n as f64);
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        let row = &x[i * n..(i + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        let mean = row.iter().fold(T::zero(), |s, v| s + *v) / nn;
                        let var =
                            row.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean)) / nn;
                        let inv = (var + *eps).sqrt().recip();
                        let gmean = grow.iter().fold(T::zero(), |s, v| s + *v) / nn;
                        let mut gxhat = T::zero();
                        for j in 0..n {
                            gxhat = gxhat + grow[j] * (row[j] - mean) * inv;
                        }
                        gxhat = gxhat / nn;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv;
                            da[i * n + j] = inv * (grow[j] - gmean - xhat * gxhat);
                        }
                    }
                    self.add_grad(*a, &da);
                }
            }
            Op::Gelu(a) => {
                if self.needs(*a) {
                    let da: Vec<T> =
                        g.iter().zip(self.values(*a)).map(|(g, x)| *g * gelu_bwd(*x)).collect();
                    self.add_grad(*a, &da);
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let da: Vec<T> = g
                        .iter()
                        .zip(self.values(*a))
                        .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                        .collect();
                    self.add_grad(*a, &da);
                }
            }
            Op::EmbeddingLookup(table, ids) => {
                if self.needs(*table) {
                    let (v, d) = (self.shape(*table)[0], self.shape(*table)[1]);
                    let mut dt = vec![T::zero(); v * d];
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[i * d + j] = dt[i * d + j] + g[r * d + j];
                        }
                    }
                    self.add_grad(*table, &dt);
                }
            }
            Op::Conv1d { x, w, stride } => {
                let (ci, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (co, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let tp = (t - k) / stride + 1;
                if self.needs(*x) {
                    let wv = self.values(*w);
                    let mut dx = vec![T::zero(); ci * t];
                    for o in 0..co {
                        for tt in 0..tp {
                            let gv = g[o * tp + tt];
                            let base = tt * stride;
                            for i in 0..ci {
                                let wrow = &wv[o * ci * k + i * k..o * ci * k + (i + 1) * k];
                                let xrow = &mut dx[i * t + base..i * t + base + k];
                                for kk in 0..k {
                                    xrow[kk] = xrow[kk] + gv * wrow[kk];
                                }
                            }
                        }
                    }
                    self.add_grad(*x, &dx);
                }
                if self.needs(*w) {
                    let xv = self.values(*x);
                    let mut dw = vec![T::zero(); co * ci * k];
                    for o in 0..co {
                        for tt in 0..tp {
                            let gv = g[o * tp + tt];
                            let base = tt * stride;
                            for i in 0..ci {
                                let xrow = &xv[i * t + base..i * t + base + k];
                                let wrow = &mut dw[o * ci * k + i * k..o * ci * k + (i + 1) * k];
                                for kk in 0..k {
                                    wrow[kk] = wrow[kk] + gv * xrow[kk];
                                }
                            }
                        }
                    }
                    self.add_grad(*w, &dw);
                }
            }
            Op::ConvTranspose1d { x, w, stride } => {
                let (ci, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (co, k) = (self.shape(*w)[1], self.shape(*w)[2]);
                let to = (t - 1) * stride + k;
                if self.needs(*x) {
                    let wv = self.values(*w);
                    let mut dx = vec![T::zero(); ci * t];
                    for i in 0..ci {
                        for tt in 0..t {
                            let base = tt * stride;
                            let mut acc = T::zero();
                            for o in 0..co {
                                let wrow = &wv[i * co * k + o * k..i * co * k + (o + 1) * k];
                                let grow = &g[o * to + base..o * to + base + k];
                                for kk in 0..k {
                                    acc = acc + wrow[kk] * grow[kk];
                                }
                            }
                            dx[i * t + tt] = acc;
                        }
                    }
                    self.add_grad(*x, &dx);
                }
                if self.needs(*w) {
                    let xv = self.values(*x);
                    let mut dw = vec![T::zero(); ci * co * k];
                    for i in 0..ci {
                        for tt in 0..t {
                            let xval = xv[i * t + tt];
                            let base = tt * stride;
                            for o in 0..co {
                                let grow = &g[o * to + base..o * to + base + k];
                                let wrow = &mut dw[i * co * k + o * k..i * co * k + (o + 1) * k];
                                for kk in 0..k {
                                    wrow[kk] = wrow[kk] + xval * grow[kk];
                                }
                            }
                        }
                    }
                    self.add_grad(*w, &dw);
                }
            }
            Op::Conv2d { x, w, stride } => {
                let (ci, h, ww) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let (co, kh, kw) = (self.shape(*w)[0], self.shape(*w)[2], self.shape(*w)[3]);
                let (sh, sw) = *stride;
                let ho = (h - kh) / sh + 1;
                let wo = (ww - kw) / sw + 1;
                if self.needs(*x) {
                    let wv = self.values(*w);
                    let mut dx = vec![T::zero(); ci * h * ww];
                    for o in 0..co {
                        for hh in 0..ho {
                            for cc in 0..wo {
                                let gv = g[(o * ho + hh) * wo + cc];
                                for i in 0..ci {
                                    for dkh in 0..kh {
                                        let xrow = i * h * ww + (hh * sh + dkh) * ww + cc * sw;
                                        let wrow = ((o * ci + i) * kh + dkh) * kw;
                                        for dkw in 0..kw {
                                            dx[xrow + dkw] =
                                                dx[xrow + dkw] + gv * wv[wrow + dkw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(*x, &dx);
                }
                if self.needs(*w) {
                    let xv = self.values(*x);
                    let mut dw = vec![T::zero(); co * ci * kh * kw];
                    for o in 0..co {
                        for hh in 0..ho {
                            for cc in 0..wo {
                                let gv = g[(o * ho + hh) * wo + cc];
                                for i in 0..ci {
                                    for dkh in 0..kh {
                                        let xrow = i * h * ww + (hh * sh + dkh) * ww + cc * sw;
                                        let wrow = ((o * ci + i) * kh + dkh) * kw;
                                        for dkw in 0..kw {
                                            dw[wrow + dkw] =
                                                dw[wrow + dkw] + gv * xv[xrow + dkw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(*w, &dw);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.values(p).len();
                    if self.needs(p) {
                        let dp = g[offset..offset + len].to_vec();
                        self.add_grad(p, &dp);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.shape(out)[0];
                let n_total = self.shape(out)[1];
                let mut col = 0;
                for &p in parts {
                    let pn = self.shape(p)[1];
                    if self.needs(p) {
                        let mut dp = vec![T::zero(); m * pn];
                        for i in 0..m {
                            dp[i * pn..(i + 1) * pn]
                                .copy_from_slice(&g[i * n_total + col..i * n_total + col + pn]);
                        }
                        self.add_grad(p, &dp);
                    }
                    col += pn;
                }
            }
            Op::SliceCols(a, lo, hi) => {
                if self.needs(*a) {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let w = hi - lo;
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        da[i * n + lo..i * n + hi].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    self.add_grad(*a, &da);
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let len = self.values(*a).len();
                    let gv = g[0] / lit::<T>(len as f64);
                    let da = vec![gv; len];
                    self.add_grad(*a, &da);
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let da = vec![g[0]; self.values(*a).len()];
                    self.add_grad(*a, &da);
                }
            }
            Op::CrossEntropy { logits, targets, ignore } => {
                if self.needs(*logits) {
                    let lv = self.values(*logits);
                    let v = self.shape(*logits)[1];
                    let kept = targets.iter().filter(|&&t| t != *ignore).count();
                    let scale = g[0] / lit::<T>(kept as f64);
                    let mut dl = vec![T::zero(); lv.len()];
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = &lv[i * v..(i + 1) * v];
                        let mx = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
                        let sum = row.iter().fold(T::zero(), |s, x| s + (*x - mx).exp());
                        for j in 0..v {
                            let p = (row[j] - mx).exp() / sum;
                            let delta = if j == t { T::one() } else { T::zero() };
                            dl[i * v + j] = (p - delta) * scale;
                        }
                    }
                    self.add_grad(*logits, &dl);
                }
            }
        }
    }
}

/// GELU, tanh approximation.
fn gelu_fwd<T: Float>(x: T) -> T {
    let c = lit::<T>(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = lit::<T>(0.044_715);
    let half = lit::<T>(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_bwd<T: Float>(x: T) -> T {
    let c = lit::<T>(0.797_884_560_802_865_4);
    let a = lit::<T>(0.044_715);
    let half = lit::<T>(0.5);
    let three = lit::<T>(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

/// out[m,n] += a[m,k] * b[k,n]
fn matmul_nn<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// out[m,k] += a[m,n] * b[k,n]^T  (a times b-transposed)
fn matmul_nt<T: Float>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = T::zero();
            for j in 0..n {
                acc = acc + arow[j] * brow[j];
            }
            orow[kk] = orow[kk] + acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]
fn matmul_tn<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}
