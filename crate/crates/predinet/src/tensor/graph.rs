//! Append-only computation graph.
//!
//! Nodes are created in topological order by construction: every op consumes
//! node ids that already exist. `backward` walks the node list in reverse and
//! accumulates gradients into every node on a `requires_grad` path.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Conv2d {
        img: NodeId,
        filters: NodeId,
        bias: NodeId,
        stride: usize,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f32),
    MulConst(NodeId, Tensor),
    AddBias(NodeId, NodeId),
    Reshape(NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    AllPairsConcat(NodeId),
    SumAll(NodeId),
    SoftmaxXent {
        logits: NodeId,
        labels: Tensor,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn matmul_raw(a: &[f32], b: &[f32], r: usize, s: usize, t: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; r * t];
    for i in 0..r {
        for k in 0..s {
            let av = a[i * s + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * t..(k + 1) * t];
            let orow = &mut out[i * t..(i + 1) * t];
            for j in 0..t {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn softmax_rows_raw(x: &[f32], r: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let orow = &mut out[i * c..(i + 1) * c];
        let mut sum = 0.0f32;
        for j in 0..c {
            let e = (row[j] - max).exp();
            orow[j] = e;
            sum += e;
        }
        for v in orow.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Constant input node; gradients do not flow here.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable input node; `backward` populates its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, s, t) = (ta.rows(), ta.cols(), tb.cols());
        let out = matmul_raw(ta.data(), tb.data(), r, s, t);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![r, t], out), rg, Op::Matmul(a, b)))
    }

    /// Valid-padding cross-correlation over an `[H, W, C]` image with
    /// `[F, F, C, O]` filters and an `[O]` bias.
    pub fn conv2d(
        &mut self,
        img: NodeId,
        filters: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let (ti, tf, tb) = (self.value(img), self.value(filters), self.value(bias));
        if ti.shape().len() != 3 {
            return Err(TensorError::BadRank {
                op: "conv2d",
                expected: 3,
                shape: ti.shape().to_vec(),
            });
        }
        if tf.shape().len() != 4 || tf.shape()[0] != tf.shape()[1] || tf.shape()[2] != ti.shape()[2]
        {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: ti.shape().to_vec(),
                rhs: tf.shape().to_vec(),
            });
        }
        let (h, w, c) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let (f, o) = (tf.shape()[0], tf.shape()[3]);
        if tb.shape() != [o] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: tb.shape().to_vec(),
                rhs: vec![o],
            });
        }
        for (dim, name) in [(h, "rows"), (w, "cols")] {
            let _ = name;
            if dim < f || (dim - f) % stride != 0 {
                return Err(TensorError::NonIntegralConvOutput {
                    input: dim,
                    filter: f,
                    stride,
                });
            }
        }
        let oh = (h - f) / stride + 1;
        let ow = (w - f) / stride + 1;
        let mut out = vec![0.0f32; oh * ow * o];
        let (id, fd, bd) = (ti.data(), tf.data(), tb.data());
        for y in 0..oh {
            for x in 0..ow {
                let acc = &mut out[(y * ow + x) * o..(y * ow + x + 1) * o];
                acc.copy_from_slice(bd);
                for fy in 0..f {
                    for fx in 0..f {
                        let base = ((y * stride + fy) * w + (x * stride + fx)) * c;
                        for ch in 0..c {
                            let v = id[base + ch];
                            if v == 0.0 {
                                continue;
                            }
                            let frow = &fd[((fy * f + fx) * c + ch) * o..][..o];
                            for k in 0..o {
                                acc[k] += v * frow[k];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(img) || self.rg(filters) || self.rg(bias);
        Ok(self.push(
            Tensor::new(vec![oh, ow, o], out),
            rg,
            Op::Conv2d {
                img,
                filters,
                bias,
                stride,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f32> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out), rg, Op::Relu(x))
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f32, f32) -> f32,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out), rg, make(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        let out: Vec<f32> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out), rg, Op::Scale(x, c))
    }

    /// Elementwise product with a fixed mask; no gradient flows to the mask.
    pub fn mul_const(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId> {
        if self.value(x).shape() != mask.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                lhs: self.value(x).shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let out: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(a, m)| a * m)
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out), rg, Op::MulConst(x, mask)))
    }

    /// Adds a length-`c` bias row to every row of an `[r, c]` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.shape() != [tx.cols()] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = tx.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += tb.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![r, c], out), rg, Op::AddBias(x, bias)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.value(x).shape().to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(x).data().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data), rg, Op::Reshape(x)))
    }

    /// Transposes a `[r, c]` matrix to `[c, r]`.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "transpose",
                expected: 2,
                shape: tx.shape().to_vec(),
            });
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = tx.data()[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, r], out), rg, Op::Transpose(x)))
    }

    /// Flattens any tensor to a `[1, n]` row vector.
    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        self.reshape(x, vec![1, n]).expect("flatten cannot fail")
    }

    /// Concatenates `[r, c_i]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let mut c_total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            c_total += t.cols();
        }
        let mut out = vec![0.0f32; r * c_total];
        let mut col = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for i in 0..r {
                out[i * c_total + col..i * c_total + col + c]
                    .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
            col += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![r, c_total], out),
            rg,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Stacks `[r_i, c]` matrices along rows.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut r_total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            out.extend_from_slice(t.data());
            r_total += t.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![r_total, c], out),
            rg,
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 2 || end > t.cols() || start >= end {
            return Err(TensorError::Usage(format!(
                "slice_cols {}..{} out of range for shape {:?}",
                start,
                end,
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let w = end - start;
        let mut out = vec![0.0f32; r * w];
        for i in 0..r {
            out[i * w..(i + 1) * w].copy_from_slice(&t.data()[i * c + start..i * c + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![r, w], out),
            rg,
            Op::SliceCols { x, start, end },
        ))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "softmax_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        if !t.is_finite() {
            return Err(TensorError::Numeric { op: "softmax_rows" });
        }
        let (r, c) = (t.rows(), t.cols());
        let out = softmax_rows_raw(t.data(), r, c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, c], out), rg, Op::SoftmaxRows(x)))
    }

    /// Column means: `[r, c]` -> `[1, c]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "mean_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0f32; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += t.data()[i * c + j];
            }
        }
        for v in out.iter_mut() {
            *v /= r as f32;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, c], out), rg, Op::MeanRows(x)))
    }

    /// All ordered row pairs: `[n, m]` -> `[n*n, 2m]`, row `i*n + j`
    /// is the concatenation of rows `i` and `j`.
    pub fn all_pairs_concat(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "all_pairs_concat",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let (n, m) = (t.rows(), t.cols());
        let mut out = vec![0.0f32; n * n * 2 * m];
        for i in 0..n {
            for j in 0..n {
                let base = (i * n + j) * 2 * m;
                out[base..base + m].copy_from_slice(&t.data()[i * m..(i + 1) * m]);
                out[base + m..base + 2 * m].copy_from_slice(&t.data()[j * m..(j + 1) * m]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n * n, 2 * m], out),
            rg,
            Op::AllPairsConcat(x),
        ))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f32 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::SumAll(x))
    }

    /// Mean over the batch of per-row cross entropy between softmaxed logits
    /// and one-hot labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Tensor) -> Result<NodeId> {
        let t = self.value(logits);
        if t.shape().len() != 2 || labels.shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: labels.shape().to_vec(),
            });
        }
        let (b, c) = (t.rows(), t.cols());
        for i in 0..b {
            let row = &labels.data()[i * c..(i + 1) * c];
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != c - 1 {
                return Err(TensorError::BadLabel { row: i });
            }
        }
        let probs = softmax_rows_raw(t.data(), b, c);
        let mut loss = 0.0f32;
        for i in 0..b {
            for j in 0..c {
                if labels.data()[i * c + j] == 1.0 {
                    loss -= probs[i * c + j].max(1e-30).ln();
                }
            }
        }
        loss /= b as f32;
        let probs = Tensor::new(vec![b, c], probs);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar loss; fills `grad` on every node that
    /// requires gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let grad = self.nodes[idx].grad.as_ref().unwrap().clone();
            // Borrow juggling: ops read input values and write input grads.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                &Op::Matmul(a, b) => {
                    let (ta, tb) = (self.nodes[a.0].value.clone(), self.nodes[b.0].value.clone());
                    let (r, s, t) = (ta.rows(), ta.cols(), tb.cols());
                    if self.rg(a) {
                        // dA = dC * B^T
                        let mut da = vec![0.0f32; r * s];
                        for i in 0..r {
                            for k in 0..s {
                                let brow = &tb.data()[k * t..(k + 1) * t];
                                let grow = &grad.data()[i * t..(i + 1) * t];
                                let mut acc = 0.0f32;
                                for j in 0..t {
                                    acc += grow[j] * brow[j];
                                }
                                da[i * s + k] = acc;
                            }
                        }
                        self.accumulate(a, &da);
                    }
                    if self.rg(b) {
                        // dB = A^T * dC
                        let mut db = vec![0.0f32; s * t];
                        for i in 0..r {
                            for k in 0..s {
                                let av = ta.data()[i * s + k];
                                if av == 0.0 {
                                    continue;
                                }
                                let grow = &grad.data()[i * t..(i + 1) * t];
                                let drow = &mut db[k * t..(k + 1) * t];
                                for j in 0..t {
                                    drow[j] += av * grow[j];
                                }
                            }
                        }
                        self.accumulate(b, &db);
                    }
                }
                &Op::Conv2d {
                    img,
                    filters,
                    bias,
                    stride,
                } => {
                    let ti = self.nodes[img.0].value.clone();
                    let tf = self.nodes[filters.0].value.clone();
                    let (h, w, c) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
                    let (f, o) = (tf.shape()[0], tf.shape()[3]);
                    let oh = (h - f) / stride + 1;
                    let ow = (w - f) / stride + 1;
                    let gd = grad.data();
                    if self.rg(bias) {
                        let mut db = vec![0.0f32; o];
                        for p in 0..oh * ow {
                            for k in 0..o {
                                db[k] += gd[p * o + k];
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                    if self.rg(filters) {
                        let mut df = vec![0.0f32; f * f * c * o];
                        for y in 0..oh {
                            for x in 0..ow {
                                let grow = &gd[(y * ow + x) * o..(y * ow + x + 1) * o];
                                for fy in 0..f {
                                    for fx in 0..f {
                                        let base =
                                            ((y * stride + fy) * w + (x * stride + fx)) * c;
                                        for ch in 0..c {
                                            let v = ti.data()[base + ch];
                                            if v == 0.0 {
                                                continue;
                                            }
                                            let drow =
                                                &mut df[((fy * f + fx) * c + ch) * o..][..o];
                                            for k in 0..o {
                                                drow[k] += v * grow[k];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        self.accumulate(filters, &df);
                    }
                    if self.rg(img) {
                        let mut di = vec![0.0f32; h * w * c];
                        for y in 0..oh {
                            for x in 0..ow {
                                let grow = &gd[(y * ow + x) * o..(y * ow + x + 1) * o];
                                for fy in 0..f {
                                    for fx in 0..f {
                                        let base =
                                            ((y * stride + fy) * w + (x * stride + fx)) * c;
                                        for ch in 0..c {
                                            let frow = &tf.data()
                                                [((fy * f + fx) * c + ch) * o..][..o];
                                            let mut acc = 0.0f32;
                                            for k in 0..o {
                                                acc += frow[k] * grow[k];
                                            }
                                            di[base + ch] += acc;
                                        }
                                    }
                                }
                            }
                        }
                        self.accumulate(img, &di);
                    }
                }
                &Op::Relu(x) => {
                    let dx: Vec<f32> = self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(grad.data())
                        .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                &Op::Add(a, b) => {
                    if self.rg(a) {
                        self.accumulate(a, grad.data());
                    }
                    if self.rg(b) {
                        self.accumulate(b, grad.data());
                    }
                }
                &Op::Sub(a, b) => {
                    if self.rg(a) {
                        self.accumulate(a, grad.data());
                    }
                    if self.rg(b) {
                        let neg: Vec<f32> = grad.data().iter().map(|g| -g).collect();
                        self.accumulate(b, &neg);
                    }
                }
                &Op::Scale(x, c) => {
                    let dx: Vec<f32> = grad.data().iter().map(|g| g * c).collect();
                    self.accumulate(x, &dx);
                }
                Op::MulConst(x, mask) => {
                    let x = *x;
                    let dx: Vec<f32> = grad
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(g, m)| g * m)
                        .collect();
                    self.accumulate(x, &dx);
                }
                &Op::AddBias(x, bias) => {
                    let (r, c) = (grad.rows(), grad.cols());
                    if self.rg(x) {
                        self.accumulate(x, grad.data());
                    }
                    if self.rg(bias) {
                        let mut db = vec![0.0f32; c];
                        for i in 0..r {
                            for j in 0..c {
                                db[j] += grad.data()[i * c + j];
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                }
                &Op::Reshape(x) => {
                    self.accumulate(x, grad.data());
                }
                &Op::Transpose(x) => {
                    if self.rg(x) {
                        let (r, c) = (grad.rows(), grad.cols());
                        let mut dx = vec![0.0f32; r * c];
                        for i in 0..r {
                            for j in 0..c {
                                dx[j * r + i] = grad.data()[i * c + j];
                            }
                        }
                        self.accumulate(x, &dx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let c_total = grad.cols();
                    let r = grad.rows();
                    let mut col = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        if self.rg(p) {
                            let mut dp = vec![0.0f32; r * c];
                            for i in 0..r {
                                dp[i * c..(i + 1) * c].copy_from_slice(
                                    &grad.data()[i * c_total + col..i * c_total + col + c],
                                );
                            }
                            self.accumulate(p, &dp);
                        }
                        col += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let c = grad.cols();
                    let mut row = 0;
                    for p in parts {
                        let r = self.nodes[p.0].value.rows();
                        if self.rg(p) {
                            let dp = grad.data()[row * c..(row + r) * c].to_vec();
                            self.accumulate(p, &dp);
                        }
                        row += r;
                    }
                }
                &Op::SliceCols { x, start, end } => {
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let w = end - start;
                    let mut dx = vec![0.0f32; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + end]
                            .copy_from_slice(&grad.data()[i * w..(i + 1) * w]);
                    }
                    self.accumulate(x, &dx);
                }
                &Op::SoftmaxRows(x) => {
                    // dX_ij = s_ij * (g_ij - sum_k g_ik s_ik)
                    let s = self.nodes[idx].value.clone();
                    let (r, c) = (s.rows(), s.cols());
                    let mut dx = vec![0.0f32; r * c];
                    for i in 0..r {
                        let srow = &s.data()[i * c..(i + 1) * c];
                        let grow = &grad.data()[i * c..(i + 1) * c];
                        let dot: f32 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[i * c + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                &Op::MeanRows(x) => {
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let mut dx = vec![0.0f32; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = grad.data()[j] / r as f32;
                        }
                    }
                    self.accumulate(x, &dx);
                }
                &Op::AllPairsConcat(x) => {
                    let (n, m) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let mut dx = vec![0.0f32; n * m];
                    for i in 0..n {
                        for j in 0..n {
                            let base = (i * n + j) * 2 * m;
                            for t in 0..m {
                                dx[i * m + t] += grad.data()[base + t];
                                dx[j * m + t] += grad.data()[base + m + t];
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                }
                &Op::SumAll(x) => {
                    let g = grad.item();
                    let dx = vec![g; self.nodes[x.0].value.numel()];
                    self.accumulate(x, &dx);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let logits = *logits;
                    let b = probs.rows() as f32;
                    let g = grad.item();
                    let dx: Vec<f32> = probs
                        .data()
                        .iter()
                        .zip(labels.data())
                        .map(|(p, y)| g * (p - y) / b)
                        .collect();
                    self.accumulate(logits, &dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: &[f32]) {
        let node = &mut self.nodes[id.0];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        for (g, d) in grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Re-evaluates the recorded graph up to a scalar node in f64, with the
    /// values of selected input nodes replaced. Shapes of replacements must
    /// match the originals. Intended for high-precision numeric checks of the
    /// recorded computation; the graph itself is not modified.
    pub fn eval_f64(&self, root: NodeId, overrides: &[(NodeId, &[f64])]) -> Result<f64> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(root).shape().to_vec(),
            });
        }
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(root.0 + 1);
        let get = |vals: &[Vec<f64>], id: NodeId| -> Vec<f64> { vals[id.0].clone() };
        for idx in 0..=root.0 {
            let node = &self.nodes[idx];
            let shape = node.value.shape();
            let out: Vec<f64> = match &node.op {
                Op::Leaf => {
                    match overrides.iter().find(|(id, _)| id.0 == idx) {
                        Some((_, sub)) => {
                            assert_eq!(sub.len(), node.value.numel(), "eval_f64 override size");
                            sub.to_vec()
                        }
                        None => node.value.data().iter().map(|&v| v as f64).collect(),
                    }
                }
                &Op::Matmul(a, b) => {
                    let (ta, tb) = (get(&vals, a), get(&vals, b));
                    let (r, s, t) = (
                        self.nodes[a.0].value.rows(),
                        self.nodes[a.0].value.cols(),
                        self.nodes[b.0].value.cols(),
                    );
                    let mut out = vec![0.0f64; r * t];
                    for i in 0..r {
                        for k in 0..s {
                            let av = ta[i * s + k];
                            for j in 0..t {
                                out[i * t + j] += av * tb[k * t + j];
                            }
                        }
                    }
                    out
                }
                &Op::Conv2d {
                    img,
                    filters,
                    bias,
                    stride,
                } => {
                    let (ti, tf, tb) = (get(&vals, img), get(&vals, filters), get(&vals, bias));
                    let ishape = self.nodes[img.0].value.shape();
                    let fshape = self.nodes[filters.0].value.shape();
                    let (w, c) = (ishape[1], ishape[2]);
                    let (f, o) = (fshape[0], fshape[3]);
                    let (oh, ow) = (shape[0], shape[1]);
                    let mut out = vec![0.0f64; oh * ow * o];
                    for y in 0..oh {
                        for x in 0..ow {
                            let acc = &mut out[(y * ow + x) * o..(y * ow + x + 1) * o];
                            acc.copy_from_slice(&tb);
                            for fy in 0..f {
                                for fx in 0..f {
                                    let base = ((y * stride + fy) * w + (x * stride + fx)) * c;
                                    for ch in 0..c {
                                        let v = ti[base + ch];
                                        for k in 0..o {
                                            acc[k] += v * tf[((fy * f + fx) * c + ch) * o + k];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    out
                }
                &Op::Relu(x) => get(&vals, x).iter().map(|&v| v.max(0.0)).collect(),
                &Op::Add(a, b) => get(&vals, a)
                    .iter()
                    .zip(get(&vals, b))
                    .map(|(x, y)| x + y)
                    .collect(),
                &Op::Sub(a, b) => get(&vals, a)
                    .iter()
                    .zip(get(&vals, b))
                    .map(|(x, y)| x - y)
                    .collect(),
                &Op::Scale(x, c) => get(&vals, x).iter().map(|&v| v * c as f64).collect(),
                Op::MulConst(x, mask) => get(&vals, *x)
                    .iter()
                    .zip(mask.data())
                    .map(|(a, &m)| a * m as f64)
                    .collect(),
                &Op::AddBias(x, bias) => {
                    let (tx, tb) = (get(&vals, x), get(&vals, bias));
                    let c = self.nodes[x.0].value.cols();
                    tx.iter()
                        .enumerate()
                        .map(|(i, &v)| v + tb[i % c])
                        .collect()
                }
                &Op::Reshape(x) => get(&vals, x),
                &Op::Transpose(x) => {
                    let tx = get(&vals, x);
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let mut out = vec![0.0f64; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j * r + i] = tx[i * c + j];
                        }
                    }
                    out
                }
                Op::ConcatCols(parts) => {
                    let r = shape[0];
                    let c_total = shape[1];
                    let mut out = vec![0.0f64; r * c_total];
                    let mut col = 0;
                    for &p in parts {
                        let t = get(&vals, p);
                        let c = self.nodes[p.0].value.cols();
                        for i in 0..r {
                            out[i * c_total + col..i * c_total + col + c]
                                .copy_from_slice(&t[i * c..(i + 1) * c]);
                        }
                        col += c;
                    }
                    out
                }
                Op::ConcatRows(parts) => {
                    let mut out = Vec::with_capacity(node.value.numel());
                    for &p in parts {
                        out.extend_from_slice(&get(&vals, p));
                    }
                    out
                }
                &Op::SliceCols { x, start, end } => {
                    let t = get(&vals, x);
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let w = end - start;
                    let mut out = vec![0.0f64; r * w];
                    for i in 0..r {
                        out[i * w..(i + 1) * w].copy_from_slice(&t[i * c + start..i * c + end]);
                    }
                    out
                }
                &Op::SoftmaxRows(x) => {
                    let t = get(&vals, x);
                    let (r, c) = (shape[0], shape[1]);
                    let mut out = vec![0.0f64; r * c];
                    for i in 0..r {
                        let row = &t[i * c..(i + 1) * c];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0f64;
                        for j in 0..c {
                            let e = (row[j] - max).exp();
                            out[i * c + j] = e;
                            sum += e;
                        }
                        for v in out[i * c..(i + 1) * c].iter_mut() {
                            *v /= sum;
                        }
                    }
                    out
                }
                &Op::MeanRows(x) => {
                    let t = get(&vals, x);
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let mut out = vec![0.0f64; c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j] += t[i * c + j];
                        }
                    }
                    for v in out.iter_mut() {
                        *v /= r as f64;
                    }
                    out
                }
                &Op::AllPairsConcat(x) => {
                    let t = get(&vals, x);
                    let (n, m) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let mut out = vec![0.0f64; n * n * 2 * m];
                    for i in 0..n {
                        for j in 0..n {
                            let base = (i * n + j) * 2 * m;
                            out[base..base + m].copy_from_slice(&t[i * m..(i + 1) * m]);
                            out[base + m..base + 2 * m].copy_from_slice(&t[j * m..(j + 1) * m]);
                        }
                    }
                    out
                }
                &Op::SumAll(x) => vec![get(&vals, x).iter().sum()],
                Op::SoftmaxXent { logits, labels, .. } => {
                    let t = get(&vals, *logits);
                    let (b, c) = (labels.rows(), labels.cols());
                    let mut loss = 0.0f64;
                    for i in 0..b {
                        let row = &t[i * c..(i + 1) * c];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let logsum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
                        for j in 0..c {
                            if labels.data()[i * c + j] == 1.0 {
                                loss -= row[j] - logsum;
                            }
                        }
                    }
                    vec![loss / b as f64]
                }
            };
            vals.push(out);
        }
        Ok(vals[root.0][0])
    }
}
