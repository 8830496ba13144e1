//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records primitive operations during the forward pass and
//! replays them in reverse to accumulate gradients. Tapes are rebuilt per
//! forward pass; persistent parameters live in a [`ParamStore`] and are
//! registered on each fresh tape as leaves.
//!
//! Everything is double precision. Binary elementwise ops require equal
//! shapes; the only broadcast is the explicit bias-row addition.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

// ── Shapes ───────────────────────────────────────────────────────────

/// Dense tensor shape, rank 1..=3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "tensor rank must be 1..=3, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("zero-sized dim in {dims:?}")));
        }
        Ok(TensorShape { dims: dims.to_vec() })
    }

    /// Scalar, encoded as a 1-element vector.
    pub fn scalar() -> Self {
        TensorShape { dims: vec![1] }
    }

    pub fn vector(n: usize) -> Self {
        TensorShape { dims: vec![n] }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        TensorShape { dims: vec![rows, cols] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Interprets rank-1 `[n]` as a single row `[1, n]`.
    pub fn as_matrix(&self) -> (usize, usize) {
        match self.dims.len() {
            1 => (1, self.dims[0]),
            2 => (self.dims[0], self.dims[1]),
            _ => panic!("as_matrix on rank-3 shape"),
        }
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

// ── Tape nodes ───────────────────────────────────────────────────────

/// Handle to a value on a tape. Valid only for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiffValue {
    id: usize,
}

impl DiffValue {
    pub fn node_id(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Relu { a: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Softplus { a: usize },
    /// Row-broadcast bias: `[m,n] + [1,n]`.
    AddBiasRow { a: usize, bias: usize },
    /// Per-row normalization with affine gain/bias of shape `[1,n]`.
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    /// Mean over rows of `-log softmax(logits)[target]`.
    CrossEntropy { logits: usize, targets: Vec<usize> },
    /// Mean squared difference against a constant target.
    Mse { a: usize, target: Vec<f64> },
    /// Metadata-only reinterpretation; numel preserved.
    Reshape { a: usize },
    /// Column slice of a matrix.
    SliceCols { a: usize, start: usize, len: usize },
}

struct Node {
    op: Op,
    shape: TensorShape,
    data: Vec<f64>,
    grad: Vec<f64>,
}

/// Wengert list: nodes in forward order, replayed backward for gradients.
pub struct Tape {
    nodes: Vec<Node>,
    /// Registered parameter leaves, in registration order.
    params: Vec<(ParamId, usize)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: TensorShape, data: Vec<f64>) -> DiffValue {
        debug_assert_eq!(shape.numel(), data.len());
        let grad = vec![0.0; data.len()];
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape, data, grad });
        DiffValue { id }
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Constant leaf; receives gradients but is not tracked as a parameter.
    pub fn constant(&mut self, data: &[f64], shape: TensorShape) -> DiffValue {
        assert_eq!(shape.numel(), data.len(), "constant data/shape mismatch");
        self.push(Op::Leaf, shape, data.to_vec())
    }

    pub fn scalar(&mut self, v: f64) -> DiffValue {
        self.push(Op::Leaf, TensorShape::scalar(), vec![v])
    }

    /// Registers a persistent parameter as a leaf. The buffer is snapshotted;
    /// gradients are retrievable by id after `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> DiffValue {
        let v = self.push(Op::Leaf, store.shape(id).clone(), store.data(id).to_vec());
        self.params.push((id, v.id));
        v
    }

    // ── Accessors ────────────────────────────────────────────────────

    pub fn data(&self, v: DiffValue) -> &[f64] {
        &self.nodes[v.id].data
    }

    pub fn grad(&self, v: DiffValue) -> &[f64] {
        &self.nodes[v.id].grad
    }

    pub fn shape(&self, v: DiffValue) -> &TensorShape {
        &self.nodes[v.id].shape
    }

    /// Scalar value of a 1-element node.
    pub fn value(&self, v: DiffValue) -> f64 {
        debug_assert!(self.nodes[v.id].shape.is_scalar());
        self.nodes[v.id].data[0]
    }

    /// Gradient of a registered parameter, summed over all registrations.
    /// `None` if the parameter was never registered on this tape.
    pub fn param_grad(&self, id: ParamId) -> Option<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for &(pid, node) in &self.params {
            if pid == id {
                match &mut acc {
                    None => acc = Some(self.nodes[node].grad.clone()),
                    Some(g) => {
                        for (gi, ni) in g.iter_mut().zip(&self.nodes[node].grad) {
                            *gi += ni;
                        }
                    }
                }
            }
        }
        acc
    }

    /// Parameter ids registered on this tape, in registration order.
    pub fn registered_params(&self) -> Vec<ParamId> {
        let mut seen = Vec::new();
        for &(pid, _) in &self.params {
            if !seen.contains(&pid) {
                seen.push(pid);
            }
        }
        seen
    }

    // ── Elementwise and linear ops ───────────────────────────────────

    fn require_equal(&self, op: &'static str, a: DiffValue, b: DiffValue) -> Result<()> {
        let sa = &self.nodes[a.id].shape;
        let sb = &self.nodes[b.id].shape;
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("left {sa} vs right {sb}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        self.require_equal("add", a, b)?;
        let data = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add { a: a.id, b: b.id }, self.nodes[a.id].shape.clone(), data))
    }

    pub fn sub(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        self.require_equal("sub", a, b)?;
        let data = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub { a: a.id, b: b.id }, self.nodes[a.id].shape.clone(), data))
    }

    pub fn mul(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        self.require_equal("mul", a, b)?;
        let data = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul { a: a.id, b: b.id }, self.nodes[a.id].shape.clone(), data))
    }

    pub fn scale(&mut self, a: DiffValue, factor: f64) -> DiffValue {
        let data = self.nodes[a.id].data.iter().map(|x| x * factor).collect();
        self.push(Op::Scale { a: a.id, factor }, self.nodes[a.id].shape.clone(), data)
    }

    /// relu'(0) is defined as 0. NaN inputs propagate rather than clamp,
    /// so poisoned values stay visible downstream.
    pub fn relu(&mut self, a: DiffValue) -> DiffValue {
        let data = self.nodes[a.id]
            .data
            .iter()
            .map(|&x| if x.is_nan() { x } else { x.max(0.0) })
            .collect();
        self.push(Op::Relu { a: a.id }, self.nodes[a.id].shape.clone(), data)
    }

    pub fn sigmoid(&mut self, a: DiffValue) -> DiffValue {
        let data = self.nodes[a.id].data.iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid { a: a.id }, self.nodes[a.id].shape.clone(), data)
    }

    pub fn tanh(&mut self, a: DiffValue) -> DiffValue {
        let data = self.nodes[a.id].data.iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh { a: a.id }, self.nodes[a.id].shape.clone(), data)
    }

    pub fn softplus(&mut self, a: DiffValue) -> DiffValue {
        let data = self.nodes[a.id].data.iter().map(|&x| softplus(x)).collect();
        self.push(Op::Softplus { a: a.id }, self.nodes[a.id].shape.clone(), data)
    }

    /// `a [m,k] x b [k,n] -> [m,n]`, rank-1 operands read as single rows.
    pub fn matmul(&mut self, a: DiffValue, b: DiffValue) -> Result<DiffValue> {
        let (m, ka) = self.nodes[a.id].shape.as_matrix();
        let (kb, n) = self.nodes[b.id].shape.as_matrix();
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!(
                    "inner dims disagree: left {} vs right {}",
                    self.nodes[a.id].shape, self.nodes[b.id].shape
                ),
            });
        }
        let data = matmul_raw(&self.nodes[a.id].data, &self.nodes[b.id].data, m, ka, n);
        Ok(self.push(Op::Matmul { a: a.id, b: b.id }, TensorShape::matrix(m, n), data))
    }

    /// `a [m,n] + bias [1,n]` broadcast over rows.
    pub fn add_bias_row(&mut self, a: DiffValue, bias: DiffValue) -> Result<DiffValue> {
        let (m, n) = self.nodes[a.id].shape.as_matrix();
        let (bm, bn) = self.nodes[bias.id].shape.as_matrix();
        if bm != 1 || bn != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias_row",
                detail: format!(
                    "bias {} incompatible with value {}",
                    self.nodes[bias.id].shape, self.nodes[a.id].shape
                ),
            });
        }
        let mut data = self.nodes[a.id].data.clone();
        for r in 0..m {
            for c in 0..n {
                data[r * n + c] += self.nodes[bias.id].data[c];
            }
        }
        Ok(self.push(
            Op::AddBiasRow { a: a.id, bias: bias.id },
            self.nodes[a.id].shape.clone(),
            data,
        ))
    }

    /// Per-row layer normalization: `(x - mean) / sqrt(var + eps) * gain + bias`.
    /// Variance is the biased (1/n) estimate.
    pub fn layer_norm(
        &mut self,
        x: DiffValue,
        gain: DiffValue,
        bias: DiffValue,
        eps: f64,
    ) -> Result<DiffValue> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (m, n) = self.nodes[x.id].shape.as_matrix();
        for (who, v) in [("gain", gain), ("bias", bias)] {
            let (vm, vn) = self.nodes[v.id].shape.as_matrix();
            if vm != 1 || vn != n {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    detail: format!(
                        "{who} {} incompatible with input {}",
                        self.nodes[v.id].shape, self.nodes[x.id].shape
                    ),
                });
            }
        }
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let row = &self.nodes[x.id].data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..n {
                let xhat = (row[c] - mean) * inv;
                data[r * n + c] = xhat * self.nodes[gain.id].data[c] + self.nodes[bias.id].data[c];
            }
        }
        Ok(self.push(
            Op::LayerNorm { x: x.id, gain: gain.id, bias: bias.id, eps },
            self.nodes[x.id].shape.clone(),
            data,
        ))
    }

    /// Softmax cross-entropy for a single logit row against one class index.
    pub fn softmax_cross_entropy(&mut self, logits: DiffValue, target: usize) -> Result<DiffValue> {
        self.softmax_cross_entropy_rows(logits, &[target])
    }

    /// Mean over rows of `-log softmax(row)[target]`, with max-subtraction.
    pub fn softmax_cross_entropy_rows(
        &mut self,
        logits: DiffValue,
        targets: &[usize],
    ) -> Result<DiffValue> {
        let (m, c) = self.nodes[logits.id].shape.as_matrix();
        if targets.len() != m {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("{} logit rows vs {} targets", m, targets.len()),
            });
        }
        for &t in targets {
            if t >= c {
                return Err(Error::ClassOutOfRange { index: t, classes: c });
            }
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &self.nodes[logits.id].data[r * c..(r + 1) * c];
            total += -log_softmax_at(row, t);
        }
        let data = vec![total / m as f64];
        Ok(self.push(
            Op::CrossEntropy { logits: logits.id, targets: targets.to_vec() },
            TensorShape::scalar(),
            data,
        ))
    }

    /// Mean of squared differences against a constant target tensor.
    pub fn mse(&mut self, a: DiffValue, target: &[f64]) -> Result<DiffValue> {
        let node = &self.nodes[a.id];
        if node.data.len() != target.len() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                detail: format!("value {} vs target [{}]", node.shape, target.len()),
            });
        }
        let n = target.len() as f64;
        let total: f64 = node.data.iter().zip(target).map(|(x, t)| (x - t) * (x - t)).sum();
        Ok(self.push(
            Op::Mse { a: a.id, target: target.to_vec() },
            TensorShape::scalar(),
            vec![total / n],
        ))
    }

    /// Reinterprets the data under a new shape of equal numel.
    pub fn reshape(&mut self, a: DiffValue, shape: TensorShape) -> Result<DiffValue> {
        if shape.numel() != self.nodes[a.id].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{} -> {shape}", self.nodes[a.id].shape),
            });
        }
        let data = self.nodes[a.id].data.clone();
        Ok(self.push(Op::Reshape { a: a.id }, shape, data))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: DiffValue, start: usize, len: usize) -> Result<DiffValue> {
        let (m, n) = self.nodes[a.id].shape.as_matrix();
        if start + len > n || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {start}..{} of {}", start + len, self.nodes[a.id].shape),
            });
        }
        let mut data = vec![0.0; m * len];
        for r in 0..m {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&self.nodes[a.id].data[r * n + start..r * n + start + len]);
        }
        Ok(self.push(Op::SliceCols { a: a.id, start, len }, TensorShape::matrix(m, len), data))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Accumulates d loss / d node into every node's `grad`. Gradients from
    /// successive calls add up; reset requires a fresh tape.
    pub fn backward(&mut self, loss: DiffValue) -> Result<()> {
        if !self.nodes[loss.id].shape.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got {}",
                self.nodes[loss.id].shape
            )));
        }
        // Scratch adjoints keep repeated backward calls purely additive.
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        adj[loss.id][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if adj[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            match self.nodes[i].op.clone() {
                Op::Leaf => {
                    adj[i] = g;
                    continue;
                }
                Op::Add { a, b } => {
                    axpy(&mut adj[a], &g, 1.0);
                    axpy(&mut adj[b], &g, 1.0);
                }
                Op::Sub { a, b } => {
                    axpy(&mut adj[a], &g, 1.0);
                    axpy(&mut adj[b], &g, -1.0);
                }
                Op::Mul { a, b } => {
                    let (da, db): (Vec<f64>, Vec<f64>) = {
                        let bd = &self.nodes[b].data;
                        let ad = &self.nodes[a].data;
                        (
                            g.iter().zip(bd).map(|(gi, bi)| gi * bi).collect(),
                            g.iter().zip(ad).map(|(gi, ai)| gi * ai).collect(),
                        )
                    };
                    axpy(&mut adj[a], &da, 1.0);
                    axpy(&mut adj[b], &db, 1.0);
                }
                Op::Scale { a, factor } => {
                    axpy(&mut adj[a], &g, factor);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    axpy(&mut adj[a], &da, 1.0);
                }
                Op::Sigmoid { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(gi, &s)| gi * s * (1.0 - s))
                        .collect();
                    axpy(&mut adj[a], &da, 1.0);
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(gi, &t)| gi * (1.0 - t * t))
                        .collect();
                    axpy(&mut adj[a], &da, 1.0);
                }
                Op::Softplus { a } => {
                    // d softplus(x)/dx = sigmoid(x)
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(gi, &x)| gi * sigmoid(x))
                        .collect();
                    axpy(&mut adj[a], &da, 1.0);
                }
                Op::Matmul { a, b } => {
                    let (m, k) = self.nodes[a].shape.as_matrix();
                    let (_, n) = self.nodes[b].shape.as_matrix();
                    // da = g . b^T, db = a^T . g
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    {
                        let bd = &self.nodes[b].data;
                        let ad = &self.nodes[a].data;
                        for r in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for c in 0..n {
                                    s += g[r * n + c] * bd[p * n + c];
                                }
                                da[r * k + p] = s;
                            }
                        }
                        for r in 0..m {
                            for p in 0..k {
                                let av = ad[r * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let row = &g[r * n..(r + 1) * n];
                                let out = &mut db[p * n..(p + 1) * n];
                                for c in 0..n {
                                    out[c] += av * row[c];
                                }
                            }
                        }
                    }
                    axpy(&mut adj[a], &da, 1.0);
                    axpy(&mut adj[b], &db, 1.0);
                }
                Op::AddBiasRow { a, bias } => {
                    let (m, n) = self.nodes[a].shape.as_matrix();
                    axpy(&mut adj[a], &g, 1.0);
                    let dbias = &mut adj[bias];
                    for r in 0..m {
                        for c in 0..n {
                            dbias[c] += g[r * n + c];
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (m, n) = self.nodes[x].shape.as_matrix();
                    let nf = n as f64;
                    let mut dx = vec![0.0; m * n];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for r in 0..m {
                        let row = &self.nodes[x].data[r * n..(r + 1) * n];
                        let mean = row.iter().sum::<f64>() / nf;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gout = &g[r * n..(r + 1) * n];
                        // dy flows through gain; then the standard LN input grad.
                        let mut mean_dy = 0.0;
                        let mut mean_dy_xhat = 0.0;
                        for c in 0..n {
                            let xhat = (row[c] - mean) * inv;
                            let dy = gout[c] * self.nodes[gain].data[c];
                            dgain[c] += gout[c] * xhat;
                            dbias[c] += gout[c];
                            mean_dy += dy;
                            mean_dy_xhat += dy * xhat;
                        }
                        mean_dy /= nf;
                        mean_dy_xhat /= nf;
                        for c in 0..n {
                            let xhat = (row[c] - mean) * inv;
                            let dy = gout[c] * self.nodes[gain].data[c];
                            dx[r * n + c] = inv * (dy - mean_dy - xhat * mean_dy_xhat);
                        }
                    }
                    axpy(&mut adj[x], &dx, 1.0);
                    axpy(&mut adj[gain], &dgain, 1.0);
                    axpy(&mut adj[bias], &dbias, 1.0);
                }
                Op::CrossEntropy { logits, targets } => {
                    let (m, c) = self.nodes[logits].shape.as_matrix();
                    let scale = g[0] / m as f64;
                    let mut dl = vec![0.0; m * c];
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &self.nodes[logits].data[r * c..(r + 1) * c];
                        let sm = softmax(row);
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dl[r * c + j] = scale * (sm[j] - onehot);
                        }
                    }
                    axpy(&mut adj[logits], &dl, 1.0);
                }
                Op::Mse { a, target } => {
                    let nf = target.len() as f64;
                    let da: Vec<f64> = self.nodes[a]
                        .data
                        .iter()
                        .zip(&target)
                        .map(|(x, t)| g[0] * 2.0 * (x - t) / nf)
                        .collect();
                    axpy(&mut adj[a], &da, 1.0);
                }
                Op::Reshape { a } => {
                    axpy(&mut adj[a], &g, 1.0);
                }
                Op::SliceCols { a, start, len } => {
                    let (m, n) = self.nodes[a].shape.as_matrix();
                    let da = &mut adj[a];
                    for r in 0..m {
                        for c in 0..len {
                            da[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            adj[i] = g;
        }

        for (node, a) in self.nodes.iter_mut().zip(&adj) {
            for (gi, ai) in node.grad.iter_mut().zip(a) {
                *gi += ai;
            }
        }
        Ok(())
    }
}

// ── Plain helpers ────────────────────────────────────────────────────

fn axpy(dst: &mut [f64], src: &[f64], factor: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * factor;
    }
}

/// Row-major `a [m,k] x b [k,n]`.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[r * n..(r + 1) * n];
            for c in 0..n {
                orow[c] += av * brow[c];
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Softmax of a single row, with max-subtraction.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logsum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row[idx] - logsum
}

// ── Gradient checking ────────────────────────────────────────────────

/// Central-difference check of analytic gradients for the listed parameters.
///
/// `build` must construct the loss from scratch on the tape it is given;
/// it is re-invoked once per perturbed coordinate. Returns the max over
/// coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<DiffValue>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.param_grad(id).unwrap_or_else(|| vec![0.0; store.data(id).len()]))
        .collect();

    let eval = |store: &ParamStore, build: &mut F| -> Result<f64> {
        let mut t = Tape::new();
        let loss = build(&mut t, store)?;
        Ok(t.value(loss))
    };

    let mut max_err = 0.0f64;
    for (pi, &id) in ids.iter().enumerate() {
        for j in 0..store.data(id).len() {
            let orig = store.data(id)[j];
            store.data_mut(id)[j] = orig + eps;
            let plus = eval(store, &mut build)?;
            store.data_mut(id)[j] = orig - eps;
            let minus = eval(store, &mut build)?;
            store.data_mut(id)[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][j];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
