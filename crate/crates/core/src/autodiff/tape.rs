use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::AdError;

/// Plain row-major value tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    Matmul(Var, Var),
    AddBias(Var, Var),
    LookupRows { table: Var, ids: Vec<u32> },
    Gather { vec: Var, ids: Vec<u32> },
    Conv1dSame { x: Var, w: Var, width: usize },
    Relu(Var),
    Tanh(Var),
    MaxOverTime { x: Var, argmax: Vec<u32> },
    Softmax(Var),
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    LogSoftmax(Var),
    Dropout { x: Var, keep: Vec<bool>, scale: f64 },
    Concat2(Var, Var),
    RowsDot(Var, Var),
    ScaleRows { x: Var, weights: Vec<f64> },
    MulConst { x: Var, weights: Vec<f64> },
    Attend { weights: Var, x: Var },
    Reshape(Var),
    SumAll(Var),
    SumSquares(Var),
    MseLoss { pred: Var, target: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Records operations for one forward pass. Single-threaded; distinct
/// tapes with disjoint parameters may run concurrently.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    kink_sig: u64,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_sig: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Hash of every non-smooth decision taken during the forward pass
    /// (relu activation signs, max-pool argmax picks). Two evaluations
    /// that land on different sides of a kink produce different
    /// signatures; the gradient checker excludes such coordinates.
    pub fn nonsmooth_signature(&self) -> u64 {
        self.kink_sig
    }

    fn fold_sig(&mut self, v: u64) {
        self.kink_sig = (self.kink_sig ^ v).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Tracked leaf: gradients will be populated by [`Tape::backward`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), true, Op::Leaf)
    }

    pub fn param_from_slice(&mut self, shape: &[usize], data: &[f64]) -> Var {
        self.push(shape.to_vec(), data.to_vec(), true, Op::Leaf)
    }

    /// Untracked leaf: constant input data.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, false, Op::Leaf)
    }

    pub fn constant_from_slice(&mut self, shape: &[usize], data: &[f64]) -> Var {
        self.push(shape.to_vec(), data.to_vec(), false, Op::Leaf)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    // ---- elementwise and scalar ops -------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(AdError::Shape {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("add", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, needs, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("sub", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, needs, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("mul", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), value, needs, Op::Scale(x, c))
    }

    /// Broadcasts a scalar variable over a tensor: `y = x + s`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, AdError> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(AdError::Shape {
                op: "add_scalar",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[s.0].shape.clone(),
            });
        }
        let sv = self.nodes[s.0].value[0];
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v + sv).collect();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            needs,
            Op::AddScalar(x, s),
        ))
    }

    /// Broadcasts a scalar variable over a tensor: `y = x * s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, AdError> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(AdError::Shape {
                op: "mul_scalar",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[s.0].shape.clone(),
            });
        }
        let sv = self.nodes[s.0].value[0];
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * sv).collect();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            needs,
            Op::MulScalar(x, s),
        ))
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AdError::Shape {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                for p in 0..k {
                    let aik = av[i * k + p];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let out = &mut value[i * n..(i + 1) * n];
                    for (o, &bv) in out.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], value, needs, Op::Matmul(a, b)))
    }

    /// Adds a vector over the last axis: `y[..., j] = x[..., j] + b[j]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let sx = &self.nodes[x.0].shape;
        let sb = &self.nodes[b.0].shape;
        let last = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != last {
            return Err(AdError::Shape {
                op: "add_bias",
                lhs: sx.clone(),
                rhs: sb.clone(),
            });
        }
        let bv = self.nodes[b.0].value.clone();
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % last])
            .collect();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(sx.clone(), value, needs, Op::AddBias(x, b)))
    }

    /// Row lookup into a `(V, D)` table; output `(ids.len(), D)`.
    pub fn lookup_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var, AdError> {
        let st = &self.nodes[table.0].shape;
        if st.len() != 2 {
            return Err(AdError::Rank {
                op: "lookup_rows",
                expected: 2,
                got: st.clone(),
            });
        }
        let (v, d) = (st[0], st[1]);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= v {
                return Err(AdError::IndexOutOfBounds { index: id, len: v });
            }
            value.extend_from_slice(
                &self.nodes[table.0].value[id as usize * d..(id as usize + 1) * d],
            );
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), d],
            value,
            needs,
            Op::LookupRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Element lookup into a `(V,)` vector; output `(ids.len(),)`.
    pub fn gather(&mut self, vec: Var, ids: &[u32]) -> Result<Var, AdError> {
        let sv = &self.nodes[vec.0].shape;
        if sv.len() != 1 {
            return Err(AdError::Rank {
                op: "gather",
                expected: 1,
                got: sv.clone(),
            });
        }
        let n = sv[0];
        let mut value = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= n {
                return Err(AdError::IndexOutOfBounds { index: id, len: n });
            }
            value.push(self.nodes[vec.0].value[id as usize]);
        }
        let needs = self.needs(vec);
        Ok(self.push(
            vec![ids.len()],
            value,
            needs,
            Op::Gather {
                vec,
                ids: ids.to_vec(),
            },
        ))
    }

    /// 1-D convolution with "same" zero padding over `(B, T, D)` input
    /// and `(F, width·D)` filters; output `(B, T, F)`. `width` is odd.
    pub fn conv1d_same(&mut self, x: Var, w: Var, width: usize) -> Result<Var, AdError> {
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        if sx.len() != 3 {
            return Err(AdError::Rank {
                op: "conv1d_same",
                expected: 3,
                got: sx,
            });
        }
        let (bsz, t, d) = (sx[0], sx[1], sx[2]);
        if sw.len() != 2 || sw[1] != width * d || width % 2 == 0 {
            return Err(AdError::Shape {
                op: "conv1d_same",
                lhs: sx,
                rhs: sw,
            });
        }
        let f = sw[0];
        let hw = width / 2;
        let mut value = vec![0.0; bsz * t * f];
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            for b in 0..bsz {
                for ti in 0..t {
                    let s = ti as isize - hw as isize;
                    let o_lo = (-s).max(0) as usize;
                    let o_hi = width.min((t as isize - s) as usize);
                    let src = (b * t) as isize + s + o_lo as isize;
                    let x_lo = src as usize * d;
                    let len = (o_hi - o_lo) * d;
                    let xs = &xv[x_lo..x_lo + len];
                    let out = &mut value[(b * t + ti) * f..(b * t + ti + 1) * f];
                    for (fi, o) in out.iter_mut().enumerate() {
                        let ws = &wv[fi * width * d + o_lo * d..fi * width * d + o_lo * d + len];
                        let mut acc = 0.0;
                        for (xa, wa) in xs.iter().zip(ws) {
                            acc += xa * wa;
                        }
                        *o = acc;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(
            vec![bsz, t, f],
            value,
            needs,
            Op::Conv1dSame { x, w, width },
        ))
    }

    // ---- nonlinearities ---------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let mut sig = 0u64;
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| {
                sig = sig.wrapping_mul(31).wrapping_add((v > 0.0) as u64 + 1);
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        self.fold_sig(sig);
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), value, needs, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), value, needs, Op::Tanh(x))
    }

    /// Max over the time axis of a `(B, T, F)` tensor; output `(B, F)`.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var, AdError> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 3 {
            return Err(AdError::Rank {
                op: "max_over_time",
                expected: 3,
                got: sx,
            });
        }
        let (bsz, t, f) = (sx[0], sx[1], sx[2]);
        let mut value = vec![f64::NEG_INFINITY; bsz * f];
        let mut argmax = vec![0u32; bsz * f];
        {
            let xv = &self.nodes[x.0].value;
            for b in 0..bsz {
                for ti in 0..t {
                    for fi in 0..f {
                        let v = xv[(b * t + ti) * f + fi];
                        if v > value[b * f + fi] {
                            value[b * f + fi] = v;
                            argmax[b * f + fi] = ti as u32;
                        }
                    }
                }
            }
        }
        let mut sig = 0u64;
        for &a in &argmax {
            sig = sig.wrapping_mul(31).wrapping_add(a as u64 + 1);
        }
        self.fold_sig(sig);
        let needs = self.needs(x);
        Ok(self.push(vec![bsz, f], value, needs, Op::MaxOverTime { x, argmax }))
    }

    fn softmax_rows(values: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (row_in, row_out) in values.chunks(cols).zip(out.chunks_mut(cols)) {
            let m = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - m).exp();
                total += *o;
            }
            for o in row_out.iter_mut() {
                *o /= total;
            }
        }
        out
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AdError> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 {
            return Err(AdError::Rank {
                op: "softmax",
                expected: 2,
                got: sx,
            });
        }
        let value = Self::softmax_rows(&self.nodes[x.0].value, sx[1]);
        let needs = self.needs(x);
        Ok(self.push(sx, value, needs, Op::Softmax(x)))
    }

    /// Row-wise softmax over unmasked entries only; masked entries get
    /// weight 0, and a fully-masked row yields an all-zero row.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, AdError> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 || mask.len() != self.nodes[x.0].value.len() {
            return Err(AdError::Shape {
                op: "masked_softmax",
                lhs: sx,
                rhs: vec![mask.len()],
            });
        }
        let cols = sx[1];
        let mut value = vec![0.0; self.nodes[x.0].value.len()];
        for (r, (row_in, row_out)) in self.nodes[x.0]
            .value
            .chunks(cols)
            .zip(value.chunks_mut(cols))
            .enumerate()
        {
            let row_mask = &mask[r * cols..(r + 1) * cols];
            let m = row_in
                .iter()
                .zip(row_mask)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut total = 0.0;
            for ((o, &v), &keep) in row_out.iter_mut().zip(row_in).zip(row_mask) {
                if keep {
                    *o = (v - m).exp();
                    total += *o;
                }
            }
            for o in row_out.iter_mut() {
                *o /= total;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            sx,
            value,
            needs,
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AdError> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 {
            return Err(AdError::Rank {
                op: "log_softmax",
                expected: 2,
                got: sx,
            });
        }
        let cols = sx[1];
        let mut value = vec![0.0; self.nodes[x.0].value.len()];
        for (row_in, row_out) in self.nodes[x.0]
            .value
            .chunks(cols)
            .zip(value.chunks_mut(cols))
        {
            let m = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row_in.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = v - log_z;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(sx, value, needs, Op::LogSoftmax(x)))
    }

    /// Inverted dropout: keeps each entry with probability `1 - p` and
    /// scales by `1/(1-p)`, so evaluation needs no correction (the op
    /// is simply omitted at evaluation time). `p = 0` is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate must lie in [0, 1)");
        if p == 0.0 {
            return x;
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<bool> = (0..self.nodes[x.0].value.len())
            .map(|_| rng.random_range(0.0..1.0) >= p)
            .collect();
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * scale } else { 0.0 })
            .collect();
        let needs = self.needs(x);
        self.push(
            self.nodes[x.0].shape.clone(),
            value,
            needs,
            Op::Dropout { x, keep, scale },
        )
    }

    /// Concatenates two 2-D tensors along axis 1.
    pub fn concat2(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(AdError::Shape {
                op: "concat2",
                lhs: sa,
                rhs: sb,
            });
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut value = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            value.extend_from_slice(&self.nodes[a.0].value[r * ca..(r + 1) * ca]);
            value.extend_from_slice(&self.nodes[b.0].value[r * cb..(r + 1) * cb]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![rows, ca + cb], value, needs, Op::Concat2(a, b)))
    }

    /// Row-wise dot product of two `(B, K)` tensors; output `(B,)`.
    pub fn rows_dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("rows_dot", a, b)?;
        let sa = self.nodes[a.0].shape.clone();
        if sa.len() != 2 {
            return Err(AdError::Rank {
                op: "rows_dot",
                expected: 2,
                got: sa,
            });
        }
        let (rows, k) = (sa[0], sa[1]);
        let mut value = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..k {
                acc += self.nodes[a.0].value[r * k + c] * self.nodes[b.0].value[r * k + c];
            }
            value.push(acc);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![rows], value, needs, Op::RowsDot(a, b)))
    }

    /// Multiplies row `r` of `x` by the constant `weights[r]`. A 1-D
    /// input is treated as one value per row.
    pub fn scale_rows(&mut self, x: Var, weights: &[f64]) -> Result<Var, AdError> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.is_empty() || sx[0] != weights.len() {
            return Err(AdError::Shape {
                op: "scale_rows",
                lhs: sx,
                rhs: vec![weights.len()],
            });
        }
        let inner: usize = sx[1..].iter().product::<usize>().max(1);
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v * weights[i / inner])
            .collect();
        let needs = self.needs(x);
        Ok(self.push(
            sx,
            value,
            needs,
            Op::ScaleRows {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Elementwise product with a constant tensor of the same size.
    pub fn mul_const(&mut self, x: Var, weights: &[f64]) -> Result<Var, AdError> {
        if self.nodes[x.0].value.len() != weights.len() {
            return Err(AdError::Shape {
                op: "mul_const",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: vec![weights.len()],
            });
        }
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(weights)
            .map(|(&v, &w)| v * w)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            needs,
            Op::MulConst {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Weighted sum over the review axis: weights `(B, R)` × values
    /// `(B, R, F)` → `(B, F)`.
    pub fn attend(&mut self, weights: Var, x: Var) -> Result<Var, AdError> {
        let sw = self.nodes[weights.0].shape.clone();
        let sx = self.nodes[x.0].shape.clone();
        if sw.len() != 2 || sx.len() != 3 || sw[0] != sx[0] || sw[1] != sx[1] {
            return Err(AdError::Shape {
                op: "attend",
                lhs: sw,
                rhs: sx,
            });
        }
        let (bsz, r, f) = (sx[0], sx[1], sx[2]);
        let mut value = vec![0.0; bsz * f];
        for b in 0..bsz {
            for ri in 0..r {
                let w = self.nodes[weights.0].value[b * r + ri];
                if w == 0.0 {
                    continue;
                }
                let src = &self.nodes[x.0].value[(b * r + ri) * f..(b * r + ri + 1) * f];
                let dst = &mut value[b * f..(b + 1) * f];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let needs = self.needs(weights) || self.needs(x);
        Ok(self.push(vec![bsz, f], value, needs, Op::Attend { weights, x }))
    }

    /// Reinterprets the value under a new shape with equal element
    /// count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        if shape.iter().product::<usize>() != self.nodes[x.0].value.len() {
            return Err(AdError::Shape {
                op: "reshape",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.nodes[x.0].value.clone();
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), value, needs, Op::Reshape(x)))
    }

    // ---- reductions and losses --------------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].value.iter().sum();
        let needs = self.needs(x);
        self.push(vec![1], vec![total], needs, Op::SumAll(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].value.iter().map(|v| v * v).sum();
        let needs = self.needs(x);
        self.push(vec![1], vec![total], needs, Op::SumSquares(x))
    }

    /// Mean squared error of a 1-D prediction vector against constant
    /// targets.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var, AdError> {
        let sp = self.nodes[pred.0].shape.clone();
        if sp.len() != 1 || sp[0] != target.len() || target.is_empty() {
            return Err(AdError::Shape {
                op: "mse_loss",
                lhs: sp,
                rhs: vec![target.len()],
            });
        }
        let n = target.len() as f64;
        let total: f64 = self.nodes[pred.0]
            .value
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let needs = self.needs(pred);
        Ok(self.push(
            vec![1],
            vec![total / n],
            needs,
            Op::MseLoss {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    // ---- backward ----------------------------------------------------------

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn grad_buf(&mut self, v: Var) -> &mut Vec<f64> {
        let len = self.nodes[v.0].value.len();
        self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Populates `∂loss/∂leaf` for every tracked leaf reachable from
    /// `loss`. The loss must be a scalar recorded on this tape.
    pub fn backward(&mut self, loss: Var) -> Result<(), AdError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AdError::NonScalarLoss {
                got: self.nodes[loss.0].shape.clone(),
            });
        }
        self.grad_buf(loss)[0] += 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = self.nodes[idx].grad.clone().unwrap();
            // temporarily move the op out to appease the borrow checker
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(&op, idx, &g);
            self.nodes[idx].op = op;
        }
        Ok(())
    }

    fn propagate(&mut self, op: &Op, out_idx: usize, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        let buf = self.grad_buf(v);
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    let buf = self.grad_buf(*a);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if self.needs(*b) {
                    let buf = self.grad_buf(*b);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.clone();
                    let buf = self.grad_buf(*a);
                    for ((o, &gi), &v) in buf.iter_mut().zip(g).zip(&bv) {
                        *o += gi * v;
                    }
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.clone();
                    let buf = self.grad_buf(*b);
                    for ((o, &gi), &v) in buf.iter_mut().zip(g).zip(&av) {
                        *o += gi * v;
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.needs(*x) {
                    let c = *c;
                    let buf = self.grad_buf(*x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi * c;
                    }
                }
            }
            Op::AddScalar(x, s) => {
                if self.needs(*x) {
                    let buf = self.grad_buf(*x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if self.needs(*s) {
                    let total: f64 = g.iter().sum();
                    self.grad_buf(*s)[0] += total;
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.nodes[s.0].value[0];
                if self.needs(*x) {
                    let buf = self.grad_buf(*x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi * sv;
                    }
                }
                if self.needs(*s) {
                    let xv = &self.nodes[x.0].value;
                    let total: f64 = g.iter().zip(xv).map(|(&gi, &v)| gi * v).sum();
                    self.grad_buf(*s)[0] += total;
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.needs(*a) {
                    // dA = dY · Bᵀ
                    let bv = self.nodes[b.0].value.clone();
                    let buf = self.grad_buf(*a);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            buf[i * k + p] += acc;
                        }
                    }
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dY
                    let av = self.nodes[a.0].value.clone();
                    let buf = self.grad_buf(*b);
                    for p in 0..k {
                        for i in 0..m {
                            let apk = av[i * k + p];
                            if apk == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                buf[p * n + j] += apk * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                let last = *self.nodes[b.0].shape.last().unwrap();
                if self.needs(*x) {
                    let buf = self.grad_buf(*x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if self.needs(*b) {
                    let buf = self.grad_buf(*b);
                    for (i, &gi) in g.iter().enumerate() {
                        buf[i % last] += gi;
                    }
                }
            }
            Op::LookupRows { table, ids } => {
                if self.needs(*table) {
                    let d = self.nodes[table.0].shape[1];
                    let buf = self.grad_buf(*table);
                    for (row, &id) in ids.iter().enumerate() {
                        let dst = &mut buf[id as usize * d..(id as usize + 1) * d];
                        let src = &g[row * d..(row + 1) * d];
                        for (o, &gi) in dst.iter_mut().zip(src) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Gather { vec, ids } => {
                if self.needs(*vec) {
                    let buf = self.grad_buf(*vec);
                    for (i, &id) in ids.iter().enumerate() {
                        buf[id as usize] += g[i];
                    }
                }
            }
            Op::Conv1dSame { x, w, width } => {
                let (bsz, t, d) = (
                    self.nodes[x.0].shape[0],
                    self.nodes[x.0].shape[1],
                    self.nodes[x.0].shape[2],
                );
                let f = self.nodes[w.0].shape[0];
                let width = *width;
                let hw = width / 2;
                if self.needs(*x) {
                    let wv = self.nodes[w.0].value.clone();
                    let buf = self.grad_buf(*x);
                    for b in 0..bsz {
                        for ti in 0..t {
                            let s = ti as isize - hw as isize;
                            let o_lo = (-s).max(0) as usize;
                            let o_hi = width.min((t as isize - s) as usize);
                            let x_lo = ((b * t) as isize + s + o_lo as isize) as usize * d;
                            let len = (o_hi - o_lo) * d;
                            for fi in 0..f {
                                let gi = g[(b * t + ti) * f + fi];
                                if gi == 0.0 {
                                    continue;
                                }
                                let ws =
                                    &wv[fi * width * d + o_lo * d..fi * width * d + o_lo * d + len];
                                let xs = &mut buf[x_lo..x_lo + len];
                                for (o, &wa) in xs.iter_mut().zip(ws) {
                                    *o += gi * wa;
                                }
                            }
                        }
                    }
                }
                if self.needs(*w) {
                    let xv = self.nodes[x.0].value.clone();
                    let buf = self.grad_buf(*w);
                    for b in 0..bsz {
                        for ti in 0..t {
                            let s = ti as isize - hw as isize;
                            let o_lo = (-s).max(0) as usize;
                            let o_hi = width.min((t as isize - s) as usize);
                            let x_lo = ((b * t) as isize + s + o_lo as isize) as usize * d;
                            let len = (o_hi - o_lo) * d;
                            let xs = &xv[x_lo..x_lo + len];
                            for fi in 0..f {
                                let gi = g[(b * t + ti) * f + fi];
                                if gi == 0.0 {
                                    continue;
                                }
                                let ws = &mut buf
                                    [fi * width * d + o_lo * d..fi * width * d + o_lo * d + len];
                                for (o, &xa) in ws.iter_mut().zip(xs) {
                                    *o += gi * xa;
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let xv = self.nodes[x.0].value.clone();
                    let buf = self.grad_buf(*x);
                    for ((o, &gi), &v) in buf.iter_mut().zip(g).zip(&xv) {
                        if v > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if self.needs(*x) {
                    let yv = self.nodes[out_idx].value.clone();
                    let buf = self.grad_buf(*x);
                    for ((o, &gi), &y) in buf.iter_mut().zip(g).zip(&yv) {
                        *o += gi * (1.0 - y * y);
                    }
                }
            }
            Op::MaxOverTime { x, argmax } => {
                if self.needs(*x) {
                    let (t, f) = (self.nodes[x.0].shape[1], self.nodes[x.0].shape[2]);
                    let bf = self.nodes[out_idx].value.len();
                    let buf = self.grad_buf(*x);
                    for i in 0..bf {
                        let (b, fi) = (i / f, i % f);
                        let ti = argmax[i] as usize;
                        buf[(b * t + ti) * f + fi] += g[i];
                    }
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let cols = self.nodes[out_idx].shape[1];
                    let yv = self.nodes[out_idx].value.clone();
                    let buf = self.grad_buf(*x);
                    for r in 0..yv.len() / cols {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                        for c in 0..cols {
                            buf[r * cols + c] += y[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                if self.needs(*x) {
                    let cols = self.nodes[out_idx].shape[1];
                    let yv = self.nodes[out_idx].value.clone();
                    let buf = self.grad_buf(*x);
                    for r in 0..yv.len() / cols {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let m = &mask[r * cols..(r + 1) * cols];
                        let dot: f64 = y
                            .iter()
                            .zip(gr)
                            .zip(m)
                            .filter(|(_, &keep)| keep)
                            .map(|((&yi, &gi), _)| yi * gi)
                            .sum();
                        for c in 0..cols {
                            if m[c] {
                                buf[r * cols + c] += y[c] * (gr[c] - dot);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if self.needs(*x) {
                    let cols = self.nodes[out_idx].shape[1];
                    let yv = self.nodes[out_idx].value.clone();
                    let buf = self.grad_buf(*x);
                    for r in 0..yv.len() / cols {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let total: f64 = gr.iter().sum();
                        for c in 0..cols {
                            buf[r * cols + c] += gr[c] - y[c].exp() * total;
                        }
                    }
                }
            }
            Op::Dropout { x, keep, scale } => {
                if self.needs(*x) {
                    let buf = self.grad_buf(*x);
                    for ((o, &gi), &k) in buf.iter_mut().zip(g).zip(keep) {
                        if k {
                            *o += gi * scale;
                        }
                    }
                }
            }
            Op::Concat2(a, b) => {
                let (rows, ca) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let cb = self.nodes[b.0].shape[1];
                if self.needs(*a) {
                    let buf = self.grad_buf(*a);
                    for r in 0..rows {
                        for c in 0..ca {
                            buf[r * ca + c] += g[r * (ca + cb) + c];
                        }
                    }
                }
                if self.needs(*b) {
                    let buf = self.grad_buf(*b);
                    for r in 0..rows {
                        for c in 0..cb {
                            buf[r * cb + c] += g[r * (ca + cb) + ca + c];
                        }
                    }
                }
            }
            Op::RowsDot(a, b) => {
                let k = self.nodes[a.0].shape[1];
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.clone();
                    let buf = self.grad_buf(*a);
                    for (i, o) in buf.iter_mut().enumerate() {
                        *o += g[i / k] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.clone();
                    let buf = self.grad_buf(*b);
                    for (i, o) in buf.iter_mut().enumerate() {
                        *o += g[i / k] * av[i];
                    }
                }
            }
            Op::ScaleRows { x, weights } => {
                if self.needs(*x) {
                    let inner = (self.nodes[x.0].value.len() / weights.len()).max(1);
                    let buf = self.grad_buf(*x);
                    for (i, (o, &gi)) in buf.iter_mut().zip(g).enumerate() {
                        *o += gi * weights[i / inner];
                    }
                }
            }
            Op::MulConst { x, weights } => {
                if self.needs(*x) {
                    let buf = self.grad_buf(*x);
                    for ((o, &gi), &w) in buf.iter_mut().zip(g).zip(weights) {
                        *o += gi * w;
                    }
                }
            }
            Op::Attend { weights, x } => {
                let (bsz, r, f) = (
                    self.nodes[x.0].shape[0],
                    self.nodes[x.0].shape[1],
                    self.nodes[x.0].shape[2],
                );
                if self.needs(*weights) {
                    let xv = self.nodes[x.0].value.clone();
                    let buf = self.grad_buf(*weights);
                    for b in 0..bsz {
                        for ri in 0..r {
                            let mut acc = 0.0;
                            for fi in 0..f {
                                acc += g[b * f + fi] * xv[(b * r + ri) * f + fi];
                            }
                            buf[b * r + ri] += acc;
                        }
                    }
                }
                if self.needs(*x) {
                    let wv = self.nodes[weights.0].value.clone();
                    let buf = self.grad_buf(*x);
                    for b in 0..bsz {
                        for ri in 0..r {
                            let w = wv[b * r + ri];
                            if w == 0.0 {
                                continue;
                            }
                            for fi in 0..f {
                                buf[(b * r + ri) * f + fi] += w * g[b * f + fi];
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let buf = self.grad_buf(*x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    let gi = g[0];
                    let buf = self.grad_buf(*x);
                    for o in buf.iter_mut() {
                        *o += gi;
                    }
                }
            }
            Op::SumSquares(x) => {
                if self.needs(*x) {
                    let gi = g[0];
                    let xv = self.nodes[x.0].value.clone();
                    let buf = self.grad_buf(*x);
                    for (o, &v) in buf.iter_mut().zip(&xv) {
                        *o += gi * 2.0 * v;
                    }
                }
            }
            Op::MseLoss { pred, target } => {
                if self.needs(*pred) {
                    let gi = g[0];
                    let n = target.len() as f64;
                    let pv = self.nodes[pred.0].value.clone();
                    let buf = self.grad_buf(*pred);
                    for ((o, &p), &t) in buf.iter_mut().zip(&pv).zip(target) {
                        *o += gi * 2.0 * (p - t) / n;
                    }
                }
            }
        }
    }
}
