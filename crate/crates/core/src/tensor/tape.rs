use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Tanh,
    Sigmoid,
    Log,
    Scale(f64),
    AddScalar(f64),
    /// Identity forward, negated gradient. Only used for fault injection.
    FlipGrad,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// How a binary op lines up its operands.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Unary(Unary, Var),
    Binary(Binary, Broadcast, Var, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum {
        x: Var,
        axis: Option<usize>,
        mean: bool,
    },
    Softmax(Var),
    AddRow(Var, Var),
    AddN(Vec<Var>),
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of one forward computation.
///
/// Nodes are appended as operations execute, so every node's inputs precede
/// it and the reverse index order is a valid topological order for
/// [`Tape::backward`]. Gradients of leaves accumulate across `backward`
/// calls until [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

/// Splits `shape` around `axis` into (outer, len, inner) block sizes.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut [f64] {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable input whose gradient is kept after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it requires one and `backward`
    /// has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn expect_rank(&self, v: Var, rank: usize, op: &'static str) -> Result<&[usize]> {
        let shape = self.shape(v);
        if shape.len() != rank {
            return Err(Error::dim(
                op,
                format!("expected rank {rank}, got shape {shape:?}"),
            ));
        }
        Ok(shape)
    }

    /// `a[m×n] · b[n×p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = {
            let s = self.expect_rank(a, 2, "matmul")?;
            (s[0], s[1])
        };
        let (n2, p) = {
            let s = self.expect_rank(b, 2, "matmul")?;
            (s[0], s[1])
        };
        if n != n2 {
            return Err(Error::dim(
                "matmul",
                format!("[{m}, {n}] x [{n2}, {p}]: inner dimensions differ"),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..n {
                let aik = av[i * n + k];
                let brow = &bv[k * p..(k + 1) * p];
                for (o, bk) in orow.iter_mut().zip(brow) {
                    *o += aik * bk;
                }
            }
        }
        let value = Tensor::new([m, p], out)?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = {
            let s = self.expect_rank(a, 2, "transpose")?;
            (s[0], s[1])
        };
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let value = Tensor::new([n, m], out)?;
        self.push(value, Op::Transpose(a), &[a], "transpose")
    }

    /// Affine map `x·wᵀ + b` for `x[batch×in]`, `w[out×in]`, `b[out]`.
    ///
    /// The bias is added to every row; this is the only row broadcast the
    /// engine performs and it is always explicit.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, inp) = {
            let s = self.expect_rank(x, 2, "linear")?;
            (s[0], s[1])
        };
        let (out_dim, w_in) = {
            let s = self.expect_rank(w, 2, "linear")?;
            (s[0], s[1])
        };
        if inp != w_in {
            return Err(Error::dim(
                "linear",
                format!("input [{batch}, {inp}] against weight [{out_dim}, {w_in}]"),
            ));
        }
        if let Some(b) = b {
            let s = self.shape(b);
            if s != [out_dim] {
                return Err(Error::dim(
                    "linear",
                    format!("bias {s:?} against weight [{out_dim}, {w_in}]"),
                ));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; batch * out_dim];
        for r in 0..batch {
            let xr = &xv[r * inp..(r + 1) * inp];
            for o in 0..out_dim {
                let wr = &wv[o * inp..(o + 1) * inp];
                let mut acc = bv.map_or(0.0, |bv| bv[o]);
                for (xi, wi) in xr.iter().zip(wr) {
                    acc += xi * wi;
                }
                out[r * out_dim + o] = acc;
            }
        }
        let value = Tensor::new([batch, out_dim], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(value, Op::Linear { x, w, b }, &inputs, "linear")
    }

    fn unary(&mut self, kind: Unary, a: Var, name: &'static str) -> Result<Var> {
        let av = self.value(a);
        if kind == Unary::Log {
            if let Some(bad) = av.data().iter().find(|x| **x <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive element {bad}"),
                });
            }
        }
        let f: fn(f64, f64) -> f64 = match kind {
            Unary::Tanh => |x, _| x.tanh(),
            Unary::Sigmoid => |x, _| stable_sigmoid(x),
            Unary::Log => |x, _| x.ln(),
            Unary::Scale(_) => |x, s| x * s,
            Unary::AddScalar(_) => |x, s| x + s,
            Unary::FlipGrad => |x, _| x,
        };
        let s = match kind {
            Unary::Scale(s) | Unary::AddScalar(s) => s,
            _ => 0.0,
        };
        let data = av.data().iter().map(|&x| f(x, s)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::Unary(kind, a), &[a], name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a, "sigmoid")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a, "log")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(Unary::Scale(factor), a, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(offset), a, "add_scalar")
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mode = if av.shape() == bv.shape() {
            Broadcast::Same
        } else if av.rank() == 0 {
            Broadcast::LhsScalar
        } else if bv.rank() == 0 {
            Broadcast::RhsScalar
        } else {
            return Err(Error::dim(
                name,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        };
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let (data, shape) = match mode {
            Broadcast::Same => (
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
                av.shape().to_vec(),
            ),
            Broadcast::LhsScalar => {
                let x = av.data()[0];
                (
                    bv.data().iter().map(|&y| f(x, y)).collect(),
                    bv.shape().to_vec(),
                )
            }
            Broadcast::RhsScalar => {
                let y = bv.data()[0];
                (
                    av.data().iter().map(|&x| f(x, y)).collect(),
                    av.shape().to_vec(),
                )
            }
        };
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Binary(kind, mode, a, b), &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    /// Elementwise clamp; the gradient is passed through inside `[lo, hi]`
    /// and zero outside it.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Clamp { x, lo, hi }, &[x], "clamp")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("shape {s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(
                "slice",
                format!("[{start}, {}) along axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = around_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Slice { x, axis, start }, &[x], "slice")
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        let xv = self.value(x);
        let value = match axis {
            None => {
                let s: f64 = xv.data().iter().sum();
                let n = xv.numel().max(1) as f64;
                Tensor::scalar(if mean { s / n } else { s })
            }
            Some(axis) => {
                if axis >= xv.rank() {
                    return Err(Error::dim(
                        name,
                        format!("axis {axis} out of range for shape {:?}", xv.shape()),
                    ));
                }
                let (outer, len, inner) = around_axis(xv.shape(), axis);
                let mut out = vec![0.0; outer * inner];
                let d = xv.data();
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                if mean && len > 0 {
                    out.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut shape = xv.shape().to_vec();
                shape.remove(axis);
                Tensor::new(shape, out)?
            }
        };
        self.push(value, Op::Sum { x, axis, mean }, &[x], name)
    }

    /// Sum of all elements (rank-0 result) or along one axis.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let k = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::dim("softmax", "rank-0 input"))?;
        if k == 0 {
            return Err(Error::dim("softmax", "empty last axis"));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(k) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Softmax(x), &[x], "softmax")
    }

    /// Identity whose backward pass negates the gradient. Exists so tests
    /// can plant a known-wrong derivative and check the checker catches it.
    pub fn flip_grad(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::FlipGrad, a, "flip_grad")
    }

    /// Adds `b[n]` to every row of `x[batch×n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (batch, n) = {
            let s = self.expect_rank(x, 2, "add_row")?;
            (s[0], s[1])
        };
        if self.shape(b) != [n] {
            return Err(Error::dim(
                "add_row",
                format!("row {:?} against [{batch}, {n}]", self.shape(b)),
            ));
        }
        let bv = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(a, c)| a + c))
            .collect();
        let value = Tensor::new([batch, n], data)?;
        self.push(value, Op::AddRow(x, b), &[x, b], "add_row")
    }

    /// Elementwise sum of equally shaped tensors.
    ///
    /// Each output element adds its terms in ascending order of value, so the
    /// result is bit-identical under any permutation of `inputs`.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("add_n", "no inputs"))?;
        let shape = self.shape(first).to_vec();
        for &v in inputs {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::dim(
                    "add_n",
                    format!("{:?} vs {:?}", self.shape(v), shape),
                ));
            }
        }
        let numel = self.value(first).numel();
        let mut terms = vec![0.0; inputs.len()];
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            for (t, &v) in terms.iter_mut().zip(inputs) {
                *t = self.value(v).data()[i];
            }
            terms.sort_by(f64::total_cmp);
            data.push(terms.iter().sum());
        }
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::AddN(inputs.to_vec()), inputs, "add_n")
    }

    /// Picks `x[i, indices[i]]` from each row of a rank-2 tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = {
            let s = self.expect_rank(x, 2, "gather")?;
            (s[0], s[1])
        };
        if indices.len() != rows {
            return Err(Error::dim(
                "gather",
                format!("{} indices for {rows} rows", indices.len()),
            ));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for {cols} columns"
            )));
        }
        let xv = self.value(x).data();
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| xv[r * cols + c])
            .collect();
        let value = Tensor::new([rows], data)?;
        self.push(
            value,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            &[x],
            "gather",
        )
    }

    /// Propagates d(loss)/d(node) back through the tape and adds the
    /// result into the gradient of every leaf that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let Tape { nodes, leaf_grads } = self;
        let shape = |v: Var| nodes[v.0].value.shape();
        if leaf_grads.len() < nodes.len() {
            leaf_grads.resize(nodes.len(), None);
        }
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let rg = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {
                    let slot = &mut leaf_grads[idx];
                    match slot {
                        Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, n) = (shape(*a)[0], shape(*a)[1]);
                    let p = shape(*b)[1];
                    let (av, bv) = (val(*a), val(*b));
                    if rg(*a) {
                        let ga = accumulate(&mut grads[a.0], m * n);
                        for i in 0..m {
                            for k in 0..n {
                                let mut acc = 0.0;
                                for j in 0..p {
                                    acc += g[i * p + j] * bv[k * p + j];
                                }
                                ga[i * n + k] += acc;
                            }
                        }
                    }
                    if rg(*b) {
                        let gb = accumulate(&mut grads[b.0], n * p);
                        for i in 0..m {
                            for k in 0..n {
                                let aik = av[i * n + k];
                                for j in 0..p {
                                    gb[k * p + j] += aik * g[i * p + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (shape(*a)[0], shape(*a)[1]);
                    let ga = accumulate(&mut grads[a.0], m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let (batch, inp) = (shape(*x)[0], shape(*x)[1]);
                    let out_dim = shape(*w)[0];
                    let (xv, wv) = (val(*x), val(*w));
                    if rg(*x) {
                        let gx = accumulate(&mut grads[x.0], batch * inp);
                        for r in 0..batch {
                            let gxr = &mut gx[r * inp..(r + 1) * inp];
                            for o in 0..out_dim {
                                let go = g[r * out_dim + o];
                                if go == 0.0 {
                                    continue;
                                }
                                for (gi, wi) in gxr.iter_mut().zip(&wv[o * inp..(o + 1) * inp]) {
                                    *gi += go * wi;
                                }
                            }
                        }
                    }
                    if rg(*w) {
                        let gw = accumulate(&mut grads[w.0], out_dim * inp);
                        for r in 0..batch {
                            let xr = &xv[r * inp..(r + 1) * inp];
                            for o in 0..out_dim {
                                let go = g[r * out_dim + o];
                                if go == 0.0 {
                                    continue;
                                }
                                for (gi, xi) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                                    *gi += go * xi;
                                }
                            }
                        }
                    }
                    if let Some(b) = b.filter(|b| rg(*b)) {
                        let gb = accumulate(&mut grads[b.0], out_dim);
                        for r in 0..batch {
                            for (gi, go) in gb.iter_mut().zip(&g[r * out_dim..(r + 1) * out_dim]) {
                                *gi += go;
                            }
                        }
                    }
                }
                Op::Unary(kind, a) => {
                    let y = node.value.data();
                    let xv = val(*a);
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        let local = match kind {
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Log => 1.0 / xv[i],
                            Unary::Scale(s) => *s,
                            Unary::AddScalar(_) => 1.0,
                            Unary::FlipGrad => -1.0,
                        };
                        ga[i] += g[i] * local;
                    }
                }
                Op::Binary(kind, mode, a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let n = g.len();
                    // Index into an operand, honouring scalar broadcast.
                    let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                    let da = |i: usize| match kind {
                        Binary::Add | Binary::Sub => 1.0,
                        Binary::Mul => at(bv, i),
                    };
                    let db = |i: usize| match kind {
                        Binary::Add => 1.0,
                        Binary::Sub => -1.0,
                        Binary::Mul => at(av, i),
                    };
                    if rg(*a) {
                        let ga = accumulate(&mut grads[a.0], av.len());
                        for i in 0..n {
                            let slot = if *mode == Broadcast::LhsScalar { 0 } else { i };
                            ga[slot] += g[i] * da(i);
                        }
                    }
                    if rg(*b) {
                        let gb = accumulate(&mut grads[b.0], bv.len());
                        for i in 0..n {
                            let slot = if *mode == Broadcast::RhsScalar { 0 } else { i };
                            gb[slot] += g[i] * db(i);
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = val(*x);
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, inner) = around_axis(node.value.shape(), *axis);
                    let mut offset = 0;
                    for o in 0..outer {
                        for &v in inputs {
                            let len = shape(v)[*axis] * inner;
                            if rg(v) {
                                let numel = nodes[v.0].value.numel();
                                let gv = accumulate(&mut grads[v.0], numel);
                                for (dst, src) in gv[o * len..(o + 1) * len]
                                    .iter_mut()
                                    .zip(&g[offset..offset + len])
                                {
                                    *dst += src;
                                }
                            }
                            offset += len;
                        }
                    }
                }
                Op::Slice { x, axis, start } => {
                    let (outer, full, inner) = around_axis(shape(*x), *axis);
                    let len = node.value.shape()[*axis];
                    let gx = accumulate(&mut grads[x.0], outer * full * inner);
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        for (dst, src) in gx[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                        {
                            *dst += src;
                        }
                    }
                }
                Op::Sum { x, axis, mean } => {
                    let xs = shape(*x);
                    let numel: usize = xs.iter().product();
                    match axis {
                        None => {
                            let scale = if *mean { 1.0 / numel.max(1) as f64 } else { 1.0 };
                            let gx = accumulate(&mut grads[x.0], numel);
                            gx.iter_mut().for_each(|v| *v += g[0] * scale);
                        }
                        Some(axis) => {
                            let (outer, len, inner) = around_axis(xs, *axis);
                            let scale = if *mean { 1.0 / len.max(1) as f64 } else { 1.0 };
                            let gx = accumulate(&mut grads[x.0], numel);
                            for o in 0..outer {
                                for l in 0..len {
                                    let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                                    for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                        *d += s * scale;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let k = *node.value.shape().last().unwrap_or(&1);
                    let gx = accumulate(&mut grads[x.0], y.len());
                    for r in 0..y.len() / k {
                        let yr = &y[r * k..(r + 1) * k];
                        let gr = &g[r * k..(r + 1) * k];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            gx[r * k + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    let n = shape(*b)[0];
                    if rg(*x) {
                        let gx = accumulate(&mut grads[x.0], g.len());
                        gx.iter_mut().zip(&g).for_each(|(a, c)| *a += c);
                    }
                    if rg(*b) && n > 0 {
                        let gb = accumulate(&mut grads[b.0], n);
                        for row in g.chunks(n) {
                            gb.iter_mut().zip(row).for_each(|(a, c)| *a += c);
                        }
                    }
                }
                Op::AddN(inputs) => {
                    for &v in inputs {
                        if rg(v) {
                            let gv = accumulate(&mut grads[v.0], g.len());
                            gv.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::Gather { x, indices } => {
                    let cols = shape(*x)[1];
                    let gx = accumulate(&mut grads[x.0], indices.len() * cols);
                    for (r, &c) in indices.iter().enumerate() {
                        gx[r * cols + c] += g[r];
                    }
                }
            }
        }
        Ok(())
    }
}
