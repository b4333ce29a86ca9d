//! Reverse-mode automatic differentiation over an arena tape.
//!
//! Every op appends a node holding its output value. Leaves snapshot the
//! tensors they were created from, so later in-place parameter updates never
//! leak into a pending backward pass. `backward` consumes the tape and hands
//! back a [`Gradients`] table indexed by [`Var`].

use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive op kinds accepted by [`Tape::forward_op`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    /// Same-shape add, or bias add of a `[n]` vector over the rows of `[m × n]`.
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Log,
    Clamp {
        lo: f64,
        hi: f64,
    },
    Mean,
    Sum,
    Concat {
        axis: usize,
    },
    Reshape(Vec<usize>),
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    /// Row-wise log-softmax of a 2-D input.
    LogSoftmax,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddBias {
        a: usize,
        b: usize,
        cols: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    AddScalar {
        a: usize,
    },
    LeakyRelu {
        a: usize,
        alpha: f64,
    },
    Tanh {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Log {
        a: usize,
    },
    Clamp {
        a: usize,
        lo: f64,
        hi: f64,
    },
    Mean {
        a: usize,
    },
    Sum {
        a: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Reshape {
        a: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    LogSoftmax {
        a: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the variable does not require grad or was unreachable.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// `c = beta * c + a · b` for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: all three buffers were checked to cover the strided extents,
    // which never exceed m·k, k·n and m·n elements respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Snapshots `t`; the leaf requires grad iff `t` does.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Snapshots `t` as a constant, whatever its `requires_grad` flag.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// First element of `v`; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Dispatches a primitive by kind.
    pub fn forward_op(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            OpKind::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(TensorError::InvalidArgument {
                op: "forward_op",
                msg: format!("{kind:?} takes {arity} input(s), got {}", inputs.len()),
            });
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Scale(c) => Ok(self.scale(inputs[0], *c)),
            OpKind::AddScalar(c) => Ok(self.add_scalar(inputs[0], *c)),
            OpKind::LeakyRelu(alpha) => Ok(self.leaky_relu(inputs[0], *alpha)),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Log => self.log(inputs[0]),
            OpKind::Clamp { lo, hi } => Ok(self.clamp(inputs[0], *lo, *hi)),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::Sum => Ok(self.sum(inputs[0])),
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::Reshape(shape) => self.reshape(inputs[0], shape.clone()),
            OpKind::Slice { axis, start, len } => self.slice(inputs[0], *axis, *start, *len),
            OpKind::LogSoftmax => self.log_softmax(inputs[0]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            vec![m, n],
            out,
            rg,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let rg = self.rg(&[a, b]);
        if sa == sb {
            let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
            return Ok(self.push(sa, out, rg, Op::Add { a: a.0, b: b.0 }));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let cols = sb[0];
            let bias = self.value(b);
            let out = self
                .value(a)
                .iter()
                .enumerate()
                .map(|(i, x)| x + bias[i % cols])
                .collect();
            return Ok(self.push(sa, out, rg, Op::AddBias { a: a.0, b: b.0, cols }));
        }
        Err(TensorError::ShapeMismatch {
            op: "add",
            lhs: sa,
            rhs: sb,
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, rg, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, rg, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale { a: a.0, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar { a: a.0 })
    }

    /// `c - a`, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, c)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { alpha * x },
            Op::LeakyRelu { a: a.0, alpha },
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid { a: a.0 })
    }

    /// Natural log. Zero and negative inputs are rejected; NaN propagates so
    /// that callers can report it as a numerical failure.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((index, &value)) = self.value(a).iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(TensorError::NonPositiveLog { value, index });
        }
        Ok(self.unary(a, f64::ln, Op::Log { a: a.0 }))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a: a.0, lo, hi })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                msg: "empty input".into(),
            });
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Vec::new(), vec![m], rg, Op::Mean { a: a.0 }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Vec::new(), vec![s], rg, Op::Sum { a: a.0 })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut axis_len = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            axis_len += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_len;
        let (outer, inner) = outer_inner(&shape, axis);
        let mut out = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, rg, Op::Reshape { a: a.0 }))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if axis >= src.len() || start + len > src[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of shape {src:?}", start + len),
            });
        }
        let (outer, inner) = outer_inner(&src, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        let v = self.value(a);
        for o in 0..outer {
            let base = (o * src[axis] + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = src;
        shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, rg, Op::Slice { a: a.0, axis, start }))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.slice(a, 0, start, len)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(TensorError::InvalidArgument {
                op: "log_softmax",
                msg: format!("expects a non-empty 2-D input, got {s:?}"),
            });
        }
        let cols = s[1];
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(s, out, rg, Op::LogSoftmax { a: a.0, cols }))
    }

    /// Consumes the tape and returns d`loss`/d`v` for every node requiring grad.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = &self.nodes[loss.0].shape;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        let recorded = self.nodes.iter().any(|n| n.requires_grad && !matches!(n.op, Op::Leaf));
        if !recorded {
            return Err(TensorError::EmptyTape);
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], idx: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; len]))
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if let Some(da) = slot(grads, nodes, a) {
                // dA = G · Bᵀ
                gemm(m, n, k, g, (n as isize, 1), &nodes[b].value, (1, n as isize), 1.0, da);
            }
            if let Some(db) = slot(grads, nodes, b) {
                // dB = Aᵀ · G
                gemm(k, m, n, &nodes[a].value, (1, k as isize), g, (n as isize, 1), 1.0, db);
            }
        }
        &Op::Add { a, b } => {
            for p in [a, b] {
                if let Some(d) = slot(grads, nodes, p) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
        &Op::AddBias { a, b, cols } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(d) = slot(grads, nodes, b) {
                for row in g.chunks(cols) {
                    d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
        }
        &Op::Sub { a, b } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(d) = slot(grads, nodes, b) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
        }
        &Op::Mul { a, b } => {
            // Operands are cloned first so that mul(x, x) accumulates twice.
            let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
            if let Some(d) = slot(grads, nodes, a) {
                for ((x, gi), bi) in d.iter_mut().zip(g).zip(&vb) {
                    *x += gi * bi;
                }
            }
            if let Some(d) = slot(grads, nodes, b) {
                for ((x, gi), ai) in d.iter_mut().zip(g).zip(&va) {
                    *x += gi * ai;
                }
            }
        }
        &Op::Scale { a, c } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
        }
        &Op::AddScalar { a } | &Op::Reshape { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
        &Op::LeakyRelu { a, alpha } => {
            let src = &nodes[a].value;
            if let Some(d) = slot(grads, nodes, a) {
                for ((x, gi), v) in d.iter_mut().zip(g).zip(src) {
                    *x += if *v > 0.0 { *gi } else { alpha * gi };
                }
            }
        }
        &Op::Tanh { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                for ((x, gi), y) in d.iter_mut().zip(g).zip(&node.value) {
                    *x += gi * (1.0 - y * y);
                }
            }
        }
        &Op::Sigmoid { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                for ((x, gi), y) in d.iter_mut().zip(g).zip(&node.value) {
                    *x += gi * y * (1.0 - y);
                }
            }
        }
        &Op::Log { a } => {
            let src = &nodes[a].value;
            if let Some(d) = slot(grads, nodes, a) {
                for ((x, gi), v) in d.iter_mut().zip(g).zip(src) {
                    *x += gi / v;
                }
            }
        }
        &Op::Clamp { a, lo, hi } => {
            let src = &nodes[a].value;
            if let Some(d) = slot(grads, nodes, a) {
                for ((x, gi), v) in d.iter_mut().zip(g).zip(src) {
                    if *v >= lo && *v <= hi {
                        *x += gi;
                    }
                }
            }
        }
        &Op::Mean { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|x| *x += s);
            }
        }
        &Op::Sum { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, inner) = outer_inner(&node.shape, *axis);
            let mut offset = 0;
            let row = node.shape[*axis] * inner;
            for &p in parts {
                let chunk = nodes[p].shape[*axis] * inner;
                if let Some(d) = slot(grads, nodes, p) {
                    for o in 0..outer {
                        let src = &g[o * row + offset..o * row + offset + chunk];
                        d[o * chunk..(o + 1) * chunk]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
                offset += chunk;
            }
        }
        &Op::Slice { a, axis, start } => {
            let src_shape = &nodes[a].shape;
            let (outer, inner) = outer_inner(src_shape, axis);
            let len = node.shape[axis];
            if let Some(d) = slot(grads, nodes, a) {
                for o in 0..outer {
                    let base = (o * src_shape[axis] + start) * inner;
                    d[base..base + len * inner]
                        .iter_mut()
                        .zip(&g[o * len * inner..(o + 1) * len * inner])
                        .for_each(|(x, y)| *x += y);
                }
            }
        }
        &Op::LogSoftmax { a, cols } => {
            if let Some(d) = slot(grads, nodes, a) {
                for ((drow, grow), yrow) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.chunks(cols)) {
                    let gsum: f64 = grow.iter().sum();
                    for ((x, gi), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *x += gi - y.exp() * gsum;
                    }
                }
            }
        }
    }
}
