use std::cell::RefCell;
use std::rc::Rc;
use std::str::FromStr;

use super::kernels::{self, ConvDims};
use super::tensor::{strides, Tensor};
use crate::error::{Error, ErrorKind, Result};

/// Lower clamp applied to `log` arguments and divisors.
pub const CLAMP_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Exp,
    Log,
    Relu,
}

impl FromStr for BinaryOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(BinaryOp::Add),
            "sub" => Ok(BinaryOp::Sub),
            "mul" => Ok(BinaryOp::Mul),
            "div" => Ok(BinaryOp::Div),
            other => Err(Error::new(
                ErrorKind::Unsupported,
                format!("binary op `{other}`"),
            )),
        }
    }
}

impl FromStr for UnaryOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(UnaryOp::Exp),
            "log" => Ok(UnaryOp::Log),
            "relu" => Ok(UnaryOp::Relu),
            other => Err(Error::new(
                ErrorKind::Unsupported,
                format!("unary op `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Right-hand operand of a binary elementwise op.
#[derive(Clone, Copy)]
pub enum Operand<'t> {
    Var(Var<'t>),
    Scalar(f64),
}

impl<'t> From<Var<'t>> for Operand<'t> {
    fn from(v: Var<'t>) -> Self {
        Operand::Var(v)
    }
}

impl From<f64> for Operand<'_> {
    fn from(s: f64) -> Self {
        Operand::Scalar(s)
    }
}

enum Op {
    Leaf,
    Binary {
        op: BinaryOp,
        a: usize,
        b: usize,
    },
    Scalar {
        op: BinaryOp,
        a: usize,
        s: f64,
    },
    Unary {
        op: UnaryOp,
        a: usize,
    },
    Conv {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    Pool {
        a: usize,
        planes: usize,
        h: usize,
        w: usize,
    },
    Upsample {
        a: usize,
        planes: usize,
        h: usize,
        w: usize,
    },
    Softmax {
        a: usize,
        n: usize,
        c: usize,
        hw: usize,
    },
    Reduce {
        a: usize,
        kind: Reduction,
        in_shape: Vec<usize>,
        axes: Vec<usize>,
    },
    Gather {
        a: usize,
        indices: Vec<usize>,
        row: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of differentiable operations.
///
/// Every operation appends a node. [`Tape::backward`] walks the nodes in
/// reverse and then clears the record; handles created before the call are
/// invalid afterwards.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Vec<f64>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data: Rc::new(data),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records `t` as a leaf; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&self, t: Tensor) -> Var<'_> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    fn parts(&self, id: usize) -> (Vec<usize>, Rc<Vec<f64>>, bool) {
        let nodes = self.nodes.borrow();
        let n = &nodes[id];
        (n.shape.clone(), Rc::clone(&n.data), n.requires_grad)
    }

    pub fn binary<'t>(
        &'t self,
        op: BinaryOp,
        a: Var<'t>,
        b: impl Into<Operand<'t>>,
    ) -> Result<Var<'t>> {
        let (shape, ad, ag) = self.parts(a.id);
        match b.into() {
            Operand::Scalar(s) => {
                let data: Vec<f64> = match op {
                    BinaryOp::Add => ad.iter().map(|x| x + s).collect(),
                    BinaryOp::Sub => ad.iter().map(|x| x - s).collect(),
                    BinaryOp::Mul => ad.iter().map(|x| x * s).collect(),
                    BinaryOp::Div => {
                        let s = s.max(CLAMP_EPS);
                        ad.iter().map(|x| x / s).collect()
                    }
                };
                Ok(self.push(shape, data, Op::Scalar { op, a: a.id, s }, ag))
            }
            Operand::Var(b) => {
                let (bshape, bd, bg) = self.parts(b.id);
                if bshape.iter().product::<usize>() == 1 && shape != bshape {
                    // A one-element tensor acts as a scalar operand.
                    return self.binary_scalar_var(op, a, b);
                }
                if shape != bshape {
                    return Err(Error::shape(format!(
                        "elementwise {op:?}: {shape:?} vs {bshape:?}"
                    )));
                }
                let data: Vec<f64> = match op {
                    BinaryOp::Add => ad.iter().zip(bd.iter()).map(|(x, y)| x + y).collect(),
                    BinaryOp::Sub => ad.iter().zip(bd.iter()).map(|(x, y)| x - y).collect(),
                    BinaryOp::Mul => ad.iter().zip(bd.iter()).map(|(x, y)| x * y).collect(),
                    BinaryOp::Div => ad
                        .iter()
                        .zip(bd.iter())
                        .map(|(x, y)| x / y.max(CLAMP_EPS))
                        .collect(),
                };
                Ok(self.push(
                    shape,
                    data,
                    Op::Binary {
                        op,
                        a: a.id,
                        b: b.id,
                    },
                    ag || bg,
                ))
            }
        }
    }

    fn binary_scalar_var<'t>(&'t self, op: BinaryOp, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        // Broadcast b by materializing it at a's shape through a reduce adjoint:
        // expanding is the adjoint of sum, so record it as a gather of row 0.
        let (shape, _, _) = self.parts(a.id);
        let n: usize = shape.iter().product();
        let flat = self.reshape_scalar(b)?;
        let expanded = self.gather(flat, &vec![0; n])?;
        let expanded = self.view(expanded, &shape);
        self.binary(op, a, expanded)
    }

    fn reshape_scalar<'t>(&'t self, b: Var<'t>) -> Result<Var<'t>> {
        Ok(self.view(b, &[1]))
    }

    /// Same buffer under a new shape; recorded as a sum over no axes so the
    /// gradient passes through unchanged.
    fn view<'t>(&'t self, a: Var<'t>, shape: &[usize]) -> Var<'t> {
        let (in_shape, data, g) = self.parts(a.id);
        let op = Op::Reduce {
            a: a.id,
            kind: Reduction::Sum,
            in_shape,
            axes: Vec::new(),
        };
        self.push(shape.to_vec(), (*data).clone(), op, g)
    }

    pub fn unary<'t>(&'t self, op: UnaryOp, a: Var<'t>) -> Var<'t> {
        let (shape, ad, ag) = self.parts(a.id);
        let data: Vec<f64> = match op {
            UnaryOp::Exp => ad.iter().map(|x| x.exp()).collect(),
            UnaryOp::Log => ad.iter().map(|x| x.max(CLAMP_EPS).ln()).collect(),
            UnaryOp::Relu => ad.iter().map(|x| x.max(0.0)).collect(),
        };
        self.push(shape, data, Op::Unary { op, a: a.id }, ag)
    }

    /// Same-padded, stride-1 cross-correlation.
    pub fn conv2d<'t>(&'t self, input: Var<'t>, kernel: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (is, id, ig) = self.parts(input.id);
        let (ks, kd, kg) = self.parts(kernel.id);
        let (bs, bd, bg) = self.parts(bias.id);
        if is.len() != 4 || ks.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects 4-d input and kernel, got {is:?} and {ks:?}"
            )));
        }
        if ks[2] != ks[3] {
            return Err(Error::shape(format!(
                "conv2d kernel must be square, got {ks:?}"
            )));
        }
        if ks[2] % 2 == 0 {
            return Err(Error::new(
                ErrorKind::KernelSize,
                format!("kernel size {} is even", ks[2]),
            ));
        }
        if ks[1] != is[1] {
            return Err(Error::shape(format!(
                "kernel expects {} input channels, input has {}",
                ks[1], is[1]
            )));
        }
        if bs.iter().product::<usize>() != ks[0] {
            return Err(Error::shape(format!(
                "bias has {bs:?}, need {} entries",
                ks[0]
            )));
        }
        let dims = ConvDims {
            n: is[0],
            cin: is[1],
            cout: ks[0],
            h: is[2],
            w: is[3],
            k: ks[2],
        };
        let out = kernels::conv2d_forward(&id, &kd, &bd, &dims);
        let op = Op::Conv {
            input: input.id,
            kernel: kernel.id,
            bias: bias.id,
            dims,
        };
        Ok(self.push(vec![is[0], ks[0], is[2], is[3]], out, op, ig || kg || bg))
    }

    /// 2×2 average pooling over the last two axes.
    pub fn pool2<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let (s, d, g) = self.parts(a.id);
        if s.len() < 2 {
            return Err(Error::shape("pooling needs at least two axes"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("cannot halve spatial dims {h}x{w}")));
        }
        let planes = d.len() / (h * w);
        let mut out_shape = s.clone();
        let r = out_shape.len();
        out_shape[r - 2] = h / 2;
        out_shape[r - 1] = w / 2;
        let out = kernels::avg_pool2(&d, planes, h, w);
        Ok(self.push(
            out_shape,
            out,
            Op::Pool {
                a: a.id,
                planes,
                h,
                w,
            },
            g,
        ))
    }

    /// Nearest-neighbour 2× upsampling over the last two axes.
    pub fn upsample2<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let (s, d, g) = self.parts(a.id);
        if s.len() < 2 {
            return Err(Error::shape("upsampling needs at least two axes"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = d.len() / (h * w);
        let mut out_shape = s.clone();
        let r = out_shape.len();
        out_shape[r - 2] = h * 2;
        out_shape[r - 1] = w * 2;
        let out = kernels::upsample2(&d, planes, h, w);
        Ok(self.push(
            out_shape,
            out,
            Op::Upsample {
                a: a.id,
                planes,
                h,
                w,
            },
            g,
        ))
    }

    /// Softmax across axis 1 of an `[N, C, H, W]` tensor.
    pub fn softmax_channels<'t>(&'t self, logits: Var<'t>) -> Result<Var<'t>> {
        let (s, d, g) = self.parts(logits.id);
        if s.len() != 4 {
            return Err(Error::shape(format!(
                "softmax_channels expects [N,C,H,W], got {s:?}"
            )));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let out = kernels::softmax_channels(&d, n, c, hw);
        Ok(self.push(
            s,
            out,
            Op::Softmax {
                a: logits.id,
                n,
                c,
                hw,
            },
            g,
        ))
    }

    /// Sum or mean over `axes`; reduced axes are dropped from the shape.
    pub fn reduce<'t>(&'t self, a: Var<'t>, kind: Reduction, axes: &[usize]) -> Result<Var<'t>> {
        let (s, d, g) = self.parts(a.id);
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= s.len()) {
            return Err(Error::new(
                ErrorKind::Axis,
                format!("axis {bad} out of range for {s:?}"),
            ));
        }
        let out_shape: Vec<usize> = s
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &v)| v)
            .collect();
        let map = ReduceMap::new(&s, &axes);
        let mut out = vec![0.0; map.out_len];
        map.for_each(|src, dst| out[dst] += d[src]);
        if kind == Reduction::Mean {
            let scale = 1.0 / map.group as f64;
            out.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(self.push(
            out_shape,
            out,
            Op::Reduce {
                a: a.id,
                kind,
                in_shape: s,
                axes,
            },
            g,
        ))
    }

    pub fn sum<'t>(&'t self, a: Var<'t>) -> Var<'t> {
        let rank = self.parts(a.id).0.len();
        self.reduce(a, Reduction::Sum, &(0..rank).collect::<Vec<_>>())
            .expect("all axes valid")
    }

    pub fn mean<'t>(&'t self, a: Var<'t>) -> Var<'t> {
        let rank = self.parts(a.id).0.len();
        self.reduce(a, Reduction::Mean, &(0..rank).collect::<Vec<_>>())
            .expect("all axes valid")
    }

    /// Selects rows of axis 0 (repeats allowed).
    pub fn gather<'t>(&'t self, a: Var<'t>, indices: &[usize]) -> Result<Var<'t>> {
        let (s, d, g) = self.parts(a.id);
        if s.is_empty() || indices.is_empty() {
            return Err(Error::shape(
                "gather needs a non-scalar input and at least one index",
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::shape(format!("row {bad} out of range for {s:?}")));
        }
        let row = d.len() / s[0];
        let mut out = Vec::with_capacity(row * indices.len());
        for &i in indices {
            out.extend_from_slice(&d[i * row..(i + 1) * row]);
        }
        let mut out_shape = s.clone();
        out_shape[0] = indices.len();
        Ok(self.push(
            out_shape,
            out,
            Op::Gather {
                a: a.id,
                indices: indices.to_vec(),
                row,
            },
            g,
        ))
    }

    /// Copies the value into a fresh leaf that backward never enters.
    pub fn stop_gradient<'t>(&'t self, a: Var<'t>) -> Var<'t> {
        let (s, d, _) = self.parts(a.id);
        self.push(s, (*d).clone(), Op::Leaf, false)
    }

    /// Reverse pass from a single-element `loss`. Every grad-requiring leaf
    /// gets an entry (zeros when unreachable). The tape is cleared afterwards.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.data.len() != 1 {
            return Err(Error::new(
                ErrorKind::NonScalar,
                format!("backward from a tensor of shape {:?}", root.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
        }
        for (id, node) in nodes.iter().enumerate() {
            let leaf = matches!(node.op, Op::Leaf) && node.requires_grad;
            if leaf {
                if grads[id].is_none() {
                    grads[id] = Some(vec![0.0; node.data.len()]);
                }
            } else {
                grads[id] = None;
            }
        }
        drop(nodes);
        self.clear();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let live = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Binary { op, a, b } => {
            let (ad, bd) = (&nodes[*a].data, &nodes[*b].data);
            if live(*a) {
                let ga: Vec<f64> = match op {
                    BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                    BinaryOp::Mul => g.iter().zip(bd.iter()).map(|(g, y)| g * y).collect(),
                    BinaryOp::Div => g
                        .iter()
                        .zip(bd.iter())
                        .map(|(g, y)| g / y.max(CLAMP_EPS))
                        .collect(),
                };
                accumulate(grads, *a, ga);
            }
            if live(*b) {
                let gb: Vec<f64> = match op {
                    BinaryOp::Add => g.to_vec(),
                    BinaryOp::Sub => g.iter().map(|g| -g).collect(),
                    BinaryOp::Mul => g.iter().zip(ad.iter()).map(|(g, x)| g * x).collect(),
                    BinaryOp::Div => g
                        .iter()
                        .zip(ad.iter().zip(bd.iter()))
                        .map(|(g, (x, y))| {
                            if *y > CLAMP_EPS {
                                -g * x / (y * y)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                };
                accumulate(grads, *b, gb);
            }
        }
        Op::Scalar { op, a, s } => {
            let ga: Vec<f64> = match op {
                BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                BinaryOp::Mul => g.iter().map(|g| g * s).collect(),
                BinaryOp::Div => {
                    let s = s.max(CLAMP_EPS);
                    g.iter().map(|g| g / s).collect()
                }
            };
            accumulate(grads, *a, ga);
        }
        Op::Unary { op, a } => {
            let ad = &nodes[*a].data;
            let ga: Vec<f64> = match op {
                UnaryOp::Exp => g.iter().zip(node.data.iter()).map(|(g, y)| g * y).collect(),
                UnaryOp::Log => g
                    .iter()
                    .zip(ad.iter())
                    .map(|(g, x)| if *x > CLAMP_EPS { g / x } else { 0.0 })
                    .collect(),
                UnaryOp::Relu => g
                    .iter()
                    .zip(ad.iter())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            };
            accumulate(grads, *a, ga);
        }
        Op::Conv {
            input,
            kernel,
            bias,
            dims,
        } => {
            let need_params = live(*kernel) || live(*bias);
            let (gi, gk, gb) = kernels::conv2d_backward(
                &nodes[*input].data,
                &nodes[*kernel].data,
                g,
                dims,
                live(*input),
                need_params,
            );
            if let Some(gi) = gi {
                accumulate(grads, *input, gi);
            }
            if live(*kernel) {
                accumulate(grads, *kernel, gk);
            }
            if live(*bias) {
                accumulate(grads, *bias, gb);
            }
        }
        Op::Pool { a, planes, h, w } => {
            accumulate(grads, *a, kernels::avg_pool2_backward(g, *planes, *h, *w));
        }
        Op::Upsample { a, planes, h, w } => {
            accumulate(grads, *a, kernels::upsample2_backward(g, *planes, *h, *w));
        }
        Op::Softmax { a, n, c, hw } => {
            accumulate(
                grads,
                *a,
                kernels::softmax_channels_backward(&node.data, g, *n, *c, *hw),
            );
        }
        Op::Reduce {
            a,
            kind,
            in_shape,
            axes,
        } => {
            let map = ReduceMap::new(in_shape, axes);
            let scale = match kind {
                Reduction::Sum => 1.0,
                Reduction::Mean => 1.0 / map.group as f64,
            };
            let mut ga = vec![0.0; nodes[*a].data.len()];
            map.for_each(|src, dst| ga[src] = g[dst] * scale);
            accumulate(grads, *a, ga);
        }
        Op::Gather { a, indices, row } => {
            let mut ga = vec![0.0; nodes[*a].data.len()];
            for (k, &i) in indices.iter().enumerate() {
                ga[i * row..(i + 1) * row]
                    .iter_mut()
                    .zip(&g[k * row..(k + 1) * row])
                    .for_each(|(d, s)| *d += s);
            }
            accumulate(grads, *a, ga);
        }
    }
}

/// Maps each flat input index to its output slot for a reduction.
struct ReduceMap {
    in_shape: Vec<usize>,
    out_strides: Vec<usize>,
    out_len: usize,
    group: usize,
}

impl ReduceMap {
    fn new(in_shape: &[usize], axes: &[usize]) -> Self {
        let kept: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &v)| v)
            .collect();
        let kept_strides = strides(&kept);
        let mut out_strides = vec![0; in_shape.len()];
        let mut k = 0;
        for (i, s) in out_strides.iter_mut().enumerate() {
            if !axes.contains(&i) {
                *s = kept_strides[k];
                k += 1;
            }
        }
        let out_len: usize = kept.iter().product();
        let total: usize = in_shape.iter().product();
        ReduceMap {
            in_shape: in_shape.to_vec(),
            out_strides,
            out_len,
            group: total / out_len,
        }
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let total: usize = self.in_shape.iter().product();
        let rank = self.in_shape.len();
        let mut idx = vec![0usize; rank];
        let mut dst = 0usize;
        for src in 0..total {
            f(src, dst);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                dst += self.out_strides[ax];
                if idx[ax] < self.in_shape[ax] {
                    break;
                }
                dst -= self.out_strides[ax] * self.in_shape[ax];
                idx[ax] = 0;
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn data(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].data)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, (*n.data).clone()).expect("tape nodes are well-formed")
    }

    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        nodes[self.id].data[0]
    }

    pub fn add(self, b: impl Into<Operand<'t>>) -> Result<Var<'t>> {
        self.tape.binary(BinaryOp::Add, self, b)
    }

    pub fn sub(self, b: impl Into<Operand<'t>>) -> Result<Var<'t>> {
        self.tape.binary(BinaryOp::Sub, self, b)
    }

    pub fn mul(self, b: impl Into<Operand<'t>>) -> Result<Var<'t>> {
        self.tape.binary(BinaryOp::Mul, self, b)
    }

    pub fn div(self, b: impl Into<Operand<'t>>) -> Result<Var<'t>> {
        self.tape.binary(BinaryOp::Div, self, b)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape
            .binary(BinaryOp::Mul, self, s)
            .expect("scalar operand")
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Exp, self)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Log, self)
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Relu, self)
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.sum(self)
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.mean(self)
    }

    pub fn sum_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        self.tape.reduce(self, Reduction::Sum, axes)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        self.tape.reduce(self, Reduction::Mean, axes)
    }

    pub fn detach(self) -> Var<'t> {
        self.tape.stop_gradient(self)
    }
}
