//! Recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is a topological
//! order and backward simply walks indices downwards.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Shape, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Constant,
    Param(ParamId),
    Conv { x: usize, w: usize, b: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    Upsample { x: usize },
    Relu { x: usize },
    SatLu { x: usize, p_max: T },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Abs { x: usize },
    Square { x: usize },
    Concat { a: usize, b: usize },
    Slice { x: usize, start: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, s: T },
    Sum { x: usize },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Tape<T: Scalar> {
    id: u32,
    nodes: Vec<Node<T>>,
    recording: bool,
    checked: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records every operation for [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
            checked: false,
        }
    }

    /// A tape that only keeps values; `backward` is unavailable.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    /// Reject NaN/Inf outputs at every kernel boundary.
    pub fn with_checks(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index as usize >= self.nodes.len() {
            return Err(Error::Backward(format!(
                "variable {v:?} is not recorded on tape {}",
                self.id
            )));
        }
        Ok(v.index as usize)
    }

    /// Value of `v`. Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.idx(v).expect("variable from a different tape");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let op = if self.recording {
            op
        } else {
            match op {
                Op::Param(id) => Op::Param(id),
                _ => Op::Constant,
            }
        };
        let index = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(Node { value, op });
        Ok(Var { tape: self.id, index })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(Node {
            value,
            op: Op::Constant,
        });
        Var { tape: self.id, index }
    }

    /// Records `value` as trainable parameter `id`. Every registered parameter gets
    /// a gradient entry from [`Tape::backward`], zero when unreachable from the loss.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        Var { tape: self.id, index }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let y = kernels::conv2d(&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value)?;
        self.push("conv2d", y, Op::Conv { x: xi, w: wi, b: bi })
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let (y, argmax) = kernels::maxpool2(&self.nodes[xi].value)?;
        self.push("maxpool2", y, Op::MaxPool { x: xi, argmax })
    }

    pub fn upsample_nn2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = kernels::upsample_nn2(&self.nodes[xi].value);
        self.push("upsample_nn2", y, Op::Upsample { x: xi })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = kernels::relu(&self.nodes[xi].value);
        self.push("relu", y, Op::Relu { x: xi })
    }

    pub fn satlu(&mut self, x: Var, p_max: T) -> Result<Var> {
        if !(p_max > T::zero()) {
            return Err(Error::invalid("satlu", format!("p_max must be positive, got {p_max}")));
        }
        let xi = self.idx(x)?;
        let y = kernels::satlu(&self.nodes[xi].value, p_max);
        self.push("satlu", y, Op::SatLu { x: xi, p_max })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = kernels::sigmoid(&self.nodes[xi].value);
        self.push("sigmoid", y, Op::Sigmoid { x: xi })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = kernels::tanh(&self.nodes[xi].value);
        self.push("tanh", y, Op::Tanh { x: xi })
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = self.nodes[xi].value.map(|v| v.abs());
        self.push("abs", y, Op::Abs { x: xi })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = self.nodes[xi].value.map(|v| v * v);
        self.push("square", y, Op::Square { x: xi })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let y = kernels::concat_channels(&self.nodes[ai].value, &self.nodes[bi].value)?;
        self.push("concat_channels", y, Op::Concat { a: ai, b: bi })
    }

    /// Concatenates several tensors along channels, left to right.
    pub fn concat_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::invalid("concat_channels", "nothing to concatenate"))?;
        rest.iter().try_fold(first, |acc, &p| self.concat_channels(acc, p))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = self.nodes[xi].value.channel_slice(start, len)?;
        self.push("slice_channels", y, Op::Slice { x: xi, start })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let y = kernels::add(&self.nodes[ai].value, &self.nodes[bi].value)?;
        self.push("add", y, Op::Add { a: ai, b: bi })
    }

    pub fn subtract(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let y = kernels::subtract(&self.nodes[ai].value, &self.nodes[bi].value)?;
        self.push("subtract", y, Op::Sub { a: ai, b: bi })
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let y = kernels::hadamard(&self.nodes[ai].value, &self.nodes[bi].value)?;
        self.push("hadamard", y, Op::Mul { a: ai, b: bi })
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = self.nodes[xi].value.map(|v| v * s);
        self.push("scale", y, Op::Scale { x: xi, s })
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = Tensor::scalar(self.nodes[xi].value.sum());
        self.push("sum", y, Op::Sum { x: xi })
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Reverse sweep from scalar `loss`. Returns a gradient for every parameter
    /// registered on this tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::Backward("tape was created in inference mode".into()));
        }
        let li = self.idx(loss)?;
        let ls = self.nodes[li].value.shape();
        if !ls.is_scalar() {
            return Err(Error::Backward(format!("loss must be a scalar, got shape {ls}")));
        }
        let mut grads: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                grads.entry(id).or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        let mut adj: Vec<Option<Tensor<T>>> = Vec::with_capacity(li + 1);
        adj.resize_with(li + 1, || None);
        adj[li] = Some(Tensor::ones(ls));

        fn acc<T: Scalar>(adj: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
            match &mut adj[i] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=li).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |j: usize| &self.nodes[j].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.get_mut(id).expect("registered").add_assign(&g),
                Op::Conv { x, w, b } => {
                    let cg = kernels::conv2d_backward(val(*x), val(*w), val(*b).shape(), &g)?;
                    acc(&mut adj, *x, cg.input);
                    acc(&mut adj, *w, cg.kernel);
                    acc(&mut adj, *b, cg.bias);
                }
                Op::MaxPool { x, argmax } => {
                    acc(&mut adj, *x, kernels::maxpool2_backward(val(*x).shape(), argmax, &g));
                }
                Op::Upsample { x } => acc(&mut adj, *x, kernels::upsample_nn2_backward(&g)),
                Op::Relu { x } => acc(&mut adj, *x, kernels::relu_backward(val(*x), &g)),
                Op::SatLu { x, p_max } => {
                    acc(&mut adj, *x, kernels::satlu_backward(val(*x), *p_max, &g))
                }
                Op::Sigmoid { x } => acc(&mut adj, *x, kernels::sigmoid_backward(&node.value, &g)),
                Op::Tanh { x } => acc(&mut adj, *x, kernels::tanh_backward(&node.value, &g)),
                Op::Abs { x } => acc(&mut adj, *x, kernels::abs_backward(val(*x), &g)),
                Op::Square { x } => {
                    let two = T::one() + T::one();
                    acc(&mut adj, *x, val(*x).zip_map(&g, |v, g| two * v * g)?);
                }
                Op::Concat { a, b } => {
                    let ca = val(*a).shape().c;
                    let cb = val(*b).shape().c;
                    acc(&mut adj, *a, g.channel_slice(0, ca)?);
                    acc(&mut adj, *b, g.channel_slice(ca, cb)?);
                }
                Op::Slice { x, start } => {
                    let xs = val(*x).shape();
                    let gs = g.shape();
                    let mut gx = Tensor::zeros(xs);
                    let plane = xs.plane();
                    for n in 0..xs.n {
                        let dst = (n * xs.c + start) * plane;
                        gx.data_mut()[dst..dst + gs.c * plane]
                            .copy_from_slice(&g.data()[n * gs.c * plane..(n + 1) * gs.c * plane]);
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Add { a, b } => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub { a, b } => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.map(|v| -v));
                }
                Op::Mul { a, b } => {
                    acc(&mut adj, *a, kernels::hadamard(&g, val(*b))?);
                    acc(&mut adj, *b, kernels::hadamard(&g, val(*a))?);
                }
                Op::Scale { x, s } => acc(&mut adj, *x, g.map(|v| v * *s)),
                Op::Sum { x } => {
                    let g0 = g.data()[0];
                    acc(&mut adj, *x, Tensor::full(val(*x).shape(), g0));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Parameter gradients from one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Gradients in `ParamId` order; ids `0..count` must all be present.
    pub fn into_dense(self, count: usize) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(count);
        let mut grads = self.grads;
        for i in 0..count {
            out.push(grads.remove(&ParamId(i)).ok_or_else(|| {
                Error::Backward(format!("parameter {i} was never registered on the tape"))
            })?);
        }
        Ok(out)
    }
}
