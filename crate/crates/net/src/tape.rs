//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! Every op appends a node holding its output and what it needs for the
//! backward pass. `backward` walks the tape once in reverse.

use crate::error::{invalid, Result};
use crate::float::Float;
use crate::kernels::{self, ConvGeom, BN_EPS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Input,
    Param(usize),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Up2 { x: Var, w: Var, b: Option<Var> },
    MaxPool2 { x: Var, arg: Vec<u32> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<F>, inv: Vec<F>, batch_stats: bool },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, for the caller
/// to fold into its running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub count: usize,
}

#[derive(Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor<F>, needs_grad: bool) -> Var {
        self.push(value, Op::Input, needs_grad)
    }

    /// A trainable leaf; `slot` identifies it in [`Tape::param_grads`].
    pub fn param(&mut self, value: Tensor<F>, slot: usize) -> Var {
        self.push(value, Op::Param(slot), true)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let [_, c, h, wd] = self.value(x).shape();
        let [_, wc, kh, kw] = self.value(w).shape();
        if wc != c || kh != geom.k || kw != geom.k {
            return Err(invalid(format!("conv weight {:?} does not fit input {:?}", self.value(w).shape(), self.value(x).shape())));
        }
        if geom.out_len(h).is_none() || geom.out_len(wd).is_none() {
            return Err(invalid("input smaller than the dilated kernel"));
        }
        if let Some(b) = b {
            if self.value(b).len() != self.value(w).shape()[0] {
                return Err(invalid("conv bias length"));
            }
        }
        let out = kernels::conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv { x, w, b, geom }, ng))
    }

    pub fn up2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [_, c, _, _] = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws[0] != c || ws[2] != 2 || ws[3] != 2 {
            return Err(invalid(format!("up2 weight {ws:?} does not fit {c} channels")));
        }
        let out = kernels::up2_forward(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Up2 { x, w, b }, ng))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(x).shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid(format!("2×2 pooling needs even sizes, got {h}×{w}")));
        }
        let (out, arg) = kernels::maxpool2_forward(self.value(x));
        let ng = self.needs(x);
        Ok(self.push(out, Op::MaxPool2 { x, arg }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < F::ZERO {
                *v = F::ZERO;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Relu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = F::ONE / (F::ONE + (-*v).exp());
        }
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid { x }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(invalid("add of differently shaped tensors"));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| invalid("empty concat"))?).shape();
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(invalid("concat of mismatched tensors"));
            }
            channels += s[1];
        }
        let [n, _, h, w] = first;
        let mut out = Tensor::zeros([n, channels, h, w]);
        for i in 0..n {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).item(i);
                out.item_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, ng))
    }

    /// Batch normalization with batch statistics; returns them for the
    /// running averages.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<F>)> {
        self.check_bn(x, gamma, beta)?;
        let (mean, var) = kernels::channel_stats(self.value(x));
        let inv: Vec<F> = var.iter().map(|&v| F::ONE / (v + F::from_f64(BN_EPS)).sqrt()).collect();
        let [n, _, h, w] = self.value(x).shape();
        let (y, xhat) = kernels::bn_apply(self.value(x), &mean, &inv, self.value(gamma).data(), self.value(beta).data());
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(y, Op::BatchNorm { x, gamma, beta, xhat, inv, batch_stats: true }, ng);
        Ok((v, BatchStats { mean, var, count: n * h * w }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[F], var: &[F]) -> Result<Var> {
        self.check_bn(x, gamma, beta)?;
        if mean.len() != self.value(gamma).len() || var.len() != mean.len() {
            return Err(invalid("batchnorm running statistics length"));
        }
        let inv: Vec<F> = var.iter().map(|&v| F::ONE / (v + F::from_f64(BN_EPS)).sqrt()).collect();
        let (y, xhat) = kernels::bn_apply(self.value(x), mean, &inv, self.value(gamma).data(), self.value(beta).data());
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, xhat, inv, batch_stats: false }, ng))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let c = self.value(x).shape()[1];
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(invalid("batchnorm affine parameters do not match channels"));
        }
        Ok(())
    }

    /// Propagates `seed` (dL/d`root`) back through the tape.
    pub fn backward(&self, root: Var, seed: Tensor<F>) -> Result<Gradients<F>> {
        if seed.shape() != self.value(root).shape() {
            return Err(invalid("seed gradient shape differs from the root"));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, t: Tensor<F>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => e.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) = kernels::conv_backward(self.value(*x), self.value(*w), *geom, &g, self.needs(*x));
                    if let Some(dx) = dx {
                        acc(*x, dx);
                    }
                    acc(*w, dw);
                    if let Some(b) = b {
                        acc(*b, Tensor::from_vec(self.value(*b).shape(), db.into_vec())?);
                    }
                }
                Op::Up2 { x, w, b } => {
                    let (dx, dw, db) = kernels::up2_backward(self.value(*x), self.value(*w), &g, self.needs(*x));
                    if let Some(dx) = dx {
                        acc(*x, dx);
                    }
                    acc(*w, dw);
                    if let Some(b) = b {
                        acc(*b, Tensor::from_vec(self.value(*b).shape(), db.into_vec())?);
                    }
                }
                Op::MaxPool2 { x, arg } => acc(*x, kernels::maxpool2_backward(self.value(*x).shape(), arg, &g)),
                Op::Relu { x } => {
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= F::ZERO {
                            *dv = F::ZERO;
                        }
                    }
                    acc(*x, d);
                }
                Op::Sigmoid { x } => {
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv = *dv * y * (F::ONE - y);
                    }
                    acc(*x, d);
                }
                Op::Add { a, b } => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Concat { parts } => {
                    let n = g.shape()[0];
                    let mut off = 0;
                    for &p in parts {
                        let s = self.value(p).shape();
                        let len = s[1] * s[2] * s[3];
                        let mut d = Tensor::zeros(s);
                        for k in 0..n {
                            d.item_mut(k).copy_from_slice(&g.item(k)[off..off + len]);
                        }
                        off += len;
                        acc(p, d);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv, batch_stats } => {
                    let gv = self.value(*gamma);
                    let (dx, dg, db) = kernels::bn_backward(xhat, inv, gv.data(), &g, *batch_stats);
                    acc(*x, dx);
                    acc(*gamma, Tensor::from_vec(gv.shape(), dg)?);
                    acc(*beta, Tensor::from_vec(self.value(*beta).shape(), db)?);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulated gradients of every parameter leaf, keyed by slot.
    pub fn param_grads(&self, grads: &Gradients<F>) -> Vec<(usize, Tensor<F>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(slot) => Some((slot, grads.grads[i].clone().unwrap_or_else(|| Tensor::zeros(n.value.shape())))),
                _ => None,
            })
            .collect()
    }
}
