use super::kernels::{self, MatView};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-pass corruptions used to prove that gradient checks
/// catch real bugs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// `d a = g · b` with `b` reinterpreted instead of transposed.
    MatmulDropTranspose,
}

/// Per-batch operand offsets of a (possibly broadcast) batched matmul.
#[derive(Clone, Debug)]
pub(crate) struct MatMulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_off: Vec<usize>,
    pub b_off: Vec<usize>,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var, MatMulPlan),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, T, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Resize(Var),
    L2Normalize {
        x: Var,
        eps: T,
    },
    GlobalAvgPool(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b, _) => vec![*a, *b],
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Concat { inputs, .. } => inputs.clone(),
            Scale(x, _)
            | AddScalar(x)
            | Relu(x)
            | Gelu(x)
            | Sigmoid(x)
            | Log(x)
            | Clamp(x, _, _)
            | Softmax(x)
            | Sum(x)
            | Mean(x)
            | SumLast(x)
            | Slice { x, .. }
            | Reshape(x)
            | Permute(x, _)
            | Resize(x)
            | L2Normalize { x, .. }
            | GlobalAvgPool(x) => vec![*x],
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub name: &'static str,
}

/// Ordered record of executed operations.
///
/// Gradients accumulate across calls to [`Tape::backward`] until
/// [`Tape::zero_grad`] is called.
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    check_finite: bool,
    fault: Option<GradFault>,
    last_order: Vec<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: false,
            fault: None,
            last_order: Vec::new(),
        }
    }

    /// Fails any op whose output contains NaN or Inf. Off by default.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn set_fault(&mut self, fault: Option<GradFault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name: "leaf",
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].name
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shape(v).to_vec(), g.clone()))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Node indices visited by the most recent backward pass, in visit order.
    pub fn last_backward_order(&self) -> &[usize] {
        &self.last_order
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite {
                op: name,
                node: self.nodes.len(),
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode accumulation from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.last_order.clear();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        {
            let g = self.grads[loss.0].get_or_insert_with(|| vec![T::zero()]);
            g[0] = g[0] + T::one();
        }
        // Only the seed's contribution flows this pass; existing grads on
        // intermediate nodes would otherwise be propagated twice.
        let mut pending: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.last_order.push(i);
            let (lo, _) = pending.split_at_mut(i);
            backward_node(&self.nodes, i, &g, lo, self.fault);
            if i != loss.0 {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, created on first use; `None` when `v` needs no grad.
fn slot<'a, T: Scalar>(
    lo: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(lo[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn backward_node<T: Scalar>(
    nodes: &[Node<T>],
    i: usize,
    g: &[T],
    lo: &mut [Option<Vec<T>>],
    fault: Option<GradFault>,
) {
    let node = &nodes[i];
    let out_shape = node.value.shape();
    let val = |v: Var| nodes[v.0].value.data();
    let shp = |v: Var| nodes[v.0].value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) {
                -T::one()
            } else {
                T::one()
            };
            if let Some(ga) = slot(lo, nodes, *a) {
                kernels::for_each_broadcast(out_shape, shp(*a), shp(*b), |o, ia, _| {
                    ga[ia] = ga[ia] + g[o]
                });
            }
            if let Some(gb) = slot(lo, nodes, *b) {
                kernels::for_each_broadcast(out_shape, shp(*a), shp(*b), |o, _, ib| {
                    gb[ib] = gb[ib] + sign * g[o]
                });
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(ga) = slot(lo, nodes, *a) {
                kernels::for_each_broadcast(out_shape, shp(*a), shp(*b), |o, ia, ib| {
                    ga[ia] = ga[ia] + g[o] * bv[ib]
                });
            }
            if let Some(gb) = slot(lo, nodes, *b) {
                kernels::for_each_broadcast(out_shape, shp(*a), shp(*b), |o, ia, ib| {
                    gb[ib] = gb[ib] + g[o] * av[ia]
                });
            }
        }
        Op::Scale(x, s) => {
            if let Some(gx) = slot(lo, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + *s * gi);
            }
        }
        Op::AddScalar(x) | Op::Reshape(x) => {
            if let Some(gx) = slot(lo, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi);
            }
        }
        Op::MatMul(a, b, plan) => {
            let (m, k, n) = (plan.m, plan.k, plan.n);
            let (av, bv) = (val(*a), val(*b));
            if let Some(ga) = slot(lo, nodes, *a) {
                for (bi, (&ao, &bo)) in plan.a_off.iter().zip(&plan.b_off).enumerate() {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let bmat = &bv[bo..bo + k * n];
                    let rhs = match fault {
                        Some(GradFault::MatmulDropTranspose) => MatView::new(bmat, n, k),
                        None => MatView::t(bmat, k, n),
                    };
                    kernels::gemm(
                        MatView::new(gb, m, n),
                        rhs,
                        &mut ga[ao..ao + m * k],
                        T::one(),
                    );
                }
            }
            if let Some(gbuf) = slot(lo, nodes, *b) {
                for (bi, (&ao, &bo)) in plan.a_off.iter().zip(&plan.b_off).enumerate() {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    kernels::gemm(
                        MatView::t(&av[ao..ao + m * k], m, k),
                        MatView::new(gb, m, n),
                        &mut gbuf[bo..bo + k * n],
                        T::one(),
                    );
                }
            }
        }
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let xs = shp(*x);
            let ws = shp(*w);
            let geom = kernels::ConvGeom {
                c_in: xs[1],
                h: xs[2],
                w: xs[3],
                kh: ws[2],
                kw: ws[3],
                stride: *stride,
                pad: *pad,
                h_out: out_shape[2],
                w_out: out_shape[3],
            };
            let (batch, c_out) = (xs[0], ws[0]);
            let (kr, kc) = (geom.col_rows(), geom.col_cols());
            let in_sz = geom.c_in * geom.h * geom.w;
            let out_sz = c_out * kc;
            let (xv, wv) = (val(*x), val(*w));
            if let Some(bias) = b {
                if let Some(gb) = slot(lo, nodes, *bias) {
                    for bi in 0..batch {
                        for c in 0..c_out {
                            let s: T = g[bi * out_sz + c * kc..bi * out_sz + (c + 1) * kc]
                                .iter()
                                .copied()
                                .sum();
                            gb[c] = gb[c] + s;
                        }
                    }
                }
            }
            let need_w = nodes[w.0].requires_grad;
            let need_x = nodes[x.0].requires_grad;
            let mut cols = vec![T::zero(); kr * kc];
            if need_w {
                let gw = slot(lo, nodes, *w).expect("weight grad slot");
                for bi in 0..batch {
                    kernels::im2col(&xv[bi * in_sz..(bi + 1) * in_sz], &geom, &mut cols);
                    kernels::gemm(
                        MatView::new(&g[bi * out_sz..(bi + 1) * out_sz], c_out, kc),
                        MatView::t(&cols, kr, kc),
                        gw,
                        T::one(),
                    );
                }
            }
            if need_x {
                let gx = slot(lo, nodes, *x).expect("input grad slot");
                for bi in 0..batch {
                    kernels::gemm(
                        MatView::t(wv, c_out, kr),
                        MatView::new(&g[bi * out_sz..(bi + 1) * out_sz], c_out, kc),
                        &mut cols,
                        T::zero(),
                    );
                    kernels::col2im_add(&cols, &geom, &mut gx[bi * in_sz..(bi + 1) * in_sz]);
                }
            }
        }
        Op::Relu(x) => {
            let xv = val(*x);
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    if xi > T::zero() {
                        *d = *d + gi;
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xv = val(*x);
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *d = *d + gi * kernels::gelu_grad(xi);
                }
            }
        }
        Op::Sigmoid(x) => {
            let yv = node.value.data();
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(yv) {
                    *d = *d + gi * y * (T::one() - y);
                }
            }
        }
        Op::Log(x) => {
            let xv = val(*x);
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *d = *d + gi / xi;
                }
            }
        }
        Op::Clamp(x, lo_v, hi_v) => {
            let xv = val(*x);
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    if xi >= *lo_v && xi <= *hi_v {
                        *d = *d + gi;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let yv = node.value.data();
            let n = *out_shape.last().expect("softmax rank");
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((gr, yr), dr) in g.chunks(n).zip(yv.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gi), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = *d + y * (gi - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            eps,
        } => {
            let d = *out_shape.last().expect("layernorm rank");
            let xv = val(*x);
            let gam = val(*gamma);
            let dn = T::from_usize(d).expect("usize to scalar");
            let rows = xv.len() / d;
            let mut xhat = vec![T::zero(); xv.len()];
            let mut rstd = vec![T::zero(); rows];
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                rstd[r] = T::one() / (var + *eps).sqrt();
                for j in 0..d {
                    xhat[r * d + j] = (row[j] - mean) * rstd[r];
                }
            }
            if let Some(gg) = slot(lo, nodes, *gamma) {
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] = gg[j] + g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(gb) = slot(lo, nodes, *beta) {
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] = gb[j] + g[r * d + j];
                    }
                }
            }
            if let Some(gx) = slot(lo, nodes, *x) {
                let mut dxhat = vec![T::zero(); d];
                for r in 0..rows {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        dxhat[j] = g[r * d + j] * gam[j];
                        m1 = m1 + dxhat[j];
                        m2 = m2 + dxhat[j] * xhat[r * d + j];
                    }
                    m1 = m1 / dn;
                    m2 = m2 / dn;
                    for j in 0..d {
                        let v = rstd[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                        gx[r * d + j] = gx[r * d + j] + v;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = slot(lo, nodes, *x) {
                gx.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(gx) = slot(lo, nodes, *x) {
                let s = g[0] / T::from_usize(gx.len()).expect("usize to scalar");
                gx.iter_mut().for_each(|d| *d = *d + s);
            }
        }
        Op::SumLast(x) => {
            let n = *shp(*x).last().expect("sum_last rank");
            if let Some(gx) = slot(lo, nodes, *x) {
                for (r, row) in gx.chunks_mut(n).enumerate() {
                    row.iter_mut().for_each(|d| *d = *d + g[r]);
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let total = out_shape[*axis] * inner;
            let mut cum = 0;
            for v in inputs {
                let len = shp(*v)[*axis] * inner;
                if let Some(gv) = slot(lo, nodes, *v) {
                    for o in 0..outer {
                        let src = &g[o * total + cum..o * total + cum + len];
                        for (d, &s) in gv[o * len..(o + 1) * len].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                cum += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let xs = shp(*x);
            let outer: usize = xs[..*axis].iter().product();
            let inner: usize = xs[axis + 1..].iter().product();
            let src_len = xs[*axis] * inner;
            let len = out_shape[*axis] * inner;
            if let Some(gx) = slot(lo, nodes, *x) {
                for o in 0..outer {
                    let dst = &mut gx[o * src_len + start * inner..o * src_len + start * inner + len];
                    for (d, &s) in dst.iter_mut().zip(&g[o * len..(o + 1) * len]) {
                        *d = *d + s;
                    }
                }
            }
        }
        Op::Permute(x, perm) => {
            if let Some(gx) = slot(lo, nodes, *x) {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = kernels::permute(g, out_shape, &inv);
                gx.iter_mut().zip(back).for_each(|(d, s)| *d = *d + s);
            }
        }
        Op::Resize(x) => {
            let xs = shp(*x);
            let r = xs.len();
            let (h, w) = (xs[r - 2], xs[r - 1]);
            let (oh, ow) = (out_shape[r - 2], out_shape[r - 1]);
            let planes = node.value.len() / (oh * ow);
            if let Some(gx) = slot(lo, nodes, *x) {
                kernels::resize_backward(g, planes, (h, w), (oh, ow), gx);
            }
        }
        Op::L2Normalize { x, eps } => {
            let n = *out_shape.last().expect("l2_normalize rank");
            let xv = val(*x);
            let yv = node.value.data();
            if let Some(gx) = slot(lo, nodes, *x) {
                for r in 0..xv.len() / n {
                    let xr = &xv[r * n..(r + 1) * n];
                    let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let gr = &g[r * n..(r + 1) * n];
                    let dr = &mut gx[r * n..(r + 1) * n];
                    if norm > *eps {
                        let yr = &yv[r * n..(r + 1) * n];
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            dr[j] = dr[j] + (gr[j] - yr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..n {
                            dr[j] = dr[j] + gr[j] / *eps;
                        }
                    }
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            let xs = shp(*x);
            let hw = xs[2] * xs[3];
            let inv = T::one() / T::from_usize(hw).expect("usize to scalar");
            if let Some(gx) = slot(lo, nodes, *x) {
                for (p, plane) in gx.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|d| *d = *d + g[p] * inv);
                }
            }
        }
    }
}
