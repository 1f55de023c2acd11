// Forward definitions of every differentiable op. Backward rules live in tape.rs.

use super::kernels::{self, MatView};
use super::tape::{MatMulPlan, Op};
use super::{numel, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    fn unary(
        &mut self,
        x: Var,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T) -> T,
    ) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.push(out, op, name)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = kernels::broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
            Error::dim(
                name,
                format!("shapes {:?} and {:?} do not broadcast", av.shape(), bv.shape()),
            )
        })?;
        let mut data = vec![T::zero(); numel(&shape)];
        let (ad, bd) = (av.data(), bv.data());
        kernels::for_each_broadcast(&shape, av.shape(), bv.shape(), |o, ia, ib| {
            data[o] = f(ad[ia], bd[ib])
        });
        self.push(Tensor::from_parts(shape, data), op, name)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64_lossy(s);
        self.unary(x, "scale", Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64_lossy(s);
        self.unary(x, "add_scalar", Op::AddScalar(x), |v| v + s)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", Op::Gelu(x), kernels::gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "log", Op::Log(x), |v| v.ln())
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(x, "clamp", Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    /// `[.., m, k] × [.., k, n] → [.., m, n]`; leading batch dims broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(
                "matmul",
                format!("operands must be at least 2-D, got {sa:?} and {sb:?}"),
            ));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = match kernels::broadcast_shape(ba, bb) {
            Some(batch) if k == k2 => batch,
            _ => {
                return Err(Error::dim(
                    "matmul",
                    format!("cannot multiply {sa:?} by {sb:?}"),
                ))
            }
        };
        let nbatch = numel(&batch);
        let mut a_off = Vec::with_capacity(nbatch);
        let mut b_off = Vec::with_capacity(nbatch);
        kernels::for_each_broadcast(&batch, ba, bb, |_, ia, ib| {
            a_off.push(ia * m * k);
            b_off.push(ib * k * n);
        });
        let mut out = vec![T::zero(); nbatch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for (bi, (&ao, &bo)) in a_off.iter().zip(&b_off).enumerate() {
                kernels::gemm(
                    MatView::new(&ad[ao..ao + m * k], m, k),
                    MatView::new(&bd[bo..bo + k * n], k, n),
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    T::zero(),
                );
            }
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let plan = MatMulPlan {
            m,
            k,
            n,
            a_off,
            b_off,
        };
        self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b, plan), "matmul")
    }

    /// Affine map `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Cross-correlation `x: [B, C_in, H, W]`, `w: [C_out, C_in, kh, kw]`, `b: [C_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::dim(
                "conv2d",
                format!("input {xs:?} incompatible with kernel {ws:?}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), ws[0]),
                ));
            }
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let out_dim = |size: usize, k: usize| -> Result<usize> {
            let span = (size + 2 * padding)
                .checked_sub(k)
                .ok_or_else(|| Error::Config(format!("kernel {k} larger than padded input {size}")))?;
            if span % stride != 0 {
                return Err(Error::Config(format!(
                    "conv2d output size ({size} + 2·{padding} − {k})/{stride} + 1 is not an integer"
                )));
            }
            Ok(span / stride + 1)
        };
        let geom = kernels::ConvGeom {
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
            h_out: out_dim(xs[2], ws[2])?,
            w_out: out_dim(xs[3], ws[3])?,
        };
        let (batch, c_out) = (xs[0], ws[0]);
        let (kr, kc) = (geom.col_rows(), geom.col_cols());
        let in_sz = geom.c_in * geom.h * geom.w;
        let mut out = vec![T::zero(); batch * c_out * kc];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = b.map(|b| self.value(b).data());
            let mut cols = vec![T::zero(); kr * kc];
            for bi in 0..batch {
                kernels::im2col(&xd[bi * in_sz..(bi + 1) * in_sz], &geom, &mut cols);
                let dst = &mut out[bi * c_out * kc..(bi + 1) * c_out * kc];
                if let Some(bd) = bd {
                    for (c, row) in dst.chunks_mut(kc).enumerate() {
                        row.iter_mut().for_each(|v| *v = bd[c]);
                    }
                }
                kernels::gemm(
                    MatView::new(wd, c_out, kr),
                    MatView::new(&cols, kr, kc),
                    dst,
                    if bd.is_some() { T::one() } else { T::zero() },
                );
            }
        }
        let shape = vec![batch, c_out, geom.h_out, geom.w_out];
        self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad: padding,
            },
            "conv2d",
        )
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = match xv.shape().last() {
            Some(&n) if n >= 1 => n,
            _ => return Err(Error::dim("softmax", "empty last axis")),
        };
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::Softmax(x), "softmax")
    }

    /// Normalizes the last axis to zero mean and unit (population) variance,
    /// then applies `gamma` and `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.shape().last().copied().unwrap_or(0);
        if d == 0 {
            return Err(Error::dim("layernorm", "empty last axis"));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(
                "layernorm",
                format!(
                    "gamma {:?} / beta {:?} do not match last axis {d}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).expect("usize to scalar");
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * rstd * gd[j] + bd[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            "layernorm",
        )
    }

    /// Sum of all elements, rank-0 result.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).expect("usize");
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Sums the last axis away: `[.., n] → [..]`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        let Some((&n, rest)) = shape.split_last() else {
            return Err(Error::dim("sum_last", "rank-0 input"));
        };
        let data = v.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
        let out = Tensor::from_parts(rest.to_vec(), data);
        self.push(out, Op::SumLast(x), "sum_last")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
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
                    format!("{s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Rows `start..end` of `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start >= end || end > xs[axis] {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{end} on axis {axis} of {xs:?}"),
            ));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let src_len = xs[axis] * inner;
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&xd[o * src_len + start * inner..o * src_len + end * inner]);
        }
        let mut shape = xs;
        shape[axis] = end - start;
        self.push(
            Tensor::from_parts(shape, data),
            Op::Slice { x, axis, start },
            "slice",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", format!("{perm:?} is not a permutation of {xs:?}")));
        }
        let data = kernels::permute(self.value(x).data(), &xs, perm);
        let shape = perm.iter().map(|&p| xs[p]).collect();
        self.push(
            Tensor::from_parts(shape, data),
            Op::Permute(x, perm.to_vec()),
            "permute",
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose", "needs rank ≥ 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// Half-pixel bilinear resize of the two trailing axes.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || out_h == 0 || out_w == 0 {
            return Err(Error::dim(
                "bilinear_resize",
                format!("cannot resize {xs:?} to {out_h}×{out_w}"),
            ));
        }
        let r = xs.len();
        let (h, w) = (xs[r - 2], xs[r - 1]);
        let planes = numel(&xs) / (h * w);
        let data = kernels::resize_forward(self.value(x).data(), planes, (h, w), (out_h, out_w));
        let mut shape = xs;
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        self.push(Tensor::from_parts(shape, data), Op::Resize(x), "bilinear_resize")
    }

    /// `x / max(‖x‖₂, eps)` over the last axis.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let n = match xv.shape().last() {
            Some(&n) => n,
            None => return Err(Error::dim("l2_normalize", "rank-0 input")),
        };
        let eps = T::from_f64_lossy(eps);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::L2Normalize { x, eps }, "l2_normalize")
    }

    /// `[B, C, H, W] → [B, C]`.
    pub fn global_average_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim("global_average_pool", format!("expected rank 4, got {xs:?}")));
        }
        let hw = xs[2] * xs[3];
        let inv = T::one() / T::from_usize(hw).expect("usize");
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(
            Tensor::from_parts(vec![xs[0], xs[1]], data),
            Op::GlobalAvgPool(x),
            "global_average_pool",
        )
    }
}
