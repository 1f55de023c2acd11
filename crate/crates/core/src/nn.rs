//! Parameter storage and the small layer types the model is assembled from.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let (idx, prev) = self.tensors.insert_full(name.into(), value);
        assert!(prev.is_none(), "duplicate parameter name");
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.tensors.get_index(id.0).map(|(k, _)| k.as_str()).expect("param id in range")
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.tensors.get_index_of(name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Replaces a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor name `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }
}

/// A forward pass in progress: the tape plus the parameters placed on it.
pub struct Ctx<'m, T: Scalar> {
    pub tape: Tape<T>,
    store: &'m ParamStore<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'m, T: Scalar> Ctx<'m, T> {
    /// `trainable` marks parameters as requiring gradients.
    pub fn new(store: &'m ParamStore<T>, trainable: bool) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    /// Continues on an existing tape whose `vars` already hold every
    /// parameter, in store order (used by finite-difference checks).
    pub fn with_vars(tape: Tape<T>, store: &'m ParamStore<T>, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), store.len(), "one var per parameter");
        Ctx {
            tape,
            store,
            vars: vars.iter().copied().map(Some).collect(),
            trainable: true,
        }
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// The tape handle of a parameter, placing it on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.trainable);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Gradient of every parameter after backward; unused parameters get zeros.
    pub fn param_grads(&self) -> Vec<Vec<T>> {
        self.store
            .ids()
            .map(|id| {
                self.vars[id.0]
                    .and_then(|v| self.tape.grad_slice(v))
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); self.store.get(id).len()])
            })
            .collect()
    }
}

fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(dist.sample(rng)))
}

/// Initial standard deviation of linear weights and learned tokens.
pub const INIT_STD: f64 = 0.02;

pub(crate) fn gaussian_param<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    std: f64,
    rng: &mut impl Rng,
) -> ParamId {
    store.insert(name, normal(shape, std, rng))
}

/// Affine map `x · w + b` with `w: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = gaussian_param(store, &format!("{name}.weight"), &[fan_in, fan_out], INIT_STD, rng);
        let b = bias.then(|| store.insert(format!("{name}.bias"), Tensor::zeros([fan_out])));
        Linear {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.p(self.w);
        let b = self.b.map(|b| cx.p(b));
        cx.tape.linear(x, w, b)
    }
}

/// 2-D convolution layer, He-normal initialized.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let w = gaussian_param(
            store,
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            (2.0 / fan_in).sqrt(),
            rng,
        );
        let b = bias.then(|| store.insert(format!("{name}.bias"), Tensor::zeros([c_out])));
        Conv2d {
            w,
            b,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.p(self.w);
        let b = self.b.map(|b| cx.p(b));
        cx.tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full([dim], T::one())),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros([dim])),
            eps: 1e-6,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = cx.p(self.gamma);
        let b = cx.p(self.beta);
        cx.tape.layernorm(x, g, b, self.eps)
    }
}

/// Stack of linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(cx, x)?;
            if i < last {
                x = cx.tape.gelu(x)?;
            }
        }
        Ok(x)
    }
}
