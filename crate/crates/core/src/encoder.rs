//! Token assembly and the pre-norm ViT encoder.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, ParamStore};
use crate::tensor::{Scalar, Tape, Var};

/// `[image tokens (N) | person tokens (N_p) | global token (1)]`.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    /// `[N_t, D]`.
    pub x: Var,
    pub n_image: usize,
    pub n_persons: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.n_image + self.n_persons + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn person_row(&self, i: usize) -> usize {
        self.n_image + i
    }

    pub fn global_row(&self) -> usize {
        self.n_image + self.n_persons
    }

    /// Same layout, different values (e.g. an encoder output).
    pub fn with(&self, x: Var) -> Self {
        TokenSequence { x, ..*self }
    }

    pub fn image_rows<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.slice(self.x, 0, 0, self.n_image)
    }

    pub fn person_rows<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.slice(self.x, 0, self.n_image, self.n_image + self.n_persons)
    }
}

pub fn assemble<T: Scalar>(tape: &mut Tape<T>, x_img: Var, x_g: Var, x_glo: Var) -> Result<TokenSequence> {
    let (si, sg, so) = (tape.shape(x_img).to_vec(), tape.shape(x_g).to_vec(), tape.shape(x_glo).to_vec());
    if si.len() != 2 || sg.len() != 2 || so != [1, *si.last().unwrap_or(&0)] || si[1] != sg[1] {
        return Err(Error::Config(format!(
            "token widths disagree: image {si:?}, persons {sg:?}, global {so:?}"
        )));
    }
    let x = tape.concat(&[x_img, x_g, x_glo], 0)?;
    Ok(TokenSequence {
        x,
        n_image: si[0],
        n_persons: sg[0],
    })
}

/// Multi-head self-attention with separate Q, K, V projections.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng),
            heads,
        }
    }

    /// Returns the output `[N_t, D]` and the attention weights `[h, N_t, N_t]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<(Var, Var)> {
        let s = cx.tape.shape(x).to_vec();
        let (n, d, h) = (s[0], s[1], self.heads);
        if h == 0 || d % h != 0 {
            return Err(Error::Config(format!("width {d} is not divisible by {h} heads")));
        }
        let dh = d / h;
        let split = |cx: &mut Ctx<'_, T>, lin: &Linear, perm: &[usize]| -> Result<Var> {
            let y = lin.forward(cx, x)?;
            let y = cx.tape.reshape(y, &[n, h, dh])?;
            cx.tape.permute(y, perm)
        };
        let q = split(cx, &self.q, &[1, 0, 2])?;
        let kt = split(cx, &self.k, &[1, 2, 0])?;
        let v = split(cx, &self.v, &[1, 0, 2])?;
        let scores = cx.tape.matmul(q, kt)?;
        let scores = cx.tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = cx.tape.softmax(scores)?;
        let y = cx.tape.matmul(attn, v)?;
        let y = cx.tape.permute(y, &[1, 0, 2])?;
        let y = cx.tape.reshape(y, &[n, d])?;
        Ok((self.out.forward(cx, y)?, attn))
    }
}

/// `x + MHSA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, 4 * dim, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), 4 * dim, dim, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<(Var, Var)> {
        let h = self.ln1.forward(cx, x)?;
        let (a, weights) = self.attn.forward(cx, h)?;
        let x = cx.tape.add(x, a)?;
        let h = self.ln2.forward(cx, x)?;
        let h = self.fc1.forward(cx, h)?;
        let h = cx.tape.gelu(h)?;
        let h = self.fc2.forward(cx, h)?;
        Ok((cx.tape.add(x, h)?, weights))
    }
}

/// Post-block states captured for the heatmap decoder, in request order.
#[derive(Clone, Debug, Default)]
pub struct EncoderTaps {
    pub layers: Vec<(usize, Var)>,
}

impl EncoderTaps {
    pub fn get(&self, layer: usize) -> Option<Var> {
        self.layers.iter().find(|(l, _)| *l == layer).map(|&(_, v)| v)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().map(|&(_, v)| v).collect()
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub x_out: TokenSequence,
    pub taps: EncoderTaps,
    /// One `[h, N_t, N_t]` weight tensor per block.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<Block>,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Encoder {
            blocks: (0..cfg.depth)
                .map(|i| Block::new(store, &format!("encoder.{i}"), cfg.dim, cfg.heads, rng))
                .collect(),
        }
    }

    /// Runs every block; `tap_layers` are 1-based block indices.
    pub fn encode<T: Scalar>(
        &self,
        cx: &mut Ctx<'_, T>,
        seq: TokenSequence,
        tap_layers: &[usize],
    ) -> Result<EncoderOutput> {
        if let Some(&bad) = tap_layers.iter().find(|&&l| l == 0 || l > self.blocks.len()) {
            return Err(Error::Config(format!(
                "tap layer {bad} outside 1..={}",
                self.blocks.len()
            )));
        }
        let mut x = seq.x;
        let mut states = Vec::with_capacity(self.blocks.len());
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, w) = block.forward(cx, x)?;
            x = y;
            states.push(x);
            attention.push(w);
        }
        let taps = EncoderTaps {
            layers: tap_layers.iter().map(|&l| (l, states[l - 1])).collect(),
        };
        Ok(EncoderOutput {
            x_out: seq.with(x),
            taps,
            attention,
        })
    }
}
