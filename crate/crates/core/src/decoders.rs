//! Prediction heads: DPT-style heatmap decoder, point regressor, in-out head.

use rand::Rng;

use crate::config::ModelConfig;
use crate::encoder::TokenSequence;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Mlp, ParamStore};
use crate::tensor::{Scalar, Tensor, Var};

/// Heatmaps are `HEATMAP_SIZE × HEATMAP_SIZE`.
pub const HEATMAP_SIZE: usize = 64;

/// Normalized `(x, y)` of the center of heatmap cell `(r, c)`.
pub fn cell_center(r: usize, c: usize, size: usize) -> (f64, f64) {
    ((c as f64 + 0.5) / size as f64, (r as f64 + 0.5) / size as f64)
}

/// Center of the highest cell; ties go to the smallest row, then column.
pub fn heatmap_argmax<T: Scalar>(map: &Tensor<T>) -> (f64, f64) {
    let &[h, w] = map.shape() else {
        panic!("heatmap must be 2-D, got {:?}", map.shape());
    };
    let mut best = 0;
    for (i, &v) in map.data().iter().enumerate() {
        if v > map.data()[best] {
            best = i;
        }
    }
    debug_assert_eq!(h * w, map.len());
    cell_center(best / w, best % w, h)
}

/// `x + conv(gelu(conv(gelu(x))))`.
#[derive(Clone, Debug)]
pub struct ResidualConvUnit {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualConvUnit {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, ch: usize, rng: &mut impl Rng) -> Self {
        ResidualConvUnit {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), ch, ch, 3, 1, 1, true, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), ch, ch, 3, 1, 1, true, rng),
        }
    }

    fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = cx.tape.gelu(x)?;
        let h = self.conv1.forward(cx, h)?;
        let h = cx.tape.gelu(h)?;
        let h = self.conv2.forward(cx, h)?;
        cx.tape.add(x, h)
    }
}

/// One reassembly stage: tokens → 1×1 projection → resample → 3×3 to fusion width.
#[derive(Clone, Debug)]
pub struct Reassemble {
    pub project: Conv2d,
    pub to_fusion: Conv2d,
    /// Output size relative to the patch grid, as `num / den`.
    pub scale: (usize, usize),
}

/// Fusion step for one stage; the deepest stage has no skip input.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub skip: Option<ResidualConvUnit>,
    pub refine: ResidualConvUnit,
    pub out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DptHeatmap {
    /// Finest first: scales 4, 2, 1, 1/2.
    pub stages: Vec<Reassemble>,
    /// Same order as `stages`.
    pub fusion: Vec<FusionBlock>,
    pub head1: Conv2d,
    pub head2: Conv2d,
}

impl DptHeatmap {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let ch = cfg.stage_channels();
        let f = cfg.fusion;
        let scales = [(4, 1), (2, 1), (1, 1), (1, 2)];
        let stages = (0..4)
            .map(|i| Reassemble {
                project: Conv2d::new(store, &format!("dpt.reassemble.{i}.project"), cfg.dim, ch[i], 1, 1, 0, true, rng),
                to_fusion: Conv2d::new(store, &format!("dpt.reassemble.{i}.to_fusion"), ch[i], f, 3, 1, 1, false, rng),
                scale: scales[i],
            })
            .collect();
        let fusion = (0..4)
            .map(|i| FusionBlock {
                skip: (i < 3).then(|| ResidualConvUnit::new(store, &format!("dpt.fusion.{i}.skip"), f, rng)),
                refine: ResidualConvUnit::new(store, &format!("dpt.fusion.{i}.refine"), f, rng),
                out: Conv2d::new(store, &format!("dpt.fusion.{i}.out"), f, f, 1, 1, 0, true, rng),
            })
            .collect();
        let head1 = Conv2d::new(store, "dpt.head.0", f, f / 2, 3, 1, 1, true, rng);
        // Zero output projection: the map starts flat instead of at the
        // scale of the He-initialized fusion stack.
        let head2 = Conv2d::new(store, "dpt.head.1", f / 2, 1, 1, 1, 0, true, rng);
        store.get_mut(head2.w).data_mut().iter_mut().for_each(|v| *v = T::zero());
        DptHeatmap {
            stages,
            fusion,
            head1,
            head2,
        }
    }

    fn stage_size(&self, i: usize, gh: usize, gw: usize) -> (usize, usize) {
        let (num, den) = self.stages[i].scale;
        ((gh * num / den).max(1), (gw * num / den).max(1))
    }

    /// `taps` are four `[N_t, D]` states, shallowest first.
    pub fn forward<T: Scalar>(
        &self,
        cx: &mut Ctx<'_, T>,
        taps: &[Var],
        seq: &TokenSequence,
        grid_h: usize,
        grid_w: usize,
    ) -> Result<Var> {
        if seq.n_persons != 1 {
            return Err(Error::Contract(format!(
                "heatmap decoder takes a single person token, got {}",
                seq.n_persons
            )));
        }
        if taps.len() != 4 {
            return Err(Error::Config(format!("heatmap decoder needs 4 taps, got {}", taps.len())));
        }
        if seq.n_image != grid_h * grid_w {
            return Err(Error::Config(format!(
                "{} image tokens do not fill a {grid_h}×{grid_w} grid",
                seq.n_image
            )));
        }
        let mut feats = Vec::with_capacity(4);
        for (i, (&tap, stage)) in taps.iter().zip(&self.stages).enumerate() {
            let d = cx.tape.shape(tap)[1];
            let t = cx.tape.slice(tap, 0, 0, seq.n_image)?;
            let t = cx.tape.reshape(t, &[grid_h, grid_w, d])?;
            let t = cx.tape.permute(t, &[2, 0, 1])?;
            let t = cx.tape.reshape(t, &[1, d, grid_h, grid_w])?;
            let t = stage.project.forward(cx, t)?;
            let (h, w) = self.stage_size(i, grid_h, grid_w);
            let t = if (h, w) == (grid_h, grid_w) { t } else { cx.tape.bilinear_resize(t, h, w)? };
            feats.push(stage.to_fusion.forward(cx, t)?);
        }
        let mut path: Option<Var> = None;
        for i in (0..4).rev() {
            let block = &self.fusion[i];
            let mut x = match (path, &block.skip) {
                (Some(p), Some(rcu)) => {
                    let s = rcu.forward(cx, feats[i])?;
                    cx.tape.add(p, s)?
                }
                _ => feats[i],
            };
            x = block.refine.forward(cx, x)?;
            if i > 0 {
                let (h, w) = self.stage_size(i - 1, grid_h, grid_w);
                x = cx.tape.bilinear_resize(x, h, w)?;
            }
            path = Some(block.out.forward(cx, x)?);
        }
        let x = path.expect("four fusion blocks ran");
        let x = self.head1.forward(cx, x)?;
        let x = cx.tape.gelu(x)?;
        let x = self.head2.forward(cx, x)?;
        let x = cx.tape.bilinear_resize(x, HEATMAP_SIZE, HEATMAP_SIZE)?;
        cx.tape.reshape(x, &[HEATMAP_SIZE, HEATMAP_SIZE])
    }
}

/// `D → D → D/2 → 2` MLP with a sigmoid on each coordinate.
#[derive(Clone, Debug)]
pub struct PointDecoder {
    pub mlp: Mlp,
}

impl PointDecoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize, rng: &mut impl Rng) -> Self {
        PointDecoder {
            mlp: Mlp::new(store, "point", &[dim, dim, (dim / 2).max(1), 2], rng),
        }
    }

    /// `[B, D] → [B, 2]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let raw = self.mlp.forward(cx, x)?;
        cx.tape.sigmoid(raw)
    }
}

/// Widths of the in-out MLP for token width `dim`.
pub fn inout_widths(dim: usize) -> [usize; 7] {
    [2 * dim, dim, (dim / 2).max(1), (dim / 4).max(1), (dim / 8).max(1), (dim / 16).max(1), 1]
}

/// `o = σ(MLP([x_out, x_g]))`.
#[derive(Clone, Debug)]
pub struct InOutHead {
    pub mlp: Mlp,
}

impl InOutHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize, rng: &mut impl Rng) -> Self {
        InOutHead {
            mlp: Mlp::new(store, "inout", &inout_widths(dim), rng),
        }
    }

    /// `[B, D]` twice → `[B]` probabilities.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x_out: Var, x_g: Var) -> Result<Var> {
        let x = cx.tape.concat(&[x_out, x_g], 1)?;
        let raw = self.mlp.forward(cx, x)?;
        let p = cx.tape.sigmoid(raw)?;
        let b = cx.tape.shape(p)[0];
        cx.tape.reshape(p, &[b])
    }
}
