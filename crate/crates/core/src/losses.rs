//! Training losses and their weighted combination.

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Probabilities are clamped to `[BCE_EPS, 1 − BCE_EPS]` inside the in-out loss.
pub const BCE_EPS: f64 = 1e-7;

/// Ground-truth direction vectors shorter than this are unusable.
pub const DIRECTION_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reg: f64,
    pub ang: f64,
    pub io: f64,
}

impl LossWeights {
    pub fn for_variant(v: Variant) -> Self {
        LossWeights {
            reg: match v {
                Variant::Heatmap => 1000.0,
                Variant::Point => 100.0,
            },
            ang: 3.0,
            io: 1.0,
        }
    }
}

fn same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Contract(format!(
            "{op}: prediction {:?} and target {:?} differ in shape",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Sum of squared cell differences (scalar).
pub fn loss_heatmap<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(tape, pred, gt, "loss_heatmap")?;
    let d = tape.sub(pred, gt)?;
    let sq = tape.mul(d, d)?;
    tape.sum(sq)
}

/// Squared Euclidean distance per row: `[B, 2]` twice → `[B]`.
pub fn loss_point<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(tape, pred, gt, "loss_point")?;
    let d = tape.sub(pred, gt)?;
    let sq = tape.mul(d, d)?;
    tape.sum_last(sq)
}

/// `1 − ⟨gt, pred⟩` per row, both sides normalized first.
pub fn loss_angular<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(tape, pred, gt, "loss_angular")?;
    let p = tape.l2_normalize(pred, DIRECTION_EPS)?;
    let g = tape.l2_normalize(gt, DIRECTION_EPS)?;
    let prod = tape.mul(p, g)?;
    let cos = tape.sum_last(prod)?;
    let neg = tape.scale(cos, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// Binary cross-entropy per element.
pub fn loss_inout<T: Scalar>(tape: &mut Tape<T>, prob: Var, label: Var) -> Result<Var> {
    same_shape(tape, prob, label, "loss_inout")?;
    let p = tape.clamp(prob, BCE_EPS, 1.0 - BCE_EPS)?;
    let log_p = tape.log(p)?;
    let neg_p = tape.scale(p, -1.0)?;
    let one_minus_p = tape.add_scalar(neg_p, 1.0)?;
    let log_q = tape.log(one_minus_p)?;
    let neg_y = tape.scale(label, -1.0)?;
    let one_minus_y = tape.add_scalar(neg_y, 1.0)?;
    let a = tape.mul(label, log_p)?;
    let b = tape.mul(one_minus_y, log_q)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Unit vector from `from` to `to`, or `None` when they (nearly) coincide.
pub fn gt_direction(from: [f64; 2], to: [f64; 2]) -> Option<[f64; 2]> {
    let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
    let n = dx.hypot(dy);
    (n >= DIRECTION_EPS).then(|| [dx / n, dy / n])
}

/// Per-slot loss vectors, each `[B]`.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub reg: Var,
    pub ang: Var,
    pub io: Var,
}

/// Which slots contribute to each term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMask {
    pub reg: Vec<bool>,
    pub ang: Vec<bool>,
    pub io: Vec<bool>,
}

impl LossMask {
    pub fn counts(&self) -> LossCounts {
        let n = |m: &[bool]| m.iter().filter(|&&b| b).count();
        LossCounts {
            reg: n(&self.reg),
            ang: n(&self.ang),
            io: n(&self.io),
        }
    }
}

/// Denominators of the masked means. Training passes batch-wide counts so
/// that per-sample losses sum to the batch loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossCounts {
    pub reg: usize,
    pub ang: usize,
    pub io: usize,
}

impl std::ops::AddAssign for LossCounts {
    fn add_assign(&mut self, o: Self) {
        self.reg += o.reg;
        self.ang += o.ang;
        self.io += o.io;
    }
}

/// `λ_reg·mean(reg) + λ_ang·mean(ang) + λ_io·mean(io)`, each mean over the
/// masked slots. Empty terms contribute zero; `counts` overrides the
/// denominators (defaults to the mask's own counts).
pub fn global_loss<T: Scalar>(
    tape: &mut Tape<T>,
    parts: &LossParts,
    w: &LossWeights,
    mask: &LossMask,
    counts: Option<LossCounts>,
) -> Result<Var> {
    let own = mask.counts();
    let counts = counts.unwrap_or(own);
    if own.io == 0 {
        return Err(Error::Contract("every person slot is masked out".into()));
    }
    let mut total: Option<Var> = None;
    for (part, m, lambda, n) in [
        (parts.reg, &mask.reg, w.reg, counts.reg),
        (parts.ang, &mask.ang, w.ang, counts.ang),
        (parts.io, &mask.io, w.io, counts.io),
    ] {
        if n == 0 || !m.iter().any(|&b| b) {
            continue;
        }
        if tape.shape(part) != [m.len()] {
            return Err(Error::Contract(format!(
                "loss part of shape {:?} does not match a mask of {} slots",
                tape.shape(part),
                m.len()
            )));
        }
        let coef = Tensor::from_fn(vec![m.len()], |i| {
            T::from_f64_lossy(if m[i] { lambda / n as f64 } else { 0.0 })
        });
        let coef = tape.constant(coef);
        let weighted = tape.mul(part, coef)?;
        let term = tape.sum(weighted)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero())),
    })
}
