//! Per-pass training objective: targets → masks → global loss on the tape.

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::losses::{
    global_loss, gt_direction, loss_angular, loss_heatmap, loss_inout, loss_point, LossCounts, LossMask,
    LossParts, LossWeights,
};
use crate::metrics::build_gt_heatmap;
use crate::model::{ForwardOut, GazeModel, SceneInput};
use crate::nn::Ctx;
use crate::tensor::{Scalar, Tensor, Var};

/// Supervision for one person.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonTarget {
    /// True when the gaze target is inside the frame.
    pub inout: bool,
    /// Annotator gaze points; may be empty when `inout` is false.
    pub points: Vec<[f64; 2]>,
}

impl PersonTarget {
    /// Mean annotator point.
    pub fn mean_point(&self) -> Option<[f64; 2]> {
        if self.points.is_empty() {
            return None;
        }
        let k = self.points.len() as f64;
        Some([
            self.points.iter().map(|p| p[0]).sum::<f64>() / k,
            self.points.iter().map(|p| p[1]).sum::<f64>() / k,
        ])
    }
}

/// One forward pass worth of supervised data: a scene and one target per person.
#[derive(Clone, Debug)]
pub struct Sample {
    pub scene: SceneInput,
    pub targets: Vec<PersonTarget>,
}

/// Masks for `slots` slots of `sample`: in-out on every real person,
/// regression and angular terms only for in-frame people (angular also
/// needs a usable head-to-target direction).
pub fn loss_mask(sample: &Sample, slots: usize) -> Result<LossMask> {
    let n = sample.scene.persons.len();
    if sample.targets.len() != n {
        return Err(Error::Contract(format!("{n} persons but {} targets", sample.targets.len())));
    }
    if n > slots {
        return Err(Error::Capacity { given: n, capacity: slots });
    }
    let mut m = LossMask {
        reg: vec![false; slots],
        ang: vec![false; slots],
        io: vec![false; slots],
    };
    for (i, (p, t)) in sample.scene.persons.iter().zip(&sample.targets).enumerate() {
        if p.is_pad {
            continue;
        }
        m.io[i] = true;
        if let (true, Some(g)) = (t.inout, t.mean_point()) {
            m.reg[i] = true;
            let c = p.center();
            m.ang[i] = gt_direction([c[0] as f64, c[1] as f64], g).is_some();
        }
    }
    Ok(m)
}

/// Loss vectors for every slot; masked slots get placeholder targets.
pub fn loss_parts<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    f: &ForwardOut,
    sample: &Sample,
    mask: &LossMask,
    variant: Variant,
) -> Result<LossParts> {
    let slots = mask.io.len();
    let mut pts = vec![T::zero(); slots * 2];
    let mut dirs = vec![T::zero(); slots * 2];
    let mut labels = vec![T::zero(); slots];
    for (i, t) in sample.targets.iter().enumerate() {
        labels[i] = if t.inout { T::one() } else { T::zero() };
        dirs[2 * i] = T::one();
        if !mask.reg[i] {
            continue;
        }
        let g = t.mean_point().expect("masked in implies a point");
        pts[2 * i] = T::from_f64_lossy(g[0]);
        pts[2 * i + 1] = T::from_f64_lossy(g[1]);
        let c = sample.scene.persons[i].center();
        if let Some(d) = gt_direction([c[0] as f64, c[1] as f64], g) {
            dirs[2 * i] = T::from_f64_lossy(d[0]);
            dirs[2 * i + 1] = T::from_f64_lossy(d[1]);
        }
    }
    for i in sample.targets.len()..slots {
        dirs[2 * i] = T::one();
    }
    let tape = &mut cx.tape;
    let reg = match variant {
        Variant::Point => {
            let gt = tape.constant(Tensor::new(vec![slots, 2], pts)?);
            loss_point(tape, f.point.expect("point variant"), gt)?
        }
        Variant::Heatmap => {
            let hm = f.heatmap.expect("heatmap variant");
            let gt = match sample.targets.first().filter(|_| mask.reg[0]) {
                Some(t) => build_gt_heatmap(&t.points)?.cast::<T>(),
                None => Tensor::zeros(tape.shape(hm).to_vec()),
            };
            let gt = tape.constant(gt);
            let l = loss_heatmap(tape, hm, gt)?;
            tape.reshape(l, &[1])?
        }
    };
    let gt_dir = tape.constant(Tensor::new(vec![slots, 2], dirs)?);
    let ang = loss_angular(tape, f.person.gaze_vec, gt_dir)?;
    let y = tape.constant(Tensor::new(vec![slots], labels)?);
    let io = loss_inout(tape, f.inout, y)?;
    Ok(LossParts { reg, ang, io })
}

/// Forward + weighted loss for one pass. `counts` sets the mean
/// denominators (batch-wide counts during training).
pub fn sample_loss<T: Scalar>(
    model: &GazeModel<T>,
    cx: &mut Ctx<'_, T>,
    sample: &Sample,
    slots: usize,
    weights: &LossWeights,
    counts: Option<LossCounts>,
) -> Result<Var> {
    let mask = loss_mask(sample, slots)?;
    let f = model.forward(cx, &sample.scene, slots)?;
    let parts = loss_parts(cx, &f, sample, &mask, model.cfg.variant)?;
    global_loss(&mut cx.tape, &parts, weights, &mask, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::person::PersonInput;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(cfg: &ModelConfig, targets: Vec<PersonTarget>, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, c) = (cfg.image_size, cfg.crop_size);
        Sample {
            scene: SceneInput {
                image: Tensor::from_fn(vec![s, s, 3], |_| rng.gen()),
                persons: targets
                    .iter()
                    .map(|_| {
                        let x: f32 = rng.gen_range(0.0..0.7);
                        PersonInput::new(Tensor::from_fn(vec![c, c, 3], |_| rng.gen()), [x, 0.1, x + 0.2, 0.3]).unwrap()
                    })
                    .collect(),
            },
            targets,
        }
    }

    fn inside(x: f64, y: f64) -> PersonTarget {
        PersonTarget { inout: true, points: vec![[x, y]] }
    }

    #[test]
    fn masks_follow_inout_and_padding() {
        let cfg = ModelConfig::micro(Variant::Point);
        let out = PersonTarget { inout: false, points: vec![] };
        let s = sample(&cfg, vec![inside(0.5, 0.9), out], 0);
        let m = loss_mask(&s, 3).unwrap();
        assert_eq!(m.io, [true, true, false]);
        assert_eq!(m.reg, [true, false, false]);
        assert_eq!(m.ang, [true, false, false]);
        assert!(matches!(loss_mask(&s, 1), Err(Error::Capacity { .. })));
    }

    #[test]
    fn target_at_head_center_skips_angular_term() {
        let cfg = ModelConfig::micro(Variant::Point);
        let mut s = sample(&cfg, vec![inside(0.0, 0.0)], 1);
        let c = s.scene.persons[0].center();
        s.targets[0].points = vec![[c[0] as f64, c[1] as f64]];
        let m = loss_mask(&s, 2).unwrap();
        assert_eq!((m.reg[0], m.ang[0]), (true, false));
    }

    #[test]
    fn masked_slots_receive_zero_gradient() {
        let cfg = ModelConfig::micro(Variant::Point);
        let model = GazeModel::<f64>::new(cfg.clone(), 5).unwrap();
        let mut s = sample(&cfg, vec![inside(0.2, 0.8), inside(0.6, 0.3)], 2);
        s.scene.persons[1].is_pad = true;
        let w = LossWeights::for_variant(Variant::Point);
        let run = |s: &Sample| {
            let mut cx = Ctx::new(&model.params, true);
            let mask = loss_mask(s, 3).unwrap();
            let f = model.forward(&mut cx, &s.scene, 3).unwrap();
            let parts = loss_parts(&mut cx, &f, s, &mask, Variant::Point).unwrap();
            let l = global_loss(&mut cx.tape, &parts, &w, &mask, None).unwrap();
            cx.tape.backward(l).unwrap();
            let g = |v| cx.tape.grad(v).unwrap().into_data();
            (g(f.point.unwrap()), g(f.inout), g(f.person.gaze_vec), cx.param_grads())
        };
        let (gp, gi, gv, params) = run(&s);
        for slot in 1..3 {
            assert_eq!((gp[2 * slot], gp[2 * slot + 1], gi[slot]), (0.0, 0.0, 0.0));
            assert_eq!((gv[2 * slot], gv[2 * slot + 1]), (0.0, 0.0));
        }
        assert!(gp[0] != 0.0 && gi[0] != 0.0);
        // the masked slot's targets are irrelevant
        s.targets[1] = PersonTarget { inout: false, points: vec![] };
        assert_eq!(run(&s).3, params);
    }
}
