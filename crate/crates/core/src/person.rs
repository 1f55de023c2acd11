//! Person gaze tokens: head crop → gaze embedding → token `P_gaze(g) + P_bbox(box)`,
//! plus the auxiliary unit gaze vector.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Linear, Mlp, ParamStore};
use crate::tensor::{Scalar, Tensor, Var};
use crate::tokens::standardize;

/// Norm below which a raw gaze vector is treated as directionless.
pub const GAZE_EPS: f64 = 1e-8;

/// One person's head crop and normalized head box `(x_min, y_min, x_max, y_max)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonInput {
    /// `[h, w, 3]` in `[0, 1]`.
    pub crop: Tensor<f32>,
    pub bbox: [f32; 4],
    pub is_pad: bool,
}

pub fn validate_bbox(b: &[f32; 4]) -> Result<()> {
    let ok = b.iter().all(|v| (0.0..=1.0).contains(v)) && b[0] <= b[2] && b[1] <= b[3];
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!("invalid head box {b:?}")))
    }
}

impl PersonInput {
    pub fn new(crop: Tensor<f32>, bbox: [f32; 4]) -> Result<Self> {
        validate_bbox(&bbox)?;
        if crop.rank() != 3 {
            return Err(Error::Config(format!("head crop must be [h, w, C], got {:?}", crop.shape())));
        }
        Ok(PersonInput {
            crop,
            bbox,
            is_pad: false,
        })
    }

    /// The black-image slot used when fewer people than slots are present.
    pub fn pad(crop_size: usize) -> Self {
        PersonInput {
            crop: Tensor::zeros([crop_size, crop_size, 3]),
            bbox: [0.0; 4],
            is_pad: true,
        }
    }

    pub fn center(&self) -> [f32; 2] {
        [(self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0]
    }
}

/// Fills `persons` up to `capacity` with pad slots; the mask marks real slots.
pub fn pad_persons(
    persons: &[PersonInput],
    capacity: usize,
    crop_size: usize,
) -> Result<(Vec<PersonInput>, Vec<bool>)> {
    if persons.len() > capacity {
        return Err(Error::Capacity {
            given: persons.len(),
            capacity,
        });
    }
    let mut slots = persons.to_vec();
    let mask = (0..capacity).map(|i| i < persons.len() && !persons[i].is_pad).collect();
    slots.resize_with(capacity, || PersonInput::pad(crop_size));
    Ok((slots, mask))
}

/// Four stride-2 conv blocks with GELU, then global average pooling.
#[derive(Clone, Debug)]
pub struct GazeBackbone {
    pub blocks: Vec<Conv2d>,
    pub crop_size: usize,
}

impl GazeBackbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let widths = [3, cfg.backbone[0], cfg.backbone[1], cfg.backbone[2], cfg.d_emb];
        let blocks = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(store, &format!("backbone.{i}"), w[0], w[1], 4, 2, 1, true, rng))
            .collect();
        GazeBackbone {
            blocks,
            crop_size: cfg.crop_size,
        }
    }

    /// `[B, 3, s, s] → [B, d_emb]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, crops: Var) -> Result<Var> {
        let s = cx.tape.shape(crops).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.crop_size || s[3] != self.crop_size {
            return Err(Error::Config(format!(
                "gaze backbone expects [B, 3, {0}, {0}] crops, got {s:?}",
                self.crop_size
            )));
        }
        let mut x = crops;
        for conv in &self.blocks {
            x = conv.forward(cx, x)?;
            x = cx.tape.gelu(x)?;
        }
        cx.tape.global_average_pool(x)
    }
}

/// Per-person tensors produced on the tape.
#[derive(Clone, Debug)]
pub struct PersonTokens {
    /// `[N_p, D]`.
    pub tokens: Var,
    /// `[N_p, d_emb]`.
    pub g_emb: Var,
    /// `[N_p, 2]`, unit rows.
    pub gaze_vec: Var,
    /// True on real (non-pad) slots.
    pub mask: Vec<bool>,
    /// Slots whose raw gaze vector had norm below [`GAZE_EPS`].
    pub degenerate: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct PersonEncoder {
    pub backbone: GazeBackbone,
    /// `P_gpred`.
    pub gaze_head: Mlp,
    pub p_gaze: Linear,
    pub p_bbox: Linear,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl PersonEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let backbone = GazeBackbone::new(store, cfg, rng);
        let gaze_head = Mlp::new(store, "gaze_head", &[cfg.d_emb, cfg.gaze_hidden, 2], rng);
        let p_gaze = Linear::new(store, "p_gaze", cfg.d_emb, cfg.dim, true, rng);
        let p_bbox = Linear::new(store, "p_bbox", 4, cfg.dim, true, rng);
        PersonEncoder {
            backbone,
            gaze_head,
            p_gaze,
            p_bbox,
            mean: cfg.mean,
            std: cfg.std,
        }
    }

    /// Standardized crops stacked as `[B, 3, s, s]`.
    pub fn crop_batch<T: Scalar>(&self, persons: &[PersonInput]) -> Result<Tensor<T>> {
        let s = self.backbone.crop_size;
        let mut data = Vec::with_capacity(persons.len() * 3 * s * s);
        for p in persons {
            if p.crop.shape() != [s, s, 3] {
                return Err(Error::Config(format!(
                    "head crop must be [{s}, {s}, 3], got {:?}",
                    p.crop.shape()
                )));
            }
            let z = standardize(&p.crop, &self.mean, &self.std);
            for c in 0..3 {
                data.extend(z.data().iter().skip(c).step_by(3).map(|&v| T::from_f64_lossy(v as f64)));
            }
        }
        Tensor::new(vec![persons.len(), 3, s, s], data)
    }

    /// `g_v = normalize(P_gpred(g_emb))`, flagging near-zero raw outputs.
    pub fn gaze_vector<T: Scalar>(&self, cx: &mut Ctx<'_, T>, g_emb: Var) -> Result<(Var, Vec<bool>)> {
        let raw = self.gaze_head.forward(cx, g_emb)?;
        let degenerate = cx
            .tape
            .value(raw)
            .data()
            .chunks(2)
            .map(|v| v[0].as_f64().hypot(v[1].as_f64()) < GAZE_EPS)
            .collect();
        let unit = cx.tape.l2_normalize(raw, GAZE_EPS)?;
        Ok((unit, degenerate))
    }

    /// `x^g = P_gaze(g_emb) + P_bbox(bbox)` with `bbox: [B, 4]`.
    pub fn gaze_token<T: Scalar>(&self, cx: &mut Ctx<'_, T>, g_emb: Var, bbox: Var) -> Result<Var> {
        let e = self.p_gaze.forward(cx, g_emb)?;
        let b = self.p_bbox.forward(cx, bbox)?;
        cx.tape.add(e, b)
    }

    /// Pads `persons` to `capacity` slots and builds every slot's token.
    pub fn build_person_tokens<T: Scalar>(
        &self,
        cx: &mut Ctx<'_, T>,
        persons: &[PersonInput],
        capacity: usize,
    ) -> Result<PersonTokens> {
        let (slots, mask) = pad_persons(persons, capacity, self.backbone.crop_size)?;
        for p in &slots {
            validate_bbox(&p.bbox)?;
        }
        let crops = cx.tape.constant(self.crop_batch(&slots)?);
        let g_emb = self.backbone.forward(cx, crops)?;
        let (gaze_vec, degenerate) = self.gaze_vector(cx, g_emb)?;
        let boxes = Tensor::from_fn(vec![capacity, 4], |i| T::from_f64_lossy(slots[i / 4].bbox[i % 4] as f64));
        let boxes = cx.tape.constant(boxes);
        let tokens = self.gaze_token(cx, g_emb, boxes)?;
        Ok(PersonTokens {
            tokens,
            g_emb,
            gaze_vec,
            mask,
            degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelConfig, ParamStore<f64>, PersonEncoder) {
        let cfg = ModelConfig::micro(Variant::Point);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = PersonEncoder::new(&mut store, &cfg, &mut rng);
        (cfg, store, enc)
    }

    fn random_person(rng: &mut ChaCha8Rng, s: usize) -> PersonInput {
        let crop = Tensor::from_fn(vec![s, s, 3], |_| rng.gen::<f32>());
        let x0: f32 = rng.gen_range(0.0..0.5);
        let y0: f32 = rng.gen_range(0.0..0.5);
        PersonInput::new(crop, [x0, y0, x0 + 0.2, y0 + 0.3]).unwrap()
    }

    fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
        let w = t.shape()[1];
        t.data().chunks(w).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn mask_marks_real_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ps: Vec<_> = (0..2).map(|_| random_person(&mut rng, 16)).collect();
        let (_, mask) = pad_persons(&ps, 6, 16).unwrap();
        assert_eq!(mask, [true, true, false, false, false, false]);
        let (slots, mask) = pad_persons(&[], 1, 16).unwrap();
        assert_eq!(mask, [false]);
        assert!(slots[0].is_pad);
        let ps: Vec<_> = (0..6).map(|_| random_person(&mut rng, 16)).collect();
        let (slots, mask) = pad_persons(&ps, 6, 16).unwrap();
        assert!(mask.iter().all(|&m| m) && slots.iter().all(|p| !p.is_pad));
    }

    #[test]
    fn over_capacity_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ps: Vec<_> = (0..3).map(|_| random_person(&mut rng, 16)).collect();
        assert!(matches!(pad_persons(&ps, 2, 16), Err(Error::Capacity { given: 3, capacity: 2 })));
    }

    #[test]
    fn pad_slots_share_one_embedding_and_token() {
        let (_, store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = random_person(&mut rng, 16);
        let mut cx = Ctx::new(&store, false);
        let pt = enc.build_person_tokens(&mut cx, &[real], 4).unwrap();
        let emb = rows(cx.tape.value(pt.g_emb));
        let tok = rows(cx.tape.value(pt.tokens));
        for i in 2..4 {
            assert_eq!(emb[1], emb[i]);
            assert_eq!(tok[1], tok[i]);
        }
        assert_ne!(emb[0], emb[1]);
    }

    #[test]
    fn backbone_is_deterministic_and_non_degenerate() {
        let (_, store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_person(&mut rng, 16);
        let b = random_person(&mut rng, 16);
        let mut cx = Ctx::new(&store, false);
        let pt = enc.build_person_tokens(&mut cx, &[a.clone(), a, b], 3).unwrap();
        let emb = rows(cx.tape.value(pt.g_emb));
        assert_eq!(emb[0], emb[1]);
        assert_ne!(emb[0], emb[2]);
    }

    #[test]
    fn wrong_crop_size_is_config_error() {
        let (_, store, enc) = setup();
        let p = PersonInput::new(Tensor::zeros([8, 8, 3]), [0.0, 0.0, 0.5, 0.5]).unwrap();
        let mut cx = Ctx::new(&store, false);
        assert!(matches!(enc.build_person_tokens(&mut cx, &[p], 2), Err(Error::Config(_))));
    }

    #[test]
    fn gaze_vector_normalizes_raw_output() {
        let (_, mut store, enc) = setup();
        // last layer: zero weights, bias = raw output
        let last = enc.gaze_head.layers.last().unwrap();
        let wname = store.name(last.w).to_string();
        let bname = store.name(last.b.unwrap()).to_string();
        store.set(&wname, Tensor::zeros(store.get(last.w).shape().to_vec())).unwrap();
        for (raw, want) in [([3.0, 4.0], [0.6, 0.8]), ([0.0, -2.0], [0.0, -1.0])] {
            store.set(&bname, Tensor::from_f64([2], &raw).unwrap()).unwrap();
            let mut cx = Ctx::new(&store, false);
            let g = cx.tape.constant(Tensor::zeros([1, 16]));
            let (v, deg) = enc.gaze_vector(&mut cx, g).unwrap();
            let v = cx.tape.value(v).data();
            assert!((v[0] - want[0]).abs() < 1e-12 && (v[1] - want[1]).abs() < 1e-12);
            assert_eq!(deg, [false]);
        }
        store.set(&bname, Tensor::zeros([2])).unwrap();
        let mut cx = Ctx::new(&store, false);
        let g = cx.tape.constant(Tensor::zeros([1, 16]));
        let (v, deg) = enc.gaze_vector(&mut cx, g).unwrap();
        assert!(cx.tape.value(v).is_finite());
        assert_eq!(deg, [true]);
    }

    #[test]
    fn gaze_vector_unit_on_random_inputs() {
        let (_, store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cx = Ctx::new(&store, false);
        let g = cx.tape.constant(Tensor::from_fn(vec![100, 16], |_| rng.gen_range(-3.0..3.0)));
        let (v, _) = enc.gaze_vector(&mut cx, g).unwrap();
        for r in cx.tape.value(v).data().chunks(2) {
            assert!((r[0].hypot(r[1]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn token_is_zero_for_zero_inputs_and_biases() {
        let (_, store, enc) = setup();
        let mut cx = Ctx::new(&store, false);
        let g = cx.tape.constant(Tensor::zeros([1, 16]));
        let b = cx.tape.constant(Tensor::zeros([1, 4]));
        let t = enc.gaze_token(&mut cx, g, b).unwrap();
        assert!(cx.tape.value(t).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn token_is_additive_in_bbox() {
        let (_, store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cx = Ctx::new(&store, false);
        let g = cx.tape.constant(Tensor::from_fn(vec![1, 16], |_| rng.gen_range(-1.0..1.0)));
        let b = cx.tape.constant(Tensor::from_f64([1, 4], &[0.1, 0.2, 0.4, 0.6]).unwrap());
        let full = enc.gaze_token(&mut cx, g, b).unwrap();
        let e = enc.p_gaze.forward(&mut cx, g).unwrap();
        let pb = enc.p_bbox.forward(&mut cx, b).unwrap();
        let (full, e, pb) = (cx.tape.value(full), cx.tape.value(e), cx.tape.value(pb));
        for i in 0..full.len() {
            assert_eq!(full.data()[i], e.data()[i] + pb.data()[i]);
            assert!((full.data()[i] - pb.data()[i] - e.data()[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn same_crop_different_box_gives_different_token() {
        let (_, store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_person(&mut rng, 16);
        let mut b = a.clone();
        b.bbox = [0.5, 0.5, 0.7, 0.9];
        let mut cx = Ctx::new(&store, false);
        let pt = enc.build_person_tokens(&mut cx, &[a, b], 2).unwrap();
        let tok = rows(cx.tape.value(pt.tokens));
        assert_ne!(tok[0], tok[1]);
    }
}
