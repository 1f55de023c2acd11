//! The full gaze model: image tokens + person tokens + global token through
//! the encoder, then the variant's decoder and the in-out head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Variant};
use crate::decoders::{heatmap_argmax, DptHeatmap, InOutHead, PointDecoder};
use crate::encoder::{assemble, Encoder, EncoderOutput, TokenSequence};
use crate::error::{Error, Result};
use crate::nn::{gaussian_param, Ctx, Linear, ParamId, ParamStore, INIT_STD};
use crate::person::{PersonEncoder, PersonInput, PersonTokens};
use crate::tensor::{Scalar, Tensor, Var};
use crate::tokens::{image_tokens, patchify, posenc_2d, standardize};

/// A scene image in `[0, 1]` (`[H, W, 3]`) and the people to predict for.
#[derive(Clone, Debug)]
pub struct SceneInput {
    pub image: Tensor<f32>,
    pub persons: Vec<PersonInput>,
}

/// Prediction for one real person.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeOutput {
    pub person_index: usize,
    /// Normalized `(x, y)`.
    pub point: [f64; 2],
    pub heatmap: Option<Tensor<f32>>,
    pub gaze_vector: [f64; 2],
    pub inout_prob: f64,
}

#[derive(Clone, Debug)]
struct Arch {
    patch_embed: Linear,
    global: ParamId,
    person: PersonEncoder,
    encoder: Encoder,
    point: Option<PointDecoder>,
    heatmap: Option<DptHeatmap>,
    inout: InOutHead,
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub input: TokenSequence,
    pub encoded: EncoderOutput,
    pub person: PersonTokens,
    /// `[slots]`.
    pub inout: Var,
    /// `[slots, 2]` (point variant).
    pub point: Option<Var>,
    /// `[64, 64]` (heatmap variant).
    pub heatmap: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct GazeModel<T: Scalar = f32> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    arch: Arch,
    posenc: Tensor<T>,
}

impl<T: Scalar> GazeModel<T> {
    /// Randomly initialized model; the same seed gives the same weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let patch_len = cfg.patch * cfg.patch * 3;
        let patch_embed = Linear::new(&mut store, "patch_embed", patch_len, cfg.dim, true, &mut rng);
        let global = gaussian_param(&mut store, "global_token", &[1, cfg.dim], INIT_STD, &mut rng);
        let person = PersonEncoder::new(&mut store, &cfg, &mut rng);
        let encoder = Encoder::new(&mut store, &cfg, &mut rng);
        let (point, heatmap) = match cfg.variant {
            Variant::Point => (Some(PointDecoder::new(&mut store, cfg.dim, &mut rng)), None),
            Variant::Heatmap => (None, Some(DptHeatmap::new(&mut store, &cfg, &mut rng))),
        };
        let inout = InOutHead::new(&mut store, cfg.dim, &mut rng);
        let posenc = posenc_2d(cfg.grid(), cfg.grid(), cfg.dim)?;
        Ok(GazeModel {
            cfg,
            params: store,
            arch: Arch {
                patch_embed,
                global,
                person,
                encoder,
                point,
                heatmap,
                inout,
            },
            posenc,
        })
    }

    pub fn cast<U: Scalar>(&self) -> GazeModel<U> {
        GazeModel {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            arch: self.arch.clone(),
            posenc: self.posenc.cast(),
        }
    }

    pub fn person_encoder(&self) -> &PersonEncoder {
        &self.arch.person
    }

    pub fn encoder(&self) -> &Encoder {
        &self.arch.encoder
    }

    /// Runs the model with `slots` person tokens; `scene.persons` is padded
    /// with black-image slots up to that count.
    pub fn forward(&self, cx: &mut Ctx<'_, T>, scene: &SceneInput, slots: usize) -> Result<ForwardOut> {
        let cfg = &self.cfg;
        if slots == 0 {
            return Err(Error::Config("at least one person slot is required".into()));
        }
        if cfg.variant == Variant::Heatmap && slots != 1 {
            return Err(Error::Contract(format!(
                "heatmap variant takes one person per pass, got {slots} slots"
            )));
        }
        let s = cfg.image_size;
        if scene.image.shape() != [s, s, 3] {
            return Err(Error::Config(format!(
                "scene image must be [{s}, {s}, 3], got {:?}",
                scene.image.shape()
            )));
        }
        let image: Tensor<T> = standardize(&scene.image, &cfg.mean, &cfg.std).cast();
        let grid = patchify(&image, cfg.patch)?;
        let x_img = image_tokens(cx, &grid, &self.arch.patch_embed, &self.posenc)?;
        let person = self.arch.person.build_person_tokens(cx, &scene.persons, slots)?;
        let x_glo = cx.p(self.arch.global);
        let input = assemble(&mut cx.tape, x_img, person.tokens, x_glo)?;
        let tap_layers = cfg.tap_layers();
        let taps: &[usize] = if cfg.variant == Variant::Heatmap { &tap_layers } else { &[] };
        let encoded = self.arch.encoder.encode(cx, input, taps)?;
        let out_persons = encoded.x_out.person_rows(&mut cx.tape)?;
        let inout = self.arch.inout.forward(cx, out_persons, person.tokens)?;
        let point = match &self.arch.point {
            Some(dec) => Some(dec.forward(cx, out_persons)?),
            None => None,
        };
        let heatmap = match &self.arch.heatmap {
            Some(dec) => {
                let g = cfg.grid();
                Some(dec.forward(cx, &encoded.taps.vars(), &encoded.x_out, g, g)?)
            }
            None => None,
        };
        Ok(ForwardOut {
            input,
            encoded,
            person,
            inout,
            point,
            heatmap,
        })
    }

    /// Predictions for every real person, `slots` per pass; scenes with more
    /// people are split into consecutive chunks.
    pub fn predict_with(&self, scene: &SceneInput, slots: usize) -> Result<Vec<GazeOutput>> {
        let slots = if self.cfg.variant == Variant::Heatmap { 1 } else { slots };
        let mut out = Vec::with_capacity(scene.persons.len());
        for (c, chunk) in scene.persons.chunks(slots.max(1)).enumerate() {
            let part = SceneInput {
                image: scene.image.clone(),
                persons: chunk.to_vec(),
            };
            let mut cx = Ctx::new(&self.params, false);
            let f = self.forward(&mut cx, &part, slots)?;
            let tape = &cx.tape;
            let inout = tape.value(f.inout).data();
            let gv = tape.value(f.person.gaze_vec).data();
            for i in 0..chunk.len() {
                let heatmap = f.heatmap.map(|h| tape.value(h).cast::<f32>());
                let point = match (&heatmap, f.point) {
                    (Some(h), _) => {
                        let (x, y) = heatmap_argmax(h);
                        [x, y]
                    }
                    (None, Some(p)) => {
                        let p = tape.value(p).data();
                        [p[2 * i].as_f64(), p[2 * i + 1].as_f64()]
                    }
                    (None, None) => unreachable!("every variant has a decoder"),
                };
                out.push(GazeOutput {
                    person_index: c * slots + i,
                    point,
                    heatmap,
                    gaze_vector: [gv[2 * i].as_f64(), gv[2 * i + 1].as_f64()],
                    inout_prob: inout[i].as_f64(),
                });
            }
        }
        Ok(out)
    }

    /// [`predict_with`](Self::predict_with) at the configured slot count.
    pub fn predict(&self, scene: &SceneInput) -> Result<Vec<GazeOutput>> {
        self.predict_with(scene, self.cfg.n_persons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn scene(cfg: &ModelConfig, n: usize, seed: u64) -> SceneInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.image_size;
        let c = cfg.crop_size;
        SceneInput {
            image: Tensor::from_fn(vec![s, s, 3], |_| rng.gen()),
            persons: (0..n)
                .map(|_| {
                    let x: f32 = rng.gen_range(0.0..0.8);
                    let y: f32 = rng.gen_range(0.0..0.8);
                    PersonInput::new(Tensor::from_fn(vec![c, c, 3], |_| rng.gen()), [x, y, x + 0.1, y + 0.15])
                        .unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn token_count_and_output_shapes() {
        let cfg = ModelConfig::micro(Variant::Point);
        let m = GazeModel::<f64>::new(cfg.clone(), 1).unwrap();
        let sc = scene(&cfg, 2, 0);
        let mut cx = Ctx::new(&m.params, false);
        let f = m.forward(&mut cx, &sc, 2).unwrap();
        assert_eq!(cx.tape.shape(f.input.x), [9 + 2 + 1, 32]);
        assert_eq!(cx.tape.shape(f.point.unwrap()), [2, 2]);
        assert_eq!(cx.tape.shape(f.inout), [2]);
        let f = m.forward(&mut cx, &sc, 5).unwrap();
        assert_eq!(f.input.len(), 15);
    }

    #[test]
    fn heatmap_variant_predicts_per_person() {
        let cfg = ModelConfig::micro(Variant::Heatmap);
        let m = GazeModel::<f32>::new(cfg.clone(), 2).unwrap();
        let out = m.predict(&scene(&cfg, 2, 1)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].person_index, 1);
        assert_eq!(out[0].heatmap.as_ref().unwrap().shape(), [64, 64]);
        let mut cx = Ctx::new(&m.params, false);
        assert!(matches!(m.forward(&mut cx, &scene(&cfg, 1, 1), 2), Err(Error::Contract(_))));
    }

    #[test]
    fn predictions_are_bounded_and_deterministic() {
        let cfg = ModelConfig::micro(Variant::Point);
        let m = GazeModel::<f32>::new(cfg.clone(), 3).unwrap();
        let sc = scene(&cfg, 3, 2);
        let a = m.predict(&sc).unwrap();
        assert_eq!(a, m.predict(&sc).unwrap());
        assert_eq!(a.len(), 3);
        for o in &a {
            assert!(o.point.iter().all(|v| *v > 0.0 && *v < 1.0));
            assert!(o.inout_prob > 0.0 && o.inout_prob < 1.0);
            assert!((o.gaze_vector[0].hypot(o.gaze_vector[1]) - 1.0).abs() < 1e-6);
        }
        assert!(m.predict(&SceneInput { image: sc.image.clone(), persons: vec![] }).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::micro(Variant::Point);
        let a = GazeModel::<f32>::new(cfg.clone(), 9).unwrap();
        let b = GazeModel::<f32>::new(cfg, 9).unwrap();
        assert!(a.params.iter().zip(b.params.iter()).all(|(x, y)| x == y));
    }
}
