//! Finite-difference verification of the whole model on the micro configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Variant};
use crate::error::Result;
use crate::losses::{loss_angular, loss_heatmap, loss_inout, loss_point, LossWeights};
use crate::model::{GazeModel, SceneInput};
use crate::nn::Ctx;
use crate::objective::{sample_loss, PersonTarget, Sample};
use crate::person::PersonInput;
use crate::tensor::{grad_check, GradCheck, GradCheckReport, Tape, Tensor, Var};

/// Entries sampled per parameter tensor by [`model_grad_check`].
pub const ENTRIES_PER_TENSOR: usize = 16;

/// Unit weights keep all three loss terms at comparable scale, so each
/// path is checked relative to its own size rather than drowned by λ_reg.
pub const CHECK_WEIGHTS: LossWeights = LossWeights {
    reg: 1.0,
    ang: 1.0,
    io: 1.0,
};

/// Floor on the relative-error denominator, as a fraction of the loss.
pub const CHECK_LOSS_FLOOR: f64 = 1e-6;

/// A random micro scene: the first person looks inside the frame, the
/// second (point variant only) outside.
pub fn micro_sample(cfg: &ModelConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = (cfg.image_size, cfg.crop_size);
    let image = Tensor::from_fn(vec![s, s, 3], |_| rng.gen::<f32>());
    let mut persons = Vec::new();
    let mut targets = Vec::new();
    for i in 0..cfg.n_persons {
        let x: f32 = rng.gen_range(0.0..0.7);
        let y: f32 = rng.gen_range(0.0..0.7);
        let crop = Tensor::from_fn(vec![c, c, 3], |_| rng.gen::<f32>());
        persons.push(PersonInput::new(crop, [x, y, x + 0.2, y + 0.25]).expect("valid box"));
        targets.push(if i == 0 {
            PersonTarget {
                inout: true,
                points: vec![[rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]],
            }
        } else {
            PersonTarget {
                inout: false,
                points: vec![],
            }
        });
    }
    Sample {
        scene: SceneInput { image, persons },
        targets,
    }
}

/// Redraws every parameter at unit-variance-preserving scale. At the
/// training init (std 0.02) the deepest layers have gradients far below
/// the resolution of central differences, so the check runs here instead.
pub fn condition_for_check(model: &mut GazeModel<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let t = model.params.get_mut(id);
        let shape = t.shape().to_vec();
        let fan_in = match shape.len() {
            2 => shape[0],
            4 => shape[1] * shape[2] * shape[3],
            _ => 1,
        };
        let std = (1.0 / fan_in as f64).sqrt();
        for v in t.data_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *v = if name.ends_with(".gamma") {
                1.0 + 0.2 * z
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                0.1 * z
            } else {
                std * z
            };
        }
    }
}

/// Checks every parameter tensor of a micro model (f64) against central
/// differences of the full training loss.
pub fn model_grad_check(variant: Variant, check: &GradCheck) -> crate::Result<GradCheckReport> {
    let cfg = ModelConfig::micro(variant);
    let mut model = GazeModel::<f64>::new(cfg.clone(), check.seed)?;
    condition_for_check(&mut model, check.seed ^ 0x5eed);
    let sample = micro_sample(&cfg, check.seed.wrapping_add(1));
    let weights = CHECK_WEIGHTS;
    let inputs: Vec<(String, Tensor<f64>)> =
        model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let slots = cfg.n_persons;
    Ok(grad_check(
        |tape, vars| {
            let mut cx = Ctx::with_vars(std::mem::take(tape), &model.params, vars);
            let loss = sample_loss(&model, &mut cx, &sample, slots, &weights, None);
            *tape = cx.into_tape();
            loss
        },
        &inputs,
        check,
    ))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Uniform magnitudes in `[lo, hi)` with random signs, keeping clear of zero.
fn signed(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen::<bool>() { m } else { -m }
    })
}

/// `Σ w ⊙ y` with fixed pseudo-random `w`, so every output entry matters.
fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let w = uniform(tape.shape(y), -1.0, 1.0, 0xfeed);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpCase = (&'static str, Vec<Tensor<f64>>, fn(&mut Tape<f64>, &[Var]) -> Result<Var>);

fn op_cases() -> Vec<OpCase> {
    let u = |shape: &[usize], seed| uniform(shape, -1.0, 1.0, seed);
    vec![
        ("add", vec![u(&[3, 4], 1), u(&[3, 4], 2)], |t, v| t.add(v[0], v[1])),
        ("add_broadcast", vec![u(&[3, 4], 3), u(&[4], 4)], |t, v| t.add(v[0], v[1])),
        ("sub", vec![u(&[3, 4], 5), u(&[3, 4], 6)], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![u(&[3, 4], 7), u(&[3, 4], 8)], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![u(&[5], 9)], |t, v| t.scale(v[0], -2.5)),
        ("add_scalar", vec![u(&[5], 10)], |t, v| t.add_scalar(v[0], 0.7)),
        ("relu", vec![signed(&[12], 0.1, 1.0, 11)], |t, v| t.relu(v[0])),
        ("gelu", vec![uniform(&[12], -3.0, 3.0, 12)], |t, v| t.gelu(v[0])),
        ("sigmoid", vec![uniform(&[12], -4.0, 4.0, 13)], |t, v| t.sigmoid(v[0])),
        ("log", vec![uniform(&[12], 0.2, 3.0, 14)], |t, v| t.log(v[0])),
        ("clamp", vec![signed(&[12], 0.0, 0.4, 15)], |t, v| t.clamp(v[0], -0.5, 0.5)),
        ("matmul", vec![u(&[3, 4], 16), u(&[4, 5], 17)], |t, v| t.matmul(v[0], v[1])),
        ("matmul_batched", vec![u(&[2, 3, 4], 18), u(&[4, 5], 19)], |t, v| t.matmul(v[0], v[1])),
        ("matmul_batched_both", vec![u(&[2, 3, 4], 20), u(&[2, 4, 5], 21)], |t, v| {
            t.matmul(v[0], v[1])
        }),
        ("linear", vec![u(&[3, 4], 22), u(&[4, 6], 23), u(&[6], 24)], |t, v| {
            t.linear(v[0], v[1], Some(v[2]))
        }),
        ("conv2d", vec![u(&[2, 3, 6, 6], 25), u(&[4, 3, 3, 3], 26), u(&[4], 27)], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), 1, 1)
        }),
        ("conv2d_strided", vec![u(&[1, 2, 7, 7], 28), u(&[3, 2, 3, 3], 29)], |t, v| {
            t.conv2d(v[0], v[1], None, 2, 0)
        }),
        ("softmax", vec![uniform(&[3, 5], -2.0, 2.0, 30)], |t, v| t.softmax(v[0])),
        ("layernorm", vec![u(&[3, 6], 31), uniform(&[6], 0.5, 1.5, 32), u(&[6], 33)], |t, v| {
            t.layernorm(v[0], v[1], v[2], 1e-5)
        }),
        ("sum", vec![u(&[3, 4], 34)], |t, v| {
            let s = t.sum(v[0])?;
            t.mul(s, s)
        }),
        ("mean", vec![u(&[3, 4], 35)], |t, v| {
            let s = t.mean(v[0])?;
            t.mul(s, s)
        }),
        ("sum_last", vec![u(&[3, 4], 36)], |t, v| t.sum_last(v[0])),
        ("concat_rows", vec![u(&[2, 3], 37), u(&[4, 3], 38)], |t, v| t.concat(&[v[0], v[1]], 0)),
        ("concat_cols", vec![u(&[2, 3], 39), u(&[2, 2], 40)], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("slice", vec![u(&[5, 3], 41)], |t, v| t.slice(v[0], 0, 1, 4)),
        ("reshape", vec![u(&[2, 6], 42)], |t, v| t.reshape(v[0], &[3, 4])),
        ("permute", vec![u(&[2, 3, 4], 43)], |t, v| t.permute(v[0], &[2, 0, 1])),
        ("transpose", vec![u(&[3, 5], 44)], |t, v| t.transpose(v[0])),
        ("bilinear_resize", vec![u(&[2, 4, 4], 45)], |t, v| t.bilinear_resize(v[0], 7, 5)),
        ("l2_normalize", vec![u(&[3, 4], 46)], |t, v| t.l2_normalize(v[0], 1e-12)),
        ("global_average_pool", vec![u(&[2, 3, 4, 4], 47)], |t, v| t.global_average_pool(v[0])),
        ("loss_heatmap", vec![uniform(&[8, 8], 0.0, 1.0, 48)], |t, v| {
            let g = t.constant(uniform(&[8, 8], 0.0, 1.0, 49));
            loss_heatmap(t, v[0], g)
        }),
        ("loss_point", vec![uniform(&[4, 2], 0.0, 1.0, 50)], |t, v| {
            let g = t.constant(uniform(&[4, 2], 0.0, 1.0, 51));
            loss_point(t, v[0], g)
        }),
        ("loss_angular", vec![signed(&[4, 2], 0.2, 1.0, 52)], |t, v| {
            let g = t.constant(signed(&[4, 2], 0.2, 1.0, 53));
            loss_angular(t, v[0], g)
        }),
        ("loss_inout", vec![uniform(&[6], 0.05, 0.95, 54)], |t, v| {
            let y = t.constant(Tensor::from_f64([6], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0])?);
            loss_inout(t, v[0], y)
        }),
    ]
}

/// Finite-difference check of every differentiable tape op (and the four
/// losses), each followed by a fixed random projection to a scalar.
pub fn op_grad_suite(check: &GradCheck) -> Vec<(&'static str, GradCheckReport)> {
    op_cases()
        .into_iter()
        .map(|(name, inputs, f)| {
            let named: Vec<(String, Tensor<f64>)> =
                inputs.into_iter().enumerate().map(|(i, t)| (format!("x{i}"), t)).collect();
            let report = grad_check(
                |tape, vars| {
                    let y = f(tape, vars)?;
                    if tape.shape(y).is_empty() {
                        Ok(y)
                    } else {
                        project(tape, y)
                    }
                },
                &named,
                check,
            );
            (name, report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GradFault;

    fn cfg() -> GradCheck {
        GradCheck {
            max_entries: Some(4),
            loss_floor: CHECK_LOSS_FLOOR,
            ..GradCheck::default()
        }
    }

    #[test]
    fn point_model_passes() {
        let r = model_grad_check(Variant::Point, &cfg()).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn heatmap_model_passes() {
        let r = model_grad_check(Variant::Heatmap, &cfg()).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn injected_fault_is_caught() {
        let r = model_grad_check(
            Variant::Point,
            &GradCheck {
                fault: Some(GradFault::MatmulDropTranspose),
                ..cfg()
            },
        )
        .unwrap();
        assert!(!r.passed());
        assert!(r.failing().next().is_some());
    }

    #[test]
    fn every_op_passes() {
        for (name, r) in op_grad_suite(&GradCheck::default()) {
            assert!(r.passed(), "{name}: {r}");
        }
    }
}
