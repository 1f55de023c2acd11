use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gazetx::gradcheck::condition_for_check;
use gazetx::losses::LossWeights;
use gazetx::model::{GazeModel, SceneInput};
use gazetx::nn::Ctx;
use gazetx::objective::{sample_loss, PersonTarget, Sample};
use gazetx::person::PersonInput;
use gazetx::{ModelConfig, Tensor, Variant};

fn person(rng: &mut ChaCha8Rng, crop: usize) -> PersonInput {
    let c = Tensor::from_fn(vec![crop, crop, 3], |_| rng.gen::<f32>());
    let (x, y) = (rng.gen_range(0.0..0.8f32), rng.gen_range(0.0..0.8f32));
    PersonInput::new(c, [x, y, x + 0.15, y + 0.2]).unwrap()
}

fn target(rng: &mut ChaCha8Rng) -> PersonTarget {
    if rng.gen_bool(0.25) {
        PersonTarget { inout: false, points: vec![] }
    } else {
        let k = rng.gen_range(1..=3);
        PersonTarget { inout: true, points: (0..k).map(|_| [rng.gen(), rng.gen()]).collect() }
    }
}

fn model(variant: Variant, seed: u64) -> GazeModel<f64> {
    let mut m = GazeModel::<f64>::new(ModelConfig::micro(variant), seed).unwrap();
    condition_for_check(&mut m, seed);
    m
}

fn loss_and_grads(m: &GazeModel<f64>, s: &Sample, slots: usize) -> (f64, Vec<Vec<f64>>) {
    let mut cx = Ctx::new(&m.params, true);
    let w = LossWeights::for_variant(m.cfg.variant);
    let l = sample_loss(m, &mut cx, s, slots, &w, None).unwrap();
    let v = cx.tape.value(l).data()[0];
    cx.tape.backward(l).unwrap();
    (v, cx.param_grads())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reordering_people_reorders_predictions(seed in any::<u64>(), k in 2usize..=4) {
        let mut cfg = ModelConfig::micro(Variant::Point);
        cfg.n_persons = 4;
        let mut m = GazeModel::<f64>::new(cfg.clone(), seed).unwrap();
        condition_for_check(&mut m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.image_size;
        let image = Tensor::from_fn(vec![s, s, 3], |_| rng.gen::<f32>());
        let persons: Vec<_> = (0..k).map(|_| person(&mut rng, cfg.crop_size)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let swapped: Vec<_> = perm.iter().map(|&i| persons[i].clone()).collect();
        let a = m.predict(&SceneInput { image: image.clone(), persons }).unwrap();
        let b = m.predict(&SceneInput { image, persons: swapped }).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..2 {
                prop_assert!((b[i].point[c] - a[p].point[c]).abs() < 1e-10);
                prop_assert!((b[i].gaze_vector[c] - a[p].gaze_vector[c]).abs() < 1e-10);
            }
            prop_assert!((b[i].inout_prob - a[p].inout_prob).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_ignores_person_order(seed in any::<u64>()) {
        let m = model(Variant::Point, seed);
        let cfg = m.cfg.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let s = cfg.image_size;
        let image = Tensor::from_fn(vec![s, s, 3], |_| rng.gen::<f32>());
        let persons: Vec<_> = (0..cfg.n_persons).map(|_| person(&mut rng, cfg.crop_size)).collect();
        let targets: Vec<_> = (0..cfg.n_persons).map(|_| target(&mut rng)).collect();
        let mut order: Vec<usize> = (0..cfg.n_persons).collect();
        order.shuffle(&mut rng);
        let a = Sample { scene: SceneInput { image: image.clone(), persons: persons.clone() }, targets: targets.clone() };
        let b = Sample {
            scene: SceneInput { image, persons: order.iter().map(|&i| persons[i].clone()).collect() },
            targets: order.iter().map(|&i| targets[i].clone()).collect(),
        };
        let (la, ga) = loss_and_grads(&m, &a, cfg.n_persons);
        let (lb, gb) = loss_and_grads(&m, &b, cfg.n_persons);
        prop_assert!((la - lb).abs() <= 1e-10 * la.abs().max(1.0));
        for (x, y) in ga.iter().flatten().zip(gb.iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn token_count_is_image_plus_people_plus_one(
        patch in prop::sample::select(vec![4usize, 8, 16]),
        grid in 1usize..=4,
        capacity in 1usize..=6,
        real in 0usize..=6,
        seed in any::<u64>(),
    ) {
        let mut cfg = ModelConfig::micro(Variant::Point);
        cfg.patch = patch;
        cfg.image_size = patch * grid;
        cfg.depth = 1;
        cfg.n_persons = capacity;
        let m = GazeModel::<f32>::new(cfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Tensor::from_fn(vec![cfg.image_size, cfg.image_size, 3], |_| rng.gen::<f32>());
        let persons: Vec<_> = (0..real.min(capacity)).map(|_| person(&mut rng, cfg.crop_size)).collect();
        let mut cx = Ctx::new(&m.params, false);
        let f = m.forward(&mut cx, &SceneInput { image, persons }, capacity).unwrap();
        let n_t = grid * grid + capacity + 1;
        prop_assert_eq!(cx.tape.shape(f.input.x), &[n_t, cfg.dim][..]);
        prop_assert_eq!(cx.tape.shape(f.encoded.x_out.x), &[n_t, cfg.dim][..]);
        prop_assert_eq!(cfg.n_tokens(), n_t);
    }

    #[test]
    fn masked_slot_targets_never_reach_the_gradient(seed in any::<u64>(), out_of_frame in any::<bool>()) {
        let m = model(Variant::Point, seed);
        let cfg = m.cfg.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let s = cfg.image_size;
        let image = Tensor::from_fn(vec![s, s, 3], |_| rng.gen::<f32>());
        let mut persons: Vec<_> = (0..cfg.n_persons).map(|_| person(&mut rng, cfg.crop_size)).collect();
        let first = if out_of_frame {
            PersonTarget { inout: false, points: vec![] }
        } else {
            PersonTarget { inout: true, points: vec![[0.3, 0.6]] }
        };
        persons[1].is_pad = true;
        let with = |t: PersonTarget| Sample {
            scene: SceneInput { image: image.clone(), persons: persons.clone() },
            targets: vec![first.clone(), t],
        };
        let (la, ga) = loss_and_grads(&m, &with(target(&mut rng)), cfg.n_persons);
        let (lb, gb) = loss_and_grads(&m, &with(target(&mut rng)), cfg.n_persons);
        prop_assert_eq!(la, lb);
        prop_assert_eq!(ga, gb);
    }
}
