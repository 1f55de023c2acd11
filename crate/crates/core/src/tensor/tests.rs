use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn named(name: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (name.to_string(), t)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(t64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
    let y = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0, 5.0, 6.0]);

    let a = tape.constant(t64(&[1, 2], &[1.0, 2.0]));
    let c = tape.constant(t64(&[2, 1], &[3.0, 4.0]));
    let y = tape.matmul(a, c).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([4, 5]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let report = grad_check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        &[named("a", random(&[4, 5], 1)), named("b", random(&[5, 3], 2))],
        &GradCheck {
            tol: 1e-6,
            ..GradCheck::default()
        },
    );
    assert!(report.passed(), "{report}");
}

#[test]
fn batched_matmul_broadcasts_shared_rhs() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(random(&[3, 2, 4], 3));
    let b = tape.constant(random(&[4, 5], 4));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(y), &[3, 2, 5]);
    let (av, bv, yv) = (tape.value(a), tape.value(b), tape.value(y));
    for bi in 0..3 {
        for i in 0..2 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|k| av.at(&[bi, i, k]) * bv.at(&[k, j])).sum();
                assert!((yv.at(&[bi, i, j]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t64(&[3], &[0.0, 0.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(t64(&[2], &[1000.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    let v = tape.value(y).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-12);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let w = random(&[7], 9);
    let report = grad_check(
        |t, v| {
            let s = t.softmax(v[0])?;
            let w = t.constant(w.clone());
            let p = t.mul(s, w)?;
            t.sum(p)
        },
        &[named("x", random(&[7], 5))],
        &GradCheck {
            tol: 1e-5,
            ..GradCheck::default()
        },
    );
    assert!(report.passed(), "{report}");
}

#[test]
fn softmax_rejects_empty_axis() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::scalar(1.0));
    assert!(matches!(tape.softmax(x), Err(Error::Dimension { .. })));
}

#[test]
fn layernorm_examples() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full([4], 1.0));
    let b = tape.constant(Tensor::zeros([4]));
    let x = tape.constant(t64(&[4], &[5.0; 4]));
    let y = tape.layernorm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));

    let g = tape.constant(Tensor::full([2], 1.0));
    let b = tape.constant(Tensor::zeros([2]));
    let x = tape.constant(t64(&[2], &[1.0, 3.0]));
    let y = tape.layernorm(x, g, b, 1e-5).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-3 && (v[1] - 1.0).abs() < 1e-3);
}

#[test]
fn layernorm_standardizes_rows() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full([16], 1.0));
    let b = tape.constant(Tensor::zeros([16]));
    let x = tape.constant(random(&[5, 16], 11));
    let y = tape.layernorm(x, g, b, 1e-12).unwrap();
    for row in tape.value(y).data().chunks(16) {
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn layernorm_gradient_matches_finite_differences() {
    let w = random(&[2, 8], 21);
    let report = grad_check(
        |t, v| {
            let y = t.layernorm(v[0], v[1], v[2], 1e-5)?;
            let w = t.constant(w.clone());
            let p = t.mul(y, w)?;
            t.sum(p)
        },
        &[
            named("x", random(&[2, 8], 12)),
            named("gamma", random(&[8], 13)),
            named("beta", random(&[8], 14)),
        ],
        &GradCheck {
            tol: 1e-5,
            ..GradCheck::default()
        },
    );
    assert!(report.passed(), "{report}");
}

#[test]
fn conv2d_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let w = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).item(), 9.0);

    let img = random(&[1, 1, 5, 6], 3);
    let x = tape.constant(img.clone());
    let mut k = Tensor::zeros([1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let w = tape.constant(k);
    let y = tape.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(tape.value(y), &img);
}

#[test]
fn conv2d_rejects_fractional_output() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros([1, 1, 6, 6]));
    let w = tape.constant(Tensor::zeros([1, 1, 3, 3]));
    assert!(matches!(tape.conv2d(x, w, None, 2, 0), Err(Error::Config(_))));
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let report = grad_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        &[
            named("x", random(&[2, 3, 8, 8], 31)),
            named("w", random(&[4, 3, 3, 3], 32)),
            named("b", random(&[4], 33)),
        ],
        &GradCheck::default(),
    );
    assert!(report.passed(), "{report}");

    let strided = grad_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        &[
            named("x", random(&[2, 3, 8, 8], 34)),
            named("w", random(&[4, 3, 4, 4], 35)),
            named("b", random(&[4], 36)),
        ],
        &GradCheck::default(),
    );
    assert!(strided.passed(), "{strided}");
}

#[test]
fn backward_linear_and_quadratic_functionals() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&[3, 4], 7));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

    let mut tape = Tape::<f64>::new();
    let xv = random(&[2, 5], 8);
    let x = tape.param(xv.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    let half = tape.scale(s, 0.5).unwrap();
    tape.backward(half).unwrap();
    assert!(tape.grad(x).unwrap().max_abs_diff(&xv) < 1e-15);
}

#[test]
fn backward_accumulates_until_zeroed() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::full([3], 2.0));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 2.0));
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::zeros([2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_visits_nodes_in_reverse_execution_order() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&[2, 2], 1));
    let a = tape.gelu(x).unwrap();
    let b = tape.matmul(a, x).unwrap();
    let c = tape.softmax(b).unwrap();
    let d = tape.sum(c).unwrap();
    tape.backward(d).unwrap();
    let order = tape.last_backward_order();
    assert!(order.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(order.first(), Some(&d.index()));
    assert_eq!(order.last(), Some(&x.index()));
}

#[test]
fn grad_check_passes_trivial_and_chain() {
    let report = grad_check(|t, v| t.sum(v[0]), &[named("x", random(&[3, 3], 2))], &GradCheck::default());
    assert!(report.passed());
    assert!(report.max_rel_err() < 1e-9);

    let report = grad_check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let s = t.softmax(y)?;
            let s2 = t.mul(s, s)?;
            t.sum(s2)
        },
        &[named("a", random(&[3, 3], 3)), named("b", random(&[3, 3], 4))],
        &GradCheck::default(),
    );
    assert!(report.passed(), "{report}");
}

#[test]
fn grad_check_catches_dropped_transpose() {
    let report = grad_check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let s = t.softmax(y)?;
            let s2 = t.mul(s, s)?;
            t.sum(s2)
        },
        &[named("a", random(&[3, 3], 3)), named("b", random(&[3, 3], 4))],
        &GradCheck {
            fault: Some(GradFault::MatmulDropTranspose),
            ..GradCheck::default()
        },
    );
    assert!(!report.passed());
    let bad: Vec<_> = report.failing().map(|p| p.name.as_str()).collect();
    assert_eq!(bad, vec!["a"]);
    assert!(report.params[0].max_rel_err > 1e-2);
}

#[test]
fn grad_check_reports_non_finite_intermediate() {
    let report = grad_check(
        |t, v| {
            let l = t.log(v[0])?;
            t.sum(l)
        },
        &[named("x", t64(&[2], &[1.0, -1.0]))],
        &GradCheck::default(),
    );
    assert!(!report.passed());
    assert!(report.failure.as_deref().unwrap().contains("log"));
}

#[test]
fn l2_normalize_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t64(&[2, 2], &[3.0, 4.0, 0.0, -2.0]));
    let y = tape.l2_normalize(x, 1e-8).unwrap();
    assert_eq!(tape.value(y).data(), &[0.6, 0.8, 0.0, -1.0]);
    let z = tape.constant(Tensor::zeros([2]));
    let y = tape.l2_normalize(z, 1e-8).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn bilinear_resize_identity_and_constant() {
    let mut tape = Tape::<f64>::new();
    let img = random(&[2, 5, 7], 5);
    let x = tape.constant(img.clone());
    let same = tape.bilinear_resize(x, 5, 7).unwrap();
    assert!(tape.value(same).max_abs_diff(&img) < 1e-15);
    let c = tape.constant(Tensor::full([1, 3, 3], 0.25));
    let up = tape.bilinear_resize(c, 8, 5).unwrap();
    assert!(tape.value(up).data().iter().all(|v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn concat_then_slice_recovers_parts() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(random(&[2, 3], 1).cast());
    let b = tape.constant(random(&[4, 3], 2).cast());
    let c = tape.concat(&[a, b], 0).unwrap();
    let back = tape.slice(c, 0, 2, 6).unwrap();
    assert_eq!(tape.value(back), tape.value(b));
}

#[test]
fn check_finite_flags_the_op() {
    let mut tape = Tape::<f32>::new();
    tape.set_check_finite(true);
    let x = tape.constant(Tensor::zeros([2]));
    let err = tape.log(x).unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "log", .. }));
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(random(&[2, 3, 9, 9], 4).cast());
        let w = tape.constant(random(&[5, 3, 3, 3], 5).cast());
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        let y = tape.gelu(y).unwrap();
        let y = tape.bilinear_resize(y, 13, 4).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([3, 4], vals).unwrap());
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn reshape_transpose_slice_round_trip(
        dims in (1usize..5, 1usize..5, 1usize..5),
        seed in 0u64..1000,
    ) {
        let (a, b, c) = dims;
        let src: Tensor<f32> = random(&[a, b, c], seed).cast();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(src.clone());
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        prop_assert_eq!(tape.value(back), &src);
        let t = tape.transpose(x).unwrap();
        let tt = tape.transpose(t).unwrap();
        prop_assert_eq!(tape.value(tt), &src);
        let r = tape.reshape(x, &[a * b * c]).unwrap();
        let rr = tape.reshape(r, &[a, b, c]).unwrap();
        prop_assert_eq!(tape.value(rr), &src);
        let parts: Vec<Var> = (0..b).map(|i| tape.slice(x, 1, i, i + 1).unwrap()).collect();
        let joined = tape.concat(&parts, 1).unwrap();
        prop_assert_eq!(tape.value(joined), &src);
    }
}
