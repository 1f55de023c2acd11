//! AdamW with decoupled weight decay, warmup + cosine restarts, clipping.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn from_config(c: &TrainConfig) -> Self {
        AdamW {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// Moment buffers in parameter-store order, plus the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        OptimizerState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn check_matches(&self, params: &ParamStore<T>) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint("optimizer moments do not match the parameters".into()))
        }
    }
}

/// One update: `p ← p − lr·wd·p`, then the bias-corrected Adam step on the
/// moments of `grads`.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    h: &AdamW,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    let decay = 1.0 - lr * h.weight_decay;
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let g = &grads[k];
        if g.len() != p.len() {
            return Err(Error::Contract(format!("gradient {k} has {} entries, parameter {}", g.len(), p.len())));
        }
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for i in 0..p.len() {
            let gi = g[i].as_f64();
            let mi = h.beta1 * m[i].as_f64() + (1.0 - h.beta1) * gi;
            let vi = h.beta2 * v[i].as_f64() + (1.0 - h.beta2) * gi * gi;
            m[i] = T::from_f64_lossy(mi);
            v[i] = T::from_f64_lossy(vi);
            let update = (mi / c1) / ((vi / c2).sqrt() + h.eps);
            p[i] = T::from_f64_lossy(p[i].as_f64() * decay - lr * update);
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    grads.iter().flatten().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g = T::from_f64_lossy(g.as_f64() * s));
    }
    norm
}

/// Linear warmup, then cosine annealing with warm restarts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub lr_min: f64,
    pub warmup: u64,
    pub period: u64,
    pub mult: u64,
}

impl LrSchedule {
    pub fn from_config(c: &TrainConfig) -> Self {
        LrSchedule {
            base_lr: c.base_lr,
            lr_min: c.lr_min,
            warmup: c.warmup_steps,
            period: c.restart_period.max(1),
            mult: c.restart_mult.max(1),
        }
    }

    /// Position inside the current restart cycle: `(t, T_i)`.
    pub fn cycle(&self, step: u64) -> (u64, u64) {
        let mut t = step.saturating_sub(self.warmup);
        let mut len = self.period;
        while t >= len {
            t -= len;
            len = len.saturating_mul(self.mult);
        }
        (t, len)
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.base_lr * step as f64 / self.warmup as f64;
        }
        let (t, len) = self.cycle(step);
        let c = (std::f64::consts::PI * t as f64 / len as f64).cos();
        self.lr_min + (self.base_lr - self.lr_min) * (1.0 + c) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_f64([vals.len()], vals).unwrap());
        s
    }

    const H: AdamW = AdamW {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };

    #[test]
    fn zero_grads_without_decay_leave_params() {
        let mut s = store(&[1.0, -2.0]);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &[vec![0.0, 0.0]], &mut st, 0.1, &H).unwrap();
        assert_eq!(s.iter().next().unwrap().1.data(), [1.0, -2.0]);
    }

    #[test]
    fn zero_grads_with_decay_scale_exactly() {
        let mut s = store(&[1.0, -2.0]);
        let mut st = OptimizerState::new(&s);
        let h = AdamW { weight_decay: 0.01, ..H };
        adamw_step(&mut s, &[vec![0.0, 0.0]], &mut st, 0.1, &h).unwrap();
        let k = 1.0 - 0.1 * 0.01;
        assert_eq!(s.iter().next().unwrap().1.data(), [k, -2.0 * k]);
    }

    #[test]
    fn scalar_quadratic_matches_reference_trace() {
        // f(p) = p²/2, so the gradient is p; reference written out longhand.
        let (lr, wd) = (0.05, 0.01);
        let h = AdamW { weight_decay: wd, ..H };
        let mut s = store(&[1.0]);
        let mut st = OptimizerState::new(&s);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = s.iter().next().unwrap().1.data()[0];
            adamw_step(&mut s, &[vec![g]], &mut st, lr, &h).unwrap();
            let gr = p;
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            p = p - lr * wd * p - lr * mhat / (vhat.sqrt() + 1e-8);
            let got = s.iter().next().unwrap().1.data()[0];
            assert!((got - p).abs() <= 1e-12 * p.abs().max(1.0), "step {t}: {got} vs {p}");
        }
        assert!(p.abs() < 0.5);
    }

    fn sched() -> LrSchedule {
        LrSchedule {
            base_lr: 1e-3,
            lr_min: 1e-6,
            warmup: 10,
            period: 100,
            mult: 2,
        }
    }

    #[test]
    fn schedule_landmarks() {
        let s = sched();
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(10), 1e-3);
        assert!((s.lr(5) - 5e-4).abs() < 1e-15);
        assert!((s.lr(60) - (1e-3 + 1e-6) / 2.0).abs() < 1e-15);
        // restart after 100 steps, next cycle is 200 long
        assert!(s.lr(109) < 1e-5);
        assert_eq!(s.lr(110), 1e-3);
        assert!((s.lr(210) - (1e-3 + 1e-6) / 2.0).abs() < 1e-15);
        assert_eq!(s.lr(310), 1e-3);
        assert_eq!(s.cycle(310), (0, 400));
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(g in proptest::collection::vec(-100.0f64..100.0, 1..50), max in 0.01f64..10.0) {
            let mut grads = vec![g.clone(), g];
            let before = clip_grad_norm(&mut grads, max);
            let after = grad_norm(&grads);
            prop_assert!(after <= max + 1e-6);
            if before <= max { prop_assert!((after - before).abs() < 1e-12); }
        }

        #[test]
        fn lr_stays_in_range(step in 0u64..100_000) {
            let s = sched();
            let lr = s.lr(step);
            prop_assert!((0.0..=s.base_lr).contains(&lr));
            if step >= s.warmup { prop_assert!(lr >= s.lr_min); }
        }
    }
}
