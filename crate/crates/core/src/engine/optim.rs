use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::net::ModelParams;
use crate::tensor::Tensor;

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// `lr0 * (1 - epoch / epochs)`: reaches zero just after the last epoch.
    Linear,
    Constant,
}

impl LrSchedule {
    pub fn rate(self, lr0: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr0,
            LrSchedule::Linear => lr0 * (1.0 - epoch as f64 / epochs.max(1) as f64).max(0.0),
        }
    }
}

/// Adam with bias correction, one instance per model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    skipped: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one update from the gradient buffers of `params`. Returns
    /// `false` (leaving everything untouched) when a gradient is not finite.
    pub fn step(&mut self, params: &mut ModelParams, lr: f64, clamp: Option<f64>) -> bool {
        if !params.grads_finite() {
            self.skipped += 1;
            log::warn!(
                "{} model: non-finite gradient, step skipped ({} so far)",
                params.kind().name(),
                self.skipped
            );
            return false;
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, value, grad) in params.values_and_grads_mut() {
            let m = self.m.get_mut(name).expect("moment buffers mirror parameters");
            let v = self.v.get_mut(name).expect("moment buffers mirror parameters");
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((x, &g), (mi, vi)) in it {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
                if let Some(c) = clamp {
                    *x = x.clamp(-c, c);
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{CoordInit, GradMap, ModelKind, ModelShape};

    fn tiny() -> ModelParams {
        let s = ModelShape {
            kind: ModelKind::Pocket,
            layers: 1,
            hidden: 2,
            d_l: 1,
            d_p: 1,
        };
        ModelParams::init(s, 1, CoordInit::default()).unwrap()
    }

    fn fill_grads(p: &mut ModelParams, g: f64) {
        let gm: GradMap = p
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::from_fn(t.rows(), t.cols(), |_, _| g)))
            .collect();
        p.zero_grad();
        p.accumulate_grads(&gm, 1.0).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        let before = p.clone();
        let mut opt = Adam::new(&p);
        assert!(opt.step(&mut p, 1e-3, None));
        assert_eq!(p.values(), before.values());
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = tiny();
        let before = p.clone();
        fill_grads(&mut p, 0.37);
        let mut opt = Adam::new(&p);
        opt.step(&mut p, 1e-2, None);
        let g: f64 = 0.37;
        let want = -1e-2 * g / (g.abs() + 1e-8);
        for (k, t) in p.iter() {
            for (a, b) in t.data().iter().zip(before.get(k).unwrap().data()) {
                approx::assert_relative_eq!(a - b, want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = tiny();
        let mut opt = Adam::new(&p);
        let mut last = p.get("head.b").unwrap().item();
        for _ in 0..50 {
            fill_grads(&mut p, -2.0);
            opt.step(&mut p, 1e-3, None);
            let now = p.get("head.b").unwrap().item();
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = tiny();
        fill_grads(&mut p, f64::NAN);
        let before = p.values().clone();
        let mut opt = Adam::new(&p);
        assert!(!opt.step(&mut p, 1e-3, None));
        assert_eq!(opt.skipped(), 1);
        assert_eq!(opt.steps(), 0);
        assert_eq!(p.values(), &before);
    }

    #[test]
    fn linear_schedule_decays_to_zero() {
        assert_eq!(LrSchedule::Linear.rate(1.0, 0, 4), 1.0);
        assert_eq!(LrSchedule::Linear.rate(1.0, 2, 4), 0.5);
        assert_eq!(LrSchedule::Linear.rate(1.0, 4, 4), 0.0);
        assert_eq!(LrSchedule::Constant.rate(0.3, 9, 4), 0.3);
    }
}
