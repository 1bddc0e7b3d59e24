//! Adam with bias-corrected moments.

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates per parameter plus the step count.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One update of every parameter that has a gradient. Frozen parameters
/// are never touched. Nothing is modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &[(ParamId, Tensor)], state: &mut AdamState, lr: f64) -> Result<()> {
    for (id, g) in grads {
        let p = store.get(*id);
        if g.shape() != p.value.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let n = store.len();
    state.m.resize(n, None);
    state.v.resize(n, None);
    for (id, g) in grads {
        if store.get(*id).frozen {
            continue;
        }
        let i = id.index();
        let m = state.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let value = store.value_mut(*id);
        for (((x, &gk), mk), vk) in value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mk = BETA1 * *mk + (1.0 - BETA1) * gk;
            *vk = BETA2 * *vk + (1.0 - BETA2) * gk * gk;
            let m_hat = *mk / c1;
            let v_hat = *vk / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::vector(vec![1.0, -2.0, 0.5]), false).unwrap();
        let b = s.add("b", Tensor::vector(vec![1.0, -2.0, 0.5]), false).unwrap();
        let f = s.add("frozen", Tensor::vector(vec![3.0]), true).unwrap();
        (s, a, b, f)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, a, _, _) = store();
        let mut st = AdamState::new();
        let g = Tensor::vector(vec![0.3, -5.0, 1e-3]);
        adam_step(&mut s, &[(a, g)], &mut st, 1e-3).unwrap();
        let moved: Vec<f64> = s.value(a).data().iter().zip([1.0, -2.0, 0.5]).map(|(x, o)| x - o).collect();
        assert!((moved[0] + 1e-3).abs() < 1e-7);
        assert!((moved[1] - 1e-3).abs() < 1e-7);
        assert!((moved[2] + 1e-3).abs() < 1e-5);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, a, _, _) = store();
        let before = s.value(a).clone();
        let mut st = AdamState::new();
        adam_step(&mut s, &[(a, Tensor::zeros(&[3]))], &mut st, 1e-3).unwrap();
        assert_eq!(s.value(a), &before);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let (mut s, a, b, _) = store();
        let mut st = AdamState::new();
        let g = Tensor::vector(vec![0.1, 0.2, -0.3]);
        for _ in 0..3 {
            adam_step(&mut s, &[(a, g.clone()), (b, g.clone())], &mut st, 1e-2).unwrap();
        }
        assert_eq!(s.value(a), s.value(b));
    }

    #[test]
    fn nan_names_parameter_and_leaves_values() {
        let (mut s, a, b, _) = store();
        let before = s.value(a).clone();
        let mut st = AdamState::new();
        let err = adam_step(
            &mut s,
            &[(a, Tensor::vector(vec![1.0; 3])), (b, Tensor::vector(vec![f64::NAN, 0.0, 0.0]))],
            &mut st,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "b"));
        assert_eq!(s.value(a), &before);
    }

    #[test]
    fn frozen_untouched() {
        let (mut s, _, _, f) = store();
        let mut st = AdamState::new();
        adam_step(&mut s, &[(f, Tensor::vector(vec![1.0]))], &mut st, 1e-1).unwrap();
        assert_eq!(s.value(f).data(), &[3.0]);
    }

    #[test]
    fn clipping() {
        let (_, a, b, _) = store();
        let mut g = vec![(a, Tensor::vector(vec![3.0, 0.0, 0.0])), (b, Tensor::vector(vec![4.0, 0.0, 0.0]))];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].1.data()[0], 3.0);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[1].1.data()[0] - 0.8).abs() < 1e-15);
    }
}
