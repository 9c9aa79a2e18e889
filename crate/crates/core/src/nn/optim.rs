use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::model::Param;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const NADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NadamState {
    pub m: Vec<Array2<f64>>,
    pub n: Vec<Array2<f64>>,
    pub t: u64,
}

impl NadamState {
    pub fn new(params: &[Param]) -> NadamState {
        let zeros = || params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        NadamState { m: zeros(), n: zeros(), t: 0 }
    }
}

/// One Nadam step (Dozat's formulation without a momentum schedule):
///
/// ```text
/// m ← β1·m + (1−β1)·g          n ← β2·n + (1−β2)·g²
/// m̂ = β1·m / (1−β1^(t+1)) + (1−β1)·g / (1−β1^t)
/// n̂ = n / (1−β2^t)
/// θ ← θ − lr·m̂ / (√n̂ + ε)
/// ```
pub fn nadam_step(params: &mut [Param], grads: &[Array2<f64>], state: &mut NadamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state matches parameters");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c1_next = 1.0 - BETA1.powi(t + 1);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, n)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.n.iter_mut())) {
        Zip::from(&mut p.value).and(g).and(m).and(n).for_each(|w, &g, m, n| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *n = BETA2 * *n + (1.0 - BETA2) * g * g;
            let m_hat = BETA1 * *m / c1_next + (1.0 - BETA1) * g / c1;
            let n_hat = *n / c2;
            *w -= lr * m_hat / (n_hat.sqrt() + NADAM_EPS);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Param> {
        vec![Param { name: "w".into(), value: Array2::from_elem((1, 1), v), regularized: true }]
    }

    /// Independent scalar evaluation of the same update.
    fn oracle(theta: f64, gs: &[f64], lr: f64) -> Vec<f64> {
        let (mut m, mut n, mut th) = (0.0, 0.0, theta);
        let mut out = Vec::new();
        for (k, &g) in gs.iter().enumerate() {
            let t = (k + 1) as f64;
            m = 0.9 * m + 0.1 * g;
            n = 0.999 * n + 0.001 * g * g;
            let mh = 0.9 * m / (1.0 - 0.9f64.powf(t + 1.0)) + 0.1 * g / (1.0 - 0.9f64.powf(t));
            let nh = n / (1.0 - 0.999f64.powf(t));
            th -= lr * mh / (nh.sqrt() + 1e-8);
            out.push(th);
        }
        out
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(0.7);
        let mut s = NadamState::new(&p);
        nadam_step(&mut p, &[Array2::zeros((1, 1))], &mut s, 1e-3);
        assert_eq!(p[0].value[[0, 0]], 0.7);
    }

    #[test]
    fn first_step_matches_oracle() {
        let mut p = scalar(0.0);
        let mut s = NadamState::new(&p);
        nadam_step(&mut p, &[Array2::ones((1, 1))], &mut s, 1e-3);
        let want = oracle(0.0, &[1.0], 1e-3)[0];
        assert!((p[0].value[[0, 0]] - want).abs() < 1e-12);
        // m̂ = 0.09/0.19 + 0.1/0.1, n̂ = 1
        let hand = -1e-3 * (0.09 / 0.19 + 1.0) / (1.0 + 1e-8);
        assert!((want - hand).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_shrink() {
        let mut p = scalar(0.0);
        let mut s = NadamState::new(&p);
        let mut prev = 0.0;
        let mut steps = Vec::new();
        for _ in 0..2 {
            nadam_step(&mut p, &[Array2::ones((1, 1))], &mut s, 1e-3);
            steps.push((p[0].value[[0, 0]] - prev).abs());
            prev = p[0].value[[0, 0]];
        }
        let o = oracle(0.0, &[1.0, 1.0], 1e-3);
        assert!((p[0].value[[0, 0]] - o[1]).abs() < 1e-12);
        assert!(steps[1] < steps[0]);
    }
}
