use super::{Gradients, ModelParams, NnError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self { first: ModelParams::zeros(), second: ModelParams::zeros(), step: 0 }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected ADAM update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if params.num_params() != grads.num_params() || params.num_params() != state.first.num_params() {
        return Err(NnError::Shape { what: "adam", expected: params.num_params(), actual: grads.num_params() });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grads = grads.tensors();
    let firsts = state.first.tensors_mut();
    let seconds = state.second.tensors_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(firsts).zip(seconds) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn filled(v: f64) -> ModelParams {
        let mut g = ModelParams::zeros();
        for (i, (_, t)) in g.tensors_mut().into_iter().enumerate() {
            t.fill(if i % 2 == 0 { v } else { -v });
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = init_params(1);
        let before = p.clone();
        let mut s = AdamState::new();
        adam_step(&mut p, &ModelParams::zeros(), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // Step 1: m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε).
        let cfg = AdamConfig::default();
        for g in [0.5, 3.0, 1e-3] {
            let mut p = init_params(2);
            let before = p.clone();
            let grads = filled(g);
            adam_step(&mut p, &grads, &mut AdamState::new(), &cfg).unwrap();
            for (((_, a), (_, b)), (_, gr)) in
                p.tensors().iter().zip(before.tensors().iter()).zip(grads.tensors().iter())
            {
                for i in 0..a.len() {
                    let want = -cfg.lr * gr[i].signum();
                    let tol = cfg.lr * (cfg.epsilon / g.abs() + 1e-12);
                    assert!((a[i] - b[i] - want).abs() <= tol, "g={g}");
                }
            }
        }
    }

    #[test]
    fn two_steps_are_reproducible() {
        let run = || {
            let mut p = init_params(3);
            let mut s = AdamState::new();
            let cfg = AdamConfig::default();
            adam_step(&mut p, &filled(0.2), &mut s, &cfg).unwrap();
            adam_step(&mut p, &filled(-0.1), &mut s, &cfg).unwrap();
            (p, s)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
        assert!(s1.second.tensors().iter().all(|(_, t)| t.iter().all(|&v| v >= 0.0)));
    }
}
