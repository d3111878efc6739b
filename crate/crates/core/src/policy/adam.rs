use serde::{Deserialize, Serialize};

use super::{Gradients, PolicyError, PolicyParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clip the global gradient norm to this value before the update.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            errs.push(("lr".into(), "must be finite and non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push((name.into(), "must lie in [0, 1)".into()));
            }
        }
        if !(self.eps > 0.0) {
            errs.push(("eps".into(), "must be positive".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                errs.push(("max_grad_norm".into(), "must be positive".into()));
            }
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        AdamState {
            m: vec![0.0; params.n_params()],
            v: vec![0.0; params.n_params()],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step. Bumps the parameter version.
pub fn apply_update(
    params: &mut PolicyParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), PolicyError> {
    let n = params.n_params();
    for found in [grads.0.len(), state.m.len()] {
        if found != n {
            return Err(PolicyError::ShapeMismatch { expected: n, found });
        }
    }
    let clip = match cfg.max_grad_norm {
        Some(c) => {
            let norm = grads.norm();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let data = params.as_mut_slice();
    for i in 0..n {
        let g = grads.0[i] * clip;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    params.bump_version();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelConfig;
    use crate::rng;

    fn p() -> PolicyParams {
        PolicyParams::init(ModelConfig::micro(), &mut rng::stream(1, &[])).unwrap()
    }

    #[test]
    fn zero_lr_and_zero_grad_leave_params_unchanged() {
        let mut a = p();
        let before = a.clone_params();
        let mut st = AdamState::new(&a);
        let mut g = Gradients::zeros_like(&a);
        g.0.iter_mut().enumerate().for_each(|(i, x)| *x = (i % 7) as f64 - 3.0);
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        apply_update(&mut a, &g, &mut st, &cfg).unwrap();
        assert_eq!(a.as_slice(), before.as_slice());
        assert_eq!(a.version(), 1);

        let mut b = p();
        let mut st = AdamState::new(&b);
        let zero = Gradients::zeros_like(&b);
        apply_update(&mut b, &zero, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(b.as_slice(), before.as_slice());
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut a = p();
        let before = a.clone_params();
        let mut st = AdamState::new(&a);
        let mut g = Gradients::zeros_like(&a);
        g.0[0] = 2.5;
        g.0[1] = -0.01;
        let cfg = AdamConfig::default();
        apply_update(&mut a, &g, &mut st, &cfg).unwrap();
        // With bias correction the first step is lr * g / (|g| + eps).
        let want0 = before.as_slice()[0] - cfg.lr * 2.5 / (2.5 + cfg.eps);
        let want1 = before.as_slice()[1] + cfg.lr * 0.01 / (0.01 + cfg.eps);
        assert!((a.as_slice()[0] - want0).abs() < 1e-15);
        assert!((a.as_slice()[1] - want1).abs() < 1e-15);
        assert_eq!(a.as_slice()[2], before.as_slice()[2]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut a = p();
        let mut st = AdamState::new(&a);
        let g = Gradients(vec![0.0; 3]);
        assert!(matches!(
            apply_update(&mut a, &g, &mut st, &AdamConfig::default()),
            Err(PolicyError::ShapeMismatch { found: 3, .. })
        ));
        assert_eq!(a.version(), 0);
    }
}
