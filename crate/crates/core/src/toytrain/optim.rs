//! AdamW with decoupled weight decay and the MultiStepLR schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 1e-4,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One update at 1-based `step`:
///
/// ```text
/// m = b1 m + (1 - b1) g
/// v = b2 v + (1 - b2) g^2
/// p = p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// ```
///
/// `label` names parameter `i` in the error raised for a non-finite gradient; nothing is
/// updated in that case.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hp: &AdamHyper,
    step: usize,
    label: impl Fn(usize) -> String,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adamw: {} params, {} grads, state {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if step == 0 {
        return Err(Error::Config("adamw step index starts at 1".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for {}", label(i))));
    }
    let c1 = 1.0 - hp.beta1.powi(step as i32);
    let c2 = 1.0 - hp.beta2.powi(step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hp.lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * *p);
    }
    Ok(())
}

/// `base_lr * gamma^k` where `k` counts the milestones `<= step`.
pub fn multistep_lr(base_lr: f64, milestones: &[usize], gamma: f64, step: usize) -> f64 {
    let k = milestones.iter().filter(|&&m| m <= step).count();
    base_lr * gamma.powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(lr: f64, wd: f64) -> AdamHyper {
        AdamHyper { lr, weight_decay: wd, ..Default::default() }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[1.0], &mut s, &hp(0.1, 0.0), 1, |i| i.to_string()).unwrap();
        // m_hat = 1, v_hat = 1: p = -0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert_eq!(p[0], -0.1 / (1.0 + 1e-8));
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = [0.3, -1.2];
        let mut s = AdamState::new(2);
        for step in 1..5 {
            adamw_step(&mut p, &[0.0, 0.0], &mut s, &hp(0.1, 0.0), step, |i| i.to_string()).unwrap();
        }
        assert_eq!(p, [0.3, -1.2]);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut p = [2.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[0.0], &mut s, &hp(0.1, 0.5), 1, |i| i.to_string()).unwrap();
        assert_eq!(p[0], 2.0 - 0.1 * 0.5 * 2.0);
        assert!((p[0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = [0.0, 0.0];
        let mut s = AdamState::new(2);
        let err = adamw_step(&mut p, &[0.0, f64::NAN], &mut s, &hp(0.1, 0.0), 1, |i| format!("w{i}")).unwrap_err();
        assert!(err.to_string().contains("w1"));
        assert!(adamw_step(&mut p, &[0.0, 0.0], &mut s, &hp(0.1, 0.0), 0, |i| i.to_string()).is_err());
    }

    #[test]
    fn schedule() {
        let m = [100, 200];
        assert_eq!(multistep_lr(1e-3, &m, 0.5, 50), 1e-3);
        assert_eq!(multistep_lr(1e-3, &m, 0.5, 100), 0.5e-3);
        assert_eq!(multistep_lr(1e-3, &m, 0.5, 150), 0.5e-3);
        assert_eq!(multistep_lr(1e-3, &m, 0.5, 250), 0.25e-3);
    }
}
