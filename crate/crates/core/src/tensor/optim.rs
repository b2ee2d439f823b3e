//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::Invalid(format!("adam config {self:?}")))
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update. Parameters whose gradient is `None` are left untouched
/// and keep their moments.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    cfg.validate()?;
    if params.len() != grads.len() {
        return Err(TensorError::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() && !params.is_empty() {
        state.m = params.iter().map(|p| vec![T::ZERO; p.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(TensorError::Shape(format!(
            "optimizer state holds {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if state.m[i].len() != p.numel() {
            return Err(TensorError::Shape(format!("optimizer state for parameter {i}")));
        }
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(TensorError::Shape(format!(
                    "parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::from_f64(1.0 - cfg.beta1);
    let c2 = T::from_f64(1.0 - cfg.beta2);
    let bc1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + c1 * gj;
            v[j] = b2 * v[j] + c2 * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[f64], steps: usize) -> (Tensor<f64>, AdamState<f64>) {
        let mut p = Tensor::from_f64(&[grads.len()], &vec![1.0; grads.len()]).unwrap();
        let g = Tensor::from_f64(&[grads.len()], grads).unwrap();
        let mut state = AdamState::new();
        for _ in 0..steps {
            adam_step(&mut [&mut p], &[Some(&g)], &mut state, &AdamConfig::default()).unwrap();
        }
        (p, state)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let grads = [0.3, -2.0, 1e-3, -7.5];
        let (p, _) = run(&grads, 1);
        for (w, g) in p.data().iter().zip(grads) {
            let expected = 1.0 - 1e-4 * g / (g.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
            assert!(((w - 1.0) + 1e-4 * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (p, _) = run(&[0.0, 0.0], 5);
        assert_eq!(p.data(), &[1.0, 1.0]);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let grads = [0.12345, -0.98765, 3.3];
        assert_eq!(run(&grads, 17).0, run(&grads, 17).0);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut a = Tensor::<f32>::full(&[2], 1.0);
        let mut b = Tensor::<f32>::full(&[3], 1.0);
        let ga = Tensor::<f32>::full(&[2], 0.5);
        let mut state = AdamState::new();
        adam_step(
            &mut [&mut a, &mut b],
            &[Some(&ga), None],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap();
        assert!(a.data().iter().all(|&v| v < 1.0));
        assert!(b.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut a = Tensor::<f64>::full(&[2], 1.0);
        let bad = Tensor::<f64>::full(&[3], 0.5);
        let mut state = AdamState::new();
        let cfg = AdamConfig::default();
        assert!(adam_step(&mut [&mut a], &[Some(&bad)], &mut state, &cfg).is_err());
        assert!(adam_step(&mut [&mut a], &[], &mut state, &cfg).is_err());
        let ok = Tensor::<f64>::full(&[2], 0.5);
        adam_step(&mut [&mut a], &[Some(&ok)], &mut state, &cfg).unwrap();
        let mut other = Tensor::<f64>::full(&[5], 1.0);
        assert!(adam_step(&mut [&mut other], &[None], &mut state, &cfg).is_err());
    }
}
