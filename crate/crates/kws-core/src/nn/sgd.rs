//! Classical SGD with momentum and L2 weight decay (not Nesterov).

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// One buffer per parameter tensor, in step order.
    pub velocities: Vec<Vec<f32>>,
}

impl SgdMomentum {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocities: Vec::new(),
        }
    }

    /// v <- momentum * v + (grad + weight_decay * param);
    /// param <- param - lr * v.
    ///
    /// Verifies every gradient is present and finite before touching any
    /// parameter, so a failed step leaves the model untouched. Gradients are
    /// cleared after a successful step.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)]) -> Result<()> {
        if self.velocities.is_empty() {
            self.velocities = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        }
        if self.velocities.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step".into(),
                detail: format!(
                    "{} velocity buffers for {} parameters",
                    self.velocities.len(),
                    params.len()
                ),
            });
        }
        for (name, t) in params.iter() {
            match &t.grad {
                None => {
                    return Err(Error::ShapeMismatch {
                        op: "sgd_step".into(),
                        detail: format!("parameter '{name}' has no gradient"),
                    })
                }
                Some(g) => {
                    if g.len() != t.numel() {
                        return Err(Error::ShapeMismatch {
                            op: "sgd_step".into(),
                            detail: format!("parameter '{name}' gradient length mismatch"),
                        });
                    }
                    if !g.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFiniteGradient(name.to_string()));
                    }
                }
            }
        }
        for ((name, t), v) in params.iter_mut().zip(&mut self.velocities) {
            if v.len() != t.numel() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step".into(),
                    detail: format!("velocity buffer for '{name}' has wrong length"),
                });
            }
            let g = t.grad.as_ref().unwrap().clone();
            for ((p, vel), gi) in t.data.iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = self.momentum * *vel + (gi + self.weight_decay * *p);
                *p -= self.lr * *vel;
            }
            t.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_params() {
        let mut t = Tensor::new(vec![2], vec![1.0, -2.0]);
        t.accumulate_grad(&[0.0, 0.0]);
        let mut opt = SgdMomentum::new(0.1, 0.9, 0.0);
        opt.step(&mut [("w", &mut t)]).unwrap();
        assert_eq!(t.data, vec![1.0, -2.0]);
    }

    #[test]
    fn scalar_update_direct_substitution() {
        let mut t = Tensor::new(vec![1], vec![1.0]);
        t.accumulate_grad(&[1.0]);
        let mut opt = SgdMomentum::new(0.1, 0.9, 0.0);
        opt.step(&mut [("w", &mut t)]).unwrap();
        assert_eq!(opt.velocities[0], vec![1.0]);
        assert!((t.data[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn momentum_accumulates_across_steps() {
        let mut t = Tensor::new(vec![1], vec![0.0]);
        let mut opt = SgdMomentum::new(1.0, 0.5, 0.0);
        t.accumulate_grad(&[1.0]);
        opt.step(&mut [("w", &mut t)]).unwrap(); // v=1, p=-1
        t.accumulate_grad(&[1.0]);
        opt.step(&mut [("w", &mut t)]).unwrap(); // v=1.5, p=-2.5
        assert!((t.data[0] + 2.5).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_shrinks_magnitude_with_zero_grad() {
        let mut t = Tensor::new(vec![2], vec![1.0, -1.0]);
        let mut opt = SgdMomentum::new(0.1, 0.0, 0.1);
        for _ in 0..5 {
            t.accumulate_grad(&[0.0, 0.0]);
            let before: Vec<f32> = t.data.iter().map(|v| v.abs()).collect();
            opt.step(&mut [("w", &mut t)]).unwrap();
            for (b, a) in before.iter().zip(&t.data) {
                assert!(a.abs() < *b, "|{a}| should shrink below {b}");
            }
        }
    }

    #[test]
    fn nonfinite_gradient_aborts_without_update() {
        let mut t = Tensor::new(vec![2], vec![1.0, 2.0]);
        t.accumulate_grad(&[0.5, f32::NAN]);
        let mut opt = SgdMomentum::new(0.1, 0.9, 0.0);
        let err = opt.step(&mut [("stem", &mut t)]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "stem"));
        assert_eq!(t.data, vec![1.0, 2.0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut t = Tensor::new(vec![1], vec![1.0]);
        let mut opt = SgdMomentum::new(0.1, 0.9, 0.0);
        assert!(opt.step(&mut [("w", &mut t)]).is_err());
    }

    #[test]
    fn grads_cleared_after_step() {
        let mut t = Tensor::new(vec![1], vec![1.0]);
        t.accumulate_grad(&[1.0]);
        let mut opt = SgdMomentum::new(0.1, 0.9, 0.0);
        opt.step(&mut [("w", &mut t)]).unwrap();
        assert!(t.grad.is_none());
    }
}
