//! Adam with bias correction.

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("gradient {index} is non-finite; step {step} aborted")]
    NonFiniteGradient { index: usize, step: u64 },
    #[error("parameter {index}: gradient shape {grad:?} does not match {param:?}")]
    ShapeMismatch {
        index: usize,
        grad: Vec<usize>,
        param: Vec<usize>,
    },
}

/// Optimizer state: one pair of moment tensors per parameter, shaped like
/// the parameter, plus a strictly increasing step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(lr: f64, param_shapes: &[Vec<usize>]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected step-size multiplier `lr * sqrt(1-b2^t) / (1-b1^t)`
    /// at step `t`; shrinks from `~3.16 lr` toward `lr` over early steps.
    pub fn step_size(&self, t: u64) -> f64 {
        self.lr * (1.0 - self.beta2.powi(t as i32)).sqrt() / (1.0 - self.beta1.powi(t as i32))
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }

    /// One Adam update over all parameters. A missing gradient leaves the
    /// corresponding parameter untouched (its moments still decay toward
    /// zero, which is a no-op when they are zero).
    pub fn apply(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<Tensor>],
    ) -> Result<(), AdamError> {
        assert_eq!(params.len(), grads.len());
        // Validate before mutating anything so an aborted step leaves the
        // model untouched.
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            if g.shape() != params[i].shape() {
                return Err(AdamError::ShapeMismatch {
                    index: i,
                    grad: g.shape().to_vec(),
                    param: params[i].shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(AdamError::NonFiniteGradient {
                    index: i,
                    step: self.step + 1,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            for ((pv, (mv, vv)), gv) in p.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.data())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
