use super::{NdiffError, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam with weight decay folded into the gradient as a classic L2 term.
/// Only the learning rate and decay are configurable.
pub struct Adam {
    lr: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Adam {
        Adam {
            lr,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. Moment buffers are allocated on the
    /// first call and must match parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NdiffError> {
        if params.len() != grads.len() {
            return Err(NdiffError::OptimizerMismatch {
                detail: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| Tensor::zeros(p.rows, p.cols))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NdiffError::OptimizerMismatch {
                detail: format!("state for {} params, got {}", self.m.len(), params.len()),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if grads[i].shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(NdiffError::OptimizerMismatch {
                    detail: format!("parameter {i} shape changed"),
                });
            }
        }

        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.data.len() {
                let grad = g.data[j] + self.weight_decay * p.data[j];
                m.data[j] = BETA1 * m.data[j] + (1.0 - BETA1) * grad;
                v.data[j] = BETA2 * v.data[j] + (1.0 - BETA2) * grad * grad;
                let mhat = m.data[j] / bc1;
                let vhat = v.data[j] / bc2;
                p.data[j] -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
