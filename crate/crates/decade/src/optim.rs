//! Adam optimizer with bias correction.

use thiserror::Error;

use crate::network::Network;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("optimizer state holds {expected} parameter tensors, got {actual}")]
    ParamCountMismatch { expected: usize, actual: usize },
    #[error("moment buffer {index} has length {expected}, parameter has {actual}")]
    MomentShapeMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
}

/// First/second moment estimates for one list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Canonical defaults: beta1=0.9, beta2=0.999, epsilon=1e-8.
    pub fn new(param_lens: &[usize]) -> Self {
        Self::with_hyperparams(param_lens, 0.9, 0.999, 1e-8).expect("defaults are valid")
    }

    pub fn with_hyperparams(
        param_lens: &[usize],
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self, OptimError> {
        if !(0.0 < beta1 && beta1 < 1.0) || !(0.0 < beta2 && beta2 < 1.0) || epsilon <= 0.0 {
            return Err(OptimError::Hyperparameter(format!(
                "beta1={beta1}, beta2={beta2}, epsilon={epsilon}"
            )));
        }
        Ok(Self {
            step_count: 0,
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            epsilon: T::from_f64(epsilon),
            first_moment: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn for_network(net: &Network<T>) -> Self {
        let lens: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self::new(&lens)
    }

    /// One Adam update over `params` using their accumulated gradients.
    /// Parameters without a gradient buffer are treated as zero-gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], learning_rate: T) -> Result<(), OptimError> {
        if params.len() != self.first_moment.len() {
            return Err(OptimError::ParamCountMismatch {
                expected: self.first_moment.len(),
                actual: params.len(),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let one = T::one();
        let bias1 = one - self.beta1.powi(t);
        let bias2 = one - self.beta2.powi(t);
        for (index, param) in params.iter_mut().enumerate() {
            let n = param.len();
            if self.first_moment[index].len() != n {
                return Err(OptimError::MomentShapeMismatch {
                    index,
                    expected: self.first_moment[index].len(),
                    actual: n,
                });
            }
            let m = &mut self.first_moment[index];
            let v = &mut self.second_moment[index];
            let grad: Vec<T> = match param.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); n],
            };
            let vals = param.values_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                vals[i] -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Convenience wrapper stepping every parameter of a network.
    pub fn step_network(&mut self, net: &mut Network<T>, learning_rate: T) -> Result<(), OptimError> {
        let mut params = net.params_mut();
        self.step(&mut params, learning_rate)
    }
}
