//! Sequential networks over the five layer kinds, mean-squared loss, and
//! finite-difference gradient checking.

use rand::Rng;
use thiserror::Error;

use crate::layers::{Layer, LayerError, LayerSpec};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward called before forward")]
    BackwardBeforeForward,
}

/// (1/n)·Σ(pred−target)² together with the gradient (2/n)·(pred−target).
pub fn mse_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(T, Tensor<T>), NetworkError> {
    if pred.len() != target.len() {
        return Err(TensorError::DimensionMismatch {
            axis: 0,
            expected: target.len(),
            actual: pred.len(),
            context: "mse prediction vs target length".into(),
        }
        .into());
    }
    let n = T::from_f64(pred.len() as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = T::zero();
    for ((g, &p), &t) in grad
        .values_mut()
        .iter_mut()
        .zip(pred.values())
        .zip(target.values())
    {
        let d = p - t;
        loss += d * d;
        *g = T::from_f64(2.0) * d / n;
    }
    Ok((loss / n, grad))
}

/// An ordered stack of layers trained end to end.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar> {
    pub name: String,
    /// Per-sample input shape (without the batch dimension).
    pub input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    forward_done: bool,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with seeded Glorot-uniform weights and verifies the
    /// stack is shape-conformant with a dry-run forward pass.
    pub fn init(
        name: &str,
        input_shape: &[usize],
        specs: &[LayerSpec],
        rng: &mut impl Rng,
    ) -> Result<Self, NetworkError> {
        let layers = specs
            .iter()
            .map(|s| Layer::init(s.clone(), rng))
            .collect::<Result<Vec<_>, _>>()?;
        let mut net = Self {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            forward_done: false,
        };
        let mut probe_shape = vec![1];
        probe_shape.extend_from_slice(input_shape);
        net.forward(&Tensor::zeros(&probe_shape))?;
        net.reset_state();
        Ok(net)
    }

    /// Assembles a network from already-materialized layers (checkpoint load).
    pub fn from_layers(name: &str, input_shape: &[usize], layers: Vec<Layer<T>>) -> Self {
        Self {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            forward_done: false,
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NetworkError> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        self.forward_done = true;
        Ok(x)
    }

    /// Inference without touching the backward caches.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetworkError> {
        use crate::layers::{conv2d_forward, dense_forward, maxpool_forward, relu_forward};
        let mut x = input.clone();
        for layer in &self.layers {
            x = match *layer.spec() {
                LayerSpec::Dense { .. } => dense_forward(
                    &x,
                    layer.weights.as_ref().unwrap(),
                    layer.bias.as_ref().unwrap(),
                )?,
                LayerSpec::Conv2d { stride, padding, .. } => conv2d_forward(
                    &x,
                    layer.weights.as_ref().unwrap(),
                    layer.bias.as_ref().unwrap(),
                    stride,
                    padding,
                )?,
                LayerSpec::MaxPool2d { window, stride } => maxpool_forward(&x, window, stride)?.0,
                LayerSpec::Relu => relu_forward(&x),
                LayerSpec::Flatten => {
                    let batch = x.shape()[0];
                    let rest: usize = x.shape()[1..].iter().product();
                    x.reshaped(vec![batch, rest])?
                }
            };
        }
        Ok(x)
    }

    /// Propagates the loss gradient back through every layer, accumulating
    /// parameter gradients.
    pub fn backward(&mut self, loss_grad: &Tensor<T>) -> Result<(), NetworkError> {
        if !self.forward_done {
            return Err(NetworkError::BackwardBeforeForward);
        }
        let mut g = loss_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    /// Drops caches and the forward flag; parameters are untouched.
    pub fn reset_state(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
        self.forward_done = false;
    }

    /// All parameter tensors in layer order, weights before biases.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(w) = layer.weights.as_ref() {
                out.push(w);
            }
            if let Some(b) = layer.bias.as_ref() {
                out.push(b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Some(w) = layer.weights.as_mut() {
                out.push(w);
            }
            if let Some(b) = layer.bias.as_mut() {
                out.push(b);
            }
        }
        out
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    /// Converts element type (used to lift an `f32` net into `f64` for
    /// gradient checking).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut nl = Layer::new(l.spec().clone()).expect("spec already validated");
                if let (Some(dst), Some(src)) = (nl.weights.as_mut(), l.weights.as_ref()) {
                    *dst = src.cast();
                }
                if let (Some(dst), Some(src)) = (nl.bias.as_mut(), l.bias.as_ref()) {
                    *dst = src.cast();
                }
                nl
            })
            .collect();
        Network::from_layers(&self.name, &self.input_shape, layers)
    }
}

/// Compares analytic gradients against central finite differences in 64-bit
/// precision; returns the max relative error over all parameters.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    epsilon: f64,
) -> Result<f64, NetworkError> {
    assert!(
        (1e-6..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside [1e-6, 1e-3]"
    );
    net.zero_grad();
    let pred = net.forward(input)?;
    let (_, grad) = mse_loss(&pred, target)?;
    net.backward(&grad)?;

    let analytic: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut max_rel = 0.0f64;
    let n_params = analytic.len();
    for pi in 0..n_params {
        for ei in 0..analytic[pi].len() {
            let orig = net.params()[pi].values()[ei];
            net.params_mut()[pi].values_mut()[ei] = orig + epsilon;
            let lp = loss_of(net, input, target)?;
            net.params_mut()[pi].values_mut()[ei] = orig - epsilon;
            let lm = loss_of(net, input, target)?;
            net.params_mut()[pi].values_mut()[ei] = orig;
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn loss_of(
    net: &Network<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
) -> Result<f64, NetworkError> {
    let pred = net.predict(input)?;
    let (loss, _) = mse_loss(&pred, target)?;
    Ok(loss)
}
