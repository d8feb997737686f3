//! The five layer kinds of the engine: dense, 2D convolution, max-pooling,
//! ReLU and flatten, each with forward and backward passes.
//!
//! Convolution is cross-correlation (no kernel flip) over channels-first
//! `[batch, C, H, W]` tensors, implemented as im2col plus a small matmul.

use rand::Rng;
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
}

/// Shape-level description of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), LayerError> {
        let bad = |msg: &str| Err(LayerError::Config(msg.to_string()));
        match *self {
            LayerSpec::Dense { input, output } => {
                if input == 0 || output == 0 {
                    return bad("dense widths must be strictly positive");
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("conv sizes must be strictly positive");
                }
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("pool window and stride must be strictly positive");
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Number of trainable parameters (weights + biases).
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output } => input * output + output,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            _ => 0,
        }
    }
}

/// y[b,o] = sum_i x[b,i] * W[i,o] + bias[o]
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, LayerError> {
    let (batch, n_in) = as_2d(input, "dense input")?;
    let (w_in, n_out) = as_2d(weights, "dense weights")?;
    if n_in != w_in {
        return Err(TensorError::DimensionMismatch {
            axis: 1,
            expected: w_in,
            actual: n_in,
            context: "dense input width vs weight rows".into(),
        }
        .into());
    }
    if bias.len() != n_out {
        return Err(TensorError::DimensionMismatch {
            axis: 0,
            expected: n_out,
            actual: bias.len(),
            context: "dense bias vs weight columns".into(),
        }
        .into());
    }
    let mut out = Tensor::zeros(&[batch, n_out]);
    {
        let x = input.values();
        let w = weights.values();
        let b = bias.values();
        let o = out.values_mut();
        for bi in 0..batch {
            let row = &mut o[bi * n_out..(bi + 1) * n_out];
            row.copy_from_slice(b);
            for i in 0..n_in {
                let xv = x[bi * n_in + i];
                let wrow = &w[i * n_out..(i + 1) * n_out];
                for (r, &wv) in row.iter_mut().zip(wrow) {
                    *r += xv * wv;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise max(0, x).
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.zero_grad();
    for v in out.values_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

fn as_2d<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize), LayerError> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(LayerError::Config(format!(
            "{what} must be 2-dimensional, got shape {s:?}"
        ))),
    }
}

fn as_4d<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize), LayerError> {
    match t.shape() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        s => Err(LayerError::Config(format!(
            "{what} must be 4-dimensional, got shape {s:?}"
        ))),
    }
}

/// Output extent of a conv/pool axis, erroring when the arithmetic does not
/// land on an integer.
fn out_extent(extent: usize, window: usize, stride: usize, padding: usize) -> Result<usize, LayerError> {
    let padded = extent + 2 * padding;
    if window > padded {
        return Err(LayerError::Config(format!(
            "window {window} exceeds padded input extent {padded}"
        )));
    }
    if !(padded - window).is_multiple_of(stride) {
        return Err(LayerError::Config(format!(
            "input extent {extent} with window {window}, stride {stride}, padding {padding} \
             gives a non-integer output size"
        )));
    }
    Ok((padded - window) / stride + 1)
}

/// Lowers one sample's padded receptive fields into a `[C_in*k*k, H_out*W_out]`
/// column matrix.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
fn im2col<T: Scalar>(
    sample: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
    cols: &mut [T],
) {
    let hw_out = h_out * w_out;
    for ci in 0..c_in {
        let chan = &sample[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut cols[(ci * k * k + kh * k + kw) * hw_out..][..hw_out];
                for oy in 0..h_out {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    let dst = &mut row[oy * w_out..(oy + 1) * w_out];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w_out {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        dst[ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one sample's input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
    sample_grad: &mut [T],
) {
    let hw_out = h_out * w_out;
    for ci in 0..c_in {
        let chan = &mut sample_grad[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &cols[(ci * k * k + kh * k + kw) * hw_out..][..hw_out];
                for oy in 0..h_out {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w_out {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += row[oy * w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding over `[batch, C_in, H, W]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, LayerError> {
    let (batch, c_in, h, w) = as_4d(input, "conv input")?;
    let kshape = kernels.shape();
    if kshape.len() != 4 || kshape[2] != kshape[3] {
        return Err(LayerError::Config(format!(
            "conv kernels must be [C_out, C_in, k, k], got {kshape:?}"
        )));
    }
    let (c_out, kc_in, k) = (kshape[0], kshape[1], kshape[2]);
    if kc_in != c_in {
        return Err(TensorError::DimensionMismatch {
            axis: 1,
            expected: kc_in,
            actual: c_in,
            context: "conv input channels vs kernel channels".into(),
        }
        .into());
    }
    if bias.len() != c_out {
        return Err(TensorError::DimensionMismatch {
            axis: 0,
            expected: c_out,
            actual: bias.len(),
            context: "conv bias vs output channels".into(),
        }
        .into());
    }
    let h_out = out_extent(h, k, stride, padding)?;
    let w_out = out_extent(w, k, stride, padding)?;
    let hw_out = h_out * w_out;
    let ck = c_in * k * k;

    let mut out = Tensor::zeros(&[batch, c_out, h_out, w_out]);
    let mut cols = vec![T::zero(); ck * hw_out];
    let kv = kernels.values();
    let bv = bias.values();
    let x = input.values();
    let o = out.values_mut();
    for bi in 0..batch {
        im2col(
            &x[bi * c_in * h * w..],
            c_in,
            h,
            w,
            k,
            stride,
            padding,
            h_out,
            w_out,
            &mut cols,
        );
        let sample_out = &mut o[bi * c_out * hw_out..(bi + 1) * c_out * hw_out];
        for co in 0..c_out {
            let row = &mut sample_out[co * hw_out..(co + 1) * hw_out];
            row.iter_mut().for_each(|v| *v = bv[co]);
            for ci in 0..ck {
                let kvv = kv[co * ck + ci];
                let col_row = &cols[ci * hw_out..(ci + 1) * hw_out];
                for (r, &c) in row.iter_mut().zip(col_row) {
                    *r += kvv * c;
                }
            }
        }
    }
    Ok(out)
}

/// Max-pooling over square windows; also returns the flat input index of
/// each window's argmax for the backward pass.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>), LayerError> {
    let (batch, c, h, w) = as_4d(input, "pool input")?;
    if window > h || window > w {
        return Err(LayerError::Config(format!(
            "pool window {window} larger than input {h}x{w}"
        )));
    }
    let h_out = out_extent(h, window, stride, 0)?;
    let w_out = out_extent(w, window, stride, 0)?;
    let mut out = Tensor::zeros(&[batch, c, h_out, w_out]);
    let mut argmax = vec![0usize; batch * c * h_out * w_out];
    let x = input.values();
    let o = out.values_mut();
    let mut oi = 0;
    for bi in 0..batch {
        for ci in 0..c {
            let chan_base = (bi * c + ci) * h * w;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    for ky in 0..window {
                        let iy = oy * stride + ky;
                        for kx in 0..window {
                            let ix = ox * stride + kx;
                            let idx = chan_base + iy * w + ix;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    o[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

#[derive(Debug, Clone, Default)]
struct Cache<T: Scalar> {
    input: Option<Tensor<T>>,
    argmax: Option<Vec<usize>>,
}

/// One instantiated layer: spec, parameters (when the kind has any), and the
/// forward-pass cache consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Layer<T: Scalar> {
    spec: LayerSpec,
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
    cache: Cache<T>,
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer with zeroed parameters (callers normally go through
    /// [`Layer::init`] or checkpoint loading).
    pub fn new(spec: LayerSpec) -> Result<Self, LayerError> {
        spec.validate()?;
        let (weights, bias) = match spec {
            LayerSpec::Dense { input, output } => (
                Some(Tensor::zeros(&[input, output])),
                Some(Tensor::zeros(&[output])),
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                Some(Tensor::zeros(&[out_channels, in_channels, kernel, kernel])),
                Some(Tensor::zeros(&[out_channels])),
            ),
            _ => (None, None),
        };
        Ok(Self {
            spec,
            weights,
            bias,
            cache: Cache::default(),
        })
    }

    /// Glorot-uniform weight init (±sqrt(6/(fan_in+fan_out))), zero biases.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Result<Self, LayerError> {
        let mut layer = Self::new(spec)?;
        let (fan_in, fan_out) = match layer.spec {
            LayerSpec::Dense { input, output } => (input, output),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => return Ok(layer),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        if let Some(w) = layer.weights.as_mut() {
            for v in w.values_mut() {
                *v = T::from_f64(rng.random_range(-limit..limit));
            }
        }
        Ok(layer)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Runs the layer forward, caching what backward needs.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let out = match self.spec {
            LayerSpec::Dense { .. } => {
                let out = dense_forward(
                    input,
                    self.weights.as_ref().unwrap(),
                    self.bias.as_ref().unwrap(),
                )?;
                self.cache.input = Some(input.clone());
                out
            }
            LayerSpec::Conv2d { stride, padding, .. } => {
                let out = conv2d_forward(
                    input,
                    self.weights.as_ref().unwrap(),
                    self.bias.as_ref().unwrap(),
                    stride,
                    padding,
                )?;
                self.cache.input = Some(input.clone());
                out
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let (out, argmax) = maxpool_forward(input, window, stride)?;
                self.cache.input = Some(input.clone());
                self.cache.argmax = Some(argmax);
                out
            }
            LayerSpec::Relu => {
                self.cache.input = Some(input.clone());
                relu_forward(input)
            }
            LayerSpec::Flatten => {
                let shape = input.shape();
                if shape.len() < 2 {
                    return Err(LayerError::Config(
                        "flatten expects at least 2 dimensions".into(),
                    ));
                }
                let batch = shape[0];
                let rest: usize = shape[1..].iter().product();
                self.cache.input = Some(input.clone());
                input.clone().reshaped(vec![batch, rest])?
            }
        };
        Ok(out)
    }

    /// Propagates `out_grad` back through the layer, accumulating parameter
    /// gradients, and returns the gradient w.r.t. the layer input.
    pub fn backward(&mut self, out_grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let input = self
            .cache
            .input
            .as_ref()
            .ok_or(LayerError::BackwardBeforeForward)?;
        match self.spec {
            LayerSpec::Dense { input: n_in, output: n_out } => {
                let batch = input.shape()[0];
                let x = input.values().to_vec();
                let g = out_grad.values().to_vec();
                let w = self.weights.as_ref().unwrap().values().to_vec();
                let mut in_grad = Tensor::zeros(&[batch, n_in]);
                {
                    let ig = in_grad.values_mut();
                    for bi in 0..batch {
                        let grow = &g[bi * n_out..(bi + 1) * n_out];
                        for i in 0..n_in {
                            let wrow = &w[i * n_out..(i + 1) * n_out];
                            let mut acc = T::zero();
                            for (&gv, &wv) in grow.iter().zip(wrow) {
                                acc += gv * wv;
                            }
                            ig[bi * n_in + i] = acc;
                        }
                    }
                }
                {
                    let wg = self.weights.as_mut().unwrap().grad_mut();
                    for bi in 0..batch {
                        let grow = &g[bi * n_out..(bi + 1) * n_out];
                        for i in 0..n_in {
                            let xv = x[bi * n_in + i];
                            let wrow = &mut wg[i * n_out..(i + 1) * n_out];
                            for (r, &gv) in wrow.iter_mut().zip(grow) {
                                *r += xv * gv;
                            }
                        }
                    }
                }
                {
                    let bg = self.bias.as_mut().unwrap().grad_mut();
                    for bi in 0..batch {
                        let grow = &g[bi * n_out..(bi + 1) * n_out];
                        for (r, &gv) in bg.iter_mut().zip(grow) {
                            *r += gv;
                        }
                    }
                }
                Ok(in_grad)
            }
            LayerSpec::Conv2d {
                in_channels: c_in,
                out_channels: c_out,
                kernel: k,
                stride,
                padding,
            } => {
                let (batch, _, h, w) = as_4d(input, "conv input")?;
                let h_out = out_extent(h, k, stride, padding)?;
                let w_out = out_extent(w, k, stride, padding)?;
                let hw_out = h_out * w_out;
                let ck = c_in * k * k;
                let x = input.values().to_vec();
                let g = out_grad.values().to_vec();
                let kv = self.weights.as_ref().unwrap().values().to_vec();

                let mut in_grad = Tensor::zeros(&[batch, c_in, h, w]);
                let mut cols = vec![T::zero(); ck * hw_out];
                let mut dcols = vec![T::zero(); ck * hw_out];
                for bi in 0..batch {
                    im2col(
                        &x[bi * c_in * h * w..],
                        c_in,
                        h,
                        w,
                        k,
                        stride,
                        padding,
                        h_out,
                        w_out,
                        &mut cols,
                    );
                    let gs = &g[bi * c_out * hw_out..(bi + 1) * c_out * hw_out];
                    // dK[co, ci] += g[co, :] . cols[ci, :]
                    {
                        let wg = self.weights.as_mut().unwrap().grad_mut();
                        for co in 0..c_out {
                            let grow = &gs[co * hw_out..(co + 1) * hw_out];
                            for ci in 0..ck {
                                let col_row = &cols[ci * hw_out..(ci + 1) * hw_out];
                                let mut acc = T::zero();
                                for (&gv, &cv) in grow.iter().zip(col_row) {
                                    acc += gv * cv;
                                }
                                wg[co * ck + ci] += acc;
                            }
                        }
                    }
                    {
                        let bg = self.bias.as_mut().unwrap().grad_mut();
                        for co in 0..c_out {
                            let grow = &gs[co * hw_out..(co + 1) * hw_out];
                            let mut acc = T::zero();
                            for &gv in grow {
                                acc += gv;
                            }
                            bg[co] += acc;
                        }
                    }
                    // dcols = K^T . g
                    dcols.iter_mut().for_each(|v| *v = T::zero());
                    for co in 0..c_out {
                        let grow = &gs[co * hw_out..(co + 1) * hw_out];
                        for ci in 0..ck {
                            let kvv = kv[co * ck + ci];
                            let drow = &mut dcols[ci * hw_out..(ci + 1) * hw_out];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += kvv * gv;
                            }
                        }
                    }
                    col2im_add(
                        &dcols,
                        c_in,
                        h,
                        w,
                        k,
                        stride,
                        padding,
                        h_out,
                        w_out,
                        &mut in_grad.values_mut()[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                    );
                }
                Ok(in_grad)
            }
            LayerSpec::MaxPool2d { .. } => {
                let argmax = self
                    .cache
                    .argmax
                    .as_ref()
                    .ok_or(LayerError::BackwardBeforeForward)?;
                let mut in_grad = Tensor::zeros(input.shape());
                let ig = in_grad.values_mut();
                for (&src, &gv) in argmax.iter().zip(out_grad.values()) {
                    ig[src] += gv;
                }
                Ok(in_grad)
            }
            LayerSpec::Relu => {
                let mut in_grad = out_grad.clone();
                in_grad.zero_grad();
                for (g, &x) in in_grad.values_mut().iter_mut().zip(input.values()) {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                }
                Ok(in_grad)
            }
            LayerSpec::Flatten => Ok(out_grad.clone().reshaped(input.shape().to_vec())?),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(w) = self.weights.as_mut() {
            w.zero_grad();
        }
        if let Some(b) = self.bias.as_mut() {
            b.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = Cache::default();
    }
}
