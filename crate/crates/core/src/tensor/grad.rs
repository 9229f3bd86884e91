use super::ops::{col2im, conv_geometry, im2col};
use super::{conv2d, fully_connected, gemm_nn, gemm_nt, gemm_tn, max_pool, prelu, softmax_channels};
use super::{Result, Tensor, TensorError};

/// One layer with borrowed parameters.
#[derive(Debug, Clone, Copy)]
pub enum Layer<'a> {
    Conv2d {
        weights: &'a Tensor,
        bias: &'a Tensor,
        stride: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        ceil_mode: bool,
    },
    Prelu {
        slopes: &'a Tensor,
    },
    FullyConnected {
        weights: &'a Tensor,
        bias: &'a Tensor,
    },
    Softmax,
}

impl Layer<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool { .. } => "max_pool",
            Layer::Prelu { .. } => "prelu",
            Layer::FullyConnected { .. } => "fully_connected",
            Layer::Softmax => "softmax",
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match *self {
            Layer::Conv2d { weights, bias, stride } => conv2d(input, weights, bias, stride),
            Layer::MaxPool { kernel, stride, ceil_mode } => {
                max_pool(input, kernel, stride, ceil_mode).map(|(t, _)| t)
            }
            Layer::Prelu { slopes } => prelu(input, slopes),
            Layer::FullyConnected { weights, bias } => fully_connected(input, weights, bias),
            Layer::Softmax => softmax_channels(input),
        }
    }

    /// Forward pass that also returns the state [`backward`] needs.
    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let layer = self.name();
        match *self {
            Layer::MaxPool { kernel, stride, ceil_mode } => {
                let (out, argmax) = max_pool(input, kernel, stride, ceil_mode)?;
                let cache = ForwardCache {
                    layer,
                    input_shape: input.shape().to_vec(),
                    input: None,
                    output: None,
                    argmax: Some(argmax),
                };
                Ok((out, cache))
            }
            Layer::Softmax => {
                let out = softmax_channels(input)?;
                let cache = ForwardCache {
                    layer,
                    input_shape: input.shape().to_vec(),
                    input: None,
                    output: Some(out.clone()),
                    argmax: None,
                };
                Ok((out, cache))
            }
            _ => {
                let out = self.forward(input)?;
                let cache = ForwardCache {
                    layer,
                    input_shape: input.shape().to_vec(),
                    input: Some(input.clone()),
                    output: None,
                    argmax: None,
                };
                Ok((out, cache))
            }
        }
    }
}

/// Forward-pass state captured for one layer.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer: &'static str,
    input_shape: Vec<usize>,
    input: Option<Tensor>,
    output: Option<Tensor>,
    argmax: Option<Vec<usize>>,
}

/// Gradients of one layer. Parameter-free layers leave `d_weights`/`d_bias` empty;
/// for PReLU `d_weights` holds the slope gradient.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_input: Tensor,
    pub d_weights: Option<Tensor>,
    pub d_bias: Option<Tensor>,
}

fn check_grad_shape(op: &'static str, expected: usize, d_output: &Tensor) -> Result<()> {
    if d_output.len() != expected {
        return Err(TensorError::Mismatch {
            op,
            dim: "output gradient size",
            expected,
            actual: d_output.len(),
        });
    }
    Ok(())
}

pub fn backward(layer: &Layer<'_>, cache: Option<&ForwardCache>, d_output: &Tensor) -> Result<LayerGrads> {
    let name = layer.name();
    let cache = cache
        .filter(|c| c.layer == name)
        .ok_or(TensorError::MissingCache(name))?;
    match *layer {
        Layer::Conv2d { weights, bias, stride } => {
            let input = cache.input.as_ref().ok_or(TensorError::MissingCache(name))?;
            conv_backward(input, weights, bias, stride, d_output)
        }
        Layer::MaxPool { .. } => {
            let argmax = cache.argmax.as_ref().ok_or(TensorError::MissingCache(name))?;
            check_grad_shape(name, argmax.len(), d_output)?;
            let mut d_input = Tensor::zeros(&cache.input_shape);
            let dst = d_input.data_mut();
            for (&idx, &g) in argmax.iter().zip(d_output.data()) {
                dst[idx] += g;
            }
            Ok(LayerGrads {
                d_input,
                d_weights: None,
                d_bias: None,
            })
        }
        Layer::Prelu { slopes } => {
            let input = cache.input.as_ref().ok_or(TensorError::MissingCache(name))?;
            check_grad_shape(name, input.len(), d_output)?;
            let c = slopes.len();
            let inner: usize = input.shape().iter().skip(2).product();
            let mut d_input = vec![0.0f32; input.len()];
            let mut d_slopes = vec![0.0f32; c];
            for (i, (&x, &g)) in input.data().iter().zip(d_output.data()).enumerate() {
                let ch = (i / inner) % c;
                if x < 0.0 {
                    d_input[i] = g * slopes.data()[ch];
                    d_slopes[ch] += g * x;
                } else {
                    d_input[i] = g;
                }
            }
            Ok(LayerGrads {
                d_input: Tensor::new(input.shape().to_vec(), d_input)?,
                d_weights: Some(Tensor::new(slopes.shape().to_vec(), d_slopes)?),
                d_bias: None,
            })
        }
        Layer::FullyConnected { weights, .. } => {
            let input = cache.input.as_ref().ok_or(TensorError::MissingCache(name))?;
            let (d_out, d_in) = (weights.shape()[0], weights.shape()[1]);
            let n = input.batch();
            check_grad_shape(name, n * d_out, d_output)?;
            let mut d_input = vec![0.0f32; n * d_in];
            gemm_nn(n, d_out, d_in, d_output.data(), weights.data(), &mut d_input);
            let mut d_weights = vec![0.0f32; d_out * d_in];
            gemm_tn(d_out, n, d_in, d_output.data(), input.data(), &mut d_weights);
            let mut d_bias = vec![0.0f32; d_out];
            for row in d_output.data().chunks_exact(d_out) {
                for (b, g) in d_bias.iter_mut().zip(row) {
                    *b += g;
                }
            }
            Ok(LayerGrads {
                d_input: Tensor::new(input.shape().to_vec(), d_input)?,
                d_weights: Some(Tensor::new(weights.shape().to_vec(), d_weights)?),
                d_bias: Some(Tensor::new(vec![d_out], d_bias)?),
            })
        }
        Layer::Softmax => {
            let y = cache.output.as_ref().ok_or(TensorError::MissingCache(name))?;
            check_grad_shape(name, y.len(), d_output)?;
            let c = y.shape()[1];
            let inner: usize = y.shape().iter().skip(2).product();
            let mut d_input = vec![0.0f32; y.len()];
            for (b, (yb, gb)) in y.data().chunks_exact(c * inner).zip(d_output.data().chunks_exact(c * inner)).enumerate() {
                let dst = &mut d_input[b * c * inner..(b + 1) * c * inner];
                for pos in 0..inner {
                    let dot: f32 = (0..c).map(|ch| yb[ch * inner + pos] * gb[ch * inner + pos]).sum();
                    for ch in 0..c {
                        let i = ch * inner + pos;
                        dst[i] = yb[i] * (gb[i] - dot);
                    }
                }
            }
            Ok(LayerGrads {
                d_input: Tensor::new(y.shape().to_vec(), d_input)?,
                d_weights: None,
                d_bias: None,
            })
        }
    }
}

fn conv_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, d_output: &Tensor) -> Result<LayerGrads> {
    let g = conv_geometry(input, weights, bias, stride)?;
    let n = input.batch();
    let out_c = weights.shape()[0];
    let p = g.oh * g.ow;
    let k = g.cols_rows();
    check_grad_shape("conv2d", n * out_c * p, d_output)?;

    let mut d_weights = vec![0.0f32; out_c * k];
    let mut d_bias = vec![0.0f32; out_c];
    let mut d_input = vec![0.0f32; input.len()];
    let mut cols = vec![0.0f32; g.cols_len()];
    let mut d_cols = vec![0.0f32; g.cols_len()];
    let in_per = input.per_sample();
    for s in 0..n {
        let d_out = &d_output.data()[s * out_c * p..(s + 1) * out_c * p];
        for (b, row) in d_bias.iter_mut().zip(d_out.chunks_exact(p)) {
            *b += row.iter().sum::<f32>();
        }
        im2col(&g, &input.data()[s * in_per..(s + 1) * in_per], &mut cols);
        gemm_nt(out_c, p, k, d_out, &cols, &mut d_weights);
        d_cols.fill(0.0);
        gemm_tn(k, out_c, p, weights.data(), d_out, &mut d_cols);
        col2im(&g, &d_cols, &mut d_input[s * in_per..(s + 1) * in_per]);
    }
    Ok(LayerGrads {
        d_input: Tensor::new(input.shape().to_vec(), d_input)?,
        d_weights: Some(Tensor::new(weights.shape().to_vec(), d_weights)?),
        d_bias: Some(Tensor::new(vec![out_c], d_bias)?),
    })
}
