use super::{gemm_nn, gemm_nt, Result, Tensor, TensorError};

fn check_positive(op: &'static str, k: usize, stride: usize) -> Result<()> {
    if k == 0 || stride == 0 {
        return Err(TensorError::ZeroStride(op));
    }
    Ok(())
}

fn check_kernel(op: &'static str, dim: &'static str, kernel: usize, extent: usize) -> Result<()> {
    if kernel > extent {
        return Err(TensorError::KernelTooLarge {
            op,
            dim,
            kernel,
            extent,
        });
    }
    Ok(())
}

pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn cols_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn cols_len(&self) -> usize {
        self.cols_rows() * self.oh * self.ow
    }
}

pub(crate) fn conv_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<ConvGeom> {
    const OP: &str = "conv2d";
    let (_, in_c, h, w) = input.dims4(OP)?;
    let (out_c, w_in_c, kh, kw) = weights.dims4(OP)?;
    if stride == 0 {
        return Err(TensorError::ZeroStride(OP));
    }
    if in_c != w_in_c {
        return Err(TensorError::Mismatch {
            op: OP,
            dim: "input channels",
            expected: w_in_c,
            actual: in_c,
        });
    }
    if bias.len() != out_c {
        return Err(TensorError::Mismatch {
            op: OP,
            dim: "bias length",
            expected: out_c,
            actual: bias.len(),
        });
    }
    check_kernel(OP, "height", kh, h)?;
    check_kernel(OP, "width", kw, w)?;
    Ok(ConvGeom {
        in_c,
        h,
        w,
        kh,
        kw,
        stride,
        oh: (h - kh) / stride + 1,
        ow: (w - kw) / stride + 1,
    })
}

/// Unfolds one CHW sample into a `[in_c·kh·kw, oh·ow]` patch matrix.
pub(crate) fn im2col(g: &ConvGeom, sample: &[f32], cols: &mut [f32]) {
    let p = g.oh * g.ow;
    for c in 0..g.in_c {
        let plane = &sample[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let src = &plane[(oy * g.stride + ky) * g.w + kx..];
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        d.copy_from_slice(&src[..g.ow]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto one CHW sample, accumulating.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f32], sample: &mut [f32]) {
    let p = g.oh * g.ow;
    for c in 0..g.in_c {
        let plane = &mut sample[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let base = (oy * g.stride + ky) * g.w + kx;
                    for ox in 0..g.ow {
                        plane[base + ox * g.stride] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Valid (unpadded) cross-correlation of an NCHW input with `[out_c, in_c, kh, kw]` weights.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geometry(input, weights, bias, stride)?;
    let n = input.batch();
    let out_c = weights.shape()[0];
    let p = g.oh * g.ow;
    let k = g.cols_rows();
    let mut out = vec![0.0f32; n * out_c * p];
    let mut cols = vec![0.0f32; g.cols_len()];
    let in_per = input.per_sample();
    for s in 0..n {
        im2col(&g, &input.data()[s * in_per..(s + 1) * in_per], &mut cols);
        let o = &mut out[s * out_c * p..(s + 1) * out_c * p];
        for (oc, chunk) in o.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        gemm_nn(out_c, k, p, weights.data(), &cols, o);
    }
    Tensor::new(vec![n, out_c, g.oh, g.ow], out)
}

/// Output extent of a pooling window sweep.
pub fn pool_extent(input: usize, k: usize, stride: usize, ceil_mode: bool) -> usize {
    let span = input - k;
    let steps = if ceil_mode { span.div_ceil(stride) } else { span / stride };
    steps + 1
}

/// Max pooling. In ceil mode the trailing windows are truncated at the edge.
/// Returns the pooled tensor and, per output element, the flat input index of
/// its maximum (first occurrence wins on ties).
pub fn max_pool(input: &Tensor, k: usize, stride: usize, ceil_mode: bool) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "max_pool";
    check_positive(OP, k, stride)?;
    let (n, c, h, w) = input.dims4(OP)?;
    check_kernel(OP, "height", k, h)?;
    check_kernel(OP, "width", k, w)?;
    let oh = pool_extent(h, k, stride, ceil_mode);
    let ow = pool_extent(w, k, stride, ceil_mode);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = oy * stride;
            let y1 = (y0 + k).min(h);
            for ox in 0..ow {
                let x0 = ox * stride;
                let x1 = (x0 + k).min(w);
                let mut best = base + y0 * w + x0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = base + y * w + x;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

/// Channel extent and the number of elements per channel per sample.
fn channel_layout(input: &Tensor) -> (usize, usize) {
    let c = if input.rank() >= 2 { input.shape()[1] } else { 1 };
    let inner = input.shape().iter().skip(2).product::<usize>();
    (c, inner)
}

/// Parametric ReLU with one slope per channel (axis 1).
pub fn prelu(input: &Tensor, slopes: &Tensor) -> Result<Tensor> {
    let (c, inner) = channel_layout(input);
    if slopes.len() != c {
        return Err(TensorError::Mismatch {
            op: "prelu",
            dim: "slope count",
            expected: c,
            actual: slopes.len(),
        });
    }
    let mut out = input.data().to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        if *v < 0.0 {
            *v *= slopes.data()[(i / inner) % c];
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// `out[n] = W · flatten(x[n]) + b` for `W` of shape `[d_out, d_in]`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "fully_connected";
    let [d_out, d_in] = weights.shape()[..] else {
        return Err(TensorError::Rank {
            op: OP,
            expected: 2,
            shape: weights.shape().to_vec(),
        });
    };
    if input.per_sample() != d_in {
        return Err(TensorError::Mismatch {
            op: OP,
            dim: "input features",
            expected: d_in,
            actual: input.per_sample(),
        });
    }
    if bias.len() != d_out {
        return Err(TensorError::Mismatch {
            op: OP,
            dim: "bias length",
            expected: d_out,
            actual: bias.len(),
        });
    }
    let n = input.batch();
    let mut out: Vec<f32> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    gemm_nt(n, d_in, d_out, input.data(), weights.data(), &mut out);
    Tensor::new(vec![n, d_out], out)
}

/// Softmax over axis 1, independently at every other index. Max-shifted.
pub fn softmax_channels(input: &Tensor) -> Result<Tensor> {
    let (c, inner) = channel_layout(input);
    if input.rank() < 2 || c < 2 {
        return Err(TensorError::Mismatch {
            op: "softmax_channels",
            dim: "channel extent (at least)",
            expected: 2,
            actual: c,
        });
    }
    let mut out = input.data().to_vec();
    for block in out.chunks_exact_mut(c * inner) {
        for pos in 0..inner {
            let max = (0..c).map(|ch| block[ch * inner + pos]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (block[ch * inner + pos] - max).exp();
                block[ch * inner + pos] = e;
                sum += e;
            }
            for ch in 0..c {
                block[ch * inner + pos] /= sum;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}
