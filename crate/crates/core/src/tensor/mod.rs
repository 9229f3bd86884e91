//! Dense f32 tensors and the handful of layer kernels the stage networks need.
//!
//! Layout is row-major with the innermost dimension last. Image data is NCHW.
//! Every kernel is a pure function of its inputs; the backward pass is driven
//! per layer from a [`ForwardCache`] captured during the forward pass.

mod gemm;
mod grad;
mod ops;

pub use grad::{backward, ForwardCache, Layer, LayerGrads};
pub use ops::{conv2d, fully_connected, max_pool, pool_extent, prelu, softmax_channels};

pub(crate) use gemm::{gemm_nn, gemm_nt, gemm_tn};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} values were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero or empty extent")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    Mismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: kernel extent {kernel} exceeds input {dim} {extent}")]
    KernelTooLarge {
        op: &'static str,
        dim: &'static str,
        kernel: usize,
        extent: usize,
    },
    #[error("{0}: stride and kernel must be positive")]
    ZeroStride(&'static str),
    #[error("backward for {0} requires the cached forward state of the same layer")]
    MissingCache(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Panics on a zero extent; use [`Tensor::new`] for untrusted shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("non-empty shape")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(&mut f).collect()).expect("non-empty shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    /// Leading (batch) extent.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per batch entry.
    pub fn per_sample(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Flat offset of `(n, c, h, w)` in a rank-4 tensor.
    pub fn offset4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = &self.shape;
        ((n * s[1] + c) * s[2] + h) * s[3] + w
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.offset4(n, c, h, w)]
    }

    /// Copies batch entry `n` out as a tensor with leading extent 1.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.per_sample();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors with leading extent 1 along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or(TensorError::ZeroExtent(vec![0]))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(TensorError::Mismatch {
                    op: "stack",
                    dim: "sample size",
                    expected: first.per_sample(),
                    actual: t.per_sample(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        shape[0] = data.len() / first.per_sample();
        Tensor::new(shape, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_lengths_and_zero_extents() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { expected: 4, actual: 3, .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroExtent(_))
        ));
    }

    #[test]
    fn stack_and_sample_are_inverse() {
        let a = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32);
        let b = Tensor::from_fn(&[1, 2, 2, 2], |i| -(i as f32));
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 2]);
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
    }

    proptest! {
        #[test]
        fn offset4_round_trips(n in 1usize..4, c in 1usize..4, h in 1usize..6, w in 1usize..6) {
            let t = Tensor::zeros(&[n, c, h, w]);
            let mut seen = vec![false; t.len()];
            for a in 0..n { for b in 0..c { for y in 0..h { for x in 0..w {
                let off = t.offset4(a, b, y, x);
                prop_assert!(!seen[off]);
                seen[off] = true;
                // decode back
                let dx = off % w;
                let dy = (off / w) % h;
                let dc = (off / (w * h)) % c;
                let dn = off / (w * h * c);
                prop_assert_eq!((dn, dc, dy, dx), (a, b, y, x));
            }}}}
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
