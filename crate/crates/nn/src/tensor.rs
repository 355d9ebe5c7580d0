//! Dense 4-D tensors in NCHW layout.

use std::fmt;

/// A dense `f64` tensor with a fixed `[batch, channels, height, width]` shape.
///
/// Scalars are represented as `[1, 1, 1, 1]`, per-channel vectors as `[1, C, 1, 1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    /// Elements in one `[C, H, W]` sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]) * self.shape[3] + idx[3]
    }
    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.index(idx)]
    }
    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: f64) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }
    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.sample_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stacks samples along the batch axis. All parts must share `[C, H, W]`.
    pub fn concat_batch(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_batch of nothing");
        let [_, c, h, w] = parts[0].shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], &[c, h, w], "concat_batch shape mismatch");
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    pub fn slice_batch(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.n(), "slice_batch out of range");
        let s = self.sample_len();
        Tensor::from_vec(
            [len, self.c(), self.h(), self.w()],
            self.data[start * s..(start + len) * s].to_vec(),
        )
    }

    /// Copies channels `[start, start + len)` of every sample.
    pub fn slice_channels(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.c(), "slice_channels out of range");
        let plane = self.plane_len();
        let mut out = Tensor::zeros([self.n(), len, self.h(), self.w()]);
        for n in 0..self.n() {
            let src = &self.sample(n)[start * plane..(start + len) * plane];
            out.sample_mut(n).copy_from_slice(src);
        }
        out
    }

    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_channels of nothing");
        let [n, _, h, w] = parts[0].shape;
        let c: usize = parts.iter().map(|p| p.c()).sum();
        let mut out = Tensor::zeros([n, c, h, w]);
        let plane = h * w;
        for i in 0..n {
            let mut off = 0;
            for p in parts {
                assert_eq!(
                    (p.n(), p.h(), p.w()),
                    (n, h, w),
                    "concat_channels shape mismatch"
                );
                let src = p.sample(i);
                out.sample_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += p.c() * plane;
            }
        }
        out
    }
}
