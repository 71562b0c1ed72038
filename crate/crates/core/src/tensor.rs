//! Dense tensors in channel-major, row-major layout.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use crate::error::dim_err;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Real scalar usable by the tensor engine.
///
/// Implemented for `f32` (the default precision) and `f64` (used when
/// checking gradients against finite differences).
pub trait Scalar: num_traits::Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A dense tensor of rank 1 to 4.
///
/// Feature maps are `C×H×W`, masks `H×W`, convolution kernels
/// `outC×inC×kH×kW`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(dim_err!("rank {} outside 1..=4", dims.len()));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(dim_err!(
                "dims {:?} hold {} values, got {}",
                dims,
                expected,
                data.len()
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self::new(dims, vec![value; n]).expect("rank checked by caller")
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n = dims.iter().product();
        let data = (0..n).map(f).collect();
        Self::new(dims, data).expect("rank checked by caller")
    }

    /// Values drawn uniformly from `[lo, hi)`.
    pub fn random(dims: &[usize], lo: f64, hi: f64, rng: &mut SplitMix64) -> Self {
        Self::from_fn(dims, |_| T::from_f64(rng.uniform(lo, hi)))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(dim_err!("expected C×H×W, got {:?}", self.dims)),
        }
    }

    /// `(H, W)` of a rank-2 tensor.
    pub fn hw(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [h, w] => Ok((h, w)),
            _ => Err(dim_err!("expected H×W, got {:?}", self.dims)),
        }
    }

    /// Plane `c` of a rank-3 tensor.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.dims[1] * self.dims[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let plane = self.dims[1] * self.dims[2];
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Plane `c` as an `H×W` tensor.
    pub fn plane(&self, c: usize) -> Result<Tensor<T>> {
        let (ch, h, w) = self.chw()?;
        if c >= ch {
            return Err(dim_err!("channel {c} out of range for {ch} channels"));
        }
        Tensor::new(&[h, w], self.channel(c).to_vec())
    }

    /// Stacks equally sized `H×W` planes into an `N×H×W` tensor.
    pub fn stack(planes: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero planes".into()))?;
        let (h, w) = first.hw()?;
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.hw()? != (h, w) {
                return Err(dim_err!("plane {:?} differs from {:?}", p.dims, first.dims));
            }
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[planes.len(), h, w], data)
    }

    /// Concatenates `C×H×W` tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot concatenate zero tensors".into()))?;
        let (_, h, w) = first.chw()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(dim_err!("spatial dims {:?} differ from {:?}", p.dims, first.dims));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[c_total, h, w], data)
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Tensor<T>> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }

    /// Element-wise `a·self + b·other`.
    pub fn axpby(&self, a: T, other: &Tensor<T>, b: T) -> Result<Tensor<T>> {
        if self.dims != other.dims {
            return Err(dim_err!("{:?} vs {:?}", self.dims, other.dims));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weights of a same-padded 2-D convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    kernel: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// `kernel` must be `outC×inC×kH×kW` with odd `kH`, `kW`; `bias` has
    /// length `outC`.
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [out_c, _, kh, kw] = kernel.dims()[..] else {
            return Err(dim_err!("kernel must be rank 4, got {:?}", kernel.dims()));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "kernel extents must be odd, got {kh}×{kw}"
            )));
        }
        if bias.dims() != [out_c] {
            return Err(dim_err!("bias {:?} does not match {out_c} output channels", bias.dims()));
        }
        Ok(Self { kernel, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_size: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[out_channels, in_channels, kernel_size, kernel_size]),
            Tensor::zeros(&[out_channels]),
        )
    }

    /// Identity map: centre tap 1 on the matching channel, zero bias.
    pub fn identity(channels: usize, kernel_size: usize) -> Result<Self> {
        let mut p = Self::zeros(channels, channels, kernel_size)?;
        let k = kernel_size;
        let centre = (k / 2) * k + k / 2;
        for c in 0..channels {
            p.kernel.data_mut()[(c * channels + c) * k * k + centre] = T::one();
        }
        Ok(p)
    }

    /// Uniform weights in `±scale/sqrt(fan_in)`, zero bias.
    pub fn random(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        scale: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel_size * kernel_size) as f64;
        let bound = scale / num_traits::Float::sqrt(fan_in);
        Self::new(
            Tensor::random(
                &[out_channels, in_channels, kernel_size, kernel_size],
                -bound,
                bound,
                rng,
            ),
            Tensor::zeros(&[out_channels]),
        )
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn kernel_mut(&mut self) -> &mut Tensor<T> {
        &mut self.kernel
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[1]
    }

    /// `(kH, kW)`.
    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.dims()[2], self.kernel.dims()[3])
    }

    /// `self - lr·grad`, in place.
    pub fn descend(&mut self, grad: &ConvParams<T>, lr: T) {
        for (w, g) in self.kernel.data_mut().iter_mut().zip(grad.kernel.data()) {
            *w = *w - lr * *g;
        }
        for (b, g) in self.bias.data_mut().iter_mut().zip(grad.bias.data()) {
            *b = *b - lr * *g;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            kernel: self.kernel.cast(),
            bias: self.bias.cast(),
        }
    }

    /// Number of scalar parameters (kernel then bias).
    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Parameter `i` in kernel-then-bias order.
    pub fn param(&self, i: usize) -> T {
        let k = self.kernel.len();
        if i < k {
            self.kernel.data()[i]
        } else {
            self.bias.data()[i - k]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut T {
        let k = self.kernel.len();
        if i < k {
            &mut self.kernel.data_mut()[i]
        } else {
            &mut self.bias.data_mut()[i - k]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[], vec![]).is_err());
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn even_kernels_are_rejected() {
        assert!(ConvParams::<f32>::zeros(1, 1, 2).is_err());
        assert!(ConvParams::<f32>::zeros(1, 1, 3).is_ok());
    }

    #[test]
    fn stack_and_plane_round_trip() {
        let a = Tensor::<f32>::full(&[2, 2], 1.0);
        let b = Tensor::<f32>::full(&[2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert_eq!(s.plane(1).unwrap(), b);
    }
}
