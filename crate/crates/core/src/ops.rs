//! Forward primitives shared by every guidance head.
//!
//! Reductions over pixels use a pairwise tree with a fixed split so that
//! results do not depend on how work is scheduled.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::dim_err;
use crate::{ConvParams, Error, Result, Scalar, Tensor};

/// Pixels whose feature norm falls below this map to cosine 0.
pub const COSINE_EPS: f64 = 1e-12;

/// Lower clamp on the target-class probability inside the cross-entropy.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Default additive smoothing of the Dice loss.
pub const DEFAULT_DICE_SMOOTH: f64 = 1.0;

const PAIRWISE_BLOCK: usize = 8;

const SLICE_BLOCK: usize = 256;
const LANES: usize = 8;

/// Pairwise (tree) sum with a fixed split.
///
/// Leaves of up to 256 values are summed in 8 interleaved lanes that are
/// then combined as a balanced tree.
pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    if values.len() <= SLICE_BLOCK {
        let mut lanes = [T::zero(); LANES];
        let chunks = values.chunks_exact(LANES);
        let tail = chunks.remainder();
        for c in chunks {
            for (l, &v) in lanes.iter_mut().zip(c) {
                *l = *l + v;
            }
        }
        for (l, &v) in lanes.iter_mut().zip(tail) {
            *l = *l + v;
        }
        let [a, b, c, d, e, f, g, h] = lanes;
        ((a + b) + (c + d)) + ((e + f) + (g + h))
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Pairwise sum of `f(0) + … + f(n-1)`.
pub fn pairwise_sum_by<T: Scalar>(n: usize, f: impl Fn(usize) -> T) -> T {
    fn rec<T: Scalar>(lo: usize, hi: usize, f: &impl Fn(usize) -> T) -> T {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = T::zero();
            for i in lo..hi {
                acc = acc + f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity of two vectors; 0 when either has norm below
/// [`COSINE_EPS`].
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let eps = T::from_f64(COSINE_EPS);
    let na = norm(a);
    let nb = norm(b);
    if na < eps || nb < eps {
        return T::zero();
    }
    let c = dot(a, b) / (na * nb);
    c.max(-T::one()).min(T::one())
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Same-padded cross-correlation plus bias.
///
/// `input` is `C×H×W`; the result is `outC×H×W`. Out-of-image taps read zero.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    if c != params.in_channels() {
        return Err(dim_err!(
            "input has {c} channels, kernel expects {}",
            params.in_channels()
        ));
    }
    let (kh, kw) = params.kernel_size();
    if h < kh || w < kw {
        return Err(dim_err!("{h}×{w} input smaller than {kh}×{kw} kernel"));
    }
    let out_c = params.out_channels();
    let (ph, pw) = (kh / 2, kw / 2);
    let kernel = params.kernel().data();
    let bias = params.bias().data();
    let src = input.data();
    let mut out = vec![T::zero(); out_c * h * w];

    for o in 0..out_c {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..c {
            let channel = &src[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = kernel[((o * c + i) * kh + ky) * kw + kx];
                    if wgt == T::zero() {
                        continue;
                    }
                    let dy = ky as isize - ph as isize;
                    let dx = kx as isize - pw as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let (s0, s1) = ((x0 as isize + dx) as usize, (x1 as isize + dx) as usize);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let row_out = &mut plane[y * w + x0..y * w + x1];
                        let row_in = &channel[sy * w + s0..sy * w + s1];
                        for (o, &v) in row_out.iter_mut().zip(row_in) {
                            *o = *o + wgt * v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[out_c, h, w], out)
}

/// Per-channel average of `features` weighted by `mask`.
pub fn masked_pool<T: Scalar>(features: &Tensor<T>, mask: &Tensor<T>) -> Result<Vec<T>> {
    let (c, h, w) = features.chw()?;
    if mask.hw()? != (h, w) {
        return Err(dim_err!(
            "mask {:?} does not match features {:?}",
            mask.dims(),
            features.dims()
        ));
    }
    let m = mask.data();
    let total = pairwise_sum(m);
    if total.is_nan() || total <= T::zero() {
        return Err(Error::EmptyMask);
    }
    Ok((0..c)
        .map(|ch| {
            let f = features.channel(ch);
            pairwise_sum_by(h * w, |i| f[i] * m[i]) / total
        })
        .collect())
}

/// Per-pixel cosine similarity between the feature vector and `proto`.
pub fn cosine_map<T: Scalar>(features: &Tensor<T>, proto: &[T]) -> Result<Tensor<T>> {
    let (c, h, w) = features.chw()?;
    if proto.len() != c {
        return Err(dim_err!("prototype length {} vs {c} channels", proto.len()));
    }
    let eps = T::from_f64(COSINE_EPS);
    let pn = norm(proto);
    if pn < eps {
        return Err(Error::DegeneratePrototype);
    }
    let n = h * w;
    let src = features.data();
    let out = (0..n)
        .map(|p| {
            let mut d = T::zero();
            let mut sq = T::zero();
            for ch in 0..c {
                let v = src[ch * n + p];
                d = d + v * proto[ch];
                sq = sq + v * v;
            }
            let fnorm = sq.sqrt();
            if fnorm < eps {
                T::zero()
            } else {
                (d / (fnorm * pn)).max(-T::one()).min(T::one())
            }
        })
        .collect();
    Tensor::new(&[h, w], out)
}

/// Softmax across the leading axis of an `N×H×W` stack.
pub fn channel_softmax<T: Scalar>(stack: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w) = stack.chw()?;
    if n == 0 {
        return Err(dim_err!("softmax over zero channels"));
    }
    let plane = h * w;
    let src = stack.data();
    let mut out = vec![T::zero(); n * plane];
    for p in 0..plane {
        let mut mx = T::neg_infinity();
        for k in 0..n {
            mx = mx.max(src[k * plane + p]);
        }
        let mut sum = T::zero();
        for k in 0..n {
            let e = (src[k * plane + p] - mx).exp();
            out[k * plane + p] = e;
            sum = sum + e;
        }
        for k in 0..n {
            out[k * plane + p] = out[k * plane + p] / sum;
        }
    }
    Tensor::new(&[n, h, w], out)
}

/// Index of the hot channel at pixel `p`, or `None` for an all-zero
/// (ignored) target row.
pub(crate) fn target_class<T: Scalar>(target: &[T], channels: usize, plane: usize, p: usize) -> Option<usize> {
    (0..channels).find(|&k| target[k * plane + p] > T::from_f64(0.5))
}

/// Mean over labelled pixels of `-ln(pred[target])`.
///
/// `pred` is a softmaxed `N×H×W` stack and `target` a one-hot stack of the
/// same shape. Pixels whose target row is all zero carry no label and are
/// left out of the mean; with no labelled pixels the loss is 0.
pub fn cross_entropy_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.dims() != target.dims() {
        return Err(dim_err!("pred {:?} vs target {:?}", pred.dims(), target.dims()));
    }
    let (n, h, w) = pred.chw()?;
    let plane = h * w;
    let floor = T::from_f64(CE_PROB_FLOOR);
    let labelled = (0..plane)
        .filter(|&p| target_class(target.data(), n, plane, p).is_some())
        .count();
    if labelled == 0 {
        return Ok(T::zero());
    }
    let pd = pred.data();
    let td = target.data();
    let total = pairwise_sum_by(plane, |p| match target_class(td, n, plane, p) {
        Some(k) => -(pd[k * plane + p].max(floor)).ln(),
        None => T::zero(),
    });
    Ok(total / T::from_f64(labelled as f64))
}

/// `1 - (2·Σ pred·target + ε) / (Σ pred + Σ target + ε)`.
pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, smooth: T) -> Result<T> {
    if pred.dims() != target.dims() {
        return Err(dim_err!("pred {:?} vs target {:?}", pred.dims(), target.dims()));
    }
    let (p, t) = (pred.data(), target.data());
    let inter = pairwise_sum_by(p.len(), |i| p[i] * t[i]);
    let denom = pairwise_sum(p) + pairwise_sum(t) + smooth;
    if denom == T::zero() {
        return Ok(T::zero());
    }
    let two = T::from_f64(2.0);
    Ok(T::one() - (two * inter + smooth) / denom)
}
