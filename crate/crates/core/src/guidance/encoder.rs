//! Deterministic fixed-weight feature encoder standing in for a trained
//! backbone.
//!
//! Per branch: a 3×3 convolution (3 → 8) with ReLU gives local features;
//! two context paths average-pool them by 2 and 4, project to 4 channels
//! with ReLU and upsample bilinearly. The 16 concatenated channels are
//! normalised per channel over the image and mixed by a final 1×1
//! convolution. Weights are drawn from SplitMix64 seeded with
//! `ENCODER_SEED + branch index`.

use alloc::vec::Vec;

use crate::error::dim_err;
use crate::ops::{conv2d, pairwise_sum};
use crate::rng::SplitMix64;
use crate::{ConvParams, Result, Scalar, Tensor};

pub const ENCODER_CHANNELS: usize = 16;
pub const ENCODER_SEED: u64 = 0x5EED_0E1C;

const LOCAL: usize = 8;
const CONTEXT: usize = 4;
const NORM_EPS: f64 = 1e-5;

/// Feature branch: classification or one of the three structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    Classification,
    Foreground,
    Boundary,
    Centroid,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::Classification,
        Branch::Foreground,
        Branch::Boundary,
        Branch::Centroid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Classification => "cls",
            Branch::Foreground => "fg",
            Branch::Boundary => "bd",
            Branch::Centroid => "ct",
        }
    }
}

struct Weights<T> {
    local: ConvParams<T>,
    context: [ConvParams<T>; 2],
    mix: ConvParams<T>,
}

fn with_bias<T: Scalar>(p: ConvParams<f64>, bound: f64, rng: &mut SplitMix64) -> ConvParams<T> {
    let mut p = p;
    for b in p.bias_mut().data_mut() {
        *b = rng.uniform(-bound, bound);
    }
    p.cast()
}

fn weights<T: Scalar>(branch: Branch) -> Weights<T> {
    let mut rng = SplitMix64::new(ENCODER_SEED.wrapping_add(branch.index() as u64));
    let mut conv = |o, i, k, bias| {
        let p = ConvParams::<f64>::random(o, i, k, 1.7, &mut rng).expect("odd kernel");
        with_bias(p, bias, &mut rng)
    };
    Weights {
        local: conv(LOCAL, 3, 3, 0.1),
        context: [conv(CONTEXT, LOCAL, 1, 0.1), conv(CONTEXT, LOCAL, 1, 0.1)],
        mix: conv(ENCODER_CHANNELS, ENCODER_CHANNELS, 1, 0.1),
    }
}

fn avg_pool<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (c, h, w) = x.chw().expect("rank 3");
    let (oh, ow) = (h / f, w / f);
    let inv = T::from_f64(1.0 / (f * f) as f64);
    Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let src = x.channel(ch);
        let mut s = T::zero();
        for dy in 0..f {
            for dx in 0..f {
                s = s + src[(y * f + dy) * w + xx * f + dx];
            }
        }
        s * inv
    })
}

/// Bilinear upsampling by `f` with half-pixel centres and edge clamping.
fn upsample<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (c, h, w) = x.chw().expect("rank 3");
    let (oh, ow) = (h * f, w * f);
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, T::from_f64(s - i0 as f64))
    };
    Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let src = x.channel(ch);
        let (y0, y1, ty) = coord(y, h);
        let (x0, x1, tx) = coord(xx, w);
        let lerp = |a: T, b: T, t: T| a + (b - a) * t;
        let top = lerp(src[y0 * w + x0], src[y0 * w + x1], tx);
        let bot = lerp(src[y1 * w + x0], src[y1 * w + x1], tx);
        lerp(top, bot, ty)
    })
}

fn relu<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Zero mean, unit variance per channel; constant channels become zero.
fn instance_norm<T: Scalar>(mut x: Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw().expect("rank 3");
    let n = T::from_f64((h * w) as f64);
    for ch in 0..c {
        let plane = x.channel_mut(ch);
        if plane.iter().all(|&v| v == plane[0]) {
            plane.fill(T::zero());
            continue;
        }
        let mean = pairwise_sum(plane) / n;
        let sq: Vec<T> = plane.iter().map(|&v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / n;
        let scale = T::one() / (var + T::from_f64(NORM_EPS)).sqrt();
        for v in plane.iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
    x
}

/// `16×H×W` features of a `3×H×W` image; `H` and `W` must be positive
/// multiples of 4.
pub fn toy_encoder<T: Scalar>(image: &Tensor<T>, branch: Branch) -> Result<Tensor<T>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(dim_err!("image must have 3 channels, has {c}"));
    }
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(dim_err!("image size {h}×{w} is not a positive multiple of 4"));
    }
    let wt = weights::<T>(branch);
    let local = relu(conv2d(image, &wt.local)?);
    let mut parts = alloc::vec![local.clone()];
    for (k, f) in [2, 4].into_iter().enumerate() {
        let ctx = relu(conv2d(&avg_pool(&local, f), &wt.context[k])?);
        parts.push(upsample(&ctx, f));
    }
    let stacked = instance_norm(Tensor::concat_channels(&parts)?);
    conv2d(&stacked, &wt.mix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let mut rng = SplitMix64::new(2);
        let img = Tensor::<f32>::random(&[3, 8, 12], 0.0, 1.0, &mut rng);
        let a = toy_encoder(&img, Branch::Boundary).unwrap();
        assert_eq!(a.dims(), &[16, 8, 12]);
        assert_eq!(toy_encoder(&img, Branch::Boundary).unwrap(), a);
        assert_ne!(toy_encoder(&img, Branch::Foreground).unwrap(), a);
        assert!(a.all_finite());
    }

    #[test]
    fn zero_image_gives_bias() {
        let out = toy_encoder(&Tensor::<f64>::zeros(&[3, 8, 8]), Branch::Classification).unwrap();
        let bias = weights::<f64>(Branch::Classification).mix.bias().clone();
        for c in 0..16 {
            assert!(out.channel(c).iter().all(|&v| v == bias.data()[c]));
        }
    }

    #[test]
    fn size_must_be_multiple_of_four() {
        assert!(toy_encoder(&Tensor::<f32>::zeros(&[3, 6, 8]), Branch::Centroid).is_err());
        assert!(toy_encoder(&Tensor::<f32>::zeros(&[1, 8, 8]), Branch::Centroid).is_err());
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = Tensor::<f64>::full(&[2, 3, 3], 1.25);
        assert!(upsample(&x, 4).data().iter().all(|&v| v == 1.25));
    }
}
