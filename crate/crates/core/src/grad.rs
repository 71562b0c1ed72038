//! Analytic gradients of the guidance-head losses.
//!
//! Input feature maps are frozen, so each graph is shallow: an optional
//! convolution, cosine similarity against one or more prototypes, then either
//! a softmax scored by cross-entropy or a logistic squashing scored by Dice.
//! Gradients are derived by hand for exactly these graphs; anything else is
//! rejected with [`Error::UnsupportedGraph`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::dim_err;
use crate::ops::{
    self, channel_softmax, conv2d, cosine_map, pairwise_sum, pairwise_sum_by, sigmoid,
    target_class, COSINE_EPS, CE_PROB_FLOOR,
};
use crate::{ConvParams, Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind<T> {
    CrossEntropy,
    Dice { smooth: T },
}

/// A loss and the factor it is multiplied by.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective<T> {
    pub loss: LossKind<T>,
    pub weight: T,
}

impl<T: Scalar> Objective<T> {
    pub fn cross_entropy() -> Self {
        Self {
            loss: LossKind::CrossEntropy,
            weight: T::one(),
        }
    }

    pub fn dice(smooth: T) -> Self {
        Self {
            loss: LossKind::Dice { smooth },
            weight: T::one(),
        }
    }

    pub fn weighted(self, weight: T) -> Self {
        Self { weight, ..self }
    }
}

/// Forward graphs the gradient engine understands.
#[derive(Clone, Copy, Debug)]
pub enum GuidanceGraph<'a, T> {
    /// `softmax_m cos(F, b_m)`: base-prototype classification.
    BaseClassifier {
        features: &'a Tensor<T>,
        prototypes: &'a [Vec<T>],
    },
    /// `softmax_n cos(conv(Fq), p_n)`: the guided classification head.
    GuidedClassifier {
        query: &'a Tensor<T>,
        conv: &'a ConvParams<T>,
        prototypes: &'a [Vec<T>],
    },
    /// `softmax conv(Fq)`: plain convolutional classifier.
    ConvClassifier {
        query: &'a Tensor<T>,
        conv: &'a ConvParams<T>,
    },
    /// `σ(cos(conv_ω(Fq), u) + conv_φ(Fs))`: a structural guidance head.
    /// `support = None` drops the support-feature addend.
    Structural {
        query: &'a Tensor<T>,
        conv: &'a ConvParams<T>,
        prototype: &'a [T],
        support: Option<(&'a Tensor<T>, &'a ConvParams<T>)>,
    },
    /// `σ(conv(Fq))`: unguided single-channel mask head.
    ConvMask {
        query: &'a Tensor<T>,
        conv: &'a ConvParams<T>,
    },
}

impl<T> GuidanceGraph<'_, T> {
    fn is_classifier(&self) -> bool {
        matches!(
            self,
            Self::BaseClassifier { .. } | Self::GuidedClassifier { .. } | Self::ConvClassifier { .. }
        )
    }
}

/// Loss value and its partial derivatives.
///
/// `conv` is present for graphs with a query convolution, `support_conv` for
/// structural graphs with the support addend, and `prototypes` holds one
/// gradient per prototype the graph consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub loss: T,
    pub conv: Option<ConvParams<T>>,
    pub support_conv: Option<ConvParams<T>>,
    pub prototypes: Vec<Vec<T>>,
}

fn check_pairing<T>(graph: &GuidanceGraph<'_, T>, objective: &Objective<T>) -> Result<()> {
    match (&objective.loss, graph.is_classifier()) {
        (LossKind::CrossEntropy, true) | (LossKind::Dice { .. }, false) => Ok(()),
        (LossKind::CrossEntropy, false) => Err(Error::UnsupportedGraph(
            "cross-entropy needs a classification graph",
        )),
        (LossKind::Dice { .. }, true) => Err(Error::UnsupportedGraph(
            "dice needs a single-channel mask graph",
        )),
    }
}

/// Output of a graph: class probabilities (`N×H×W`) or a mask (`H×W`).
pub fn forward<T: Scalar>(graph: &GuidanceGraph<'_, T>) -> Result<Tensor<T>> {
    match *graph {
        GuidanceGraph::BaseClassifier {
            features,
            prototypes,
        } => channel_softmax(&cosine_stack(features, prototypes)?),
        GuidanceGraph::GuidedClassifier {
            query,
            conv,
            prototypes,
        } => channel_softmax(&cosine_stack(&conv2d(query, conv)?, prototypes)?),
        GuidanceGraph::ConvClassifier { query, conv } => channel_softmax(&conv2d(query, conv)?),
        GuidanceGraph::Structural {
            query,
            conv,
            prototype,
            support,
        } => {
            let pre = structural_logits(query, conv, prototype, support)?;
            Ok(pre.map(sigmoid))
        }
        GuidanceGraph::ConvMask { query, conv } => {
            single_channel(conv)?;
            let z = conv2d(query, conv)?;
            let (_, h, w) = z.chw()?;
            Ok(z.reshape(&[h, w])?.map(sigmoid))
        }
    }
}

fn single_channel<T: Scalar>(conv: &ConvParams<T>) -> Result<(usize, usize)> {
    if conv.out_channels() != 1 {
        return Err(dim_err!(
            "mask head must output 1 channel, has {}",
            conv.out_channels()
        ));
    }
    Ok(conv.kernel_size())
}

fn cosine_stack<T: Scalar>(features: &Tensor<T>, prototypes: &[Vec<T>]) -> Result<Tensor<T>> {
    let planes = prototypes
        .iter()
        .map(|p| cosine_map(features, p))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&planes)
}

/// Pre-squash structural map: cosine term plus optional support term.
pub(crate) fn structural_logits<T: Scalar>(
    query: &Tensor<T>,
    conv: &ConvParams<T>,
    prototype: &[T],
    support: Option<(&Tensor<T>, &ConvParams<T>)>,
) -> Result<Tensor<T>> {
    let cos = cosine_map(&conv2d(query, conv)?, prototype)?;
    match support {
        None => Ok(cos),
        Some((fs, phi)) => {
            single_channel(phi)?;
            if fs.dims()[1..] != query.dims()[1..] {
                return Err(dim_err!(
                    "support {:?} and query {:?} differ spatially",
                    fs.dims(),
                    query.dims()
                ));
            }
            let extra = conv2d(fs, phi)?;
            cos.axpby(T::one(), &extra.reshape(cos.dims())?, T::one())
        }
    }
}

/// Weighted loss of a graph against `target`, computed from the forward
/// primitives alone.
pub fn objective_value<T: Scalar>(
    graph: &GuidanceGraph<'_, T>,
    objective: &Objective<T>,
    target: &Tensor<T>,
) -> Result<T> {
    check_pairing(graph, objective)?;
    let out = forward(graph)?;
    let raw = match objective.loss {
        LossKind::CrossEntropy => ops::cross_entropy_loss(&out, target)?,
        LossKind::Dice { smooth } => ops::dice_loss(&out, target, smooth)?,
    };
    Ok(objective.weight * raw)
}

/// Loss and analytic partial derivatives for `graph` against `target`.
pub fn guidance_gradients<T: Scalar>(
    graph: &GuidanceGraph<'_, T>,
    objective: &Objective<T>,
    target: &Tensor<T>,
) -> Result<Gradients<T>> {
    check_pairing(graph, objective)?;
    let weight = objective.weight;
    match *graph {
        GuidanceGraph::BaseClassifier {
            features,
            prototypes,
        } => {
            let (loss, d_logits) = softmax_ce_backward(&cosine_stack(features, prototypes)?, target, weight)?;
            let mut protos = Vec::with_capacity(prototypes.len());
            for (n, p) in prototypes.iter().enumerate() {
                let (dp, _) = cosine_backward(features, p, &d_logits.plane(n)?, false)?;
                protos.push(dp);
            }
            Ok(Gradients {
                loss,
                conv: None,
                support_conv: None,
                prototypes: protos,
            })
        }
        GuidanceGraph::GuidedClassifier {
            query,
            conv,
            prototypes,
        } => {
            let z = conv2d(query, conv)?;
            let (loss, d_logits) = softmax_ce_backward(&cosine_stack(&z, prototypes)?, target, weight)?;
            let mut dz = Tensor::zeros(z.dims());
            let mut protos = Vec::with_capacity(prototypes.len());
            for (n, p) in prototypes.iter().enumerate() {
                let (dp, dzn) = cosine_backward(&z, p, &d_logits.plane(n)?, true)?;
                protos.push(dp);
                let dzn = dzn.expect("requested");
                for (a, b) in dz.data_mut().iter_mut().zip(dzn.data()) {
                    *a = *a + *b;
                }
            }
            Ok(Gradients {
                loss,
                conv: Some(conv_backward(query, conv, &dz)?),
                support_conv: None,
                prototypes: protos,
            })
        }
        GuidanceGraph::ConvClassifier { query, conv } => {
            let (loss, d_logits) = softmax_ce_backward(&conv2d(query, conv)?, target, weight)?;
            Ok(Gradients {
                loss,
                conv: Some(conv_backward(query, conv, &d_logits)?),
                support_conv: None,
                prototypes: Vec::new(),
            })
        }
        GuidanceGraph::Structural {
            query,
            conv,
            prototype,
            support,
        } => {
            let z = conv2d(query, conv)?;
            let logits = structural_logits(query, conv, prototype, support)?;
            let (loss, d_logits) = sigmoid_dice_backward(&logits, target, objective, weight)?;
            let (dp, dz) = cosine_backward(&z, prototype, &d_logits, true)?;
            let dz = dz.expect("requested");
            let support_conv = match support {
                Some((fs, phi)) => {
                    let (_, h, w) = fs.chw()?;
                    Some(conv_backward(fs, phi, &d_logits.clone().reshape(&[1, h, w])?)?)
                }
                None => None,
            };
            Ok(Gradients {
                loss,
                conv: Some(conv_backward(query, conv, &dz)?),
                support_conv,
                prototypes: vec![dp],
            })
        }
        GuidanceGraph::ConvMask { query, conv } => {
            single_channel(conv)?;
            let z = conv2d(query, conv)?;
            let (_, h, w) = z.chw()?;
            let logits = z.reshape(&[h, w])?;
            let (loss, d_logits) = sigmoid_dice_backward(&logits, target, objective, weight)?;
            Ok(Gradients {
                loss,
                conv: Some(conv_backward(query, conv, &d_logits.reshape(&[1, h, w])?)?),
                support_conv: None,
                prototypes: Vec::new(),
            })
        }
    }
}

/// Softmax + cross-entropy: loss and d(loss)/d(logits).
fn softmax_ce_backward<T: Scalar>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    weight: T,
) -> Result<(T, Tensor<T>)> {
    if logits.dims() != target.dims() {
        return Err(dim_err!("logits {:?} vs target {:?}", logits.dims(), target.dims()));
    }
    let probs = channel_softmax(logits)?;
    let loss = weight * ops::cross_entropy_loss(&probs, target)?;
    let (n, h, w) = probs.chw()?;
    let plane = h * w;
    let td = target.data();
    let pd = probs.data();
    let labelled = (0..plane)
        .filter(|&p| target_class(td, n, plane, p).is_some())
        .count();
    let mut grad = Tensor::zeros(probs.dims());
    if labelled == 0 {
        return Ok((loss, grad));
    }
    let scale = weight / T::from_f64(labelled as f64);
    let floor = T::from_f64(CE_PROB_FLOOR);
    let gd = grad.data_mut();
    for p in 0..plane {
        let Some(t) = target_class(td, n, plane, p) else {
            continue;
        };
        if pd[t * plane + p] < floor {
            continue;
        }
        for k in 0..n {
            let y = if k == t { T::one() } else { T::zero() };
            gd[k * plane + p] = scale * (pd[k * plane + p] - y);
        }
    }
    Ok((loss, grad))
}

/// Sigmoid + Dice: loss and d(loss)/d(logits).
fn sigmoid_dice_backward<T: Scalar>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    objective: &Objective<T>,
    weight: T,
) -> Result<(T, Tensor<T>)> {
    let LossKind::Dice { smooth } = objective.loss else {
        return Err(Error::UnsupportedGraph("dice expected"));
    };
    if logits.dims() != target.dims() {
        return Err(dim_err!("mask {:?} vs target {:?}", logits.dims(), target.dims()));
    }
    let m = logits.map(sigmoid);
    let loss = weight * ops::dice_loss(&m, target, smooth)?;
    let (md, td) = (m.data(), target.data());
    let inter = pairwise_sum_by(md.len(), |i| md[i] * td[i]);
    let denom = pairwise_sum(md) + pairwise_sum(td) + smooth;
    let mut grad = Tensor::zeros(logits.dims());
    if denom == T::zero() {
        return Ok((loss, grad));
    }
    let two = T::from_f64(2.0);
    let numer = two * inter + smooth;
    let d2 = denom * denom;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        let d_mask = -weight * (two * td[i] * denom - numer) / d2;
        *g = d_mask * md[i] * (T::one() - md[i]);
    }
    Ok((loss, grad))
}

/// Back-propagates `d_cos` (H×W) through `cos(Z(x), p)`.
///
/// Returns the prototype gradient and, if requested, the gradient w.r.t. Z.
fn cosine_backward<T: Scalar>(
    z: &Tensor<T>,
    proto: &[T],
    d_cos: &Tensor<T>,
    want_dz: bool,
) -> Result<(Vec<T>, Option<Tensor<T>>)> {
    let (c, h, w) = z.chw()?;
    let plane = h * w;
    let eps = T::from_f64(COSINE_EPS);
    let pn = ops::norm(proto);
    if pn < eps {
        return Err(Error::DegeneratePrototype);
    }
    let zd = z.data();
    let dc = d_cos.data();
    // Per pixel: 1/|Z| (0 where the cosine is pinned to 0) and the cosine.
    let mut inv = vec![T::zero(); plane];
    let mut cos = vec![T::zero(); plane];
    for p in 0..plane {
        let mut sq = T::zero();
        let mut d = T::zero();
        for ch in 0..c {
            let v = zd[ch * plane + p];
            sq = sq + v * v;
            d = d + v * proto[ch];
        }
        let zn = sq.sqrt();
        if zn >= eps {
            inv[p] = T::one() / zn;
            cos[p] = d / (zn * pn);
        }
    }
    let dp = (0..c)
        .map(|ch| {
            let pc = proto[ch] / pn;
            pairwise_sum_by(plane, |p| {
                if inv[p] == T::zero() {
                    T::zero()
                } else {
                    dc[p] * (zd[ch * plane + p] * inv[p] - cos[p] * pc)
                }
            }) / pn
        })
        .collect();
    let dz = want_dz.then(|| {
        let mut out = Tensor::zeros(z.dims());
        let od = out.data_mut();
        for ch in 0..c {
            let pc = proto[ch] / pn;
            for p in 0..plane {
                if inv[p] != T::zero() {
                    od[ch * plane + p] = dc[p] * (pc - cos[p] * zd[ch * plane + p] * inv[p]) * inv[p];
                }
            }
        }
        out
    });
    Ok((dp, dz))
}

/// Parameter gradient of a same-padded convolution given d(out).
pub(crate) fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    d_out: &Tensor<T>,
) -> Result<ConvParams<T>> {
    let (c, h, w) = input.chw()?;
    let out_c = params.out_channels();
    if d_out.dims() != [out_c, h, w] {
        return Err(dim_err!("d_out {:?} vs expected {:?}", d_out.dims(), [out_c, h, w]));
    }
    let (kh, kw) = params.kernel_size();
    let (ph, pw) = (kh / 2, kw / 2);
    let src = input.data();
    let mut kernel = Tensor::zeros(params.kernel().dims());
    let mut bias = Tensor::zeros(params.bias().dims());
    let mut scratch = Vec::with_capacity(h * w);
    for o in 0..out_c {
        let g = d_out.channel(o);
        bias.data_mut()[o] = pairwise_sum(g);
        for i in 0..c {
            let f = &src[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let dy = ky as isize - ph as isize;
                    let dx = kx as isize - pw as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    // Same order as a row-major walk, so the sum is unchanged.
                    scratch.clear();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let gr = &g[y * w + x0..y * w + x1];
                        let fr = &f[sy * w..(sy + 1) * w];
                        let fr = &fr[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        scratch.extend(gr.iter().zip(fr).map(|(&a, &b)| a * b));
                    }
                    kernel.data_mut()[((o * c + i) * kh + ky) * kw + kx] = pairwise_sum(&scratch);
                }
            }
        }
    }
    ConvParams::new(kernel, bias)
}
