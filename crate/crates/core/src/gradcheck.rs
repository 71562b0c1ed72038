//! Finite-difference verification of [`crate::grad::guidance_gradients`].
//!
//! Each trial draws a random instance, evaluates every supported graph with
//! the analytic engine and compares each partial derivative with a central
//! difference taken in `f64` through [`crate::grad::objective_value`], which
//! uses only forward primitives.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::grad::{guidance_gradients, objective_value, Gradients, GuidanceGraph, Objective};
use crate::rng::SplitMix64;
use crate::{ConvParams, Result, Scalar, Tensor};

/// Denominator floor of the relative error, so that partials which vanish
/// analytically are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            channels: 4,
            height: 8,
            width: 8,
            classes: 3,
            step: 1e-4,
            seed: 0x6AD_C4EC,
        }
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Graph and parameter of the worst comparison.
    pub worst: String,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Owned parameter set of one graph, flattened for perturbation.
#[derive(Clone, Debug)]
struct Params {
    conv: Option<ConvParams<f64>>,
    support_conv: Option<ConvParams<f64>>,
    prototypes: Vec<Vec<f64>>,
}

impl Params {
    fn len(&self) -> usize {
        self.conv.as_ref().map_or(0, |c| c.num_params())
            + self.support_conv.as_ref().map_or(0, |c| c.num_params())
            + self.prototypes.iter().map(Vec::len).sum::<usize>()
    }

    fn slot(&mut self, mut i: usize) -> (&mut f64, String) {
        if let Some(c) = self.conv.as_mut() {
            if i < c.num_params() {
                return (c.param_mut(i), format!("conv[{i}]"));
            }
            i -= c.num_params();
        }
        if let Some(c) = self.support_conv.as_mut() {
            if i < c.num_params() {
                return (c.param_mut(i), format!("support_conv[{i}]"));
            }
            i -= c.num_params();
        }
        for (n, p) in self.prototypes.iter_mut().enumerate() {
            if i < p.len() {
                return (&mut p[i], format!("prototype[{n}][{i}]"));
            }
            i -= p.len();
        }
        unreachable!("parameter index out of range")
    }

    fn flatten_grads<T: Scalar>(&self, g: &Gradients<T>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        if let Some(c) = &g.conv {
            out.extend((0..c.num_params()).map(|i| c.param(i).as_f64()));
        }
        if let Some(c) = &g.support_conv {
            out.extend((0..c.num_params()).map(|i| c.param(i).as_f64()));
        }
        for p in &g.prototypes {
            out.extend(p.iter().map(|v| v.as_f64()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Base,
    Guided,
    ConvClassifier,
    Structural,
    StructuralNoSupport,
    ConvMask,
}

const KINDS: [Kind; 6] = [
    Kind::Base,
    Kind::Guided,
    Kind::ConvClassifier,
    Kind::Structural,
    Kind::StructuralNoSupport,
    Kind::ConvMask,
];

struct Instance {
    query: Tensor<f64>,
    support: Tensor<f64>,
    class_target: Tensor<f64>,
    mask_target: Tensor<f64>,
}

fn build<'a, T>(
    kind: Kind,
    query: &'a Tensor<T>,
    support: &'a Tensor<T>,
    p: &'a Cast<T>,
) -> GuidanceGraph<'a, T> {
    let (conv, sconv, protos) = p;
    match kind {
        Kind::Base => GuidanceGraph::BaseClassifier {
            features: query,
            prototypes: protos,
        },
        Kind::Guided => GuidanceGraph::GuidedClassifier {
            query,
            conv: conv.as_ref().expect("guided conv"),
            prototypes: protos,
        },
        Kind::ConvClassifier => GuidanceGraph::ConvClassifier {
            query,
            conv: conv.as_ref().expect("classifier conv"),
        },
        Kind::Structural | Kind::StructuralNoSupport => GuidanceGraph::Structural {
            query,
            conv: conv.as_ref().expect("structural conv"),
            prototype: &protos[0],
            support: sconv.as_ref().map(|s| (support, s)),
        },
        Kind::ConvMask => GuidanceGraph::ConvMask {
            query,
            conv: conv.as_ref().expect("mask conv"),
        },
    }
}

fn random_params(kind: Kind, cfg: &GradcheckConfig, rng: &mut SplitMix64) -> Result<Params> {
    let c = cfg.channels;
    let k = if rng.bernoulli(0.5) { 1 } else { 3 };
    let proto = |rng: &mut SplitMix64| (0..c).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>();
    let conv_with_bias = |out: usize, bias: f64, rng: &mut SplitMix64| -> Result<ConvParams<f64>> {
        let mut p = ConvParams::random(out, c, k, 1.0, rng)?;
        for b in p.bias_mut().data_mut() {
            *b = rng.uniform(-bias, bias);
        }
        Ok(p)
    };
    // Convolutions feeding a cosine get a larger bias so that their output
    // stays away from the origin.
    Ok(match kind {
        Kind::Base => Params {
            conv: None,
            support_conv: None,
            prototypes: (0..cfg.classes).map(|_| proto(rng)).collect(),
        },
        Kind::Guided => Params {
            conv: Some(conv_with_bias(c, 1.0, rng)?),
            support_conv: None,
            prototypes: (0..cfg.classes).map(|_| proto(rng)).collect(),
        },
        Kind::ConvClassifier => Params {
            conv: Some(conv_with_bias(cfg.classes, 0.3, rng)?),
            support_conv: None,
            prototypes: Vec::new(),
        },
        Kind::Structural => Params {
            conv: Some(conv_with_bias(c, 1.0, rng)?),
            support_conv: Some(conv_with_bias(1, 0.3, rng)?),
            prototypes: alloc::vec![proto(rng)],
        },
        Kind::StructuralNoSupport => Params {
            conv: Some(conv_with_bias(c, 1.0, rng)?),
            support_conv: None,
            prototypes: alloc::vec![proto(rng)],
        },
        Kind::ConvMask => Params {
            conv: Some(conv_with_bias(1, 0.3, rng)?),
            support_conv: None,
            prototypes: Vec::new(),
        },
    })
}

/// Smallest per-pixel norm allowed for the vectors entering a cosine.
///
/// The cosine is singular at the origin; near it the third derivative grows
/// like `1/|z|^3` and a central difference stops being a usable reference.
pub const MIN_COSINE_INPUT_NORM: f64 = 0.25;

const MAX_DRAWS: usize = 10_000;

fn well_conditioned(kind: Kind, query: &Tensor<f64>, p: &Params) -> Result<bool> {
    let z = match kind {
        Kind::Base => query.clone(),
        Kind::Guided | Kind::Structural | Kind::StructuralNoSupport => {
            crate::ops::conv2d(query, p.conv.as_ref().expect("conv"))?
        }
        Kind::ConvClassifier | Kind::ConvMask => return Ok(true),
    };
    let (c, h, w) = z.chw()?;
    let plane = h * w;
    Ok((0..plane).all(|px| {
        let sq: f64 = (0..c).map(|ch| z.data()[ch * plane + px].powi(2)).sum();
        sq.sqrt() >= MIN_COSINE_INPUT_NORM
    }))
}

fn random_instance(cfg: &GradcheckConfig, rng: &mut SplitMix64) -> Instance {
    let (c, h, w, n) = (cfg.channels, cfg.height, cfg.width, cfg.classes);
    let mut query: Tensor<f64> = Tensor::random(&[c, h, w], -1.0, 1.0, rng);
    let plane = h * w;
    for px in 0..plane {
        loop {
            let sq: f64 = (0..c).map(|ch| query.data()[ch * plane + px].powi(2)).sum();
            if sq.sqrt() >= MIN_COSINE_INPUT_NORM {
                break;
            }
            for ch in 0..c {
                query.data_mut()[ch * plane + px] = rng.uniform(-1.0, 1.0);
            }
        }
    }
    let support = Tensor::random(&[c, h, w], -1.0, 1.0, rng);
    let mut class_target = Tensor::zeros(&[n, h, w]);
    for p in 0..h * w {
        // About one pixel in eight is unlabelled.
        if rng.below(8) != 0 {
            let k = rng.below(n as u64) as usize;
            class_target.data_mut()[k * h * w + p] = 1.0;
        }
    }
    let mask_target = Tensor::from_fn(&[h, w], |_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 });
    Instance {
        query,
        support,
        class_target,
        mask_target,
    }
}

/// Head convolution, support convolution and prototypes in one precision.
type Cast<T> = (Option<ConvParams<T>>, Option<ConvParams<T>>, Vec<Vec<T>>);

fn cast_params<T: Scalar>(p: &Params) -> Cast<T> {
    (
        p.conv.as_ref().map(ConvParams::cast),
        p.support_conv.as_ref().map(ConvParams::cast),
        p.prototypes
            .iter()
            .map(|v| v.iter().map(|&x| T::from_f64(x)).collect())
            .collect(),
    )
}

fn round_trip<T: Scalar>(p: &Params) -> Params {
    let (conv, support_conv, prototypes) = cast_params::<T>(p);
    Params {
        conv: conv.map(|c| c.cast()),
        support_conv: support_conv.map(|c| c.cast()),
        prototypes: prototypes
            .iter()
            .map(|v| v.iter().map(|x| x.as_f64()).collect())
            .collect(),
    }
}

/// Runs the randomized comparison with the analytic side evaluated in `T`.
///
/// Inputs are rounded to `T` first so both sides see identical values.
pub fn run<T: Scalar>(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = SplitMix64::new(cfg.seed);
    let mut report = GradcheckReport {
        trials: cfg.trials,
        ..Default::default()
    };
    let ce = Objective::<f64>::cross_entropy();
    let dice = Objective::<f64>::dice(crate::ops::DEFAULT_DICE_SMOOTH);
    for trial in 0..cfg.trials {
        let inst = random_instance(cfg, &mut rng);
        let query: Tensor<f64> = inst.query.cast::<T>().cast();
        let support: Tensor<f64> = inst.support.cast::<T>().cast();
        for kind in KINDS {
            let mut attempts = 0;
            let params = loop {
                let p = round_trip::<T>(&random_params(kind, cfg, &mut rng)?);
                attempts += 1;
                if well_conditioned(kind, &query, &p)? {
                    break p;
                }
                if attempts == MAX_DRAWS {
                    return Err(crate::Error::InvalidArgument(format!(
                        "no well-conditioned {kind:?} parameters after {MAX_DRAWS} draws"
                    )));
                }
            };
            let (objective, target) = match kind {
                Kind::Base | Kind::Guided | Kind::ConvClassifier => (ce, &inst.class_target),
                _ => (dice, &inst.mask_target),
            };

            let tp = cast_params::<T>(&params);
            let (qt, st) = (query.cast::<T>(), support.cast::<T>());
            let obj_t = Objective {
                loss: match objective.loss {
                    crate::grad::LossKind::CrossEntropy => crate::grad::LossKind::CrossEntropy,
                    crate::grad::LossKind::Dice { smooth } => crate::grad::LossKind::Dice {
                        smooth: T::from_f64(smooth),
                    },
                },
                weight: T::one(),
            };
            let analytic = guidance_gradients(&build(kind, &qt, &st, &tp), &obj_t, &target.cast())?;
            let analytic = params.flatten_grads(&analytic);

            for (i, &a) in analytic.iter().enumerate() {
                let mut plus = params.clone();
                let (slot, name) = plus.slot(i);
                let x0 = *slot;
                *slot = x0 + cfg.step;
                let mut minus = params.clone();
                *minus.slot(i).0 = x0 - cfg.step;
                let eval = |p: &Params| -> Result<f64> {
                    let t = (p.conv.clone(), p.support_conv.clone(), p.prototypes.clone());
                    objective_value(&build(kind, &query, &support, &t), &objective, target)
                };
                let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * cfg.step);
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_relative_error || report.worst.is_empty() {
                    report.max_relative_error = err;
                    report.worst = format!("trial {trial} {kind:?} {name} a={a} n={numeric}");
                }
            }
        }
    }
    Ok(report)
}
