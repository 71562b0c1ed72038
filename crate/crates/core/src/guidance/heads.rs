//! The classification head and the structural mask heads.

use alloc::vec::Vec;

use super::{PrototypeBank, RegistrationMode, Structure};
use crate::error::dim_err;
use crate::grad::{forward, GuidanceGraph};
use crate::rng::SplitMix64;
use crate::{ConvParams, Error, Result, Scalar, Tensor};

/// Which classification head runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GcmVariant {
    /// Cosine against registered prototypes.
    #[default]
    Full,
    /// Plain convolutional classifier, no prototypes (`var1`).
    PlainConv,
    /// Cosine against unregistered novel prototypes (`var2`).
    NoRegistration,
}

impl GcmVariant {
    pub fn name(self) -> &'static str {
        match self {
            GcmVariant::Full => "full",
            GcmVariant::PlainConv => "var1",
            GcmVariant::NoRegistration => "var2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(GcmVariant::Full),
            "var1" => Some(GcmVariant::PlainConv),
            "var2" => Some(GcmVariant::NoRegistration),
            _ => None,
        }
    }
}

/// Feature map fed to the support-feature term of a structural head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
///
/// Fine-tuning runs the heads on the support items themselves, so with
/// [`SupportSource::Support`] the term learns to paint the support images'
/// nuclei positions onto every query. The query source is the default.
pub enum SupportSource {
    /// Mean of the support items' feature maps.
    Support,
    /// The query's own feature map.
    #[default]
    Query,
}

/// Switches for the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    /// Structural guidance per [`Structure`]; a disabled head falls back to
    /// a plain one-channel convolution.
    pub sgm: [bool; 3],
    pub no_support_term: bool,
    pub support_source: SupportSource,
    pub gcm: GcmVariant,
    pub no_gamma_clamp: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            sgm: [true; 3],
            no_support_term: false,
            support_source: SupportSource::Query,
            gcm: GcmVariant::Full,
            no_gamma_clamp: false,
        }
    }
}

impl Ablation {
    pub fn registration_mode(&self) -> RegistrationMode {
        match (self.gcm, self.no_gamma_clamp) {
            (GcmVariant::NoRegistration, _) => RegistrationMode::Disabled,
            (_, true) => RegistrationMode::Literal,
            _ => RegistrationMode::Clamped,
        }
    }

    pub fn guided(&self, s: Structure) -> bool {
        self.sgm[s.index()]
    }
}

/// Parameters of one structural head.
#[derive(Clone, Debug, PartialEq)]
pub struct SgmParams<T = f32> {
    /// Query projection before the cosine (`C → C`).
    pub omega: ConvParams<T>,
    /// Support-feature term (`C → 1`).
    pub phi: ConvParams<T>,
    /// Unguided head used when the structural guidance is off (`C → 1`).
    pub plain: ConvParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceParams<T = f32> {
    /// Query projection of the guided classifier (`C → C`).
    pub cls_conv: ConvParams<T>,
    /// Plain classifier for the `var1` variant (`C → N`).
    pub cls_plain: ConvParams<T>,
    pub sgm: [SgmParams<T>; 3],
}

impl<T: Scalar> GuidanceParams<T> {
    /// Identity projections, zero support terms and small random plain
    /// heads drawn from `seed`.
    pub fn init(channels: usize, classes: usize, kernel: usize, seed: u64) -> Result<Self> {
        if channels == 0 || classes == 0 {
            return Err(Error::InvalidArgument("channel and class counts must be positive".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let cls_conv = ConvParams::identity(channels, kernel)?;
        let cls_plain = ConvParams::random(classes, channels, kernel, 0.1, &mut rng)?;
        let mut head = || -> Result<SgmParams<T>> {
            Ok(SgmParams {
                omega: ConvParams::identity(channels, kernel)?,
                phi: ConvParams::zeros(1, channels, kernel)?,
                plain: ConvParams::random(1, channels, kernel, 0.1, &mut rng)?,
            })
        };
        Ok(Self {
            sgm: [head()?, head()?, head()?],
            cls_conv,
            cls_plain,
        })
    }

    pub fn head(&self, s: Structure) -> &SgmParams<T> {
        &self.sgm[s.index()]
    }

    pub fn head_mut(&mut self, s: Structure) -> &mut SgmParams<T> {
        &mut self.sgm[s.index()]
    }

    pub fn channels(&self) -> usize {
        self.cls_conv.in_channels()
    }
}

/// Frozen feature maps of one image: the classification branch and the
/// three structure branches, each `C×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchFeatures<T = f32> {
    pub classification: Tensor<T>,
    pub structural: [Tensor<T>; 3],
}

impl<T: Scalar> BranchFeatures<T> {
    pub fn structure(&self, s: Structure) -> &Tensor<T> {
        &self.structural[s.index()]
    }

    /// Element-wise mean over several images.
    pub fn mean(items: &[&BranchFeatures<T>]) -> Result<BranchFeatures<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero feature sets".into()))?;
        let avg = |get: &dyn Fn(&BranchFeatures<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
            let mut acc = get(first).clone();
            for it in &items[1..] {
                acc = acc.axpby(T::one(), get(it), T::one())?;
            }
            Ok(acc.scale(T::one() / T::from_f64(items.len() as f64)))
        };
        Ok(BranchFeatures {
            classification: avg(&|b| &b.classification)?,
            structural: [
                avg(&|b| &b.structural[0])?,
                avg(&|b| &b.structural[1])?,
                avg(&|b| &b.structural[2])?,
            ],
        })
    }
}

/// Class probabilities (`N×H×W`) and the three structure masks (`H×W`).
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceOutputs<T = f32> {
    pub classes: Tensor<T>,
    pub masks: [Tensor<T>; 3],
}

impl<T> GuidanceOutputs<T> {
    pub fn mask(&self, s: Structure) -> &Tensor<T> {
        &self.masks[s.index()]
    }
}

/// Softmax over cosine maps of the projected query against each registered
/// prototype.
pub fn gcm_forward<T: Scalar>(
    query: &Tensor<T>,
    registered: &[Vec<T>],
    cls_conv: &ConvParams<T>,
) -> Result<Tensor<T>> {
    forward(&GuidanceGraph::GuidedClassifier {
        query,
        conv: cls_conv,
        prototypes: registered,
    })
}

/// Logistic of the cosine map against `u` plus, unless `support` is
/// `None`, the one-channel convolution of the support features.
pub fn sgm_forward<T: Scalar>(
    query: &Tensor<T>,
    support: Option<&Tensor<T>>,
    u: &[T],
    omega: &ConvParams<T>,
    phi: &ConvParams<T>,
) -> Result<Tensor<T>> {
    forward(&GuidanceGraph::Structural {
        query,
        conv: omega,
        prototype: u,
        support: support.map(|s| (s, phi)),
    })
}

/// The classification graph selected by `ablation`.
pub(crate) fn class_graph<'a, T: Scalar>(
    query: &'a BranchFeatures<T>,
    registered: &'a [Vec<T>],
    params: &'a GuidanceParams<T>,
    ablation: &Ablation,
) -> GuidanceGraph<'a, T> {
    match ablation.gcm {
        GcmVariant::PlainConv => GuidanceGraph::ConvClassifier {
            query: &query.classification,
            conv: &params.cls_plain,
        },
        GcmVariant::Full | GcmVariant::NoRegistration => GuidanceGraph::GuidedClassifier {
            query: &query.classification,
            conv: &params.cls_conv,
            prototypes: registered,
        },
    }
}

/// The graph for structure `s` selected by `ablation`.
pub(crate) fn structure_graph<'a, T: Scalar>(
    s: Structure,
    query: &'a BranchFeatures<T>,
    support_mean: &'a BranchFeatures<T>,
    bank: &'a PrototypeBank<T>,
    params: &'a GuidanceParams<T>,
    ablation: &Ablation,
) -> Result<GuidanceGraph<'a, T>> {
    let head = params.head(s);
    let q = query.structure(s);
    if !ablation.guided(s) {
        return Ok(GuidanceGraph::ConvMask {
            query: q,
            conv: &head.plain,
        });
    }
    let u = bank
        .structural(s)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("no {} prototype", s.name())))?;
    let source = match ablation.support_source {
        SupportSource::Support => support_mean.structure(s),
        SupportSource::Query => q,
    };
    Ok(GuidanceGraph::Structural {
        query: q,
        conv: &head.omega,
        prototype: u,
        support: (!ablation.no_support_term).then_some((source, &head.phi)),
    })
}

/// All four head outputs for one query image.
///
/// `support_mean` is the element-wise mean of the support feature maps;
/// classification uses the bank's registered prototypes.
pub fn predict<T: Scalar>(
    query: &BranchFeatures<T>,
    support_mean: &BranchFeatures<T>,
    bank: &PrototypeBank<T>,
    params: &GuidanceParams<T>,
    ablation: &Ablation,
) -> Result<GuidanceOutputs<T>> {
    if ablation.gcm != GcmVariant::PlainConv && bank.mode() != ablation.registration_mode() {
        return Err(Error::InvalidArgument(alloc::format!(
            "bank registers in {:?} mode, ablation asks for {:?}",
            bank.mode(),
            ablation.registration_mode()
        )));
    }
    let registered = bank.registered();
    let classes = forward(&class_graph(query, &registered, params, ablation))?;
    let mask = |s| -> Result<Tensor<T>> {
        forward(&structure_graph(s, query, support_mean, bank, params, ablation)?)
    };
    let masks = [
        mask(Structure::Foreground)?,
        mask(Structure::Boundary)?,
        mask(Structure::Centroid)?,
    ];
    let (h, w) = masks[0].hw()?;
    if classes.dims()[1..] != [h, w] {
        return Err(dim_err!("classification map {:?} vs masks {h}×{w}", classes.dims()));
    }
    Ok(GuidanceOutputs { classes, masks })
}
