//! Class and structure prototypes, and registration of novel prototypes
//! against same-named base prototypes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::Structure;
use crate::error::dim_err;
use crate::grad::{forward, GuidanceGraph};
use crate::labels::{canonical_class_name, StructuralChannels, CLASS_REGISTRY};
use crate::ops::{conv2d, cosine, masked_pool, norm};
use crate::{BinaryMask, ConvParams, Error, Result, Scalar, Tensor};

/// How a novel prototype is blended with a same-named base prototype.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RegistrationMode {
    /// Weight `γ = cos(p, b)` clamped to `[0, 1]`.
    #[default]
    Clamped,
    /// Weight `γ = cos(p, b)` as is, possibly negative.
    Literal,
    /// No blending: registered prototypes equal the novel ones.
    Disabled,
}

/// Blend of one novel prototype with its base counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct Registration<T> {
    pub registered: Vec<T>,
    /// `None` when no base prototype shares the class name.
    pub gamma: Option<T>,
    /// Whether `γ` varies with `p` here (false when the clamp is active).
    pub(crate) gamma_free: bool,
    pub(crate) base_index: Option<usize>,
}

/// Registers each novel prototype against the base prototype with the same
/// class name: `p̃ = γ p + (1 − γ) b`.
pub fn register_prototypes<T: Scalar>(
    novel: &[(String, Vec<T>)],
    base: &[(String, Vec<T>)],
    mode: RegistrationMode,
) -> Result<Vec<Registration<T>>> {
    check_names(base, "base")?;
    let dim = novel.first().or(base.first()).map(|p| p.1.len());
    for (name, v) in novel.iter().chain(base) {
        if Some(v.len()) != dim {
            return Err(dim_err!("prototype {name} has {} channels, expected {dim:?}", v.len()));
        }
    }
    novel
        .iter()
        .map(|(name, p)| {
            let found = base.iter().position(|(b, _)| b == name);
            let (Some(m), false) = (found, mode == RegistrationMode::Disabled) else {
                return Ok(Registration {
                    registered: p.clone(),
                    gamma: None,
                    gamma_free: false,
                    base_index: None,
                });
            };
            let b = &base[m].1;
            if norm(p) == T::zero() || norm(b) == T::zero() {
                return Err(Error::DegeneratePrototype);
            }
            let c = cosine(p, b);
            let (gamma, free) = match mode {
                RegistrationMode::Clamped => {
                    (c.max(T::zero()).min(T::one()), c > T::zero() && c < T::one())
                }
                _ => (c, true),
            };
            Ok(Registration {
                registered: p
                    .iter()
                    .zip(b)
                    .map(|(&pi, &bi)| gamma * pi + (T::one() - gamma) * bi)
                    .collect(),
                gamma: Some(gamma),
                gamma_free: free,
                base_index: Some(m),
            })
        })
        .collect()
}

fn check_names<T>(set: &[(String, Vec<T>)], what: &str) -> Result<()> {
    for (i, (name, _)) in set.iter().enumerate() {
        if canonical_class_name(name) != Some(name.as_str()) {
            return Err(Error::Registry(format!("{what} class {name:?} is not a registry name")));
        }
        if set[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::Registry(format!("{what} class {name} listed twice")));
        }
    }
    Ok(())
}

/// Novel, base and structural prototypes with the registered prototypes
/// kept in step.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank<T = f32> {
    novel: Vec<(String, Vec<T>)>,
    base: Vec<(String, Vec<T>)>,
    structural: [Option<Vec<T>>; 3],
    mode: RegistrationMode,
    registered: Vec<Registration<T>>,
}

impl<T: Scalar> PrototypeBank<T> {
    /// Class names are canonicalised; duplicates within either set are an
    /// error.
    pub fn new(
        novel: Vec<(String, Vec<T>)>,
        base: Vec<(String, Vec<T>)>,
        mode: RegistrationMode,
    ) -> Result<Self> {
        let canon = |set: Vec<(String, Vec<T>)>| -> Result<Vec<(String, Vec<T>)>> {
            set.into_iter()
                .map(|(n, v)| {
                    let c = canonical_class_name(&n)
                        .ok_or_else(|| Error::Registry(format!("unknown class name {n:?}")))?;
                    Ok((c.to_string(), v))
                })
                .collect()
        };
        let novel = canon(novel)?;
        let base = canon(base)?;
        check_names(&novel, "novel")?;
        let registered = register_prototypes(&novel, &base, mode)?;
        Ok(Self {
            novel,
            base,
            structural: [None, None, None],
            mode,
            registered,
        })
    }

    fn refresh(&mut self) -> Result<()> {
        self.registered = register_prototypes(&self.novel, &self.base, self.mode)?;
        Ok(())
    }

    pub fn novel(&self) -> &[(String, Vec<T>)] {
        &self.novel
    }

    pub fn base(&self) -> &[(String, Vec<T>)] {
        &self.base
    }

    pub fn novel_names(&self) -> Vec<String> {
        self.novel.iter().map(|p| p.0.clone()).collect()
    }

    pub fn mode(&self) -> RegistrationMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: RegistrationMode) -> Result<()> {
        self.mode = mode;
        self.refresh()
    }

    /// Replaces the novel vectors, keeping names and order.
    pub fn set_novel_vectors(&mut self, vectors: Vec<Vec<T>>) -> Result<()> {
        if vectors.len() != self.novel.len() {
            return Err(dim_err!("{} vectors for {} novel classes", vectors.len(), self.novel.len()));
        }
        let renamed = self.novel.iter().map(|p| p.0.clone()).zip(vectors).collect();
        let old = core::mem::replace(&mut self.novel, renamed);
        if let Err(e) = self.refresh() {
            self.novel = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn set_base(&mut self, base: Vec<(String, Vec<T>)>) -> Result<()> {
        let old = core::mem::replace(&mut self.base, base);
        if let Err(e) = self.refresh() {
            self.base = old;
            return Err(e);
        }
        Ok(())
    }

    /// Registered prototypes in novel-class order.
    pub fn registered(&self) -> Vec<Vec<T>> {
        self.registered.iter().map(|r| r.registered.clone()).collect()
    }

    pub fn registrations(&self) -> &[Registration<T>] {
        &self.registered
    }

    pub fn structural(&self, s: Structure) -> Option<&[T]> {
        self.structural[s.index()].as_deref()
    }

    pub fn set_structural(&mut self, s: Structure, v: Vec<T>) -> Result<()> {
        if let Some(n) = self.channels() {
            if v.len() != n {
                return Err(dim_err!("{} prototype has {} channels, expected {n}", s.name(), v.len()));
            }
        }
        self.structural[s.index()] = Some(v);
        Ok(())
    }

    /// Shared channel count, if any prototype is set.
    pub fn channels(&self) -> Option<usize> {
        self.novel
            .iter()
            .chain(&self.base)
            .map(|p| p.1.len())
            .chain(self.structural.iter().flatten().map(Vec::len))
            .next()
    }

    /// Gradient w.r.t. the novel prototypes given one w.r.t. the registered
    /// ones.
    pub(crate) fn pull_back(&self, d_registered: &[Vec<T>]) -> Vec<Vec<T>> {
        self.registered
            .iter()
            .zip(&self.novel)
            .zip(d_registered)
            .map(|((r, (_, p)), g)| {
                let (Some(gamma), Some(m)) = (r.gamma, r.base_index) else {
                    return g.clone();
                };
                let mut out: Vec<T> = g.iter().map(|&gi| gamma * gi).collect();
                if r.gamma_free {
                    // d p̃ / dγ = p − b, dγ/dp = (b̂ − cos p̂) / |p|
                    let b = &self.base[m].1;
                    let (pn, bn) = (norm(p), norm(b));
                    let c = cosine(p, b);
                    let along: T = g
                        .iter()
                        .zip(p.iter().zip(b))
                        .fold(T::zero(), |s, (&gi, (&pi, &bi))| s + gi * (pi - bi));
                    for (o, (&pi, &bi)) in out.iter_mut().zip(p.iter().zip(b)) {
                        *o = *o + along * (bi / bn - c * pi / pn) / pn;
                    }
                }
                out
            })
            .collect()
    }
}

/// Class names present in any support item, in registry order.
pub fn support_classes(channels: &[StructuralChannels]) -> Vec<String> {
    CLASS_REGISTRY
        .iter()
        .filter(|&&c| {
            channels
                .iter()
                .any(|ch| ch.class_mask(c).is_some_and(|m| m.count() > 0))
        })
        .map(|c| c.to_string())
        .collect()
}

/// Masked-pool prototype per class, averaged over the support items that
/// contain the class.
pub fn novel_prototypes<T: Scalar>(
    features: &[&Tensor<T>],
    channels: &[StructuralChannels],
    classes: &[String],
) -> Result<Vec<Vec<T>>> {
    if features.len() != channels.len() {
        return Err(dim_err!("{} feature maps for {} label sets", features.len(), channels.len()));
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for class in classes {
        let masks: Vec<Option<&BinaryMask>> = channels.iter().map(|ch| ch.class_mask(class)).collect();
        match pooled_mean(features, &masks)? {
            Some(v) => out.push(v),
            None => missing.push(class.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingClass(missing));
    }
    Ok(out)
}

/// Mean of the masked pools over items with a non-empty mask.
fn pooled_mean<T: Scalar>(features: &[&Tensor<T>], masks: &[Option<&BinaryMask>]) -> Result<Option<Vec<T>>> {
    let mut sum: Option<Vec<T>> = None;
    let mut k = 0usize;
    for (f, m) in features.iter().zip(masks) {
        let Some(m) = m.filter(|m| m.count() > 0) else {
            continue;
        };
        let v = masked_pool(f, &m.to_tensor())?;
        sum = Some(match sum {
            None => v,
            Some(s) => s.iter().zip(&v).map(|(&a, &b)| a + b).collect(),
        });
        k += 1;
    }
    let kk = T::from_f64(k as f64);
    Ok(sum.map(|s| s.into_iter().map(|v| v / kk).collect()))
}

/// Class-agnostic structure prototype: masked pool of the projected
/// support features, averaged over items with a non-empty mask.
pub fn sgm_prototype<T: Scalar>(
    features: &[&Tensor<T>],
    masks: &[&BinaryMask],
    conv: &ConvParams<T>,
) -> Result<Vec<T>> {
    if features.len() != masks.len() {
        return Err(dim_err!("{} feature maps for {} masks", features.len(), masks.len()));
    }
    let projected = features
        .iter()
        .map(|f| conv2d(f, conv))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<T>> = projected.iter().collect();
    let opt: Vec<Option<&BinaryMask>> = masks.iter().map(|&m| Some(m)).collect();
    pooled_mean(&refs, &opt)?.ok_or(Error::EmptyMask)
}

/// Softmax over cosine maps against the base prototypes (`M×H×W`).
pub fn base_classify<T: Scalar>(features: &Tensor<T>, base: &[Vec<T>]) -> Result<Tensor<T>> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("no base prototypes".into()));
    }
    forward(&GuidanceGraph::BaseClassifier {
        features,
        prototypes: base,
    })
}
