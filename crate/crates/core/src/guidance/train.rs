//! Base-prototype learning and support-set fine-tuning by plain gradient
//! descent over frozen feature maps.

use alloc::string::String;
use alloc::vec::Vec;

use super::heads::{class_graph, structure_graph};
use super::{novel_prototypes, sgm_prototype, Ablation, BranchFeatures, GcmVariant, GuidanceParams, PrototypeBank, Structure};
use crate::grad::{guidance_gradients, GuidanceGraph, Objective};
use crate::labels::StructuralChannels;
use crate::rng::SplitMix64;
use crate::{BinaryMask, ConvParams, Error, Result, Scalar, Tensor};

/// One-hot `N×H×W` target over `classes`; pixels outside every listed
/// class get an all-zero row and are ignored by the loss.
pub(crate) fn class_target<T: Scalar>(channels: &StructuralChannels, classes: &[String]) -> Tensor<T> {
    let (w, h) = (channels.foreground.width(), channels.foreground.height());
    let mut t = Tensor::zeros(&[classes.len(), h, w]);
    for (n, name) in classes.iter().enumerate() {
        if let Some(m) = channels.class_mask(name) {
            for (dst, &on) in t.channel_mut(n).iter_mut().zip(m.data()) {
                if on {
                    *dst = T::one();
                }
            }
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseTrainReport<T = f32> {
    pub prototypes: Vec<(String, Vec<T>)>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Learns one prototype per base class so that the cosine-softmax
/// classification of the frozen features matches the class masks.
///
/// Prototypes start as seeded uniform vectors in `[-1, 1]`; each step
/// descends the cross-entropy averaged over all items.
pub fn train_base_prototypes<T: Scalar>(
    items: &[(&Tensor<T>, &StructuralChannels)],
    classes: &[String],
    cfg: &BaseTrainConfig,
) -> Result<BaseTrainReport<T>> {
    let missing: Vec<String> = classes
        .iter()
        .filter(|c| !items.iter().any(|(_, ch)| ch.class_mask(c).is_some_and(|m| m.count() > 0)))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClass(missing));
    }
    let (c, _, _) = items[0].0.chw()?;
    let targets: Vec<Tensor<T>> = items.iter().map(|(_, ch)| class_target(ch, classes)).collect();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut protos: Vec<Vec<T>> = classes
        .iter()
        .map(|_| (0..c).map(|_| T::from_f64(rng.uniform(-1.0, 1.0))).collect())
        .collect();
    let k = T::from_f64(items.len() as f64);
    let lr = T::from_f64(cfg.lr);

    let step = |protos: &[Vec<T>]| -> Result<(T, Vec<Vec<T>>)> {
        let mut loss = T::zero();
        let mut grad: Vec<Vec<T>> = protos.iter().map(|p| alloc::vec![T::zero(); p.len()]).collect();
        for ((features, _), target) in items.iter().zip(&targets) {
            let g = guidance_gradients(
                &GuidanceGraph::BaseClassifier {
                    features,
                    prototypes: protos,
                },
                &Objective::cross_entropy(),
                target,
            )?;
            loss = loss + g.loss;
            for (acc, d) in grad.iter_mut().zip(&g.prototypes) {
                for (a, &v) in acc.iter_mut().zip(d) {
                    *a = *a + v;
                }
            }
        }
        Ok((loss / k, grad))
    };

    let (initial, _) = step(&protos)?;
    for _ in 0..cfg.steps {
        let (_, grad) = step(&protos)?;
        for (p, g) in protos.iter_mut().zip(&grad) {
            for (v, &d) in p.iter_mut().zip(g) {
                *v = *v - lr * d / k;
            }
        }
    }
    let (last, _) = step(&protos)?;
    Ok(BaseTrainReport {
        prototypes: classes.iter().cloned().zip(protos).collect(),
        initial_loss: initial.as_f64(),
        final_loss: last.as_f64(),
    })
}

/// A support image: its frozen features and converted labels.
#[derive(Clone, Copy, Debug)]
pub struct SupportItem<'a, T = f32> {
    pub features: &'a BranchFeatures<T>,
    pub channels: &'a StructuralChannels,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub dice_smooth: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            lr: 0.5,
            dice_smooth: crate::ops::DEFAULT_DICE_SMOOTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    /// Mean total loss over the support set after the prototype update,
    /// before the first step.
    pub initial_loss: f64,
    /// The same after the last step.
    pub final_loss: f64,
    /// Loss of the item used at each step, before that step's update.
    pub step_losses: Vec<f64>,
}

/// Accumulated parameter and prototype gradients of one query.
struct StepGrads<T> {
    loss: T,
    cls_conv: Option<ConvParams<T>>,
    cls_plain: Option<ConvParams<T>>,
    registered: Vec<Vec<T>>,
    omega: [Option<ConvParams<T>>; 3],
    phi: [Option<ConvParams<T>>; 3],
    plain: [Option<ConvParams<T>>; 3],
    structural: [Option<Vec<T>>; 3],
}

fn item_gradients<T: Scalar>(
    item: &SupportItem<'_, T>,
    support_mean: &BranchFeatures<T>,
    bank: &PrototypeBank<T>,
    params: &GuidanceParams<T>,
    ablation: &Ablation,
    smooth: T,
) -> Result<StepGrads<T>> {
    let names = bank.novel_names();
    let registered = bank.registered();
    let g = guidance_gradients(
        &class_graph(item.features, &registered, params, ablation),
        &Objective::cross_entropy(),
        &class_target(item.channels, &names),
    )?;
    let plain_cls = ablation.gcm == GcmVariant::PlainConv;
    let mut out = StepGrads {
        loss: g.loss,
        cls_conv: if plain_cls { None } else { g.conv.clone() },
        cls_plain: if plain_cls { g.conv } else { None },
        registered: g.prototypes,
        omega: [None, None, None],
        phi: [None, None, None],
        plain: [None, None, None],
        structural: [None, None, None],
    };
    for s in Structure::ALL {
        let graph = structure_graph(s, item.features, support_mean, bank, params, ablation)?;
        let target: Tensor<T> = s.mask(item.channels).to_tensor();
        let g = guidance_gradients(&graph, &Objective::dice(smooth), &target)?;
        out.loss = out.loss + g.loss;
        let i = s.index();
        if ablation.guided(s) {
            out.omega[i] = g.conv;
            out.phi[i] = g.support_conv;
            out.structural[i] = g.prototypes.into_iter().next();
        } else {
            out.plain[i] = g.conv;
        }
    }
    Ok(out)
}

/// Mean total loss (classification cross-entropy plus the three Dice
/// losses) over `items`.
pub fn guidance_loss<T: Scalar>(
    items: &[SupportItem<'_, T>],
    support_mean: &BranchFeatures<T>,
    bank: &PrototypeBank<T>,
    params: &GuidanceParams<T>,
    ablation: &Ablation,
    smooth: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        total += item_gradients(it, support_mean, bank, params, ablation, T::from_f64(smooth))?
            .loss
            .as_f64();
    }
    Ok(total / items.len() as f64)
}

fn descend_vec<T: Scalar>(v: &mut [T], g: &[T], lr: T) {
    for (a, &d) in v.iter_mut().zip(g) {
        *a = *a - lr * d;
    }
}

/// Adapts guidance parameters and prototypes to a support set.
///
/// The novel prototypes and the structure prototypes of the guided heads
/// are first recomputed from the support set. Step `t` then uses support
/// item `t mod K` as the query and takes one gradient step on its total
/// loss. Base prototypes and feature maps stay fixed.
pub fn finetune<T: Scalar>(
    support: &[SupportItem<'_, T>],
    bank: &mut PrototypeBank<T>,
    params: &mut GuidanceParams<T>,
    ablation: &Ablation,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let feats: Vec<&BranchFeatures<T>> = support.iter().map(|s| s.features).collect();
    let support_mean = BranchFeatures::mean(&feats)?;
    let channels: Vec<StructuralChannels> = support.iter().map(|s| s.channels.clone()).collect();
    let cls_feats: Vec<&Tensor<T>> = feats.iter().map(|f| &f.classification).collect();
    bank.set_novel_vectors(novel_prototypes(&cls_feats, &channels, &bank.novel_names())?)?;
    for s in Structure::ALL.into_iter().filter(|&s| ablation.guided(s)) {
        let fs: Vec<&Tensor<T>> = feats.iter().map(|f| f.structure(s)).collect();
        let masks: Vec<&BinaryMask> = channels.iter().map(|c| s.mask(c)).collect();
        bank.set_structural(s, sgm_prototype(&fs, &masks, &params.head(s).omega)?)?;
    }

    let smooth = T::from_f64(cfg.dice_smooth);
    let lr = T::from_f64(cfg.lr);
    let initial_loss = guidance_loss(support, &support_mean, bank, params, ablation, cfg.dice_smooth)?;
    let mut step_losses = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let item = &support[t % support.len()];
        let g = item_gradients(item, &support_mean, bank, params, ablation, smooth)?;
        step_losses.push(g.loss.as_f64());

        if let Some(d) = &g.cls_conv {
            params.cls_conv.descend(d, lr);
        }
        if let Some(d) = &g.cls_plain {
            params.cls_plain.descend(d, lr);
        }
        for s in Structure::ALL {
            let i = s.index();
            let head = params.head_mut(s);
            if let Some(d) = &g.omega[i] {
                head.omega.descend(d, lr);
            }
            if let Some(d) = &g.phi[i] {
                head.phi.descend(d, lr);
            }
            if let Some(d) = &g.plain[i] {
                head.plain.descend(d, lr);
            }
            if let (Some(d), Some(u)) = (&g.structural[i], bank.structural(s)) {
                let mut u = u.to_vec();
                descend_vec(&mut u, d, lr);
                bank.set_structural(s, u)?;
            }
        }
        if !g.registered.is_empty() {
            let d_novel = bank.pull_back(&g.registered);
            let mut novel: Vec<Vec<T>> = bank.novel().iter().map(|p| p.1.clone()).collect();
            for (p, d) in novel.iter_mut().zip(&d_novel) {
                descend_vec(p, d, lr);
            }
            bank.set_novel_vectors(novel)?;
        }
    }
    let final_loss = guidance_loss(support, &support_mean, bank, params, ablation, cfg.dice_smooth)?;
    Ok(FinetuneReport {
        initial_loss,
        final_loss,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::RegistrationMode;
    use crate::labels::{convert_labels, ConversionRadii, InstanceLabelMap};
    use crate::ops::cosine;
    use crate::LabelRaster;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;

    fn names() -> BTreeMap<u32, String> {
        [(1, "EPI".to_string()), (2, "LYM".to_string())].into()
    }

    /// Two side-by-side squares of classes EPI and LYM on an 8×8 image.
    fn scene(shift: usize) -> StructuralChannels {
        let ids = LabelRaster::from_fn(8, 8, |x, y| {
            if !(1..7).contains(&y) {
                0
            } else if (shift..shift + 3).contains(&x) {
                1
            } else if (shift + 4..shift + 7).contains(&x) && shift + 7 <= 8 {
                2
            } else {
                0
            }
        });
        let m = InstanceLabelMap::new(ids, [(1, 1), (2, 2)].into(), names()).unwrap();
        convert_labels(&m, ConversionRadii { boundary: 1, centroid: 0 }).unwrap()
    }

    /// Features with a constant direction per class region, another for
    /// background.
    fn separable(ch: &StructuralChannels) -> Tensor<f64> {
        let dirs = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.1], [0.0, 1.0, 0.1]];
        let (w, h) = (8, 8);
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            let k = if ch.class_masks[0].data()[p] {
                1
            } else if ch.class_masks[1].data()[p] {
                2
            } else {
                0
            };
            dirs[k][c]
        })
    }

    #[test]
    fn base_prototypes_align_with_class_directions() {
        // Orthogonal class directions e1, e2. The cross-entropy of a
        // cosine softmax only sees the gap cos(x, b1) - cos(x, b2), which
        // over both regions is maximised by b1 ∝ e1 - e2 and b2 ∝ e2 - e1:
        // the learned prototypes align with the discriminative directions,
        // at 45° from the raw class directions.
        let ch = scene(0);
        let f = Tensor::from_fn(&[3, 8, 8], |i| {
            let (c, p) = (i / 64, i % 64);
            let k = if ch.class_masks[0].data()[p] { 0 } else if ch.class_masks[1].data()[p] { 1 } else { 2 };
            if c == k { 1.0 } else { 0.0 }
        });
        let classes = vec!["EPI".to_string(), "LYM".to_string()];
        let cfg = BaseTrainConfig { steps: 200, lr: 5.0, seed: 3 };
        let r = train_base_prototypes(&[(&f, &ch)], &classes, &cfg).unwrap();
        assert!(r.final_loss < r.initial_loss);
        let (b1, b2) = (&r.prototypes[0].1, &r.prototypes[1].1);
        assert!(cosine(b1, &[1.0, -1.0, 0.0]) > 0.99, "{b1:?}");
        assert!(cosine(b2, &[-1.0, 1.0, 0.0]) > 0.99, "{b2:?}");
        assert!(cosine(b1, &[1.0, 0.0, 0.0]) > cosine(b1, &[0.0, 1.0, 0.0]));

        let frozen = train_base_prototypes(&[(&f, &ch)], &classes, &BaseTrainConfig { lr: 0.0, ..cfg }).unwrap();
        assert_eq!(frozen.initial_loss, frozen.final_loss);
        let untouched = train_base_prototypes(&[(&f, &ch)], &classes, &BaseTrainConfig { steps: 0, ..cfg }).unwrap();
        assert_eq!(frozen.prototypes, untouched.prototypes);

        let missing = train_base_prototypes(&[(&f, &ch)], &["NEU".to_string()], &cfg);
        assert_eq!(missing.unwrap_err(), Error::MissingClass(vec!["NEU".into()]));
    }

    fn branch(ch: &StructuralChannels, seed: u64) -> BranchFeatures<f64> {
        let f = separable(ch);
        let mut rng = SplitMix64::new(seed);
        let noisy = |rng: &mut SplitMix64| f.map(|v| v).axpby(1.0, &Tensor::random(&[3, 8, 8], -0.05, 0.05, rng), 1.0).unwrap();
        BranchFeatures {
            classification: noisy(&mut rng),
            structural: [noisy(&mut rng), noisy(&mut rng), noisy(&mut rng)],
        }
    }

    fn fixture() -> (Vec<StructuralChannels>, Vec<BranchFeatures<f64>>, PrototypeBank<f64>) {
        let chans = vec![scene(0), scene(1)];
        let feats = vec![branch(&chans[0], 1), branch(&chans[1], 2)];
        let bank = PrototypeBank::new(
            vec![("EPI".into(), vec![1.0, 0.0, 0.0]), ("LYM".into(), vec![0.0, 1.0, 0.0])],
            vec![("EPI".into(), vec![0.9, 0.1, 0.2]), ("NEU".into(), vec![0.0, 0.0, 1.0])],
            RegistrationMode::Clamped,
        )
        .unwrap();
        (chans, feats, bank)
    }

    #[test]
    fn finetune_descends_and_is_deterministic() {
        let (chans, feats, bank0) = fixture();
        let items: Vec<SupportItem<f64>> = chans
            .iter()
            .zip(&feats)
            .map(|(c, f)| SupportItem { features: f, channels: c })
            .collect();
        let params0 = GuidanceParams::<f64>::init(3, 2, 1, 9).unwrap();
        let cfg = FinetuneConfig { steps: 50, lr: 0.5, dice_smooth: 1.0 };
        let run = || {
            let (mut bank, mut params) = (bank0.clone(), params0.clone());
            let r = finetune(&items, &mut bank, &mut params, &Ablation::default(), &cfg).unwrap();
            (r, bank, params)
        };
        let (r, bank, params) = run();
        assert!(r.final_loss < r.initial_loss, "{} -> {}", r.initial_loss, r.final_loss);
        assert_eq!(r.step_losses.len(), 50);
        assert_eq!(run(), (r, bank, params));
        // frozen inputs
        assert_eq!(feats, fixture().1);
    }

    #[test]
    fn zero_steps_only_recompute_prototypes() {
        let (chans, feats, bank0) = fixture();
        let items: Vec<SupportItem<f64>> = chans
            .iter()
            .zip(&feats)
            .map(|(c, f)| SupportItem { features: f, channels: c })
            .collect();
        let params0 = GuidanceParams::<f64>::init(3, 2, 1, 9).unwrap();
        let (mut bank, mut params) = (bank0.clone(), params0.clone());
        let cfg = FinetuneConfig { steps: 0, ..FinetuneConfig::default() };
        let r = finetune(&items, &mut bank, &mut params, &Ablation::default(), &cfg).unwrap();
        assert_eq!(params, params0);
        assert_eq!(r.initial_loss, r.final_loss);
        let cls: Vec<&Tensor<f64>> = feats.iter().map(|f| &f.classification).collect();
        let expect = novel_prototypes(&cls, &chans, &bank.novel_names()).unwrap();
        assert_eq!(bank.novel().iter().map(|p| p.1.clone()).collect::<Vec<_>>(), expect);
        assert!(Structure::ALL.iter().all(|&s| bank.structural(s).is_some()));
        assert_eq!(bank.base(), bank0.base());
    }

    #[test]
    fn every_ablation_descends() {
        let (chans, feats, bank0) = fixture();
        let items: Vec<SupportItem<f64>> = chans
            .iter()
            .zip(&feats)
            .map(|(c, f)| SupportItem { features: f, channels: c })
            .collect();
        let variants = [
            Ablation { sgm: [false; 3], ..Ablation::default() },
            Ablation { no_support_term: true, ..Ablation::default() },
            Ablation { gcm: GcmVariant::PlainConv, ..Ablation::default() },
            Ablation { gcm: GcmVariant::NoRegistration, ..Ablation::default() },
            Ablation { no_gamma_clamp: true, ..Ablation::default() },
        ];
        for a in variants {
            let mut bank = bank0.clone();
            bank.set_mode(a.registration_mode()).unwrap();
            let mut params = GuidanceParams::<f64>::init(3, 2, 1, 9).unwrap();
            let cfg = FinetuneConfig { steps: 30, lr: 0.5, dice_smooth: 1.0 };
            let r = finetune(&items, &mut bank, &mut params, &a, &cfg).unwrap();
            assert!(r.final_loss < r.initial_loss, "{a:?}: {} -> {}", r.initial_loss, r.final_loss);
        }
    }
}
