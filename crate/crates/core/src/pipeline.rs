//! Few-shot instance segmentation from frozen feature maps: fit the
//! guidance heads to a support set, then segment query images.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::guidance::{
    finetune, novel_prototypes, predict, support_classes, Ablation, BranchFeatures,
    FinetuneConfig, FinetuneReport, GuidanceOutputs, GuidanceParams, PrototypeBank, SupportItem,
};
use crate::labels::{convert_labels, registry_class_id, ConversionRadii, InstanceLabelMap, StructuralChannels};
use crate::watershed::{segment, Segmentation, WatershedConfig};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub radii: ConversionRadii,
    pub watershed: WatershedConfig,
    pub ablation: Ablation,
    pub finetune: FinetuneConfig,
    /// Kernel size of the guidance convolutions (1 or 3, default 3).
    pub kernel: usize,
    /// Seed of the initial plain-head weights.
    pub param_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            radii: ConversionRadii::default(),
            watershed: WatershedConfig::default(),
            ablation: Ablation::default(),
            finetune: FinetuneConfig::default(),
            kernel: 3,
            param_seed: 0,
        }
    }
}

/// Guidance heads adapted to one support set.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotModel<T = f32> {
    pub bank: PrototypeBank<T>,
    pub params: GuidanceParams<T>,
    pub ablation: Ablation,
    /// Element-wise mean of the support feature maps.
    pub support_mean: BranchFeatures<T>,
}

/// Head outputs and the resulting instances for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T = f32> {
    pub outputs: GuidanceOutputs<T>,
    pub segmentation: Segmentation,
}

/// Converts the support labels, builds prototypes for the classes present
/// and fine-tunes freshly initialised heads on the support set.
pub fn fit<T: Scalar>(
    support: &[(&BranchFeatures<T>, &InstanceLabelMap)],
    base: Vec<(String, Vec<T>)>,
    cfg: &PipelineConfig,
) -> Result<(FewShotModel<T>, FinetuneReport)> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let channels: Vec<StructuralChannels> = support
        .iter()
        .map(|(_, l)| convert_labels(l, cfg.radii))
        .collect::<Result<_>>()?;
    let classes = support_classes(&channels);
    if classes.is_empty() {
        return Err(Error::InvalidArgument("support set contains no labelled instances".into()));
    }
    let cls: Vec<&Tensor<T>> = support.iter().map(|(f, _)| &f.classification).collect();
    let vectors = novel_prototypes(&cls, &channels, &classes)?;
    let c = vectors[0].len();
    let mut bank = PrototypeBank::new(
        classes.iter().cloned().zip(vectors).collect(),
        base,
        cfg.ablation.registration_mode(),
    )?;
    let mut params = GuidanceParams::init(c, classes.len(), cfg.kernel, cfg.param_seed)?;
    let items: Vec<SupportItem<'_, T>> = support
        .iter()
        .zip(&channels)
        .map(|((f, _), ch)| SupportItem {
            features: f,
            channels: ch,
        })
        .collect();
    let report = finetune(&items, &mut bank, &mut params, &cfg.ablation, &cfg.finetune)?;
    let feats: Vec<&BranchFeatures<T>> = support.iter().map(|(f, _)| *f).collect();
    Ok((
        FewShotModel {
            bank,
            params,
            ablation: cfg.ablation,
            support_mean: BranchFeatures::mean(&feats)?,
        },
        report,
    ))
}

impl<T: Scalar> FewShotModel<T> {
    /// Class names of the classification channels.
    pub fn classes(&self) -> Vec<String> {
        self.bank.novel_names()
    }

    /// Class id → name table used for fused labels (registry ids).
    pub fn class_table(&self) -> BTreeMap<u32, String> {
        self.classes()
            .into_iter()
            .map(|n| (registry_class_id(&n).expect("bank names are canonical"), n))
            .collect()
    }

    pub fn infer(&self, query: &BranchFeatures<T>, watershed: &WatershedConfig) -> Result<Inference<T>> {
        let outputs = predict(query, &self.support_mean, &self.bank, &self.params, &self.ablation)?;
        let ids: Vec<u32> = self
            .classes()
            .iter()
            .map(|n| registry_class_id(n).expect("bank names are canonical"))
            .collect();
        let [fg, bd, ct] = &outputs.masks;
        let segmentation = segment(fg, bd, ct, &outputs.classes, &ids, &self.class_table(), watershed)?;
        Ok(Inference {
            outputs,
            segmentation,
        })
    }
}
