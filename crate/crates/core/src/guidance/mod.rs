//! Prototype guidance: the guided classification head, the three
//! structural heads, base-prototype learning and support-set fine-tuning.

mod encoder;
mod heads;
mod prototypes;
mod train;

pub use encoder::{toy_encoder, Branch, ENCODER_CHANNELS, ENCODER_SEED};
pub use heads::{
    gcm_forward, predict, sgm_forward, Ablation, BranchFeatures, GcmVariant, GuidanceOutputs,
    GuidanceParams, SgmParams, SupportSource,
};
pub use prototypes::{
    base_classify, novel_prototypes, register_prototypes, sgm_prototype, support_classes,
    PrototypeBank, Registration, RegistrationMode,
};
pub use train::{
    finetune, guidance_loss, train_base_prototypes, BaseTrainConfig, BaseTrainReport,
    FinetuneConfig, FinetuneReport, SupportItem,
};

/// The three structure maps guided by class-agnostic prototypes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Structure {
    Foreground,
    Boundary,
    Centroid,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Foreground, Structure::Boundary, Structure::Centroid];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Foreground => "foreground",
            Structure::Boundary => "boundary",
            Structure::Centroid => "centroid",
        }
    }

    /// Matching mask of a converted label map.
    pub fn mask(self, ch: &crate::labels::StructuralChannels) -> &crate::BinaryMask {
        match self {
            Structure::Foreground => &ch.foreground,
            Structure::Boundary => &ch.boundary,
            Structure::Centroid => &ch.centroid,
        }
    }
}
