//! On-disk dataset layout.
//!
//! ```text
//! <root>/images/<id>.sgt          f32 3×H×W
//! <root>/labels/<id>.sgt          u32 H×W instance ids
//! <root>/labels/<id>.csv          id,class_id,class_name
//! <features>/<branch>/<id>.sgt    f32 C×H×W, branch ∈ {cls, fg, bd, ct}
//! ```
//!
//! Without a feature root, features come from the built-in toy encoder run
//! on the image.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use sgfsis_core::episodes::PoolItem;
use sgfsis_core::guidance::{toy_encoder, Branch, BranchFeatures};
use sgfsis_core::labels::InstanceLabelMap;
use sgfsis_core::Tensor;

use crate::error::{Error, Result};
use crate::formats::{load_labels, save_labels};
use crate::sgt::{load_tensor, save_tensor};
use crate::synth::SynthImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub root: PathBuf,
    pub features: Option<PathBuf>,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>, features: Option<PathBuf>) -> Self {
        Self {
            root: root.into(),
            features,
        }
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.sgt"))
    }

    /// Label path without extension.
    pub fn label_stem(&self, id: &str) -> PathBuf {
        self.root.join("labels").join(id)
    }

    pub fn feature_path(features: &Path, branch: Branch, id: &str) -> PathBuf {
        features.join(branch.name()).join(format!("{id}.sgt"))
    }

    /// Ids with a label raster, sorted.
    pub fn labelled_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("labels");
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut ids = BTreeSet::new();
        for entry in entries {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.extension().is_some_and(|e| e == "sgt") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    ids.insert(stem.to_string());
                }
            }
        }
        Ok(ids.into_iter().collect())
    }

    pub fn image(&self, id: &str) -> Result<Tensor<f32>> {
        load_tensor(&self.image_path(id))
    }

    pub fn labels(&self, id: &str) -> Result<InstanceLabelMap> {
        load_labels(&self.label_stem(id))
    }

    pub fn branch_features(&self, id: &str) -> Result<BranchFeatures<f32>> {
        let load = |b: Branch| -> Result<Tensor<f32>> {
            match &self.features {
                Some(root) => load_tensor(&Self::feature_path(root, b, id)),
                None => {
                    let path = self.image_path(id);
                    let img = load_tensor(&path)?;
                    toy_encoder(&img, b).map_err(|e| Error::format(&path, e.to_string()))
                }
            }
        };
        let f = BranchFeatures {
            classification: load(Branch::Classification)?,
            structural: [load(Branch::Foreground)?, load(Branch::Boundary)?, load(Branch::Centroid)?],
        };
        let dims = f.classification.dims();
        if f.structural.iter().any(|t| t.dims() != dims) || dims.len() != 3 {
            let where_ = self.features.clone().unwrap_or_else(|| self.image_path(id));
            return Err(Error::format(where_, format!("{id}: branch feature maps differ in shape")));
        }
        Ok(f)
    }

    pub fn write_scene(&self, id: &str, scene: &SynthImage) -> Result<()> {
        save_tensor(&self.image_path(id), &scene.image)?;
        let stem = self.label_stem(id);
        if let Some(dir) = stem.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_labels(&stem, &scene.labels)
    }

    pub fn write_features(features: &Path, id: &str, f: &BranchFeatures<f32>) -> Result<()> {
        save_tensor(&Self::feature_path(features, Branch::Classification, id), &f.classification)?;
        for (b, t) in [Branch::Foreground, Branch::Boundary, Branch::Centroid].into_iter().zip(&f.structural) {
            save_tensor(&Self::feature_path(features, b, id), t)?;
        }
        Ok(())
    }

    /// Episode pool entries: each id with the class names it contains.
    pub fn pool(&self, ids: &[String]) -> Result<Vec<PoolItem>> {
        ids.iter()
            .map(|id| {
                let l = self.labels(id)?;
                let classes = l
                    .instance_ids()
                    .into_iter()
                    .filter_map(|i| l.class_of(i).and_then(|c| l.class_name(c)).map(str::to_string))
                    .collect();
                Ok(PoolItem {
                    id: id.clone(),
                    classes,
                })
            })
            .collect()
    }
}
