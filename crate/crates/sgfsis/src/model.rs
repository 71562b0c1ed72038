//! Model directories: SGT1 tensors listed in `manifest.txt`.
//!
//! Entry names:
//!
//! - `novel.<CLASS>`, `base.<CLASS>`: prototype vectors (rank 1). Novel
//!   entries are listed under `classes` in channel order.
//! - `u.<fg|bd|ct>`: structural prototypes of the guided heads.
//! - `<head>.kernel`, `<head>.bias` for `cls_conv`, `cls_plain` and
//!   `sgm.<fg|bd|ct>.<omega|phi|plain>`.
//! - `support_mean.<cls|fg|bd|ct>`: mean support feature maps.
//!
//! A base-prototype directory only holds `base.*` entries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sgfsis_core::guidance::{
    Ablation, Branch, BranchFeatures, GuidanceParams, PrototypeBank, SgmParams, Structure,
};
use sgfsis_core::pipeline::FewShotModel;
use sgfsis_core::{ConvParams, Tensor};

use crate::error::{Error, Result};
use crate::formats::{format_manifest, parse_manifest};
use crate::sgt::{load_tensor, save_tensor};

pub const MANIFEST: &str = "manifest.txt";

/// Writes tensors under `dir` and the manifest naming them.
struct Writer<'a> {
    dir: &'a Path,
    entries: BTreeMap<String, String>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            entries: BTreeMap::new(),
        }
    }

    fn tensor(&mut self, name: &str, t: &Tensor<f32>) -> Result<()> {
        let file = format!("{name}.sgt");
        save_tensor(&self.dir.join(&file), t)?;
        self.entries.insert(name.to_string(), file);
        Ok(())
    }

    fn vector(&mut self, name: &str, v: &[f32]) -> Result<()> {
        self.tensor(name, &Tensor::new(&[v.len()], v.to_vec())?)
    }

    fn conv(&mut self, name: &str, c: &ConvParams<f32>) -> Result<()> {
        self.tensor(&format!("{name}.kernel"), c.kernel())?;
        self.tensor(&format!("{name}.bias"), c.bias())
    }

    fn finish(self, extra: &[(&str, String)]) -> Result<()> {
        let mut entries = self.entries;
        for (k, v) in extra {
            entries.insert(k.to_string(), v.clone());
        }
        let path = self.dir.join(MANIFEST);
        fs::write(&path, format_manifest(&entries)).map_err(|e| Error::io(&path, e))
    }
}

struct Reader<'a> {
    dir: &'a Path,
    entries: BTreeMap<String, String>,
}

impl<'a> Reader<'a> {
    fn open(dir: &'a Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let entries = parse_manifest(&text).map_err(|m| Error::format(&path, m))?;
        Ok(Self { dir, entries })
    }

    fn value(&self, name: &str) -> Result<&str> {
        self.entries
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::format(self.dir.join(MANIFEST), format!("missing entry {name:?}")))
    }

    fn tensor(&self, name: &str) -> Result<Tensor<f32>> {
        load_tensor(&self.dir.join(self.value(name)?))
    }

    fn vector(&self, name: &str) -> Result<Vec<f32>> {
        let path = self.dir.join(self.value(name)?);
        let t = load_tensor(&path)?;
        if t.rank() != 1 {
            return Err(Error::format(path, "prototype must be rank 1"));
        }
        Ok(t.into_data())
    }

    fn conv(&self, name: &str) -> Result<ConvParams<f32>> {
        let k = self.tensor(&format!("{name}.kernel"))?;
        let b = self.tensor(&format!("{name}.bias"))?;
        ConvParams::new(k, b).map_err(|e| Error::format(self.dir.join(MANIFEST), format!("{name}: {e}")))
    }

    fn prefixed(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter_map(|k| k.strip_prefix(prefix).map(str::to_string))
            .collect()
    }
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_base(dir: &Path, base: &[(String, Vec<f32>)]) -> Result<()> {
    create(dir)?;
    let mut w = Writer::new(dir);
    for (name, v) in base {
        w.vector(&format!("base.{name}"), v)?;
    }
    w.finish(&[])
}

/// `base.*` entries of a model or base-prototype directory, by class name.
pub fn load_base(dir: &Path) -> Result<Vec<(String, Vec<f32>)>> {
    let r = Reader::open(dir)?;
    r.prefixed("base.")
        .into_iter()
        .map(|c| Ok((c.clone(), r.vector(&format!("base.{c}"))?)))
        .collect()
}

pub fn save_model(dir: &Path, m: &FewShotModel<f32>) -> Result<()> {
    create(dir)?;
    let mut w = Writer::new(dir);
    for (name, v) in m.bank.novel() {
        w.vector(&format!("novel.{name}"), v)?;
    }
    for (name, v) in m.bank.base() {
        w.vector(&format!("base.{name}"), v)?;
    }
    for s in Structure::ALL {
        if let Some(u) = m.bank.structural(s) {
            w.vector(&format!("u.{}", s.name()), u)?;
        }
        let h = m.params.head(s);
        w.conv(&format!("sgm.{}.omega", s.name()), &h.omega)?;
        w.conv(&format!("sgm.{}.phi", s.name()), &h.phi)?;
        w.conv(&format!("sgm.{}.plain", s.name()), &h.plain)?;
    }
    w.conv("cls_conv", &m.params.cls_conv)?;
    w.conv("cls_plain", &m.params.cls_plain)?;
    w.tensor("support_mean.cls", &m.support_mean.classification)?;
    for (b, t) in [Branch::Foreground, Branch::Boundary, Branch::Centroid]
        .into_iter()
        .zip(&m.support_mean.structural)
    {
        w.tensor(&format!("support_mean.{}", b.name()), t)?;
    }
    w.finish(&[("classes", m.bank.novel_names().join(","))])
}

/// Loads a model for `ablation`, which fixes the registration mode.
pub fn load_model(dir: &Path, ablation: Ablation) -> Result<FewShotModel<f32>> {
    let r = Reader::open(dir)?;
    let classes: Vec<String> = r.value("classes")?.split(',').map(str::to_string).collect();
    let novel = classes
        .iter()
        .map(|c| Ok((c.clone(), r.vector(&format!("novel.{c}"))?)))
        .collect::<Result<Vec<_>>>()?;
    let base = load_base(dir)?;
    let mut bank = PrototypeBank::new(novel, base, ablation.registration_mode())?;
    for s in Structure::ALL {
        if r.entries.contains_key(&format!("u.{}", s.name())) {
            bank.set_structural(s, r.vector(&format!("u.{}", s.name()))?)?;
        }
    }
    let head = |s: Structure| -> Result<SgmParams<f32>> {
        Ok(SgmParams {
            omega: r.conv(&format!("sgm.{}.omega", s.name()))?,
            phi: r.conv(&format!("sgm.{}.phi", s.name()))?,
            plain: r.conv(&format!("sgm.{}.plain", s.name()))?,
        })
    };
    let params = GuidanceParams {
        cls_conv: r.conv("cls_conv")?,
        cls_plain: r.conv("cls_plain")?,
        sgm: [head(Structure::Foreground)?, head(Structure::Boundary)?, head(Structure::Centroid)?],
    };
    let support_mean = BranchFeatures {
        classification: r.tensor("support_mean.cls")?,
        structural: [
            r.tensor("support_mean.fg")?,
            r.tensor("support_mean.bd")?,
            r.tensor("support_mean.ct")?,
        ],
    };
    Ok(FewShotModel {
        bank,
        params,
        ablation,
        support_mean,
    })
}
