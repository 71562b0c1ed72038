//! Text formats: the label sidecar, episode files and manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgfsis_core::episodes::Episode;
use sgfsis_core::labels::{InstanceLabelMap, CLASS_REGISTRY};
use sgfsis_core::LabelRaster;

use crate::error::{Error, Result};
use crate::sgt::{load_raster, save_raster};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub id: u32,
    pub class_id: u32,
    pub class_name: String,
}

/// Rows of an instance label map, ascending by instance id.
pub fn sidecar_rows(labels: &InstanceLabelMap) -> Vec<SidecarRow> {
    labels
        .classes()
        .iter()
        .map(|(&id, &class_id)| SidecarRow {
            id,
            class_id,
            class_name: labels.class_names()[&class_id].clone(),
        })
        .collect()
}

pub fn write_sidecar(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in sidecar_rows(labels) {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    r.deserialize()
        .collect::<std::result::Result<Vec<SidecarRow>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// `<stem>.sgt` plus `<stem>.csv`.
pub fn label_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("sgt"), stem.with_extension("csv"))
}

pub fn save_labels(stem: &Path, labels: &InstanceLabelMap) -> Result<()> {
    let (raster, sidecar) = label_paths(stem);
    save_raster(&raster, labels.ids())?;
    write_sidecar(&sidecar, labels)
}

pub fn load_labels(stem: &Path) -> Result<InstanceLabelMap> {
    let (raster, sidecar) = label_paths(stem);
    let ids = load_raster(&raster)?;
    let rows = read_sidecar(&sidecar)?;
    labels_from_rows(ids, &rows).map_err(|m| Error::format(&sidecar, m))
}

/// Label map from an instance raster and its sidecar rows. Rejects repeated
/// instances and class ids given two names.
pub fn labels_from_rows(ids: LabelRaster, rows: &[SidecarRow]) -> std::result::Result<InstanceLabelMap, String> {
    let mut classes = BTreeMap::new();
    let mut names: BTreeMap<u32, String> = BTreeMap::new();
    for r in rows {
        if classes.insert(r.id, r.class_id).is_some() {
            return Err(format!("instance {} listed twice", r.id));
        }
        if let Some(prev) = names.insert(r.class_id, r.class_name.clone()) {
            if !prev.eq_ignore_ascii_case(&r.class_name) {
                return Err(format!("class {} named both {prev} and {}", r.class_id, r.class_name));
            }
        }
    }
    InstanceLabelMap::new(ids, classes, names).map_err(|e| e.to_string())
}

/// Per-pixel class id of an instance label map (0 = background).
pub fn class_raster(labels: &InstanceLabelMap) -> LabelRaster {
    let ids = labels.ids();
    LabelRaster::from_fn(ids.width(), ids.height(), |x, y| match ids.get(x, y) {
        0 => 0,
        id => labels.class_of(id).unwrap_or(0),
    })
}

/// Rebuilds a label map from an instance raster and a class raster whose
/// ids are registry ids (as written by inference).
pub fn labels_from_rasters(
    instances: LabelRaster,
    classes: &LabelRaster,
) -> std::result::Result<InstanceLabelMap, String> {
    if !instances.same_shape(classes) {
        return Err("instance and class rasters differ in shape".into());
    }
    let mut map = BTreeMap::new();
    let mut names = BTreeMap::new();
    for (&i, &c) in instances.data().iter().zip(classes.data()) {
        if i == 0 {
            continue;
        }
        let name = c
            .checked_sub(1)
            .and_then(|k| CLASS_REGISTRY.get(k as usize))
            .ok_or_else(|| format!("instance {i} has class id {c}, not a registry id"))?;
        if *map.entry(i).or_insert(c) != c {
            return Err(format!("instance {i} spans several classes"));
        }
        names.insert(c, name.to_string());
    }
    InstanceLabelMap::new(instances, map, names).map_err(|e| e.to_string())
}

fn join<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    items.into_iter().map(String::as_str).collect::<Vec<_>>().join(",")
}

/// `support: …`, `query: …`, `novel: …`, `base: …`, `seed: n`, one per line.
pub fn format_episode(e: &Episode) -> String {
    format!(
        "support: {}\nquery: {}\nnovel: {}\nbase: {}\nseed: {}\n",
        join(&e.support),
        join(&e.query),
        join(&e.novel_classes),
        join(&e.base_classes),
        e.seed
    )
}

pub fn parse_episode(text: &str) -> std::result::Result<Episode, String> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once(':').ok_or_else(|| format!("missing ':' in {line:?}"))?;
        if fields.insert(k.trim(), v.trim()).is_some() {
            return Err(format!("duplicate key {:?}", k.trim()));
        }
    }
    let mut get = |k: &str| fields.remove(k).ok_or_else(|| format!("missing key {k:?}"));
    let list = |v: &str| -> Vec<String> {
        v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    };
    let e = Episode {
        support: list(get("support")?),
        query: list(get("query")?),
        novel_classes: list(get("novel")?).into_iter().collect::<BTreeSet<_>>(),
        base_classes: list(get("base")?).into_iter().collect::<BTreeSet<_>>(),
        seed: get("seed")?.parse().map_err(|e| format!("seed: {e}"))?,
    };
    if let Some(k) = fields.keys().next() {
        return Err(format!("unknown key {k:?}"));
    }
    Ok(e)
}

/// `name = path` lines; paths are relative to the manifest's directory.
pub fn format_manifest(entries: &BTreeMap<String, String>) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_manifest(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `name = path`", n + 1))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate name {:?}", n + 1, k.trim()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use sgfsis_core::LabelRaster;

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids = LabelRaster::new(3, 1, vec![0, 4, 7]).unwrap();
        let names = [(2, "EPI".to_string()), (4, "LYM".to_string())].into();
        let labels = InstanceLabelMap::new(ids, [(4, 2), (7, 4)].into(), names).unwrap();
        let stem = dir.path().join("a");
        save_labels(&stem, &labels).unwrap();
        assert_eq!(
            fs::read_to_string(stem.with_extension("csv")).unwrap(),
            "id,class_id,class_name\n4,2,EPI\n7,4,LYM\n"
        );
        assert_eq!(load_labels(&stem).unwrap(), labels);
    }

    #[test]
    fn sidecar_rejects_duplicates_and_unknown_classes() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("b");
        save_raster(&stem.with_extension("sgt"), &LabelRaster::new(2, 1, vec![1, 2]).unwrap()).unwrap();
        fs::write(stem.with_extension("csv"), "id,class_id,class_name\n1,2,EPI\n1,2,EPI\n").unwrap();
        assert!(load_labels(&stem).unwrap_err().to_string().contains("twice"));
        fs::write(stem.with_extension("csv"), "id,class_id,class_name\n1,2,EPI\n2,3,BLOB\n").unwrap();
        assert!(load_labels(&stem).is_err());
    }

    #[test]
    fn class_raster_round_trip() {
        let ids = LabelRaster::new(4, 1, vec![0, 3, 3, 5]).unwrap();
        let names = [(2, "EPI".to_string()), (4, "LYM".to_string())].into();
        let labels = InstanceLabelMap::new(ids.clone(), [(3, 2), (5, 4)].into(), names).unwrap();
        let cls = class_raster(&labels);
        assert_eq!(cls.data(), &[0, 2, 2, 4]);
        assert_eq!(labels_from_rasters(ids.clone(), &cls).unwrap(), labels);
        let mixed = LabelRaster::new(4, 1, vec![0, 2, 4, 4]).unwrap();
        assert!(labels_from_rasters(ids, &mixed).is_err());
    }

    #[test]
    fn episode_text() {
        let e = Episode {
            support: vec!["a".into(), "b".into()],
            query: vec!["c".into(), "d".into()],
            novel_classes: ["EPI".to_string(), "LYM".to_string()].into(),
            base_classes: ["LYM".to_string()].into(),
            seed: 7,
        };
        let text = format_episode(&e);
        assert_eq!(text, "support: a,b\nquery: c,d\nnovel: EPI,LYM\nbase: LYM\nseed: 7\n");
        assert_eq!(parse_episode(&text).unwrap(), e);
        assert!(parse_episode("support: a\n").is_err());
        assert!(parse_episode(&(text + "extra: 1\n")).is_err());
    }

    proptest! {
        #[test]
        fn manifest_round_trip(entries in prop::collection::btree_map("[a-z][a-z0-9_.]{0,8}", "[a-z0-9_./]{1,12}", 0..8)) {
            prop_assert_eq!(parse_manifest(&format_manifest(&entries)).unwrap(), entries);
        }
    }
}
