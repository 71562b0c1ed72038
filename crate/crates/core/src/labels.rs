//! Instance label maps and their conversion into supervision channels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::morphology::disk;
use crate::{BinaryMask, Error, LabelRaster, Result};

/// Canonical nucleus class names. Classes of different datasets are the
/// same class exactly when their canonical names are equal.
pub const CLASS_REGISTRY: [&str; 12] = [
    "INF", "EPI", "SPS", "LYM", "NEU", "MAC", "NEO", "CON", "DEA", "PLA", "EOS", "MIS",
];

/// Registry spelling of `name` (matched case-insensitively).
pub fn canonical_class_name(name: &str) -> Option<&'static str> {
    let name = name.trim();
    CLASS_REGISTRY
        .iter()
        .copied()
        .find(|c| c.eq_ignore_ascii_case(name))
}

/// Class id of a registry name: its 1-based registry position.
pub fn registry_class_id(name: &str) -> Option<u32> {
    let c = canonical_class_name(name)?;
    CLASS_REGISTRY.iter().position(|&r| r == c).map(|i| i as u32 + 1)
}

/// Instance raster plus per-instance classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceLabelMap {
    ids: LabelRaster,
    classes: BTreeMap<u32, u32>,
    class_names: BTreeMap<u32, String>,
}

impl InstanceLabelMap {
    /// Checks that every instance in the raster has a class, every class a
    /// registry name, and that class names are unique.
    pub fn new(
        ids: LabelRaster,
        classes: BTreeMap<u32, u32>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        if classes.contains_key(&0) {
            return Err(Error::MalformedLabel("id 0 is reserved for background".into()));
        }
        for &id in ids.data() {
            if id != 0 && !classes.contains_key(&id) {
                return Err(Error::MalformedLabel(format!("instance {id} has no class")));
            }
        }
        let mut canonical = BTreeMap::new();
        for (&cid, name) in &class_names {
            if cid == 0 {
                return Err(Error::MalformedLabel("class id 0 is reserved".into()));
            }
            let c = canonical_class_name(name)
                .ok_or_else(|| Error::Registry(format!("unknown class name {name:?}")))?;
            if canonical.values().any(|v: &String| v == c) {
                return Err(Error::Registry(format!("class name {c} used twice")));
            }
            canonical.insert(cid, c.to_string());
        }
        for (&id, &cid) in &classes {
            if !canonical.contains_key(&cid) {
                return Err(Error::MalformedLabel(format!(
                    "instance {id} has unnamed class {cid}"
                )));
            }
        }
        Ok(Self {
            ids,
            classes,
            class_names: canonical,
        })
    }

    /// Label map with no instances.
    pub fn empty(width: usize, height: usize, class_names: BTreeMap<u32, String>) -> Result<Self> {
        Self::new(LabelRaster::filled(width, height, 0), BTreeMap::new(), class_names)
    }

    pub fn ids(&self) -> &LabelRaster {
        &self.ids
    }

    pub fn width(&self) -> usize {
        self.ids.width()
    }

    pub fn height(&self) -> usize {
        self.ids.height()
    }

    /// Instance id → class id.
    pub fn classes(&self) -> &BTreeMap<u32, u32> {
        &self.classes
    }

    /// Class id → canonical name.
    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    pub fn class_of(&self, id: u32) -> Option<u32> {
        self.classes.get(&id).copied()
    }

    pub fn class_name(&self, class_id: u32) -> Option<&str> {
        self.class_names.get(&class_id).map(String::as_str)
    }

    pub fn class_id(&self, name: &str) -> Option<u32> {
        let c = canonical_class_name(name)?;
        self.class_names
            .iter()
            .find(|(_, n)| n.as_str() == c)
            .map(|(&id, _)| id)
    }

    /// Instance ids present in the raster, ascending.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.ids.data().iter().copied().filter(|&v| v != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Pixels of each listed instance, in raster order.
    pub fn instance_pixels(&self) -> BTreeMap<u32, Vec<(usize, usize)>> {
        let mut out: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let id = self.ids.get(x, y);
                if id != 0 {
                    out.entry(id).or_default().push((x, y));
                }
            }
        }
        out
    }

    pub fn foreground(&self) -> BinaryMask {
        self.ids.foreground()
    }

    /// Copy keeping only instances of `class_id`.
    pub fn restrict_to_class(&self, class_id: u32) -> InstanceLabelMap {
        let ids = self
            .ids
            .map(|v| if v != 0 && self.classes.get(&v) == Some(&class_id) { v } else { 0 });
        let classes = self
            .classes
            .iter()
            .filter(|(_, &c)| c == class_id)
            .map(|(&i, &c)| (i, c))
            .collect();
        InstanceLabelMap {
            ids,
            classes,
            class_names: self.class_names.clone(),
        }
    }
}

/// Supervision channels derived from one label map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuralChannels {
    /// Class ids of `class_masks`, ascending.
    pub class_ids: Vec<u32>,
    /// Class names parallel to `class_ids`.
    pub class_names: Vec<String>,
    pub class_masks: Vec<BinaryMask>,
    pub foreground: BinaryMask,
    pub boundary: BinaryMask,
    pub centroid: BinaryMask,
}

impl StructuralChannels {
    pub fn class_mask(&self, name: &str) -> Option<&BinaryMask> {
        let c = canonical_class_name(name)?;
        self.class_names
            .iter()
            .position(|n| n == c)
            .map(|i| &self.class_masks[i])
    }
}

/// Boundary and centroid disk radii.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConversionRadii {
    pub boundary: usize,
    pub centroid: usize,
}

impl Default for ConversionRadii {
    fn default() -> Self {
        Self {
            boundary: 1,
            centroid: 1,
        }
    }
}

/// Scan magnification presets for the disk sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Magnification {
    /// Boundary 3, centroid 0.
    Mag20,
    /// Boundary 5, centroid 3.
    Mag40,
}

impl Magnification {
    pub fn radii(self) -> ConversionRadii {
        match self {
            Magnification::Mag20 => ConversionRadii {
                boundary: 3,
                centroid: 0,
            },
            Magnification::Mag40 => ConversionRadii {
                boundary: 5,
                centroid: 3,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Magnification::Mag20 => "mag20",
            Magnification::Mag40 => "mag40",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mag20" => Some(Magnification::Mag20),
            "mag40" => Some(Magnification::Mag40),
            _ => None,
        }
    }
}

/// Centroid pixel of an instance: the floored mean coordinate, moved to the
/// closest instance pixel when it falls outside (earliest in `pixels` on
/// ties; [`InstanceLabelMap::instance_pixels`] lists raster order).
pub fn instance_centroid(pixels: &[(usize, usize)]) -> Option<(usize, usize)> {
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as u64;
    let sx: u64 = pixels.iter().map(|p| p.0 as u64).sum();
    let sy: u64 = pixels.iter().map(|p| p.1 as u64).sum();
    let (cx, cy) = ((sx / n) as usize, (sy / n) as usize);
    if pixels.contains(&(cx, cy)) {
        return Some((cx, cy));
    }
    pixels
        .iter()
        .copied()
        .min_by_key(|&(x, y)| {
            let dx = x as i64 - cx as i64;
            let dy = y as i64 - cy as i64;
            dx * dx + dy * dy
        })
}

/// Splits a label map into class, foreground, boundary and centroid masks.
///
/// The boundary of an instance is its own pixels minus its erosion by
/// `disk(boundary)`, so two touching instances each mark their side of the
/// shared wall. The centroid pixel is dilated by `disk(centroid)` and
/// clipped to the instance.
pub fn convert_labels(label: &InstanceLabelMap, radii: ConversionRadii) -> Result<StructuralChannels> {
    let (w, h) = (label.width(), label.height());
    let pixels = label.instance_pixels();
    if let Some(id) = label.classes.keys().find(|id| !pixels.contains_key(id)) {
        return Err(Error::MalformedLabel(format!("instance {id} has no pixels")));
    }

    let class_ids: Vec<u32> = label.class_names.keys().copied().collect();
    let mut class_masks = alloc::vec![BinaryMask::filled(w, h, false); class_ids.len()];
    let mut boundary = BinaryMask::filled(w, h, false);
    let mut centroid = BinaryMask::filled(w, h, false);
    let bd_disk = disk(radii.boundary);
    let ct_disk = disk(radii.centroid);
    let ids = &label.ids;
    let at = |x: usize, y: usize, dx: isize, dy: isize| -> Option<(usize, usize)> {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
    };

    for (&id, pix) in &pixels {
        let cid = label.classes[&id];
        let slot = class_ids.binary_search(&cid).expect("validated class id");
        for &(x, y) in pix {
            class_masks[slot].set(x, y, true);
            let on_edge = bd_disk.iter().any(|&(dx, dy)| match at(x, y, dx, dy) {
                Some((nx, ny)) => ids.get(nx, ny) != id,
                None => false,
            });
            if on_edge {
                boundary.set(x, y, true);
            }
        }
        let (cx, cy) = instance_centroid(pix).expect("non-empty instance");
        for &(dx, dy) in &ct_disk {
            if let Some((nx, ny)) = at(cx, cy, dx, dy) {
                if ids.get(nx, ny) == id {
                    centroid.set(nx, ny, true);
                }
            }
        }
    }

    Ok(StructuralChannels {
        class_names: class_ids
            .iter()
            .map(|c| label.class_names[c].clone())
            .collect(),
        class_ids,
        class_masks,
        foreground: ids.foreground(),
        boundary,
        centroid,
    })
}
