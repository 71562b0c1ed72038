//! Marker-guided watershed: marker derivation, flooding and class fusion.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::components::{
    label_components, label_components_within, neighbours, pixel_lists, Connectivity,
};
use crate::error::dim_err;
use crate::labels::InstanceLabelMap;
use crate::morphology::erode;
use crate::{BinaryMask, Error, LabelRaster, Result, Scalar, Tensor};

/// Binarization thresholds for the foreground, boundary and centroid maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub foreground: f64,
    pub boundary: f64,
    pub centroid: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            foreground: 0.5,
            boundary: 0.5,
            centroid: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("foreground", self.foreground),
            ("boundary", self.boundary),
            ("centroid", self.centroid),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "{name} threshold {t} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Surface the flood descends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Relief {
    /// Negated foreground probability.
    #[default]
    Probability,
    /// Negated chamfer distance to the background.
    Distance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WatershedConfig {
    pub thresholds: Thresholds,
    /// Extra erosion of `fg AND NOT bd` before labelling; 0 = plain
    /// set difference.
    pub extra_erosion: usize,
    pub relief: Relief,
}

/// Consecutive marker labels `1..=count`, one connected piece each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkerMap {
    pub labels: LabelRaster,
    pub count: u32,
}

/// Class-agnostic instance raster, `0` = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMask {
    pub labels: LabelRaster,
}

impl InstanceMask {
    pub fn count(&self) -> usize {
        let mut ids: Vec<u32> = self.labels.data().iter().copied().filter(|&v| v != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

fn same_hw<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.hw()? != b.hw()? {
        return Err(dim_err!("{what} is {:?}, foreground is {:?}", b.dims(), a.dims()));
    }
    Ok(())
}

/// Largest 8-connected piece of `mask` (earliest in raster order on ties).
fn largest_piece(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (labels, n) = label_components(mask, Connectivity::Eight);
    let mut best: Vec<(usize, usize)> = Vec::new();
    for piece in pixel_lists(&labels, n) {
        if piece.len() > best.len() {
            best = piece;
        }
    }
    best
}

/// Markers from the binarized structural maps.
///
/// Components of `fg AND NOT bd` are markers (8-connected within one
/// 4-connected foreground region), except that a component
/// overlapping two or more centroid components is replaced by its overlap
/// with each of them. A 4-connected foreground region left without any
/// marker (for instance one entirely covered by boundary) becomes a marker
/// itself, so flooding reaches every foreground pixel.
pub fn derive_markers<T: Scalar>(
    fg: &Tensor<T>,
    bd: &Tensor<T>,
    ct: &Tensor<T>,
    thresholds: Thresholds,
    extra_erosion: usize,
) -> Result<MarkerMap> {
    same_hw(fg, bd, "boundary map")?;
    same_hw(fg, ct, "centroid map")?;
    let fg_bin = BinaryMask::threshold(fg, thresholds.foreground)?;
    let bd_bin = BinaryMask::threshold(bd, thresholds.boundary)?;
    let ct_bin = BinaryMask::threshold(ct, thresholds.centroid)?;
    let (w, h) = (fg_bin.width(), fg_bin.height());

    let mut inner = fg_bin.and_not(&bd_bin);
    if extra_erosion > 0 {
        inner = erode(&inner, extra_erosion);
    }
    // 8-connected, but never across a diagonal gap between foreground
    // regions the 4-connected flood cannot cross
    let (fg_regions, n_fg) = label_components(&fg_bin, Connectivity::Four);
    let (regions, n_regions) =
        label_components_within(&inner, Connectivity::Eight, Some(&fg_regions));
    let (centres, _) = label_components(&ct_bin, Connectivity::Eight);

    let mut pieces: Vec<Vec<(usize, usize)>> = Vec::new();
    for region in pixel_lists(&regions, n_regions) {
        let mut hits: Vec<u32> = region
            .iter()
            .map(|&(x, y)| centres.get(x, y))
            .filter(|&c| c != 0)
            .collect();
        hits.sort_unstable();
        hits.dedup();
        if hits.len() < 2 {
            pieces.push(region);
            continue;
        }
        for c in hits {
            let mut overlap = BinaryMask::filled(w, h, false);
            for &(x, y) in &region {
                if centres.get(x, y) == c {
                    overlap.set(x, y, true);
                }
            }
            pieces.push(largest_piece(&overlap));
        }
    }

    let mut seeded = BinaryMask::filled(w, h, false);
    for piece in &pieces {
        for &(x, y) in piece {
            seeded.set(x, y, true);
        }
    }
    for region in pixel_lists(&fg_regions, n_fg) {
        if !region.iter().any(|&(x, y)| seeded.get(x, y)) {
            pieces.push(region);
        }
    }

    // relabel in raster order of each marker's first pixel
    pieces.sort_by_key(|p| p.iter().map(|&(x, y)| (y, x)).min());
    let mut labels = LabelRaster::filled(w, h, 0);
    for (k, piece) in pieces.iter().enumerate() {
        for &(x, y) in piece {
            labels.set(x, y, k as u32 + 1);
        }
    }
    Ok(MarkerMap {
        labels,
        count: pieces.len() as u32,
    })
}

/// Chamfer (3-4) distance of each set pixel to the nearest unset pixel or
/// the image border, in units of one orthogonal step.
pub fn distance_to_background(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width(), mask.height());
    let big = u32::MAX / 2;
    let mut d: Vec<u32> = mask.data().iter().map(|&b| if b { big } else { 0 }).collect();
    let at = |x: isize, y: isize, d: &[u32]| -> u32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let m = [(-1, -1, 4), (0, -1, 3), (1, -1, 4), (-1, 0, 3)]
                .iter()
                .map(|&(dx, dy, c)| at(x + dx, y + dy, &d) + c)
                .min()
                .unwrap();
            d[i] = d[i].min(m);
        }
    }
    for y in (0..h as isize).rev() {
        for x in (0..w as isize).rev() {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let m = [(1, 1, 4), (0, 1, 3), (-1, 1, 4), (1, 0, 3)]
                .iter()
                .map(|&(dx, dy, c)| at(x + dx, y + dy, &d) + c)
                .min()
                .unwrap();
            d[i] = d[i].min(m);
        }
    }
    d.into_iter().map(|v| v as f64 / 3.0).collect()
}

#[derive(PartialEq)]
struct Key(f64, u64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Marker-controlled priority flood over the binarized foreground.
///
/// Lower relief floods first; equal relief goes to the pixel queued
/// earlier. Marker pixels are queued in raster order and growth is
/// 4-connected. Foreground pixels no marker can reach stay background.
pub fn watershed_segment<T: Scalar>(
    markers: &MarkerMap,
    fg: &Tensor<T>,
    threshold: f64,
    relief: Relief,
) -> Result<InstanceMask> {
    let fg_bin = BinaryMask::threshold(fg, threshold)?;
    if !fg_bin.same_shape(&markers.labels) {
        return Err(dim_err!(
            "marker map is {}×{}, foreground is {:?}",
            markers.labels.width(),
            markers.labels.height(),
            fg.dims()
        ));
    }
    let (w, h) = (fg_bin.width(), fg_bin.height());
    let surface: Vec<f64> = match relief {
        Relief::Probability => fg.data().iter().map(|v| -v.as_f64()).collect(),
        Relief::Distance => distance_to_background(&fg_bin).into_iter().map(|d| -d).collect(),
    };

    let mut labels = LabelRaster::filled(w, h, 0);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for y in 0..h {
        for x in 0..w {
            let m = markers.labels.get(x, y);
            if m == 0 {
                continue;
            }
            if !fg_bin.get(x, y) {
                return Err(Error::InconsistentMarker { label: m, x, y });
            }
            labels.set(x, y, m);
            heap.push(Reverse((Key(surface[y * w + x], seq), y * w + x)));
            seq += 1;
        }
    }
    while let Some(Reverse((_, i))) = heap.pop() {
        let (x, y) = (i % w, i / w);
        let m = labels.get(x, y);
        for (nx, ny) in neighbours(x, y, w, h, Connectivity::Four) {
            if fg_bin.get(nx, ny) && labels.get(nx, ny) == 0 {
                labels.set(nx, ny, m);
                let j = ny * w + nx;
                heap.push(Reverse((Key(surface[j], seq), j)));
                seq += 1;
            }
        }
    }
    Ok(InstanceMask { labels })
}

/// Per-pixel argmax over channels, lower channel on ties.
pub fn pixel_argmax<T: Scalar>(cls: &Tensor<T>) -> Result<Vec<usize>> {
    let (n, h, w) = cls.chw()?;
    let plane = h * w;
    let data = cls.data();
    Ok((0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..n {
                if data[c * plane + p] > data[best * plane + p] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Assigns each instance the majority of its pixels' argmax channels
/// (lower channel on ties); channel `c` maps to `class_ids[c]`.
pub fn fuse_instance_class<T: Scalar>(
    instances: &InstanceMask,
    cls: &Tensor<T>,
    class_ids: &[u32],
    class_names: &BTreeMap<u32, String>,
) -> Result<InstanceLabelMap> {
    let (n, h, w) = cls.chw()?;
    if (w, h) != (instances.labels.width(), instances.labels.height()) {
        return Err(dim_err!(
            "classification map is {:?}, instance mask is {}×{}",
            cls.dims(),
            instances.labels.width(),
            instances.labels.height()
        ));
    }
    if class_ids.len() != n {
        return Err(dim_err!("{} class ids for {n} channels", class_ids.len()));
    }
    let winners = pixel_argmax(cls)?;
    let mut votes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (p, &id) in instances.labels.data().iter().enumerate() {
        if id != 0 {
            votes.entry(id).or_insert_with(|| alloc::vec![0; n])[winners[p]] += 1;
        }
    }
    let classes = votes
        .into_iter()
        .map(|(id, counts)| {
            let mut best = 0;
            for c in 1..n {
                if counts[c] > counts[best] {
                    best = c;
                }
            }
            (id, class_ids[best])
        })
        .collect();
    InstanceLabelMap::new(instances.labels.clone(), classes, class_names.clone())
}

/// Markers, flooded instances and fused labels for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub markers: MarkerMap,
    pub instances: InstanceMask,
    pub labels: InstanceLabelMap,
}

pub fn segment<T: Scalar>(
    fg: &Tensor<T>,
    bd: &Tensor<T>,
    ct: &Tensor<T>,
    cls: &Tensor<T>,
    class_ids: &[u32],
    class_names: &BTreeMap<u32, String>,
    cfg: &WatershedConfig,
) -> Result<Segmentation> {
    cfg.thresholds.validate()?;
    let markers = derive_markers(fg, bd, ct, cfg.thresholds, cfg.extra_erosion)?;
    let instances = watershed_segment(&markers, fg, cfg.thresholds.foreground, cfg.relief)?;
    let labels = fuse_instance_class(&instances, cls, class_ids, class_names)?;
    Ok(Segmentation {
        markers,
        instances,
        labels,
    })
}
