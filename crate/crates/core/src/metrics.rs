//! Instance-segmentation metrics: matching, detection F1, AJI, panoptic
//! quality and Dice, per image and aggregated over a dataset.
//!
//! Classes are compared by canonical name, so ground truth and prediction
//! may number their classes differently.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::dim_err;
use crate::labels::InstanceLabelMap;
use crate::{BinaryMask, LabelRaster, Result};

/// Instance pairs with IoU above one half.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(gt id, pred id, IoU)`, ascending gt id.
    pub pairs: Vec<(u32, u32, f64)>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

#[derive(Clone, Copy, Debug)]
struct Instance {
    area: usize,
    /// `(y, x)` of the first pixel in raster order.
    first: (usize, usize),
}

/// Areas and pairwise intersections of two label rasters.
struct Overlap {
    gt: BTreeMap<u32, Instance>,
    pred: BTreeMap<u32, Instance>,
    inter: BTreeMap<(u32, u32), usize>,
}

impl Overlap {
    fn new(gt: &LabelRaster, pred: &LabelRaster) -> Result<Self> {
        if !gt.same_shape(pred) {
            return Err(dim_err!(
                "ground truth is {}×{}, prediction is {}×{}",
                gt.width(),
                gt.height(),
                pred.width(),
                pred.height()
            ));
        }
        let mut out = Overlap {
            gt: BTreeMap::new(),
            pred: BTreeMap::new(),
            inter: BTreeMap::new(),
        };
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (g, p) = (gt.get(x, y), pred.get(x, y));
                let bump = |m: &mut BTreeMap<u32, Instance>, id| {
                    m.entry(id)
                        .or_insert(Instance {
                            area: 0,
                            first: (y, x),
                        })
                        .area += 1;
                };
                if g != 0 {
                    bump(&mut out.gt, g);
                }
                if p != 0 {
                    bump(&mut out.pred, p);
                }
                if g != 0 && p != 0 {
                    *out.inter.entry((g, p)).or_insert(0) += 1;
                }
            }
        }
        Ok(out)
    }

    fn union(&self, g: u32, p: u32, inter: usize) -> usize {
        self.gt[&g].area + self.pred[&p].area - inter
    }

    /// Matching restricted to the given instance subsets.
    fn matches(&self, keep_gt: impl Fn(u32) -> bool, keep_pred: impl Fn(u32) -> bool) -> MatchResult {
        let mut pairs = Vec::new();
        for (&(g, p), &i) in &self.inter {
            let u = self.union(g, p, i);
            if keep_gt(g) && keep_pred(p) && 2 * i > u {
                pairs.push((g, p, i as f64 / u as f64));
            }
        }
        let gt_hit: BTreeSet<u32> = pairs.iter().map(|t| t.0).collect();
        let pred_hit: BTreeSet<u32> = pairs.iter().map(|t| t.1).collect();
        MatchResult {
            pairs,
            unmatched_gt: self
                .gt
                .keys()
                .copied()
                .filter(|&g| keep_gt(g) && !gt_hit.contains(&g))
                .collect(),
            unmatched_pred: self
                .pred
                .keys()
                .copied()
                .filter(|&p| keep_pred(p) && !pred_hit.contains(&p))
                .collect(),
        }
    }
}

/// Class-agnostic matching at IoU > 0.5.
pub fn match_instances(gt: &InstanceLabelMap, pred: &InstanceLabelMap) -> Result<MatchResult> {
    Ok(Overlap::new(gt.ids(), pred.ids())?.matches(|_| true, |_| true))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl DetectionCounts {
    /// `2TP / (2TP + FP + FN)`, undefined when all three are zero.
    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PqCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PqCounts {
    pub fn pq(&self) -> Option<f64> {
        let d = self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64;
        (d > 0.0).then(|| self.iou_sum / d)
    }

    /// Mean IoU of the matches.
    pub fn sq(&self) -> Option<f64> {
        (self.tp > 0).then(|| self.iou_sum / self.tp as f64)
    }

    /// F1 of the matching.
    pub fn rq(&self) -> Option<f64> {
        DetectionCounts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
        .f1()
    }
}

/// Accumulated AJI intersection and union.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AjiCounts {
    pub intersection: usize,
    pub union: usize,
}

impl AjiCounts {
    pub fn aji(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DiceCounts {
    pub intersection: usize,
    /// `|A| + |B|`.
    pub total: usize,
}

impl DiceCounts {
    pub fn dice(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / self.total as f64
        }
    }
}

/// Per-class detection counts with class-aware true positives: a match
/// whose classes disagree is a miss for the ground-truth class and a false
/// alarm for the predicted one.
pub fn detection_counts(
    gt: &InstanceLabelMap,
    pred: &InstanceLabelMap,
) -> Result<BTreeMap<String, DetectionCounts>> {
    let ov = Overlap::new(gt.ids(), pred.ids())?;
    let m = ov.matches(|_| true, |_| true);
    let gt_class = |g: u32| gt.class_of(g).and_then(|c| gt.class_name(c)).unwrap_or("?");
    let pred_class = |p: u32| pred.class_of(p).and_then(|c| pred.class_name(c)).unwrap_or("?");
    let mut out: BTreeMap<String, DetectionCounts> = BTreeMap::new();
    for &(g, p, _) in &m.pairs {
        let (cg, cp) = (gt_class(g), pred_class(p));
        if cg == cp {
            out.entry(cg.into()).or_default().tp += 1;
        } else {
            out.entry(cg.into()).or_default().fn_ += 1;
            out.entry(cp.into()).or_default().fp += 1;
        }
    }
    for &g in &m.unmatched_gt {
        out.entry(gt_class(g).into()).or_default().fn_ += 1;
    }
    for &p in &m.unmatched_pred {
        out.entry(pred_class(p).into()).or_default().fp += 1;
    }
    Ok(out)
}

/// Which classes count as novel and which of those overlap the base set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassSets {
    pub novel: Vec<String>,
    pub base: Vec<String>,
}

impl ClassSets {
    pub fn overlap(&self) -> Vec<String> {
        self.novel
            .iter()
            .filter(|c| self.base.contains(c))
            .cloned()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionF1 {
    pub per_class: BTreeMap<String, Option<f64>>,
    /// Mean over novel classes with a defined F1.
    pub novel: Option<f64>,
    /// Mean over novel classes that are also base classes.
    pub base: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn detection_f1(counts: &BTreeMap<String, DetectionCounts>, classes: &ClassSets) -> DetectionF1 {
    let per_class: BTreeMap<String, Option<f64>> = classes
        .novel
        .iter()
        .map(|c| (c.clone(), counts.get(c).and_then(DetectionCounts::f1)))
        .collect();
    let overlap = classes.overlap();
    DetectionF1 {
        novel: mean(per_class.values().copied()),
        base: mean(overlap.iter().map(|c| per_class[c])),
        per_class,
    }
}

/// AJI intersection and union.
///
/// Ground-truth instances are visited in raster order of their first
/// pixel; each takes the unused prediction with the highest IoU (earliest
/// first pixel on ties). Unused predictions and unmatched ground truth add
/// their area to the union.
pub fn aji_counts(gt: &LabelRaster, pred: &LabelRaster) -> Result<AjiCounts> {
    let ov = Overlap::new(gt, pred)?;
    let mut by_gt: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for (&(g, p), &i) in &ov.inter {
        by_gt.entry(g).or_default().push((p, i));
    }
    let mut order: Vec<u32> = ov.gt.keys().copied().collect();
    order.sort_by_key(|g| ov.gt[g].first);

    let mut used = BTreeSet::new();
    let mut acc = AjiCounts::default();
    for g in order {
        let mut best: Option<(u32, usize, usize)> = None;
        for &(p, i) in by_gt.get(&g).map(Vec::as_slice).unwrap_or(&[]) {
            if used.contains(&p) {
                continue;
            }
            let u = ov.union(g, p, i);
            let better = match best {
                None => true,
                // i/u > bi/bu without rounding
                Some((bp, bi, bu)) => {
                    let (l, r) = (i * bu, bi * u);
                    l > r || (l == r && ov.pred[&p].first < ov.pred[&bp].first)
                }
            };
            if better {
                best = Some((p, i, u));
            }
        }
        match best {
            Some((p, i, u)) => {
                used.insert(p);
                acc.intersection += i;
                acc.union += u;
            }
            None => acc.union += ov.gt[&g].area,
        }
    }
    for (p, inst) in &ov.pred {
        if !used.contains(p) {
            acc.union += inst.area;
        }
    }
    Ok(acc)
}

/// Aggregated Jaccard index; undefined when both maps are empty.
pub fn aji(gt: &InstanceLabelMap, pred: &InstanceLabelMap) -> Result<Option<f64>> {
    Ok(aji_counts(gt.ids(), pred.ids())?.aji())
}

/// Key used for the single class-agnostic PQ entry.
pub const ALL_CLASSES: &str = "ALL";

/// Panoptic-quality counts per class name (or one class-agnostic entry
/// under [`ALL_CLASSES`]).
pub fn pq_counts(
    gt: &InstanceLabelMap,
    pred: &InstanceLabelMap,
    per_class: bool,
) -> Result<BTreeMap<String, PqCounts>> {
    let ov = Overlap::new(gt.ids(), pred.ids())?;
    let gt_class = |g: u32| gt.class_of(g).and_then(|c| gt.class_name(c)).unwrap_or("?");
    let pred_class = |p: u32| pred.class_of(p).and_then(|c| pred.class_name(c)).unwrap_or("?");
    let mut names: BTreeSet<&str> = BTreeSet::new();
    if per_class {
        names.extend(ov.gt.keys().map(|&g| gt_class(g)));
        names.extend(ov.pred.keys().map(|&p| pred_class(p)));
    } else if !ov.gt.is_empty() || !ov.pred.is_empty() {
        names.insert(ALL_CLASSES);
    }
    let mut out = BTreeMap::new();
    for name in names {
        let m = if per_class {
            ov.matches(|g| gt_class(g) == name, |p| pred_class(p) == name)
        } else {
            ov.matches(|_| true, |_| true)
        };
        out.insert(
            name.into(),
            PqCounts {
                tp: m.pairs.len(),
                fp: m.unmatched_pred.len(),
                fn_: m.unmatched_gt.len(),
                iou_sum: m.pairs.iter().map(|t| t.2).sum(),
            },
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanopticQuality {
    pub per_class: BTreeMap<String, Option<f64>>,
    /// Mean PQ over classes present in ground truth or prediction.
    pub mpq: Option<f64>,
}

pub fn panoptic_quality(gt: &InstanceLabelMap, pred: &InstanceLabelMap, per_class: bool) -> Result<PanopticQuality> {
    let per: BTreeMap<String, Option<f64>> = pq_counts(gt, pred, per_class)?
        .into_iter()
        .map(|(k, c)| (k, c.pq()))
        .collect();
    Ok(PanopticQuality {
        mpq: mean(per.values().copied()),
        per_class: per,
    })
}

pub fn dice_counts(gt: &BinaryMask, pred: &BinaryMask) -> Result<DiceCounts> {
    if !gt.same_shape(pred) {
        return Err(dim_err!("foreground masks differ in shape"));
    }
    Ok(DiceCounts {
        intersection: gt.and(pred).count(),
        total: gt.count() + pred.count(),
    })
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both are empty.
pub fn dice_coefficient(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    Ok(dice_counts(gt, pred)?.dice())
}

/// Raw counts behind one image's metrics; sums of these give the
/// pixel-weighted dataset figures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricCounts {
    pub detection: BTreeMap<String, DetectionCounts>,
    pub aji: AjiCounts,
    pub pq: BTreeMap<String, PqCounts>,
    pub dice: DiceCounts,
}

impl MetricCounts {
    pub fn add(&mut self, other: &MetricCounts) {
        for (k, c) in &other.detection {
            let e = self.detection.entry(k.clone()).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
        }
        for (k, c) in &other.pq {
            let e = self.pq.entry(k.clone()).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
            e.iou_sum += c.iou_sum;
        }
        self.aji.intersection += other.aji.intersection;
        self.aji.union += other.aji.union;
        self.dice.intersection += other.dice.intersection;
        self.dice.total += other.dice.total;
    }
}

/// Undefined entries are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub f1_per_class: BTreeMap<String, Option<f64>>,
    pub f1_novel: Option<f64>,
    pub f1_base: Option<f64>,
    pub aji: Option<f64>,
    pub mpq: Option<f64>,
    pub pq_per_class: BTreeMap<String, Option<f64>>,
    pub dice: Option<f64>,
}

impl MetricsReport {
    pub fn from_counts(counts: &MetricCounts, classes: &ClassSets) -> Self {
        let f1 = detection_f1(&counts.detection, classes);
        let pq_per_class: BTreeMap<String, Option<f64>> =
            counts.pq.iter().map(|(k, c)| (k.clone(), c.pq())).collect();
        MetricsReport {
            f1_per_class: f1.per_class,
            f1_novel: f1.novel,
            f1_base: f1.base,
            aji: counts.aji.aji(),
            mpq: mean(pq_per_class.values().copied()),
            pq_per_class,
            dice: Some(counts.dice.dice()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Class-agnostic PQ instead of per-class.
    pub class_agnostic_pq: bool,
}

pub fn image_counts(gt: &InstanceLabelMap, pred: &InstanceLabelMap, opts: EvalOptions) -> Result<MetricCounts> {
    Ok(MetricCounts {
        detection: detection_counts(gt, pred)?,
        aji: aji_counts(gt.ids(), pred.ids())?,
        pq: pq_counts(gt, pred, !opts.class_agnostic_pq)?,
        dice: dice_counts(&gt.foreground(), &pred.foreground())?,
    })
}

/// All metrics for one image.
pub fn evaluate(
    gt: &InstanceLabelMap,
    pred: &InstanceLabelMap,
    classes: &ClassSets,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    Ok(MetricsReport::from_counts(&image_counts(gt, pred, opts)?, classes))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Mean of per-image values, skipping undefined ones.
    #[default]
    Macro,
    /// Metrics of the summed counts.
    Micro,
}

/// Dataset figures from per-image counts, reduced in the given order.
pub fn aggregate(images: &[MetricCounts], classes: &ClassSets, averaging: Averaging) -> MetricsReport {
    match averaging {
        Averaging::Micro => {
            let mut total = MetricCounts::default();
            for c in images {
                total.add(c);
            }
            MetricsReport::from_counts(&total, classes)
        }
        Averaging::Macro => {
            let reports: Vec<MetricsReport> = images
                .iter()
                .map(|c| MetricsReport::from_counts(c, classes))
                .collect();
            let keyed = |f: &dyn Fn(&MetricsReport) -> &BTreeMap<String, Option<f64>>| {
                let keys: BTreeSet<&String> = reports.iter().flat_map(|r| f(r).keys()).collect();
                keys.into_iter()
                    .map(|k| (k.clone(), mean(reports.iter().map(|r| f(r).get(k).copied().flatten()))))
                    .collect::<BTreeMap<_, _>>()
            };
            MetricsReport {
                f1_per_class: keyed(&|r| &r.f1_per_class),
                f1_novel: mean(reports.iter().map(|r| r.f1_novel)),
                f1_base: mean(reports.iter().map(|r| r.f1_base)),
                aji: mean(reports.iter().map(|r| r.aji)),
                mpq: mean(reports.iter().map(|r| r.mpq)),
                pq_per_class: keyed(&|r| &r.pq_per_class),
                dice: mean(reports.iter().map(|r| r.dice)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn names() -> BTreeMap<u32, String> {
        [(1, "EPI"), (2, "LYM")].iter().map(|&(i, n)| (i, n.to_string())).collect()
    }

    fn label(w: usize, h: usize, cells: &[u32], classes: &[(u32, u32)]) -> InstanceLabelMap {
        InstanceLabelMap::new(
            LabelRaster::new(w, h, cells.to_vec()).unwrap(),
            classes.iter().copied().collect(),
            names(),
        )
        .unwrap()
    }

    /// gt: two 2×2 blocks; pred: half of the first, the second plus one pixel.
    fn aji_scene() -> (InstanceLabelMap, InstanceLabelMap) {
        #[rustfmt::skip]
        let gt = label(4, 4, &[
            1, 1, 0, 0,
            1, 1, 0, 0,
            0, 0, 2, 2,
            0, 0, 2, 2,
        ], &[(1, 1), (2, 1)]);
        #[rustfmt::skip]
        let pred = label(4, 4, &[
            5, 5, 0, 0,
            0, 0, 0, 0,
            0, 0, 3, 3,
            0, 3, 3, 3,
        ], &[(5, 1), (3, 1)]);
        (gt, pred)
    }

    #[test]
    fn aji_example() {
        let (gt, pred) = aji_scene();
        assert!((aji(&gt, &pred).unwrap().unwrap() - 6.0 / 9.0).abs() < 1e-12);
        assert_eq!(aji(&gt, &gt).unwrap(), Some(1.0));
        let empty = label(4, 4, &[0; 16], &[]);
        assert_eq!(aji(&gt, &empty).unwrap(), Some(0.0));
        assert_eq!(aji(&empty, &empty).unwrap(), None);
    }

    #[test]
    fn matching_examples() {
        let (gt, pred) = aji_scene();
        let m = match_instances(&gt, &gt).unwrap();
        assert_eq!(m.pairs, vec![(1, 1, 1.0), (2, 2, 1.0)]);
        assert!(m.unmatched_gt.is_empty() && m.unmatched_pred.is_empty());
        let m = match_instances(&gt, &pred).unwrap();
        assert_eq!(m.pairs, vec![(2, 3, 0.8)]);
        assert_eq!(m.unmatched_gt, vec![1]);
        assert_eq!(m.unmatched_pred, vec![5]);

        let g = label(3, 3, &[1, 1, 0, 1, 1, 0, 0, 0, 0], &[(1, 1)]);
        let p = label(3, 3, &[1, 1, 1, 1, 0, 0, 0, 0, 0], &[(1, 1)]);
        let m = match_instances(&g, &p).unwrap();
        assert_eq!(m.pairs, vec![(1, 1, 0.6)]);

        let q = label(3, 3, &[0, 0, 0, 0, 0, 0, 2, 2, 2], &[(2, 1)]);
        assert!(match_instances(&g, &q).unwrap().pairs.is_empty());
    }

    #[test]
    fn f1_examples() {
        let c = DetectionCounts { tp: 2, fp: 1, fn_: 1 };
        assert!((c.f1().unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(DetectionCounts::default().f1(), None);

        let (gt, _) = aji_scene();
        let classes = ClassSets {
            novel: vec!["EPI".into(), "LYM".into()],
            base: vec!["NEU".into()],
        };
        let f1 = detection_f1(&detection_counts(&gt, &gt).unwrap(), &classes);
        assert_eq!(f1.per_class["EPI"], Some(1.0));
        assert_eq!(f1.per_class["LYM"], None);
        assert_eq!(f1.novel, Some(1.0));
        assert_eq!(f1.base, None);
    }

    #[test]
    fn wrong_class_match_is_miss_and_false_alarm() {
        let (gt, _) = aji_scene();
        let relabelled = label(4, 4, gt.ids().data(), &[(1, 1), (2, 2)]);
        let counts = detection_counts(&gt, &relabelled).unwrap();
        assert_eq!(counts["EPI"], DetectionCounts { tp: 1, fp: 0, fn_: 1 });
        assert_eq!(counts["LYM"], DetectionCounts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn pq_examples() {
        let c = PqCounts { tp: 1, fp: 1, fn_: 1, iou_sum: 0.6 };
        assert!((c.pq().unwrap() - 0.3).abs() < 1e-12);
        let (gt, pred) = aji_scene();
        let pq = panoptic_quality(&gt, &gt, true).unwrap();
        assert_eq!(pq.mpq, Some(1.0));
        assert!(!pq.per_class.contains_key("LYM"));
        let pq = panoptic_quality(&gt, &pred, true).unwrap();
        // one match at 0.8, one FP, one FN
        assert!((pq.per_class["EPI"].unwrap() - 0.4).abs() < 1e-12);
        let agnostic = panoptic_quality(&gt, &pred, false).unwrap();
        assert!(agnostic.per_class.contains_key(ALL_CLASSES));
    }

    #[test]
    fn dice_examples() {
        let a = BinaryMask::from_fn(4, 2, |x, _| x < 2);
        let b = BinaryMask::from_fn(4, 2, |x, _| (1..3).contains(&x));
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.5);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_fn(4, 2, |x, _| x >= 2);
        assert_eq!(dice_coefficient(&a, &c).unwrap(), 0.0);
        let e = BinaryMask::filled(4, 2, false);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let (gt, _) = aji_scene();
        let small = label(2, 2, &[0; 4], &[]);
        assert!(aji(&gt, &small).is_err());
        assert!(match_instances(&gt, &small).is_err());
        assert!(panoptic_quality(&gt, &small, true).is_err());
    }

    #[test]
    fn micro_and_macro_aggregation() {
        let (gt, pred) = aji_scene();
        let classes = ClassSets { novel: vec!["EPI".into()], base: vec![] };
        let a = image_counts(&gt, &gt, EvalOptions::default()).unwrap();
        let b = image_counts(&gt, &pred, EvalOptions::default()).unwrap();
        let mac = aggregate(&[a.clone(), b.clone()], &classes, Averaging::Macro);
        assert!((mac.aji.unwrap() - (1.0 + 6.0 / 9.0) / 2.0).abs() < 1e-12);
        let mic = aggregate(&[a, b], &classes, Averaging::Micro);
        assert!((mic.aji.unwrap() - (8.0 + 6.0) / (8.0 + 9.0)).abs() < 1e-12);
    }

    fn scene() -> impl Strategy<Value = (InstanceLabelMap, InstanceLabelMap)> {
        let rects = || prop::collection::vec((0usize..12, 0usize..12, 1usize..6, 1usize..6, 1u32..3), 0..7);
        (rects(), rects()).prop_map(|(a, b)| (paint(&a), paint(&b)))
    }

    fn paint(rects: &[(usize, usize, usize, usize, u32)]) -> InstanceLabelMap {
        let mut ids = LabelRaster::filled(12, 12, 0);
        let mut classes = BTreeMap::new();
        for (k, &(x0, y0, w, h, c)) in rects.iter().enumerate() {
            let id = k as u32 + 1;
            let mut any = false;
            for y in y0..(y0 + h).min(12) {
                for x in x0..(x0 + w).min(12) {
                    ids.set(x, y, id);
                    any = true;
                }
            }
            if any {
                classes.insert(id, c);
            }
        }
        // later rectangles may have erased earlier ones
        let present: BTreeSet<u32> = ids.data().iter().copied().collect();
        classes.retain(|id, _| present.contains(id));
        InstanceLabelMap::new(ids, classes, names()).unwrap()
    }

    fn permute(m: &InstanceLabelMap, shift: u32) -> InstanceLabelMap {
        let f = |v: u32| if v == 0 { 0 } else { (v * 7 + shift) % 97 + 1 };
        InstanceLabelMap::new(
            m.ids().map(f),
            m.classes().iter().map(|(&i, &c)| (f(i), c)).collect(),
            m.class_names().clone(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn metric_properties((gt, pred) in scene(), shift in 0u32..50) {
            let classes = ClassSets { novel: vec!["EPI".into(), "LYM".into()], base: vec!["EPI".into()] };
            let r = evaluate(&gt, &pred, &classes, EvalOptions::default()).unwrap();
            let vals = [r.f1_novel, r.f1_base, r.aji, r.mpq, r.dice];
            for v in vals.iter().flatten().chain(r.pq_per_class.values().flatten()) {
                prop_assert!((0.0..=1.0).contains(v));
            }
            if let (Some(a), Some(d)) = (r.aji, r.dice) {
                prop_assert!(a <= d + 1e-12);
            }
            let m = match_instances(&gt, &pred).unwrap();
            let gts: BTreeSet<u32> = m.pairs.iter().map(|p| p.0).collect();
            let preds: BTreeSet<u32> = m.pairs.iter().map(|p| p.1).collect();
            prop_assert_eq!(gts.len(), m.pairs.len());
            prop_assert_eq!(preds.len(), m.pairs.len());
            for c in pq_counts(&gt, &pred, true).unwrap().values() {
                if let (Some(pq), Some(sq), Some(rq)) = (c.pq(), c.sq(), c.rq()) {
                    prop_assert!((pq - sq * rq).abs() < 1e-9);
                }
            }
            let moved = evaluate(&permute(&gt, shift), &permute(&pred, shift + 3), &classes, EvalOptions::default()).unwrap();
            prop_assert_eq!(moved, r);
            let same = evaluate(&gt, &gt, &classes, EvalOptions::default()).unwrap();
            for v in [same.aji, same.mpq, same.dice, same.f1_novel].iter().flatten() {
                prop_assert_eq!(*v, 1.0);
            }
        }
    }
}
