//! Brute-force instance metrics straight from their definitions: every
//! intersection and union is a full pixel scan, nothing is cached and no
//! library metric code is used.

use std::collections::{BTreeMap, BTreeSet};

/// Instance raster (row-major, 0 = background) with a class name per id.
pub struct Scene<'a> {
    pub ids: &'a [u32],
    pub class: &'a BTreeMap<u32, String>,
}

impl Scene<'_> {
    /// Ids present in the raster, ordered by their first pixel.
    fn instances(&self) -> Vec<u32> {
        let mut seen = Vec::new();
        for &v in self.ids {
            if v != 0 && !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen
    }

    fn area(&self, id: u32) -> usize {
        self.ids.iter().filter(|&&v| v == id).count()
    }

    fn class_of(&self, id: u32) -> &str {
        &self.class[&id]
    }
}

fn inter_union(gt: &Scene, g: u32, pred: &Scene, p: u32) -> (usize, usize) {
    let (mut i, mut u) = (0, 0);
    for (&a, &b) in gt.ids.iter().zip(pred.ids) {
        let (x, y) = (a == g, b == p);
        i += usize::from(x && y);
        u += usize::from(x || y);
    }
    (i, u)
}

pub fn aji(gt: &Scene, pred: &Scene) -> Option<f64> {
    let mut used: BTreeSet<u32> = BTreeSet::new();
    let (mut num, mut den) = (0usize, 0usize);
    let preds = pred.instances();
    for g in gt.instances() {
        let mut best: Option<(u32, usize, usize)> = None;
        for &p in &preds {
            if used.contains(&p) {
                continue;
            }
            let (i, u) = inter_union(gt, g, pred, p);
            if i == 0 {
                continue;
            }
            // first pixel order makes the earlier prediction win ties
            if best.is_none_or(|(_, bi, bu)| i * bu > bi * u) {
                best = Some((p, i, u));
            }
        }
        match best {
            Some((p, i, u)) => {
                used.insert(p);
                num += i;
                den += u;
            }
            None => den += gt.area(g),
        }
    }
    for p in preds {
        if !used.contains(&p) {
            den += pred.area(p);
        }
    }
    (den > 0).then(|| num as f64 / den as f64)
}

/// All (gt, pred, IoU) pairs with IoU > 1/2 among the given instances.
fn pairs(gt: &Scene, gs: &[u32], pred: &Scene, ps: &[u32]) -> Vec<(u32, u32, f64)> {
    let mut out = Vec::new();
    for &g in gs {
        for &p in ps {
            let (i, u) = inter_union(gt, g, pred, p);
            if 2 * i > u {
                out.push((g, p, i as f64 / u as f64));
            }
        }
    }
    out
}

pub struct Panoptic {
    pub per_class: BTreeMap<String, Option<f64>>,
    pub mpq: Option<f64>,
}

pub fn panoptic(gt: &Scene, pred: &Scene) -> Panoptic {
    let names: BTreeSet<String> = gt
        .instances()
        .into_iter()
        .map(|g| gt.class_of(g).to_string())
        .chain(pred.instances().into_iter().map(|p| pred.class_of(p).to_string()))
        .collect();
    let mut per_class = BTreeMap::new();
    for name in names {
        let gs: Vec<u32> = gt.instances().into_iter().filter(|&g| gt.class_of(g) == name).collect();
        let ps: Vec<u32> = pred.instances().into_iter().filter(|&p| pred.class_of(p) == name).collect();
        let m = pairs(gt, &gs, pred, &ps);
        let tp = m.len() as f64;
        let fp = ps.iter().filter(|&&p| !m.iter().any(|t| t.1 == p)).count() as f64;
        let fn_ = gs.iter().filter(|&&g| !m.iter().any(|t| t.0 == g)).count() as f64;
        let iou: f64 = m.iter().map(|t| t.2).sum();
        let d = tp + fp / 2.0 + fn_ / 2.0;
        per_class.insert(name, (d > 0.0).then(|| iou / d));
    }
    let defined: Vec<f64> = per_class.values().flatten().copied().collect();
    Panoptic {
        mpq: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        per_class,
    }
}

pub struct Detection {
    pub per_class: BTreeMap<String, Option<f64>>,
    pub novel: Option<f64>,
    pub base: Option<f64>,
}

/// Class-aware F1: a match counts for its class only when both sides agree.
pub fn detection(gt: &Scene, pred: &Scene, novel: &[&str], base: &[&str]) -> Detection {
    let (gs, ps) = (gt.instances(), pred.instances());
    let m = pairs(gt, &gs, pred, &ps);
    let f1 = |c: &str| {
        let tp = m.iter().filter(|t| gt.class_of(t.0) == c && pred.class_of(t.1) == c).count();
        let gt_c = gs.iter().filter(|&&g| gt.class_of(g) == c).count();
        let pred_c = ps.iter().filter(|&&p| pred.class_of(p) == c).count();
        let (fn_, fp) = (gt_c - tp, pred_c - tp);
        let d = 2 * tp + fp + fn_;
        (d > 0).then(|| 2.0 * tp as f64 / d as f64)
    };
    let per_class: BTreeMap<String, Option<f64>> = novel.iter().map(|c| (c.to_string(), f1(c))).collect();
    let mean = |cs: Vec<&str>| {
        let v: Vec<f64> = cs.iter().filter_map(|c| per_class[*c]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Detection {
        novel: mean(novel.to_vec()),
        base: mean(novel.iter().copied().filter(|c| base.contains(c)).collect()),
        per_class,
    }
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let i = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let t = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if t == 0 {
        1.0
    } else {
        2.0 * i as f64 / t as f64
    }
}
