//! Connected-component labelling of binary masks.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::{BinaryMask, LabelRaster};

#[derive(Debug, PartialEq, Eq, Copy, Clone)]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    Four,
    /// All eight neighbours.
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

pub(crate) fn neighbours(
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
    })
}

/// Labels components `1..=count` in raster order of their first pixel.
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> (LabelRaster, u32) {
    label_components_within(mask, conn, None)
}

/// Like [`label_components`], but two pixels only join when they also share
/// a label in `regions`.
pub fn label_components_within(
    mask: &BinaryMask,
    conn: Connectivity,
    regions: Option<&LabelRaster>,
) -> (LabelRaster, u32) {
    let (w, h) = (mask.width(), mask.height());
    let region = |x: usize, y: usize| regions.map_or(0, |r| r.get(x, y));
    let mut labels = LabelRaster::filled(w, h, 0);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels.get(x, y) != 0 {
                continue;
            }
            next += 1;
            labels.set(x, y, next);
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                for (nx, ny) in neighbours(cx, cy, w, h, conn) {
                    if mask.get(nx, ny) && labels.get(nx, ny) == 0 && region(nx, ny) == region(cx, cy) {
                        labels.set(nx, ny, next);
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Pixel lists per label, index `k` holding label `k + 1`.
pub fn pixel_lists(labels: &LabelRaster, count: u32) -> Vec<Vec<(usize, usize)>> {
    let mut out = alloc::vec![Vec::new(); count as usize];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(x, y);
            if l != 0 {
                out[l as usize - 1].push((x, y));
            }
        }
    }
    out
}

/// Whether the set pixels of `mask` form exactly one component.
pub fn is_connected(mask: &BinaryMask, conn: Connectivity) -> bool {
    label_components(mask, conn).1 == 1
}
