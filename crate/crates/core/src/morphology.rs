//! Binary morphology with discrete Euclidean disks.

use alloc::vec::Vec;

use crate::BinaryMask;

/// Offsets `(dx, dy)` with `dx² + dy² <= r²`, in row-major order.
pub fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn offset(x: usize, y: usize, dx: isize, dy: isize, w: usize, h: usize) -> Option<(usize, usize)> {
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
}

/// Pixels within `radius` of a set pixel.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk(radius);
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &se {
                if let Some((nx, ny)) = offset(x, y, dx, dy, w, h) {
                    out.set(nx, ny, true);
                }
            }
        }
    }
    out
}

/// Set pixels whose whole disk neighbourhood is set.
///
/// Neighbours outside the image are ignored, so objects cut by the image
/// border are not eroded along it.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk(radius);
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && se.iter().all(|&(dx, dy)| match offset(x, y, dx, dy, w, h) {
                Some((nx, ny)) => mask.get(nx, ny),
                None => true,
            })
    })
}
