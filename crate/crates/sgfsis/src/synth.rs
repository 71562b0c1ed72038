//! Random ellipse "nuclei" scenes with two visually distinct classes.
//!
//! Epithelial nuclei are large, pale and speckled; lymphocytes are small,
//! round, dark and smooth. Every nucleus has a darker rim one pixel wide.
//! Overlapping ellipses are split along the curve of equal normalised
//! distance, so touching nuclei share a wall but never a pixel.

use std::collections::BTreeMap;

use sgfsis_core::labels::{registry_class_id, InstanceLabelMap};
use sgfsis_core::rng::SplitMix64;
use sgfsis_core::{LabelRaster, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Nuclei attempted per image; placements that do not fit are dropped.
    pub nuclei: usize,
    /// Probability that a nucleus is placed against an existing one.
    pub touching_rate: f64,
    /// Pixel noise standard deviation.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            nuclei: 10,
            touching_rate: 0.3,
            noise: 0.03,
        }
    }
}

#[derive(Clone, Copy)]
struct Style {
    name: &'static str,
    axes: (f64, f64),
    rgb: [f64; 3],
    texture: f64,
}

const STYLES: [Style; 2] = [
    Style {
        name: "EPI",
        axes: (4.5, 6.5),
        rgb: [0.62, 0.38, 0.66],
        texture: 0.10,
    },
    Style {
        name: "LYM",
        axes: (3.0, 4.0),
        rgb: [0.22, 0.12, 0.48],
        texture: 0.015,
    },
];

const BACKGROUND: [f64; 3] = [0.93, 0.86, 0.91];
const RIM_FACTOR: f64 = 0.6;

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    style: usize,
}

impl Ellipse {
    fn radius(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Squared normalised distance; `<= 1` is inside.
    fn dist(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    /// 3×H×W RGB in `[0, 1]`.
    pub image: Tensor<f32>,
    pub labels: InstanceLabelMap,
}

/// Class names the generator uses, in style order.
pub fn synth_classes() -> [&'static str; 2] {
    [STYLES[0].name, STYLES[1].name]
}

fn place(cfg: &SynthConfig, rng: &mut SplitMix64) -> Vec<Ellipse> {
    let mut out: Vec<Ellipse> = Vec::new();
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    for _ in 0..cfg.nuclei {
        let style = rng.below(2) as usize;
        let s = STYLES[style];
        let a = rng.uniform(s.axes.0, s.axes.1);
        let b = if style == 1 { a * rng.uniform(0.85, 1.0) } else { rng.uniform(s.axes.0, s.axes.1) * 0.75 };
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let mut e = Ellipse {
            cx: 0.0,
            cy: 0.0,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
            style,
        };
        let touch = !out.is_empty() && rng.bernoulli(cfg.touching_rate);
        let r = e.radius();
        for _ in 0..50 {
            if touch {
                let other = out[rng.below(out.len() as u64) as usize];
                let phi = rng.uniform(0.0, std::f64::consts::TAU);
                let d = 0.85 * (r + other.radius());
                e.cx = other.cx + d * phi.cos();
                e.cy = other.cy + d * phi.sin();
            } else {
                e.cx = rng.uniform(r + 1.0, w - r - 1.0);
                e.cy = rng.uniform(r + 1.0, h - r - 1.0);
            }
            let inside = e.cx >= r + 1.0 && e.cx <= w - r - 1.0 && e.cy >= r + 1.0 && e.cy <= h - r - 1.0;
            let clear = out.iter().all(|o| {
                let gap = ((e.cx - o.cx).powi(2) + (e.cy - o.cy).powi(2)).sqrt();
                let need = r + o.radius();
                if touch {
                    gap >= 0.8 * need
                } else {
                    gap >= need + 2.0
                }
            });
            if inside && clear {
                out.push(e);
                break;
            }
        }
    }
    out
}

/// Generates one scene; fully determined by `seed`.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthImage> {
    let mut rng = SplitMix64::new(seed);
    let ellipses = place(cfg, &mut rng);
    let (w, h) = (cfg.width, cfg.height);
    let ids = LabelRaster::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut best = (0u32, 1.0f64);
        for (i, e) in ellipses.iter().enumerate() {
            let d = e.dist(px, py);
            if d <= best.1 {
                best = (i as u32 + 1, d);
            }
        }
        best.0
    });

    let mut classes = BTreeMap::new();
    let mut names = BTreeMap::new();
    for (i, e) in ellipses.iter().enumerate() {
        let id = i as u32 + 1;
        if ids.data().contains(&id) {
            let name = STYLES[e.style].name;
            let class = registry_class_id(name).expect("registry name");
            classes.insert(id, class);
            names.insert(class, name.to_string());
        }
    }

    let mut pixels = vec![0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let id = ids.get(x, y);
            let (rgb, amp, rim) = if id == 0 {
                (BACKGROUND, 0.0, false)
            } else {
                let s = STYLES[ellipses[id as usize - 1].style];
                let rim = [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)].iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || ids.get(nx as usize, ny as usize) != id
                });
                (s.rgb, s.texture, rim)
            };
            let grain = amp * rng.normal();
            for c in 0..3 {
                let mut v = rgb[c] + grain + cfg.noise * rng.normal();
                if rim {
                    v *= RIM_FACTOR;
                }
                pixels[(c * h + y) * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let labels = InstanceLabelMap::new(ids, classes, names)?;
    Ok(SynthImage {
        image: Tensor::new(&[3, h, w], pixels)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, 11).unwrap();
        assert_eq!(a, generate(&cfg, 11).unwrap());
        assert_ne!(a.image, generate(&cfg, 12).unwrap().image);
        assert_eq!(a.image.dims(), &[3, 64, 64]);
        assert!(a.labels.instance_ids().len() >= 5);
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn touching_rate_controls_contacts() {
        let touching = |rate: f64| {
            let cfg = SynthConfig {
                touching_rate: rate,
                ..SynthConfig::default()
            };
            let mut contacts = 0;
            for seed in 0..20 {
                let ids = generate(&cfg, seed).unwrap().labels.ids().clone();
                for y in 0..ids.height() {
                    for x in 1..ids.width() {
                        let (l, r) = (ids.get(x - 1, y), ids.get(x, y));
                        contacts += usize::from(l != 0 && r != 0 && l != r);
                    }
                }
            }
            contacts
        };
        assert_eq!(touching(0.0), 0);
        assert!(touching(0.6) > touching(0.3));
    }
}
