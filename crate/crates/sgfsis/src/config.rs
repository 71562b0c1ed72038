//! Run configuration: line-oriented `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. Paths may contain any character except a leading or
//! trailing space; an empty `features` value selects the built-in encoder.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sgfsis_core::guidance::{Ablation, FinetuneConfig, GcmVariant, SupportSource};
use sgfsis_core::labels::{ConversionRadii, Magnification};
use sgfsis_core::metrics::{Averaging, EvalOptions};
use sgfsis_core::pipeline::PipelineConfig;
use sgfsis_core::watershed::{Relief, Thresholds, WatershedConfig};

use crate::error::{Error, Result};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "SGFSIS_CONFIG";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Root of `<branch>/<id>.sgt` feature maps; `None` runs the toy encoder
    /// on `images/<id>.sgt`.
    pub features: Option<PathBuf>,
    pub output: PathBuf,
    /// When set, overrides both radii.
    pub magnification: Option<Magnification>,
    pub boundary_radius: usize,
    pub centroid_radius: usize,
    pub t_f: f64,
    pub t_b: f64,
    pub t_c: f64,
    pub extra_erosion: usize,
    pub relief: Relief,
    pub sgm_f: bool,
    pub sgm_b: bool,
    pub sgm_o: bool,
    pub no_support_term: bool,
    pub support_source: SupportSource,
    pub gcm: GcmVariant,
    pub no_gamma_clamp: bool,
    pub kernel: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub dice_smooth: f64,
    pub base_lr: f64,
    pub base_steps: usize,
    pub averaging: Averaging,
    pub class_agnostic_pq: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let base = sgfsis_core::guidance::BaseTrainConfig::default();
        Self {
            dataset: PathBuf::from("."),
            features: None,
            output: PathBuf::from("out"),
            magnification: None,
            boundary_radius: p.radii.boundary,
            centroid_radius: p.radii.centroid,
            t_f: p.watershed.thresholds.foreground,
            t_b: p.watershed.thresholds.boundary,
            t_c: p.watershed.thresholds.centroid,
            extra_erosion: p.watershed.extra_erosion,
            relief: p.watershed.relief,
            sgm_f: p.ablation.sgm[0],
            sgm_b: p.ablation.sgm[1],
            sgm_o: p.ablation.sgm[2],
            no_support_term: p.ablation.no_support_term,
            support_source: p.ablation.support_source,
            gcm: p.ablation.gcm,
            no_gamma_clamp: p.ablation.no_gamma_clamp,
            kernel: p.kernel,
            lr: p.finetune.lr,
            steps: p.finetune.steps,
            seed: p.param_seed,
            dice_smooth: p.finetune.dice_smooth,
            base_lr: base.lr,
            base_steps: base.steps,
            averaging: Averaging::default(),
            class_agnostic_pq: false,
        }
    }
}

/// Every accepted key, in serialisation order.
pub const KEYS: [&str; 27] = [
    "dataset",
    "features",
    "output",
    "magnification",
    "boundary_radius",
    "centroid_radius",
    "t_f",
    "t_b",
    "t_c",
    "extra_erosion",
    "relief",
    "sgm_f",
    "sgm_b",
    "sgm_o",
    "no_support_term",
    "support_source",
    "gcm",
    "no_gamma_clamp",
    "kernel",
    "lr",
    "steps",
    "seed",
    "dice_smooth",
    "base_lr",
    "base_steps",
    "averaging",
    "class_agnostic_pq",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| format!("{key}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got {v:?}")),
    }
}

pub fn relief_name(r: Relief) -> &'static str {
    match r {
        Relief::Probability => "probability",
        Relief::Distance => "distance",
    }
}

pub fn source_name(s: SupportSource) -> &'static str {
    match s {
        SupportSource::Support => "support",
        SupportSource::Query => "query",
    }
}

pub fn averaging_name(a: Averaging) -> &'static str {
    match a {
        Averaging::Macro => "macro",
        Averaging::Micro => "micro",
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let bad = |what: &str| format!("{key}: unknown {what} {v:?}");
        match key {
            "dataset" => self.dataset = PathBuf::from(v),
            "features" => self.features = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "magnification" => {
                self.magnification = match v {
                    "" | "none" => None,
                    _ => Some(Magnification::parse(v).ok_or_else(|| bad("preset"))?),
                }
            }
            "boundary_radius" => self.boundary_radius = parse_num(key, v)?,
            "centroid_radius" => self.centroid_radius = parse_num(key, v)?,
            "t_f" => self.t_f = parse_num(key, v)?,
            "t_b" => self.t_b = parse_num(key, v)?,
            "t_c" => self.t_c = parse_num(key, v)?,
            "extra_erosion" => self.extra_erosion = parse_num(key, v)?,
            "relief" => {
                self.relief = match v {
                    "probability" => Relief::Probability,
                    "distance" => Relief::Distance,
                    _ => return Err(bad("relief")),
                }
            }
            "sgm_f" => self.sgm_f = parse_bool(key, v)?,
            "sgm_b" => self.sgm_b = parse_bool(key, v)?,
            "sgm_o" => self.sgm_o = parse_bool(key, v)?,
            "no_support_term" => self.no_support_term = parse_bool(key, v)?,
            "support_source" => {
                self.support_source = match v {
                    "support" => SupportSource::Support,
                    "query" => SupportSource::Query,
                    _ => return Err(bad("source")),
                }
            }
            "gcm" => self.gcm = GcmVariant::parse(v).ok_or_else(|| bad("variant"))?,
            "no_gamma_clamp" => self.no_gamma_clamp = parse_bool(key, v)?,
            "kernel" => self.kernel = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "dice_smooth" => self.dice_smooth = parse_num(key, v)?,
            "base_lr" => self.base_lr = parse_num(key, v)?,
            "base_steps" => self.base_steps = parse_num(key, v)?,
            "averaging" => {
                self.averaging = match v {
                    "macro" => Averaging::Macro,
                    "micro" => Averaging::Micro,
                    _ => return Err(bad("averaging")),
                }
            }
            "class_agnostic_pq" => self.class_agnostic_pq = parse_bool(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Path| p.display().to_string();
        Some(match key {
            "dataset" => path(&self.dataset),
            "features" => self.features.as_deref().map(path).unwrap_or_default(),
            "output" => path(&self.output),
            "magnification" => self.magnification.map_or("none", |m| m.name()).to_string(),
            "boundary_radius" => self.boundary_radius.to_string(),
            "centroid_radius" => self.centroid_radius.to_string(),
            "t_f" => self.t_f.to_string(),
            "t_b" => self.t_b.to_string(),
            "t_c" => self.t_c.to_string(),
            "extra_erosion" => self.extra_erosion.to_string(),
            "relief" => relief_name(self.relief).to_string(),
            "sgm_f" => self.sgm_f.to_string(),
            "sgm_b" => self.sgm_b.to_string(),
            "sgm_o" => self.sgm_o.to_string(),
            "no_support_term" => self.no_support_term.to_string(),
            "support_source" => source_name(self.support_source).to_string(),
            "gcm" => self.gcm.name().to_string(),
            "no_gamma_clamp" => self.no_gamma_clamp.to_string(),
            "kernel" => self.kernel.to_string(),
            "lr" => self.lr.to_string(),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "dice_smooth" => self.dice_smooth.to_string(),
            "base_lr" => self.base_lr.to_string(),
            "base_steps" => self.base_steps.to_string(),
            "averaging" => averaging_name(self.averaging).to_string(),
            "class_agnostic_pq" => self.class_agnostic_pq.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (k, t) in [("t_f", self.t_f), ("t_b", self.t_b), ("t_c", self.t_c)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(format!("{k} = {t} is outside (0, 1)"));
            }
        }
        if self.kernel != 1 && self.kernel != 3 {
            return Err(format!("kernel = {} (expected 1 or 3)", self.kernel));
        }
        for (k, v) in [("lr", self.lr), ("base_lr", self.base_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{k} = {v} must be finite and non-negative"));
            }
        }
        if !(self.dice_smooth.is_finite() && self.dice_smooth >= 0.0) {
            return Err(format!("dice_smooth = {} must be finite and non-negative", self.dice_smooth));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(format!("line {}: {k} set twice", n + 1));
            }
            cfg.set(k, v.trim()).map_err(|e| format!("line {}: {e}", n + 1))?;
            seen.push(k);
        }
        if cfg.magnification.is_some() && seen.iter().any(|k| k.ends_with("_radius")) {
            return Err("magnification and explicit radii are mutually exclusive".into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key whose value is in effect, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let skip = match k {
                "magnification" => self.magnification.is_none(),
                "boundary_radius" | "centroid_radius" => self.magnification.is_some(),
                _ => false,
            };
            if !skip {
                let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::format(path, m))
    }

    pub fn radii(&self) -> ConversionRadii {
        self.magnification.map_or(
            ConversionRadii {
                boundary: self.boundary_radius,
                centroid: self.centroid_radius,
            },
            Magnification::radii,
        )
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            sgm: [self.sgm_f, self.sgm_b, self.sgm_o],
            no_support_term: self.no_support_term,
            support_source: self.support_source,
            gcm: self.gcm,
            no_gamma_clamp: self.no_gamma_clamp,
        }
    }

    pub fn watershed(&self) -> WatershedConfig {
        WatershedConfig {
            thresholds: Thresholds {
                foreground: self.t_f,
                boundary: self.t_b,
                centroid: self.t_c,
            },
            extra_erosion: self.extra_erosion,
            relief: self.relief,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            radii: self.radii(),
            watershed: self.watershed(),
            ablation: self.ablation(),
            finetune: FinetuneConfig {
                steps: self.steps,
                lr: self.lr,
                dice_smooth: self.dice_smooth,
            },
            kernel: self.kernel,
            param_seed: self.seed,
        }
    }

    pub fn base_train(&self) -> sgfsis_core::guidance::BaseTrainConfig {
        sgfsis_core::guidance::BaseTrainConfig {
            steps: self.base_steps,
            lr: self.base_lr,
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            class_agnostic_pq: self.class_agnostic_pq,
        }
    }
}
