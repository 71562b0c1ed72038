//! Command-line front end.
//!
//! Settings come from, in increasing precedence: built-in defaults, the
//! config file (`--config` or `SGFSIS_CONFIG`), `--set key=value`
//! overrides and the dedicated flags. Exit codes: 0 success, 2 bad input
//! (the offending path goes to stderr), 3 failed check.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgfsis_core::episodes::sample_episode;
use sgfsis_core::gradcheck::{self, GradcheckConfig};
use sgfsis_core::guidance::train_base_prototypes;
use sgfsis_core::labels::{convert_labels, CLASS_REGISTRY};
use sgfsis_core::metrics::{aggregate, image_counts, ClassSets};
use sgfsis_core::pipeline::{fit, FewShotModel};
use sgfsis_core::watershed::segment;
use sgfsis_core::{LabelRaster, Tensor};

use crate::config::{RunConfig, CONFIG_ENV};
use crate::dataset::Dataset;
use crate::error::Error;
use crate::formats::{class_raster, format_episode, labels_from_rasters, sidecar_rows};
use crate::model::{load_base, load_model, save_base, save_model};
use crate::report;
use crate::sgt::{load_raster, load_tensor, save_raster, save_tensor, Sgt};
use crate::synth::{generate, SynthConfig};

/// Files written per query by `infer`, in order.
pub const INFER_OUTPUTS: [&str; 7] = [
    "classes.sgt",
    "foreground.sgt",
    "boundary.sgt",
    "centroid.sgt",
    "markers.sgt",
    "instances.sgt",
    "labels.sgt",
];

#[derive(Debug, Parser)]
#[command(
    name = "sgfsis",
    version,
    about = "Few-shot nucleus instance segmentation with structural guidance",
    after_help = "Ablation flags map onto the head variants: --no-sgm-f/-b/-o replace the guided \
                  foreground/boundary/centroid head by a plain convolution; --no-support-term \
                  drops the support-feature term of the guided heads; --gcm var1 uses a plain \
                  convolutional classifier, --gcm var2 skips base-prototype registration; \
                  --no-gamma-clamp uses the unclamped registration weight."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Dataset root (`images/`, `labels/`).
    #[arg(long, global = true, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Feature root (`<branch>/<id>.sgt`); without it the toy encoder runs.
    #[arg(long, global = true, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Seed for synthetic data, episodes and head initialisation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fine-tuning steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Fine-tuning learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Label conversion radii preset (boundary/centroid 3/0 or 5/3).
    #[arg(long, global = true, value_parser = ["mag20", "mag40"])]
    pub magnification: Option<String>,
    /// Ablation: foreground head without structural guidance.
    #[arg(long, global = true)]
    pub no_sgm_f: bool,
    /// Ablation: boundary head without structural guidance.
    #[arg(long, global = true)]
    pub no_sgm_b: bool,
    /// Ablation: centroid head without structural guidance.
    #[arg(long, global = true)]
    pub no_sgm_o: bool,
    /// Ablation: guided heads without the support-feature term.
    #[arg(long, global = true)]
    pub no_support_term: bool,
    /// Classification head: full, var1 (plain convolution) or var2 (no
    /// base-prototype registration).
    #[arg(long, global = true, value_parser = ["full", "var1", "var2"])]
    pub gcm: Option<String>,
    /// Ablation: registration weight not clamped to [0, 1].
    #[arg(long, global = true)]
    pub no_gamma_clamp: bool,
    /// Features fed to the support term: the query's own (default) or the
    /// support mean.
    #[arg(long, global = true, value_parser = ["query", "support"])]
    pub support_source: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class ellipse dataset into the dataset root.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value = "img")]
        prefix: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        nuclei: usize,
        #[arg(long, default_value_t = 0.3)]
        touching_rate: f64,
    },
    /// Run the toy encoder and store its feature maps under the feature root.
    Encode {
        /// Image ids; all labelled ids when omitted.
        ids: Vec<String>,
    },
    /// Convert instance labels to class, foreground, boundary and centroid
    /// masks under `<output>/<id>/`.
    Convert { ids: Vec<String> },
    /// Learn base-class prototypes from labelled images.
    TrainBase {
        ids: Vec<String>,
        /// Directory for the prototype manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute novel and structural prototypes from a support set, without
    /// fine-tuning.
    Prototypes {
        #[arg(long, value_delimiter = ',', required = true)]
        support: Vec<String>,
        /// Base-prototype directory.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the guidance heads on a support set and save the model.
    Finetune {
        #[arg(long, value_delimiter = ',', required = true)]
        support: Vec<String>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment query images; writes seven files per query under
    /// `<output>/<id>/`.
    Infer {
        /// Support ids to fit on (alternative to --model).
        #[arg(long, value_delimiter = ',', conflicts_with = "model")]
        support: Vec<String>,
        /// Saved model directory.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        query: Vec<String>,
    },
    /// Marker-controlled watershed on probability maps.
    Watershed {
        #[arg(long)]
        fg: PathBuf,
        #[arg(long)]
        bd: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        /// Class probabilities (N×H×W) for class fusion.
        #[arg(long, requires = "classes")]
        cls: Option<PathBuf>,
        /// Class names of the `--cls` channels.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// Sample a support/query episode.
    Episode {
        ids: Vec<String>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Episode file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against the dataset labels.
    Eval {
        /// `infer` output directory, or a dataset root with `labels/`.
        #[arg(long)]
        pred: PathBuf,
        ids: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        novel: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        base: Vec<String>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        /// Defaults to 1e-5 (f64) or 1e-3 (f32).
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input; exit 2.
    Input(Error),
    /// A check ran and failed; exit 3.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

impl From<sgfsis_core::Error> for Failure {
    fn from(e: sgfsis_core::Error) -> Self {
        Failure::Input(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Input(Error::Config(msg.into()))
}

/// Resolves the effective configuration.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: &str| cfg.set(k, v).map_err(Error::Config);
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        set(k.trim(), v.trim())?;
    }
    let path = |p: &Path| p.display().to_string();
    if let Some(p) = &g.dataset {
        set("dataset", &path(p))?;
    }
    if let Some(p) = &g.features {
        set("features", &path(p))?;
    }
    if let Some(p) = &g.output {
        set("output", &path(p))?;
    }
    if let Some(v) = g.seed {
        set("seed", &v.to_string())?;
    }
    if let Some(v) = g.steps {
        set("steps", &v.to_string())?;
    }
    if let Some(v) = g.lr {
        set("lr", &v.to_string())?;
    }
    if let Some(v) = &g.magnification {
        set("magnification", v)?;
    }
    for (flag, key) in [
        (g.no_sgm_f, "sgm_f"),
        (g.no_sgm_b, "sgm_b"),
        (g.no_sgm_o, "sgm_o"),
    ] {
        if flag {
            set(key, "false")?;
        }
    }
    if g.no_support_term {
        set("no_support_term", "true")?;
    }
    if g.no_gamma_clamp {
        set("no_gamma_clamp", "true")?;
    }
    if let Some(v) = &g.gcm {
        set("gcm", v)?;
    }
    if let Some(v) = &g.support_source {
        set("support_source", v)?;
    }
    cfg.validate().map_err(Error::Config)?;
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command and
/// returns its exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

pub fn execute(cli: &Cli) -> Outcome {
    let cfg = resolve_config(&cli.global)?;
    let ds = Dataset::new(&cfg.dataset, cfg.features.clone());
    match &cli.command {
        Command::Synth {
            count,
            prefix,
            size,
            nuclei,
            touching_rate,
        } => cmd_synth(&cfg, &ds, *count, prefix, *size, *nuclei, *touching_rate),
        Command::Encode { ids } => cmd_encode(&cfg, &ds, ids),
        Command::Convert { ids } => cmd_convert(&cfg, &ds, ids),
        Command::TrainBase { ids, out } => cmd_train_base(&cfg, &ds, ids, out),
        Command::Prototypes { support, base, out } => {
            let mut cfg = cfg.clone();
            cfg.steps = 0;
            let (model, _) = fit_support(&cfg, &ds, support, base.as_deref())?;
            save_model(out, &model)?;
            Ok(())
        }
        Command::Finetune { support, base, out } => cmd_finetune(&cfg, &ds, support, base.as_deref(), out),
        Command::Infer {
            support,
            model,
            base,
            query,
        } => cmd_infer(&cfg, &ds, support, model.as_deref(), base.as_deref(), query),
        Command::Watershed {
            fg,
            bd,
            ct,
            cls,
            classes,
        } => cmd_watershed(&cfg, fg, bd, ct, cls.as_deref(), classes),
        Command::Episode { ids, batch, out } => cmd_episode(&cfg, &ds, ids, *batch, out.as_deref()),
        Command::Eval {
            pred,
            ids,
            novel,
            base,
            format,
            out,
        } => cmd_eval(&cfg, &ds, pred, ids, novel, base, *format, out.as_deref()),
        Command::Gradcheck {
            trials,
            precision,
            tolerance,
        } => cmd_gradcheck(&cfg, *trials, *precision, *tolerance),
    }
}

fn ids_or_all(ds: &Dataset, ids: &[String]) -> Result<Vec<String>, Error> {
    if ids.is_empty() {
        ds.labelled_ids()
    } else {
        Ok(ids.to_vec())
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Seed of synthetic scene `index` under run seed `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

fn cmd_synth(
    cfg: &RunConfig,
    ds: &Dataset,
    count: usize,
    prefix: &str,
    size: usize,
    nuclei: usize,
    touching_rate: f64,
) -> Outcome {
    if !(0.0..=1.0).contains(&touching_rate) {
        return Err(config_error(format!("touching rate {touching_rate} is outside [0, 1]")));
    }
    if size < 16 || !size.is_multiple_of(4) {
        return Err(config_error(format!("size {size} must be a multiple of 4, at least 16")));
    }
    let sc = SynthConfig {
        width: size,
        height: size,
        nuclei,
        touching_rate,
        ..SynthConfig::default()
    };
    for i in 0..count {
        let scene = generate(&sc, scene_seed(cfg.seed, i))?;
        ds.write_scene(&format!("{prefix}{i:04}"), &scene)?;
    }
    Ok(())
}

fn cmd_encode(cfg: &RunConfig, ds: &Dataset, ids: &[String]) -> Outcome {
    let root = cfg
        .features
        .as_deref()
        .ok_or_else(|| config_error("encode needs a feature root (--features)"))?;
    // Always encode from the images, even though a feature root is set.
    let images = Dataset::new(&ds.root, None);
    for id in ids_or_all(ds, ids)? {
        Dataset::write_features(root, &id, &images.branch_features(&id)?)?;
    }
    Ok(())
}

fn cmd_convert(cfg: &RunConfig, ds: &Dataset, ids: &[String]) -> Outcome {
    for id in ids_or_all(ds, ids)? {
        let labels = ds.labels(&id)?;
        let c = crate::arrays::convert(&Sgt::from(labels.ids()), &sidecar_rows(&labels), cfg.radii())?;
        let dir = cfg.output.join(&id);
        c.foreground.save(&dir.join("foreground.sgt"))?;
        c.boundary.save(&dir.join("boundary.sgt"))?;
        c.centroid.save(&dir.join("centroid.sgt"))?;
        c.classes.save(&dir.join("classes.sgt"))?;
        let table: String = std::iter::once("channel,class_id,class_name\n".to_string())
            .chain(c.class_table.iter().enumerate().map(|(k, (id, n))| format!("{k},{id},{n}\n")))
            .collect();
        write_text(Some(&dir.join("classes.csv")), &table)?;
    }
    Ok(())
}

fn cmd_train_base(cfg: &RunConfig, ds: &Dataset, ids: &[String], out: &Path) -> Outcome {
    let ids = ids_or_all(ds, ids)?;
    let mut feats = Vec::with_capacity(ids.len());
    let mut channels = Vec::with_capacity(ids.len());
    for id in &ids {
        feats.push(ds.branch_features(id)?.classification);
        channels.push(convert_labels(&ds.labels(id)?, cfg.radii())?);
    }
    let classes = sgfsis_core::guidance::support_classes(&channels);
    if classes.is_empty() {
        return Err(config_error("no labelled instances to learn base prototypes from"));
    }
    let items: Vec<_> = feats.iter().zip(&channels).collect();
    let report = train_base_prototypes(&items, &classes, &cfg.base_train())?;
    save_base(out, &report.prototypes)?;
    println!("initial_loss = {}\nfinal_loss = {}", report.initial_loss, report.final_loss);
    Ok(())
}

fn fit_support(
    cfg: &RunConfig,
    ds: &Dataset,
    support: &[String],
    base: Option<&Path>,
) -> Outcome<(FewShotModel<f32>, sgfsis_core::guidance::FinetuneReport)> {
    let mut feats = Vec::with_capacity(support.len());
    let mut labels = Vec::with_capacity(support.len());
    for id in support {
        feats.push(ds.branch_features(id)?);
        labels.push(ds.labels(id)?);
    }
    let base = match base {
        Some(dir) => load_base(dir)?,
        None => Vec::new(),
    };
    let items: Vec<_> = feats.iter().zip(&labels).collect();
    Ok(fit(&items, base, &cfg.pipeline())?)
}

fn cmd_finetune(cfg: &RunConfig, ds: &Dataset, support: &[String], base: Option<&Path>, out: &Path) -> Outcome {
    let (model, report) = fit_support(cfg, ds, support, base)?;
    save_model(out, &model)?;
    let mut text = format!(
        "initial_loss = {}\nfinal_loss = {}\n",
        report.initial_loss, report.final_loss
    );
    for (t, l) in report.step_losses.iter().enumerate() {
        text.push_str(&format!("step.{t} = {l}\n"));
    }
    write_text(Some(&out.join("finetune.txt")), &text)?;
    print!("{}", text.lines().take(2).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

fn cmd_infer(
    cfg: &RunConfig,
    ds: &Dataset,
    support: &[String],
    model: Option<&Path>,
    base: Option<&Path>,
    query: &[String],
) -> Outcome {
    let model = match model {
        Some(dir) => load_model(dir, cfg.ablation())?,
        None if support.is_empty() => return Err(config_error("infer needs --support or --model")),
        None => fit_support(cfg, ds, support, base)?.0,
    };
    let ws = cfg.watershed();
    for id in query {
        let inf = model.infer(&ds.branch_features(id)?, &ws)?;
        let dir = cfg.output.join(id);
        let [fg, bd, ct] = &inf.outputs.masks;
        save_tensor(&dir.join(INFER_OUTPUTS[0]), &inf.outputs.classes)?;
        save_tensor(&dir.join(INFER_OUTPUTS[1]), fg)?;
        save_tensor(&dir.join(INFER_OUTPUTS[2]), bd)?;
        save_tensor(&dir.join(INFER_OUTPUTS[3]), ct)?;
        save_raster(&dir.join(INFER_OUTPUTS[4]), &inf.segmentation.markers.labels)?;
        save_raster(&dir.join(INFER_OUTPUTS[5]), &inf.segmentation.instances.labels)?;
        save_raster(&dir.join(INFER_OUTPUTS[6]), &class_raster(&inf.segmentation.labels))?;
    }
    Ok(())
}

/// An H×W (or 1×H×W) f32 map; u8 masks are read as 0/1.
fn load_plane(path: &Path) -> Outcome<Tensor<f32>> {
    let name = path.display().to_string();
    Ok(crate::arrays::plane(&name, &Sgt::load(path)?)?)
}

fn cmd_watershed(cfg: &RunConfig, fg: &Path, bd: &Path, ct: &Path, cls: Option<&Path>, classes: &[String]) -> Outcome {
    let (fg, bd, ct) = (load_plane(fg)?, load_plane(bd)?, load_plane(ct)?);
    let (h, w) = fg.hw()?;
    let (cls, ids, names) = match cls {
        Some(p) => {
            let t = load_tensor(p)?;
            if t.rank() != 3 || t.dims()[0] != classes.len() {
                return Err(Error::format(p, format!("{} channels for {} class names", t.dims()[0], classes.len())).into());
            }
            let mut ids = Vec::new();
            let mut names = std::collections::BTreeMap::new();
            for c in classes {
                let id = sgfsis_core::labels::registry_class_id(c)
                    .ok_or_else(|| config_error(format!("unknown class name {c:?}")))?;
                ids.push(id);
                names.insert(id, CLASS_REGISTRY[id as usize - 1].to_string());
            }
            (t, ids, names)
        }
        // Class-agnostic: one channel, every instance gets the first
        // registry class.
        None => (
            Tensor::full(&[1, h, w], 1.0f32),
            vec![1],
            [(1, CLASS_REGISTRY[0].to_string())].into(),
        ),
    };
    let seg = segment(&fg, &bd, &ct, &cls, &ids, &names, &cfg.watershed())?;
    save_raster(&cfg.output.join("markers.sgt"), &seg.markers.labels)?;
    save_raster(&cfg.output.join("instances.sgt"), &seg.instances.labels)?;
    if !classes.is_empty() {
        save_raster(&cfg.output.join("labels.sgt"), &class_raster(&seg.labels))?;
    }
    Ok(())
}

fn cmd_episode(cfg: &RunConfig, ds: &Dataset, ids: &[String], batch: usize, out: Option<&Path>) -> Outcome {
    let pool = ds.pool(&ids_or_all(ds, ids)?)?;
    let ep = sample_episode(&pool, batch, cfg.seed)?;
    write_text(out, &format_episode(&ep))
}

fn prediction(pred: &Path, id: &str) -> Outcome<sgfsis_core::labels::InstanceLabelMap> {
    if pred.join("labels").is_dir() {
        return Ok(Dataset::new(pred, None).labels(id)?);
    }
    let dir = pred.join(id);
    let instances: LabelRaster = load_raster(&dir.join("instances.sgt"))?;
    let classes = load_raster(&dir.join("labels.sgt"))?;
    labels_from_rasters(instances, &classes).map_err(|m| Error::format(dir.join("labels.sgt"), m).into())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &RunConfig,
    ds: &Dataset,
    pred: &Path,
    ids: &[String],
    novel: &[String],
    base: &[String],
    format: ReportFormat,
    out: Option<&Path>,
) -> Outcome {
    let ids = ids_or_all(ds, ids)?;
    let mut counts = Vec::with_capacity(ids.len());
    for id in &ids {
        counts.push(image_counts(&ds.labels(id)?, &prediction(pred, id)?, cfg.eval_options())?);
    }
    let classes = ClassSets {
        novel: novel.to_vec(),
        base: base.to_vec(),
    };
    let r = aggregate(&counts, &classes, cfg.averaging);
    let text = match format {
        ReportFormat::Text => report::to_text(&r),
        ReportFormat::Csv => report::to_csv(&r),
        ReportFormat::Json => report::to_json_lines(&r),
    };
    write_text(out, &text)
}

fn cmd_gradcheck(cfg: &RunConfig, trials: usize, precision: Precision, tolerance: Option<f64>) -> Outcome {
    let gc = GradcheckConfig {
        trials,
        seed: GradcheckConfig::default().seed ^ cfg.seed,
        ..GradcheckConfig::default()
    };
    let (report, tol) = match precision {
        Precision::F64 => (gradcheck::run::<f64>(&gc)?, tolerance.unwrap_or(1e-5)),
        Precision::F32 => (gradcheck::run::<f32>(&gc)?, tolerance.unwrap_or(1e-3)),
    };
    println!(
        "trials = {}\nchecked = {}\nmax_relative_error = {:e}\nworst = {}\ntolerance = {tol:e}",
        report.trials, report.checked, report.max_relative_error, report.worst
    );
    if report.passes(tol) {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:e} at {} exceeds {tol:e}",
            report.max_relative_error, report.worst
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sgfsis_core::guidance::{GcmVariant, SupportSource};

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "sgfsis",
            "--set",
            "t_f=0.3",
            "--set",
            "gcm=var2",
            "--no-sgm-b",
            "--gcm",
            "var1",
            "gradcheck",
        ])
        .unwrap();
        let cfg = resolve_config(&cli.global).unwrap();
        assert_eq!(cfg.t_f, 0.3);
        assert!(!cfg.sgm_b && cfg.sgm_f);
        assert_eq!(cfg.gcm, GcmVariant::PlainConv);
        assert_eq!(cfg.support_source, SupportSource::Query);
    }

    #[test]
    fn bad_override_is_rejected() {
        let cli = Cli::try_parse_from(["sgfsis", "--set", "t_f=2", "gradcheck"]).unwrap();
        assert!(resolve_config(&cli.global).is_err());
        let cli = Cli::try_parse_from(["sgfsis", "--set", "nonsense", "gradcheck"]).unwrap();
        assert!(resolve_config(&cli.global).is_err());
    }

    #[test]
    fn help_lists_every_ablation_flag() {
        let mut help = Vec::new();
        <Cli as clap::CommandFactory>::command().write_long_help(&mut help).unwrap();
        let help = String::from_utf8(help).unwrap();
        for flag in [
            "--no-sgm-f",
            "--no-sgm-b",
            "--no-sgm-o",
            "--no-support-term",
            "--gcm",
            "--no-gamma-clamp",
            "--support-source",
            "--magnification",
        ] {
            assert!(help.contains(flag), "{flag}");
        }
    }
}
