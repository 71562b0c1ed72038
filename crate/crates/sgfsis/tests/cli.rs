use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgfsis::cli::INFER_OUTPUTS;
use sgfsis::formats::parse_episode;
use sgfsis::sgt::{load_raster, load_tensor, Sgt};

fn sgfsis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgfsis"))
        .args(args)
        .env_remove("SGFSIS_CONFIG")
        .output()
        .expect("spawn sgfsis")
}

fn ok(args: &[&str]) -> String {
    let out = sgfsis(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic dataset: 6 images of 32×32.
fn dataset(dir: &Path) -> PathBuf {
    let root = dir.join("data");
    ok(&["synth", "--dataset", s(&root), "--count", "6", "--size", "32", "--nuclei", "4", "--seed", "3"]);
    root
}

/// Relative path → file bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn infer_writes_seven_files_per_query_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let run = |out: &Path| {
        ok(&[
            "infer",
            "--dataset",
            s(&root),
            "--output",
            s(out),
            "--steps",
            "5",
            "--support",
            "img0000,img0001",
            "--query",
            "img0002,img0003",
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    for q in ["img0002", "img0003"] {
        let files: Vec<_> = fs::read_dir(a.join(q)).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(files.len(), 7);
        for f in INFER_OUTPUTS {
            assert!(a.join(q).join(f).is_file(), "{q}/{f}");
        }
        let inst = load_raster(&a.join(q).join("instances.sgt")).unwrap();
        let markers = load_raster(&a.join(q).join("markers.sgt")).unwrap();
        assert_eq!(inst.data().iter().max(), markers.data().iter().max());
        assert_eq!(load_tensor(&a.join(q).join("classes.sgt")).unwrap().dims()[1..], [32, 32]);
    }
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn infer_from_saved_model_matches_direct_fit() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let model = dir.path().join("model");
    let common = ["--dataset", s(&root), "--steps", "4"];
    let base = dir.path().join("base");
    ok(&[&["train-base", "img0004", "img0005", "--out", s(&base)][..], &common, &["--set", "base_steps=5"]].concat());
    let stdout = ok(&[&["finetune", "--support", "img0000", "--base", s(&base), "--out", s(&model)][..], &common].concat());
    assert!(stdout.starts_with("initial_loss = "));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&[&["infer", "--model", s(&model), "--query", "img0001", "--output", s(&a)][..], &common].concat());
    ok(&[
        &["infer", "--support", "img0000", "--base", s(&base), "--query", "img0001", "--output", s(&b)][..],
        &common,
    ]
    .concat());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn missing_feature_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let feats = dir.path().join("features");
    ok(&["encode", "--dataset", s(&root), "--features", s(&feats)]);
    let missing = feats.join("ct").join("img0002.sgt");
    fs::remove_file(&missing).unwrap();
    let out = sgfsis(&[
        "infer",
        "--dataset",
        s(&root),
        "--features",
        s(&feats),
        "--output",
        s(&dir.path().join("o")),
        "--steps",
        "1",
        "--support",
        "img0000",
        "--query",
        "img0002",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let report = ok(&["eval", "--dataset", s(&root), "--pred", s(&root), "--novel", "EPI,LYM"]);
    let kv: BTreeMap<&str, &str> = report.lines().filter_map(|l| l.split_once(" = ")).collect();
    assert_eq!(kv["aji"], "1");
    assert_eq!(kv["mpq"], "1");
    assert_eq!(kv["f1_novel"], "1");
    assert_eq!(kv["f1_base"], "undefined");

    let json = ok(&["eval", "--dataset", s(&root), "--pred", s(&root), "--format", "json"]);
    assert!(json.lines().next().unwrap().contains(r#""metric":"aji""#));
}

#[test]
fn eval_reads_infer_output() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let out = dir.path().join("pred");
    ok(&["infer", "--dataset", s(&root), "--output", s(&out), "--steps", "3", "--support", "img0000", "--query", "img0001"]);
    let csv = ok(&["eval", "--dataset", s(&root), "--pred", s(&out), "img0001", "--format", "csv"]);
    assert!(csv.starts_with("metric,class,value\naji,,"));
}

#[test]
fn episode_with_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for f in [&a, &b] {
        ok(&["episode", "--dataset", s(&root), "--batch", "4", "--seed", "7", "--out", s(f)]);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let ep = parse_episode(&text).unwrap();
    assert_eq!((ep.support.len(), ep.query.len(), ep.seed), (2, 2, 7));
    let out = sgfsis(&["episode", "--dataset", s(&root), "--batch", "8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_default_passes() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("trials = 100"));
}

#[test]
fn gradcheck_failure_exits_3() {
    let out = sgfsis(&["gradcheck", "--trials", "2", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn convert_then_watershed_recovers_instances() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let conv = dir.path().join("conv");
    ok(&["convert", "--dataset", s(&root), "--output", s(&conv), "img0000"]);
    let d = conv.join("img0000");
    let classes = fs::read_to_string(d.join("classes.csv")).unwrap();
    assert!(classes.starts_with("channel,class_id,class_name\n"));
    let ws = dir.path().join("ws");
    ok(&[
        "watershed",
        "--output",
        s(&ws),
        "--fg",
        s(&d.join("foreground.sgt")),
        "--bd",
        s(&d.join("boundary.sgt")),
        "--ct",
        s(&d.join("centroid.sgt")),
    ]);
    let gt = sgfsis::dataset::Dataset::new(&root, None).labels("img0000").unwrap();
    let inst = load_raster(&ws.join("instances.sgt")).unwrap();
    assert_eq!(inst.data().iter().max().copied(), gt.instance_ids().len().try_into().ok());
    assert!(Sgt::load(&ws.join("markers.sgt")).is_ok());
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# bad key\nsmoothing = 2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sgfsis"))
        .args(["gradcheck", "--trials", "1"])
        .env("SGFSIS_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("smoothing"));

    fs::write(&cfg, "seed = 5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sgfsis"))
        .args(["gradcheck", "--trials", "1"])
        .env("SGFSIS_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(sgfsis(&["infer", "--bogus"]).status.code(), Some(2));
    assert_eq!(sgfsis(&["--help"]).status.code(), Some(0));
}

#[test]
fn watershed_and_metrics_match_array_entry_points() {
    use sgfsis::arrays;
    use sgfsis::formats::read_sidecar;
    use sgfsis_core::metrics::{ClassSets, EvalOptions};

    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let conv = dir.path().join("conv");
    ok(&["convert", "--dataset", s(&root), "--output", s(&conv), "img0001"]);
    let d = conv.join("img0001");
    let ws = dir.path().join("ws");
    let plane = |n: &str| d.join(format!("{n}.sgt"));
    ok(&["watershed", "--output", s(&ws), "--fg", s(&plane("foreground")), "--bd", s(&plane("boundary")), "--ct", s(&plane("centroid"))]);
    let direct = arrays::watershed(
        &Sgt::load(&plane("foreground")).unwrap(),
        &Sgt::load(&plane("boundary")).unwrap(),
        &Sgt::load(&plane("centroid")).unwrap(),
        &Default::default(),
    )
    .unwrap();
    assert_eq!(Sgt::load(&ws.join("instances.sgt")).unwrap(), direct);

    let pred = dir.path().join("pred");
    ok(&["infer", "--dataset", s(&root), "--output", s(&pred), "--steps", "3", "--support", "img0000", "--query", "img0001"]);
    let json = ok(&["eval", "--dataset", s(&root), "--pred", s(&pred), "img0001", "--format", "json"]);
    let cli: BTreeMap<String, Option<f64>> = json
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["class"].is_null())
        .map(|v| (v["metric"].as_str().unwrap().to_string(), v["value"].as_f64()))
        .collect();

    // prediction table from the class raster, as eval reads it
    let inst = Sgt::load(&pred.join("img0001/instances.sgt")).unwrap();
    let map = sgfsis::formats::labels_from_rasters(
        load_raster(&pred.join("img0001/instances.sgt")).unwrap(),
        &load_raster(&pred.join("img0001/labels.sgt")).unwrap(),
    )
    .unwrap();
    let gt = Sgt::load(&root.join("labels/img0001.sgt")).unwrap();
    let gt_rows = read_sidecar(&root.join("labels/img0001.csv")).unwrap();
    let r = arrays::metrics(&gt, &gt_rows, &inst, &sgfsis::formats::sidecar_rows(&map), &ClassSets::default(), EvalOptions::default())
        .unwrap();
    assert_eq!(cli["aji"], r.aji);
    assert_eq!(cli["mpq"], r.mpq);
    assert_eq!(cli["dice"], r.dice);
}
