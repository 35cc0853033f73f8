use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guidefree::numerics::Checkpoint;
use guidefree_lab::config::sha256_hex;
use guidefree_lab::RunManifest;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_guidefree"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn small_config(name: &str, iterations: usize, objective: Value, init: Option<&Path>) -> Value {
    let mut v = json!({
        "version": 1,
        "name": name,
        "seed": 11,
        "architecture": {"data_dim": 2, "hidden_layers": 2, "width": 16, "num_classes": 2, "embed_dim": 4},
        "train": {
            "objective": objective,
            "learning_rate": 0.001,
            "batch_size": 32,
            "iterations": iterations,
            "checkpoint_every": 5
        },
        "eval": {"samples_per_class": 64, "steps": 8}
    });
    if let Some(p) = init {
        v["init_checkpoint"] = json!(p);
    }
    v
}

fn write_config(dir: &Path, file: &str, v: &Value) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn dsm() -> Value {
    json!({"kind": "dsm", "label_dropout": 0.1})
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn zero_iterations_write_manifest_and_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config("empty", 0, dsm(), None));
    let out = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.checkpoints.len(), 1);
    assert_eq!(m.checkpoints[0].iteration, Some(0));
    assert_eq!(m.final_checkpoint, m.checkpoints[0].path);
    assert_eq!(fs::read_dir(out.join("checkpoints")).unwrap().count(), 1);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(out.join("config.json").exists() && out.join("reports/best.json").exists());
    assert_eq!(m.plots.len(), 5);
}

#[test]
fn rerun_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config("again", 12, dsm(), None));
    let out = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let first = (
        read_dir_bytes(&out.join("checkpoints")),
        fs::read(out.join("metrics.csv")).unwrap(),
        read_dir_bytes(&out.join("plots")),
        RunManifest::load(&out).unwrap(),
    );
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let second = (
        read_dir_bytes(&out.join("checkpoints")),
        fs::read(out.join("metrics.csv")).unwrap(),
        read_dir_bytes(&out.join("plots")),
        RunManifest::load(&out).unwrap(),
    );
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
    assert_eq!(first.2, second.2);
    let (mut a, mut b) = (first.3, second.3);
    a.wall_clock_seconds = 0.0;
    b.wall_clock_seconds = 0.0;
    assert_eq!(a, b);
    assert_eq!(a.checkpoints.iter().map(|c| c.iteration.unwrap()).collect::<Vec<_>>(), vec![0, 5, 10, 12]);
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config("seeded", 5, dsm(), None));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "12"]);
    let (ma, mb) = (RunManifest::load(&a).unwrap(), RunManifest::load(&b).unwrap());
    assert_ne!(ma.config_hash, mb.config_hash);
    assert_ne!(ma.checkpoints[1].sha256, mb.checkpoints[1].sha256);
}

#[test]
fn fine_tune_loads_the_base_final_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let base_cfg = write_config(tmp.path(), "base.json", &small_config("base", 7, dsm(), None));
    let base = tmp.path().join("base");
    ok(&["train", "--config", s(&base_cfg), "--out", s(&base)]);
    let bm = RunManifest::load(&base).unwrap();
    let final_path = base.join(&bm.final_checkpoint);
    // relative paths resolve against the config's directory
    let rel = final_path.strip_prefix(tmp.path()).unwrap();
    let ft_cfg = write_config(tmp.path(), "ft.json", &small_config("ft", 5, json!({"kind": "mclr"}), Some(rel)));
    let ft = tmp.path().join("ft");
    ok(&["train", "--config", s(&ft_cfg), "--out", s(&ft)]);
    let fm = RunManifest::load(&ft).unwrap();
    let init = fm.init_checkpoint.expect("init recorded");
    assert_eq!(init.sha256, sha256_hex(&fs::read(&final_path).unwrap()));
    assert_eq!(init.iteration, Some(7));
    // iteration-0 checkpoint of the fine-tune holds the base weights
    let first = Checkpoint::load(&ft.join(&fm.checkpoints[0].path)).unwrap();
    let base_final = Checkpoint::load(&final_path).unwrap();
    assert_eq!(first.model, base_final.model);
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_config("bad", 1, dsm(), None);
    v["train"]["learning_rate"] = json!("fast");
    let cfg = write_config(tmp.path(), "bad.json", &v);
    let o = run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("train.learning_rate"), "{err}");

    let missing = small_config("ft", 1, json!({"kind": "mclr"}), Some(&tmp.path().join("nope.gfck")));
    let cfg = write_config(tmp.path(), "missing.json", &missing);
    let o = run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("r2"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.gfck"));
}

fn trained_checkpoint(tmp: &Path) -> PathBuf {
    let cfg = write_config(tmp, "c.json", &small_config("s", 3, dsm(), None));
    let out = tmp.join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    out.join(RunManifest::load(&out).unwrap().final_checkpoint)
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn shared_noise_records_identical_latents() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(tmp.path());
    let out = tmp.path().join("samples");
    ok(&[
        "sample", "--checkpoint", s(&ck), "--n", "20", "--gamma", "1", "--shared-noise", "--steps", "8", "--out",
        s(&out),
    ]);
    let (a, b) = (csv_rows(&out.join("samples_class0.csv")), csv_rows(&out.join("samples_class1.csv")));
    assert_eq!(a.len(), 20);
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[3..], rb[3..]);
        assert_eq!((ra[2].as_str(), rb[2].as_str()), ("0", "1"));
    }
    assert!(out.join("samples.svg").exists());
}

#[test]
fn zero_gamma_matches_plain_conditional_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(tmp.path());
    let out = tmp.path().join("g0");
    ok(&["sample", "--checkpoint", s(&ck), "--class", "1", "--n", "16", "--steps", "8", "--out", s(&out)]);
    let model = Checkpoint::load(&ck).unwrap().model;
    let plain = guidefree_lab::sample::draw_samples(&model, &[1], 16, 0.0, 0, false, 8).unwrap();
    let want = out.join("want.csv");
    guidefree_lab::sample::write_samples_csv(&want, &plain[0]).unwrap();
    assert_eq!(fs::read(out.join("samples_class1.csv")).unwrap(), fs::read(want).unwrap());
}

#[test]
fn sample_rejects_an_unknown_class() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(tmp.path());
    let o = run(&["sample", "--checkpoint", s(&ck), "--class", "5", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
}

#[test]
fn verify_all_passes_on_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("verify.json");
    ok(&["verify", "--suite", "all", "--out", s(&report)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], json!(true));
    assert_eq!(v["suites"].as_array().unwrap().len(), 5);
}

#[test]
fn zero_tolerance_forces_failure_with_gaps() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("r.json");
    let o = run(&["verify", "--suite", "corollaries", "--tolerance", "0", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], json!(false));
    let check = &v["suites"][0]["checks"][0];
    assert_eq!(check["tolerance"], json!(0.0));
    assert!(!check["failures"].as_array().unwrap().is_empty());
    assert!(check["failures"][0]["gap"].is_number());
}

#[test]
fn verify_report_bytes_are_reproducible() {
    let a = ok(&["verify", "--suite", "theorem2", "--seed", "4"]).stdout;
    let b = ok(&["verify", "--suite", "theorem2", "--seed", "4"]).stdout;
    assert_eq!(a, b);
    let c = ok(&["verify", "--suite", "theorem2", "--seed", "5"]).stdout;
    assert_ne!(a, c);
}

#[test]
fn metrics_and_gamma_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(tmp.path());
    let o = ok(&["metrics", "--checkpoint", s(&ck), "--n", "32", "--gamma", "0.5"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["iteration"], json!(3));
    assert!(v["bayes_acc"].as_f64().unwrap() <= 1.0);
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--checkpoint", s(&ck), "--gamma", "0,1,2", "--n", "32", "--out", s(&out)]);
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 3);
    assert!(out.join("sweep_tradeoff.svg").exists());
}

#[test]
fn config_sweep_matches_sequential_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.json", &small_config("alpha", 5, dsm(), None));
    let mut bv = small_config("beta", 5, dsm(), None);
    bv["seed"] = json!(99);
    let b = write_config(tmp.path(), "b.json", &bv);
    let root = tmp.path().join("runs");
    let o = bin()
        .args(["sweep", "--config", s(&a), "--config", s(&b), "--out", s(&root)])
        .env("GUIDEFREE_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let solo = tmp.path().join("solo");
    ok(&["train", "--config", s(&b), "--out", s(&solo)]);
    assert_eq!(
        read_dir_bytes(&root.join("beta/checkpoints")),
        read_dir_bytes(&solo.join("checkpoints"))
    );
    assert!(root.join("alpha/manifest.json").exists());
}

#[test]
fn plot_overlays_runs_and_rejects_empty_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for (name, seed) in [("first", 1), ("second", 2)] {
        let mut v = small_config(name, 5, dsm(), None);
        v["seed"] = json!(seed);
        let cfg = write_config(tmp.path(), &format!("{name}.json"), &v);
        let out = tmp.path().join(name);
        ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
        dirs.push(out);
    }
    let plots = tmp.path().join("overlay");
    ok(&["plot", s(&dirs[0]), s(&dirs[1]), "--out", s(&plots)]);
    let svgs: Vec<_> = fs::read_dir(&plots).unwrap().collect();
    assert_eq!(svgs.len(), 5);
    let tradeoff = fs::read_to_string(plots.join("tradeoff.svg")).unwrap();
    assert!(tradeoff.contains(">first<") && tradeoff.contains(">second<"));

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("metrics.csv"), "").unwrap();
    let o = run(&["plot", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("metrics.csv"));
}
