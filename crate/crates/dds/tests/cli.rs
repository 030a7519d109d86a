use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dds::dataset::Manifest;

const TINY: &str = r#"
seed = 3

[synth]
sources = 3
window = 64
hop = 32
notes_per_source = 5
note_seconds = 0.1
test_snippets = 2
segments_per_snippet = 3
segment_seconds = 0.1

[train]
epochs = 3
batch_size = 16
patience = 10

[train.realnvp]
steps = 2
hidden = [8]

[train.glow]
steps = 2
hidden = [8]

[decompose]
max_steps = 15
n_components = 2
"#;

struct Workdir {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Workdir {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        fs::write(root.join("run.toml"), TINY).unwrap();
        Self { _tmp: tmp, root }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn dds(&self, args: &[&str]) -> Output {
        let config = self.path("run.toml");
        Command::new(env!("CARGO_BIN_EXE_dds"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.dds(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn synth(&self) -> PathBuf {
        let data = self.path("data");
        self.ok(&["synth", "--out", data.to_str().unwrap()]);
        data
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == ext)).collect();
    v.sort();
    v
}

#[test]
fn synth_writes_a_reproducible_manifest() {
    let w = Workdir::new();
    let data = w.synth();
    let manifest: Manifest = toml::from_str(&fs::read_to_string(data.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest.sources, 3);
    assert_eq!(manifest.d, 32);
    let again = w.path("again");
    w.ok(&["synth", "--out", s(&again)]);
    for e in &manifest.samples {
        assert_eq!(fs::read(data.join(&e.path)).unwrap(), fs::read(again.join(&e.path)).unwrap(), "{}", e.path);
    }
}

#[test]
fn train_writes_one_checkpoint_per_model_and_is_deterministic() {
    let w = Workdir::new();
    let data = w.synth();
    let c3 = w.path("ck3");
    w.ok(&["train", "--method", "dds3", "--dataset", s(&data), "--out", s(&c3)]);
    assert_eq!(files_with_ext(&c3, "ddsf").len(), 1);
    let log = fs::read_to_string(c3.join("conditional_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,lr,wall_ms"));

    let c2 = w.path("ck2");
    let c2b = w.path("ck2b");
    w.ok(&["train", "--method", "dds2", "--dataset", s(&data), "--out", s(&c2), "--jobs", "2"]);
    w.ok(&["train", "--method", "dds2", "--dataset", s(&data), "--out", s(&c2b)]);
    let a = files_with_ext(&c2, "ddsf");
    assert_eq!(a.len(), 3);
    for p in &a {
        assert_eq!(fs::read(p).unwrap(), fs::read(c2b.join(p.file_name().unwrap())).unwrap());
    }
}

#[test]
fn decompose_and_evaluate_end_to_end() {
    let w = Workdir::new();
    let data = w.synth();
    let ck = w.path("ck");
    let results = w.path("results");
    w.ok(&["decompose", "--method", "nmf", "--dataset", s(&data), "--out", s(&results)]);
    w.ok(&["train", "--method", "dds2", "--dataset", s(&data), "--out", s(&ck)]);
    w.ok(&["decompose", "--method", "dds2", "--n", "4", "--dataset", s(&data), "--checkpoints", s(&ck), "--out", s(&results), "--jobs", "2"]);

    let run = results.join("dds2/snippet001");
    for f in ["h_source.ddsm", "s_hat.ddsm", "objective_trace.csv", "result.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    assert_eq!(json["dictionary_columns"], 3 * 4);
    assert_eq!(json["method"], "dds2");
    assert!(fs::read_to_string(run.join("objective_trace.csv")).unwrap().starts_with("step,objective,recon,mle,lr"));

    // An oracle activation matrix scores perfectly.
    let oracle = results.join("dds2/snippet000");
    fs::copy(data.join("test/snippet000_roll.ddsm"), oracle.join("h_source.ddsm")).unwrap();
    let stdout = w.ok(&["evaluate", "--dataset", s(&data), "--out", s(&results), "--epsilon", "0.2"]);
    assert!(stdout.starts_with("rank,method"));
    let metrics = fs::read_to_string(results.join("metrics.csv")).unwrap();
    let line = metrics.lines().find(|l| l.starts_with("dds2/snippet000")).unwrap();
    let cols: Vec<&str> = line.split(',').collect();
    assert_eq!(cols[3], "1.0");
    assert_eq!(cols[6], "0.2");
    assert_eq!(metrics.lines().count(), 1 + 4);

    let summary = fs::read_to_string(results.join("summary.csv")).unwrap();
    let psa: Vec<f64> = summary.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(psa.windows(2).all(|p| p[0] >= p[1]));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(oracle.join("result.json")).unwrap()).unwrap();
    assert_eq!(json["metrics"]["psa"], 1.0);
}

#[test]
fn decompose_is_reproducible() {
    let w = Workdir::new();
    let data = w.synth();
    let ck = w.path("ck");
    w.ok(&["train", "--method", "dds3", "--dataset", s(&data), "--out", s(&ck)]);
    for out in ["r1", "r2"] {
        w.ok(&["decompose", "--method", "dds3", "--dataset", s(&data), "--checkpoints", s(&ck), "--out", s(&w.path(out))]);
    }
    for f in ["h_source.ddsm", "s_hat.ddsm", "objective_trace.csv"] {
        assert_eq!(fs::read(w.path("r1/dds3/snippet000").join(f)).unwrap(), fs::read(w.path("r2/dds3/snippet000").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mismatched_checkpoints_are_rejected() {
    let w = Workdir::new();
    let data = w.synth();
    let ck = w.path("ck");
    w.ok(&["train", "--method", "dds2", "--dataset", s(&data), "--out", s(&ck)]);
    let out = w.dds(&["decompose", "--method", "dds3", "--dataset", s(&data), "--checkpoints", s(&ck), "--out", s(&w.path("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible checkpoint"));
    // A dds3 checkpoint renamed to look like per-source models.
    let c3 = w.path("c3");
    w.ok(&["train", "--method", "dds3", "--dataset", s(&data), "--out", s(&c3)]);
    for i in 0..3 {
        fs::copy(c3.join("conditional.ddsf"), c3.join(format!("source{i:02}.ddsf"))).unwrap();
    }
    let out = w.dds(&["decompose", "--method", "dds2", "--dataset", s(&data), "--checkpoints", s(&c3), "--out", s(&w.path("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible checkpoint"));
}

fn rewrite_manifest(data: &Path, f: impl FnOnce(&mut Manifest)) {
    let path = data.join("manifest.toml");
    let mut m: Manifest = toml::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut m);
    fs::write(&path, toml::to_string(&m).unwrap()).unwrap();
}

#[test]
fn empty_test_set_has_nothing_to_decompose() {
    let w = Workdir::new();
    let data = w.synth();
    rewrite_manifest(&data, |m| m.samples.retain(|e| e.split != dds::dataset::Split::Test));
    let out = w.dds(&["decompose", "--method", "nmf", "--dataset", s(&data), "--out", s(&w.path("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to decompose"));
}

#[test]
fn runs_without_ground_truth_are_skipped() {
    let w = Workdir::new();
    let data = w.synth();
    let results = w.path("r");
    w.ok(&["decompose", "--method", "nmf", "--dataset", s(&data), "--out", s(&results)]);
    rewrite_manifest(&data, |m| {
        for e in &mut m.samples {
            if e.path == "test/snippet001.ddsm" {
                e.roll = None;
            }
        }
    });
    let out = w.dds(&["evaluate", "--dataset", s(&data), "--out", s(&results)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ground truth"));
    let metrics = fs::read_to_string(results.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let w = Workdir::new();
    fs::write(w.path("run.toml"), "bogus_key = 1\n").unwrap();
    assert_eq!(w.dds(&["synth", "--out", s(&w.path("d"))]).status.code(), Some(2));
    fs::write(w.path("run.toml"), TINY).unwrap();
    assert_eq!(w.dds(&["synth", "--method", "ica", "--out", s(&w.path("d"))]).status.code(), Some(2));
    let missing = w.path("nowhere");
    assert_eq!(w.dds(&["decompose", "--method", "nmf", "--dataset", s(&missing), "--out", s(&w.path("r"))]).status.code(), Some(4));
}

#[test]
fn config_prints_defaults_that_parse_back() {
    let w = Workdir::new();
    let text = w.ok(&["config"]);
    let cfg = dds::RunConfig::parse(&text).unwrap();
    assert_eq!(cfg.synth.sources, 3);
    assert_eq!(dds::RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}
