use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facerep_cli::report::RunReport;
use facerep_core::data::{write_ndjson, TaskRecord};

fn facerep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facerep")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = facerep(args);
    assert!(
        out.status.success(),
        "facerep {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Raw corpus, curated manifest and a short ITC-only pre-training run.
fn pretrained(dir: &Path, steps: usize, toggles: &str) -> PathBuf {
    ok(&["synth", "--out", s(&dir.join("raw")), "--count", "48", "--size", "32", "--seed", "3"]);
    let cfg = write(
        dir,
        "run.toml",
        &format!(
            r#"
seed = 1
deterministic = true

[curate]
input = "raw/raw.jsonl"
output = "curated.jsonl"
target_size = 32

[pretrain]
manifest = "curated.jsonl"
output_dir = "pre"
steps = {steps}

[pretrain.training]
toggles = "{toggles}"
"#
        ),
    );
    ok(&["curate", "--config", s(&cfg)]);
    ok(&["pretrain", "--config", s(&cfg)]);
    dir.join("pre")
}

#[test]
fn itc_only_log_has_no_mim_column() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path(), 3, "ITC+MIM1+ALIGN");
    let log = std::fs::read_to_string(pre.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.contains("\"l_mim\"")));

    let out = ok(&["pretrain", "--config", s(&dir.path().join("run.toml")), "--toggles", "ITC"]);
    assert!(out.status.success());
    let log = std::fs::read_to_string(pre.join("train_log.jsonl")).unwrap();
    assert!(log.lines().all(|l| !l.contains("l_mim") && l.contains("\"l_i\"")));
    let report = RunReport::load(&pre.join("run_report.json")).unwrap();
    assert_eq!(report.variant.as_deref(), Some("ITC"));
    assert!(report.checkpoint_hash.is_some());
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        pretrained(d, 2, "ITC+MIM1+ALIGN");
        let cfg = write(
            d,
            "fs.toml",
            "seed = 5\n[fewshot]\ninput = \"curated.jsonl\"\noutput = \"subset.jsonl\"\nfraction = 0.25\n",
        );
        ok(&["fewshot", "--config", s(&cfg), "--deterministic"]);
    }
    for f in ["curated.jsonl", "curated.rejects.jsonl", "subset.jsonl", "subset.split.json", "pre/train_log.jsonl", "pre/checkpoint.safetensors"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let subset = std::fs::read_to_string(a.path().join("subset.jsonl")).unwrap();
    assert_eq!(subset.lines().count(), 8);
    let curated = std::fs::read_to_string(a.path().join("curated.jsonl")).unwrap();
    for line in curated.lines().filter(|l| !l.starts_with('#')) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["face_score"].as_f64().unwrap() > 0.9);
    }
    let ra = std::fs::read_to_string(a.path().join("pre/run_report.json")).unwrap();
    assert!(!ra.contains("wall_clock"));
}

#[test]
fn probe_keeps_backbone_and_finetune_regrids() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path(), 2, "ITC");
    ok(&["synth", "--kind", "tasks", "--out", s(&dir.path().join("tasks")), "--count", "8", "--size", "32"]);
    let cfg = write(
        dir.path(),
        "probe.toml",
        r#"
seed = 2
deterministic = true

[head]
train = "tasks/tasks.jsonl"
test = "tasks/tasks.jsonl"
backbone = "pre/checkpoint.safetensors"
output_dir = "probe"

[head.task]
kind = "attributes"
count = 40

[head.training]
epochs = 2
batch_size = 4

[head.eval]
reference_group = "pale"
"#,
    );
    ok(&["probe", "--config", s(&cfg)]);
    let report = RunReport::load(&dir.path().join("probe/run_report.json")).unwrap();
    assert_eq!(report.backbone_hash, report.backbone_hash_before);
    let pre_report = RunReport::load(&pre.join("run_report.json")).unwrap();
    assert_eq!(report.backbone_hash, pre_report.backbone_hash);
    let m = report.metrics.unwrap();
    assert!(m.attributes.is_some());
    assert!(m.groups.unwrap().discrepancy.is_some());
    assert!(dir.path().join("probe/predictions.jsonl").exists());

    // probing at another resolution is a config error
    let out = facerep(&["probe", "--config", s(&cfg), "--resolution", "64"]);
    assert_eq!(out.status.code(), Some(1));

    let ft = std::fs::read_to_string(&cfg).unwrap().replace("output_dir = \"probe\"", "output_dir = \"ft\"");
    let ft = write(dir.path(), "ft.toml", &ft);
    ok(&["finetune", "--config", s(&ft), "--resolution", "64"]);
    let report = RunReport::load(&dir.path().join("ft/run_report.json")).unwrap();
    assert_ne!(report.backbone_hash, report.backbone_hash_before);
    assert_eq!(report.config.head.unwrap().resolution, Some(64));
}

#[test]
fn eval_matches_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |id: &str, pts: Vec<f64>| {
        let mut r = TaskRecord::new(id);
        r.landmarks = Some(pts);
        r.bbox = Some([0.0, 0.0, 60.0, 80.0]);
        r
    };
    // diagonal 100; errors 0.05 and 0.15 for the two images
    let gt = vec![mk("a", vec![10.0, 10.0]), mk("b", vec![20.0, 20.0])];
    let pred = vec![mk("b", vec![29.0, 32.0]), mk("a", vec![13.0, 14.0])];
    write_ndjson(&dir.path().join("gt.jsonl"), &gt).unwrap();
    write_ndjson(&dir.path().join("pred.jsonl"), &pred).unwrap();
    let cfg = write(
        dir.path(),
        "eval.toml",
        r#"
[eval]
predictions = "pred.jsonl"
ground_truth = "gt.jsonl"
output_dir = "eval"

[eval.task]
kind = "alignment"
landmarks = 1

[eval.metrics]
normalizer = "diag"
failure_threshold = 0.1
auc_threshold = 0.2
"#,
    );
    let out = ok(&["eval", "--config", s(&cfg)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("NME_diag"));
    let report = RunReport::load(&dir.path().join("eval/run_report.json")).unwrap();
    let l = report.metrics.unwrap().landmarks.unwrap();
    assert!((l.nme - 0.10).abs() < 1e-12);
    assert_eq!(l.failure_rate, 50.0);
    // (0.15 + 0.05) / (2 · 0.2) = 50 %
    assert!((l.auc - 50.0).abs() < 1e-9);
}

#[test]
fn config_and_artifact_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "seed = 1\n[pretrain]\nmanifest = \"m.jsonl\"\noutput_dir = \"o\"\nunknown_key = 3\n");
    let out = facerep(&["pretrain", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    let bad_toggles = write(dir.path(), "t.toml", "[pretrain]\nmanifest = \"m.jsonl\"\noutput_dir = \"o\"\n");
    assert_eq!(facerep(&["pretrain", "--config", s(&bad_toggles), "--toggles", "ALIGN"]).status.code(), Some(1));

    let missing = write(
        dir.path(),
        "probe.toml",
        "[head]\ntrain = \"t.jsonl\"\nbackbone = \"nowhere.safetensors\"\noutput_dir = \"o\"\n[head.task]\nkind = \"attributes\"\ncount = 40\n",
    );
    let out = facerep(&["probe", "--config", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.safetensors"));
}

#[test]
fn gradcam_and_report_commands() {
    let dir = tempfile::tempdir().unwrap();
    pretrained(dir.path(), 2, "ITC+MIM1+ALIGN");
    let cfg = write(
        dir.path(),
        "cam.toml",
        r#"
[gradcam]
checkpoint = "pre/checkpoint.safetensors"
images = ["raw/00000.png", "raw/00001.png"]
queries = ["a photo of a woman with glasses", "a dark background"]
output_dir = "cam"

[report]
output = "table.txt"

[[report.rows]]
label = "ITC+MIM1+ALIGN"
runs = ["pre/run_report.json"]
"#,
    );
    ok(&["gradcam", "--config", s(&cfg)]);
    for stem in ["img0_q0", "img0_q1", "img1_q0", "img1_q1"] {
        assert!(dir.path().join(format!("cam/{stem}.png")).exists());
        let grid = std::fs::read_to_string(dir.path().join(format!("cam/{stem}.txt"))).unwrap();
        let vals: Vec<f64> = grid.split_whitespace().map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 4);
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let out = ok(&["report", "--config", s(&cfg)]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("ITC+MIM1+ALIGN"));
    assert_eq!(std::fs::read_to_string(dir.path().join("table.txt")).unwrap().trim_end(), table.trim_end());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for sub in ["quickstart", "ablation"] {
        for entry in std::fs::read_dir(root.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = facerep_cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
    }
    assert_eq!(seen, 12);
}

#[test]
fn bare_config_name_resolves_from_working_directory() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", s(&dir.path().join("raw")), "--count", "12"]);
    write(dir.path(), "c.toml", "[curate]\ninput = \"raw/raw.jsonl\"\noutput = \"out/curated.jsonl\"\ntarget_size = 4\n");
    let out = Command::new(env!("CARGO_BIN_EXE_facerep"))
        .args(["curate", "--config", "c.toml"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curated = std::fs::read_to_string(dir.path().join("out/curated.jsonl")).unwrap();
    for line in curated.lines().filter(|l| !l.starts_with('#')) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let image = dir.path().join("out").join(v["image_ref"].as_str().unwrap());
        assert!(image.exists(), "{} does not resolve", image.display());
    }
}
