use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
run_id = small
output = out
synthetic = separable
synthetic_rows = 300
mamba.d_model = 16
mamba.d_token = 8
mamba.heads = 4
max_epochs = 2
";

fn tabsae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabsae"))
        .args(args)
        .current_dir(dir)
        .env_remove("TABSAE_SEED")
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), config).unwrap();
    dir
}

#[test]
fn run_writes_the_full_report_tree() {
    let dir = setup(SMALL);
    let out = tabsae(dir.path(), &["run", "--config", "run.cfg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out/small");
    for f in [
        "encoded.csv",
        "stats.json",
        "resampled.csv",
        "resample_audit.json",
        "split.json",
        "training_log.csv",
        "model.json",
        "metrics.json",
        "curves.svg",
        "curves.csv",
        "confusion.svg",
        "confusion.csv",
        "roc.svg",
        "roc.csv",
        "sankey.svg",
        "sankey.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    for key in ["confusion", "per_class", "overall_accuracy", "roc", "macro_auc", "config", "seed"] {
        assert!(metrics.get(key).is_some(), "metrics.json lacks {key}");
    }
}

#[test]
fn missing_schema_is_a_data_error() {
    let dir = setup("data = rows.csv\nschema = nowhere.toml\n");
    fs::write(dir.path().join("rows.csv"), "a,SAE\n1,1\n").unwrap();
    let out = tabsae(dir.path(), &["run", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema error"), "{err}");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = setup("synthetic = separable\nenn_k = 4\n");
    let out = tabsae(dir.path(), &["run", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tabsae(dir.path(), &["run", "--config", "run.cfg", "--set", "enn_k=3", "--set", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = setup(SMALL);
    let b = setup(SMALL);
    for d in [&a, &b] {
        assert!(tabsae(d.path(), &["run", "--config", "run.cfg"]).status.success());
    }
    for f in ["metrics.json", "roc.svg", "confusion.svg", "resampled.csv", "model.json"] {
        let x = fs::read(a.path().join("out/small").join(f)).unwrap();
        let y = fs::read(b.path().join("out/small").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let dir = setup(SMALL);
    let seed_of = |run_id: &str| -> u64 {
        let text = fs::read_to_string(dir.path().join("out").join(run_id).join("metrics.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["seed"].as_u64().unwrap()
    };
    let env = Command::new(env!("CARGO_BIN_EXE_tabsae"))
        .args(["run", "--config", "run.cfg", "--set", "run_id=env"])
        .current_dir(dir.path())
        .env("TABSAE_SEED", "7")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(seed_of("env"), 7);
    let flag = Command::new(env!("CARGO_BIN_EXE_tabsae"))
        .args(["run", "--config", "run.cfg", "--set", "run_id=flag", "--seed", "9"])
        .current_dir(dir.path())
        .env("TABSAE_SEED", "7")
        .output()
        .unwrap();
    assert!(flag.status.success());
    assert_eq!(seed_of("flag"), 9);
}

#[test]
fn staged_commands_match_a_single_run() {
    let dir = setup(SMALL);
    assert!(tabsae(dir.path(), &["run", "--config", "run.cfg"]).status.success());
    let whole = fs::read(dir.path().join("out/small/metrics.json")).unwrap();
    for step in [&["prepare"][..], &["resample"], &["train", "--staged"]] {
        let mut args = step.to_vec();
        args.extend(["--config", "run.cfg"]);
        let out = tabsae(dir.path(), &args);
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(whole, fs::read(dir.path().join("out/small/metrics.json")).unwrap());
}

#[test]
fn evaluate_report_and_compare() {
    let dir = setup(SMALL);
    let p = dir.path();
    assert!(tabsae(p, &["run", "--config", "run.cfg"]).status.success());
    let tt = tabsae(
        p,
        &["run", "--config", "run.cfg", "--model", "tab_transformer", "--set", "run_id=tt", "--set", "tab.embed_dim=8"],
    );
    assert!(tt.status.success(), "{}", String::from_utf8_lossy(&tt.stderr));

    let ev = tabsae(
        p,
        &[
            "evaluate",
            "--checkpoint",
            "out/small/model.json",
            "--input",
            "out/small/encoded.csv",
            "--stats",
            "out/small/stats.json",
            "--out",
            "eval.json",
        ],
    );
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    assert!(p.join("eval.json").is_file());

    fs::remove_file(p.join("out/small/roc.svg")).unwrap();
    assert!(tabsae(p, &["report", "--run", "out/small"]).status.success());
    assert!(p.join("out/small/roc.svg").is_file());

    let cmp = tabsae(p, &["compare", "--out", "cmp", "out/small/metrics.json", "out/tt/metrics.json"]);
    assert!(cmp.status.success());
    let table = fs::read_to_string(p.join("cmp/compare.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(p.join("cmp/compare.svg").is_file());

    let one = tabsae(p, &["compare", "--out", "cmp", "out/small/metrics.json"]);
    assert!(!one.status.success());
}

#[test]
fn pfn_meta_train_then_predict() {
    let dir = setup(SMALL);
    let p = dir.path();
    assert!(tabsae(p, &["prepare", "--config", "run.cfg"]).status.success());
    let mt = tabsae(p, &["pfn-meta-train", "--out", "pfn.json", "--steps", "5", "--tasks-per-step", "2"]);
    assert!(mt.status.success(), "{}", String::from_utf8_lossy(&mt.stderr));
    let pr = tabsae(
        p,
        &[
            "pfn-predict",
            "--checkpoint",
            "pfn.json",
            "--support",
            "out/small/encoded.csv",
            "--query",
            "out/small/encoded.csv",
            "--stats",
            "out/small/stats.json",
            "--out",
            "pred",
        ],
    );
    assert!(pr.status.success(), "{}", String::from_utf8_lossy(&pr.stderr));
    let preds = fs::read_to_string(p.join("pred/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 301);
    for line in preds.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').take(3).map(|c| c.parse().unwrap()).collect();
        assert!((cols.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
