use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
supervised_epochs = 3
refine_epochs = [2, 3]
seeds = [0, 1, 2]

[scenario]
samples = 300

[preprocess]
feature_bins = 8

[train]
hidden = [8, 8]
epochs = 3
lr_drop_epochs = 2
cir_shift_bins = 0
"#;

fn imuloc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imuloc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("IMULOC_OUT")
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_alone_writes_dataset_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("runs");
    let o = imuloc(&out, &["simulate", "--config", &cfg, "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stage = out.join("seed-4/simulate");
    for f in ["dataset.imds", "truth.csv", "stage.json"] {
        assert!(stage.join(f).is_file(), "{f}");
    }
    let truth = std::fs::read_to_string(stage.join("truth.csv")).unwrap();
    assert!(truth.starts_with("t,x,y,z"));
    assert_eq!(truth.lines().count(), 301);
}

#[test]
fn missing_upstream_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = imuloc(&dir.path().join("runs"), &["train", "--config", &cfg, "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`preprocess`") && err.contains("--chain"), "{err}");
}

#[test]
fn full_chain_then_cached_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("runs");
    let o = imuloc(&out, &["evaluate", "--chain", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for m in ["supervised", "dead-reckoning labels", "IMU-supervised", "IMU-supervised-IR"] {
        assert!(text.lines().any(|l| l.starts_with(m)), "missing row {m}:\n{text}");
    }
    assert!(text.contains("18 stage(s) executed"), "{text}");

    let again = imuloc(&out, &["evaluate", "--chain", "--config", &cfg]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("0 stage(s) executed"));
    let table: Vec<&str> = text.lines().filter(|l| !l.contains("stage(s)")).collect();
    let table2: Vec<String> = stdout(&again).lines().filter(|l| !l.contains("stage(s)")).map(String::from).collect();
    assert_eq!(table, table2);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[train]\nepochs = 0\n").unwrap();
    let o = imuloc(dir.path(), &["simulate", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&p, "no_such_field = 1\n").unwrap();
    let o = imuloc(dir.path(), &["simulate", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = imuloc(dir.path(), &["simulate", "--seeds", "3..3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_print_as_loadable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let o = imuloc(dir.path(), &["show-config", "--config", "warehouse", "--seeds", "1,2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("seeds = [1, 2]"));
    let p = dir.path().join("w.toml");
    std::fs::write(&p, &text).unwrap();
    let o2 = imuloc(dir.path(), &["show-config", "--config", p.to_str().unwrap()]);
    assert_eq!(stdout(&o2), text);
}
