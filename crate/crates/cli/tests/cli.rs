use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fibershape"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let data = format!("run.data_dir={}", dir.join("data").display());
    let out = format!("run.out_dir={}", dir.join("out").display());
    bin().args(["-s", &data, "-s", &out]).args(args).output().unwrap()
}

const SMALL: &[&str] = &[
    "-s",
    "synth.n_cylinder=8",
    "-s",
    "synth.n_arc=8",
    "-s",
    "synth.n_helix=8",
    "-s",
    "features.n_points=32",
    "-s",
    "train.epochs=2",
    "-s",
    "train.batch_size=4",
];

fn with_small<'a>(cmd: &'a str) -> Vec<&'a str> {
    let mut v = SMALL.to_vec();
    v.push(cmd);
    v
}

#[test]
fn help_lists_every_key_with_its_default() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["[run] seed = 1", "[shape] voxel_size = 1.0", "[train] epochs = 60", "[split] test_splits = test"] {
        assert!(text.contains(key), "missing {key}");
    }
    for cmd in ["synth", "shape", "pca", "train", "predict", "eval", "ablation", "gradcheck", "bench", "run", "config"] {
        assert!(text.contains(cmd), "missing subcommand {cmd}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["-s", "train.momentum=0.9", "config"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["-s", "train.batch_size=3", "config"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["-s", "noequals", "config"]).status.code(), Some(2));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[train]\nepochs = 5\nepochs = 6\n").unwrap();
    let out = bin().args(["-c", bad.to_str().unwrap(), "config"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["shape"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run synth first"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    fs::write(&file, "[train]\nepochs = 7\nvariant = pca\n").unwrap();
    let out = bin().args(["-c", file.to_str().unwrap(), "-s", "train.epochs=9", "config"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert!(text.contains("epochs = 9") && text.contains("variant = pca"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["-s", "gradcheck.probes=100", "gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 4);
}

#[test]
fn small_pipeline_runs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &with_small("run"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("average"));
    let files = ["out/model_full.ckpt", "out/eval_full.csv", "out/predictions_full.csv", "out/pca.csv", "data/shapes.csv"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();

    fs::remove_dir_all(dir.path().join("out")).unwrap();
    for cmd in ["pca", "train", "predict", "eval"] {
        let out = run(dir.path(), &with_small(cmd));
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for (f, a) in files.iter().zip(&first) {
        assert_eq!(&fs::read(dir.path().join(f)).unwrap(), a, "{f} changed");
    }

    let eval = String::from_utf8(first[1].clone()).unwrap();
    assert!(eval.lines().any(|l| l.starts_with("# config_hash=")));
    assert!(eval.contains("measure,pearson_r,nmse"));

    let out = run(dir.path(), &with_small("bench"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/bench.csv").exists());
}
