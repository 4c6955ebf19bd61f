use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "seed = 1
[synth]
height = 32
width = 32
train_scenes = 1
years = 2
density_scenes = 1
field_size = 8
density_field_size = 12
";

fn treecrop(dir: &Path, config: &str, args: &[&str]) -> Output {
    let conf = dir.join("run.conf");
    std::fs::write(&conf, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_treecrop"))
        .arg("--config")
        .arg(&conf)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn inverted_grow_thresholds_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = treecrop(dir.path(), TINY, &["grow", "--seed-threshold", "0.3", "--neighbor-low", "0.6"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("invalid thresholds"), "{}", stderr(&o));
}

#[test]
fn missing_input_exit_3_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = treecrop(dir.path(), TINY, &["normalize"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("train_0.stack.rstk"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = treecrop(dir.path(), "[stca]\nbogus = 1\n", &["synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn malformed_line_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = treecrop(dir.path(), "[synth]\nheight 12\n", &["synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bad_set_override_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = treecrop(dir.path(), TINY, &["--set", "synth.height=abc", "synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn synth_then_normalize_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = treecrop(dir.path(), TINY, &["synth"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = treecrop(dir.path(), TINY, &["normalize"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in [
        "synth/train_0.stack.rstk",
        "synth/train_0.labels.rstk",
        "synth/year_1.stack.rstk",
        "synth/density_0.stack.rstk",
        "norm/train_0.rstk",
        "norm/train_0.norm.json",
        "norm/year_0.rstk",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let prov: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("norm/train_0.rstk.prov.json")).unwrap()).unwrap();
    assert_eq!(prov["command"], "normalize");
    assert_eq!(prov["inputs"].as_array().unwrap().len(), 1);
    assert_eq!(prov["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}
