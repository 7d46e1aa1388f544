use std::path::Path;
use std::process::{Command, Output};

use aegan::checkpoint::save_checkpoint;
use aegan::image_io::save_image;
use aegan::models::{build_inverse_generator, ArchitectureConfig};
use aegan::rng::SeededRng;
use aegan::Tensor;

fn aegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aegan"))
        .args(args)
        .env("AEGAN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "gen-data",
        "train-gan",
        "train-ig",
        "train-baseline",
        "invert",
        "eval-recon",
        "search",
        "superres",
        "gradcheck",
        "replay",
    ] {
        let out = aegan(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}: {}", stderr(&out));
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(aegan(&[]).status.code(), Some(1));
    assert_eq!(aegan(&["train-gan", "--out", "x"]).status.code(), Some(1));
    assert_eq!(aegan(&["search", "--method", "bogus", "--query", "q", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn missing_index_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.aegidx");
    let ig = dir.path().join("ig.ckpt");
    let arch = ArchitectureConfig::new(8, 16, 3, 4);
    save_checkpoint(&ig, &build_inverse_generator(&arch, &mut SeededRng::new(1)).unwrap(), None).unwrap();
    let query = dir.path().join("q.png");
    save_image(&query, &Tensor::full(&[16, 16, 3], 0.5)).unwrap();
    let out = aegan(&[
        "search",
        "--index",
        s(&missing),
        "--enc",
        s(&ig),
        "--query",
        s(&query),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.aegidx"), "{}", stderr(&out));
}

#[test]
fn malformed_config_reports_file_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"seed\": 1,\n  \"gan\": oops\n}\n").unwrap();
    let out = aegan(&["gen-data", "--config", s(&cfg), "--n", "2", "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("bad.json"), "{err}");
    assert!(err.contains("at byte 24"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.json");
    std::fs::write(&cfg, "{\"sead\": 3}").unwrap();
    let out = aegan(&["gen-data", "--config", s(&cfg), "--n", "2", "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sead"), "{}", stderr(&out));
}

#[test]
fn gen_data_writes_images_labels_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let run = aegan(&["gen-data", "--n", "5", "--size", "16", "--seed", "2", "--out", s(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let pngs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 5);
    let labels = std::fs::read_to_string(out.join("attributes.csv")).unwrap();
    assert_eq!(labels.lines().count(), 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 2);
}

#[test]
fn gradcheck_passes() {
    let out = aegan(&["gradcheck"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("checks passed"));
}
