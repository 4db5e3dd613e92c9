//! Helpers for driving the built binary.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn tractmil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tractmil"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = tractmil(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const DATA: [&str; 8] = [
    "--embeddings",
    "data/embeddings.jsonl",
    "--boundaries",
    "data/boundaries.geojson",
    "--atlas",
    "data/atlas.csv",
    "--income",
    "data/income.csv",
];

pub const TRAIN: [&str; 10] = [
    "--learning-rate",
    "1e-3",
    "--batch-size",
    "16",
    "--l-dim",
    "8",
    "--dropout",
    "0.5",
    "--epochs",
    "15",
];

pub fn with<'a>(head: &[&'a str], tails: &[&[&'a str]]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    for t in tails {
        v.extend_from_slice(t);
    }
    v
}

/// synth → prepare → train → eval in `dir`, with optional leading global
/// flags (e.g. `--threads 4`).
pub fn pipeline(dir: &Path, global: &[&str]) {
    ok(dir, &with(global, &[&["synth", "--out", "data", "--n-tracts", "200", "--seed", "3"]]));
    ok(dir, &with(global, &[&["prepare"], &DATA, &["--out", "split.json", "--seed", "3"]]));
    ok(
        dir,
        &with(global, &[&["train"], &DATA, &TRAIN, &["--split", "split.json", "--out", "ckpt.json", "--seed", "3"]]),
    );
    ok(
        dir,
        &with(global, &[&["eval"], &DATA, &["--checkpoint", "ckpt.json", "--split", "split.json", "--out", "report.json"]]),
    );
}
