//! Helpers shared by the CLI integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_scuba");

/// A fixture small enough for many CLI runs per test.
pub const SMALL_SYNTH: &str = r#"seed = 7
output_dir = "fixture"

[synth]
stimuli = 256
test_stimuli = 64
voxels = 64
dim = 32
captions_per_subgroup = 20
bank_size = 2000
banks = 3

[analysis]
restarts = 4
stability_repeats = 4
convergence_sizes = [100, 1000]
convergence_repeats = 3
"#;

pub fn scuba(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("scuba binary runs")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "scuba failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Parses the error JSON on stderr, asserting the exit code.
pub fn error_json(out: &Output, code: i32) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "stderr: {stderr}");
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no error JSON on stderr: {stderr}"));
    let v: serde_json::Value = serde_json::from_str(line).expect("error JSON parses");
    assert_eq!(v["error"]["code"], code);
    v
}

/// Writes `synth_toml` into `dir` and generates the fixture; returns the
/// path of the fixture's run config.
pub fn synth(dir: &Path, synth_toml: &str) -> PathBuf {
    std::fs::write(dir.join("synth.toml"), synth_toml).unwrap();
    ok(&scuba(&["synth", "--config", "synth.toml"], dir));
    dir.join("fixture").join("run.toml")
}

/// synth → fit → caption → analyze inside `dir`.
pub fn pipeline(dir: &Path, synth_toml: &str) {
    synth(dir, synth_toml);
    for cmd in ["fit", "caption", "analyze"] {
        ok(&scuba(&[cmd, "--config", "fixture/run.toml"], dir));
    }
}

/// Every file under `root`, keyed by relative path.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Planted caption id per voxel from the fixture's planted.csv.
pub fn planted_ids(fixture: &Path) -> BTreeMap<usize, u64> {
    std::fs::read_to_string(fixture.join("planted.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

/// (voxel_id, caption_id) rows of a voxel_captions.tsv.
pub fn caption_rows(tsv: &Path) -> Vec<(usize, u64)> {
    std::fs::read_to_string(tsv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect()
}
