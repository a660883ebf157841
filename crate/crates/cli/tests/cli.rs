mod common;

use common::*;
use tempfile::tempdir;

#[test]
fn missing_activations_path_exits_2_with_error_json() {
    let d = tempdir().unwrap();
    let run = synth(d.path(), SMALL_SYNTH);
    std::fs::remove_file(run.parent().unwrap().join("train_activations.bscb")).unwrap();
    let out = scuba(&["fit", "--config", "fixture/run.toml"], d.path());
    let v = error_json(&out, 2);
    assert_eq!(v["error"]["kind"], "config");
    assert!(v["error"]["message"].as_str().unwrap().contains("data.train_activations"));
}

#[test]
fn missing_config_key_exits_2() {
    let d = tempdir().unwrap();
    std::fs::write(d.path().join("run.toml"), "seed = 1\n").unwrap();
    let out = scuba(&["fit", "--config", "run.toml"], d.path());
    let v = error_json(&out, 2);
    assert!(v["error"]["message"].as_str().unwrap().contains("data.train_embeddings"));
}

#[test]
fn unknown_config_key_exits_2() {
    let d = tempdir().unwrap();
    std::fs::write(d.path().join("run.toml"), "sede = 1\n").unwrap();
    error_json(&scuba(&["fit", "--config", "run.toml"], d.path()), 2);
}

#[test]
fn corrupt_bscb_exits_3() {
    let d = tempdir().unwrap();
    let run = synth(d.path(), SMALL_SYNTH);
    std::fs::write(run.parent().unwrap().join("train_embeddings.bscb"), b"NOPE0000000000000000000000000000").unwrap();
    let v = error_json(&scuba(&["fit", "--config", "fixture/run.toml"], d.path()), 3);
    assert_eq!(v["error"]["kind"], "data");
}

#[test]
fn caption_without_encoder_exits_2() {
    let d = tempdir().unwrap();
    synth(d.path(), SMALL_SYNTH);
    let v = error_json(&scuba(&["caption", "--config", "fixture/run.toml"], d.path()), 2);
    assert!(v["error"]["message"].as_str().unwrap().contains("scuba fit"));
}

#[test]
fn empty_caption_bank_exits_2() {
    let d = tempdir().unwrap();
    let run = synth(d.path(), SMALL_SYNTH);
    ok(&scuba(&["fit", "--config", "fixture/run.toml"], d.path()));
    std::fs::write(run.parent().unwrap().join("captions.tsv"), "").unwrap();
    let v = error_json(&scuba(&["caption", "--config", "fixture/run.toml"], d.path()), 2);
    assert!(v["error"]["message"].as_str().unwrap().contains("empty"));
}

#[test]
fn malformed_lexicon_line_exits_2_naming_the_line() {
    let d = tempdir().unwrap();
    pipeline(d.path(), SMALL_SYNTH);
    std::fs::write(d.path().join("lex.tsv"), "# comment\nman\tman\tnoun\nbroken line\n").unwrap();
    let out = scuba(
        &["analyze", "--config", "fixture/run.toml", "--lexicon", "lex.tsv"],
        d.path(),
    );
    let v = error_json(&out, 2);
    let msg = v["error"]["message"].as_str().unwrap();
    assert!(msg.contains("line 3"), "{msg}");
    assert!(msg.contains("data.lexicon"), "{msg}");
}

#[test]
fn no_rois_falls_back_to_whole_brain_with_warning() {
    let d = tempdir().unwrap();
    let run = synth(d.path(), SMALL_SYNTH);
    // drop the ROI tables from the generated config
    let text = std::fs::read_to_string(&run).unwrap();
    let kept: String = text.split("[[analysis.rois]]").next().unwrap().to_string();
    let synth_section = text.find("[synth]").map(|i| &text[i..]).unwrap_or("");
    std::fs::write(&run, format!("{kept}\n{synth_section}")).unwrap();
    for cmd in ["fit", "caption"] {
        ok(&scuba(&[cmd, "--config", "fixture/run.toml"], d.path()));
    }
    let out = scuba(&["analyze", "--config", "fixture/run.toml"], d.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("whole brain"));
    let persons = std::fs::read_to_string(d.path().join("fixture/out/analysis/person_fractions.csv")).unwrap();
    assert!(persons.lines().nth(1).unwrap().starts_with("whole_brain,64,"), "{persons}");
}

#[test]
fn fit_r2_and_caption_recovery_on_fixture() {
    let d = tempdir().unwrap();
    pipeline(d.path(), SMALL_SYNTH);
    let out = d.path().join("fixture/out");
    let r2 = std::fs::read_to_string(out.join("r2.csv")).unwrap();
    for l in r2.lines().skip(1) {
        let v: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v >= 0.99, "{l}");
    }
    let planted = planted_ids(&d.path().join("fixture"));
    let rows = caption_rows(&out.join("captions/voxel_captions.tsv"));
    let hits = rows.iter().filter(|(v, c)| planted[v] == *c).count();
    assert!(hits as f64 >= 0.95 * rows.len() as f64, "{hits}/{}", rows.len());
}

#[test]
fn reruns_are_byte_identical_and_thread_count_independent() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    pipeline(a.path(), SMALL_SYNTH);
    std::fs::write(b.path().join("synth.toml"), SMALL_SYNTH).unwrap();
    ok(&scuba(&["synth", "--config", "synth.toml", "--threads", "1"], b.path()));
    for cmd in ["fit", "caption", "analyze"] {
        ok(&scuba(&[cmd, "--config", "fixture/run.toml", "--threads", "3"], b.path()));
    }
    let ta = read_tree(&a.path().join("fixture"));
    let tb = read_tree(&b.path().join("fixture"));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs");
    }
}

#[test]
fn single_repeat_caption_reruns_identically() {
    let d = tempdir().unwrap();
    synth(d.path(), SMALL_SYNTH);
    ok(&scuba(&["fit", "--config", "fixture/run.toml"], d.path()));
    let tsv = d.path().join("fixture/out/captions/voxel_captions.tsv");
    ok(&scuba(&["caption", "--config", "fixture/run.toml", "--repeats", "1"], d.path()));
    let first = std::fs::read(&tsv).unwrap();
    ok(&scuba(&["caption", "--config", "fixture/run.toml", "--repeats", "1"], d.path()));
    assert_eq!(first, std::fs::read(&tsv).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(
        &std::fs::read(d.path().join("fixture/out/caption_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["caption"]["repeats"], 1);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn seed_override_is_recorded() {
    let d = tempdir().unwrap();
    synth(d.path(), SMALL_SYNTH);
    ok(&scuba(&["fit", "--config", "fixture/run.toml", "--seed", "99"], d.path()));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("fixture/out/fit_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["tool"], "scuba");
    assert!(manifest["outputs"]["r2.csv"].as_str().unwrap().len() == 64);
    assert!(manifest["inputs"]["train_activations"]["sha256"].is_string());
}

#[test]
fn noiseless_fixture_gives_r2_one() {
    let d = tempdir().unwrap();
    synth(d.path(), SMALL_SYNTH);
    ok(&scuba(&["fit", "--config", "fixture/run.toml"], d.path()));
    let r2 = std::fs::read_to_string(d.path().join("fixture/out/r2.csv")).unwrap();
    for l in r2.lines().skip(1) {
        let v: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v > 0.999_999, "{l}");
    }
}

#[test]
fn bad_mode_flag_is_a_usage_error() {
    let d = tempdir().unwrap();
    let out = scuba(&["caption", "--config", "x.toml", "--mode", "sideways"], d.path());
    assert_eq!(out.status.code(), Some(2));
}
