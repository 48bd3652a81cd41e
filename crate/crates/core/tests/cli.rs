//! The command-line tool run as a subprocess.

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqplace::checkpoint::{decode_composer, encode_composer, load_composer};
use seqplace::{Composer, ComposerKind};

fn seqplace(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqplace"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = seqplace(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(cwd: &Path, args: &[&str]) -> (i32, String) {
    let out = seqplace(cwd, args);
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

const SMALL: &[&str] = &["--places", "30", "--dim", "6", "--conditions", "3"];

fn gen(cwd: &Path, dir: &str, extra: &[&str]) {
    let mut args = vec!["--seed", "5", "--out-dir", dir, "gen"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(cwd, &args);
}

#[test]
fn identity_world_matches_everything_unperturbed() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    gen(cwd, "world", &["--sigma-a", "0", "--sigma-eps", "0"]);
    ok(cwd, &["--out-dir", "ev", "eval", "--store", "world", "--raw", "3", "--matrix"]);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cwd.join("ev/report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    let nt: Vec<f64> = rows
        .iter()
        .filter(|r| r["experiment"] == "NT")
        .map(|r| r["precision"].as_f64().unwrap())
        .collect();
    assert_eq!(nt, [1.0, 1.0]);
    let matrix = std::fs::read_to_string(cwd.join("ev/matrix_raw-grouping.csv")).unwrap();
    assert_eq!(matrix, "query_cond,0,1,2\n0,,1,1\n1,1,,1\n2,1,1,\n");
}

#[test]
fn zero_epochs_keeps_initial_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    gen(cwd, "world", &[]);
    for kind in ComposerKind::ALL {
        ok(
            cwd,
            &[
                "--seed", "9", "--out-dir", "ck", "train", "--store", "world", "--kind", kind.as_str(),
                "--epochs", "0", "--n", "3", "--descriptor-dim", "4",
            ],
        );
        let got = load_composer(&cwd.join(format!("ck/{kind}.spw"))).unwrap();
        let init = Composer::init(kind, 3, 6, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        // checkpoints hold f32 weights
        let want = decode_composer(&encode_composer(&init)).unwrap();
        assert_eq!(got, want, "{kind}");
    }
}

fn pipeline(cwd: &Path) {
    gen(cwd, "world", &[]);
    for kind in ["grouping", "fusion", "recurrent"] {
        ok(
            cwd,
            &[
                "--seed", "3", "--out-dir", "ck", "train", "--store", "world", "--kind", kind,
                "--epochs", "2", "--triplets-per-epoch", "40", "--descriptor-dim", "8",
            ],
        );
    }
    ok(cwd, &["--out-dir", "ix", "index", "--store", "world", "--checkpoint", "ck/fusion.spw"]);
    ok(
        cwd,
        &["--out-dir", "ix", "query", "--store", "world", "--index", "ix/index.spw", "--checkpoint", "ck/fusion.spw"],
    );
    ok(cwd, &["--seed", "3", "--out-dir", "ev", "eval", "--store", "world", "--checkpoints", "ck", "--raw", "3"]);
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for file in [
        "world/cond0.spf",
        "world/ground_truth.json",
        "ck/grouping.spw",
        "ck/fusion.spw",
        "ck/recurrent.spw",
        "ck/recurrent_loss.csv",
        "ix/index.spw",
        "ix/matches.csv",
        "ev/report.json",
        "ev/report.csv",
        "ev/config.json",
    ] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    std::fs::write(cwd.join("run.json"), r#"{"seed": 4, "world": {"num_places": 12, "dim": 3}}"#).unwrap();
    ok(cwd, &["--config", "run.json", "--out-dir", "w", "gen", "--dim", "5"]);
    let echo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cwd.join("w/config.json")).unwrap()).unwrap();
    assert_eq!(echo["config"]["world"]["num_places"], 12);
    assert_eq!(echo["config"]["world"]["dim"], 5);
    assert_eq!(echo["config"]["world"]["rng_seed"], 4);
    assert_eq!(echo["config"]["train"]["rng_seed"], 4);

    std::fs::write(cwd.join("bad.json"), r#"{"world": {"places": 12}}"#).unwrap();
    let (c, err) = code(cwd, &["--config", "bad.json", "gen"]);
    assert_eq!(c, 4, "{err}");
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    gen(cwd, "world", &[]);
    ok(cwd, &["--out-dir", "ix", "index", "--store", "world", "--raw", "1"]);
    std::fs::write(cwd.join("junk.spf"), b"SPF1\x03\0\0\0").unwrap();
    let cases: [(&[&str], i32, &str); 8] = [
        (&["eval", "--store", "nowhere"], 2, "missing_params"),
        (&["eval", "--store", "nowhere", "--raw", "3"], 3, "io"),
        (&["index", "--store", "junk.spf", "--raw", "1"], 4, "header"),
        (&["index", "--store", "world", "--raw", "1", "--condition", "9"], 2, "unknown_condition"),
        (&["train", "--store", "world", "--kind", "fusion", "--lr=-1"], 2, "config"),
        (&["index", "--store", "world", "--raw", "40"], 2, "config"),
        (&["--out-dir", "q", "query", "--store", "world", "--index", "ix/index.spw", "--raw", "2"], 6, "shape"),
        (&["gen", "--places", "0"], 2, "config"),
    ];
    for (args, want, kind) in cases {
        let (c, err) = code(cwd, args);
        assert_eq!(c, want, "{args:?}: {err}");
        let line = err.lines().last().unwrap();
        assert!(line.starts_with(&format!("error: kind={kind} code={want} message=")), "{line}");
    }
    let (c, _) = code(cwd, &["train", "--store", "world", "--kind", "lstm"]);
    assert_eq!(c, 2);
    let (c, _) = code(cwd, &["frobnicate"]);
    assert_eq!(c, 2);
}
