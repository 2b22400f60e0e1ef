use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn semimart(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semimart"))
        .args(args)
        .env("SEMIMART_OUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

#[test]
fn canonical_tree_generate_detect_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = semimart(
        dir.path(),
        &[
            "generate",
            "--kind",
            "rademacher-bm",
            "--level",
            "1",
            "--seed",
            "7",
        ],
    );
    assert_eq!(code(&out), 0, "{}", text(&out));
    let file = dir.path().join("rademacher_bm_L1_seed7.jsonl");
    let lines: Vec<String> = fs::read_to_string(&file)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 5);
    for line in &lines[1..] {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["probability"]["numerator"], 1);
        assert_eq!(v["probability"]["log2_denominator"], 2);
    }

    let f = file.to_str().unwrap();
    let out = semimart(dir.path(), &["detect", f]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let report_path = dir.path().join("rademacher_bm_L1_seed7.report.json");
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["verdict"], "SemimartingaleCertificate");
    for row in report["certificate"]["a"]["values"].as_array().unwrap() {
        assert!(row
            .as_array()
            .unwrap()
            .iter()
            .all(|v| v.as_f64() == Some(0.0)));
    }

    let r = report_path.to_str().unwrap();
    let out = semimart(dir.path(), &["verify", r, f]);
    assert_eq!(code(&out), 0, "{}", text(&out));
}

#[test]
fn tampered_report_exits_one_naming_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("drift.jsonl");
    let report = dir.path().join("drift.report.json");
    let (f, r) = (file.to_str().unwrap(), report.to_str().unwrap());
    assert_eq!(
        code(&semimart(
            dir.path(),
            &["generate", "--kind", "drifted", "--level", "2", "--out", f]
        )),
        0
    );
    assert_eq!(code(&semimart(dir.path(), &["detect", f, "--out", r])), 0);

    let mut v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let cell = &mut v["certificate"]["a"]["values"][3][1];
    *cell = Value::from(cell.as_f64().unwrap() + 1e-3);
    fs::write(&report, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let out = semimart(dir.path(), &["verify", r, f]);
    assert_eq!(code(&out), 1);
    assert!(
        text(&out).contains("FAIL M + A = S^alpha"),
        "{}",
        text(&out)
    );
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for i in 0..2 {
        let file = dir.path().join(format!("rl{i}.jsonl"));
        let report = dir.path().join(format!("rl{i}.report.json"));
        let (f, r) = (file.to_str().unwrap(), report.to_str().unwrap());
        let args = [
            "generate",
            "--kind",
            "rl-fractional",
            "--level",
            "6",
            "--mode",
            "ensemble",
            "--paths",
            "500",
            "--seed",
            "11",
            "--out",
            f,
        ];
        assert_eq!(code(&semimart(dir.path(), &args)), 0);
        let out = semimart(dir.path(), &["detect", f, "--out", r, "--min-level", "3"]);
        assert!(matches!(code(&out), 0 | 3), "{}", text(&out));
        bodies.push((fs::read(&file).unwrap(), fs::read(&report).unwrap()));
        let out = semimart(dir.path(), &["verify", r, f]);
        assert_eq!(code(&out), 0, "{}", text(&out));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn inconclusive_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bm.jsonl");
    let f = file.to_str().unwrap();
    let args = [
        "generate",
        "--kind",
        "rademacher-bm",
        "--level",
        "5",
        "--mode",
        "ensemble",
        "--paths",
        "200",
        "--out",
        f,
    ];
    assert_eq!(code(&semimart(dir.path(), &args)), 0);
    let out = semimart(dir.path(), &["detect", f]);
    assert_eq!(code(&out), 3, "{}", text(&out));
    assert!(text(&out).contains("Inconclusive"));
    let out = semimart(
        dir.path(),
        &[
            "verify",
            dir.path().join("bm.report.json").to_str().unwrap(),
            f,
        ],
    );
    assert_eq!(code(&out), 0, "{}", text(&out));
}

#[test]
fn malformed_input_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.jsonl");
    let f = file.to_str().unwrap();
    assert_eq!(
        code(&semimart(
            dir.path(),
            &[
                "generate",
                "--kind",
                "rademacher-bm",
                "--level",
                "1",
                "--out",
                f
            ]
        )),
        0
    );
    let body = fs::read_to_string(&file).unwrap();
    fs::write(
        &file,
        body.replacen("\"5.0000000000000000e-1\"", "\"oops\"", 1),
    )
    .unwrap();
    let out = semimart(dir.path(), &["detect", f]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("line 2: path[1]"), "{}", text(&out));

    let out = semimart(
        dir.path(),
        &[
            "generate",
            "--kind",
            "rl-fractional",
            "--hurst",
            "1.5",
            "--level",
            "2",
        ],
    );
    assert_eq!(code(&out), 2);
    let out = semimart(
        dir.path(),
        &["generate", "--kind", "rademacher-bm", "--level", "6"],
    );
    assert_eq!(code(&out), 2, "exact mode is capped");
}

#[test]
fn decompose_and_probe_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("d.jsonl");
    let f = file.to_str().unwrap();
    let args = [
        "generate",
        "--kind",
        "deterministic-drift",
        "--level",
        "1",
        "--scale",
        "0.5",
        "--out",
        f,
    ];
    assert_eq!(code(&semimart(dir.path(), &args)), 0);
    let csv = dir.path().join("d.csv");
    let out = semimart(
        dir.path(),
        &[
            "decompose",
            f,
            "--level",
            "1",
            "--csv",
            csv.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", text(&out));
    let dump: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("d.L1.decomposition.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        dump["a"]["values"],
        serde_json::json!([[0.0], [0.25], [0.5]])
    );
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 4);

    let out = semimart(dir.path(), &["probe", f, "--delta", "0.2", "--max-k", "4"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let tails: Vec<f64> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(tails, vec![1.0, 1.0, 0.0, 0.0]);
}
