use std::path::Path;
use std::process::{Command, Output};

fn cfrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfrec"))
        .args(args)
        .current_dir(dir)
        .env("CFREC_ANON_KEY", "cli-test-key")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn generate(dir: &Path) {
    let o = cfrec(
        dir,
        &[
            "generate",
            "--users",
            "80",
            "--decks",
            "20",
            "--seed",
            "4",
            "--out",
            "events.jsonl",
            "--profiles-out",
            "profiles.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cfrec(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(cfrec(dir.path(), &["popular", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        cfrec(dir.path(), &["recommend", "--store", "events.jsonl", "--user", "u1", "--alpha", "3"]).status.code(),
        Some(1)
    );
    let missing = cfrec(dir.path(), &["popular", "--store", "missing.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("cfrec: "));
}

#[test]
fn output_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d);

    let o = cfrec(
        d,
        &["recommend", "--store", "events.jsonl", "--profiles", "profiles.jsonl", "--user", "u00001", "--n", "4"],
    );
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    for line in &lines {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "{line}");
        fields[1].parse::<f64>().unwrap();
        assert!(["cf", "popularity", "hybrid"].contains(&fields[2]));
    }

    let o = cfrec(d, &["popular", "--store", "events.jsonl", "--n", "3"]);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    let scores: Vec<f64> = lines.iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let o = cfrec(d, &["predict", "--store", "events.jsonl", "--user", "u00001", "--deck", "d0003"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: f64 = stdout(&o).trim().parse().unwrap();
    assert!((1.0..=5.0).contains(&r));

    let o = cfrec(
        d,
        &["evaluate", "--store", "events.jsonl", "--seed", "1", "--out", "report.json", "--csv", "report.csv"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(csv.starts_with("variant,metric,value\n"));
}

#[test]
fn ingest_pseudonymizes_and_is_all_or_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("raw.jsonl"),
        concat!(
            r#"{"user_id":"alice","deck_id":"a","kind":"visit","timestamp":"2024-01-01T00:00:00Z"}"#,
            "\n",
            r#"{"user_id":"alice","deck_id":"b","kind":"like","timestamp":"2024-01-02T00:00:00Z"}"#,
            "\n",
        ),
    )
    .unwrap();
    let o = cfrec(d, &["ingest", "--store", "events.jsonl", "--input", "raw.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(d.join("events.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(!log.contains("alice"));
    let pseudonym = cfrec::anonymize("alice", b"cli-test-key").unwrap();
    assert!(log.contains(&pseudonym));

    std::fs::write(
        d.join("bad.jsonl"),
        concat!(
            r#"{"user_id":"bob","deck_id":"a","kind":"visit","timestamp":"2024-01-03T00:00:00Z"}"#,
            "\n",
            r#"{"user_id":"bob","deck_id":"a","kind":"rating","value":0,"timestamp":"2024-01-03T00:00:00Z"}"#,
            "\n",
        ),
    )
    .unwrap();
    let o = cfrec(d, &["ingest", "--store", "events.jsonl", "--input", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(d.join("events.jsonl")).unwrap(), log);

    let o = cfrec(d, &["popular", "--store", "events.jsonl"]);
    assert!(stdout(&o).lines().count() == 2);
    let o = cfrec(d, &["recommend", "--store", "events.jsonl", "--user", "alice", "--anonymize"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
