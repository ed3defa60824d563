use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_driftwatch"));
    cmd.env_remove("DRIFTWATCH_CONFIG");
    cmd
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn bing() -> PathBuf {
    fixture("../core/fixtures/bing_sample.tsv")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_owned)
        .collect()
}

/// Neutral posts (score 0) against θ₀ = −0.5 add 0.125 per step to the
/// upward side, so h = 2 fires once at post 16.
fn watch_single_alarm(out: &Path, extra: &[&str]) -> Output {
    run(bin()
        .arg("watch")
        .arg("--source")
        .arg(fixture("tests/fixtures/single_alarm.ndjson"))
        .arg("--lexicon")
        .arg(bing())
        .args(["--threshold", "2"])
        .arg("--output-dir")
        .arg(out)
        .args(extra))
}

fn write_scores(path: &Path, values: &[f64]) {
    let mut s = String::from("seq,timestamp,score\r\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},2018-03-15T00:{:02}:{:02}Z,{v}\r\n", i / 60, i % 60));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn watch_reports_single_alarm() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = watch_single_alarm(&out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let events = lines(&out.join("events.ndjson"));
    assert_eq!(events.len(), 1);
    let ev: serde_json::Value = serde_json::from_str(&events[0]).unwrap();
    assert_eq!(ev["index"], 16);
    assert_eq!(ev["direction"], "positive");
    assert_eq!(lines(&out.join("scores.csv")).len(), 21);

    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.contains("\"positive\""));
}

#[test]
fn empty_source_is_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("empty.ndjson");
    fs::write(&src, "").unwrap();
    let out = tmp.path().join("run");
    let o = run(bin()
        .arg("watch")
        .arg("--source")
        .arg(&src)
        .arg("--lexicon")
        .arg(bing())
        .arg("--output-dir")
        .arg(&out));
    assert!(o.status.success());
    assert_eq!(lines(&out.join("scores.csv")), ["seq,timestamp,score"]);
    assert!(lines(&out.join("events.ndjson")).is_empty());
}

#[test]
fn missing_lexicon_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = run(bin()
        .arg("watch")
        .arg("--source")
        .arg(fixture("tests/fixtures/single_alarm.ndjson"))
        .arg("--lexicon")
        .arg(tmp.path().join("nope.tsv"))
        .arg("--output-dir")
        .arg(&out));
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn missing_source_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("watch")
        .arg("--source")
        .arg(tmp.path().join("nope.ndjson"))
        .arg("--lexicon")
        .arg(bing())
        .arg("--output-dir")
        .arg(tmp.path().join("run")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_exits_1() {
    let o = run(bin().args(["watch", "--no-such-flag"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let cfg = serde_json::json!({
        "source": {"kind": "file-replay", "location": fixture("tests/fixtures/single_alarm.ndjson")},
        "lexicon": {"path": bing(), "kind": "binary"},
        "detector": {"h": 2.0},
        "output_dir": out,
    });
    let cfg_path = tmp.path().join("run.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let o = run(bin().arg("watch").env("DRIFTWATCH_CONFIG", &cfg_path));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&out.join("events.ndjson")).len(), 1);
}

#[test]
fn analyze_finds_step_change() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("scores.csv");
    let values: Vec<f64> = [0.0; 100].into_iter().chain([5.0; 100]).collect();
    write_scores(&scores, &values);
    let out = tmp.path().join("analysis");
    let o = run(bin().arg("analyze").arg(&scores).arg("--output-dir").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let seg: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("segmentation.json")).unwrap()).unwrap();
    assert_eq!(seg["changepoints"], serde_json::json!([100]));
    assert!(out.join("histogram.csv").exists());
    assert!(out.join("series.svg").exists());
    assert!(!out.join("comparison.json").exists());
}

#[test]
fn short_series_has_no_moving_average() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("scores.csv");
    write_scores(&scores, &[1.0, -1.0, 2.0, 0.0]);
    let out = tmp.path().join("analysis");
    let o = run(bin().arg("analyze").arg(&scores).args(["--window", "10"]).arg("--output-dir").arg(&out));
    assert!(o.status.success());
    let ma = lines(&out.join("moving_average.csv"));
    assert_eq!(ma.len(), 5);
    assert!(ma[1..].iter().all(|l| l.ends_with(',')), "{ma:?}");
}

#[test]
fn analyze_compares_with_events() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert!(watch_single_alarm(&run_dir, &[]).status.success());
    let out = tmp.path().join("analysis");
    let o = run(bin()
        .arg("analyze")
        .arg(run_dir.join("scores.csv"))
        .arg("--events")
        .arg(run_dir.join("events.ndjson"))
        .arg("--output-dir")
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert!(cmp.get("matched").is_some());
}

fn report(run_dir: &Path, events: &Path, out: &Path) -> Output {
    run(bin()
        .arg("report")
        .arg(run_dir.join("scores.csv"))
        .arg(events)
        .arg(run_dir.join("tokens.ndjson"))
        .arg("--output-dir")
        .arg(out))
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(ext))
        .collect();
    names.sort();
    names
}

#[test]
fn report_per_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert!(watch_single_alarm(&run_dir, &["--tokens"]).status.success());

    let out = tmp.path().join("report");
    let o = report(&run_dir, &run_dir.join("events.ndjson"), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files_with_ext(&out, ".csv").len(), 2);
    assert_eq!(files_with_ext(&out, ".svg").len(), 3);

    let again = tmp.path().join("report2");
    assert!(report(&run_dir, &run_dir.join("events.ndjson"), &again).status.success());
    for name in files_with_ext(&out, "") {
        assert_eq!(fs::read(out.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name}");
    }

    let none = tmp.path().join("none.ndjson");
    fs::write(&none, "").unwrap();
    let single = tmp.path().join("single");
    assert!(report(&run_dir, &none, &single).status.success());
    assert_eq!(files_with_ext(&single, ".csv").len(), 1);
}

#[test]
fn report_rejects_mismatched_tokens() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert!(watch_single_alarm(&run_dir, &["--tokens"]).status.success());
    let tokens = run_dir.join("tokens.ndjson");
    let kept: Vec<String> = lines(&tokens).into_iter().take(5).collect();
    fs::write(&tokens, kept.join("\n") + "\n").unwrap();
    let o = report(&run_dir, &run_dir.join("events.ndjson"), &tmp.path().join("report"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn arl_prints_json() {
    let o = run(bin().args(["arl", "--runs", "20", "--threshold", "4", "--seed", "1"]));
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["runs"], 20);
    assert!(v["mean_run_length"].as_f64().unwrap() > 1.0);
}
