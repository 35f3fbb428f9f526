use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use duplexbench::audio::{AudioBuffer, FrameClock};
use duplexbench::prompt::load_bundle;

const BIN: &str = env!("CARGO_BIN_EXE_duplexbench");
const RATE: u32 = 24_000;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tone(path: &Path, freq: f64, secs: f64) {
    let n = (secs * f64::from(RATE)).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(RATE);
            (8000.0 * (2.0 * std::f64::consts::PI * freq * t).sin()) as i16
        })
        .collect();
    AudioBuffer::new(samples, RATE)
        .unwrap()
        .write_wav(path)
        .unwrap();
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

/// Result records with the wall-clock step timings removed.
fn without_timing(path: &Path) -> Vec<serde_json::Value> {
    lines(path)
        .iter()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("step_ms");
            v
        })
        .collect()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "stitch",
        s(&dir.path().join("missing.toml")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let bad = run(&[
        "--jobs",
        "0",
        "eval",
        "--generate",
        "1",
        "--report",
        s(dir.path()),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn prompt_build_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let voice = dir.path().join("voice.wav");
    let role = dir.path().join("role.txt");
    tone(&voice, 180.0, 2.0);
    fs::write(&role, "You are a support agent for Acme Health\n").unwrap();
    let out = dir.path().join("bundle");
    ok(&[
        "prompt-build",
        "--voice",
        s(&voice),
        "--role",
        s(&role),
        "--out",
        s(&out),
    ]);
    let prompt = load_bundle(&out).unwrap();
    // 2 s at 12.5 Hz plus 8 words plus the delimiter.
    assert_eq!(prompt.len(), 25 + 8 + 1);
    assert_eq!(prompt.voice_span, 0..25);
    assert_eq!(lines(&out.join("vocab.tsv")).len(), 8);
    assert!(out.join("run_config.toml").is_file());

    let text_first = dir.path().join("tf");
    ok(&[
        "prompt-build",
        "--order",
        "text-first",
        "--voice",
        s(&voice),
        "--role",
        s(&role),
        "--out",
        s(&text_first),
    ]);
    assert_eq!(load_bundle(&text_first).unwrap().text_span, 0..8);
}

#[test]
fn prompt_build_rejects_unaligned_voice_unless_padded() {
    let dir = tempfile::tempdir().unwrap();
    let voice = dir.path().join("voice.wav");
    let role = dir.path().join("role.txt");
    tone(&voice, 180.0, 1.01);
    fs::write(&role, "hello").unwrap();
    let base = [
        "prompt-build",
        "--voice",
        s(&voice),
        "--role",
        s(&role),
        "--out",
    ];
    let mut args = base.to_vec();
    let out = dir.path().join("a");
    args.push(s(&out));
    assert_eq!(run(&args).status.code(), Some(2));
    args.push("--pad-voice");
    ok(&args);
    assert_eq!(load_bundle(&out).unwrap().voice_span, 0..13);
}

fn stitch_fixture(dir: &Path) -> PathBuf {
    tone(&dir.join("q.wav"), 220.0, 1.52);
    tone(&dir.join("a.wav"), 140.0, 2.0);
    let script = dir.join("dialog.toml");
    fs::write(
        &script,
        "[[turn]]\nspeaker = \"user\"\nwav = \"q.wav\"\ntranscript = \"hi\"\npad_after = -0.48\n\n\
         [[turn]]\nspeaker = \"agent\"\nwav = \"a.wav\"\ntranscript = \"hello\"\n",
    )
    .unwrap();
    script
}

#[test]
fn stitch_writes_two_aligned_channels() {
    let dir = tempfile::tempdir().unwrap();
    let script = stitch_fixture(dir.path());
    let out = dir.path().join("stitched");
    ok(&["stitch", s(&script), "--out", s(&out)]);
    let user = AudioBuffer::read_wav(out.join("user.wav")).unwrap();
    let agent = AudioBuffer::read_wav(out.join("agent.wav")).unwrap();
    assert_eq!(user.len(), agent.len());
    let clock = FrameClock::new(RATE, 12.5).unwrap();
    assert!(user.is_frame_aligned(&clock));
    let align: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("alignment.json")).unwrap()).unwrap();
    assert!(align.to_string().contains("hello"));
    assert!(out.join("run_config.toml").is_file());
}

#[test]
fn eval_generated_scenarios_and_config_replay() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&[
        "eval",
        "--generate",
        "1",
        "--agent",
        "scripted",
        "--report",
        s(&first),
    ]);
    let report = lines(&first.join("report.csv"));
    assert_eq!(report.len(), 3);
    assert_eq!(report[0], "scenario,Q0,Q1,Q2,Q3,Q4,Q5,Q6,mean");
    assert_eq!(lines(&first.join("results.jsonl")).len(), 7);
    assert_eq!(lines(&first.join("trials.csv")).len(), 8);

    let echo = first.join("run_config.toml");
    let second = dir.path().join("second");
    ok(&[
        "--config",
        s(&echo),
        "eval",
        "--generate",
        "1",
        "--agent",
        "scripted",
        "--report",
        s(&second),
    ]);
    assert_eq!(
        without_timing(&first.join("results.jsonl")),
        without_timing(&second.join("results.jsonl"))
    );
    for f in ["report.csv", "trials.csv", "run_config.toml"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn flags_after_subcommand_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "cap = 12.0\njobs = 1\n").unwrap();
    let out = dir.path().join("r");
    ok(&[
        "--config",
        s(&cfg),
        "eval",
        "--cap",
        "9",
        "--generate",
        "1",
        "--judge",
        "none",
        "--report",
        s(&out),
    ]);
    let echo = fs::read_to_string(out.join("run_config.toml")).unwrap();
    assert!(echo.contains("cap = 9.0"), "{echo}");
}

#[test]
fn report_rebuilds_from_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("eval");
    ok(&[
        "eval",
        "--generate",
        "2",
        "--agent",
        "scripted",
        "--report",
        s(&first),
    ]);
    let rebuilt = dir.path().join("rebuilt");
    ok(&[
        "report",
        "--results",
        s(&first.join("results.jsonl")),
        "--out",
        s(&rebuilt),
    ]);
    assert_eq!(
        fs::read(first.join("report.csv")).unwrap(),
        fs::read(rebuilt.join("report.csv")).unwrap()
    );
    assert_eq!(lines(&rebuilt.join("report.csv")).len(), 4);
}

#[test]
fn metrics_over_a_stitched_trial() {
    let dir = tempfile::tempdir().unwrap();
    let script = stitch_fixture(dir.path());
    let trial = dir.path().join("trials").join("t0");
    ok(&["stitch", s(&script), "--out", s(&trial)]);
    fs::write(
        trial.join("meta.toml"),
        "category = \"turn_taking\"\nanchor_time = 0.8\n",
    )
    .unwrap();
    let out = dir.path().join("metrics");
    ok(&[
        "metrics",
        "--trials",
        s(&dir.path().join("trials")),
        "--voice",
        s(&dir.path().join("a.wav")),
        "--out",
        s(&out),
    ]);
    let csv = lines(&out.join("metrics.csv"));
    assert_eq!(csv.len(), 2);
    let body: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let t = &body["trials"][0];
    assert_eq!(t["trial"], "t0");
    assert_eq!(t["took_over"], true);
    // Agent enters on the frame boundary at 1.04 s, overlapping the user.
    let latency = t["latency"].as_f64().unwrap();
    assert!((latency - 0.24).abs() < 1e-9, "{latency}");
    assert!(t["similarity"].as_f64().unwrap() > 0.9, "{t}");
    assert_eq!(lines(&out.join("events.jsonl")).len(), 1);
}

#[test]
fn eval_against_served_reference_agent() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("agent_vocab.tsv");
    let mut server = Command::new(BIN)
        .args([
            "--echo-config",
            s(&dir.path().join("serve_config.toml")),
            "serve-ref-agent",
            "--listen",
            "127.0.0.1:0",
            "--max-connections",
            "7",
            "--write-vocab",
            s(&vocab),
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .strip_prefix("listening on ")
        .and_then(|l| l.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected banner `{line}`"))
        .to_string();

    let report = dir.path().join("remote");
    let agent = format!("tcp:{addr}");
    ok(&[
        "eval",
        "--generate",
        "1",
        "--agent",
        &agent,
        "--vocab",
        s(&vocab),
        "--report",
        s(&report),
    ]);
    assert!(server.wait().unwrap().success());

    let local = dir.path().join("local");
    ok(&[
        "eval",
        "--generate",
        "1",
        "--agent",
        "scripted",
        "--report",
        s(&local),
    ]);
    let strip = |p: &Path| -> Vec<String> { lines(&p.join("report.csv")) };
    assert_eq!(strip(&report), strip(&local));
}
