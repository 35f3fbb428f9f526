//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use duplexbench::agents::WireConfig;
use duplexbench::audio::AudioBuffer;
use duplexbench::bench::report::{
    build_report, category_table_csv, read_results, write_report, write_results,
};
use duplexbench::bench::{generate_scenarios, load_scenarios, run_benchmark, Judge, OfflineJudge};
use duplexbench::codec::ToyCodec;
use duplexbench::metrics::{
    aggregate, speaker_similarity, ExternalEmbeddings, ReferenceEmbedder, ReferenceHistogram,
    HISTOGRAM_BINS,
};
use duplexbench::prompt::{build_hybrid_prompt, save_bundle, HybridPromptSpec};
use duplexbench::stitch::{stitch, write_stitched, DialogScript, AGENT_WAV, USER_WAV};
use duplexbench::text::Vocabulary;
use duplexbench::vad::{active_speech, extract_events, TrialEvents, TrialMeta};
use duplexbench::Error;

use crate::agent::{factory, local_only, AgentSpec};
use crate::config::{RunConfig, CONFIG_ECHO};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRIAL_META: &str = "meta.toml";

fn echo(cfg: &RunConfig, explicit: Option<&Path>, dir: &Path) -> Result<PathBuf> {
    let path = explicit.map_or_else(|| dir.join(CONFIG_ECHO), Path::to_path_buf);
    cfg.write_echo(&path)?;
    Ok(path)
}

fn reference(cfg: &RunConfig) -> Result<ReferenceHistogram> {
    Ok(match &cfg.reference_histogram {
        Some(p) => ReferenceHistogram::load(p)
            .with_context(|| format!("reading reference histogram {}", p.display()))?,
        None => ReferenceHistogram::uniform(HISTOGRAM_BINS),
    })
}

pub struct PromptBuild<'a> {
    pub voice: &'a Path,
    pub role: &'a Path,
    pub vocab: Option<&'a Path>,
    pub pad_voice: bool,
    pub out: &'a Path,
}

pub fn prompt_build(
    cfg: &RunConfig,
    args: PromptBuild<'_>,
    echo_path: Option<&Path>,
) -> Result<()> {
    let clock = cfg.clock()?;
    let codec = ToyCodec::new(clock, cfg.codebooks)?;
    let mut voice = AudioBuffer::read_wav(args.voice)
        .with_context(|| format!("reading voice sample {}", args.voice.display()))?;
    voice.check_rate(&clock)?;
    if args.pad_voice {
        voice = voice.padded_to_frames(&clock);
    }
    let role_text = fs::read_to_string(args.role)
        .with_context(|| format!("reading role text {}", args.role.display()))?;
    let mut vocab = match args.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::new(),
    };
    let role = vocab.tokenize_growing(&role_text)?;
    let spec = HybridPromptSpec::new(voice, role).with_order(cfg.order);
    let prompt = build_hybrid_prompt(&spec, &codec)?;
    save_bundle(&prompt, args.out)?;
    vocab.save(args.out.join(VOCAB_FILE))?;
    echo(cfg, echo_path, args.out)?;
    println!(
        "wrote {}: {} frames (voice {}, text {}, delimiter 1)",
        args.out.display(),
        prompt.len(),
        prompt.voice_span.len(),
        prompt.text_span.len()
    );
    Ok(())
}

pub fn stitch_cmd(
    cfg: &RunConfig,
    script: &Path,
    out: &Path,
    echo_path: Option<&Path>,
) -> Result<()> {
    let clock = cfg.clock()?;
    let parsed = DialogScript::load(script)
        .with_context(|| format!("reading dialog script {}", script.display()))?;
    let base = script.parent().unwrap_or(Path::new("."));
    let turns = parsed.to_turns(base)?;
    let dialog = stitch(&turns, &clock)?;
    write_stitched(&dialog, &clock, out)?;
    echo(cfg, echo_path, out)?;
    println!(
        "wrote {}: {} turns, {:.3} s, {} overlaps",
        out.display(),
        dialog.alignment.len(),
        dialog.duration(),
        dialog.overlaps.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum JudgeMode {
    Offline,
    Remote,
    None,
}

pub struct Eval<'a> {
    pub scenarios: Option<&'a Path>,
    pub generate: Option<usize>,
    pub agent: &'a AgentSpec,
    pub reply: &'a str,
    pub vocab: Option<&'a Path>,
    pub judge: JudgeMode,
    pub connect_timeout: f64,
    pub report: &'a Path,
}

pub fn eval(cfg: &RunConfig, args: Eval<'_>, echo_path: Option<&Path>) -> Result<()> {
    let opts = cfg.trial_options()?;
    let scenarios = match (args.scenarios, args.generate) {
        (Some(p), None) => load_scenarios(p)?,
        (None, Some(n)) => generate_scenarios(n),
        _ => bail!("give exactly one of --scenarios or --generate"),
    };
    if scenarios.is_empty() {
        bail!("no scenarios to run");
    }
    let vocabulary = args.vocab.map(Vocabulary::load).transpose()?;
    let wire = WireConfig {
        clock: opts.clock,
        codebooks: u32::try_from(cfg.codebooks)?,
    };
    let make = factory(
        args.agent,
        wire,
        args.reply,
        vocabulary,
        Duration::from_secs_f64(args.connect_timeout),
    )?;
    let remote;
    let judge: Option<&dyn Judge> = match args.judge {
        JudgeMode::Offline => Some(&OfflineJudge),
        JudgeMode::Remote => {
            remote = cfg.remote_judge()?;
            Some(&remote)
        }
        JudgeMode::None => None,
    };
    let judge_name = judge.map_or_else(|| "none".to_string(), |j| j.id());
    let results = run_benchmark(&scenarios, &*make, judge, &opts, cfg.jobs)?;

    fs::create_dir_all(args.report)?;
    write_results(&results, args.report.join(RESULTS_FILE))?;
    let report = build_report(&results, &args.agent.name(), &judge_name, &reference(cfg)?)?;
    write_report(&report, &results, args.report)?;
    echo(cfg, echo_path, args.report)?;
    println!(
        "{} trials over {} scenarios: {} failed, {} truncated, {} unscored",
        report.n_trials,
        scenarios.len(),
        report.n_failed,
        report.n_truncated,
        report.n_unscored
    );
    match report.overall_mean {
        Some(m) => println!("mean score {m:.3} ({judge_name})"),
        None => println!("no scored trials"),
    }
    for c in &report.categories {
        println!(
            "{}: TOR {:.3} over {} trials",
            c.category.name(),
            c.tor,
            c.n_trials
        );
    }
    println!("report written to {}", args.report.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrialSummary {
    trial: String,
    category: String,
    took_over: bool,
    latency: Option<f64>,
    backchannels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    similarity_error: Option<String>,
}

/// Trial directories below `root`, or `root` itself when it holds a trial.
fn trial_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(TRIAL_META).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading trials directory {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TRIAL_META).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!(
            "no trial directories with {TRIAL_META} under {}",
            root.display()
        );
    }
    Ok(dirs)
}

pub struct Metrics<'a> {
    pub trials: &'a Path,
    pub voice: Option<&'a Path>,
    pub embeddings: Option<&'a Path>,
    pub prompt_id: &'a str,
    pub out: &'a Path,
}

pub fn metrics(cfg: &RunConfig, args: Metrics<'_>, echo_path: Option<&Path>) -> Result<()> {
    let clock = cfg.clock()?;
    let params = cfg.event_params();
    let voice = args.voice.map(AudioBuffer::read_wav).transpose()?;
    let external = args.embeddings.map(ExternalEmbeddings::load).transpose()?;
    let embedder = ReferenceEmbedder::new();
    let mut events: Vec<TrialEvents> = Vec::new();
    let mut summaries = Vec::new();
    for dir in trial_dirs(args.trials)? {
        let name = dir
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let user = AudioBuffer::read_wav(dir.join(USER_WAV))?;
        let agent = AudioBuffer::read_wav(dir.join(AGENT_WAV))?;
        let meta = TrialMeta::load(dir.join(TRIAL_META))
            .with_context(|| format!("reading {}", dir.join(TRIAL_META).display()))?;
        let ev = extract_events(&user, &agent, &meta, &clock, &params)
            .with_context(|| format!("trial {name}"))?;
        let sim = match (&external, &voice) {
            (Some(ext), _) => Some(ext.similarity(args.prompt_id, &name)),
            (None, Some(v)) => {
                let speech = active_speech(&agent, &clock, &params.vad);
                Some(if speech.duration() < embedder.min_duration {
                    Err(Error::UndefinedMetric(format!(
                        "agent speech is {:.2} s, similarity needs {:.2} s",
                        speech.duration(),
                        embedder.min_duration
                    )))
                } else {
                    speaker_similarity(v, &speech, &embedder).map(|s| s.similarity)
                })
            }
            (None, None) => None,
        };
        let (similarity, similarity_error) = match sim {
            Some(Ok(s)) => (Some(s), None),
            Some(Err(e @ Error::UndefinedMetric(_))) => (None, Some(e.to_string())),
            Some(Err(e)) => return Err(e).with_context(|| format!("similarity for trial {name}")),
            None => (None, None),
        };
        summaries.push(TrialSummary {
            trial: name,
            category: ev.category.name().into(),
            took_over: ev.took_over(),
            latency: ev.first_takeover().map(|o| o - ev.anchor_time),
            backchannels: ev.backchannels.len(),
            similarity,
            similarity_error,
        });
        events.push(ev);
    }
    let categories = aggregate(&events, &reference(cfg)?)?;
    fs::create_dir_all(args.out)?;
    fs::write(
        args.out.join("metrics.csv"),
        category_table_csv(&categories)?,
    )?;
    let mut lines = String::new();
    for (s, e) in summaries.iter().zip(&events) {
        lines.push_str(&serde_json::to_string(
            &serde_json::json!({"trial": s.trial, "events": e}),
        )?);
        lines.push('\n');
    }
    fs::write(args.out.join("events.jsonl"), lines)?;
    let body = serde_json::json!({"categories": categories, "trials": summaries});
    fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&body)? + "\n",
    )?;
    echo(cfg, echo_path, args.out)?;
    for c in &categories {
        let lat = c
            .latency_mean
            .map_or_else(|| "-".into(), |l| format!("{l:.3} s"));
        println!(
            "{}: {} trials, TOR {:.3}, latency {lat}",
            c.category.name(),
            c.n_trials,
            c.tor
        );
    }
    println!("metrics written to {}", args.out.display());
    Ok(())
}

pub fn report(
    cfg: &RunConfig,
    results: &Path,
    out: &Path,
    agent: &str,
    judge: &str,
    echo_path: Option<&Path>,
) -> Result<()> {
    let trials =
        read_results(results).with_context(|| format!("reading results {}", results.display()))?;
    let report = build_report(&trials, agent, judge, &reference(cfg)?)?;
    write_report(&report, &trials, out)?;
    echo(cfg, echo_path, out)?;
    println!(
        "{} trials, {} scenario rows, mean {}; written to {}",
        report.n_trials,
        report.rows.len(),
        report
            .overall_mean
            .map_or_else(|| "-".into(), |m| format!("{m:.3}")),
        out.display()
    );
    Ok(())
}

pub struct Serve<'a> {
    pub listen: &'a str,
    pub agent: &'a AgentSpec,
    pub reply: &'a str,
    pub max_connections: Option<usize>,
    pub write_vocab: Option<&'a Path>,
}

pub fn serve(cfg: &RunConfig, args: Serve<'_>, echo_path: Option<&Path>) -> Result<()> {
    local_only(args.agent)?;
    let clock = cfg.clock()?;
    let wire = WireConfig {
        clock,
        codebooks: u32::try_from(cfg.codebooks)?,
    };
    let make = factory(args.agent, wire, args.reply, None, Duration::from_secs(10))?;
    if let Some(p) = args.write_vocab {
        let agent = make()?;
        let vocab = agent.vocabulary().cloned().unwrap_or_default();
        vocab.save(p)?;
    }
    echo(cfg, echo_path, Path::new("."))?;
    let listener =
        TcpListener::bind(args.listen).with_context(|| format!("binding {}", args.listen))?;
    let addr = listener.local_addr()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "listening on {addr} ({})", args.agent.name())?;
    out.flush()?;
    drop(out);
    duplexbench::agents::wire::serve_tcp(listener, wire, make, args.max_connections)?;
    Ok(())
}
