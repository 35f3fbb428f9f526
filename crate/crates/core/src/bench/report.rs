//! Aggregated benchmark reports: score tables, category metrics, CSV/JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, CategoryMetrics, ReferenceHistogram};

use super::judge::RUBRIC_VERSION;
use super::scenario::{question_id, QUESTIONS_PER_SCENARIO, TAG_LAYOUT};
use super::trial::{TrialResult, TrialStatus};

pub const REPORT_CSV: &str = "report.csv";
pub const TRIALS_CSV: &str = "trials.csv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    /// Judge score per question slot `Q0..Q6`.
    pub scores: Vec<Option<u8>>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub question_id: String,
    pub tag: String,
    pub mean: Option<f64>,
    pub n_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_step_ms: Option<f64>,
    pub max_step_ms: Option<f64>,
    pub budget_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rubric_version: String,
    pub judge: String,
    pub agent: String,
    pub n_trials: usize,
    pub n_failed: usize,
    pub n_truncated: usize,
    pub n_unscored: usize,
    pub rows: Vec<ScenarioRow>,
    pub questions: Vec<QuestionSummary>,
    /// Mean of the per-question means.
    pub overall_mean: Option<f64>,
    pub categories: Vec<CategoryMetrics>,
    pub timing: TimingSummary,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn slot_of(question: &str) -> Option<usize> {
    (0..QUESTIONS_PER_SCENARIO).find(|&i| question_id(i) == question)
}

/// Aggregates trial results. Rows follow first appearance of each scenario.
pub fn build_report(
    results: &[TrialResult],
    agent: &str,
    judge: &str,
    reference: &ReferenceHistogram,
) -> Result<BenchmarkReport> {
    if results.is_empty() {
        return Err(Error::invalid("report needs at least one trial result"));
    }
    let mut rows: Vec<ScenarioRow> = Vec::new();
    for r in results {
        let slot = slot_of(&r.question_id)
            .ok_or_else(|| Error::invalid(format!("unknown question id `{}`", r.question_id)))?;
        let row = match rows.iter().position(|row| row.scenario_id == r.scenario_id) {
            Some(i) => &mut rows[i],
            None => {
                rows.push(ScenarioRow {
                    scenario_id: r.scenario_id.clone(),
                    scores: vec![None; QUESTIONS_PER_SCENARIO],
                    mean: None,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        if let Some(s) = r.judge_score {
            row.scores[slot] = Some(s);
        }
    }
    for row in &mut rows {
        row.mean = mean(row.scores.iter().flatten().map(|&s| s as f64));
    }
    let questions: Vec<QuestionSummary> = (0..QUESTIONS_PER_SCENARIO)
        .map(|q| {
            let scored: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.scores[q])
                .map(f64::from)
                .collect();
            QuestionSummary {
                question_id: question_id(q),
                tag: TAG_LAYOUT[q].label().to_string(),
                mean: mean(scored.iter().copied()),
                n_scored: scored.len(),
            }
        })
        .collect();
    let overall_mean = mean(questions.iter().filter_map(|q| q.mean));

    let events: Vec<_> = results.iter().filter_map(|r| r.events.clone()).collect();
    let categories = if events.is_empty() {
        Vec::new()
    } else {
        aggregate(&events, reference)?
    };
    let steps: Vec<f64> = results
        .iter()
        .flat_map(|r| r.step_ms.iter().copied())
        .collect();
    Ok(BenchmarkReport {
        rubric_version: RUBRIC_VERSION.to_string(),
        judge: judge.to_string(),
        agent: agent.to_string(),
        n_trials: results.len(),
        n_failed: results.iter().filter(|r| r.is_failed()).count(),
        n_truncated: results.iter().filter(|r| r.truncated).count(),
        n_unscored: results.iter().filter(|r| r.judge_score.is_none()).count(),
        rows,
        questions,
        overall_mean,
        categories,
        timing: TimingSummary {
            mean_step_ms: mean(steps.iter().copied()),
            max_step_ms: steps.iter().copied().reduce(f64::max),
            budget_violations: results.iter().map(|r| r.budget_violations).sum(),
        },
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.3}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

impl BenchmarkReport {
    /// Score table: one row per scenario plus a closing row of question means.
    pub fn scores_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["scenario".to_string()];
        header.extend((0..QUESTIONS_PER_SCENARIO).map(question_id));
        header.push("mean".into());
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.scenario_id.clone()];
            rec.extend(
                row.scores
                    .iter()
                    .map(|s| s.map_or_else(String::new, |s| s.to_string())),
            );
            rec.push(fmt_opt(row.mean));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let mut rec = vec!["mean".to_string()];
        rec.extend(self.questions.iter().map(|q| fmt_opt(q.mean)));
        rec.push(fmt_opt(self.overall_mean));
        w.write_record(&rec).map_err(csv_err)?;
        into_string(w)
    }

    /// Category metrics table in TOR / latency / backchannel / JSD layout.
    pub fn categories_csv(&self) -> Result<String> {
        category_table_csv(&self.categories)
    }
}

/// Category metrics table in TOR / latency / backchannel / JSD layout.
pub fn category_table_csv(categories: &[CategoryMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "category",
        "trials",
        "with_onset",
        "tor",
        "latency_mean",
        "latency_ci95",
        "backchannel_freq",
        "backchannel_count",
        "jsd",
    ])
    .map_err(csv_err)?;
    for c in categories {
        w.write_record([
            c.category.name().to_string(),
            c.n_trials.to_string(),
            c.n_with_onset.to_string(),
            format!("{:.3}", c.tor),
            fmt_opt(c.latency_mean),
            fmt_opt(c.latency_ci95),
            fmt_opt(c.backchannel_freq),
            c.backchannel_count.to_string(),
            fmt_opt(c.jsd),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv: {e}")))
}

/// One row per trial.
pub fn trials_csv(results: &[TrialResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "question",
        "tag",
        "status",
        "error",
        "score",
        "judge_error",
        "truncated",
        "frames",
        "took_over",
        "latency",
        "backchannels",
        "transcript",
    ])
    .map_err(csv_err)?;
    for r in results {
        let (status, error) = match &r.status {
            TrialStatus::Completed => ("completed", String::new()),
            TrialStatus::Failed { error } => ("failed", error.clone()),
        };
        let ev = r.events.as_ref();
        w.write_record([
            r.scenario_id.clone(),
            r.question_id.clone(),
            r.tag.label().to_string(),
            status.to_string(),
            error,
            r.judge_score.map_or_else(String::new, |s| s.to_string()),
            r.judge_error.clone().unwrap_or_default(),
            r.truncated.to_string(),
            r.frames.to_string(),
            ev.map_or_else(String::new, |e| e.took_over().to_string()),
            fmt_opt(ev.and_then(|e| e.first_takeover().map(|o| o - e.anchor_time))),
            ev.map_or_else(String::new, |e| e.backchannels.len().to_string()),
            r.transcript.clone(),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

/// Writes `report.csv`, `categories.csv`, `trials.csv` and `report.json`.
pub fn write_report(
    report: &BenchmarkReport,
    results: &[TrialResult],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = [
        (REPORT_CSV, report.scores_csv()?),
        ("categories.csv", report.categories_csv()?),
        (TRIALS_CSV, trials_csv(results)?),
        (REPORT_JSON, serde_json::to_string_pretty(report)? + "\n"),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

/// Reads trial results written as JSON lines.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_results(results: &[TrialResult], path: impl AsRef<Path>) -> Result<()> {
    let mut body = String::new();
    for r in results {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::scenario::QuestionTag;

    pub(crate) fn scored(scenario: &str, q: usize, score: Option<u8>) -> TrialResult {
        TrialResult {
            scenario_id: scenario.into(),
            question_id: question_id(q),
            tag: TAG_LAYOUT[q],
            status: TrialStatus::Completed,
            transcript: String::new(),
            agent_text_ids: Vec::new(),
            events: None,
            judge_score: score,
            judge_error: None,
            truncated: false,
            frames: 0,
            step_ms: vec![1.0, 3.0],
            budget_violations: 0,
            agent_audio: None,
        }
    }

    fn report(results: &[TrialResult]) -> BenchmarkReport {
        build_report(results, "test", "offline", &ReferenceHistogram::uniform(10)).unwrap()
    }

    #[test]
    fn single_score() {
        let r = report(&[scored("a", 0, Some(4))]);
        assert_eq!(r.rows[0].mean, Some(4.0));
        assert_eq!(r.overall_mean, Some(4.0));
        assert_eq!(r.timing.mean_step_ms, Some(2.0));
        assert_eq!(r.timing.max_step_ms, Some(3.0));
    }

    #[test]
    fn two_questions_mean() {
        let r = report(&[scored("a", 0, Some(4)), scored("a", 1, Some(2))]);
        assert_eq!(r.rows[0].scores[0], Some(4));
        assert_eq!(r.rows[0].scores[1], Some(2));
        assert_eq!(r.rows[0].mean, Some(3.0));
        assert_eq!(r.overall_mean, Some(3.0));
        assert_eq!(r.questions[1].tag, QuestionTag::ContextDetails.label());
    }

    #[test]
    fn overall_is_mean_of_question_means() {
        let mut results = Vec::new();
        for (i, s) in ["a", "b", "c"].iter().enumerate() {
            for q in 0..QUESTIONS_PER_SCENARIO {
                results.push(scored(s, q, Some(((i * 3 + q * 5) % 5 + 1) as u8)));
            }
        }
        let r = report(&results);
        let qm: Vec<f64> = r.questions.iter().map(|q| q.mean.unwrap()).collect();
        let expect = qm.iter().sum::<f64>() / qm.len() as f64;
        assert!((r.overall_mean.unwrap() - expect).abs() < 1e-12);
        let all: f64 = results
            .iter()
            .map(|t| t.judge_score.unwrap() as f64)
            .sum::<f64>()
            / results.len() as f64;
        assert!((r.overall_mean.unwrap() - all).abs() < 1e-12);
    }

    #[test]
    fn csv_shape_and_order() {
        let mut results = Vec::new();
        for s in ["z", "a"] {
            for q in 0..QUESTIONS_PER_SCENARIO {
                results.push(scored(s, q, if q == 6 { None } else { Some(3) }));
            }
        }
        results.push(TrialResult {
            status: TrialStatus::Failed {
                error: "peer, \"gone\"".into(),
            },
            ..scored("a", 6, None)
        });
        let r = report(&results);
        assert_eq!(r.n_unscored, 3);
        assert_eq!(r.n_failed, 1);
        let table = r.scores_csv().unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "scenario,Q0,Q1,Q2,Q3,Q4,Q5,Q6,mean");
        assert!(lines[1].starts_with("z,3,3,3,3,3,3,,3.000"));
        assert!(lines[2].starts_with("a,"));
        assert_eq!(lines[3], "mean,3.000,3.000,3.000,3.000,3.000,3.000,,3.000");
        let trials = trials_csv(&results).unwrap();
        let mut rd = csv::Reader::from_reader(trials.as_bytes());
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 15);
        assert_eq!(&recs[14][4], "peer, \"gone\"");
    }

    #[test]
    fn results_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.jsonl");
        let results = vec![scored("a", 0, Some(5)), scored("a", 3, None)];
        write_results(&results, &p).unwrap();
        assert_eq!(read_results(&p).unwrap(), results);
        let files = write_report(&report(&results), &results, dir.path().join("out")).unwrap();
        assert_eq!(files.len(), 4);
        assert!(files.iter().all(|f| f.exists()));
    }

    #[test]
    fn empty_results_rejected() {
        assert!(build_report(&[], "a", "j", &ReferenceHistogram::uniform(10)).is_err());
    }
}
