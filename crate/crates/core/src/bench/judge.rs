//! Scoring agent transcripts on a 1–5 scale.

use std::env;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::scenario::{QuestionTag, Scenario};
use super::trial::TrialResult;

/// Version of the rubric prompt and offline rules; recorded in reports.
pub const RUBRIC_VERSION: &str = "service-rubric/1";
pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

pub const RUBRIC_SYSTEM: &str = "You grade replies of a customer-service voice agent. \
Score how well the reply follows the agent's role and the facts in its context, \
on an integer scale from 1 (fails the task) to 5 (ideal reply). \
Answer with the integer only.";

pub trait Judge: Send + Sync {
    fn id(&self) -> String;

    /// Scores a non-empty transcript.
    fn score(&self, scenario: &Scenario, question: usize, transcript: &str) -> Result<u8>;
}

/// Scores a trial in place. An empty transcript scores the minimum without
/// consulting the judge; judge failures leave the score absent.
pub fn judge_result(result: &mut TrialResult, scenario: &Scenario, judge: &dyn Judge) {
    let q = scenario
        .questions
        .iter()
        .position(|q| q.id == result.question_id);
    let Some(q) = q else {
        result.judge_error = Some(format!("question {} not in scenario", result.question_id));
        return;
    };
    if result.transcript.trim().is_empty() {
        result.judge_score = Some(MIN_SCORE);
        return;
    }
    match judge.score(scenario, q, &result.transcript) {
        Ok(s) => result.judge_score = Some(s),
        Err(e) => {
            result.judge_score = None;
            result.judge_error = Some(e.to_string());
        }
    }
}

/// User message of the remote rubric.
pub fn rubric_prompt(scenario: &Scenario, question: usize, transcript: &str) -> String {
    let q = &scenario.questions[question];
    format!(
        "Agent context:\n{}\n\nQuestion type: {}\nCustomer said: \"{}\"\nAgent replied: \"{}\"\n\n\
         Score the reply from 1 to 5.",
        scenario.render_context(),
        q.tag.label(),
        q.utterance,
        transcript
    )
}

/// Extracts the first standalone integer in `1..=5`.
pub fn parse_score(reply: &str) -> Result<u8> {
    reply
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .find_map(|t| {
            t.parse::<u8>()
                .ok()
                .filter(|v| (MIN_SCORE..=MAX_SCORE).contains(v))
        })
        .ok_or_else(|| Error::JudgeParse(format!("no score between 1 and 5 in reply `{reply}`")))
}

const REFUSAL: &[&str] = &[
    "cannot",
    "can't",
    "can not",
    "unable",
    "not able",
    "not possible",
    "unfortunately",
    "requires",
    "sorry",
];
const POLITE: &[&str] = &[
    "understand",
    "sorry",
    "apologize",
    "appreciate",
    "happy to help",
    "thank",
    "glad to help",
];
const NO_INFO: &[&str] = &[
    "don't have",
    "do not have",
    "not sure",
    "no information",
    "not available",
    "unable",
    "can't say",
];
const REDIRECT: &[&str] = &[
    "only",
    "can't help with",
    "cannot help with",
    "don't offer",
    "do not offer",
    "not offer",
    "outside",
];

/// Deterministic keyword rubric for harness tests: 5 when the expected cue
/// appears in the transcript, 2 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineJudge;

impl Judge for OfflineJudge {
    fn id(&self) -> String {
        format!("offline/{RUBRIC_VERSION}")
    }

    fn score(&self, scenario: &Scenario, question: usize, transcript: &str) -> Result<u8> {
        let q = scenario
            .questions
            .get(question)
            .ok_or_else(|| Error::invalid(format!("no question {question}")))?;
        let text = transcript.to_lowercase();
        let any = |cues: &[&str]| cues.iter().any(|c| text.contains(c));
        let hit = match q.tag {
            QuestionTag::ProperNoun | QuestionTag::ContextDetails => q
                .slots
                .iter()
                .filter_map(|s| scenario.slots.get(s))
                .any(|v| text.contains(&v.to_lowercase())),
            QuestionTag::UnfulfillableRequest => any(REFUSAL),
            QuestionTag::CustomerRudeness => any(POLITE),
            QuestionTag::Unspecified => any(NO_INFO),
            QuestionTag::Unrelated => any(REDIRECT),
        };
        Ok(if hit { MAX_SCORE } else { 2 })
    }
}

/// Chat-completions style HTTP judge.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retries: u32,
    pub timeout: Duration,
    pub backoff: Duration,
}

pub const DEFAULT_JUDGE_MODEL: &str = "gpt-4o";

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: DEFAULT_JUDGE_MODEL.into(),
            retries: 3,
            timeout: Duration::from_secs(30),
            backoff: Duration::from_millis(250),
        }
    }

    /// Reads `JUDGE_ENDPOINT`, `JUDGE_API_KEY` and `JUDGE_MODEL`.
    pub fn from_env() -> Result<Self> {
        let endpoint = env::var("JUDGE_ENDPOINT")
            .map_err(|_| Error::JudgeUnavailable("JUDGE_ENDPOINT is not set".into()))?;
        let mut j = Self::new(endpoint);
        j.api_key = env::var("JUDGE_API_KEY").ok().filter(|k| !k.is_empty());
        if let Ok(m) = env::var("JUDGE_MODEL") {
            j.model = m;
        }
        Ok(j)
    }

    pub fn request_body(&self, scenario: &Scenario, question: usize, transcript: &str) -> Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": RUBRIC_SYSTEM},
                {"role": "user", "content": rubric_prompt(scenario, question, transcript)},
            ],
        })
    }

    fn post_once(&self, agent: &ureq::Agent, body: &str) -> std::result::Result<String, String> {
        let mut req = agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        match req.send_string(body) {
            Ok(resp) => resp.into_string().map_err(|e| e.to_string()),
            Err(ureq::Error::Status(code, _)) => Err(format!("HTTP status {code}")),
            Err(e) => Err(e.to_string()),
        }
    }
}

impl Judge for RemoteJudge {
    fn id(&self) -> String {
        format!("remote:{}/{RUBRIC_VERSION}", self.model)
    }

    fn score(&self, scenario: &Scenario, question: usize, transcript: &str) -> Result<u8> {
        let body = self
            .request_body(scenario, question, transcript)
            .to_string();
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.post_once(&agent, &body) {
                Ok(text) => {
                    let v: Value = serde_json::from_str(&text)
                        .map_err(|e| Error::JudgeParse(format!("reply is not JSON: {e}")))?;
                    let content = v
                        .pointer("/choices/0/message/content")
                        .and_then(Value::as_str)
                        .ok_or_else(|| {
                            Error::JudgeParse("reply has no choices[0].message.content".into())
                        })?;
                    return parse_score(content);
                }
                Err(e) => last = e,
            }
        }
        Err(Error::JudgeUnavailable(format!(
            "{} failed after {} attempts: {last}",
            self.endpoint,
            self.retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::scenario::generate_scenarios;

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("4").unwrap(), 4);
        assert_eq!(parse_score("Score: 5/5").unwrap(), 5);
        assert_eq!(parse_score("I'd say 12 or maybe 3").unwrap(), 3);
        assert!(matches!(
            parse_score("excellent"),
            Err(Error::JudgeParse(_))
        ));
        assert!(parse_score("0 and 9").is_err());
    }

    #[test]
    fn offline_rubric_rules() {
        let s = &generate_scenarios(1)[0];
        let company = s.slots["company"].clone();
        let j = OfflineJudge;
        assert_eq!(
            j.score(s, 0, &format!("You reached {company}.")).unwrap(),
            5
        );
        assert_eq!(j.score(s, 0, "Hello, how can I help?").unwrap(), 2);
        assert_eq!(j.score(s, 3, "Sorry, I cannot do that today").unwrap(), 5);
        assert_eq!(j.score(s, 4, "I understand your frustration").unwrap(), 5);
        assert_eq!(j.score(s, 5, "I don't have that information").unwrap(), 5);
        assert_eq!(j.score(s, 6, "I can only help with your plan").unwrap(), 5);
        assert_eq!(j.score(s, 6, "Sure, tomorrow at noon").unwrap(), 2);
    }

    #[test]
    fn rubric_prompt_embeds_everything() {
        let s = &generate_scenarios(1)[0];
        let p = rubric_prompt(s, 1, "yes that is right");
        assert!(p.contains(&s.slots["verification_fact"]));
        assert!(p.contains("Context details"));
        assert!(p.contains(&s.questions[1].utterance));
        assert!(p.contains("yes that is right"));
    }
}
