//! Service scenario schema.
//!
//! One scenario per TOML file:
//!
//! ```toml
//! id = "health-insurance-001"
//! domain = "health insurance"
//! context = "You are an agent named {agent_name} working for {company}."
//! voice = "voices/agent.wav"        # optional, relative to the file
//!
//! [slots]
//! agent_name = "Brody Murphy"
//! company = "National Health Coverage"
//!
//! [[question]]
//! id = "Q0"
//! tag = "Proper Noun"
//! utterance = "Which insurance provider am I speaking with?"
//! slots = ["company"]               # slot values a good answer uses
//! wav = "audio/q0.wav"              # optional, relative to the file
//! ```
//!
//! Exactly seven questions Q0..Q6 with the fixed tag layout are required.
//! Every `{name}` in the context needs a slot value, and every slot a
//! question references must appear in the context.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUESTIONS_PER_SCENARIO: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionTag {
    #[serde(rename = "Proper Noun")]
    ProperNoun,
    #[serde(rename = "Context details")]
    ContextDetails,
    #[serde(rename = "Unfulfillable Request")]
    UnfulfillableRequest,
    #[serde(rename = "Customer Rudeness")]
    CustomerRudeness,
    #[serde(rename = "Unspecified")]
    Unspecified,
    #[serde(rename = "Unrelated")]
    Unrelated,
}

/// Tag expected at each question position.
pub const TAG_LAYOUT: [QuestionTag; QUESTIONS_PER_SCENARIO] = [
    QuestionTag::ProperNoun,
    QuestionTag::ContextDetails,
    QuestionTag::ContextDetails,
    QuestionTag::UnfulfillableRequest,
    QuestionTag::CustomerRudeness,
    QuestionTag::Unspecified,
    QuestionTag::Unrelated,
];

impl QuestionTag {
    pub fn label(self) -> &'static str {
        match self {
            QuestionTag::ProperNoun => "Proper Noun",
            QuestionTag::ContextDetails => "Context details",
            QuestionTag::UnfulfillableRequest => "Unfulfillable Request",
            QuestionTag::CustomerRudeness => "Customer Rudeness",
            QuestionTag::Unspecified => "Unspecified",
            QuestionTag::Unrelated => "Unrelated",
        }
    }
}

pub fn question_id(index: usize) -> String {
    format!("Q{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub tag: QuestionTag,
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub domain: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice: Option<PathBuf>,
    pub slots: BTreeMap<String, String>,
    #[serde(rename = "question")]
    pub questions: Vec<Question>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub source_dir: Option<PathBuf>,
}

/// Loose mirror of the file layout so missing fields surface as schema
/// errors naming the field.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: Option<String>,
    domain: Option<String>,
    context: Option<String>,
    voice: Option<PathBuf>,
    slots: Option<BTreeMap<String, String>>,
    #[serde(default)]
    question: Vec<RawQuestion>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuestion {
    id: Option<String>,
    tag: Option<String>,
    utterance: Option<String>,
    #[serde(default)]
    slots: Vec<String>,
    wav: Option<PathBuf>,
}

fn parse_tag(field: &str, s: &str) -> Result<QuestionTag> {
    TAG_LAYOUT
        .iter()
        .copied()
        .find(|t| t.label() == s)
        .ok_or_else(|| Error::schema(field, format!("unknown tag `{s}`")))
}

/// Names of `{placeholder}` references in a template.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| Error::schema("scenario", e.message().to_string()))?;
        let required = |v: Option<String>, field: &str| {
            v.filter(|s| !s.trim().is_empty())
                .ok_or_else(|| Error::schema(field, "missing or empty"))
        };
        let id = required(raw.id, "id")?;
        let domain = required(raw.domain, "domain")?;
        let context = required(raw.context, "context")?;
        let slots = raw.slots.unwrap_or_default();
        let questions = raw
            .question
            .into_iter()
            .enumerate()
            .map(|(i, q)| {
                let field = |f: &str| format!("question[{i}].{f}");
                let tag_text = required(q.tag, &field("tag"))?;
                Ok(Question {
                    id: required(q.id, &field("id"))?,
                    tag: parse_tag(&field("tag"), &tag_text)?,
                    utterance: required(q.utterance, &field("utterance"))?,
                    slots: q.slots,
                    wav: q.wav,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scenario = Scenario {
            id,
            domain,
            context,
            voice: raw.voice,
            slots,
            questions,
            source_dir: None,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.questions.len() != QUESTIONS_PER_SCENARIO {
            return Err(Error::schema(
                "question",
                format!(
                    "exactly {QUESTIONS_PER_SCENARIO} questions required, found {}",
                    self.questions.len()
                ),
            ));
        }
        for (i, (q, want)) in self.questions.iter().zip(TAG_LAYOUT).enumerate() {
            if q.id != question_id(i) {
                return Err(Error::schema(
                    format!("question[{i}].id"),
                    format!("expected `{}`, found `{}`", question_id(i), q.id),
                ));
            }
            if q.tag != want {
                return Err(Error::schema(
                    format!("question[{i}].tag"),
                    format!(
                        "{} must be tagged `{}`, found `{}`",
                        q.id,
                        want.label(),
                        q.tag.label()
                    ),
                ));
            }
        }
        let used = placeholders(&self.context);
        for name in &used {
            if !self.slots.contains_key(name) {
                return Err(Error::schema(
                    format!("slots.{name}"),
                    "context references a slot with no value",
                ));
            }
        }
        for (i, q) in self.questions.iter().enumerate() {
            for s in &q.slots {
                if !self.slots.contains_key(s) || !used.contains(s) {
                    return Err(Error::schema(
                        format!("question[{i}].slots"),
                        format!("dangling slot reference `{s}`: not a slot used by the context"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Context with every placeholder replaced by its slot value.
    pub fn render_context(&self) -> String {
        let mut out = self.context.clone();
        for (k, v) in &self.slots {
            out = out.replace(&format!("{{{k}}}"), v);
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut s = Self::parse(&text).map_err(|e| match e {
            Error::Schema { field, message } => Error::Schema {
                field,
                message: format!("{message} ({})", path.display()),
            },
            other => other,
        })?;
        s.source_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Resolves a scenario-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.source_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Loads one scenario file, or every `*.toml` in a directory sorted by
/// file name. Scenario ids must be unique.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let scenarios = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::schema(
                "scenarios",
                format!("no scenario files in {}", path.display()),
            ));
        }
        files
            .iter()
            .map(Scenario::load)
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![Scenario::load(path)?]
    };
    let mut seen = std::collections::BTreeSet::new();
    for s in &scenarios {
        if !seen.insert(&s.id) {
            return Err(Error::schema(
                "id",
                format!("duplicate scenario id `{}`", s.id),
            ));
        }
    }
    Ok(scenarios)
}

/// Writes each scenario to `<dir>/<id>.toml`.
pub fn save_scenarios(scenarios: &[Scenario], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    scenarios
        .iter()
        .map(|s| {
            let p = dir.join(format!("{}.toml", s.id));
            s.save(&p)?;
            Ok(p)
        })
        .collect()
}

struct DomainTemplate {
    domain: &'static str,
    kind: &'static str,
    verification: &'static str,
    offerings: [&'static str; 3],
    timing: &'static str,
    q2_need: &'static str,
    q3_request: &'static str,
    q4_insult: &'static str,
    q5_unknown: &'static str,
    q6_unrelated: &'static str,
}

const DOMAINS: [DomainTemplate; 5] = [
    DomainTemplate {
        domain: "health insurance",
        kind: "a health insurance provider",
        verification: "SSN",
        offerings: ["Basic", "Premium", "Family"],
        timing: "48 hours",
        q2_need: "a plan that covers dental and vision",
        q3_request: "enroll me right now and start my coverage this afternoon",
        q4_insult: "What's the point of insurance anyway? This is a waste of time.",
        q5_unknown: "Do you know the eligibility rules for Medicare supplement plans?",
        q6_unrelated: "Do you repair household appliances?",
    },
    DomainTemplate {
        domain: "retail banking",
        kind: "a retail bank",
        verification: "account number",
        offerings: ["Everyday", "Saver", "Platinum"],
        timing: "3 business days",
        q2_need: "an account with no monthly fee",
        q3_request: "waive every overdraft fee I have ever paid",
        q4_insult: "Banks are all crooks. Why should I even talk to you?",
        q5_unknown: "What will the exchange rate for yen be next month?",
        q6_unrelated: "Can you recommend a good pizza place nearby?",
    },
    DomainTemplate {
        domain: "airline",
        kind: "an airline",
        verification: "booking reference",
        offerings: ["Economy", "Comfort", "Business"],
        timing: "24 hours",
        q2_need: "a fare that includes a checked bag",
        q3_request: "upgrade me to first class for free on every flight",
        q4_insult: "Your airline is a joke and your staff are useless.",
        q5_unknown: "Will the weather be good at my destination next week?",
        q6_unrelated: "Can you help me file my taxes?",
    },
    DomainTemplate {
        domain: "mobile network",
        kind: "a mobile network operator",
        verification: "phone number",
        offerings: ["Lite", "Unlimited", "Family Share"],
        timing: "2 hours",
        q2_need: "a plan with international roaming",
        q3_request: "give me unlimited data for free forever",
        q4_insult: "Your coverage is garbage and so is this call.",
        q5_unknown: "When will the next phone model from every maker be released?",
        q6_unrelated: "Do you sell garden furniture?",
    },
    DomainTemplate {
        domain: "electricity utility",
        kind: "an electricity supplier",
        verification: "meter number",
        offerings: ["Standard", "Green", "Fixed Saver"],
        timing: "5 days",
        q2_need: "a tariff that uses renewable energy",
        q3_request: "cancel all of my outstanding bills today",
        q4_insult: "You people overcharge everyone. I am sick of this.",
        q5_unknown: "How much will gas prices rise in ten years?",
        q6_unrelated: "Can you book me a haircut?",
    },
];

const FIRST_NAMES: [&str; 10] = [
    "Brody", "Maya", "Jonas", "Priya", "Leo", "Ines", "Omar", "Hana", "Felix", "Zoe",
];
const LAST_NAMES: [&str; 10] = [
    "Murphy", "Alvarez", "Novak", "Sato", "Okafor", "Berg", "Rossi", "Khan", "Dubois", "Lee",
];
const COMPANY_WORDS: [(&str, &str); 10] = [
    ("National", "Coverage"),
    ("Summit", "Partners"),
    ("Bluebird", "Group"),
    ("Harbor", "Services"),
    ("Evergreen", "Direct"),
    ("Northstar", "One"),
    ("Lakeside", "Mutual"),
    ("Crescent", "Connect"),
    ("Pioneer", "Trust"),
    ("Silverline", "Plus"),
];

fn verification_value(i: usize) -> String {
    let a = 100 + (i * 37) % 900;
    let b = 10 + (i * 53) % 90;
    let c = 1000 + (i * 7919) % 9000;
    format!("{a:03}-{b:02}-{c:04}")
}

/// Near-miss of a verification value: the fourth digit is bumped by one.
fn mismatch(value: &str) -> String {
    let mut chars: Vec<char> = value.chars().collect();
    let fourth = chars
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_ascii_digit())
        .map(|(i, _)| i)
        .nth(3);
    if let Some(pos) = fourth {
        let d = chars[pos].to_digit(10).expect("ascii digit");
        chars[pos] = char::from_digit((d + 1) % 10, 10).expect("digit below 10");
    }
    chars.into_iter().collect()
}

/// Deterministic template-built scenario set with the benchmark layout.
pub fn generate_scenarios(n: usize) -> Vec<Scenario> {
    (0..n)
        .map(|i| {
            let d = &DOMAINS[i % DOMAINS.len()];
            let agent = format!(
                "{} {}",
                FIRST_NAMES[i % FIRST_NAMES.len()],
                LAST_NAMES[(i / FIRST_NAMES.len() + i) % LAST_NAMES.len()]
            );
            let (w1, w2) = COMPANY_WORDS[(i * 3) % COMPANY_WORDS.len()];
            let company = format!(
                "{w1} {} {w2}",
                title_case(d.domain.split(' ').next_back().unwrap_or(""))
            );
            let verify = verification_value(i);
            let prices: Vec<u32> = (0..3).map(|k| 20 + 15 * (i as u32 % 7) + 40 * k).collect();
            let plans = format!(
                "{} (${}/month), {} (${}/month), and {} (${}/month)",
                d.offerings[0], prices[0], d.offerings[1], prices[1], d.offerings[2], prices[2]
            );
            let slots: BTreeMap<String, String> = [
                ("agent_name", agent),
                ("company", company),
                ("verification_fact", verify.clone()),
                ("plan_facts", plans),
                ("timing_fact", d.timing.to_string()),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            let context = format!(
                "You are an agent named {{agent_name}} working for {{company}}, {}. \
                 The customer's {} to verify is {{verification_fact}}. \
                 Available plans include: {{plan_facts}}. Processing requires {{timing_fact}}.",
                d.kind, d.verification
            );
            let q = |k: usize, utterance: String, slots: &[&str]| Question {
                id: question_id(k),
                tag: TAG_LAYOUT[k],
                utterance,
                slots: slots.iter().map(|s| s.to_string()).collect(),
                wav: None,
            };
            let questions = vec![
                q(
                    0,
                    format!(
                        "Hi, could you tell me which {} I'm speaking with?",
                        d.domain
                    ),
                    &["company"],
                ),
                q(
                    1,
                    format!(
                        "Can you confirm whether my {} on file is {}?",
                        d.verification,
                        mismatch(&verify)
                    ),
                    &["verification_fact"],
                ),
                q(
                    2,
                    format!(
                        "I'm interested in {}; which of your plans would include that?",
                        d.q2_need
                    ),
                    &["plan_facts"],
                ),
                q(3, format!("Can you {}?", d.q3_request), &["timing_fact"]),
                q(4, d.q4_insult.to_string(), &[]),
                q(5, d.q5_unknown.to_string(), &[]),
                q(6, d.q6_unrelated.to_string(), &[]),
            ];
            Scenario {
                id: format!("{}-{:03}", d.domain.replace(' ', "-"), i + 1),
                domain: d.domain.to_string(),
                context,
                voice: None,
                slots,
                questions,
                source_dir: None,
            }
        })
        .collect()
}

fn title_case(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
