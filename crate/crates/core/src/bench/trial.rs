//! One scenario question streamed through an agent.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentFrameIn, AgentSession, DuplexAgent};
use crate::audio::{level_dbfs, AudioBuffer, FrameClock};
use crate::codec::{ToyCodec, DEFAULT_CODEBOOKS};
use crate::error::{Error, Result};
use crate::prompt::{build_hybrid_prompt, HybridPrompt, HybridPromptSpec, SegmentOrder};
use crate::stitch::Speaker;
use crate::text::Vocabulary;
use crate::vad::{extract_events, vad, EventParams, TrialCategory, TrialEvents, TrialMeta};

use super::scenario::{QuestionTag, Scenario};
use super::synth::{synthesize_utterance, synthesize_voice_sample, VoiceParams};

/// Silence captured after the agent's last speech before a trial stops.
pub const END_OF_SPEECH_GRACE: f64 = 2.0;
/// Hard limit on the captured length of one trial.
pub const TRIAL_CAP: f64 = 30.0;
/// Voice used for synthesized user questions.
pub const USER_VOICE: &str = "benchmark-user";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialOptions {
    pub clock: FrameClock,
    pub codebooks: usize,
    pub order: SegmentOrder,
    pub events: EventParams,
    pub grace: f64,
    pub cap: f64,
    /// Per-frame wall-clock budget in seconds; overruns are counted.
    pub realtime_budget: Option<f64>,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            clock: FrameClock::default(),
            codebooks: DEFAULT_CODEBOOKS,
            order: SegmentOrder::VoiceFirst,
            events: EventParams::default(),
            grace: END_OF_SPEECH_GRACE,
            cap: TRIAL_CAP,
            realtime_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario_id: String,
    pub question_id: String,
    pub tag: QuestionTag,
    pub status: TrialStatus,
    pub transcript: String,
    pub agent_text_ids: Vec<u32>,
    pub events: Option<TrialEvents>,
    pub judge_score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
    pub truncated: bool,
    pub frames: usize,
    /// Wall-clock time per agent step, in milliseconds.
    pub step_ms: Vec<f64>,
    pub budget_violations: usize,
    #[serde(skip)]
    pub agent_audio: Option<AudioBuffer>,
}

impl TrialResult {
    pub fn is_failed(&self) -> bool {
        matches!(self.status, TrialStatus::Failed { .. })
    }
}

pub(crate) fn failed_result(scenario: &Scenario, q: usize, error: &Error) -> TrialResult {
    TrialResult {
        scenario_id: scenario.id.clone(),
        question_id: scenario.questions[q].id.clone(),
        tag: scenario.questions[q].tag,
        status: TrialStatus::Failed {
            error: error.to_string(),
        },
        transcript: String::new(),
        agent_text_ids: Vec::new(),
        events: None,
        judge_score: None,
        judge_error: None,
        truncated: false,
        frames: 0,
        step_ms: Vec::new(),
        budget_violations: 0,
        agent_audio: None,
    }
}

/// Voice sample for a scenario: its WAV when given, else a synthesized one.
pub fn scenario_voice(scenario: &Scenario, clock: &FrameClock) -> Result<AudioBuffer> {
    match &scenario.voice {
        Some(p) => {
            let a = AudioBuffer::read_wav(scenario.resolve(p))?;
            a.check_rate(clock)?;
            Ok(a.padded_to_frames(clock))
        }
        None => synthesize_voice_sample(&VoiceParams::from_name(&scenario.id), clock),
    }
}

/// Question audio: its WAV when given, else synthesized from the utterance.
pub fn question_audio(scenario: &Scenario, q: usize, clock: &FrameClock) -> Result<AudioBuffer> {
    let question = scenario
        .questions
        .get(q)
        .ok_or_else(|| Error::invalid(format!("scenario `{}` has no question {q}", scenario.id)))?;
    match &question.wav {
        Some(p) => {
            let a = AudioBuffer::read_wav(scenario.resolve(p))?;
            a.check_rate(clock)?;
            Ok(a.padded_to_frames(clock))
        }
        None => synthesize_utterance(
            &question.utterance,
            &VoiceParams::from_name(USER_VOICE),
            clock,
        ),
    }
}

/// Hybrid prompt for a scenario; the rendered context is tokenized into a
/// vocabulary grown for the prompt.
pub fn scenario_prompt(
    scenario: &Scenario,
    opts: &TrialOptions,
) -> Result<(HybridPrompt, Vocabulary)> {
    let codec = ToyCodec::new(opts.clock, opts.codebooks)?;
    let mut vocab = Vocabulary::new();
    let role = vocab.tokenize_growing(&scenario.render_context())?;
    let voice = scenario_voice(scenario, &opts.clock)?;
    let spec = HybridPromptSpec::new(voice, role).with_order(opts.order);
    Ok((build_hybrid_prompt(&spec, &codec)?, vocab))
}

/// Runs question `q` of `scenario` against `agent`. Agent and transport
/// failures produce a failed result rather than an error.
pub fn run_trial(
    scenario: &Scenario,
    q: usize,
    agent: &mut dyn DuplexAgent,
    opts: &TrialOptions,
) -> TrialResult {
    match scenario_prompt(scenario, opts) {
        Ok((prompt, _)) => run_trial_with_prompt(scenario, q, &prompt, agent, opts),
        Err(e) => failed_result(scenario, q, &e),
    }
}

/// As [`run_trial`] with the scenario prompt already built.
pub fn run_trial_with_prompt(
    scenario: &Scenario,
    q: usize,
    prompt: &HybridPrompt,
    agent: &mut dyn DuplexAgent,
    opts: &TrialOptions,
) -> TrialResult {
    match try_run_trial(scenario, q, prompt, agent, opts) {
        Ok(r) => r,
        Err(e) => failed_result(scenario, q, &e),
    }
}

fn try_run_trial(
    scenario: &Scenario,
    q: usize,
    prompt: &HybridPrompt,
    agent: &mut dyn DuplexAgent,
    opts: &TrialOptions,
) -> Result<TrialResult> {
    let question = question_audio(scenario, q, &opts.clock)?;
    let capture = stream_through(agent, prompt, &question, opts)?;

    let clock = &opts.clock;
    let user_lane = capture.user_lane;
    let agent_lane = capture.agent_lane;
    // anchor at the end of the user's question
    let user_segs = vad(&user_lane, clock, &opts.events.vad, Speaker::User);
    let anchor = user_segs.last().map_or(question.duration(), |s| s.end);
    let meta = TrialMeta::new(TrialCategory::TurnTaking, anchor);
    let events = extract_events(&user_lane, &agent_lane, &meta, clock, &opts.events)?;

    let ids = capture.text_ids;
    let transcript = agent
        .vocabulary()
        .cloned()
        .unwrap_or_default()
        .detokenize(ids.iter().copied());
    Ok(TrialResult {
        scenario_id: scenario.id.clone(),
        question_id: scenario.questions[q].id.clone(),
        tag: scenario.questions[q].tag,
        status: TrialStatus::Completed,
        transcript,
        agent_text_ids: ids,
        events: Some(events),
        judge_score: None,
        judge_error: None,
        truncated: capture.truncated,
        frames: capture.frames,
        step_ms: capture.step_ms,
        budget_violations: capture.budget_violations,
        agent_audio: Some(agent_lane),
    })
}

/// Captured lanes of one streamed trial.
#[derive(Debug, Clone)]
pub struct Capture {
    pub user_lane: AudioBuffer,
    pub agent_lane: AudioBuffer,
    pub text_ids: Vec<u32>,
    pub frames: usize,
    pub truncated: bool,
    pub step_ms: Vec<f64>,
    pub budget_violations: usize,
}

/// Streams `input` frame by frame, then silence, until both sides have been
/// quiet for the grace period or the cap is reached.
pub fn stream_through(
    agent: &mut dyn DuplexAgent,
    prompt: &HybridPrompt,
    input: &AudioBuffer,
    opts: &TrialOptions,
) -> Result<Capture> {
    let clock = &opts.clock;
    let spf = clock.samples_per_frame();
    let input_frames = input.frame_count(clock)?;
    let grace_frames = clock.frames_for_duration(opts.grace)?;
    let cap_frames = clock.frames_for_duration(opts.cap)?.max(1);
    let mut session = AgentSession::new(agent, *clock);
    if let Some(b) = opts.realtime_budget {
        session = session.with_realtime_budget(Duration::from_secs_f64(b));
    }
    session.begin(prompt)?;

    let silence = vec![0i16; spf];
    let mut user = Vec::new();
    let mut agent_pcm = Vec::new();
    let mut text_ids = Vec::new();
    let mut last_agent_active: Option<usize> = None;
    let mut t = 0usize;
    let mut truncated = false;
    loop {
        let quiet_since = last_agent_active.map_or(input_frames, |a| (a + 1).max(input_frames));
        if t >= input_frames && t >= quiet_since + grace_frames {
            break;
        }
        if t >= cap_frames {
            truncated = true;
            break;
        }
        let pcm = if t < input_frames {
            input.frame(clock, t)
        } else {
            &silence[..]
        };
        let out = session.step(&AgentFrameIn {
            frame_index: t as u32,
            pcm: pcm.to_vec(),
        })?;
        if level_dbfs(&out.pcm) >= opts.events.vad.threshold_db {
            last_agent_active = Some(t);
        }
        if let Some(id) = out.text.id() {
            text_ids.push(id);
        }
        user.extend_from_slice(pcm);
        agent_pcm.extend_from_slice(&out.pcm);
        t += 1;
    }
    session.end()?;
    let sr = clock.sample_rate();
    Ok(Capture {
        user_lane: AudioBuffer::new(user, sr)?,
        agent_lane: AudioBuffer::new(agent_pcm, sr)?,
        text_ids,
        frames: t,
        truncated,
        step_ms: session
            .step_times()
            .iter()
            .map(|d| d.as_secs_f64() * 1e3)
            .collect(),
        budget_violations: session.budget_violations(),
    })
}
