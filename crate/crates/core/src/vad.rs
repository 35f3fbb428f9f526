//! Energy VAD and turn-taking event extraction.
//!
//! A frame is active when its level `20·log10(rms / 32768)` reaches the
//! threshold. Gaps shorter than `hangover` frames are bridged, then runs
//! shorter than `min_speech` frames are dropped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{level_dbfs, AudioBuffer, FrameClock};
use crate::error::{Error, Result};
use crate::stitch::Speaker;

pub const DEFAULT_THRESHOLD_DB: f64 = -40.0;
pub const DEFAULT_HANGOVER_FRAMES: usize = 2;
pub const DEFAULT_MIN_SPEECH_FRAMES: usize = 2;
pub const DEFAULT_BACKCHANNEL_MAX: f64 = 1.0;
/// Evaluation window after the anchor for turn-taking and interruption trials.
pub const DEFAULT_RESPONSE_WINDOW: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadParams {
    pub threshold_db: f64,
    pub hangover: usize,
    pub min_speech: usize,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            threshold_db: DEFAULT_THRESHOLD_DB,
            hangover: DEFAULT_HANGOVER_FRAMES,
            min_speech: DEFAULT_MIN_SPEECH_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub start: f64,
    pub end: f64,
    pub channel: Speaker,
    pub mean_level: f64,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl SpeechSegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Concatenation of the above-threshold frames inside detected speech
/// segments; hangover frames are left out.
pub fn active_speech(audio: &AudioBuffer, clock: &FrameClock, params: &VadParams) -> AudioBuffer {
    let spf = clock.samples_per_frame();
    let n = audio.len();
    let active = active_frames(audio, clock, params.threshold_db);
    let mut out = Vec::new();
    for (s, e) in smooth_runs(&active, params.hangover, params.min_speech) {
        for f in (s..e).filter(|&f| active[f]) {
            out.extend_from_slice(&audio.samples()[f * spf..((f + 1) * spf).min(n)]);
        }
    }
    AudioBuffer::new(out, audio.sample_rate()).expect("rate of an existing buffer")
}

/// Level in dBFS of every frame; a trailing partial frame is measured over
/// the samples it has.
pub fn frame_levels(audio: &AudioBuffer, clock: &FrameClock) -> Vec<f64> {
    audio
        .samples()
        .chunks(clock.samples_per_frame())
        .map(level_dbfs)
        .collect()
}

pub fn active_frames(audio: &AudioBuffer, clock: &FrameClock, threshold_db: f64) -> Vec<bool> {
    frame_levels(audio, clock)
        .into_iter()
        .map(|l| l >= threshold_db)
        .collect()
}

/// Smoothed active runs as half-open frame ranges.
pub fn smooth_runs(active: &[bool], hangover: usize, min_speech: usize) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < active.len() {
        if !active[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < active.len() && active[i] {
            i += 1;
        }
        match runs.last_mut() {
            Some(prev) if start - prev.1 < hangover => prev.1 = i,
            _ => runs.push((start, i)),
        }
    }
    runs.retain(|&(s, e)| e - s >= min_speech.max(1));
    runs
}

pub fn vad(
    audio: &AudioBuffer,
    clock: &FrameClock,
    params: &VadParams,
    channel: Speaker,
) -> Vec<SpeechSegment> {
    let active = active_frames(audio, clock, params.threshold_db);
    let spf = clock.samples_per_frame();
    let n = audio.len();
    smooth_runs(&active, params.hangover, params.min_speech)
        .into_iter()
        .map(|(s, e)| {
            let lo = s * spf;
            let hi = (e * spf).min(n);
            SpeechSegment {
                start: clock.frame_time(s),
                end: clock.frame_time(e),
                channel,
                mean_level: level_dbfs(&audio.samples()[lo..hi]),
                start_frame: s,
                end_frame: e,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialCategory {
    Pause,
    Backchannel,
    TurnTaking,
    Interruption,
}

impl TrialCategory {
    pub const ALL: [TrialCategory; 4] = [
        TrialCategory::Pause,
        TrialCategory::Backchannel,
        TrialCategory::TurnTaking,
        TrialCategory::Interruption,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrialCategory::Pause => "pause",
            TrialCategory::Backchannel => "backchannel",
            TrialCategory::TurnTaking => "turn_taking",
            TrialCategory::Interruption => "interruption",
        }
    }

    /// Whether a higher take-over rate is better for this category.
    pub fn takeover_desirable(self) -> bool {
        matches!(
            self,
            TrialCategory::TurnTaking | TrialCategory::Interruption
        )
    }
}

/// Per-trial sidecar declaring the anchor event.
///
/// ```toml
/// category = "pause"
/// anchor_time = 1.5
/// pause_end = 2.5
/// [vad]
/// threshold_db = -45.0
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialMeta {
    pub category: Option<TrialCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_window: Option<f64>,
    /// End of the pause span (PAUSE trials); defines the window when
    /// `eval_window` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pause_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backchannel_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vad: Option<VadParams>,
}

impl TrialMeta {
    pub fn new(category: TrialCategory, anchor_time: f64) -> Self {
        Self {
            category: Some(category),
            anchor_time: Some(anchor_time),
            ..Default::default()
        }
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.eval_window = Some(window);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventParams {
    pub vad: VadParams,
    pub backchannel_max: f64,
    pub response_window: f64,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            vad: VadParams::default(),
            backchannel_max: DEFAULT_BACKCHANNEL_MAX,
            response_window: DEFAULT_RESPONSE_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backchannel {
    pub onset: f64,
    pub duration: f64,
    /// Onset position within the enclosing user utterance, in `[0, 1)`.
    pub relative_position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvents {
    pub category: TrialCategory,
    pub anchor_time: f64,
    pub eval_window: f64,
    pub trial_duration: f64,
    /// Agent speech onsets inside `[anchor, anchor + window]`. Speech already
    /// running at the anchor counts as an onset at the anchor.
    pub agent_onsets: Vec<f64>,
    /// Onsets that take the floor: `agent_onsets` minus backchannels.
    pub takeover_onsets: Vec<f64>,
    pub agent_segments: Vec<SpeechSegment>,
    pub user_segments: Vec<SpeechSegment>,
    pub backchannels: Vec<Backchannel>,
}

impl TrialEvents {
    pub fn took_over(&self) -> bool {
        !self.takeover_onsets.is_empty()
    }

    pub fn first_takeover(&self) -> Option<f64> {
        self.takeover_onsets.first().copied()
    }

    pub fn user_speech_seconds(&self) -> f64 {
        self.user_segments.iter().map(SpeechSegment::duration).sum()
    }
}

pub fn extract_events(
    user: &AudioBuffer,
    agent: &AudioBuffer,
    meta: &TrialMeta,
    clock: &FrameClock,
    params: &EventParams,
) -> Result<TrialEvents> {
    let category = meta
        .category
        .ok_or_else(|| Error::invalid("trial metadata has no category"))?;
    let anchor = meta
        .anchor_time
        .ok_or_else(|| Error::invalid("trial metadata has no anchor_time"))?;
    let duration = user.duration().max(agent.duration());
    if !(0.0..=duration).contains(&anchor) {
        return Err(Error::invalid(format!(
            "anchor {anchor} s lies outside the {duration:.3} s trial"
        )));
    }
    let window = match (meta.eval_window, category) {
        (Some(w), _) => w,
        (None, TrialCategory::Pause) => {
            let end = meta
                .pause_end
                .ok_or_else(|| Error::invalid("pause trial needs pause_end or eval_window"))?;
            end - anchor
        }
        (None, TrialCategory::Backchannel) => duration - anchor,
        (None, _) => params.response_window,
    };
    if !(window > 0.0) {
        return Err(Error::invalid(format!(
            "evaluation window must be positive, got {window}"
        )));
    }
    let vad_params = meta.vad.unwrap_or(params.vad);
    let backchannel_max = meta.backchannel_max.unwrap_or(params.backchannel_max);

    let user_segments = vad(user, clock, &vad_params, Speaker::User);
    let agent_segments = vad(agent, clock, &vad_params, Speaker::Agent);

    let mut backchannels = Vec::new();
    let mut is_backchannel = vec![false; agent_segments.len()];
    if category == TrialCategory::Backchannel {
        for (i, seg) in agent_segments.iter().enumerate() {
            if seg.duration() > backchannel_max + 1e-9 {
                continue;
            }
            if let Some(u) = user_segments.iter().find(|u| u.contains(seg.start)) {
                is_backchannel[i] = true;
                backchannels.push(Backchannel {
                    onset: seg.start,
                    duration: seg.duration(),
                    relative_position: (seg.start - u.start) / u.duration(),
                });
            }
        }
    }

    let window_end = anchor + window;
    let mut agent_onsets = Vec::new();
    let mut takeover_onsets = Vec::new();
    for (seg, &bc) in agent_segments.iter().zip(&is_backchannel) {
        let onset = if seg.start >= anchor && seg.start <= window_end {
            seg.start
        } else if seg.start < anchor && seg.end > anchor {
            anchor
        } else {
            continue;
        };
        agent_onsets.push(onset);
        if !bc {
            takeover_onsets.push(onset);
        }
    }

    Ok(TrialEvents {
        category,
        anchor_time: anchor,
        eval_window: window,
        trial_duration: duration,
        agent_onsets,
        takeover_onsets,
        agent_segments,
        user_segments,
        backchannels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::gen_sine;

    fn clock() -> FrameClock {
        FrameClock::default()
    }

    fn silence(secs: f64) -> AudioBuffer {
        AudioBuffer::silence((secs * 24_000.0).round() as usize, 24_000).unwrap()
    }

    fn cat(parts: &[AudioBuffer]) -> AudioBuffer {
        let mut out = AudioBuffer::silence(0, 24_000).unwrap();
        for p in parts {
            out.append(p).unwrap();
        }
        out
    }

    #[test]
    fn active_speech_keeps_only_voiced_frames() {
        let tone = gen_sine(300.0, 0.8, 0.3, &clock()).unwrap();
        let audio = cat(&[
            silence(0.4),
            tone.clone(),
            silence(0.16),
            tone,
            silence(0.4),
        ]);
        let speech = active_speech(&audio, &clock(), &VadParams::default());
        assert_eq!(speech.len(), 2 * 10 * 1920);
        assert!(speech
            .samples()
            .chunks(1920)
            .all(|f| f.iter().any(|&s| s != 0)));
    }

    #[test]
    fn silence_has_no_segments() {
        let c = clock();
        assert!(vad(&silence(2.0), &c, &VadParams::default(), Speaker::User).is_empty());
        assert!(vad(&silence(0.0), &c, &VadParams::default(), Speaker::User).is_empty());
    }

    #[test]
    fn one_second_sine_is_one_segment() {
        let c = clock();
        // amplitude 0.5 of full scale: peak -6 dBFS
        let s = gen_sine(440.0, 1.0, 0.5, &c).unwrap();
        let segs = vad(&s, &c, &VadParams::default(), Speaker::User);
        assert_eq!(segs.len(), 1);
        assert!(segs[0].start.abs() <= 0.08);
        assert!((segs[0].end - 1.0).abs() <= 0.08);
        assert!((segs[0].mean_level - (-9.03)).abs() < 0.05);
    }

    #[test]
    fn short_gap_is_bridged() {
        let c = clock();
        let burst = gen_sine(300.0, 0.48, 0.5, &c).unwrap();
        let a = cat(&[burst.clone(), silence(0.08), burst.clone()]);
        let p = VadParams {
            hangover: 2,
            ..Default::default()
        };
        assert_eq!(vad(&a, &c, &p, Speaker::User).len(), 1);
        let p0 = VadParams {
            hangover: 0,
            ..Default::default()
        };
        assert_eq!(vad(&a, &c, &p0, Speaker::User).len(), 2);
        // a gap of exactly `hangover` frames is kept
        let b = cat(&[burst.clone(), silence(0.16), burst]);
        assert_eq!(vad(&b, &c, &p, Speaker::User).len(), 2);
    }

    #[test]
    fn short_runs_are_dropped() {
        let runs = smooth_runs(&[true, false, false, false, true, true, false], 2, 2);
        assert_eq!(runs, vec![(4, 6)]);
        assert_eq!(smooth_runs(&[true; 3], 0, 0), vec![(0, 3)]);
    }

    fn turn_trial(delay: f64) -> (AudioBuffer, AudioBuffer) {
        let c = clock();
        let user = cat(&[gen_sine(300.0, 1.6, 0.5, &c).unwrap(), silence(3.0)]);
        let mut agent = silence(1.6 + delay);
        agent
            .append(&gen_sine(500.0, 0.8, 0.5, &c).unwrap())
            .unwrap();
        let pad = user.len() - agent.len();
        agent.append(&silence(pad as f64 / 24_000.0)).unwrap();
        (user, agent)
    }

    #[test]
    fn onset_after_turn_end() {
        let c = clock();
        let (user, agent) = turn_trial(0.4);
        let meta = TrialMeta::new(TrialCategory::TurnTaking, 1.6);
        let ev = extract_events(&user, &agent, &meta, &c, &EventParams::default()).unwrap();
        assert_eq!(ev.agent_onsets.len(), 1);
        assert!((ev.agent_onsets[0] - 2.0).abs() <= 0.08);
        assert_eq!(ev.eval_window, DEFAULT_RESPONSE_WINDOW);
    }

    #[test]
    fn silent_agent_has_no_onsets() {
        let c = clock();
        let (user, _) = turn_trial(0.4);
        let agent = silence(user.duration());
        let meta = TrialMeta::new(TrialCategory::TurnTaking, 1.6);
        let ev = extract_events(&user, &agent, &meta, &c, &EventParams::default()).unwrap();
        assert!(ev.agent_onsets.is_empty());
        assert!(!ev.took_over());
    }

    #[test]
    fn ongoing_speech_counts_at_anchor() {
        let c = clock();
        let user = gen_sine(300.0, 4.0, 0.5, &c).unwrap();
        let agent = gen_sine(500.0, 4.0, 0.5, &c).unwrap();
        let meta = TrialMeta::new(TrialCategory::Interruption, 2.0);
        let ev = extract_events(&user, &agent, &meta, &c, &EventParams::default()).unwrap();
        assert_eq!(ev.agent_onsets, vec![2.0]);
    }

    #[test]
    fn short_vocalization_during_user_speech_is_backchannel() {
        let c = clock();
        let user = gen_sine(300.0, 4.0, 0.5, &c).unwrap();
        let agent = cat(&[
            silence(1.2),
            gen_sine(600.0, 0.32, 0.5, &c).unwrap(),
            silence(2.48),
        ]);
        let meta = TrialMeta::new(TrialCategory::Backchannel, 0.0);
        let ev = extract_events(&user, &agent, &meta, &c, &EventParams::default()).unwrap();
        assert_eq!(ev.backchannels.len(), 1);
        assert!((ev.backchannels[0].relative_position - 0.3).abs() < 0.03);
        assert_eq!(ev.agent_onsets.len(), 1);
        assert!(ev.takeover_onsets.is_empty());
        // same vocalization in a turn-taking trial is not labelled
        let meta = TrialMeta::new(TrialCategory::TurnTaking, 0.0);
        let ev = extract_events(&user, &agent, &meta, &c, &EventParams::default()).unwrap();
        assert!(ev.backchannels.is_empty());
        assert_eq!(ev.takeover_onsets.len(), 1);
    }

    #[test]
    fn missing_anchor_is_rejected() {
        let c = clock();
        let a = silence(1.0);
        let meta = TrialMeta {
            category: Some(TrialCategory::Pause),
            ..Default::default()
        };
        assert!(matches!(
            extract_events(&a, &a, &meta, &c, &EventParams::default()),
            Err(Error::InvalidArgument(_))
        ));
        let meta = TrialMeta::new(TrialCategory::Pause, 0.5);
        assert!(extract_events(&a, &a, &meta, &c, &EventParams::default()).is_err());
        let meta = TrialMeta {
            pause_end: Some(0.9),
            ..TrialMeta::new(TrialCategory::Pause, 0.5)
        };
        let ev = extract_events(&a, &a, &meta, &c, &EventParams::default()).unwrap();
        assert!((ev.eval_window - 0.4).abs() < 1e-12);
        let meta = TrialMeta::new(TrialCategory::TurnTaking, 7.0);
        assert!(extract_events(&a, &a, &meta, &c, &EventParams::default()).is_err());
    }

    #[test]
    fn meta_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = TrialMeta {
            pause_end: Some(2.5),
            vad: Some(VadParams {
                threshold_db: -45.0,
                ..Default::default()
            }),
            ..TrialMeta::new(TrialCategory::Pause, 1.5)
        };
        let p = dir.path().join("meta.toml");
        meta.save(&p).unwrap();
        assert_eq!(TrialMeta::load(&p).unwrap(), meta);
    }
}
