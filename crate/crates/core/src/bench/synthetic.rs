//! Randomized single-anchor trials for the four behaviour categories.

use rand::Rng;

use crate::agents::DuplexAgent;
use crate::audio::{gen_sine_frames, AudioBuffer, FrameClock};
use crate::codec::ToyCodec;
use crate::error::Result;
use crate::prompt::{build_hybrid_prompt, HybridPrompt, HybridPromptSpec};
use crate::text::Vocabulary;
use crate::vad::{extract_events, TrialCategory, TrialEvents, TrialMeta};

use super::synth::{synthesize_voice_sample, VoiceParams};
use super::trial::{stream_through, TrialOptions};

/// User lane and anchor metadata of one synthetic trial.
#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    pub user: AudioBuffer,
    pub meta: TrialMeta,
}

fn speech(frames: usize, freq: f64, amplitude: f64, clock: &FrameClock) -> Result<AudioBuffer> {
    gen_sine_frames(freq, frames, amplitude, clock)
}

fn silence(frames: usize, clock: &FrameClock) -> Result<AudioBuffer> {
    AudioBuffer::silence(clock.samples_for_frames(frames), clock.sample_rate())
}

/// Draws a trial with frame-aligned user speech:
///
/// * pause: speech, a 1.2–2.0 s pause, speech; anchor at the pause start;
/// * backchannel: one long utterance; anchor at its onset;
/// * turn taking: a single utterance; anchor at its end;
/// * interruption: leading silence then speech; anchor at the speech onset.
pub fn synthetic_trial<R: Rng + ?Sized>(
    category: TrialCategory,
    clock: &FrameClock,
    rng: &mut R,
) -> Result<SyntheticTrial> {
    let fr = clock.frame_rate();
    let frames = |rng: &mut R, lo: f64, hi: f64| ((rng.gen_range(lo..hi)) * fr).round() as usize;
    let freq = rng.gen_range(120.0..600.0);
    let amp = rng.gen_range(0.05..0.6);
    let t = |f: usize| clock.frame_time(f);
    let lead = frames(rng, 0.2, 0.6);
    let mut user = silence(lead, clock)?;
    let meta = match category {
        TrialCategory::Pause => {
            let a = frames(rng, 1.0, 2.5);
            let gap = frames(rng, 1.2, 2.0);
            let b = frames(rng, 1.0, 2.0);
            user.append(&speech(a, freq, amp, clock)?)?;
            user.append(&silence(gap, clock)?)?;
            user.append(&speech(b, freq, amp, clock)?)?;
            TrialMeta {
                pause_end: Some(t(lead + a + gap)),
                ..TrialMeta::new(category, t(lead + a))
            }
        }
        TrialCategory::Backchannel => {
            let a = frames(rng, 4.0, 7.0);
            user.append(&speech(a, freq, amp, clock)?)?;
            TrialMeta::new(category, t(lead))
        }
        TrialCategory::TurnTaking => {
            let a = frames(rng, 1.0, 3.0);
            user.append(&speech(a, freq, amp, clock)?)?;
            TrialMeta::new(category, t(lead + a))
        }
        TrialCategory::Interruption => {
            let quiet = frames(rng, 0.5, 1.5);
            let a = frames(rng, 1.0, 2.5);
            user.append(&silence(quiet, clock)?)?;
            user.append(&speech(a, freq, amp, clock)?)?;
            TrialMeta::new(category, t(lead + quiet))
        }
    };
    Ok(SyntheticTrial { user, meta })
}

/// Minimal prompt for synthetic runs.
pub fn synthetic_prompt(opts: &TrialOptions) -> Result<HybridPrompt> {
    let codec = ToyCodec::new(opts.clock, opts.codebooks)?;
    let voice = synthesize_voice_sample(&VoiceParams::default(), &opts.clock)?;
    let role = Vocabulary::new().tokenize_growing("you are a helpful assistant")?;
    let spec = HybridPromptSpec::new(voice, role).with_order(opts.order);
    build_hybrid_prompt(&spec, &codec)
}

/// Streams the trial through `agent` and extracts its events.
pub fn run_synthetic(
    agent: &mut dyn DuplexAgent,
    prompt: &HybridPrompt,
    trial: &SyntheticTrial,
    opts: &TrialOptions,
) -> Result<TrialEvents> {
    let cap = stream_through(agent, prompt, &trial.user, opts)?;
    extract_events(
        &cap.user_lane,
        &cap.agent_lane,
        &trial.meta,
        &opts.clock,
        &opts.events,
    )
}
