//! Two-lane dialog assembly.
//!
//! Turns are laid end to end with a per-turn gap. A negative gap starts the
//! next turn before the current one ends (barge-in); the two lanes stay
//! separate, so an overlap is co-activity, never a mix.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, FrameClock};
use crate::error::{Error, Result};

/// Gap inserted after a turn when a script leaves `pad_after` unset.
pub const DEFAULT_TURN_GAP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone)]
pub struct Turn {
    pub speaker: Speaker,
    pub audio: AudioBuffer,
    pub transcript: String,
    /// Seconds of silence after this turn; negative values overlap the next turn.
    pub pad_after: f64,
}

impl Turn {
    pub fn new(speaker: Speaker, audio: AudioBuffer, pad_after: f64) -> Self {
        Self {
            speaker,
            audio,
            transcript: String::new(),
            pad_after,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSpan {
    pub speaker: Speaker,
    pub transcript: String,
    pub start: f64,
    pub end: f64,
    pub start_sample: usize,
    pub end_sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchedDialog {
    pub user_channel: AudioBuffer,
    pub agent_channel: AudioBuffer,
    pub alignment: Vec<TurnSpan>,
    /// Merged `(start, end)` intervals, in seconds, where both lanes carry a turn.
    pub overlaps: Vec<(f64, f64)>,
}

impl StitchedDialog {
    pub fn duration(&self) -> f64 {
        self.user_channel.duration()
    }

    pub fn channel(&self, speaker: Speaker) -> &AudioBuffer {
        match speaker {
            Speaker::User => &self.user_channel,
            Speaker::Agent => &self.agent_channel,
        }
    }
}

pub fn stitch(turns: &[Turn], clock: &FrameClock) -> Result<StitchedDialog> {
    if turns.is_empty() {
        return Err(Error::Stitch("dialog has no turns".into()));
    }
    let sr = clock.sample_rate() as f64;
    let mut spans: Vec<(i64, i64)> = Vec::with_capacity(turns.len());
    let mut cursor: i64 = 0;
    for (k, turn) in turns.iter().enumerate() {
        turn.audio.check_rate(clock)?;
        if turn.audio.is_empty() {
            return Err(Error::Stitch(format!("turn {k} has no audio")));
        }
        if !turn.pad_after.is_finite() {
            return Err(Error::Stitch(format!("turn {k} has a non-finite pad")));
        }
        if cursor < 0 {
            return Err(Error::Stitch(format!(
                "turn {k} would start at {:.3} s, before the dialog begins",
                cursor as f64 / sr
            )));
        }
        let len = turn.audio.len() as i64;
        spans.push((cursor, cursor + len));
        let pad = (turn.pad_after * sr).round() as i64;
        if pad < 0 {
            match turns.get(k + 1) {
                None => {
                    return Err(Error::Stitch(format!(
                        "final turn {k} has a negative pad but nothing follows it"
                    )))
                }
                Some(next) if -pad >= next.audio.len() as i64 => {
                    return Err(Error::Stitch(format!(
                        "overlap of {:.3} s after turn {k} exceeds the following turn",
                        -turn.pad_after
                    )))
                }
                Some(_) => {}
            }
        }
        cursor += len + pad;
    }

    let last = turns.len() - 1;
    let tail = (turns[last].pad_after * sr).round().max(0.0) as i64;
    let content_end = spans[last].1 + tail;
    let total = content_end as usize;
    let spf = clock.samples_per_frame();
    let total = total.div_ceil(spf) * spf;

    let mut overlaps = Vec::new();
    for i in 0..turns.len() {
        for j in i + 1..turns.len() {
            let lo = spans[i].0.max(spans[j].0);
            let hi = spans[i].1.min(spans[j].1);
            if lo >= hi {
                continue;
            }
            if turns[i].speaker == turns[j].speaker {
                return Err(Error::Stitch(format!(
                    "turns {i} and {j} are both {:?} and overlap",
                    turns[i].speaker
                )));
            }
            overlaps.push((lo, hi));
        }
    }
    overlaps.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (lo, hi) in overlaps {
        match merged.last_mut() {
            Some(m) if lo <= m.1 => m.1 = m.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }

    let mut user = vec![0i16; total];
    let mut agent = vec![0i16; total];
    let mut alignment = Vec::with_capacity(turns.len());
    for (turn, &(s, e)) in turns.iter().zip(&spans) {
        let (s, e) = (s as usize, e as usize);
        let lane = match turn.speaker {
            Speaker::User => &mut user,
            Speaker::Agent => &mut agent,
        };
        lane[s..e].copy_from_slice(turn.audio.samples());
        alignment.push(TurnSpan {
            speaker: turn.speaker,
            transcript: turn.transcript.clone(),
            start: s as f64 / sr,
            end: e as f64 / sr,
            start_sample: s,
            end_sample: e,
        });
    }

    Ok(StitchedDialog {
        user_channel: AudioBuffer::new(user, clock.sample_rate())?,
        agent_channel: AudioBuffer::new(agent, clock.sample_rate())?,
        alignment,
        overlaps: merged
            .into_iter()
            .map(|(lo, hi)| (lo as f64 / sr, hi as f64 / sr))
            .collect(),
    })
}

/// Samples gaps for synthetic corpora: with probability `barge_in_prob` the
/// gap is a negative overlap drawn from `overlap`, otherwise a silence drawn
/// from `gap`. No distribution is assumed; callers choose all parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadSampler {
    pub gap: (f64, f64),
    pub overlap: (f64, f64),
    pub barge_in_prob: f64,
}

impl PadSampler {
    pub fn new(gap: (f64, f64), overlap: (f64, f64), barge_in_prob: f64) -> Result<Self> {
        let ok_range = |r: (f64, f64)| r.0 >= 0.0 && r.1 >= r.0 && r.1.is_finite();
        if !ok_range(gap) || !ok_range(overlap) || !(0.0..=1.0).contains(&barge_in_prob) {
            return Err(Error::invalid(
                "pad sampler ranges must be ordered and non-negative",
            ));
        }
        Ok(Self {
            gap,
            overlap,
            barge_in_prob,
        })
    }

    /// One pad value; overlaps are capped just below `next_duration`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, next_duration: f64) -> f64 {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        if rng.gen_bool(self.barge_in_prob) {
            let o = draw(rng, self.overlap);
            -o.min(next_duration * 0.99)
        } else {
            draw(rng, self.gap)
        }
    }

    /// Fills `pad_after` of every turn but the last, which gets no trailing pad.
    pub fn assign<R: Rng + ?Sized>(&self, rng: &mut R, turns: &mut [Turn]) {
        let n = turns.len();
        for k in 0..n {
            turns[k].pad_after = if k + 1 < n {
                let next = turns[k + 1].audio.duration();
                let pad = self.sample(rng, next);
                // overlapping a same-speaker turn is never valid
                if turns[k].speaker == turns[k + 1].speaker {
                    pad.abs()
                } else {
                    pad
                }
            } else {
                0.0
            };
        }
    }
}

// Script files.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTurn {
    pub speaker: Speaker,
    pub wav: PathBuf,
    #[serde(default)]
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_after: Option<f64>,
}

/// A dialog script: an ordered list of turns referencing WAV files.
///
/// ```toml
/// [[turn]]
/// speaker = "user"
/// wav = "q.wav"
/// transcript = "Hi there"
/// pad_after = -0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogScript {
    #[serde(rename = "turn")]
    pub turns: Vec<ScriptTurn>,
}

impl DialogScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }

    /// Loads the referenced WAVs, resolving relative paths against `base`.
    pub fn to_turns(&self, base: &Path) -> Result<Vec<Turn>> {
        self.turns
            .iter()
            .map(|t| {
                let path = if t.wav.is_absolute() {
                    t.wav.clone()
                } else {
                    base.join(&t.wav)
                };
                Ok(Turn {
                    speaker: t.speaker,
                    audio: AudioBuffer::read_wav(&path)?,
                    transcript: t.transcript.clone(),
                    pad_after: t.pad_after.unwrap_or(DEFAULT_TURN_GAP),
                })
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlignmentSidecar {
    pub clock: FrameClock,
    pub duration: f64,
    pub turns: Vec<TurnSpan>,
    pub overlaps: Vec<(f64, f64)>,
}

pub const USER_WAV: &str = "user.wav";
pub const AGENT_WAV: &str = "agent.wav";
pub const ALIGNMENT_FILE: &str = "alignment.json";

/// Writes `user.wav`, `agent.wav` and `alignment.json` into `dir`.
pub fn write_stitched(
    dialog: &StitchedDialog,
    clock: &FrameClock,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    dialog.user_channel.write_wav(dir.join(USER_WAV))?;
    dialog.agent_channel.write_wav(dir.join(AGENT_WAV))?;
    let sidecar = AlignmentSidecar {
        clock: *clock,
        duration: dialog.duration(),
        turns: dialog.alignment.clone(),
        overlaps: dialog.overlaps.clone(),
    };
    fs::write(
        dir.join(ALIGNMENT_FILE),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}
