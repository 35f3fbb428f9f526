//! Frame-aligned user-audio / agent-audio / agent-text lanes.

use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, FrameClock};
use crate::codec::AudioTokens;
use crate::error::{Error, Result};

/// Agent text lane entry: a vocabulary id or the padding token.
///
/// On the wire and in sidecars PAD is `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "i64", into = "i64")]
pub enum TextToken {
    Pad,
    Id(u32),
}

impl TextToken {
    pub fn is_pad(self) -> bool {
        matches!(self, TextToken::Pad)
    }

    pub fn id(self) -> Option<u32> {
        match self {
            TextToken::Pad => None,
            TextToken::Id(id) => Some(id),
        }
    }

    pub fn to_wire(self) -> i32 {
        match self {
            TextToken::Pad => -1,
            TextToken::Id(id) => id as i32,
        }
    }

    pub fn from_wire(v: i32) -> Self {
        if v < 0 {
            TextToken::Pad
        } else {
            TextToken::Id(v as u32)
        }
    }
}

impl From<i64> for TextToken {
    fn from(v: i64) -> Self {
        if v < 0 {
            TextToken::Pad
        } else {
            TextToken::Id(v as u32)
        }
    }
}

impl From<TextToken> for i64 {
    fn from(t: TextToken) -> Self {
        t.to_wire() as i64
    }
}

/// Training-loss weights for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameWeights {
    pub text: f32,
    pub audio: Vec<f32>,
}

impl FrameWeights {
    pub fn zero(codebooks: usize) -> Self {
        Self {
            text: 0.0,
            audio: vec![0.0; codebooks],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFrame {
    pub text: TextToken,
    pub audio: AudioTokens,
    pub weights: FrameWeights,
}

impl TokenFrame {
    pub fn new(text: TextToken, audio: AudioTokens) -> Self {
        let k = audio.len();
        Self {
            text,
            audio,
            weights: FrameWeights::zero(k),
        }
    }
}

/// The three model lanes, all of the same length in frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSet {
    user_audio: AudioBuffer,
    agent_audio: AudioBuffer,
    agent_frames: Vec<TokenFrame>,
    clock: FrameClock,
    codebooks: usize,
}

impl StreamSet {
    pub fn empty(clock: FrameClock, codebooks: usize) -> Self {
        let sr = clock.sample_rate();
        Self {
            user_audio: AudioBuffer::silence(0, sr).expect("clock rate is positive"),
            agent_audio: AudioBuffer::silence(0, sr).expect("clock rate is positive"),
            agent_frames: Vec::new(),
            clock,
            codebooks,
        }
    }

    pub fn new(
        user_audio: AudioBuffer,
        agent_audio: AudioBuffer,
        agent_frames: Vec<TokenFrame>,
        clock: FrameClock,
        codebooks: usize,
    ) -> Result<Self> {
        user_audio.check_rate(&clock)?;
        agent_audio.check_rate(&clock)?;
        if user_audio.len() != agent_audio.len() {
            return Err(Error::invalid(format!(
                "lane length mismatch: user {} samples, agent {} samples",
                user_audio.len(),
                agent_audio.len()
            )));
        }
        let frames = user_audio.frame_count(&clock)?;
        if frames != agent_frames.len() {
            return Err(Error::invalid(format!(
                "audio lanes span {frames} frames but {} token frames were given",
                agent_frames.len()
            )));
        }
        for (i, f) in agent_frames.iter().enumerate() {
            check_frame(i, f, codebooks)?;
        }
        Ok(Self {
            user_audio,
            agent_audio,
            agent_frames,
            clock,
            codebooks,
        })
    }

    pub fn user_audio(&self) -> &AudioBuffer {
        &self.user_audio
    }

    pub fn agent_audio(&self) -> &AudioBuffer {
        &self.agent_audio
    }

    pub fn agent_frames(&self) -> &[TokenFrame] {
        &self.agent_frames
    }

    pub fn clock(&self) -> &FrameClock {
        &self.clock
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn len(&self) -> usize {
        self.agent_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_frames.is_empty()
    }

    /// Appends one frame to all three lanes.
    pub fn push_frame(&mut self, user: &[i16], agent: &[i16], frame: TokenFrame) -> Result<()> {
        let spf = self.clock.samples_per_frame();
        if user.len() != spf || agent.len() != spf {
            return Err(Error::invalid(format!(
                "frame must hold {spf} samples per lane, got user {} / agent {}",
                user.len(),
                agent.len()
            )));
        }
        check_frame(self.agent_frames.len(), &frame, self.codebooks)?;
        self.user_audio.extend_from_slice(user);
        self.agent_audio.extend_from_slice(agent);
        self.agent_frames.push(frame);
        Ok(())
    }

    pub fn append(&mut self, other: &StreamSet) -> Result<()> {
        if other.clock != self.clock || other.codebooks != self.codebooks {
            return Err(Error::invalid(
                "cannot append streams with a different clock or codebook count",
            ));
        }
        self.user_audio.append(&other.user_audio)?;
        self.agent_audio.append(&other.agent_audio)?;
        self.agent_frames.extend_from_slice(&other.agent_frames);
        Ok(())
    }

    pub fn set_weights(&mut self, weights: Vec<FrameWeights>) -> Result<()> {
        if weights.len() != self.agent_frames.len() {
            return Err(Error::invalid(format!(
                "{} weight rows for {} frames",
                weights.len(),
                self.agent_frames.len()
            )));
        }
        for (f, w) in self.agent_frames.iter_mut().zip(weights) {
            if w.audio.len() != self.codebooks {
                return Err(Error::invalid("weight row has the wrong codebook count"));
            }
            f.weights = w;
        }
        Ok(())
    }
}

fn check_frame(index: usize, f: &TokenFrame, codebooks: usize) -> Result<()> {
    if f.audio.len() != codebooks || f.weights.audio.len() != codebooks {
        return Err(Error::invalid(format!(
            "frame {index}: expected {codebooks} audio codebooks, got {} tokens / {} weights",
            f.audio.len(),
            f.weights.audio.len()
        )));
    }
    if f.weights.text < 0.0 || f.weights.audio.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid(format!(
            "frame {index}: negative loss weight"
        )));
    }
    Ok(())
}
