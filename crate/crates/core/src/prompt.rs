//! Hybrid system prompt: a voice segment and a role-text segment placed in
//! front of the dialogue on the agent lanes, closed by a delimiter frame.
//!
//! Layout (voice-first):
//!
//! ```text
//! frame      0 .. V          V .. V+T          V+T
//! user       440 Hz sine ------------------------------>
//! agent txt  PAD             role tokens       DELIM
//! agent aud  voice tokens    SILENCE           DELIM
//! ```
//!
//! Every prompt frame carries zero loss weight.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{gen_sine_frames, AudioBuffer, FrameClock, DEFAULT_SINE_AMPLITUDE};
use crate::codec::{AudioTokens, ToyCodec, AUDIO_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::stream::{FrameWeights, StreamSet, TextToken, TokenFrame};
use crate::text::TEXT_VOCAB_SIZE;

/// Frequency of the tone that fills the user lane during the prompt.
pub const PROMPT_SINE_HZ: f64 = 440.0;

/// Loss weight on acoustic (non-semantic) audio codebooks.
pub const ACOUSTIC_LOSS_WEIGHT: f32 = 0.02;
/// Loss weight on padded text positions.
pub const PAD_TEXT_LOSS_WEIGHT: f32 = 0.3;

pub const DEFAULT_TEXT_DELIMITER: u32 = TEXT_VOCAB_SIZE;
pub const DEFAULT_AUDIO_DELIMITER: u32 = AUDIO_VOCAB_SIZE;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentOrder {
    #[default]
    VoiceFirst,
    TextFirst,
}

#[derive(Debug, Clone)]
pub struct HybridPromptSpec {
    pub voice_sample: AudioBuffer,
    pub role_text: Vec<u32>,
    pub order: SegmentOrder,
    pub delimiter_text_id: u32,
    pub delimiter_audio_id: u32,
}

impl HybridPromptSpec {
    pub fn new(voice_sample: AudioBuffer, role_text: Vec<u32>) -> Self {
        Self {
            voice_sample,
            role_text,
            order: SegmentOrder::default(),
            delimiter_text_id: DEFAULT_TEXT_DELIMITER,
            delimiter_audio_id: DEFAULT_AUDIO_DELIMITER,
        }
    }

    pub fn with_order(mut self, order: SegmentOrder) -> Self {
        self.order = order;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrompt {
    pub stream: StreamSet,
    pub voice_span: Range<usize>,
    pub text_span: Range<usize>,
    pub delimiter_frame: usize,
    /// End of the prefix that does not depend on what follows it; with the
    /// voice segment first this is the end of the voice segment.
    pub prefill_boundary: usize,
    pub order: SegmentOrder,
    pub delimiter_text_id: u32,
    pub delimiter_audio_id: u32,
}

impl HybridPrompt {
    pub fn len(&self) -> usize {
        self.stream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stream.is_empty()
    }

    pub fn clock(&self) -> &FrameClock {
        self.stream.clock()
    }

    /// Prompt followed by a dialogue, with training loss weights applied.
    pub fn training_stream(&self, dialogue: &StreamSet) -> Result<StreamSet> {
        let mut s = self.stream.clone();
        s.append(dialogue)?;
        let weights = loss_weight_mask(&s, self)?;
        s.set_weights(weights)?;
        Ok(s)
    }
}

pub fn build_hybrid_prompt(spec: &HybridPromptSpec, codec: &ToyCodec) -> Result<HybridPrompt> {
    let clock = *codec.clock();
    let k = codec.codebooks();
    if spec.delimiter_text_id < TEXT_VOCAB_SIZE {
        return Err(Error::invalid(format!(
            "text delimiter {} collides with the vocabulary range 0..{TEXT_VOCAB_SIZE}",
            spec.delimiter_text_id
        )));
    }
    if spec.delimiter_audio_id < AUDIO_VOCAB_SIZE {
        return Err(Error::invalid(format!(
            "audio delimiter {} collides with the codec range 0..{AUDIO_VOCAB_SIZE}",
            spec.delimiter_audio_id
        )));
    }
    if let Some(bad) = spec.role_text.iter().find(|&&t| t >= TEXT_VOCAB_SIZE) {
        return Err(Error::invalid(format!(
            "role text contains reserved id {bad}"
        )));
    }
    spec.voice_sample.check_rate(&clock)?;
    let voice_frames = spec.voice_sample.frame_count(&clock)?;
    if voice_frames == 0 {
        return Err(Error::invalid("voice sample must span at least one frame"));
    }
    let voice_tokens = codec.encode(&spec.voice_sample)?;
    let text_frames = spec.role_text.len();
    let total = voice_frames + text_frames + 1;
    let spf = clock.samples_per_frame();

    let (voice_span, text_span) = match spec.order {
        SegmentOrder::VoiceFirst => (0..voice_frames, voice_frames..voice_frames + text_frames),
        SegmentOrder::TextFirst => (text_frames..text_frames + voice_frames, 0..text_frames),
    };
    let prefill_boundary = match spec.order {
        SegmentOrder::VoiceFirst => voice_span.end,
        SegmentOrder::TextFirst => text_span.end,
    };

    let user = gen_sine_frames(PROMPT_SINE_HZ, total, DEFAULT_SINE_AMPLITUDE, &clock)?;
    let silence = vec![0i16; spf];
    let mut stream = StreamSet::empty(clock, k);
    let mut text_iter = spec.role_text.iter();
    let mut voice_iter = voice_tokens.into_iter().enumerate();
    for f in 0..total {
        let user_frame = user.frame(&clock, f);
        if voice_span.contains(&f) {
            let (i, tokens) = voice_iter.next().expect("voice span matches token count");
            stream.push_frame(
                user_frame,
                spec.voice_sample.frame(&clock, i),
                TokenFrame::new(TextToken::Pad, tokens),
            )?;
        } else if text_span.contains(&f) {
            let &tok = text_iter
                .next()
                .expect("text span matches role text length");
            stream.push_frame(
                user_frame,
                &silence,
                TokenFrame::new(TextToken::Id(tok), codec.silence_tokens()),
            )?;
        } else {
            stream.push_frame(
                user_frame,
                &silence,
                TokenFrame::new(
                    TextToken::Id(spec.delimiter_text_id),
                    vec![spec.delimiter_audio_id; k],
                ),
            )?;
        }
    }

    Ok(HybridPrompt {
        stream,
        voice_span,
        text_span,
        delimiter_frame: total - 1,
        prefill_boundary,
        order: spec.order,
        delimiter_text_id: spec.delimiter_text_id,
        delimiter_audio_id: spec.delimiter_audio_id,
    })
}

/// Per-frame training weights for a stream that starts with `prompt`.
///
/// Prompt frames are fully masked. Dialogue frames weight text 1.0 (0.3 when
/// padded), the semantic codebook 1.0, and acoustic codebooks 0.02.
pub fn loss_weight_mask(stream: &StreamSet, prompt: &HybridPrompt) -> Result<Vec<FrameWeights>> {
    let p = &prompt.stream;
    let n = p.len();
    let is_prefix = stream.clock() == p.clock()
        && stream.codebooks() == p.codebooks()
        && stream.len() >= n
        && stream.agent_frames()[..n]
            .iter()
            .zip(p.agent_frames())
            .all(|(a, b)| a.text == b.text && a.audio == b.audio)
        && stream
            .user_audio()
            .samples()
            .starts_with(p.user_audio().samples())
        && stream
            .agent_audio()
            .samples()
            .starts_with(p.agent_audio().samples());
    if !is_prefix {
        return Err(Error::invalid("prompt is not a prefix of the stream"));
    }
    let k = stream.codebooks();
    let dialogue_audio: Vec<f32> = (0..k)
        .map(|c| if c == 0 { 1.0 } else { ACOUSTIC_LOSS_WEIGHT })
        .collect();
    Ok(stream
        .agent_frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if i < n {
                FrameWeights::zero(k)
            } else {
                FrameWeights {
                    text: if f.text.is_pad() {
                        PAD_TEXT_LOSS_WEIGHT
                    } else {
                        1.0
                    },
                    audio: dialogue_audio.clone(),
                }
            }
        })
        .collect())
}

/// Encodes a two-lane dialogue plus its text lane into a stream.
pub fn dialogue_stream(
    user: &AudioBuffer,
    agent: &AudioBuffer,
    text: &[TextToken],
    codec: &ToyCodec,
) -> Result<StreamSet> {
    let tokens = codec.encode(agent)?;
    if tokens.len() != text.len() {
        return Err(Error::invalid(format!(
            "text lane has {} entries for {} frames",
            text.len(),
            tokens.len()
        )));
    }
    let frames = tokens
        .into_iter()
        .zip(text)
        .map(|(a, &t)| TokenFrame::new(t, a))
        .collect();
    StreamSet::new(
        user.clone(),
        agent.clone(),
        frames,
        *codec.clock(),
        codec.codebooks(),
    )
}

// Bundle on disk: a directory with the two audio lanes as WAV plus prompt.json.

const BUNDLE_FORMAT: &str = "hybrid-prompt/1";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    clock: FrameClock,
    codebooks: usize,
    order: SegmentOrder,
    voice_span: [usize; 2],
    text_span: [usize; 2],
    delimiter_frame: usize,
    prefill_boundary: usize,
    delimiter_text_id: u32,
    delimiter_audio_id: u32,
    tokens: Vec<SidecarTokens>,
    weights: Vec<FrameWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarTokens {
    text: TextToken,
    audio: AudioTokens,
}

pub const BUNDLE_USER_WAV: &str = "user.wav";
pub const BUNDLE_AGENT_WAV: &str = "agent.wav";
pub const BUNDLE_SIDECAR: &str = "prompt.json";

pub fn save_bundle(prompt: &HybridPrompt, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    prompt
        .stream
        .user_audio()
        .write_wav(dir.join(BUNDLE_USER_WAV))?;
    prompt
        .stream
        .agent_audio()
        .write_wav(dir.join(BUNDLE_AGENT_WAV))?;
    let frames = prompt.stream.agent_frames();
    let sidecar = Sidecar {
        format: BUNDLE_FORMAT.to_string(),
        clock: *prompt.clock(),
        codebooks: prompt.stream.codebooks(),
        order: prompt.order,
        voice_span: [prompt.voice_span.start, prompt.voice_span.end],
        text_span: [prompt.text_span.start, prompt.text_span.end],
        delimiter_frame: prompt.delimiter_frame,
        prefill_boundary: prompt.prefill_boundary,
        delimiter_text_id: prompt.delimiter_text_id,
        delimiter_audio_id: prompt.delimiter_audio_id,
        tokens: frames
            .iter()
            .map(|f| SidecarTokens {
                text: f.text,
                audio: f.audio.clone(),
            })
            .collect(),
        weights: frames.iter().map(|f| f.weights.clone()).collect(),
    };
    fs::write(
        dir.join(BUNDLE_SIDECAR),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<HybridPrompt> {
    let dir = dir.as_ref();
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join(BUNDLE_SIDECAR))?)?;
    if sidecar.format != BUNDLE_FORMAT {
        return Err(Error::schema(
            "format",
            format!("expected `{BUNDLE_FORMAT}`, found `{}`", sidecar.format),
        ));
    }
    if sidecar.tokens.len() != sidecar.weights.len() {
        return Err(Error::schema(
            "weights",
            "one weight row per token frame required",
        ));
    }
    let user = AudioBuffer::read_wav(dir.join(BUNDLE_USER_WAV))?;
    let agent = AudioBuffer::read_wav(dir.join(BUNDLE_AGENT_WAV))?;
    let frames = sidecar
        .tokens
        .into_iter()
        .zip(sidecar.weights)
        .map(|(t, w)| TokenFrame {
            text: t.text,
            audio: t.audio,
            weights: w,
        })
        .collect();
    let stream = StreamSet::new(user, agent, frames, sidecar.clock, sidecar.codebooks)?;
    let voice_span = sidecar.voice_span[0]..sidecar.voice_span[1];
    let text_span = sidecar.text_span[0]..sidecar.text_span[1];
    let n = stream.len();
    if n == 0
        || sidecar.delimiter_frame + 1 != n
        || voice_span.len() + text_span.len() + 1 != n
        || voice_span.end > sidecar.delimiter_frame
        || text_span.end > sidecar.delimiter_frame
    {
        return Err(Error::schema(
            "voice_span",
            "spans and delimiter frame are inconsistent with the frame count",
        ));
    }
    Ok(HybridPrompt {
        stream,
        voice_span,
        text_span,
        delimiter_frame: sidecar.delimiter_frame,
        prefill_boundary: sidecar.prefill_boundary,
        order: sidecar.order,
        delimiter_text_id: sidecar.delimiter_text_id,
        delimiter_audio_id: sidecar.delimiter_audio_id,
    })
}
