use std::collections::VecDeque;

use crate::audio::{level_dbfs, AudioBuffer, FrameClock, FULL_SCALE};
use crate::error::{Error, Result};
use crate::prompt::HybridPrompt;
use crate::stream::TextToken;
use crate::text::Vocabulary;

use super::{AgentFrameIn, AgentFrameOut, DuplexAgent};

/// Outputs silence and PAD for every input.
#[derive(Debug, Clone)]
pub struct SilentAgent {
    spf: usize,
}

impl SilentAgent {
    pub fn new(clock: &FrameClock) -> Self {
        Self {
            spf: clock.samples_per_frame(),
        }
    }
}

impl Default for SilentAgent {
    fn default() -> Self {
        Self::new(&FrameClock::default())
    }
}

impl DuplexAgent for SilentAgent {
    fn name(&self) -> &str {
        "silent"
    }

    fn begin(&mut self, _: &HybridPrompt) -> Result<()> {
        Ok(())
    }

    fn step(&mut self, _: &AgentFrameIn) -> Result<AgentFrameOut> {
        Ok(AgentFrameOut::silent(self.spf))
    }
}

/// Replays the user input delayed by a fixed number of frames.
#[derive(Debug, Clone)]
pub struct EchoAgent {
    delay: usize,
    spf: usize,
    history: VecDeque<Vec<i16>>,
}

impl EchoAgent {
    pub fn new(delay_frames: usize, clock: &FrameClock) -> Self {
        Self {
            delay: delay_frames,
            spf: clock.samples_per_frame(),
            history: VecDeque::new(),
        }
    }
}

impl DuplexAgent for EchoAgent {
    fn name(&self) -> &str {
        "echo"
    }

    fn begin(&mut self, _: &HybridPrompt) -> Result<()> {
        self.history.clear();
        Ok(())
    }

    fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut> {
        self.history.push_back(frame.pcm.clone());
        let pcm = if self.history.len() > self.delay {
            self.history.pop_front().unwrap_or_default()
        } else {
            vec![0; self.spf]
        };
        Ok(AgentFrameOut {
            pcm,
            text: TextToken::Pad,
        })
    }
}

/// Speaks a continuous tone on every frame.
#[derive(Debug, Clone)]
pub struct AlwaysSpeakingAgent {
    clock: FrameClock,
    freq: f64,
    amplitude: f64,
    phase_samples: u64,
}

impl AlwaysSpeakingAgent {
    pub fn new(clock: &FrameClock) -> Self {
        Self {
            clock: *clock,
            freq: 220.0,
            amplitude: 0.3,
            phase_samples: 0,
        }
    }
}

impl Default for AlwaysSpeakingAgent {
    fn default() -> Self {
        Self::new(&FrameClock::default())
    }
}

impl DuplexAgent for AlwaysSpeakingAgent {
    fn name(&self) -> &str {
        "always-speaking"
    }

    fn begin(&mut self, _: &HybridPrompt) -> Result<()> {
        self.phase_samples = 0;
        Ok(())
    }

    fn step(&mut self, _: &AgentFrameIn) -> Result<AgentFrameOut> {
        let sr = self.clock.sample_rate() as f64;
        let spf = self.clock.samples_per_frame() as u64;
        let pcm = (self.phase_samples..self.phase_samples + spf)
            .map(|n| {
                let v =
                    self.amplitude * (2.0 * std::f64::consts::PI * self.freq * n as f64 / sr).sin();
                (v * (FULL_SCALE - 1.0)).round() as i16
            })
            .collect();
        self.phase_samples += spf;
        Ok(AgentFrameOut {
            pcm,
            text: TextToken::Pad,
        })
    }
}

/// Default response delay of the scripted agent.
pub const DEFAULT_RESPONSE_LATENCY: f64 = 0.4;

/// One scripted reply: audio plus the text tokens emitted alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedResponse {
    pub audio: AudioBuffer,
    pub text: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Listening { active_run: usize, heard: bool },
    Waiting { remaining: usize },
    Speaking { frame: usize },
}

/// Oracle agent: detects the end of each user turn online with a frame
/// energy threshold, waits a fixed number of frames, then plays the next
/// scripted response.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    clock: FrameClock,
    responses: Vec<ScriptedResponse>,
    vocabulary: Option<Vocabulary>,
    latency_frames: usize,
    threshold_db: f64,
    min_speech_frames: usize,
    phase: Phase,
    turn: usize,
}

impl ScriptedAgent {
    pub fn new(
        clock: &FrameClock,
        responses: Vec<ScriptedResponse>,
        latency_seconds: f64,
    ) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::invalid("scripted agent needs at least one response"));
        }
        if !(latency_seconds >= 0.0 && latency_seconds.is_finite()) {
            return Err(Error::invalid(format!(
                "latency must be non-negative, got {latency_seconds}"
            )));
        }
        for r in &responses {
            r.audio.check_rate(clock)?;
        }
        Ok(Self {
            clock: *clock,
            responses,
            vocabulary: None,
            latency_frames: (latency_seconds * clock.frame_rate()).round() as usize,
            threshold_db: -40.0,
            min_speech_frames: 2,
            phase: Phase::Listening {
                active_run: 0,
                heard: false,
            },
            turn: 0,
        })
    }

    /// Builds a single-response agent whose transcript is `text`, growing
    /// a vocabulary that maps the emitted ids back to words.
    pub fn with_text(
        clock: &FrameClock,
        audio: AudioBuffer,
        text: &str,
        latency_seconds: f64,
    ) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        let ids = vocab.tokenize_growing(text)?;
        let mut agent = Self::new(
            clock,
            vec![ScriptedResponse { audio, text: ids }],
            latency_seconds,
        )?;
        agent.vocabulary = Some(vocab);
        Ok(agent)
    }

    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = Some(vocabulary);
        self
    }

    pub fn with_threshold(mut self, threshold_db: f64) -> Self {
        self.threshold_db = threshold_db;
        self
    }

    pub fn latency_frames(&self) -> usize {
        self.latency_frames
    }

    fn response(&self) -> &ScriptedResponse {
        &self.responses[self.turn.min(self.responses.len() - 1)]
    }

    fn response_frames(&self) -> usize {
        let r = self.response();
        r.audio
            .len()
            .div_ceil(self.clock.samples_per_frame())
            .max(r.text.len())
    }

    fn speak(&mut self, frame: usize) -> AgentFrameOut {
        let spf = self.clock.samples_per_frame();
        let r = self.response();
        let lo = (frame * spf).min(r.audio.len());
        let hi = ((frame + 1) * spf).min(r.audio.len());
        let mut pcm = r.audio.samples()[lo..hi].to_vec();
        pcm.resize(spf, 0);
        let text = r
            .text
            .get(frame)
            .map_or(TextToken::Pad, |&id| TextToken::Id(id));
        if frame + 1 >= self.response_frames() {
            self.turn += 1;
            self.phase = Phase::Listening {
                active_run: 0,
                heard: false,
            };
        } else {
            self.phase = Phase::Speaking { frame: frame + 1 };
        }
        AgentFrameOut { pcm, text }
    }
}

impl DuplexAgent for ScriptedAgent {
    fn name(&self) -> &str {
        "scripted"
    }

    fn begin(&mut self, _: &HybridPrompt) -> Result<()> {
        self.turn = 0;
        self.phase = Phase::Listening {
            active_run: 0,
            heard: false,
        };
        Ok(())
    }

    fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut> {
        let spf = self.clock.samples_per_frame();
        match self.phase {
            Phase::Listening { active_run, heard } => {
                let active = level_dbfs(&frame.pcm) >= self.threshold_db;
                if active {
                    let run = active_run + 1;
                    self.phase = Phase::Listening {
                        active_run: run,
                        heard: heard || run >= self.min_speech_frames,
                    };
                } else if heard {
                    // this frame is the first silent frame after the turn
                    if self.latency_frames == 0 {
                        return Ok(self.speak(0));
                    }
                    self.phase = Phase::Waiting {
                        remaining: self.latency_frames - 1,
                    };
                } else {
                    self.phase = Phase::Listening {
                        active_run: 0,
                        heard: false,
                    };
                }
                Ok(AgentFrameOut::silent(spf))
            }
            Phase::Waiting { remaining: 0 } => Ok(self.speak(0)),
            Phase::Waiting { remaining } => {
                self.phase = Phase::Waiting {
                    remaining: remaining - 1,
                };
                Ok(AgentFrameOut::silent(spf))
            }
            Phase::Speaking { frame } => Ok(self.speak(frame)),
        }
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocabulary.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::tests::tiny_prompt;
    use crate::audio::gen_sine_frames;

    fn run(
        agent: &mut dyn DuplexAgent,
        input: &AudioBuffer,
        clock: &FrameClock,
    ) -> Vec<AgentFrameOut> {
        agent.begin(&tiny_prompt()).unwrap();
        input
            .frames(clock)
            .enumerate()
            .map(|(i, pcm)| {
                agent
                    .step(&AgentFrameIn {
                        frame_index: i as u32,
                        pcm: pcm.to_vec(),
                    })
                    .unwrap()
            })
            .collect()
    }

    fn speech_then_silence(speech: usize, silence: usize) -> AudioBuffer {
        let c = FrameClock::default();
        let mut a = gen_sine_frames(300.0, speech, 0.4, &c).unwrap();
        a.append(&AudioBuffer::silence(silence * 1920, 24000).unwrap())
            .unwrap();
        a
    }

    #[test]
    fn silent_agent_outputs_zeros() {
        let c = FrameClock::default();
        let out = run(&mut SilentAgent::new(&c), &speech_then_silence(5, 5), &c);
        assert_eq!(out.len(), 10);
        assert!(out
            .iter()
            .all(|o| o.pcm.iter().all(|&s| s == 0) && o.text.is_pad()));
    }

    #[test]
    fn echo_agent_delays_input() {
        let c = FrameClock::default();
        let input = gen_sine_frames(300.0, 10, 0.4, &c).unwrap();
        let out = run(&mut EchoAgent::new(3, &c), &input, &c);
        for (t, o) in out.iter().enumerate() {
            if t < 3 {
                assert!(o.pcm.iter().all(|&s| s == 0));
            } else {
                assert_eq!(o.pcm.as_slice(), input.frame(&c, t - 3));
            }
        }
        let zero = run(&mut EchoAgent::new(0, &c), &input, &c);
        assert_eq!(zero[4].pcm.as_slice(), input.frame(&c, 4));
    }

    #[test]
    fn always_speaking_agent_is_loud_everywhere() {
        let c = FrameClock::default();
        let out = run(
            &mut AlwaysSpeakingAgent::new(&c),
            &speech_then_silence(2, 4),
            &c,
        );
        assert!(out.iter().all(|o| level_dbfs(&o.pcm) > -20.0));
    }

    #[test]
    fn scripted_agent_waits_latency_frames() {
        let c = FrameClock::default();
        let reply = gen_sine_frames(500.0, 4, 0.3, &c).unwrap();
        let mut agent = ScriptedAgent::new(
            &c,
            vec![ScriptedResponse {
                audio: reply.clone(),
                text: vec![10, 11],
            }],
            0.4,
        )
        .unwrap();
        assert_eq!(agent.latency_frames(), 5);
        let out = run(&mut agent, &speech_then_silence(6, 14), &c);
        // first silent frame is 6; the reply starts 5 frames later
        for (t, o) in out.iter().enumerate() {
            let speaking = (11..15).contains(&t);
            assert_eq!(level_dbfs(&o.pcm) > -40.0, speaking, "frame {t}");
            if speaking {
                assert_eq!(o.pcm.as_slice(), reply.frame(&c, t - 11));
            }
        }
        assert_eq!(out[11].text, TextToken::Id(10));
        assert_eq!(out[12].text, TextToken::Id(11));
        assert!(out[13].text.is_pad());
    }

    #[test]
    fn scripted_agent_ignores_single_frame_blips() {
        let c = FrameClock::default();
        let reply = gen_sine_frames(500.0, 2, 0.3, &c).unwrap();
        let mut agent = ScriptedAgent::with_text(&c, reply, "hello there", 0.0).unwrap();
        let out = run(&mut agent, &speech_then_silence(1, 6), &c);
        assert!(out.iter().all(|o| o.text.is_pad()));
        let out = run(&mut agent, &speech_then_silence(2, 6), &c);
        assert_eq!(out[2].text, TextToken::Id(0));
        assert_eq!(
            agent.vocabulary().unwrap().detokenize([0, 1]),
            "hello there"
        );
    }

    #[test]
    fn scripted_agent_cycles_responses() {
        let c = FrameClock::default();
        let r = |f| ScriptedResponse {
            audio: gen_sine_frames(f, 2, 0.3, &c).unwrap(),
            text: vec![],
        };
        let mut agent = ScriptedAgent::new(&c, vec![r(500.0), r(700.0)], 0.08).unwrap();
        let mut input = speech_then_silence(3, 5);
        input.append(&speech_then_silence(3, 5)).unwrap();
        let out = run(&mut agent, &input, &c);
        assert!(level_dbfs(&out[4].pcm) > -20.0);
        assert!(level_dbfs(&out[12].pcm) > -20.0);
        assert_ne!(out[4].pcm, out[12].pcm);
        assert!(ScriptedAgent::new(&c, vec![], 0.4).is_err());
        assert!(ScriptedAgent::new(&c, vec![r(500.0)], -1.0).is_err());
    }
}
