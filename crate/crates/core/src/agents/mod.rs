//! The duplex agent contract, reference agents and the wire protocol.

mod reference;
pub mod wire;

pub use reference::{
    AlwaysSpeakingAgent, EchoAgent, ScriptedAgent, ScriptedResponse, SilentAgent,
    DEFAULT_RESPONSE_LATENCY,
};
pub use wire::{connect_wire, serve_wire, RemoteAgent, WireConfig};

use std::time::{Duration, Instant};

use crate::audio::FrameClock;
use crate::error::{Error, Result};
use crate::prompt::HybridPrompt;
use crate::stream::TextToken;
use crate::text::Vocabulary;

/// One user audio frame delivered to the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFrameIn {
    pub frame_index: u32,
    pub pcm: Vec<i16>,
}

/// The agent's reply to one input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFrameOut {
    pub pcm: Vec<i16>,
    pub text: TextToken,
}

impl AgentFrameOut {
    pub fn silent(samples_per_frame: usize) -> Self {
        Self {
            pcm: vec![0; samples_per_frame],
            text: TextToken::Pad,
        }
    }
}

/// A full-duplex agent: conditioned once by a prompt, then stepped one
/// frame at a time. Instances serve one session at a time.
pub trait DuplexAgent: Send {
    fn name(&self) -> &str;

    /// Resets per-session state and consumes the conditioning prompt.
    fn begin(&mut self, prompt: &HybridPrompt) -> Result<()>;

    fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut>;

    fn end(&mut self) -> Result<()> {
        Ok(())
    }

    /// Mapping from emitted text ids to strings, when the agent has one.
    fn vocabulary(&self) -> Option<&Vocabulary> {
        None
    }
}

impl<A: DuplexAgent + ?Sized> DuplexAgent for Box<A> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn begin(&mut self, prompt: &HybridPrompt) -> Result<()> {
        (**self).begin(prompt)
    }
    fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut> {
        (**self).step(frame)
    }
    fn end(&mut self) -> Result<()> {
        (**self).end()
    }
    fn vocabulary(&self) -> Option<&Vocabulary> {
        (**self).vocabulary()
    }
}

impl<A: DuplexAgent + ?Sized> DuplexAgent for &mut A {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn begin(&mut self, prompt: &HybridPrompt) -> Result<()> {
        (**self).begin(prompt)
    }
    fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut> {
        (**self).step(frame)
    }
    fn end(&mut self) -> Result<()> {
        (**self).end()
    }
    fn vocabulary(&self) -> Option<&Vocabulary> {
        (**self).vocabulary()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingPrompt,
    Streaming,
    Closed,
}

/// Enforces the session contract around an agent: one prompt before
/// frame 0, frames in index order, exact frame sizes, nothing after close.
pub struct AgentSession<A: DuplexAgent> {
    agent: A,
    clock: FrameClock,
    state: SessionState,
    next_index: u32,
    realtime_budget: Option<Duration>,
    budget_violations: usize,
    step_times: Vec<Duration>,
}

impl<A: DuplexAgent> AgentSession<A> {
    pub fn new(agent: A, clock: FrameClock) -> Self {
        Self {
            agent,
            clock,
            state: SessionState::AwaitingPrompt,
            next_index: 0,
            realtime_budget: None,
            budget_violations: 0,
            step_times: Vec::new(),
        }
    }

    pub fn with_realtime_budget(mut self, budget: Duration) -> Self {
        self.realtime_budget = Some(budget);
        self
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn agent(&self) -> &A {
        &self.agent
    }

    pub fn into_agent(self) -> A {
        self.agent
    }

    pub fn frames_stepped(&self) -> u32 {
        self.next_index
    }

    pub fn budget_violations(&self) -> usize {
        self.budget_violations
    }

    /// Wall-clock time of every completed step.
    pub fn step_times(&self) -> &[Duration] {
        &self.step_times
    }

    pub fn begin(&mut self, prompt: &HybridPrompt) -> Result<()> {
        match self.state {
            SessionState::AwaitingPrompt => {}
            SessionState::Streaming => {
                return Err(Error::Protocol(
                    "prompt already delivered for this session".into(),
                ))
            }
            SessionState::Closed => return Err(Error::Protocol("session is closed".into())),
        }
        if prompt.clock() != &self.clock {
            return Err(Error::Protocol(
                "prompt clock differs from the session clock".into(),
            ));
        }
        self.agent.begin(prompt)?;
        self.state = SessionState::Streaming;
        Ok(())
    }

    pub fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut> {
        match self.state {
            SessionState::Streaming => {}
            SessionState::AwaitingPrompt => {
                return Err(Error::Protocol("frame received before the prompt".into()))
            }
            SessionState::Closed => return Err(Error::Protocol("session is closed".into())),
        }
        if frame.frame_index != self.next_index {
            return Err(Error::Protocol(format!(
                "out-of-order frame: expected index {}, got {}",
                self.next_index, frame.frame_index
            )));
        }
        let spf = self.clock.samples_per_frame();
        if frame.pcm.len() != spf {
            return Err(Error::Protocol(format!(
                "input frame holds {} samples, expected {spf}",
                frame.pcm.len()
            )));
        }
        let t0 = Instant::now();
        let out = self.agent.step(frame)?;
        let elapsed = t0.elapsed();
        if out.pcm.len() != spf {
            return Err(Error::Protocol(format!(
                "agent `{}` returned {} samples, expected {spf}",
                self.agent.name(),
                out.pcm.len()
            )));
        }
        if self.realtime_budget.is_some_and(|b| elapsed > b) {
            self.budget_violations += 1;
        }
        self.step_times.push(elapsed);
        self.next_index += 1;
        Ok(out)
    }

    pub fn end(&mut self) -> Result<()> {
        if self.state == SessionState::Closed {
            return Err(Error::Protocol("session is closed".into()));
        }
        self.state = SessionState::Closed;
        self.agent.end()
    }
}
