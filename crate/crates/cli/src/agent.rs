//! Agent selection: built-in reference agents or a wire endpoint.

use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};

use duplexbench::agents::{
    AlwaysSpeakingAgent, DuplexAgent, EchoAgent, RemoteAgent, ScriptedAgent, SilentAgent,
    WireConfig, DEFAULT_RESPONSE_LATENCY,
};
use duplexbench::audio::FrameClock;
use duplexbench::bench::synth::{synthesize_utterance, VoiceParams};
use duplexbench::text::Vocabulary;

pub const DEFAULT_REPLY: &str = "I understand, let me check that for you.";
/// Voice of the built-in scripted agent.
pub const SCRIPTED_VOICE: &str = "reference-agent";

#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    Silent,
    Echo { delay_frames: usize },
    Always,
    Scripted { latency: f64 },
    Tcp { addr: String },
}

impl FromStr for AgentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        let num = |a: &str| a.parse::<f64>().map_err(|e| format!("`{a}`: {e}"));
        match (kind, arg) {
            ("silent", None) => Ok(AgentSpec::Silent),
            ("always", None) => Ok(AgentSpec::Always),
            ("echo", None) => Ok(AgentSpec::Echo { delay_frames: 0 }),
            ("echo", Some(a)) => a
                .parse()
                .map(|delay_frames| AgentSpec::Echo { delay_frames })
                .map_err(|e| format!("echo delay `{a}`: {e}")),
            ("scripted", None) => Ok(AgentSpec::Scripted {
                latency: DEFAULT_RESPONSE_LATENCY,
            }),
            ("scripted", Some(a)) => num(a).map(|latency| AgentSpec::Scripted { latency }),
            ("tcp", Some(a)) if a.contains(':') => Ok(AgentSpec::Tcp { addr: a.to_string() }),
            _ => Err(format!(
                "unknown agent `{s}`; expected silent, always, echo[:FRAMES], scripted[:SECONDS] or tcp:HOST:PORT"
            )),
        }
    }
}

impl AgentSpec {
    pub fn name(&self) -> String {
        match self {
            AgentSpec::Silent => "silent".into(),
            AgentSpec::Always => "always-speaking".into(),
            AgentSpec::Echo { delay_frames } => format!("echo:{delay_frames}"),
            AgentSpec::Scripted { latency } => format!("scripted:{latency}"),
            AgentSpec::Tcp { addr } => format!("tcp:{addr}"),
        }
    }
}

/// Built-in scripted agent replying with `reply` after each user turn.
pub fn scripted_agent(clock: &FrameClock, reply: &str, latency: f64) -> Result<ScriptedAgent> {
    let audio = synthesize_utterance(reply, &VoiceParams::from_name(SCRIPTED_VOICE), clock)?;
    Ok(ScriptedAgent::with_text(clock, audio, reply, latency)?)
}

pub type Factory = Box<dyn Fn() -> duplexbench::Result<Box<dyn DuplexAgent>> + Send + Sync>;

/// Fresh agent per call; remote agents open one connection each.
pub fn factory(
    spec: &AgentSpec,
    wire: WireConfig,
    reply: &str,
    vocabulary: Option<Vocabulary>,
    timeout: Duration,
) -> Result<Factory> {
    let clock = wire.clock;
    Ok(match spec.clone() {
        AgentSpec::Silent => Box::new(move || Ok(Box::new(SilentAgent::new(&clock)))),
        AgentSpec::Always => Box::new(move || Ok(Box::new(AlwaysSpeakingAgent::new(&clock)))),
        AgentSpec::Echo { delay_frames } => {
            Box::new(move || Ok(Box::new(EchoAgent::new(delay_frames, &clock))))
        }
        AgentSpec::Scripted { latency } => {
            let agent =
                scripted_agent(&clock, reply, latency).context("building the scripted agent")?;
            Box::new(move || Ok(Box::new(agent.clone())))
        }
        AgentSpec::Tcp { addr } => Box::new(move || {
            let mut a = RemoteAgent::connect_tcp(addr.as_str(), wire, Some(timeout))?
                .with_name(format!("tcp:{addr}"));
            if let Some(v) = &vocabulary {
                a = a.with_vocabulary(v.clone());
            }
            Ok(Box::new(a))
        }),
    })
}

/// Agent served by `serve-ref-agent`; remote endpoints cannot be served.
pub fn local_only(spec: &AgentSpec) -> Result<()> {
    if let AgentSpec::Tcp { .. } = spec {
        bail!(
            "serve-ref-agent serves a built-in agent, not `{}`",
            spec.name()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_agent_strings() {
        assert_eq!("silent".parse(), Ok(AgentSpec::Silent));
        assert_eq!("echo:3".parse(), Ok(AgentSpec::Echo { delay_frames: 3 }));
        assert_eq!("scripted".parse(), Ok(AgentSpec::Scripted { latency: 0.4 }));
        assert_eq!(
            "scripted:0.24".parse(),
            Ok(AgentSpec::Scripted { latency: 0.24 })
        );
        assert_eq!(
            "tcp:localhost:7007".parse(),
            Ok(AgentSpec::Tcp {
                addr: "localhost:7007".into()
            })
        );
        assert!("tcp:7007".parse::<AgentSpec>().is_err());
        assert!("parrot".parse::<AgentSpec>().is_err());
        assert!("echo:x".parse::<AgentSpec>().is_err());
    }
}
