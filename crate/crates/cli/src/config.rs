//! Run configuration layered as flags > config file > environment > defaults.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use duplexbench::audio::{FrameClock, DEFAULT_FRAME_RATE, DEFAULT_SAMPLE_RATE};
use duplexbench::bench::trial::{END_OF_SPEECH_GRACE, TRIAL_CAP};
use duplexbench::bench::{RemoteJudge, TrialOptions};
use duplexbench::codec::{ToyCodec, DEFAULT_CODEBOOKS};
use duplexbench::prompt::SegmentOrder;
use duplexbench::vad::{
    EventParams, VadParams, DEFAULT_BACKCHANNEL_MAX, DEFAULT_HANGOVER_FRAMES,
    DEFAULT_MIN_SPEECH_FRAMES, DEFAULT_RESPONSE_WINDOW, DEFAULT_THRESHOLD_DB,
};

pub const CONFIG_ECHO: &str = "run_config.toml";

/// Fully resolved settings of one run. The API key is read from the
/// environment only and never written out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sample_rate: u32,
    pub frame_rate: f64,
    pub codebooks: usize,
    pub order: SegmentOrder,
    pub vad_threshold_db: f64,
    pub vad_hangover: usize,
    pub vad_min_speech: usize,
    pub backchannel_max: f64,
    pub response_window: f64,
    pub grace: f64,
    pub cap: f64,
    pub jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realtime_budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_histogram: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_endpoint: Option<String>,
    pub judge_model: String,
    pub judge_retries: u32,
    pub judge_timeout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            frame_rate: DEFAULT_FRAME_RATE,
            codebooks: DEFAULT_CODEBOOKS,
            order: SegmentOrder::VoiceFirst,
            vad_threshold_db: DEFAULT_THRESHOLD_DB,
            vad_hangover: DEFAULT_HANGOVER_FRAMES,
            vad_min_speech: DEFAULT_MIN_SPEECH_FRAMES,
            backchannel_max: DEFAULT_BACKCHANNEL_MAX,
            response_window: DEFAULT_RESPONSE_WINDOW,
            grace: END_OF_SPEECH_GRACE,
            cap: TRIAL_CAP,
            jobs: 1,
            realtime_budget: None,
            reference_histogram: None,
            judge_endpoint: None,
            judge_model: duplexbench::bench::judge::DEFAULT_JUDGE_MODEL.into(),
            judge_retries: 3,
            judge_timeout: 30.0,
        }
    }
}

/// One configuration layer; unset fields fall through to lower layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Audio sample rate in Hz
    #[arg(long, global = true)]
    pub sample_rate: Option<u32>,
    /// Token frame rate in Hz
    #[arg(long, global = true)]
    pub frame_rate: Option<f64>,
    /// Codebooks per audio frame
    #[arg(long, global = true)]
    pub codebooks: Option<usize>,
    /// Prompt segment order
    #[arg(long, global = true, value_parser = parse_order)]
    pub order: Option<SegmentOrder>,
    /// VAD threshold in dBFS
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub vad_threshold_db: Option<f64>,
    /// VAD hangover in frames
    #[arg(long, global = true)]
    pub vad_hangover: Option<usize>,
    /// Minimum speech run in frames
    #[arg(long, global = true)]
    pub vad_min_speech: Option<usize>,
    /// Longest agent vocalization counted as a backchannel, in seconds
    #[arg(long, global = true)]
    pub backchannel_max: Option<f64>,
    /// Evaluation window after turn ends and interruptions, in seconds
    #[arg(long, global = true)]
    pub response_window: Option<f64>,
    /// Quiet time after the agent's last speech before a trial stops
    #[arg(long, global = true)]
    pub grace: Option<f64>,
    /// Maximum captured length of a trial, in seconds
    #[arg(long, global = true)]
    pub cap: Option<f64>,
    /// Concurrent trial sessions
    #[arg(long, short = 'j', global = true)]
    pub jobs: Option<usize>,
    /// Per-frame wall-clock budget in seconds
    #[arg(long, global = true)]
    pub realtime_budget: Option<f64>,
    /// Reference backchannel histogram for JSD
    #[arg(long, global = true)]
    pub reference_histogram: Option<PathBuf>,
    /// Chat-completions judge endpoint URL
    #[arg(long, global = true)]
    pub judge_endpoint: Option<String>,
    /// Judge model name
    #[arg(long, global = true)]
    pub judge_model: Option<String>,
    /// Judge attempts per trial after the first failure
    #[arg(long, global = true)]
    pub judge_retries: Option<u32>,
    /// Judge request timeout in seconds
    #[arg(long, global = true)]
    pub judge_timeout: Option<f64>,
}

fn parse_order(s: &str) -> std::result::Result<SegmentOrder, String> {
    match s {
        "voice-first" => Ok(SegmentOrder::VoiceFirst),
        "text-first" => Ok(SegmentOrder::TextFirst),
        _ => Err(format!("expected voice-first or text-first, got `{s}`")),
    }
}

fn env_var<T: std::str::FromStr>(name: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match env::var(name) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("environment variable {name}=`{v}`: {e}")),
        _ => Ok(None),
    }
}

impl ConfigLayer {
    /// `JUDGE_ENDPOINT`, `JUDGE_MODEL` and `DUPLEXBENCH_*` overrides.
    pub fn from_env() -> Result<Self> {
        Ok(Self {
            sample_rate: env_var("DUPLEXBENCH_SAMPLE_RATE")?,
            frame_rate: env_var("DUPLEXBENCH_FRAME_RATE")?,
            codebooks: env_var("DUPLEXBENCH_CODEBOOKS")?,
            jobs: env_var("DUPLEXBENCH_JOBS")?,
            judge_endpoint: env_var("JUDGE_ENDPOINT")?,
            judge_model: env_var("JUDGE_MODEL")?,
            ..Default::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(
            sample_rate,
            frame_rate,
            codebooks,
            order,
            vad_threshold_db,
            vad_hangover,
            vad_min_speech,
            backchannel_max,
            response_window,
            grace,
            cap,
            jobs,
            judge_model,
            judge_retries,
            judge_timeout
        );
        if self.realtime_budget.is_some() {
            c.realtime_budget = self.realtime_budget;
        }
        if self.reference_histogram.is_some() {
            c.reference_histogram = self.reference_histogram.clone();
        }
        if self.judge_endpoint.is_some() {
            c.judge_endpoint = self.judge_endpoint.clone();
        }
    }
}

impl RunConfig {
    /// Applies the environment, then the config file, then the flags.
    pub fn resolve(flags: &ConfigLayer, file: Option<&Path>) -> Result<Self> {
        let mut c = RunConfig::default();
        ConfigLayer::from_env()?.apply(&mut c);
        if let Some(p) = file {
            ConfigLayer::load(p)?.apply(&mut c);
        }
        flags.apply(&mut c);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let clock = self.clock()?;
        ToyCodec::new(clock, self.codebooks)?;
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        for (name, v) in [
            ("backchannel_max", self.backchannel_max),
            ("response_window", self.response_window),
            ("cap", self.cap),
            ("judge_timeout", self.judge_timeout),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if !(self.grace >= 0.0 && self.grace.is_finite()) {
            bail!("grace must be non-negative, got {}", self.grace);
        }
        Ok(())
    }

    pub fn clock(&self) -> Result<FrameClock> {
        Ok(FrameClock::new(self.sample_rate, self.frame_rate)?)
    }

    pub fn event_params(&self) -> EventParams {
        EventParams {
            vad: VadParams {
                threshold_db: self.vad_threshold_db,
                hangover: self.vad_hangover,
                min_speech: self.vad_min_speech,
            },
            backchannel_max: self.backchannel_max,
            response_window: self.response_window,
        }
    }

    pub fn trial_options(&self) -> Result<TrialOptions> {
        Ok(TrialOptions {
            clock: self.clock()?,
            codebooks: self.codebooks,
            order: self.order,
            events: self.event_params(),
            grace: self.grace,
            cap: self.cap,
            realtime_budget: self.realtime_budget,
        })
    }

    pub fn remote_judge(&self) -> Result<RemoteJudge> {
        let Some(endpoint) = &self.judge_endpoint else {
            bail!("remote judge needs --judge-endpoint, a config entry or JUDGE_ENDPOINT");
        };
        let mut j = RemoteJudge::new(endpoint.clone());
        j.api_key = env::var("JUDGE_API_KEY").ok().filter(|k| !k.is_empty());
        j.model = self.judge_model.clone();
        j.retries = self.judge_retries;
        j.timeout = std::time::Duration::from_secs_f64(self.judge_timeout);
        Ok(j)
    }

    /// Writes the resolved configuration; loading it with `--config`
    /// reproduces the run.
    pub fn write_echo(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, toml::to_string(self)?)
            .with_context(|| format!("writing config echo {}", path.display()))
    }
}
