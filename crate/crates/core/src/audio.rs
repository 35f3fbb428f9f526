//! PCM buffers, the frame clock, and signal generation.
//!
//! All audio in the harness is mono 16-bit signed PCM. Two lanes of the same
//! length form a duplex recording; the [`FrameClock`] maps between seconds,
//! samples and 12.5 Hz frames.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;
pub const DEFAULT_FRAME_RATE: f64 = 12.5;
/// Full-scale reference used for dBFS levels.
pub const FULL_SCALE: f64 = 32768.0;

/// Mono 16-bit PCM audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioBuffer {
    samples: Vec<i16>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0; len], sample_rate)
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<i16> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Level of the whole buffer in dBFS; `-inf` for digital silence.
    pub fn level_dbfs(&self) -> f64 {
        level_dbfs(&self.samples)
    }

    pub fn is_frame_aligned(&self, clock: &FrameClock) -> bool {
        self.samples.len().is_multiple_of(clock.samples_per_frame())
    }

    /// Number of whole frames; errors when a partial trailing frame exists.
    pub fn frame_count(&self, clock: &FrameClock) -> Result<usize> {
        self.check_rate(clock)?;
        if !self.is_frame_aligned(clock) {
            return Err(Error::invalid(format!(
                "audio length {} is not a multiple of {} samples per frame",
                self.samples.len(),
                clock.samples_per_frame()
            )));
        }
        Ok(self.samples.len() / clock.samples_per_frame())
    }

    /// Zero-pads the tail up to the next frame boundary.
    pub fn padded_to_frames(&self, clock: &FrameClock) -> AudioBuffer {
        let spf = clock.samples_per_frame();
        let frames = self.samples.len().div_ceil(spf);
        let mut samples = self.samples.clone();
        samples.resize(frames * spf, 0);
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Samples of frame `index`. Panics if the frame is out of range.
    pub fn frame(&self, clock: &FrameClock, index: usize) -> &[i16] {
        let spf = clock.samples_per_frame();
        &self.samples[index * spf..(index + 1) * spf]
    }

    pub fn frames<'a>(&'a self, clock: &FrameClock) -> impl Iterator<Item = &'a [i16]> + 'a {
        self.samples.chunks_exact(clock.samples_per_frame())
    }

    pub fn append(&mut self, other: &AudioBuffer) -> Result<()> {
        if other.sample_rate != self.sample_rate {
            return Err(Error::invalid(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        self.samples.extend_from_slice(&other.samples);
        Ok(())
    }

    pub fn extend_from_slice(&mut self, samples: &[i16]) {
        self.samples.extend_from_slice(samples);
    }

    /// Multiplies every sample by `gain`, rounding and saturating to i16.
    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        let samples = self
            .samples
            .iter()
            .map(|&s| clamp_i16((s as f64 * gain).round()))
            .collect();
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Errors when the buffer rate differs from the clock rate.
    pub fn check_rate(&self, clock: &FrameClock) -> Result<()> {
        if self.sample_rate != clock.sample_rate() {
            return Err(Error::invalid(format!(
                "audio sample rate {} does not match clock rate {}",
                self.sample_rate,
                clock.sample_rate()
            )));
        }
        Ok(())
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::invalid(format!(
                "{}: expected mono 16-bit PCM, found {} channel(s) at {} bits",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        let samples = reader.samples::<i16>().collect::<Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        {
            let mut w = writer.get_i16_writer(self.samples.len() as u32);
            for &s in &self.samples {
                w.write_sample(s);
            }
            w.flush()?;
        }
        writer.finalize()?;
        Ok(())
    }
}

pub(crate) fn clamp_i16(v: f64) -> i16 {
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn rms(samples: &[i16]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum / samples.len() as f64).sqrt()
}

pub fn level_dbfs(samples: &[i16]) -> f64 {
    20.0 * (rms(samples) / FULL_SCALE).log10()
}

/// Maps seconds, samples and frames onto each other.
///
/// The frame length in samples must be an integer: `sample_rate / frame_rate`
/// divides exactly (1920 samples per 80 ms frame at the defaults).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClockRepr", into = "ClockRepr")]
pub struct FrameClock {
    sample_rate: u32,
    frame_rate: f64,
    samples_per_frame: usize,
}

#[derive(Serialize, Deserialize)]
struct ClockRepr {
    sample_rate: u32,
    frame_rate: f64,
}

impl TryFrom<ClockRepr> for FrameClock {
    type Error = Error;

    fn try_from(r: ClockRepr) -> Result<Self> {
        FrameClock::new(r.sample_rate, r.frame_rate)
    }
}

impl From<FrameClock> for ClockRepr {
    fn from(c: FrameClock) -> Self {
        ClockRepr {
            sample_rate: c.sample_rate,
            frame_rate: c.frame_rate,
        }
    }
}

impl Default for FrameClock {
    fn default() -> Self {
        FrameClock::new(DEFAULT_SAMPLE_RATE, DEFAULT_FRAME_RATE).expect("default clock is valid")
    }
}

impl FrameClock {
    pub fn new(sample_rate: u32, frame_rate: f64) -> Result<Self> {
        if sample_rate == 0 || !(frame_rate > 0.0) || !frame_rate.is_finite() {
            return Err(Error::invalid(format!(
                "sample rate ({sample_rate}) and frame rate ({frame_rate}) must be positive"
            )));
        }
        let spf = (sample_rate as f64 / frame_rate).round();
        if spf < 1.0 || spf * frame_rate != sample_rate as f64 {
            return Err(Error::invalid(format!(
                "frame rate {frame_rate} Hz does not divide sample rate {sample_rate} Hz into whole frames"
            )));
        }
        Ok(Self {
            sample_rate,
            frame_rate,
            samples_per_frame: spf as usize,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn samples_per_frame(&self) -> usize {
        self.samples_per_frame
    }

    /// Frame length in seconds (0.08 s at the defaults).
    pub fn frame_duration(&self) -> f64 {
        self.samples_per_frame as f64 / self.sample_rate as f64
    }

    /// `ceil(seconds * frame_rate)`, snapping values within rounding noise of
    /// an integer so that `n / frame_rate` maps back to exactly `n`.
    pub fn frames_for_duration(&self, seconds: f64) -> Result<usize> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::invalid(format!(
                "duration must be a non-negative number of seconds, got {seconds}"
            )));
        }
        Ok(snap_ceil(seconds * self.frame_rate))
    }

    /// Start time in seconds of frame `index`.
    pub fn frame_time(&self, index: usize) -> f64 {
        (index * self.samples_per_frame) as f64 / self.sample_rate as f64
    }

    pub fn samples_for_frames(&self, frames: usize) -> usize {
        frames * self.samples_per_frame
    }

    /// Nearest sample index for a time in seconds.
    pub fn sample_at(&self, seconds: f64) -> i64 {
        (seconds * self.sample_rate as f64).round() as i64
    }

    pub fn seconds(&self, samples: usize) -> f64 {
        samples as f64 / self.sample_rate as f64
    }
}

pub(crate) fn snap_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Free-function form of [`FrameClock::frames_for_duration`].
pub fn frames_for_duration(seconds: f64, clock: &FrameClock) -> Result<usize> {
    clock.frames_for_duration(seconds)
}

/// Default amplitude of the prompt-period sine, as a fraction of full scale.
pub const DEFAULT_SINE_AMPLITUDE: f64 = 0.5;

/// Sine tone whose length is `duration` rounded up to whole frames.
///
/// `samples[n] = round(amplitude * 32767 * sin(2π·freq·n / sample_rate))`.
pub fn gen_sine(
    freq: f64,
    duration: f64,
    amplitude: f64,
    clock: &FrameClock,
) -> Result<AudioBuffer> {
    let frames = clock.frames_for_duration(duration)?;
    gen_sine_frames(freq, frames, amplitude, clock)
}

/// Sine tone spanning exactly `frames` frames.
pub fn gen_sine_frames(
    freq: f64,
    frames: usize,
    amplitude: f64,
    clock: &FrameClock,
) -> Result<AudioBuffer> {
    let sr = clock.sample_rate() as f64;
    if !(freq > 0.0) || freq >= sr / 2.0 {
        return Err(Error::invalid(format!(
            "sine frequency {freq} Hz must lie in (0, {}) Hz",
            sr / 2.0
        )));
    }
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(Error::invalid(format!(
            "amplitude {amplitude} must lie in [0, 1]"
        )));
    }
    let n = clock.samples_for_frames(frames);
    let samples = (0..n)
        .map(|i| {
            let phase = 2.0 * PI * freq * i as f64 / sr;
            (amplitude * 32767.0 * phase.sin()).round() as i16
        })
        .collect();
    AudioBuffer::new(samples, clock.sample_rate())
}
