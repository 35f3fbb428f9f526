//! Speaker embeddings and embedding similarity.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, FULL_SCALE};
use crate::error::{Error, Result};

/// Turns an utterance into a fixed-length speaker vector.
pub trait SpeakerEmbedder: Send + Sync {
    /// Stable identifier recorded next to every similarity score.
    fn id(&self) -> &str;
    fn embed(&self, audio: &AudioBuffer) -> Result<Vec<f64>>;
}

/// Log-mel statistics embedder: per-band mean and standard deviation of
/// log mel energies, with the utterance's global mean log energy removed
/// from the means so a uniform gain leaves the vector unchanged.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    pub n_mels: usize,
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub min_hz: f64,
    pub min_duration: f64,
    id: String,
}

const LOG_FLOOR: f64 = 1e-20;

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self {
            n_mels: 40,
            window_seconds: 0.025,
            hop_seconds: 0.010,
            min_hz: 20.0,
            min_duration: 1.0,
            id: "logmel-stats-40/1".into(),
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins `0..=nfft/2`.
fn mel_filterbank(
    n_mels: usize,
    nfft: usize,
    sample_rate: f64,
    min_hz: f64,
) -> Vec<Vec<(usize, f64)>> {
    let max_hz = sample_rate / 2.0;
    let (lo, hi) = (hz_to_mel(min_hz), hz_to_mel(max_hz));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / nfft as f64;
    (0..n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=nfft / 2)
                .filter_map(|b| {
                    let f = b as f64 * bin_hz;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((b, w))
                })
                .collect()
        })
        .collect()
}

impl ReferenceEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> usize {
        2 * self.n_mels
    }

    fn log_mel_frames(&self, audio: &AudioBuffer) -> Vec<Vec<f64>> {
        let sr = audio.sample_rate() as f64;
        let win = (self.window_seconds * sr).round() as usize;
        let hop = (self.hop_seconds * sr).round().max(1.0) as usize;
        let nfft = win.next_power_of_two();
        let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(nfft);
        let bank = mel_filterbank(self.n_mels, nfft, sr, self.min_hz);
        let hann: Vec<f64> = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let x: Vec<f64> = audio
            .samples()
            .iter()
            .map(|&s| s as f64 / FULL_SCALE)
            .collect();
        let mut frames = Vec::new();
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        let mut start = 0;
        while start + win <= x.len() {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for i in 0..win {
                buf[i].re = x[start + i] * hann[i];
            }
            fft.process(&mut buf);
            let power: Vec<f64> = buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect();
            frames.push(
                bank.iter()
                    .map(|filt| {
                        let e: f64 = filt.iter().map(|&(b, w)| w * power[b]).sum();
                        (e + LOG_FLOOR).ln()
                    })
                    .collect(),
            );
            start += hop;
        }
        frames
    }
}

impl SpeakerEmbedder for ReferenceEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, audio: &AudioBuffer) -> Result<Vec<f64>> {
        if audio.duration() < self.min_duration {
            return Err(Error::invalid(format!(
                "utterance is {:.3} s, embedding needs at least {:.3} s",
                audio.duration(),
                self.min_duration
            )));
        }
        if audio.samples().iter().all(|&s| s == 0) {
            return Ok(vec![0.0; self.dim()]);
        }
        let frames = self.log_mel_frames(audio);
        let n = frames.len() as f64;
        let mut mean = vec![0.0; self.n_mels];
        for f in &frames {
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
        }
        let mut std = vec![0.0; self.n_mels];
        for f in &frames {
            std.iter_mut()
                .zip(f.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
        }
        let global = mean.iter().sum::<f64>() / self.n_mels as f64;
        let mut out: Vec<f64> = mean.iter().map(|m| m - global).collect();
        out.extend(std.iter().map(|v| v.sqrt()));
        Ok(out)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric(
            "cosine similarity of a zero-norm embedding".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSim {
    pub similarity: f64,
    pub embedder: String,
}

/// Cosine similarity between the voice prompt and the agent's output voice.
pub fn speaker_similarity(
    prompt_voice: &AudioBuffer,
    agent_voice: &AudioBuffer,
    embedder: &dyn SpeakerEmbedder,
) -> Result<SpeakerSim> {
    let a = embedder.embed(prompt_voice)?;
    let b = embedder.embed(agent_voice)?;
    Ok(SpeakerSim {
        similarity: cosine_similarity(&a, &b)?,
        embedder: embedder.id().to_string(),
    })
}

/// Precomputed embeddings, one utterance per line: an id followed by
/// whitespace-separated values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts.next().unwrap_or_default().to_string();
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("embeddings line {}: {e}", lineno + 1)))?;
            if values.is_empty() {
                return Err(Error::invalid(format!(
                    "embeddings line {}: no values",
                    lineno + 1
                )));
            }
            if *dim.get_or_insert(values.len()) != values.len() {
                return Err(Error::invalid(format!(
                    "embeddings line {}: dimension {} differs from {}",
                    lineno + 1,
                    values.len(),
                    dim.unwrap_or(0)
                )));
            }
            vectors.insert(id, values);
        }
        Ok(Self { vectors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let find = |id: &str| {
            self.get(id)
                .ok_or_else(|| Error::invalid(format!("no embedding for utterance `{id}`")))
        };
        cosine_similarity(find(a)?, find(b)?)
    }
}
