//! Deterministic speech-like audio for fixtures without recorded WAVs.
//!
//! Each word becomes a voiced harmonic burst shaped by a vowel-dependent
//! formant envelope. Word gaps stay shorter than one frame so an utterance
//! reads as a single VAD segment.

use crate::audio::{AudioBuffer, FrameClock, FULL_SCALE};
use crate::error::Result;

const WORD_GAP: f64 = 0.04;
const PUNCT_GAP: f64 = 0.07;
const EDGE: f64 = 0.015;
const MAX_HARMONICS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceParams {
    /// Mean fundamental in Hz.
    pub f0: f64,
    /// Formant scale; values above 1 shorten the vocal tract.
    pub formant_scale: f64,
    /// Peak amplitude as a fraction of full scale.
    pub amplitude: f64,
}

impl Default for VoiceParams {
    fn default() -> Self {
        Self {
            f0: 140.0,
            formant_scale: 1.0,
            amplitude: 0.35,
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl VoiceParams {
    /// Stable voice derived from a name.
    pub fn from_name(name: &str) -> Self {
        let h = fnv1a(name);
        Self {
            f0: 95.0 + (h % 1000) as f64 / 1000.0 * 130.0,
            formant_scale: 0.9 + ((h >> 16) % 1000) as f64 / 1000.0 * 0.25,
            amplitude: 0.35,
        }
    }
}

fn formants(word: &str) -> (f64, f64) {
    match word
        .chars()
        .find(|c| "aeiouy".contains(c.to_ascii_lowercase()))
    {
        Some('a' | 'A') => (730.0, 1090.0),
        Some('e' | 'E') => (530.0, 1840.0),
        Some('i' | 'I' | 'y' | 'Y') => (390.0, 1990.0),
        Some('o' | 'O') => (570.0, 840.0),
        Some('u' | 'U') => (440.0, 1020.0),
        _ => (500.0, 1500.0),
    }
}

fn resonance(f: f64, center: f64, bw: f64) -> f64 {
    1.0 / (1.0 + ((f - center) / bw).powi(2))
}

/// Renders `text` and pads the result to whole frames.
pub fn synthesize_utterance(
    text: &str,
    voice: &VoiceParams,
    clock: &FrameClock,
) -> Result<AudioBuffer> {
    let sr = clock.sample_rate() as f64;
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out: Vec<f64> = Vec::new();
    for (wi, word) in words.iter().enumerate() {
        let letters = word.chars().filter(|c| c.is_alphanumeric()).count().max(1);
        let dur = (0.10 + 0.045 * letters as f64).clamp(0.16, 0.6);
        let n = (dur * sr).round() as usize;
        let last = wi + 1 == words.len();
        let question = last && text.trim_end().ends_with('?');
        let wobble = 1.0 + 0.06 * ((wi as f64) * 1.7).sin();
        let f0 = voice.f0 * wobble;
        let (f1, f2) = formants(word);
        let (f1, f2, f3) = (
            f1 * voice.formant_scale,
            f2 * voice.formant_scale,
            2500.0 * voice.formant_scale,
        );
        // harmonic h sits at h * f0, so amplitudes are indexed by h - 1
        let amps: Vec<f64> = (1..=MAX_HARMONICS)
            .map(|h| h as f64 * f0)
            .take_while(|&f| f < sr / 2.0 * 0.9)
            .map(|f| {
                resonance(f, f1, 90.0)
                    + 0.7 * resonance(f, f2, 120.0)
                    + 0.3 * resonance(f, f3, 200.0)
                    + 0.02
            })
            .collect();
        let norm: f64 = amps.iter().sum();
        let edge = (EDGE * sr) as usize;
        for i in 0..n {
            let t = i as f64 / sr;
            // pitch glide: rising on a final question word, falling otherwise
            let glide = if question {
                1.0 + 0.25 * t / dur
            } else if last {
                1.0 - 0.15 * t / dur
            } else {
                1.0
            };
            let (s1, c1) = (2.0 * std::f64::consts::PI * f0 * glide * t).sin_cos();
            let (mut sh, mut ch) = (s1, c1);
            let mut v = 0.0;
            for &a in &amps {
                v += a * sh;
                (sh, ch) = (sh * c1 + ch * s1, ch * c1 - sh * s1);
            }
            let env = if i < edge {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / edge as f64).cos()
            } else if i + edge > n {
                0.5 - 0.5 * (std::f64::consts::PI * (n - i) as f64 / edge as f64).cos()
            } else {
                1.0
            };
            out.push(voice.amplitude * env * v / norm);
        }
        if !last {
            let gap = if word.ends_with([',', '.', ';', '?', '!']) {
                PUNCT_GAP
            } else {
                WORD_GAP
            };
            out.extend(std::iter::repeat_n(0.0, (gap * sr).round() as usize));
        }
    }
    let samples = out
        .iter()
        .map(|v| (v * (FULL_SCALE - 1.0)).round() as i16)
        .collect();
    Ok(AudioBuffer::new(samples, clock.sample_rate())?.padded_to_frames(clock))
}

const VOICE_SAMPLE_TEXT: &str =
    "hello there, thank you for calling, this is a short sample of my speaking voice";

/// A voice prompt sample of a few seconds in the given voice.
pub fn synthesize_voice_sample(voice: &VoiceParams, clock: &FrameClock) -> Result<AudioBuffer> {
    synthesize_utterance(VOICE_SAMPLE_TEXT, voice, clock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stitch::Speaker;
    use crate::vad::{vad, VadParams};

    #[test]
    fn utterance_is_one_vad_segment() {
        let c = FrameClock::default();
        let a = synthesize_utterance(
            "Hi, could you tell me which insurance provider I'm speaking with?",
            &VoiceParams::default(),
            &c,
        )
        .unwrap();
        assert!(a.is_frame_aligned(&c));
        assert!(a.duration() > 2.0 && a.duration() < 6.0, "{}", a.duration());
        let segs = vad(&a, &c, &VadParams::default(), Speaker::User);
        assert_eq!(segs.len(), 1, "{segs:?}");
        assert!(segs[0].start < 0.1);
    }

    #[test]
    fn synthesis_is_deterministic_and_voice_dependent() {
        let c = FrameClock::default();
        let v1 = VoiceParams::from_name("scenario-a");
        let v2 = VoiceParams::from_name("scenario-b");
        assert_eq!(v1, VoiceParams::from_name("scenario-a"));
        assert_ne!(v1, v2);
        let a = synthesize_voice_sample(&v1, &c).unwrap();
        assert_eq!(a, synthesize_voice_sample(&v1, &c).unwrap());
        assert_ne!(a, synthesize_voice_sample(&v2, &c).unwrap());
        assert!(a.duration() >= 2.0);
        let peak = a.samples().iter().map(|s| s.unsigned_abs()).max().unwrap();
        assert!(peak < 32767);
    }
}
