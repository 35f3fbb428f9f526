//! Deterministic toy codec standing in for a neural speech codec.
//!
//! Each frame becomes `K` token ids:
//!
//! * codebook 1 (the "semantic" stand-in) is the frame's log-energy bin,
//!   2 dB wide between -70 and -18 dBFS, with bin 0 for silence and one
//!   open-ended top bin;
//! * codebooks 2..K describe how the frame's energy splits across `K` equal
//!   spectral bands, coded stick-breaking style: token `j` is the quantized
//!   share of the energy not yet claimed by bands `< j` that falls in band
//!   `j`. The last band takes the remainder and needs no token.
//!
//! Shape tokens are only coded while the unclaimed energy stays above a
//! floor where i16 rounding cannot move a share by half a step; past it they
//! are 0. Decoding synthesizes one integer-cycle sinusoid per band, so band
//! energies are exactly orthogonal within a frame and re-encoding a decoded
//! stream reproduces its canonical tokens.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{clamp_i16, AudioBuffer, FrameClock, FULL_SCALE};
use crate::error::{Error, Result};

/// Token vector for one frame, one id per codebook.
pub type AudioTokens = Vec<u32>;

pub const DEFAULT_CODEBOOKS: usize = 8;
pub const MAX_CODEBOOKS: usize = 16;

const ENERGY_FLOOR_DB: f64 = -70.0;
const ENERGY_CEIL_DB: f64 = -18.0;
const ENERGY_STEP_DB: f64 = 2.0;
/// Number of closed energy bins between floor and ceiling.
const ENERGY_CLOSED_BINS: u32 = 26;
/// Highest codebook-1 id: the open bin at or above the ceiling.
pub const ENERGY_TOP_BIN: u32 = ENERGY_CLOSED_BINS + 1;
/// Decode level of the top bin; keeps the sum of up to 16 band sinusoids
/// below full scale.
const ENERGY_TOP_DECODE_DB: f64 = -17.0;
/// Highest shape token; shares are coded in steps of 1/SHAPE_LEVELS.
pub const SHAPE_LEVELS: u32 = 15;
/// Mean-square power (LSB^2) below which the unclaimed remainder is too small
/// to code reliably; subsequent shape tokens are forced to 0. Rounding to
/// i16 shifts a share by at most about 2 / sqrt(floor), well under half of
/// 1 / SHAPE_LEVELS.
const REMAINDER_FLOOR: f64 = 25_000.0;

/// Size of the audio-token vocabulary reserved for codec ids. Ids at or above
/// this value never come out of the codec and are free for delimiters.
pub const AUDIO_VOCAB_SIZE: u32 = 2048;

#[derive(Clone)]
pub struct ToyCodec {
    clock: FrameClock,
    codebooks: usize,
    band_edges: Vec<usize>,
    band_centers: Vec<usize>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for ToyCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToyCodec")
            .field("clock", &self.clock)
            .field("codebooks", &self.codebooks)
            .finish()
    }
}

impl ToyCodec {
    pub fn new(clock: FrameClock, codebooks: usize) -> Result<Self> {
        if codebooks == 0 || codebooks > MAX_CODEBOOKS {
            return Err(Error::invalid(format!(
                "codebook count must be in 1..={MAX_CODEBOOKS}, got {codebooks}"
            )));
        }
        let n = clock.samples_per_frame();
        let nyquist_bin = n / 2;
        let bins = nyquist_bin + 1;
        let band_edges: Vec<usize> = (0..=codebooks).map(|j| j * bins / codebooks).collect();
        let band_centers: Vec<usize> = band_edges.windows(2).map(|w| (w[0] + w[1]) / 2).collect();
        let synthesizable = band_edges.windows(2).zip(&band_centers).all(|(w, &c)| {
            w[1] > w[0] && c > 0 && (c < nyquist_bin || (n % 2 == 1 && c <= nyquist_bin))
        });
        if !synthesizable {
            return Err(Error::invalid(format!(
                "{n} samples per frame are too few for {codebooks} spectral bands"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            clock,
            codebooks,
            band_edges,
            band_centers,
            fft,
        })
    }

    pub fn clock(&self) -> &FrameClock {
        &self.clock
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    /// Token vector of a digitally silent frame.
    pub fn silence_tokens(&self) -> AudioTokens {
        vec![0; self.codebooks]
    }

    /// Number of leading shape tokens that carry information for `tv`; the
    /// rest are below the remainder floor.
    fn coded_shape_tokens(&self, tv: &[u32]) -> usize {
        if tv[0] == 0 {
            return 0;
        }
        let power = decode_rms(tv[0]).powi(2);
        let mut remainder = 1.0;
        for j in 0..self.codebooks - 1 {
            if power * remainder < REMAINDER_FLOOR {
                return j;
            }
            remainder *= 1.0 - tv[j + 1] as f64 / SHAPE_LEVELS as f64;
        }
        self.codebooks - 1
    }

    /// Zeroes shape tokens past the remainder floor. Encoder output is always
    /// canonical, and decoding ignores the zeroed positions.
    pub fn canonical(&self, tv: &[u32]) -> AudioTokens {
        let mut out = tv.to_vec();
        let keep = if tv.is_empty() {
            0
        } else {
            self.coded_shape_tokens(tv)
        };
        if tv.len() == self.codebooks {
            out[1 + keep..].iter_mut().for_each(|v| *v = 0);
        }
        out
    }

    pub fn encode(&self, audio: &AudioBuffer) -> Result<Vec<AudioTokens>> {
        let frames = audio.frame_count(&self.clock)?;
        let mut out = Vec::with_capacity(frames);
        let mut scratch = vec![Complex::new(0.0, 0.0); self.clock.samples_per_frame()];
        for frame in audio.frames(&self.clock) {
            out.push(self.encode_frame(frame, &mut scratch));
        }
        Ok(out)
    }

    fn encode_frame(&self, frame: &[i16], scratch: &mut [Complex<f64>]) -> AudioTokens {
        let mut tokens = self.silence_tokens();
        let energy_bin = energy_bin(crate::audio::level_dbfs(frame));
        tokens[0] = energy_bin;
        if energy_bin == 0 || self.codebooks == 1 {
            return tokens;
        }

        let bands = self.band_energies(frame, scratch);
        let mut remaining = bands.iter().sum::<f64>();
        for (j, &band) in bands.iter().take(self.codebooks - 1).enumerate() {
            if j >= self.coded_shape_tokens(&tokens) {
                break;
            }
            let share = if remaining > 0.0 {
                (band / remaining).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let level = (share * SHAPE_LEVELS as f64).round() as u32;
            tokens[j + 1] = level;
            remaining -= band;
        }
        tokens
    }

    /// Per-band energy (sum of squares over the frame, via Parseval).
    fn band_energies(&self, frame: &[i16], scratch: &mut [Complex<f64>]) -> Vec<f64> {
        for (c, &s) in scratch.iter_mut().zip(frame) {
            *c = Complex::new(s as f64, 0.0);
        }
        self.fft.process(scratch);
        let n = frame.len();
        let nyquist = n / 2;
        let mut bands = vec![0.0; self.codebooks];
        for (j, w) in self.band_edges.windows(2).enumerate() {
            for k in w[0]..w[1] {
                let p = scratch[k].norm_sqr();
                let one_sided = if k == 0 || (n.is_multiple_of(2) && k == nyquist) {
                    p
                } else {
                    2.0 * p
                };
                bands[j] += one_sided / n as f64;
            }
        }
        bands
    }

    pub fn decode(&self, tokens: &[AudioTokens]) -> Result<AudioBuffer> {
        let n = self.clock.samples_per_frame();
        let mut samples = Vec::with_capacity(tokens.len() * n);
        let mut frame = vec![0.0f64; n];
        for (t, tv) in tokens.iter().enumerate() {
            self.validate(t, tv)?;
            let tv = &self.canonical(tv);
            frame.iter_mut().for_each(|v| *v = 0.0);
            let energy_bin = tv[0];
            if energy_bin != 0 {
                let total = decode_rms(energy_bin).powi(2) * n as f64;
                let mut remainder = 1.0;
                for j in 0..self.codebooks {
                    let share = if j + 1 < self.codebooks {
                        let q = tv[j + 1] as f64 / SHAPE_LEVELS as f64;
                        let s = remainder * q;
                        remainder *= 1.0 - q;
                        s
                    } else {
                        remainder
                    };
                    if share <= 0.0 {
                        continue;
                    }
                    let amp = (2.0 * total * share / n as f64).sqrt();
                    let c = self.band_centers[j] as f64;
                    for (i, v) in frame.iter_mut().enumerate() {
                        *v += amp * (2.0 * PI * c * i as f64 / n as f64).sin();
                    }
                }
            }
            samples.extend(frame.iter().map(|&v| clamp_i16(v.round())));
        }
        AudioBuffer::new(samples, self.clock.sample_rate())
    }

    fn validate(&self, index: usize, tv: &[u32]) -> Result<()> {
        if tv.len() != self.codebooks {
            return Err(Error::Decode(format!(
                "frame {index}: expected {} codebooks, got {}",
                self.codebooks,
                tv.len()
            )));
        }
        if tv[0] > ENERGY_TOP_BIN {
            return Err(Error::Decode(format!(
                "frame {index}: unknown energy token {}",
                tv[0]
            )));
        }
        if let Some(bad) = tv[1..].iter().find(|&&v| v > SHAPE_LEVELS) {
            return Err(Error::Decode(format!(
                "frame {index}: unknown spectral token {bad}"
            )));
        }
        Ok(())
    }
}

/// Codebook-1 id for a frame level in dBFS.
pub fn energy_bin(level_db: f64) -> u32 {
    if !level_db.is_finite() || level_db < ENERGY_FLOOR_DB {
        0
    } else if level_db >= ENERGY_CEIL_DB {
        ENERGY_TOP_BIN
    } else {
        let b = ((level_db - ENERGY_FLOOR_DB) / ENERGY_STEP_DB).floor() as u32 + 1;
        b.min(ENERGY_CLOSED_BINS)
    }
}

/// Frame RMS (in LSB) the decoder targets for an energy bin.
fn decode_rms(bin: u32) -> f64 {
    let db = match bin {
        0 => return 0.0,
        ENERGY_TOP_BIN => ENERGY_TOP_DECODE_DB,
        b => ENERGY_FLOOR_DB + ENERGY_STEP_DB * (b as f64 - 0.5),
    };
    FULL_SCALE * 10f64.powf(db / 20.0)
}

pub fn toy_encode(
    audio: &AudioBuffer,
    clock: &FrameClock,
    codebooks: usize,
) -> Result<Vec<AudioTokens>> {
    ToyCodec::new(*clock, codebooks)?.encode(audio)
}

pub fn toy_decode(
    tokens: &[AudioTokens],
    clock: &FrameClock,
    codebooks: usize,
) -> Result<AudioBuffer> {
    ToyCodec::new(*clock, codebooks)?.decode(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::gen_sine;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codec() -> ToyCodec {
        ToyCodec::new(FrameClock::default(), DEFAULT_CODEBOOKS).unwrap()
    }

    #[test]
    fn silence_encodes_to_silence_tokens() {
        let c = codec();
        let a = AudioBuffer::silence(1920 * 3, 24_000).unwrap();
        let t = c.encode(&a).unwrap();
        assert_eq!(t, vec![c.silence_tokens(); 3]);
        assert_eq!(c.decode(&t).unwrap(), a);
    }

    #[test]
    fn partial_frame_is_rejected() {
        let c = codec();
        let a = AudioBuffer::silence(1000, 24_000).unwrap();
        assert!(matches!(c.encode(&a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sine_and_noise_share_energy_but_not_shape() {
        let c = codec();
        let clock = FrameClock::default();
        let sine = gen_sine(440.0, 0.8, 0.5, &clock).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<f64> = (0..sine.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let raw_rms = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64).sqrt();
        let gain = sine.rms() / raw_rms;
        let noise = AudioBuffer::new(
            raw.iter().map(|v| (v * gain).round() as i16).collect(),
            24_000,
        )
        .unwrap();
        let ts = c.encode(&sine).unwrap();
        let tn = c.encode(&noise).unwrap();
        for (a, b) in ts.iter().zip(&tn) {
            assert_eq!(a[0], b[0]);
            assert_ne!(a[1], b[1]);
        }
        // all sine energy sits in the lowest band
        assert_eq!(ts[0][1], SHAPE_LEVELS);
    }

    #[test]
    fn energy_bins_decode_monotonically_and_round_trip() {
        let c = codec();
        let mut prev = -1.0;
        for bin in 1..=ENERGY_TOP_BIN {
            for shape in [[0u32; 7], [15, 0, 0, 0, 0, 0, 0], [1, 2, 1, 2, 1, 2, 1]] {
                let mut tv = vec![bin];
                tv.extend_from_slice(&shape);
                let audio = c.decode(&[tv.clone()]).unwrap();
                assert_eq!(c.encode(&audio).unwrap(), vec![c.canonical(&tv)]);
            }
            if bin == ENERGY_TOP_BIN {
                // loud frames keep every shape token
                let tv = vec![bin, 1, 2, 1, 2, 1, 2, 1];
                assert_eq!(c.canonical(&tv), tv);
            }
            let audio = c.decode(&[vec![bin, 1, 1, 1, 1, 1, 1, 1]]).unwrap();
            let r = audio.rms();
            assert!(r > prev, "bin {bin}: rms {r} not above {prev}");
            prev = r;
        }
    }

    #[test]
    fn decode_rejects_unknown_ids() {
        let c = codec();
        assert!(matches!(
            c.decode(&[vec![ENERGY_TOP_BIN + 1, 0, 0, 0, 0, 0, 0, 0]]),
            Err(Error::Decode(_))
        ));
        assert!(matches!(
            c.decode(&[vec![3, 16, 0, 0, 0, 0, 0, 0]]),
            Err(Error::Decode(_))
        ));
        assert!(matches!(c.decode(&[vec![3, 0]]), Err(Error::Decode(_))));
    }

    #[test]
    fn single_codebook_codec_works() {
        let clock = FrameClock::default();
        let c = ToyCodec::new(clock, 1).unwrap();
        let a = gen_sine(1000.0, 0.16, 0.1, &clock).unwrap();
        let t = c.encode(&a).unwrap();
        assert_eq!(c.encode(&c.decode(&t).unwrap()).unwrap(), t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reencode_of_decode_is_identity(seed in any::<u64>(), frames in 1usize..4, scale in 0.0f64..1.0) {
            let c = codec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // mix of tones and noise at a random level, including quiet frames
            let amp = 32767.0 * scale.powi(3);
            let n = 1920 * frames;
            let f1 = rng.gen_range(50.0..11_000.0);
            let samples: Vec<i16> = (0..n)
                .map(|i| {
                    let t = i as f64 / 24_000.0;
                    let v = 0.6 * (2.0 * PI * f1 * t).sin() + 0.4 * rng.gen_range(-1.0..1.0);
                    (v * amp).round() as i16
                })
                .collect();
            let audio = AudioBuffer::new(samples, 24_000).unwrap();
            let tokens = c.encode(&audio).unwrap();
            let decoded = c.decode(&tokens).unwrap();
            prop_assert_eq!(c.encode(&decoded).unwrap(), tokens);
        }

        #[test]
        fn any_tokens_reencode_to_canonical(bin in 1u32..=ENERGY_TOP_BIN, shape in proptest::collection::vec(0u32..=SHAPE_LEVELS, 7)) {
            let c = codec();
            let mut tv = vec![bin];
            tv.extend(shape);
            let audio = c.decode(&[tv.clone()]).unwrap();
            prop_assert_eq!(c.encode(&audio).unwrap(), vec![c.canonical(&tv)]);
        }
    }
}
