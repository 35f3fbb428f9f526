use duplexbench::audio::{AudioBuffer, FrameClock};

/// Harmonic tone with a fixed formant-like envelope; `shift` scales every
/// frequency, moving both pitch and envelope.
pub fn voice(f0: f64, shift: f64, secs: f64) -> AudioBuffer {
    let sr = FrameClock::default().sample_rate() as f64;
    let n = (secs * sr) as usize;
    let formants = [(500.0, 120.0), (1500.0, 200.0), (2500.0, 300.0)];
    let mut harmonics = Vec::new();
    let mut h = 1.0;
    while f0 * h * shift < sr / 2.0 * 0.95 {
        let f = f0 * h;
        let a: f64 = formants
            .iter()
            .map(|&(c, bw)| 1.0 / (1.0 + ((f - c) / bw).powi(2)))
            .sum::<f64>()
            + 0.01;
        harmonics.push((f * shift, a));
        h += 1.0;
    }
    let norm: f64 = harmonics.iter().map(|h| h.1).sum();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let v: f64 = harmonics
                .iter()
                .map(|&(f, a)| a * (2.0 * std::f64::consts::PI * f * t).sin())
                .sum();
            (v / norm * 0.5 * 32767.0).round() as i16
        })
        .collect();
    AudioBuffer::new(samples, sr as u32).unwrap()
}
