use duplexbench::audio::{gen_sine_frames, AudioBuffer, FrameClock};
use duplexbench::bench::{generate_scenarios, Scenario};
use duplexbench::codec::{ToyCodec, DEFAULT_CODEBOOKS};
use duplexbench::prompt::{build_hybrid_prompt, dialogue_stream, HybridPromptSpec, SegmentOrder};
use duplexbench::stitch::Speaker;
use duplexbench::stream::TextToken;
use duplexbench::vad::{
    active_frames, extract_events, vad, EventParams, TrialCategory, TrialMeta, VadParams,
};
use proptest::prelude::*;

fn clock() -> FrameClock {
    FrameClock::default()
}

/// Random piecewise signal: segments of silence, tones and noise-like bursts.
fn signal() -> impl Strategy<Value = AudioBuffer> {
    proptest::collection::vec(
        (
            0u8..3,
            1usize..12,
            80.0f64..3000.0,
            0.0005f64..0.12,
            any::<u64>(),
        ),
        1..8,
    )
    .prop_map(|parts| {
        let c = clock();
        let mut out = AudioBuffer::silence(0, c.sample_rate()).unwrap();
        for (kind, frames, freq, amp, seed) in parts {
            let piece = match kind {
                0 => AudioBuffer::silence(c.samples_for_frames(frames), c.sample_rate()).unwrap(),
                1 => gen_sine_frames(freq, frames, amp, &c).unwrap(),
                _ => {
                    let mut x = seed | 1;
                    let n = c.samples_for_frames(frames);
                    let s = (0..n)
                        .map(|_| {
                            x ^= x << 13;
                            x ^= x >> 7;
                            x ^= x << 17;
                            let u = (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
                            (u * amp * 32767.0).round() as i16
                        })
                        .collect();
                    AudioBuffer::new(s, c.sample_rate()).unwrap()
                }
            };
            out.append(&piece).unwrap();
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vad_is_scale_consistent(a in signal(), shift in 0u32..3, theta in -70.0f64..-20.0) {
        let c = clock();
        let g = f64::from(1u32 << shift) * 2.0;
        let scaled = a.scaled(g);
        prop_assert_eq!(scaled.samples().iter().zip(a.samples()).filter(|(s, o)| f64::from(**s) != f64::from(**o) * g).count(), 0);
        let base = active_frames(&a, &c, theta - 20.0 * g.log10());
        prop_assert_eq!(active_frames(&scaled, &c, theta), base);
    }

    #[test]
    fn segments_disjoint_sorted_and_bounded(a in signal(), hang in 0usize..4, min in 1usize..4) {
        let c = clock();
        let p = VadParams { hangover: hang, min_speech: min, ..VadParams::default() };
        let segs = vad(&a, &c, &p, Speaker::Agent);
        for s in &segs {
            prop_assert!(s.end > s.start);
        }
        for w in segs.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        let total: f64 = segs.iter().map(|s| s.duration()).sum();
        prop_assert!(total <= a.duration() + 1e-9);
    }

    #[test]
    fn extract_events_is_pure(u in signal(), ag in signal(), frac in 0.0f64..1.0) {
        let c = clock();
        let len = u.len().max(ag.len());
        let pad = |x: &AudioBuffer| {
            let mut y = x.clone();
            y.extend_from_slice(&vec![0; len - x.len()]);
            y
        };
        let (u, ag) = (pad(&u), pad(&ag));
        let meta = TrialMeta::new(TrialCategory::Backchannel, frac * u.duration());
        let p = EventParams::default();
        let e1 = extract_events(&u, &ag, &meta, &c, &p).unwrap();
        let e2 = extract_events(&u.clone(), &ag.clone(), &meta.clone(), &c, &p).unwrap();
        prop_assert_eq!(&e1, &e2);
        for o in &e1.agent_onsets {
            prop_assert!(*o >= e1.anchor_time && *o <= e1.anchor_time + e1.eval_window + 1e-9);
        }
    }

    #[test]
    fn prompt_length_and_reorder(voice in 1usize..40, text in proptest::collection::vec(0u32..32_000, 0..30)) {
        let c = clock();
        let codec = ToyCodec::new(c, DEFAULT_CODEBOOKS).unwrap();
        let v = gen_sine_frames(150.0, voice, 0.3, &c).unwrap();
        let a = build_hybrid_prompt(&HybridPromptSpec::new(v.clone(), text.clone()), &codec).unwrap();
        let b = build_hybrid_prompt(&HybridPromptSpec::new(v, text.clone()).with_order(SegmentOrder::TextFirst), &codec).unwrap();
        prop_assert_eq!(a.len(), voice + text.len() + 1);
        prop_assert_eq!(b.len(), a.len());
        let multiset = |p: &duplexbench::prompt::HybridPrompt| {
            let mut v: Vec<(i32, Vec<u32>)> = p.stream.agent_frames().iter().map(|f| (f.text.to_wire(), f.audio.clone())).collect();
            v.sort();
            v
        };
        prop_assert_eq!(multiset(&a), multiset(&b));
        prop_assert_eq!(a.voice_span.len(), b.voice_span.len());
        prop_assert_eq!(a.text_span.len(), b.text_span.len());
    }

    #[test]
    fn loss_weights_use_four_values(voice in 1usize..20, dialog in 1usize..20, text in proptest::collection::vec(proptest::option::of(0u32..32_000), 20)) {
        let c = clock();
        let codec = ToyCodec::new(c, DEFAULT_CODEBOOKS).unwrap();
        let p = build_hybrid_prompt(&HybridPromptSpec::new(gen_sine_frames(150.0, voice, 0.3, &c).unwrap(), vec![1, 2, 3]), &codec).unwrap();
        let user = gen_sine_frames(300.0, dialog, 0.2, &c).unwrap();
        let agent = gen_sine_frames(200.0, dialog, 0.2, &c).unwrap();
        let lane: Vec<TextToken> = text[..dialog].iter().map(|t| t.map_or(TextToken::Pad, TextToken::Id)).collect();
        let s = p.training_stream(&dialogue_stream(&user, &agent, &lane, &codec).unwrap()).unwrap();
        for (i, f) in s.agent_frames().iter().enumerate() {
            for w in std::iter::once(f.weights.text).chain(f.weights.audio.iter().copied()) {
                prop_assert!([0.0, 0.02, 0.3, 1.0].contains(&w), "weight {}", w);
                if i < p.len() {
                    prop_assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn scenario_round_trip_is_exact(n in 1usize..8, pick in 0usize..8) {
        let s = &generate_scenarios(n)[pick % n];
        let text = s.to_toml().unwrap();
        let back = Scenario::parse(&text).unwrap();
        prop_assert_eq!(&back, s);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}

#[test]
fn scenario_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let src = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/scenarios/health-insurance-brody.toml"
    );
    let a = Scenario::load(src).unwrap();
    let p1 = dir.path().join("a.toml");
    a.save(&p1).unwrap();
    let b = Scenario::load(&p1).unwrap();
    let p2 = dir.path().join("b.toml");
    b.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(a.questions, b.questions);
    assert_eq!(a.context, b.context);
    assert_eq!(a.slots, b.slots);
}
