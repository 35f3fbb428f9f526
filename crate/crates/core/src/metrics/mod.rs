//! Duplex behaviour metrics over extracted trial events.

mod embed;

pub use embed::{
    cosine_similarity, speaker_similarity, ExternalEmbeddings, ReferenceEmbedder, SpeakerEmbedder,
    SpeakerSim,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vad::{TrialCategory, TrialEvents};

/// Number of bins in the backchannel onset-position histogram.
pub const HISTOGRAM_BINS: usize = 10;
const MASS_TOLERANCE: f64 = 1e-6;

fn uniform_category(trials: &[TrialEvents]) -> Result<TrialCategory> {
    let first = trials
        .first()
        .ok_or_else(|| Error::invalid("no trials given"))?
        .category;
    if trials.iter().any(|t| t.category != first) {
        return Err(Error::invalid("trials mix several categories"));
    }
    Ok(first)
}

/// Fraction of trials in which the agent takes the floor inside the window.
pub fn tor(trials: &[TrialEvents]) -> Result<f64> {
    uniform_category(trials)?;
    let hits = trials.iter().filter(|t| t.took_over()).count();
    Ok(hits as f64 / trials.len() as f64)
}

/// Mean of `first onset - anchor` over the trials that have an onset.
pub fn latency(trials: &[TrialEvents]) -> Result<f64> {
    latency_stats(trials).map(|s| s.mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ci95 = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            ci95,
            n: values.len(),
        })
    }
}

pub fn latency_stats(trials: &[TrialEvents]) -> Result<MeanCi> {
    let delays: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.first_takeover().map(|o| o - t.anchor_time))
        .collect();
    MeanCi::from_values(&delays)
        .ok_or_else(|| Error::UndefinedMetric("latency: no trial has an agent onset".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackchannelStats {
    /// Backchannels per second of user speech.
    pub freq: f64,
    pub count: usize,
    pub user_speech_seconds: f64,
    /// Onset positions within the user utterance; sums to 1, or all zero
    /// when there are no backchannels.
    pub histogram: Vec<f64>,
}

pub fn backchannel_stats(trials: &[TrialEvents]) -> Result<BackchannelStats> {
    let cat = uniform_category(trials)?;
    if cat != TrialCategory::Backchannel {
        return Err(Error::invalid(format!(
            "backchannel statistics need backchannel trials, got {}",
            cat.name()
        )));
    }
    let user_speech: f64 = trials.iter().map(TrialEvents::user_speech_seconds).sum();
    if user_speech <= 0.0 {
        return Err(Error::UndefinedMetric(
            "backchannel frequency: trials contain no user speech".into(),
        ));
    }
    let positions: Vec<f64> = trials
        .iter()
        .flat_map(|t| t.backchannels.iter().map(|b| b.relative_position))
        .collect();
    Ok(BackchannelStats {
        freq: positions.len() as f64 / user_speech,
        count: positions.len(),
        user_speech_seconds: user_speech,
        histogram: position_histogram(&positions, HISTOGRAM_BINS),
    })
}

/// Normalized histogram of values in `[0, 1]`; the value 1.0 lands in the
/// last bin.
pub fn position_histogram(positions: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if positions.is_empty() || bins == 0 {
        return h;
    }
    for &p in positions {
        let b = ((p.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        h[b] += 1.0;
    }
    let n = positions.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Jensen–Shannon divergence with base-2 logarithms, bounded in `[0, 1]`.
///
/// Both inputs must be probability vectors of equal length; two all-zero
/// vectors compare as identical.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "histogram lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let check = |h: &[f64], name: &str| -> Result<f64> {
        if h.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "{name} has negative or non-finite mass"
            )));
        }
        Ok(h.iter().sum())
    };
    let (sp, sq) = (check(p, "p")?, check(q, "q")?);
    if sp == 0.0 && sq == 0.0 {
        return Ok(0.0);
    }
    for (s, name) in [(sp, "p"), (sq, "q")] {
        if (s - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("{name} sums to {s}, expected 1")));
        }
    }
    let kl_to_mid = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else {
            a * (2.0 * a / (a + b)).log2()
        }
    };
    let d: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| 0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a))
        .sum();
    Ok(d.clamp(0.0, 1.0))
}

/// Reference onset distribution a backchannel histogram is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHistogram(pub Vec<f64>);

impl ReferenceHistogram {
    pub fn uniform(bins: usize) -> Self {
        Self(vec![1.0 / bins as f64; bins])
    }

    /// Normalizes non-negative weights to a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("reference histogram has negative mass"));
        }
        let s: f64 = weights.iter().sum();
        if s <= 0.0 {
            return Err(Error::invalid("reference histogram has no mass"));
        }
        Ok(Self(weights.into_iter().map(|w| w / s).collect()))
    }

    /// Reads whitespace- or comma-separated weights; `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut weights = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
            {
                weights.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad histogram value `{tok}`")))?,
                );
            }
        }
        Self::from_weights(weights)
    }
}

impl Default for ReferenceHistogram {
    fn default() -> Self {
        Self::uniform(HISTOGRAM_BINS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: TrialCategory,
    pub n_trials: usize,
    pub n_with_onset: usize,
    pub tor: f64,
    pub latency_mean: Option<f64>,
    pub latency_ci95: Option<f64>,
    pub backchannel_freq: Option<f64>,
    pub backchannel_count: usize,
    pub jsd: Option<f64>,
}

/// Commutative, associative per-category accumulator.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    by_category: BTreeMap<TrialCategory, Vec<TrialEvents>>,
}

impl MetricsAccumulator {
    pub fn add(&mut self, events: TrialEvents) {
        self.by_category
            .entry(events.category)
            .or_default()
            .push(events);
    }

    pub fn merge(mut self, other: MetricsAccumulator) -> MetricsAccumulator {
        for (cat, mut trials) in other.by_category {
            self.by_category.entry(cat).or_default().append(&mut trials);
        }
        self
    }

    pub fn finish(&self, reference: &ReferenceHistogram) -> Result<Vec<CategoryMetrics>> {
        self.by_category
            .iter()
            .map(|(&cat, trials)| category_metrics(cat, trials, reference))
            .collect()
    }
}

fn category_metrics(
    category: TrialCategory,
    trials: &[TrialEvents],
    reference: &ReferenceHistogram,
) -> Result<CategoryMetrics> {
    let latency = latency_stats(trials).ok();
    let (backchannel_freq, backchannel_count, jsd_value) = if category == TrialCategory::Backchannel
    {
        match backchannel_stats(trials) {
            Ok(stats) => {
                let d = if stats.count > 0 {
                    Some(jsd(&stats.histogram, &reference.0)?)
                } else {
                    None
                };
                (Some(stats.freq), stats.count, d)
            }
            Err(Error::UndefinedMetric(_)) => (None, 0, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, 0, None)
    };
    Ok(CategoryMetrics {
        category,
        n_trials: trials.len(),
        n_with_onset: trials.iter().filter(|t| t.took_over()).count(),
        tor: tor(trials)?,
        latency_mean: latency.map(|l| l.mean),
        latency_ci95: latency.map(|l| l.ci95),
        backchannel_freq,
        backchannel_count,
        jsd: jsd_value,
    })
}

pub fn aggregate(
    trials: &[TrialEvents],
    reference: &ReferenceHistogram,
) -> Result<Vec<CategoryMetrics>> {
    let mut acc = MetricsAccumulator::default();
    for t in trials {
        acc.add(t.clone());
    }
    acc.finish(reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vad::Backchannel;
    use proptest::prelude::*;

    fn trial(category: TrialCategory, anchor: f64, onset: Option<f64>) -> TrialEvents {
        let onsets: Vec<f64> = onset.into_iter().collect();
        TrialEvents {
            category,
            anchor_time: anchor,
            eval_window: 3.0,
            trial_duration: 10.0,
            agent_onsets: onsets.clone(),
            takeover_onsets: onsets,
            agent_segments: vec![],
            user_segments: vec![],
            backchannels: vec![],
        }
    }

    #[test]
    fn tor_extremes_and_half() {
        let tt = TrialCategory::TurnTaking;
        let silent: Vec<_> = (0..4).map(|_| trial(tt, 1.0, None)).collect();
        assert_eq!(tor(&silent).unwrap(), 0.0);
        let all: Vec<_> = (0..4).map(|_| trial(tt, 1.0, Some(1.2))).collect();
        assert_eq!(tor(&all).unwrap(), 1.0);
        let half: Vec<_> = (0..6)
            .map(|i| trial(tt, 1.0, (i % 2 == 0).then_some(1.5)))
            .collect();
        assert_eq!(tor(&half).unwrap(), 0.5);
        assert!(matches!(tor(&[]), Err(Error::InvalidArgument(_))));
        let mixed = [trial(tt, 1.0, None), trial(TrialCategory::Pause, 1.0, None)];
        assert!(tor(&mixed).is_err());
    }

    #[test]
    fn latency_examples() {
        let tt = TrialCategory::TurnTaking;
        assert_eq!(latency(&[trial(tt, 2.0, Some(2.0))]).unwrap(), 0.0);
        let two = [trial(tt, 1.0, Some(1.2)), trial(tt, 3.0, Some(3.6))];
        assert!((latency(&two).unwrap() - 0.4).abs() < 1e-12);
        // trials without onsets do not enter the mean
        let with_miss = [two[0].clone(), two[1].clone(), trial(tt, 1.0, None)];
        assert!((latency(&with_miss).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(
            latency(&[trial(tt, 1.0, None)]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn bc_trial(speech: f64, positions: &[f64]) -> TrialEvents {
        use crate::stitch::Speaker;
        use crate::vad::SpeechSegment;
        let mut t = trial(TrialCategory::Backchannel, 0.0, None);
        t.user_segments = vec![SpeechSegment {
            start: 0.0,
            end: speech,
            channel: Speaker::User,
            mean_level: -20.0,
            start_frame: 0,
            end_frame: 0,
        }];
        t.backchannels = positions
            .iter()
            .map(|&p| Backchannel {
                onset: p * speech,
                duration: 0.3,
                relative_position: p,
            })
            .collect();
        t
    }

    #[test]
    fn backchannel_examples() {
        let none = backchannel_stats(&[bc_trial(10.0, &[])]).unwrap();
        assert_eq!(none.freq, 0.0);
        assert_eq!(none.histogram, vec![0.0; 10]);

        let three = backchannel_stats(&[
            bc_trial(10.0, &[0.2]),
            bc_trial(10.0, &[0.4]),
            bc_trial(10.0, &[0.6]),
        ])
        .unwrap();
        assert!((three.freq - 0.1).abs() < 1e-12);

        let ends = backchannel_stats(&[bc_trial(5.0, &[0.05, 0.95])]).unwrap();
        let mut want = vec![0.0; 10];
        want[0] = 0.5;
        want[9] = 0.5;
        assert_eq!(ends.histogram, want);

        assert!(matches!(
            backchannel_stats(&[bc_trial(0.0, &[])]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(backchannel_stats(&[trial(TrialCategory::Pause, 0.0, None)]).is_err());
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        // direct evaluation: 1/2[0.5 log2(0.5/0.75) + 0.5 log2(0.5/0.25)] + 1/2[log2(1/0.75)]
        let want = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2())
            + 0.5 * (1.0f64 / 0.75).log2();
        let got = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.31128).abs() < 1e-5);
        assert_eq!(jsd(&[0.0; 3], &[0.0; 3]).unwrap(), 0.0);
        assert!(jsd(&[0.5, 0.5], &[1.0]).is_err());
        assert!(jsd(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(jsd(&[0.2, 0.2], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn reference_histogram_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.txt");
        fs::write(&p, "# counts\n1, 1 2\n0 0 0 0 0 0 4\n").unwrap();
        let r = ReferenceHistogram::load(&p).unwrap();
        assert_eq!(r.0.len(), 10);
        assert!((r.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.0[9], 0.5);
        fs::write(&p, "0 0").unwrap();
        assert!(ReferenceHistogram::load(&p).is_err());
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let tt = TrialCategory::TurnTaking;
        let a: Vec<_> = (0..5)
            .map(|i| trial(tt, 1.0, (i % 2 == 0).then_some(1.3)))
            .collect();
        let b: Vec<_> = (0..3).map(|_| bc_trial(4.0, &[0.5])).collect();
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let whole = aggregate(&all, &ReferenceHistogram::default()).unwrap();
        let mut left = MetricsAccumulator::default();
        b.iter().for_each(|t| left.add(t.clone()));
        let mut right = MetricsAccumulator::default();
        a.iter().for_each(|t| right.add(t.clone()));
        let merged = left
            .merge(right)
            .finish(&ReferenceHistogram::default())
            .unwrap();
        assert_eq!(whole, merged);
        assert_eq!(whole[0].category, TrialCategory::Backchannel);
        assert!(whole[0].jsd.is_some());
        assert!((whole[1].tor - 0.6).abs() < 1e-12);
    }

    fn histogram() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 10).prop_map(|w| {
            let s: f64 = w.iter().sum();
            if s == 0.0 {
                vec![0.1; 10]
            } else {
                w.into_iter().map(|v| v / s).collect()
            }
        })
    }

    proptest! {
        #[test]
        fn jsd_symmetric_and_bounded(p in histogram(), q in histogram()) {
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn tor_order_invariant_and_monotone(hits in proptest::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let tt = TrialCategory::TurnTaking;
            let mut trials: Vec<_> = hits.iter().map(|&h| trial(tt, 1.0, h.then_some(1.4))).collect();
            let base = tor(&trials).unwrap();
            trials.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(tor(&trials).unwrap(), base);
            trials.push(trial(tt, 1.0, None));
            prop_assert!(tor(&trials).unwrap() <= base);
        }
    }
}
