//! Per-session preprocessing: min-max normalization, outlier repair, truth
//! resampling, windowing and placement-level partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Dataset, Session, Split, Window, CHANNELS};

/// Per-channel min/max observed on a session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
}

impl NormStats {
    pub fn from_session(session: &Session) -> Self {
        let mut min = [f64::INFINITY; CHANNELS];
        let mut max = [f64::NEG_INFINITY; CHANNELS];
        for f in &session.frames {
            for k in 0..CHANNELS {
                min[k] = min[k].min(f.readings[k]);
                max[k] = max[k].max(f.readings[k]);
            }
        }
        NormStats { min, max }
    }

    /// Channels whose range is zero. They normalize to 0.5.
    pub fn degenerate(&self) -> [bool; CHANNELS] {
        std::array::from_fn(|k| !(self.max[k] > self.min[k]))
    }

    pub fn apply(&self, session: &Session) -> Session {
        let mut out = session.clone();
        let degenerate = self.degenerate();
        for f in &mut out.frames {
            for k in 0..CHANNELS {
                f.readings[k] = if degenerate[k] {
                    0.5
                } else {
                    (f.readings[k] - self.min[k]) / (self.max[k] - self.min[k])
                };
            }
        }
        out
    }
}

/// Min-max normalize every channel into [0, 1] using the session's own range.
pub fn normalize_minmax(session: &Session) -> (Session, NormStats) {
    let stats = NormStats::from_session(session);
    (stats.apply(session), stats)
}

/// Replace samples further than `z` standard deviations from the mean by
/// linear interpolation between the nearest clean neighbours. Returns the
/// repaired series and how many samples were replaced.
pub fn clean_series(series: &[f64], z: f64) -> (Vec<f64>, usize) {
    let n = series.len();
    if n < 3 {
        return (series.to_vec(), 0);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let sd = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(sd > 0.0) {
        return (series.to_vec(), 0);
    }
    let bad: Vec<bool> = series.iter().map(|v| (v - mean).abs() > z * sd).collect();
    let count = bad.iter().filter(|b| **b).count();
    if count == 0 || count == n {
        return (series.to_vec(), 0);
    }
    let mut out = series.to_vec();
    let mut i = 0;
    while i < n {
        if !bad[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && bad[i] {
            i += 1;
        }
        let left = start.checked_sub(1);
        let right = (i < n).then_some(i);
        for (j, slot) in out.iter_mut().enumerate().take(i).skip(start) {
            *slot = match (left, right) {
                (Some(l), Some(r)) => {
                    let t = (j - l) as f64 / (r - l) as f64;
                    series[l] + t * (series[r] - series[l])
                }
                (Some(l), None) => series[l],
                (None, Some(r)) => series[r],
                (None, None) => unreachable!("at least one clean sample exists"),
            };
        }
    }
    (out, count)
}

/// Per-channel z-score outlier repair. Frame count is unchanged.
pub fn remove_outliers(session: &Session, z: f64) -> Result<Session> {
    if !(z > 0.0) {
        return Err(Error::InvalidArgument(format!("outlier threshold must be > 0, got {z}")));
    }
    let mut out = session.clone();
    for k in 0..CHANNELS {
        let (clean, _) = clean_series(&session.channel(k), z);
        out.set_channel(k, &clean);
    }
    Ok(out)
}

/// Linearly interpolate a truth series onto sensor timestamps.
pub fn resample_truth(truth_ts: &[u64], truth_values: &[f64], sensor_ts: &[u64]) -> Result<Vec<f64>> {
    if truth_ts.len() != truth_values.len() {
        return Err(Error::Shape {
            expected: format!("{} truth values", truth_ts.len()),
            got: format!("{}", truth_values.len()),
        });
    }
    if truth_ts.is_empty() {
        return Err(Error::InvalidArgument("empty truth series".into()));
    }
    if truth_ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("truth timestamps not strictly increasing".into()));
    }
    let (lo, hi) = (truth_ts[0], *truth_ts.last().unwrap());
    let mut out = Vec::with_capacity(sensor_ts.len());
    let mut j = 0;
    for &t in sensor_ts {
        if t < lo || t > hi {
            return Err(Error::Extrapolation { timestamp: t, lo, hi });
        }
        // sensor timestamps are usually sorted; fall back to a search if not
        if j >= truth_ts.len() || truth_ts[j] > t {
            j = truth_ts.partition_point(|&x| x <= t).saturating_sub(1);
        }
        while j + 1 < truth_ts.len() && truth_ts[j + 1] <= t {
            j += 1;
        }
        let v = if truth_ts[j] == t || j + 1 == truth_ts.len() {
            truth_values[j]
        } else {
            let (t0, t1) = (truth_ts[j] as f64, truth_ts[j + 1] as f64);
            let a = (t as f64 - t0) / (t1 - t0);
            truth_values[j] + a * (truth_values[j + 1] - truth_values[j])
        };
        out.push(v);
    }
    Ok(out)
}

/// Stride-1 sliding windows over the first `channels` channels. The target
/// is the truth at the window's last frame.
pub fn make_windows(session: &Session, w: usize, channels: usize) -> Vec<Window> {
    assert!(w > 0 && (1..=CHANNELS).contains(&channels));
    let n = session.len();
    if n < w {
        log::warn!(
            "session at {} has {n} frames, fewer than window length {w}; no windows",
            session.placement
        );
        return Vec::new();
    }
    (0..=n - w)
        .map(|i| {
            let mut values = Vec::with_capacity(w * channels);
            for f in &session.frames[i..i + w] {
                values.extend_from_slice(&f.readings[..channels]);
            }
            Window {
                values,
                channels,
                target: session.truth.as_ref().map(|t| t[i + w - 1]),
            }
        })
        .collect()
}

/// Split counts by the largest-remainder method, with every split non-empty.
fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: [usize; 3] = std::array::from_fn(|i| raw[i].floor() as usize);
    let mut rest = n - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Randomly assign whole placements to train/validate/test.
pub fn partition(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut placements = dataset.placements();
    if placements.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "{} placements cannot fill 3 splits",
            placements.len()
        )));
    }
    let counts = split_counts(placements.len(), fractions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    placements.shuffle(&mut rng);
    let mut out = dataset.clone();
    out.split.clear();
    let labels = [Split::Train, Split::Validate, Split::Test];
    let mut it = placements.into_iter();
    for (label, count) in labels.iter().zip(counts) {
        for p in it.by_ref().take(count) {
            out.split.insert(p, *label);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Placement, SensorFrame};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn session_from_channel(values: &[f64]) -> Session {
        let frames = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SensorFrame {
                timestamp_ms: i as u64 * 20,
                readings: [v; CHANNELS],
            })
            .collect();
        Session::new(Placement::new(0.0, 0.0).unwrap(), frames, None, "u", "m", 50.0).unwrap()
    }

    #[test]
    fn minmax_endpoints_and_linear_map() {
        let (s, _) = normalize_minmax(&session_from_channel(&[0.0, 1023.0]));
        assert_eq!(s.channel(0), vec![0.0, 1.0]);
        let (s, _) = normalize_minmax(&session_from_channel(&[100.0, 300.0, 200.0]));
        assert_eq!(s.channel(3), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn minmax_constant_channel_flags() {
        let (s, stats) = normalize_minmax(&session_from_channel(&[512.0; 5]));
        assert_eq!(s.channel(0), vec![0.5; 5]);
        assert!(stats.degenerate().iter().all(|d| *d));
    }

    #[test]
    fn minmax_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1023.0)).collect();
        let (once, _) = normalize_minmax(&session_from_channel(&vals));
        let (twice, _) = normalize_minmax(&once);
        for (a, b) in once.channel(2).iter().zip(twice.channel(2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_spike_replaced_by_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
        xs[40] = 10.0;
        let (clean, n) = clean_series(&xs, 3.0);
        assert_eq!(n, 1);
        assert!((clean[40] - 0.5 * (xs[39] + xs[41])).abs() < 1e-12);
        assert_eq!(clean.len(), xs.len());
    }

    #[test]
    fn clean_gaussian_rarely_altered() {
        // Monte-Carlo over seeded noise; expected rate at z=3 is ~0.27%.
        let mut altered = 0;
        let mut total = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
            altered += clean_series(&xs, 3.0).1;
            total += xs.len();
        }
        let rate = altered as f64 / total as f64;
        assert!(rate <= 0.005, "rate {rate}");
    }

    #[test]
    fn outliers_noop_cases() {
        let (c, n) = clean_series(&[4.0; 30], 3.0);
        assert_eq!((c, n), (vec![4.0; 30], 0));
        let (c, n) = clean_series(&[1.0, 1000.0], 3.0);
        assert_eq!((c, n), (vec![1.0, 1000.0], 0));
        assert!(remove_outliers(&session_from_channel(&[1.0, 2.0, 3.0]), 0.0).is_err());
    }

    #[test]
    fn resample_midpoint_identity_and_extrapolation() {
        assert_eq!(resample_truth(&[0, 20], &[100.0, 120.0], &[10]).unwrap(), vec![110.0]);
        let ts = [0, 20, 40, 60];
        let vs = [1.0, 5.0, 2.0, 7.0];
        assert_eq!(resample_truth(&ts, &vs, &ts).unwrap(), vs.to_vec());
        assert!(matches!(
            resample_truth(&ts, &vs, &[61]),
            Err(Error::Extrapolation { timestamp: 61, .. })
        ));
    }

    #[test]
    fn resample_60hz_to_50hz_length() {
        // 60 Hz truth over 10 s, 50 Hz sensor grid inside it
        let truth_ts: Vec<u64> = (0..=600).map(|i| (i as f64 * 1000.0 / 60.0).round() as u64).collect();
        let truth: Vec<f64> = truth_ts.iter().map(|t| 100.0 + (*t as f64 / 1000.0).sin()).collect();
        let sensor_ts: Vec<u64> = (0..500).map(|i| i * 20).collect();
        let out = resample_truth(&truth_ts, &truth, &sensor_ts).unwrap();
        assert_eq!(out.len(), sensor_ts.len());
        for (t, v) in sensor_ts.iter().zip(&out) {
            assert!((v - (100.0 + (*t as f64 / 1000.0).sin())).abs() < 1e-3);
        }
    }

    #[test]
    fn window_counts_and_alignment() {
        let vals: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mut s = session_from_channel(&vals);
        s.truth = Some(vals.iter().map(|v| v + 40.0).collect());
        let w = make_windows(&s, 30, 6);
        assert_eq!(w.len(), 71);
        for (i, win) in w.iter().enumerate() {
            assert_eq!(win.target, Some(s.truth.as_ref().unwrap()[i + 29]));
            assert_eq!(win.frames(), 30);
        }
        let short = session_from_channel(&vals[..30]);
        assert_eq!(make_windows(&short, 30, 6).len(), 1);
        let shorter = session_from_channel(&vals[..29]);
        assert!(make_windows(&shorter, 30, 6).is_empty());
    }

    fn grid_dataset(n: usize) -> Dataset {
        let sessions = (0..n)
            .map(|i| {
                let mut s = session_from_channel(&[1.0, 2.0, 3.0]);
                s.placement = Placement::new(
                    -4.0 + (i % 9) as f64,
                    (i / 9) as f64 * 5.0,
                )
                .unwrap();
                s
            })
            .collect();
        Dataset::new(sessions)
    }

    #[test]
    fn partition_table_one_counts() {
        let ds = grid_dataset(639);
        assert_eq!(ds.placements().len(), 639);
        let fr = [378.0 / 639.0, 126.0 / 639.0, 135.0 / 639.0];
        let p = partition(&ds, fr, 7).unwrap();
        assert_eq!(p.placements_in(Split::Train).len(), 378);
        assert_eq!(p.placements_in(Split::Validate).len(), 126);
        assert_eq!(p.placements_in(Split::Test).len(), 135);
        assert_eq!(p.split.len(), 639);
    }

    #[test]
    fn partition_three_and_determinism() {
        let ds = grid_dataset(3);
        let p = partition(&ds, [1.0 / 3.0; 3], 1).unwrap();
        for s in [Split::Train, Split::Validate, Split::Test] {
            assert_eq!(p.placements_in(s).len(), 1);
        }
        let ds = grid_dataset(40);
        assert_eq!(partition(&ds, [0.6, 0.2, 0.2], 9).unwrap(), partition(&ds, [0.6, 0.2, 0.2], 9).unwrap());
        assert!(partition(&grid_dataset(2), [0.4, 0.3, 0.3], 0).is_err());
        assert!(partition(&ds, [0.5, 0.5, 0.0], 0).is_err());
    }
}
