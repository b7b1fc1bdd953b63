use dispad_core::entropy::*;
use dispad_core::types::{Placement, SensorFrame, Session, CHANNELS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight transcription of the definition: every ordered pair, no sharing.
fn oracle(x: &[f64], m: usize, r: f64, p: f64) -> f64 {
    fn phi(x: &[f64], k: usize, r: f64, p: f64) -> f64 {
        let n = x.len() - k + 1;
        let t: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mu: f64 = x[i..i + k].iter().sum::<f64>() / k as f64;
                x[i..i + k].iter().map(|v| v - mu).collect()
            })
            .collect();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut d: f64 = 0.0;
                for l in 0..k {
                    d = d.max((t[i][l] - t[j][l]).abs());
                }
                s += (-d.powf(p) / r).exp();
            }
        }
        s / (n * (n - 1)) as f64
    }
    phi(x, m, r, p).ln() - phi(x, m + 1, r, p).ln()
}

fn cfg(m: usize, r: f64) -> EntropyConfig {
    EntropyConfig { m, r, ..Default::default() }
}

#[test]
fn matches_brute_force_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n = rng.random_range(8..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let m = if case % 2 == 0 { 1 } else { 2 };
        let r = if case % 4 < 2 { 0.1 } else { 0.25 };
        let got = fuzzy_entropy(&x, &cfg(m, r)).unwrap();
        let want = oracle(&x, m, r, 2.0);
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn series_length_power_matches_oracle() {
    let x: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
    let c = EntropyConfig { fuzzy_power: FuzzyPower::SeriesLength, ..Default::default() };
    let got = fuzzy_entropy(&x, &c).unwrap();
    assert!((got - oracle(&x, 2, 0.25, 20.0)).abs() < 1e-9);
}

#[test]
fn constant_series_is_zero() {
    assert_eq!(fuzzy_entropy(&[0.4; 40], &EntropyConfig::default()).unwrap(), 0.0);
}

#[test]
fn noise_is_more_complex_than_a_sine() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sine: Vec<f64> = (0..300).map(|i| 0.5 + 0.5 * (i as f64 * 0.1).sin()).collect();
    let noise: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    let c = EntropyConfig::default();
    assert!(fuzzy_entropy(&noise, &c).unwrap() > fuzzy_entropy(&sine, &c).unwrap());
}

#[test]
fn times_sd_tolerance_scales_r() {
    let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let sd = sd_criterion(&x).unwrap();
    let rel = EntropyConfig { r: 0.2, tolerance: Tolerance::TimesSd, ..Default::default() };
    let abs = EntropyConfig { r: 0.2 * sd, ..Default::default() };
    assert!((fuzzy_entropy(&x, &rel).unwrap() - fuzzy_entropy(&x, &abs).unwrap()).abs() < 1e-12);
}

fn session_from(columns: &[Vec<f64>; CHANNELS]) -> Session {
    let n = columns[0].len();
    let frames = (0..n)
        .map(|i| SensorFrame {
            timestamp_ms: i as u64 * 20,
            readings: std::array::from_fn(|k| columns[k][i]),
        })
        .collect();
    Session::new(Placement::new(0.0, 0.0).unwrap(), frames, None, "u", "m", 50.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn offset_invariant(xs in prop::collection::vec(0.0f64..1.0, 10..40), c in -5.0f64..5.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = fuzzy_entropy(&xs, &EntropyConfig::default()).unwrap();
        let b = fuzzy_entropy(&shifted, &EntropyConfig::default()).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ranking_follows_channel_permutation(seed in 0u64..1000, perm in Just((0..CHANNELS).collect::<Vec<_>>()).prop_shuffle()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: [Vec<f64>; CHANNELS] = std::array::from_fn(|k| {
            (0..40).map(|i| (i as f64 * 0.2 * (k + 1) as f64).sin() * 0.3 + 0.5 + 0.05 * k as f64 * rng.random::<f64>()).collect()
        });
        let permuted: [Vec<f64>; CHANNELS] = std::array::from_fn(|k| cols[perm[k]].clone());
        let opts = RankOptions::default();
        let (ra, a) = rank_channels(&session_from(&cols), &opts).unwrap();
        let (rb, b) = rank_channels(&session_from(&permuted), &opts).unwrap();
        // same values, so the ranked sessions agree whenever there are no ties
        let mut sorted = a.entropies.to_vec();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] > w[0]));
        for k in 0..CHANNELS {
            prop_assert_eq!(b.entropies[k], a.entropies[perm[k]]);
            prop_assert_eq!(perm[b.order[k]], a.order[k]);
        }
        prop_assert_eq!(ra.frames, rb.frames);
    }

    #[test]
    fn order_is_a_sorted_permutation(vals in prop::array::uniform6(0.0f64..2.0), desc in any::<bool>()) {
        let all: Vec<usize> = (0..CHANNELS).collect();
        let order = order_by(&vals, &all, desc);
        let mut seen = order.clone();
        seen.sort();
        prop_assert_eq!(seen, all);
        for w in order.windows(2) {
            if desc {
                prop_assert!(vals[w[0]] >= vals[w[1]]);
            } else {
                prop_assert!(vals[w[0]] <= vals[w[1]]);
            }
        }
    }
}

#[test]
fn criteria_rank_differently_on_a_smooth_noisy_pair() {
    // channel 0 smooth, channel 1 small but jittery
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cols: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| vec![0.5; 120]);
    cols[0] = (0..120).map(|i| 0.5 + 0.5 * (i as f64 * 0.05).sin()).collect();
    cols[1] = (0..120).map(|_| 0.5 + 0.05 * rng.random::<f64>()).collect();
    let s = session_from(&cols);
    let sd = rank_channels(&s, &RankOptions::with_criterion(Criterion::Sd)).unwrap().1;
    let jitter = rank_channels(&s, &RankOptions::with_criterion(Criterion::Jitter)).unwrap().1;
    assert!(sd.entropies[1] < sd.entropies[0]);
    assert!(jitter.entropies[0] < jitter.entropies[1]);
    let none = rank_channels(&s, &RankOptions::with_criterion(Criterion::None)).unwrap().1;
    assert_eq!(none.order, (0..CHANNELS).collect::<Vec<_>>());
}

#[test]
fn subset_ranking_zero_fills_unused_slots() {
    let cols: [Vec<f64>; CHANNELS] = std::array::from_fn(|k| (0..50).map(|i| ((i * (k + 2)) % 7) as f64 / 7.0).collect());
    let (ranked, r) = rank_subset(&session_from(&cols), &RankOptions::default(), &[4, 1, 2]).unwrap();
    assert_eq!(r.order.len(), 3);
    assert!(r.order.iter().all(|c| [1, 2, 4].contains(c)));
    assert!(ranked.frames.iter().all(|f| f.readings[3..].iter().all(|v| *v == 0.0)));
    assert!(rank_subset(&session_from(&cols), &RankOptions::default(), &[]).is_err());
}
