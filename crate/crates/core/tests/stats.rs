use dispad_core::eval::*;
use proptest::prelude::*;

/// Enumerate every way of choosing which pooled values form the first sample.
fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let u_of = |mask: u32| {
        // U = number of (x in first, y in second) with x > y, ties count half
        let mut u = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 0 {
                continue;
            }
            for j in 0..n {
                if mask >> j & 1 == 1 {
                    continue;
                }
                u += if pooled[i] > pooled[j] {
                    1.0
                } else if pooled[i] == pooled[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        u
    };
    let observed = u_of((1u32 << na) - 1);
    let mean = (na * b.len()) as f64 / 2.0;
    let (mut hit, mut all) = (0, 0);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        all += 1;
        if (u_of(mask) - mean).abs() >= (observed - mean).abs() - 1e-9 {
            hit += 1;
        }
    }
    assert_eq!(all, (0..na).fold(1, |acc, i| acc * (n - i) / (i + 1)));
    hit as f64 / all as f64
}

#[test]
fn exact_p_matches_enumeration_for_four_by_four() {
    let cases: [([f64; 4], [f64; 4]); 5] = [
        ([1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]),
        ([1.0, 3.0, 5.0, 7.0], [2.0, 4.0, 6.0, 8.0]),
        ([2.5, 9.0, 0.1, 4.4], [3.3, 8.0, 7.7, 1.2]),
        ([1.0, 2.0, 2.0, 3.0], [2.0, 3.0, 3.0, 4.0]),
        ([5.0, 5.0, 5.0, 5.0], [5.0, 5.0, 5.0, 6.0]),
    ];
    for (a, b) in cases {
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(r.exact);
        let want = enumerated_p(&a, &b);
        assert!((r.p - want).abs() < 1e-12, "{a:?} {b:?}: {} vs {want}", r.p);
    }
    // fully separated 4 vs 4: 2 of 70 arrangements are as extreme
    let r = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]).unwrap();
    assert_eq!(r.u, 0.0);
    assert!((r.p - 2.0 / 70.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_p_matches_enumeration_on_small_integer_samples(
        a in prop::collection::vec(0u8..6, 1..6),
        b in prop::collection::vec(0u8..6, 1..6),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        prop_assert!(r.exact);
        prop_assert!((r.p - enumerated_p(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn large_samples_use_the_normal_approximation() {
    let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..30).map(|i| i as f64 + 10.5).collect();
    let r = mann_whitney_u(&a, &b).unwrap();
    assert!(!r.exact);
    // 190 pairs have a_i - b_j > 0; no ties, so var = na nb (n + 1) / 12
    assert_eq!(r.u, 190.0);
    let z = (450.0 - 190.0 - 0.5) / (30.0f64 * 30.0 * 61.0 / 12.0).sqrt();
    let want = 2.0 * (1.0 - statrs::distribution::ContinuousCDF::cdf(&statrs::distribution::Normal::standard(), z));
    assert!((r.p - want).abs() < 1e-12, "{} vs {want}", r.p);
}

#[test]
fn pearson_closed_forms() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
    assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
    assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    // symmetric parabola over a symmetric range is uncorrelated
    let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
    assert!(pearson(&xs, &sq).unwrap().abs() < 1e-12);
    // hand value: x = (1,2,3), y = (1,3,2): r = 0.5
    assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn error_metrics_by_hand() {
    let p = [1.0, 2.0, 4.0];
    let t = [1.0, 3.0, 1.0];
    assert!((mae(&p, &t).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    assert!((rmse(&p, &t).unwrap() - (10.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!(mae(&p, &t[..2]).is_err());
}
