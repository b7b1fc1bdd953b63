//! Tracking-error metrics and the statistics used to compare runs.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::Placement;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: format!("{} values", a.len()),
            got: format!("{} values", b.len()),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    Ok(())
}

/// Mean absolute error, degrees.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok((pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// Angular speed in deg/ms: total absolute angle change over each run of
/// `window` frames divided by the run's duration. Element `j` covers
/// frames `j..j + window`.
pub fn velocity(truth: &[f64], rate_hz: f64, window: usize) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(Error::InvalidArgument(format!("velocity window must be >= 2 frames, got {window}")));
    }
    if !(rate_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be > 0, got {rate_hz}")));
    }
    if truth.len() < window {
        return Ok(Vec::new());
    }
    let span_ms = (window - 1) as f64 * 1000.0 / rate_hz;
    let steps: Vec<f64> = truth.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(steps
        .windows(window - 1)
        .map(|s| s.iter().sum::<f64>() / span_ms)
        .collect())
}

/// Per-frame speed aligned to `truth`: frame `i` uses the run ending at `i`,
/// and the first `window - 1` frames reuse the first run.
pub fn velocity_per_frame(truth: &[f64], rate_hz: f64, window: usize) -> Result<Vec<f64>> {
    let v = velocity(truth, rate_hz, window)?;
    if v.is_empty() {
        return Ok(vec![0.0; truth.len()]);
    }
    let mut out = vec![v[0]; window - 1];
    out.extend(v);
    Ok(out)
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`, plus the tie group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + j) as f64;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

// Exact enumeration is used below this sample size, when affordable.
const EXACT_BELOW: usize = 8;
const EXACT_BUDGET: u128 = 400_000_000;

/// Mann-Whitney U with midranks for ties.
///
/// When the smaller sample has fewer than 8 values the two-sided p-value is
/// the exact permutation probability, counted by dynamic programming over
/// rank sums. Otherwise (or if that count would be too expensive) it uses
/// the tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Mann-Whitney U needs two non-empty samples".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let mean_u = (na * nb) as f64 / 2.0;

    let k = na.min(nb);
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable_by(|x, y| y.cmp(x));
        d[..k].iter().sum()
    };
    let cost = n as u128 * k as u128 * (max_sum as u128 + 1);
    if k < EXACT_BELOW && cost <= EXACT_BUDGET {
        let p = exact_p(&doubled, na, nb, ra);
        return Ok(MannWhitney { u, p, exact: true });
    }

    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1)) as f64;
    let var = (na * nb) as f64 / 12.0 * ((n + 1) as f64 - tie_term);
    if !(var > 0.0) {
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let z = ((u - mean_u).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(MannWhitney { u, p, exact: false })
}

/// P(|R - E R| >= |R_obs - E R|) under random assignment of the pooled
/// doubled ranks to a sample of size `na`.
fn exact_p(doubled: &[usize], na: usize, nb: usize, ra_obs: f64) -> f64 {
    // Count subsets of the smaller size; the complement's distribution gives
    // the same two-sided tail.
    let n = na + nb;
    let k = na.min(nb);
    let total: usize = doubled.iter().sum();
    let max_sum: usize = {
        let mut d = doubled.to_vec();
        d.sort_unstable_by(|x, y| y.cmp(x));
        d[..k].iter().sum()
    };
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0u128; max_sum + 1]; k + 1];
    ways[0][0] = 1;
    for &d in doubled {
        for j in (1..=k).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            if d > max_sum {
                continue;
            }
            for s in (d..=max_sum).rev() {
                if prev[s - d] != 0 {
                    cur[s] += prev[s - d];
                }
            }
        }
    }
    // observed doubled sum for the counted side
    let obs2 = if k == na {
        (2.0 * ra_obs).round() as i128
    } else {
        total as i128 - (2.0 * ra_obs).round() as i128
    };
    // E[2R] = k (n + 1)
    let mean2 = (k * (n + 1)) as i128;
    let dev = (obs2 - mean2).abs();
    let (mut tail, mut all) = (0u128, 0u128);
    for (s, &w) in ways[k].iter().enumerate() {
        if w == 0 {
            continue;
        }
        all += w;
        if (s as i128 - mean2).abs() >= dev {
            tail += w;
        }
    }
    tail as f64 / all as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    /// Zero when `count` is zero.
    pub mae: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementError {
    pub placement: Placement,
    pub mae: f64,
    pub count: usize,
}

/// Aligned predictions for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEval {
    pub placement: Placement,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    /// Truth speed per sample, deg/ms.
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub overall_mae: f64,
    pub samples: usize,
    pub per_placement: Vec<PlacementError>,
    pub angle_bins: Vec<Bin>,
    pub velocity_bins: Vec<Bin>,
}

pub const ANGLE_BIN_DEG: f64 = 10.0;
pub const ANGLE_LO_DEG: f64 = 30.0;
pub const ANGLE_HI_DEG: f64 = 180.0;
pub const VELOCITY_BIN: f64 = 0.1;

fn finish(sum: &[f64], count: &[usize], edges: impl Fn(usize) -> (f64, f64)) -> Vec<Bin> {
    sum.iter()
        .zip(count)
        .enumerate()
        .map(|(i, (s, &c))| {
            let (lo, hi) = edges(i);
            Bin {
                lo,
                hi,
                mae: if c > 0 { s / c as f64 } else { 0.0 },
                count: c,
            }
        })
        .collect()
}

impl ErrorReport {
    /// Aggregate errors. Angles outside [30, 180] fall into the edge bins;
    /// velocity bins extend to cover the fastest sample.
    pub fn build(series: &[SeriesEval]) -> Result<Self> {
        let samples: usize = series.iter().map(|s| s.pred.len()).sum();
        if samples == 0 {
            return Err(Error::InvalidArgument("no samples to report on".into()));
        }
        for s in series {
            check_pair(&s.pred, &s.truth).or_else(|e| if s.pred.is_empty() && s.truth.is_empty() { Ok(()) } else { Err(e) })?;
            if s.velocity.len() != s.truth.len() {
                return Err(Error::Shape {
                    expected: format!("{} velocities", s.truth.len()),
                    got: format!("{}", s.velocity.len()),
                });
            }
        }
        let n_angle = ((ANGLE_HI_DEG - ANGLE_LO_DEG) / ANGLE_BIN_DEG).round() as usize;
        let vmax = series
            .iter()
            .flat_map(|s| s.velocity.iter().copied())
            .fold(0.0, f64::max);
        let n_vel = ((vmax / VELOCITY_BIN).floor() as usize + 1).max(1);
        let (mut a_sum, mut a_cnt) = (vec![0.0; n_angle], vec![0usize; n_angle]);
        let (mut v_sum, mut v_cnt) = (vec![0.0; n_vel], vec![0usize; n_vel]);
        let mut by_placement: std::collections::BTreeMap<Placement, (f64, usize)> = Default::default();
        let mut total = 0.0;
        for s in series {
            for ((p, t), v) in s.pred.iter().zip(&s.truth).zip(&s.velocity) {
                let e = (p - t).abs();
                total += e;
                let ai = (((t - ANGLE_LO_DEG) / ANGLE_BIN_DEG).floor().max(0.0) as usize).min(n_angle - 1);
                a_sum[ai] += e;
                a_cnt[ai] += 1;
                let vi = ((v.max(0.0) / VELOCITY_BIN).floor() as usize).min(n_vel - 1);
                v_sum[vi] += e;
                v_cnt[vi] += 1;
                let entry = by_placement.entry(s.placement).or_insert((0.0, 0));
                entry.0 += e;
                entry.1 += 1;
            }
        }
        Ok(ErrorReport {
            overall_mae: total / samples as f64,
            samples,
            per_placement: by_placement
                .into_iter()
                .filter(|(_, (_, c))| *c > 0)
                .map(|(placement, (s, c))| PlacementError {
                    placement,
                    mae: s / c as f64,
                    count: c,
                })
                .collect(),
            angle_bins: finish(&a_sum, &a_cnt, |i| {
                let lo = ANGLE_LO_DEG + i as f64 * ANGLE_BIN_DEG;
                (lo, lo + ANGLE_BIN_DEG)
            }),
            velocity_bins: finish(&v_sum, &v_cnt, |i| (i as f64 * VELOCITY_BIN, (i + 1) as f64 * VELOCITY_BIN)),
        })
    }
}
