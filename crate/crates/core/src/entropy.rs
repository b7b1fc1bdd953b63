//! Fuzzy entropy, the SD / jitter baselines, and channel ranking.

use crate::error::{Error, Result};
use crate::par;
use crate::types::{Session, CHANNELS};

/// Exponent applied to template distances inside the fuzzy membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FuzzyPower {
    Fixed(f64),
    /// Raise distances to the series length, the literal reading of the
    /// published formula. Underflows quickly for long series.
    SeriesLength,
}

/// How the tolerance `r` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tolerance {
    Absolute,
    /// `r` times the population standard deviation of the series.
    TimesSd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyConfig {
    pub m: usize,
    pub r: f64,
    pub fuzzy_power: FuzzyPower,
    pub tolerance: Tolerance,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            m: 2,
            r: 0.25,
            fuzzy_power: FuzzyPower::Fixed(2.0),
            tolerance: Tolerance::Absolute,
        }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidArgument("entropy m must be >= 1".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::InvalidArgument(format!("entropy r must be > 0, got {}", self.r)));
        }
        if let FuzzyPower::Fixed(p) = self.fuzzy_power {
            if !(p > 0.0) {
                return Err(Error::InvalidArgument(format!("fuzzy power must be > 0, got {p}")));
            }
        }
        Ok(())
    }
}

/// Mean-removed templates of length `dim`, stored contiguously.
fn templates(series: &[f64], dim: usize) -> Vec<f64> {
    let count = series.len() + 1 - dim;
    let mut out = Vec::with_capacity(count * dim);
    for w in series.windows(dim) {
        let mean = w.iter().sum::<f64>() / dim as f64;
        out.extend(w.iter().map(|v| v - mean));
    }
    out
}

/// Average fuzzy similarity over all ordered template pairs `i != j`.
fn phi(series: &[f64], dim: usize, r: f64, power: f64) -> f64 {
    let t = templates(series, dim);
    let count = series.len() + 1 - dim;
    let membership = |d: f64| {
        let dp = if power == 2.0 { d * d } else { d.powf(power) };
        (-dp / r).exp()
    };
    let rows = par::map_range(count, |i| {
        let a = &t[i * dim..(i + 1) * dim];
        let mut row = 0.0;
        for j in (i + 1)..count {
            let b = &t[j * dim..(j + 1) * dim];
            let d = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            row += membership(d);
        }
        row
    });
    let total: f64 = rows.iter().sum();
    // each unordered pair stands for (i, j) and (j, i)
    2.0 * total / (count as f64 * (count - 1) as f64)
}

/// `ln phi^m - ln phi^(m+1)` with exponential fuzzy membership.
pub fn fuzzy_entropy(series: &[f64], cfg: &EntropyConfig) -> Result<f64> {
    cfg.validate()?;
    let n = series.len();
    if n < cfg.m + 2 {
        return Err(Error::InvalidArgument(format!(
            "fuzzy entropy needs at least m + 2 = {} samples, got {n}",
            cfg.m + 2
        )));
    }
    let r = match cfg.tolerance {
        Tolerance::Absolute => cfg.r,
        Tolerance::TimesSd => cfg.r * sd_criterion(series)?,
    };
    if !(r > 0.0) || sd_criterion(series)? == 0.0 {
        return Ok(0.0);
    }
    let power = match cfg.fuzzy_power {
        FuzzyPower::Fixed(p) => p,
        FuzzyPower::SeriesLength => n as f64,
    };
    let pm = phi(series, cfg.m, r, power);
    let pm1 = phi(series, cfg.m + 1, r, power);
    if !(pm > 0.0 && pm1 > 0.0) {
        return Err(Error::Numeric(format!(
            "fuzzy similarity underflowed (phi^m = {pm}, phi^(m+1) = {pm1})"
        )));
    }
    Ok(pm.ln() - pm1.ln())
}

/// Population standard deviation.
pub fn sd_criterion(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("standard deviation of an empty series".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    Ok((series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// RMS of the third finite difference divided by `dt^3`.
pub fn jitter_criterion(series: &[f64], dt: f64) -> Result<f64> {
    if series.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "jitter needs at least 4 samples, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let d3: Vec<f64> = series
        .windows(4)
        .map(|w| w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0])
        .collect();
    let ms = d3.iter().map(|v| v * v).sum::<f64>() / d3.len() as f64;
    Ok(ms.sqrt() / dt.powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    None,
    Fuzzy,
    Sd,
    Jitter,
}

impl Criterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::None => "none",
            Criterion::Fuzzy => "fuzzy",
            Criterion::Sd => "sd",
            Criterion::Jitter => "jitter",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Criterion::None),
            "fuzzy" => Ok(Criterion::Fuzzy),
            "sd" => Ok(Criterion::Sd),
            "jitter" => Ok(Criterion::Jitter),
            other => Err(Error::InvalidArgument(format!("unknown ranking criterion '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    pub criterion: Criterion,
    pub entropy: EntropyConfig,
    /// Sort by decreasing criterion value instead.
    pub descending: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            criterion: Criterion::Fuzzy,
            entropy: EntropyConfig::default(),
            descending: false,
        }
    }
}

impl RankOptions {
    pub fn with_criterion(criterion: Criterion) -> Self {
        RankOptions {
            criterion,
            ..Default::default()
        }
    }
}

/// Channel permutation for one placement.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRanking {
    /// Criterion value per physical channel; unranked channels hold 0.
    pub entropies: [f64; CHANNELS],
    /// Physical channel indices in ranked order.
    pub order: Vec<usize>,
    pub criterion: Criterion,
}

impl EntropyRanking {
    /// The first two ranked channels as a set.
    pub fn top2(&self) -> Vec<usize> {
        self.order.iter().take(2).copied().collect()
    }
}

/// Sort `channels` by `values`, ties broken by lower channel index.
pub fn order_by(values: &[f64; CHANNELS], channels: &[usize], descending: bool) -> Vec<usize> {
    let mut order = channels.to_vec();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        let c = if descending { c.reverse() } else { c };
        c.then(a.cmp(&b))
    });
    order
}

fn channel_criterion(series: &[f64], opts: &RankOptions, dt: f64) -> Result<f64> {
    match opts.criterion {
        Criterion::None => Ok(0.0),
        Criterion::Fuzzy => fuzzy_entropy(series, &opts.entropy),
        Criterion::Sd => sd_criterion(series),
        Criterion::Jitter => jitter_criterion(series, dt),
    }
}

/// Rank all six channels. See [`rank_subset`].
pub fn rank_channels(session: &Session, opts: &RankOptions) -> Result<(Session, EntropyRanking)> {
    let all: Vec<usize> = (0..CHANNELS).collect();
    rank_subset(session, opts, &all)
}

/// Rank the listed channels over the whole session. Output channel `i`
/// holds input channel `order[i]`; slots past the ranked channels are zeroed.
/// With `Criterion::None` the listed order is kept.
pub fn rank_subset(
    session: &Session,
    opts: &RankOptions,
    channels: &[usize],
) -> Result<(Session, EntropyRanking)> {
    if channels.is_empty() || channels.iter().any(|&c| c >= CHANNELS) {
        return Err(Error::InvalidArgument(format!("bad channel subset {channels:?}")));
    }
    let dt = 1.0 / session.rate_hz;
    let values = par::map(channels, |&k| channel_criterion(&session.channel(k), opts, dt));
    let mut entropies = [0.0; CHANNELS];
    for (&k, v) in channels.iter().zip(values) {
        entropies[k] = v?;
    }
    let order = match opts.criterion {
        Criterion::None => channels.to_vec(),
        _ => order_by(&entropies, channels, opts.descending),
    };
    let mut ranked = session.clone();
    for (f, src) in ranked.frames.iter_mut().zip(&session.frames) {
        let mut r = [0.0; CHANNELS];
        for (slot, &k) in order.iter().enumerate() {
            r[slot] = src.readings[k];
        }
        f.readings = r;
    }
    Ok((
        ranked,
        EntropyRanking {
            entropies,
            order,
            criterion: opts.criterion,
        },
    ))
}

/// Reorder a session by an existing ranking.
pub fn apply_ranking(session: &Session, ranking: &EntropyRanking) -> Session {
    let mut out = session.clone();
    for (f, src) in out.frames.iter_mut().zip(&session.frames) {
        let mut r = [0.0; CHANNELS];
        for (slot, &k) in ranking.order.iter().enumerate() {
            r[slot] = src.readings[k];
        }
        f.readings = r;
    }
    out
}
