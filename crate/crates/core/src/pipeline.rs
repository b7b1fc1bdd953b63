//! Session-level glue: normalize, repair outliers, rank channels, window,
//! predict and score.

use crate::entropy::{rank_subset, EntropyRanking, RankOptions};
use crate::error::{Error, Result};
use crate::eval::{velocity_per_frame, ErrorReport, SeriesEval};
use crate::lstm::{forward_batch, ModelParams};
use crate::par;
use crate::preprocess::{make_windows, remove_outliers, NormStats};
use crate::smooth::{smooth_series, KalmanConfig};
use crate::types::{Session, Window, CHANNELS};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window: usize,
    pub outlier_z: f64,
    pub rank: RankOptions,
    /// Physical channels in use; the rest are ignored.
    pub channels: Vec<usize>,
    /// Frames used for the truth-speed estimate in error reports.
    pub velocity_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 30,
            outlier_z: 3.0,
            rank: RankOptions::default(),
            channels: (0..CHANNELS).collect(),
            velocity_window: 2,
        }
    }
}

impl PipelineConfig {
    /// Keep only the first `n` physical channels.
    pub fn with_sensors(mut self, n: usize) -> Result<Self> {
        if !(1..=CHANNELS).contains(&n) {
            return Err(Error::InvalidArgument(format!("sensor count must be 1..=6, got {n}")));
        }
        self.channels = (0..n).collect();
        Ok(self)
    }

    pub fn active(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        let mut seen = [false; CHANNELS];
        for &c in &self.channels {
            if c >= CHANNELS || seen[c] {
                return Err(Error::InvalidArgument(format!("bad channel list {:?}", self.channels)));
            }
            seen[c] = true;
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidArgument("no active channels".into()));
        }
        self.rank.entropy.validate()
    }
}

/// A session after normalization, outlier repair and channel ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub session: Session,
    pub ranking: EntropyRanking,
    pub stats: NormStats,
}

/// Normalize with the session's own range.
pub fn prepare(session: &Session, cfg: &PipelineConfig) -> Result<Prepared> {
    prepare_with_stats(session, &NormStats::from_session(session), cfg)
}

/// Normalize with stored statistics, e.g. those of the training session
/// recorded at the same placement.
pub fn prepare_with_stats(session: &Session, stats: &NormStats, cfg: &PipelineConfig) -> Result<Prepared> {
    let normalized = stats.apply(session);
    let cleaned = remove_outliers(&normalized, cfg.outlier_z)?;
    let (session, ranking) = rank_subset(&cleaned, &cfg.rank, &cfg.channels)?;
    Ok(Prepared { session, ranking, stats: *stats })
}

pub fn prepare_all(sessions: &[&Session], cfg: &PipelineConfig) -> Result<Vec<Prepared>> {
    par::map(sessions, |s| prepare(s, cfg)).into_iter().collect()
}

/// Windows of a prepared session, keeping every `stride`-th one.
pub fn windows(prepared: &Prepared, cfg: &PipelineConfig, stride: usize) -> Vec<Window> {
    make_windows(&prepared.session, cfg.window, cfg.active())
        .into_iter()
        .step_by(stride.max(1))
        .collect()
}

pub fn windows_all(prepared: &[Prepared], cfg: &PipelineConfig, stride: usize) -> Vec<Window> {
    prepared.iter().flat_map(|p| windows(p, cfg, stride)).collect()
}

/// One estimate per frame; the first `window - 1` frames have none.
pub fn predict_prepared(params: &ModelParams, prepared: &Prepared, cfg: &PipelineConfig) -> Result<Vec<Option<f64>>> {
    let ws = make_windows(&prepared.session, cfg.window, cfg.active());
    let pred = forward_batch(params, &ws)?;
    let lead = prepared.session.len().min(cfg.window - 1);
    let mut out = vec![None; lead];
    out.extend(pred.into_iter().map(Some));
    Ok(out)
}

/// Predict and optionally smooth the defined part of the series.
pub fn predict_session(
    params: &ModelParams,
    prepared: &Prepared,
    cfg: &PipelineConfig,
    smooth: Option<&KalmanConfig>,
) -> Result<Vec<Option<f64>>> {
    let raw = predict_prepared(params, prepared, cfg)?;
    let Some(k) = smooth else { return Ok(raw) };
    let lead = raw.iter().take_while(|v| v.is_none()).count();
    let defined: Vec<f64> = raw[lead..].iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    if defined.is_empty() {
        return Ok(raw);
    }
    let smoothed = smooth_series(&defined, k)?;
    let mut out = vec![None; lead];
    out.extend(smoothed.into_iter().map(Some));
    Ok(out)
}

/// Align predictions with truth for scoring.
pub fn series_eval(
    params: &ModelParams,
    prepared: &Prepared,
    cfg: &PipelineConfig,
    smooth: Option<&KalmanConfig>,
) -> Result<SeriesEval> {
    let s = &prepared.session;
    let truth = s
        .truth
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("session at {} has no ground truth", s.placement)))?;
    let pred = predict_session(params, prepared, cfg, smooth)?;
    let speed = velocity_per_frame(truth, s.rate_hz, cfg.velocity_window)?;
    let mut out = SeriesEval { placement: s.placement, pred: vec![], truth: vec![], velocity: vec![] };
    for ((p, t), v) in pred.iter().zip(truth).zip(&speed) {
        if let Some(p) = p {
            out.pred.push(*p);
            out.truth.push(*t);
            out.velocity.push(*v);
        }
    }
    Ok(out)
}

pub fn evaluate(
    params: &ModelParams,
    prepared: &[Prepared],
    cfg: &PipelineConfig,
    smooth: Option<&KalmanConfig>,
) -> Result<ErrorReport> {
    let series: Vec<SeriesEval> = prepared
        .iter()
        .map(|p| series_eval(params, p, cfg, smooth))
        .collect::<Result<_>>()?;
    ErrorReport::build(&series)
}

/// MAE of always answering `mean`.
pub fn constant_mae(prepared: &[Prepared], cfg: &PipelineConfig, mean: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in prepared {
        let truth = p
            .session
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("session without ground truth".into()))?;
        for t in truth.iter().skip(cfg.window - 1) {
            sum += (t - mean).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no scored frames".into()));
    }
    Ok(sum / n as f64)
}
