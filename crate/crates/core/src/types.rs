//! Domain types shared by every stage of the pipeline.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 6;
pub const RAW_MAX: f64 = 1023.0;
pub const ETA_LIMIT_CM: f64 = 4.0;
pub const TRUTH_MAX_DEG: f64 = 190.0;

/// Pad pose on the arm: lateral offset along the arm and rotation about it.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    eta: f64,
    beta: f64,
}

impl Placement {
    /// `eta` in cm, must lie in [-4, 4]. `beta` in degrees, wrapped into [0, 360).
    pub fn new(eta: f64, beta: f64) -> Result<Self> {
        if !eta.is_finite() || !beta.is_finite() {
            return Err(Error::Validation(format!(
                "placement must be finite (eta={eta}, beta={beta})"
            )));
        }
        if eta.abs() > ETA_LIMIT_CM + 1e-9 {
            return Err(Error::Validation(format!(
                "lateral offset {eta} cm outside [-4, 4]"
            )));
        }
        let mut beta = beta.rem_euclid(360.0);
        if beta >= 360.0 {
            beta = 0.0;
        }
        // fold -0.0 so equality and hashing agree with the numeric value
        Ok(Placement {
            eta: eta.clamp(-ETA_LIMIT_CM, ETA_LIMIT_CM) + 0.0,
            beta: beta + 0.0,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl PartialEq for Placement {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Placement {}

impl PartialOrd for Placement {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Placement {
    fn cmp(&self, other: &Self) -> Ordering {
        self.eta
            .total_cmp(&other.eta)
            .then(self.beta.total_cmp(&other.beta))
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(eta={} cm, beta={} deg)", self.eta, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub timestamp_ms: u64,
    pub readings: [f64; CHANNELS],
}

/// One recording at one placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub placement: Placement,
    pub frames: Vec<SensorFrame>,
    /// Ground-truth elbow angle in degrees, one per frame.
    pub truth: Option<Vec<f64>>,
    pub user_id: String,
    pub motion_id: String,
    pub rate_hz: f64,
    pub config_hash: Option<String>,
}

impl Session {
    pub fn new(
        placement: Placement,
        frames: Vec<SensorFrame>,
        truth: Option<Vec<f64>>,
        user_id: impl Into<String>,
        motion_id: impl Into<String>,
        rate_hz: f64,
    ) -> Result<Self> {
        let s = Session {
            placement,
            frames,
            truth,
            user_id: user_id.into(),
            motion_id: motion_id.into(),
            rate_hz,
            config_hash: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Structural invariants: increasing timestamps, aligned truth in range.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::Validation(format!(
                "sampling rate must be positive, got {}",
                self.rate_hz
            )));
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].timestamp_ms <= w[0].timestamp_ms {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at frame {} ({} -> {})",
                    i + 1,
                    w[0].timestamp_ms,
                    w[1].timestamp_ms
                )));
            }
        }
        if let Some(f) = self
            .frames
            .iter()
            .position(|f| f.readings.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Validation(format!("non-finite reading at frame {f}")));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.frames.len() {
                return Err(Error::Validation(format!(
                    "truth has {} values for {} frames",
                    truth.len(),
                    self.frames.len()
                )));
            }
            if let Some((i, v)) = truth
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=TRUTH_MAX_DEG).contains(*v))
            {
                return Err(Error::Validation(format!(
                    "truth angle {v} at frame {i} outside [0, 190] degrees"
                )));
            }
        }
        Ok(())
    }

    /// Structural invariants plus the digitizer range [0, 1023].
    pub fn validate_raw(&self) -> Result<()> {
        self.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            if let Some(v) = f.readings.iter().find(|v| !(0.0..=RAW_MAX).contains(*v)) {
                return Err(Error::Validation(format!(
                    "raw reading {v} at frame {i} outside [0, 1023]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.readings[k]).collect()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.timestamp_ms).collect()
    }

    /// Copy of this session with channel `k` replaced by `values`.
    pub(crate) fn set_channel(&mut self, k: usize, values: &[f64]) {
        for (f, &v) in self.frames.iter_mut().zip(values) {
            f.readings[k] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validate => "validate",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validate" | "val" => Ok(Split::Validate),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// A set of sessions with an optional assignment of placements to splits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sessions: Vec<Session>,
    pub split: BTreeMap<Placement, Split>,
}

impl Dataset {
    pub fn new(sessions: Vec<Session>) -> Self {
        Dataset {
            sessions,
            split: BTreeMap::new(),
        }
    }

    /// Distinct placements in ascending order.
    pub fn placements(&self) -> Vec<Placement> {
        let mut ps: Vec<Placement> = self.sessions.iter().map(|s| s.placement).collect();
        ps.sort();
        ps.dedup();
        ps
    }

    pub fn sessions_in(&self, split: Split) -> Vec<&Session> {
        self.sessions
            .iter()
            .filter(|s| self.split.get(&s.placement) == Some(&split))
            .collect()
    }

    pub fn placements_in(&self, split: Split) -> Vec<Placement> {
        self.split
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// `W` consecutive frames of `channels` normalized values, row-major
/// (frame-major), with the truth angle at the last frame if known.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Vec<f64>,
    pub channels: usize,
    pub target: Option<f64>,
}

impl Window {
    pub fn new(values: Vec<f64>, channels: usize, target: Option<f64>) -> Result<Self> {
        if channels == 0 || values.is_empty() || values.len() % channels != 0 {
            return Err(Error::Shape {
                expected: format!("a non-empty multiple of {channels} values"),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Window {
            values,
            channels,
            target,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }
}
