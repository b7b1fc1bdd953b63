//! Run configuration: one TOML file with a section per stage, plus the
//! content hashes that tie artifacts to the settings that produced them.

use std::path::Path;

use dispad_core::entropy::{Criterion, EntropyConfig, FuzzyPower, RankOptions, Tolerance};
use dispad_core::lstm::{ModelConfig, Optimizer};
use dispad_core::pipeline::PipelineConfig;
use dispad_core::sim::{Grid, MotionTemplate, SimSpec, UserProfile};
use dispad_core::smooth::KalmanConfig;
use dispad_core::transfer::TransferConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub eta_step: f64,
    pub beta_step: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub motions: Vec<String>,
    pub user: String,
    /// Multiplies every channel gain of the simulated wearer.
    pub gain_scale: f64,
    /// Added to every channel baseline of the simulated wearer.
    pub baseline_offset: f64,
    pub noise_scale: f64,
    pub chaos_scale: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let u = UserProfile::default();
        SimSection {
            eta_step: 4.0,
            beta_step: 45.0,
            duration_s: 16.0,
            rate_hz: 50.0,
            motions: vec!["bend".into()],
            user: u.id,
            gain_scale: 1.0,
            baseline_offset: 0.0,
            noise_scale: u.noise_scale,
            chaos_scale: u.chaos_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySection {
    pub m: usize,
    pub r: f64,
    /// A number, or "series_length".
    pub fuzzy_power: String,
    /// "absolute" or "times_sd".
    pub tolerance: String,
    /// "fuzzy", "sd", "jitter" or "none".
    pub criterion: String,
    pub descending: bool,
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection {
            m: 2,
            r: 0.25,
            fuzzy_power: "2".into(),
            tolerance: "absolute".into(),
            criterion: "fuzzy".into(),
            descending: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub window: usize,
    pub outlier_z: f64,
    /// Number of channels in use, counted from channel 0.
    pub sensors: usize,
    /// Train / validate / test fractions of the placements.
    pub split: [f64; 3],
    pub velocity_window: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            window: 30,
            outlier_z: 3.0,
            sensors: 6,
            split: [14.0 / 24.0, 2.0 / 24.0, 8.0 / 24.0],
            velocity_window: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub grad_clip: f64,
    pub epochs: usize,
    /// "adam" or "sgd".
    pub optimizer: String,
    pub layer_norm: bool,
    /// Keep every n-th training window.
    pub train_stride: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 1,
            hidden: 16,
            batch_size: 64,
            learning_rate: 0.01,
            lr_decay: 0.9,
            decay_every: 2,
            grad_clip: 5.0,
            epochs: 10,
            optimizer: "adam".into(),
            layer_norm: false,
            train_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub eta_weight: f64,
    pub schedule_m: f64,
    pub multipliers: [f64; 5],
    pub budget: usize,
    pub epoch_switch: usize,
    pub unbiased: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    /// Keep every n-th source window.
    pub source_stride: usize,
    /// Skip source selection and use every source session.
    pub select_all: bool,
}

impl Default for TransferSection {
    fn default() -> Self {
        let t = TransferConfig::default();
        TransferSection {
            eta_weight: t.eta_weight,
            schedule_m: t.schedule_m,
            multipliers: t.multipliers,
            budget: t.budget,
            epoch_switch: t.epoch_switch,
            unbiased: t.unbiased,
            epochs: 10,
            batch_size: t.batch_size,
            learning_rate: 0.004,
            grad_clip: t.grad_clip,
            source_stride: 4,
            select_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanSection {
    pub ratio: f64,
    pub noise_scale: f64,
    pub initial_var: f64,
}

impl Default for KalmanSection {
    fn default() -> Self {
        let k = KalmanConfig::default();
        KalmanSection {
            ratio: k.ratio,
            noise_scale: k.noise_scale,
            initial_var: k.initial_var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimSection,
    pub entropy: EntropySection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub transfer: TransferSection,
    pub kalman: KalmanSection,
}

fn usage(msg: String) -> Failure {
    Failure::Usage(msg)
}

fn hash_json(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    hex::encode(&digest[..8])
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Hash over the settings that determine a simulated dataset.
    pub fn data_hash(&self) -> String {
        hash_json(&serde_json::json!({ "seed": self.seed, "sim": self.sim }))
    }

    /// Hash over the settings that determine a trained model.
    pub fn model_hash(&self) -> String {
        hash_json(&serde_json::json!({
            "data": self.data_hash(),
            "entropy": self.entropy,
            "preprocess": self.preprocess,
            "model": self.model,
        }))
    }

    /// Hash over everything that can affect any artifact.
    pub fn full_hash(&self) -> String {
        hash_json(&serde_json::json!({
            "model": self.model_hash(),
            "transfer": self.transfer,
            "kalman": self.kalman,
        }))
    }

    pub fn grid(&self) -> Grid {
        Grid { eta_step: self.sim.eta_step, beta_step: self.sim.beta_step }
    }

    pub fn sim_spec(&self) -> SimSpec {
        SimSpec {
            duration_s: self.sim.duration_s,
            rate_hz: self.sim.rate_hz,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn templates(&self) -> Result<Vec<MotionTemplate>, Failure> {
        if self.sim.motions.is_empty() {
            return Err(usage("sim.motions is empty".into()));
        }
        self.sim
            .motions
            .iter()
            .map(|m| MotionTemplate::by_name(m).map_err(|e| usage(e.to_string())))
            .collect()
    }

    pub fn user(&self) -> UserProfile {
        let base = UserProfile {
            noise_scale: self.sim.noise_scale,
            chaos_scale: self.sim.chaos_scale,
            ..UserProfile::default()
        };
        base.perturbed(self.sim.user.clone(), self.sim.gain_scale, self.sim.baseline_offset, base.seed)
    }

    pub fn entropy_config(&self) -> Result<EntropyConfig, Failure> {
        let e = &self.entropy;
        let fuzzy_power = match e.fuzzy_power.as_str() {
            "series_length" => FuzzyPower::SeriesLength,
            p => FuzzyPower::Fixed(p.parse().map_err(|_| usage(format!("bad entropy.fuzzy_power '{p}'")))?),
        };
        let tolerance = match e.tolerance.as_str() {
            "absolute" => Tolerance::Absolute,
            "times_sd" => Tolerance::TimesSd,
            t => return Err(usage(format!("bad entropy.tolerance '{t}'"))),
        };
        let cfg = EntropyConfig { m: e.m, r: e.r, fuzzy_power, tolerance };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, Failure> {
        let criterion: Criterion = self.entropy.criterion.parse().map_err(|e: dispad_core::Error| usage(e.to_string()))?;
        let p = &self.preprocess;
        let cfg = PipelineConfig {
            window: p.window,
            outlier_z: p.outlier_z,
            rank: RankOptions {
                criterion,
                entropy: self.entropy_config()?,
                descending: self.entropy.descending,
            },
            channels: (0..p.sensors).collect(),
            velocity_window: p.velocity_window,
        };
        if !(1..=6).contains(&p.sensors) {
            return Err(usage(format!("preprocess.sensors must be 1..=6, got {}", p.sensors)));
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig, Failure> {
        let m = &self.model;
        let optimizer: Optimizer = m.optimizer.parse().map_err(|e: dispad_core::Error| usage(e.to_string()))?;
        let cfg = ModelConfig {
            layers: m.layers,
            hidden: m.hidden,
            window: self.preprocess.window,
            input_channels: self.preprocess.sensors,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            lr_decay: m.lr_decay,
            decay_every: m.decay_every,
            grad_clip: m.grad_clip,
            epochs: m.epochs,
            seed: self.seed,
            optimizer,
            layer_norm: m.layer_norm,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        if m.train_stride == 0 {
            return Err(usage("model.train_stride must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn transfer_config(&self) -> Result<TransferConfig, Failure> {
        let t = &self.transfer;
        let cfg = TransferConfig {
            eta_weight: t.eta_weight,
            schedule_m: t.schedule_m,
            multipliers: t.multipliers,
            budget: t.budget,
            epoch_switch: t.epoch_switch,
            unbiased: t.unbiased,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            grad_clip: t.grad_clip,
            optimizer: self.model_config()?.optimizer,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        if t.source_stride == 0 {
            return Err(usage("transfer.source_stride must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn kalman(&self) -> KalmanConfig {
        KalmanConfig {
            ratio: self.kalman.ratio,
            dt: 1.0 / self.sim.rate_hz,
            noise_scale: self.kalman.noise_scale,
            initial_var: self.kalman.initial_var,
        }
    }
}
