//! Stacked LSTM regressor: a window of normalized sensor frames in, one
//! elbow angle in degrees out.

mod checkpoint;
mod net;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, parse_checkpoint, render_checkpoint, save_checkpoint, Checkpoint};
pub use net::{
    backward, backward_outputs, clip_gradients, forward, forward_batch, mse_loss, Gradients,
};
pub use params::{init, Layout, ModelParams};
pub use train::{fit, learning_rate_at, Adam, OptimizerState, TrainReport};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub window: usize,
    pub input_channels: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Global L2 norm bound on each mini-batch gradient.
    pub grad_clip: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Standardize each stacked layer's output before the next layer.
    pub layer_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            hidden: 32,
            window: 30,
            input_channels: 6,
            batch_size: 256,
            learning_rate: 0.01,
            lr_decay: 0.9,
            decay_every: 2,
            grad_clip: 5.0,
            epochs: 30,
            seed: 0,
            optimizer: Optimizer::Adam,
            layer_norm: false,
        }
    }
}

impl ModelConfig {
    /// Six layers of 256 units.
    pub fn paper_scale() -> Self {
        ModelConfig {
            layers: 6,
            hidden: 256,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.layers < 1 || self.hidden < 1 || self.window < 1 || self.input_channels < 1 {
            return bad(format!("layers, hidden, window and channels must be >= 1: {self:?}"));
        }
        if self.batch_size < 1 || self.decay_every < 1 {
            return bad("batch size and decay interval must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.grad_clip > 0.0) {
            return bad(format!(
                "learning rate, decay and clip norm must be > 0 (lr={}, decay={}, clip={})",
                self.learning_rate, self.lr_decay, self.grad_clip
            ));
        }
        Ok(())
    }
}
