use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{backward, clip_gradients, forward_batch, mse_loss, Gradients};
use super::params::ModelParams;
use super::{ModelConfig, Optimizer};
use crate::error::{Error, Result};
use crate::types::Window;

/// Step size for a 0-based epoch: decays by `lr_decay` every
/// `decay_every` epochs.
pub fn learning_rate_at(cfg: &ModelConfig, epoch: usize) -> f64 {
    cfg.learning_rate * cfg.lr_decay.powi((epoch / cfg.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam(Adam),
}

impl OptimizerState {
    pub fn new(kind: Optimizer, n: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam(Adam::new(n)),
        }
    }

    pub fn step(&mut self, weights: &mut [f64], grads: &Gradients, lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (w, g) in weights.iter_mut().zip(&grads.0) {
                    *w -= lr * g;
                }
            }
            OptimizerState::Adam(a) => {
                a.t += 1;
                let bc1 = 1.0 - a.beta1.powi(a.t);
                let bc2 = 1.0 - a.beta2.powi(a.t);
                for i in 0..weights.len() {
                    let g = grads.0[i];
                    a.m[i] = a.beta1 * a.m[i] + (1.0 - a.beta1) * g;
                    a.v[i] = a.beta2 * a.v[i] + (1.0 - a.beta2) * g * g;
                    let mh = a.m[i] / bc1;
                    let vh = a.v[i] / bc2;
                    weights[i] -= lr * mh / (vh.sqrt() + a.eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Epoch whose parameters were returned (lowest validation MSE).
    pub best_epoch: usize,
    pub final_epoch: usize,
    pub wall_time_s: f64,
}

impl PartialEq for TrainReport {
    // wall time is excluded: reruns must compare equal
    fn eq(&self, other: &Self) -> bool {
        self.train_mse == other.train_mse
            && self.val_mse == other.val_mse
            && self.learning_rate == other.learning_rate
            && self.best_epoch == other.best_epoch
            && self.final_epoch == other.final_epoch
    }
}

impl TrainReport {
    /// Epochs after `warmup` whose training loss rose over the previous one.
    pub fn loss_increases_after(&self, warmup: usize) -> Vec<usize> {
        (warmup.max(1)..self.train_mse.len())
            .filter(|&e| self.train_mse[e] > self.train_mse[e - 1])
            .collect()
    }
}

fn targets(ws: &[Window]) -> Result<Vec<f64>> {
    ws.iter()
        .map(|w| w.target.ok_or_else(|| Error::InvalidArgument("unlabelled window".into())))
        .collect()
}

/// Mini-batch training on MSE; returns the parameters of the epoch with
/// the lowest validation MSE.
pub fn fit(
    params: ModelParams,
    train: &[Window],
    validate: &[Window],
    config: &ModelConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if train.is_empty() || validate.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if (config.layers, config.hidden, config.input_channels, config.window)
        != (params.config.layers, params.config.hidden, params.config.input_channels, params.config.window)
    {
        return Err(Error::Shape {
            expected: format!("{:?}", params.config),
            got: format!("{config:?}"),
        });
    }
    let val_targets = targets(validate)?;
    targets(train)?;
    let start = Instant::now();
    let mut params = params;
    params.config = *config;
    let mut opt = OptimizerState::new(config.optimizer, params.weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        learning_rate: Vec::new(),
        best_epoch: 0,
        final_epoch: 0,
        wall_time_s: 0.0,
    };
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..config.epochs {
        let lr = learning_rate_at(config, epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<Window> = idx.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = match backward(&params, &batch) {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            opt.step(&mut params.weights, &clip_gradients(grads, config.grad_clip), lr);
        }
        let train_mse = sum / train.len() as f64;
        let val_mse = mse_loss(&forward_batch(&params, validate)?, &val_targets)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_mse });
        }
        log::info!("epoch {epoch}: lr {lr:.5} train mse {train_mse:.4} val mse {val_mse:.4}");
        report.train_mse.push(train_mse);
        report.val_mse.push(val_mse);
        report.learning_rate.push(lr);
        report.final_epoch = epoch;
        if val_mse < best.0 {
            best = (val_mse, params.clone());
            report.best_epoch = epoch;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    let out = if best.0.is_finite() { best.1 } else { params };
    Ok((out, report))
}
