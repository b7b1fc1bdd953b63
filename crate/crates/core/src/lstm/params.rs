use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::types::Window;

/// Offsets of one layer's gate matrix and bias inside the flat weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub hidden: usize,
    /// Row-major `4h x (input + h)`, gate rows ordered i, f, g, o.
    pub w: usize,
    pub b: usize,
}

impl LayerShape {
    pub fn cols(&self) -> usize {
        self.input + self.hidden
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerShape>,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let mut off = 0;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.input_channels } else { h };
            let w = off;
            off += 4 * h * (input + h);
            let b = off;
            off += 4 * h;
            layers.push(LayerShape { input, hidden: h, w, b });
        }
        let out_w = off;
        off += h;
        let out_b = off;
        off += 1;
        Layout {
            layers,
            out_w,
            out_b,
            total: off,
        }
    }
}

/// All weights of the regressor plus its fixed input/output statistics.
///
/// The prediction is `target_mean + target_scale * (out_w . h_T + out_b)`;
/// with the default statistics (0 and 1) the output layer is a plain affine
/// map. Inputs are standardized per channel by `input_mean`/`input_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_var: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

/// Uniform(-1/sqrt(h), 1/sqrt(h)) weights, forget-gate biases at 1.
pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let h = config.hidden;
    let k = 1.0 / (h as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..layout.total).map(|_| rng.random_range(-k..k)).collect();
    for l in &layout.layers {
        for r in 0..4 * h {
            weights[l.b + r] = if (h..2 * h).contains(&r) { 1.0 } else { 0.0 };
        }
    }
    weights[layout.out_b] = 0.0;
    Ok(ModelParams {
        config: *config,
        weights,
        input_mean: vec![0.0; config.input_channels],
        input_var: vec![1.0; config.input_channels],
        target_mean: 0.0,
        target_scale: 1.0,
    })
}

impl ModelParams {
    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn num_trainable(&self) -> usize {
        self.weights.len()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.input_mean.iter().chain(&self.input_var).all(|v| v.is_finite())
            && self.target_mean.is_finite()
            && self.target_scale.is_finite()
    }

    pub fn output_bias(&self) -> f64 {
        self.weights[self.layout().out_b]
    }

    pub fn set_output_bias(&mut self, b: f64) {
        let i = self.layout().out_b;
        self.weights[i] = b;
    }

    /// Learn per-channel input mean/variance and the target mean/spread from
    /// labelled training windows.
    pub fn calibrate(&mut self, train: &[Window]) -> Result<()> {
        let c = self.config.input_channels;
        if train.is_empty() {
            return Err(Error::InvalidArgument("cannot calibrate on zero windows".into()));
        }
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for w in train {
            self.check_window(w)?;
            for t in 0..w.frames() {
                for (k, v) in w.frame(t).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        for k in 0..c {
            let m = sum[k] / n as f64;
            self.input_mean[k] = m;
            self.input_var[k] = (sq[k] / n as f64 - m * m).max(0.0);
        }
        let targets: Vec<f64> = train.iter().filter_map(|w| w.target).collect();
        if !targets.is_empty() {
            let m = targets.iter().sum::<f64>() / targets.len() as f64;
            let sd = (targets.iter().map(|t| (t - m).powi(2)).sum::<f64>() / targets.len() as f64).sqrt();
            self.target_mean = m;
            self.target_scale = if sd > 1e-9 { sd } else { 1.0 };
        }
        Ok(())
    }

    pub(crate) fn check_window(&self, w: &Window) -> Result<()> {
        if w.channels != self.config.input_channels || w.frames() != self.config.window {
            return Err(Error::Shape {
                expected: format!("{}x{} window", self.config.window, self.config.input_channels),
                got: format!("{}x{}", w.frames(), w.channels),
            });
        }
        Ok(())
    }

    /// 1/sqrt(var) per channel; channels with ~zero variance pass through.
    pub(crate) fn input_inv_std(&self) -> Vec<f64> {
        self.input_var
            .iter()
            .map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
            .collect()
    }
}
