//! Unsupervised adaptation to a new user or motion: source selection by
//! shared low-entropy channels, and fine-tuning on labelled source windows
//! while pulling the distribution of predicted target angles towards the
//! predicted source angles with a multi-kernel MMD penalty.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::entropy::EntropyRanking;
use crate::error::{Error, Result};
use crate::lstm::{backward_outputs, clip_gradients, forward_batch, ModelParams, Optimizer, OptimizerState};
use crate::par;
use crate::types::Window;

pub const KERNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    /// Weight of the MMD term in the total loss.
    pub eta_weight: f64,
    pub schedule_m: f64,
    /// Bandwidths are these multiples of the median pairwise distance.
    pub multipliers: [f64; KERNELS],
    /// Maximum number of target windows.
    pub budget: usize,
    /// First epoch (0-based) on the steeper schedule.
    pub epoch_switch: usize,
    /// Drop the i = j terms from the within-sample kernel sums.
    pub unbiased: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            eta_weight: 5e6,
            schedule_m: 1.01e8,
            multipliers: [0.25, 0.5, 1.0, 2.0, 4.0],
            budget: 2000,
            epoch_switch: 5,
            unbiased: false,
            epochs: 8,
            batch_size: 128,
            learning_rate: 0.002,
            grad_clip: 5.0,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eta_weight > 0.0 && self.eta_weight.is_finite()) {
            return bad(format!("eta_weight must be > 0, got {}", self.eta_weight));
        }
        if !(self.schedule_m > 0.0 && self.schedule_m.is_finite()) {
            return bad(format!("schedule_m must be > 0, got {}", self.schedule_m));
        }
        if self.budget == 0 || self.batch_size == 0 {
            return bad("budget and batch size must be > 0".into());
        }
        if self.multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return bad(format!("bandwidth multipliers must be > 0: {:?}", self.multipliers));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rate and clip norm must be > 0".into());
        }
        Ok(())
    }
}

/// Labelled source windows and unlabelled target windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub source: Vec<Window>,
    pub target: Vec<Window>,
}

impl DomainBatch {
    /// Target labels are dropped here; source windows must all be labelled.
    pub fn new(source: Vec<Window>, target: Vec<Window>) -> Result<Self> {
        if source.iter().any(|w| w.target.is_none()) {
            return Err(Error::InvalidArgument("source windows must be labelled".into()));
        }
        let target = target
            .into_iter()
            .map(|mut w| {
                w.target = None;
                w
            })
            .collect();
        Ok(DomainBatch { source, target })
    }
}

fn kernel_terms(x: f64, y: f64, bandwidths: &[f64]) -> (f64, f64) {
    // mean kernel value and its derivative in x
    let d = x - y;
    let mut k = 0.0;
    let mut dk = 0.0;
    for s in bandwidths {
        let v = (-d * d / (2.0 * s * s)).exp();
        k += v;
        dk -= v * d / (s * s);
    }
    let n = bandwidths.len() as f64;
    (k / n, dk / n)
}

fn check_mmd_args(a: &[f64], b: &[f64], bandwidths: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "mmd needs at least two samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if bandwidths.is_empty() || bandwidths.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("degenerate kernel bandwidths {bandwidths:?}")));
    }
    Ok(())
}

fn self_sum(a: &[f64], bandwidths: &[f64], unbiased: bool) -> f64 {
    let rows = par::map_range(a.len(), |i| {
        let mut s = 0.0;
        for (j, &y) in a.iter().enumerate() {
            if !(unbiased && i == j) {
                s += kernel_terms(a[i], y, bandwidths).0;
            }
        }
        s
    });
    let n = a.len() as f64;
    let denom = if unbiased { n * (n - 1.0) } else { n * n };
    rows.iter().sum::<f64>() / denom
}

fn cross_sum(a: &[f64], b: &[f64], bandwidths: &[f64]) -> f64 {
    let rows = par::map(a, |&x| b.iter().map(|&y| kernel_terms(x, y, bandwidths).0).sum::<f64>());
    rows.iter().sum::<f64>() / (a.len() * b.len()) as f64
}

/// Squared MMD between two scalar samples under the mean of Gaussian
/// kernels `exp(-d^2 / (2 s^2))`. Biased unless `unbiased`.
pub fn mmd_with(a: &[f64], b: &[f64], bandwidths: &[f64], unbiased: bool) -> Result<f64> {
    check_mmd_args(a, b, bandwidths)?;
    Ok(self_sum(a, bandwidths, unbiased) - 2.0 * cross_sum(a, b, bandwidths) + self_sum(b, bandwidths, unbiased))
}

pub fn mmd(a: &[f64], b: &[f64], bandwidths: &[f64]) -> Result<f64> {
    mmd_with(a, b, bandwidths, false)
}

fn self_grad(a: &[f64], bandwidths: &[f64], unbiased: bool) -> Vec<f64> {
    let n = a.len() as f64;
    let denom = if unbiased { n * (n - 1.0) } else { n * n };
    par::map_range(a.len(), |i| {
        let mut g = 0.0;
        for (j, &y) in a.iter().enumerate() {
            if i != j {
                g += kernel_terms(a[i], y, bandwidths).1;
            }
        }
        2.0 * g / denom
    })
}

fn cross_grad(a: &[f64], b: &[f64], bandwidths: &[f64]) -> Vec<f64> {
    let denom = (a.len() * b.len()) as f64;
    par::map(a, |&x| -2.0 * b.iter().map(|&y| kernel_terms(x, y, bandwidths).1).sum::<f64>() / denom)
}

/// Value and per-sample gradients of [`mmd_with`], bandwidths held fixed.
pub fn mmd_grad(a: &[f64], b: &[f64], bandwidths: &[f64], unbiased: bool) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = mmd_with(a, b, bandwidths, unbiased)?;
    let ga: Vec<f64> = self_grad(a, bandwidths, unbiased)
        .into_iter()
        .zip(cross_grad(a, b, bandwidths))
        .map(|(s, c)| s + c)
        .collect();
    let gb: Vec<f64> = self_grad(b, bandwidths, unbiased)
        .into_iter()
        .zip(cross_grad(b, a, bandwidths))
        .map(|(s, c)| s + c)
        .collect();
    Ok((value, ga, gb))
}

/// Median of pairwise absolute distances in the pooled sample, times each
/// multiplier. A zero median (all samples equal) falls back to 1.
pub fn median_bandwidths(a: &[f64], b: &[f64], multipliers: &[f64]) -> Vec<f64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push((pooled[i] - pooled[j]).abs());
        }
    }
    let med = if d.is_empty() {
        0.0
    } else {
        let mid = d.len() / 2;
        *d.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    let base = if med > 0.0 && med.is_finite() { med } else { 1.0 };
    multipliers.iter().map(|m| m * base).collect()
}

/// Weight of the MMD term at global step `i`: `2 / (1 + exp(-10 i / m')) - 1`
/// with `m' = m` before `switch_epoch` and `m / 10` from it on.
pub fn lambda_schedule_with(i: u64, epoch: usize, m: f64, switch_epoch: usize) -> f64 {
    let scale = if epoch < switch_epoch { m } else { m / 10.0 };
    let x = 10.0 * i as f64 / scale;
    // tanh(x / 2) == 2 / (1 + e^-x) - 1 without the cancellation near 0
    (x / 2.0).tanh()
}

pub fn lambda_schedule(i: u64, epoch: usize, m: f64) -> f64 {
    lambda_schedule_with(i, epoch, m, 5)
}

pub fn total_loss(mse: f64, mmd: f64, eta_weight: f64, lambda: f64) -> f64 {
    mse + eta_weight * lambda * mmd
}

/// Indices of source rankings whose two lowest-criterion channels share at
/// least one channel with the target's.
pub fn select_source(source: &[EntropyRanking], target: &EntropyRanking) -> Result<Vec<usize>> {
    let t = target.top2();
    let picked: Vec<usize> = source
        .iter()
        .enumerate()
        .filter(|(_, r)| r.top2().iter().any(|c| t.contains(c)))
        .map(|(i, _)| i)
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub lambda: f64,
    pub mse: f64,
    pub mmd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferReport {
    pub steps: Vec<StepRecord>,
}

impl TransferReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,epoch,lambda,mse,mmd,total\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.iteration, r.epoch, r.lambda, r.mse, r.mmd, r.total);
        }
        s
    }

    /// Mean source MSE over the last epoch.
    pub fn final_mse(&self) -> Option<f64> {
        let last = self.steps.last()?.epoch;
        let xs: Vec<f64> = self.steps.iter().filter(|r| r.epoch == last).map(|r| r.mse).collect();
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn source_targets(ws: &[Window]) -> Result<Vec<f64>> {
    ws.iter()
        .map(|w| w.target.ok_or_else(|| Error::InvalidArgument("source windows must be labelled".into())))
        .collect()
}

/// Minimize `mse(source) + eta_weight * lambda_i * mmd(pred_source, pred_target)`.
pub fn transfer_fit(
    params: &ModelParams,
    batch: &DomainBatch,
    config: &TransferConfig,
) -> Result<(ModelParams, TransferReport)> {
    run(params, batch, config, true)
}

/// The same loop with the MMD term removed; the control for [`transfer_fit`].
pub fn fine_tune(params: &ModelParams, source: &[Window], config: &TransferConfig) -> Result<(ModelParams, TransferReport)> {
    let batch = DomainBatch { source: source.to_vec(), target: Vec::new() };
    run(params, &batch, config, false)
}

fn run(
    params: &ModelParams,
    batch: &DomainBatch,
    config: &TransferConfig,
    adapt: bool,
) -> Result<(ModelParams, TransferReport)> {
    config.validate()?;
    if batch.source.is_empty() {
        return Err(Error::EmptySelection);
    }
    let ys = source_targets(&batch.source)?;
    if adapt {
        if batch.target.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "transfer needs at least 2 target windows, got {}",
                batch.target.len()
            )));
        }
        if batch.target.len() > config.budget {
            return Err(Error::InvalidArgument(format!(
                "{} target windows exceed the budget of {}",
                batch.target.len(),
                config.budget
            )));
        }
        if batch.target.iter().any(|w| w.target.is_some()) {
            return Err(Error::InvalidArgument("target windows must be unlabelled".into()));
        }
    }
    let mut params = params.clone();
    let mut opt = OptimizerState::new(config.optimizer, params.weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut src_order: Vec<usize> = (0..batch.source.len()).collect();
    let mut tgt_order: Vec<usize> = (0..batch.target.len()).collect();
    let bs = config.batch_size.min(batch.source.len()).max(2);
    let bt = config.batch_size.min(batch.target.len());
    let mut tgt_pos = tgt_order.len();
    let mut report = TransferReport::default();
    let mut iteration: u64 = 0;
    for epoch in 0..config.epochs {
        src_order.shuffle(&mut rng);
        for idx in src_order.chunks(bs) {
            let mut windows: Vec<Window> = idx.iter().map(|&i| batch.source[i].clone()).collect();
            let y: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
            let pred = forward_batch(&params, &windows)?;
            let n = pred.len() as f64;
            let mse = pred.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
            let mut grads: Vec<f64> = pred.iter().zip(&y).map(|(p, t)| 2.0 * (p - t) / n).collect();
            let lambda = lambda_schedule_with(iteration, epoch, config.schedule_m, config.epoch_switch);
            let mut mmd_value = 0.0;
            if adapt && pred.len() >= 2 {
                if tgt_pos + bt > tgt_order.len() {
                    tgt_order.shuffle(&mut rng);
                    tgt_pos = 0;
                }
                let tw: Vec<Window> = tgt_order[tgt_pos..tgt_pos + bt]
                    .iter()
                    .map(|&i| batch.target[i].clone())
                    .collect();
                tgt_pos += bt;
                let tpred = forward_batch(&params, &tw)?;
                let bw = median_bandwidths(&pred, &tpred, &config.multipliers);
                let (v, ga, gb) = mmd_grad(&pred, &tpred, &bw, config.unbiased)?;
                mmd_value = v;
                let scale = config.eta_weight * lambda;
                for (g, d) in grads.iter_mut().zip(&ga) {
                    *g += scale * d;
                }
                grads.extend(gb.iter().map(|d| scale * d));
                windows.extend(tw);
            }
            let total = total_loss(mse, mmd_value, config.eta_weight, lambda);
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, loss: total });
            }
            let g = backward_outputs(&params, &windows, &grads)?;
            if !g.is_finite() {
                return Err(Error::Diverged { epoch, loss: total });
            }
            opt.step(&mut params.weights, &clip_gradients(g, config.grad_clip), config.learning_rate);
            report.steps.push(StepRecord { iteration, epoch, lambda, mse, mmd: mmd_value, total });
            iteration += 1;
        }
        log::info!(
            "transfer epoch {epoch}: mse {:.4}",
            report.final_mse().unwrap_or(f64::NAN)
        );
    }
    if !params.all_finite() {
        return Err(Error::Diverged { epoch: config.epochs, loss: f64::NAN });
    }
    Ok((params, report))
}
