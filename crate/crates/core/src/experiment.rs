//! Seeded end-to-end experiments on simulated data: generalization to
//! unseen placements, and adaptation to a new wearer with and without
//! channel ranking.

use std::time::Instant;

use crate::entropy::Criterion;
use crate::error::{Error, Result};
use crate::lstm::{fit, init, ModelConfig, ModelParams, TrainReport};
use crate::pipeline::{
    constant_mae, evaluate, prepare_all, prepare_with_stats, windows_all, PipelineConfig, Prepared,
};
use crate::preprocess::{partition, NormStats};
use crate::sim::{gen_dataset, gen_sessions, Grid, MotionTemplate, SimSpec, UserProfile};
use crate::transfer::{select_source, transfer_fit, DomainBatch, TransferConfig, TransferReport};
use crate::types::{Dataset, Session, Split};

/// Model size used by the desk-scale experiments.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 16,
        epochs: 10,
        batch_size: 64,
        ..Default::default()
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub templates: Vec<MotionTemplate>,
    pub user: UserProfile,
    pub sim: SimSpec,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    /// Placement counts for train/validate/test.
    pub split: [usize; 3],
    /// Keep every n-th training window.
    pub train_stride: usize,
    pub val_stride: usize,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            grid: Grid::desk(),
            templates: vec![MotionTemplate::bend()],
            user: UserProfile::default(),
            sim: SimSpec::default(),
            model: desk_model(),
            pipeline: PipelineConfig::default(),
            split: [14, 2, 8],
            train_stride: 4,
            val_stride: 8,
        }
    }
}

impl Setup {
    fn fractions(&self) -> [f64; 3] {
        let n: usize = self.split.iter().sum();
        self.split.map(|k| k as f64 / n as f64)
    }

    /// Simulate and partition the source dataset.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        let spec = SimSpec { seed, ..self.sim };
        let ds = gen_dataset(&self.grid, &self.templates, std::slice::from_ref(&self.user), &spec)?;
        if ds.sessions.len() != self.split.iter().sum::<usize>() {
            return Err(Error::InvalidArgument(format!(
                "split {:?} does not cover {} placements",
                self.split,
                ds.sessions.len()
            )));
        }
        partition(&ds, self.fractions(), seed)
    }

    /// Train on the train split with early selection on the validate split.
    /// Returns the model and the prepared train + validate sessions.
    pub fn train(&self, ds: &Dataset, seed: u64) -> Result<(ModelParams, TrainReport, Vec<Prepared>)> {
        let cfg = &self.pipeline;
        let tr = prepare_all(&ds.sessions_in(Split::Train), cfg)?;
        let va = prepare_all(&ds.sessions_in(Split::Validate), cfg)?;
        let trw = windows_all(&tr, cfg, self.train_stride);
        let vaw = windows_all(&va, cfg, self.val_stride);
        let mc = ModelConfig {
            input_channels: cfg.active(),
            window: cfg.window,
            seed,
            ..self.model
        };
        let mut p = init(&mc, seed)?;
        p.calibrate(&trw)?;
        let (p, report) = fit(p, &trw, &vaw, &mc)?;
        let mut prepared = tr;
        prepared.extend(va);
        Ok((p, report, prepared))
    }
}

#[derive(Debug, Clone)]
pub struct DisplacementResult {
    /// MAE on fresh recordings at training placements.
    pub seen_mae: f64,
    /// MAE on fresh recordings at held-out placements.
    pub unseen_mae: f64,
    /// MAE of predicting the training mean angle at held-out placements.
    pub baseline_mae: f64,
    pub train: TrainReport,
    pub wall_time_s: f64,
}

/// Train on the train placements, then score new recordings at the seen
/// and the held-out placements.
pub fn displacement(setup: &Setup, seed: u64) -> Result<DisplacementResult> {
    let start = Instant::now();
    let ds = setup.dataset(seed)?;
    let (params, train, _) = setup.train(&ds, seed)?;
    let fresh_spec = SimSpec { seed: seed.wrapping_add(1000), ..setup.sim };
    let fresh = gen_dataset(&setup.grid, &setup.templates, std::slice::from_ref(&setup.user), &fresh_spec)?;
    let train_pl = ds.placements_in(Split::Train);
    let test_pl = ds.placements_in(Split::Test);
    let pick = |pl: &[crate::types::Placement]| -> Vec<&Session> {
        fresh.sessions.iter().filter(|s| pl.contains(&s.placement)).collect()
    };
    let cfg = &setup.pipeline;
    let seen = prepare_all(&pick(&train_pl), cfg)?;
    let unseen = prepare_all(&pick(&test_pl), cfg)?;
    Ok(DisplacementResult {
        seen_mae: evaluate(&params, &seen, cfg, None)?.overall_mae,
        unseen_mae: evaluate(&params, &unseen, cfg, None)?.overall_mae,
        baseline_mae: constant_mae(&unseen, cfg, params.target_mean)?,
        train,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct TransferSetup {
    pub base: Setup,
    /// Gain multiplier and baseline offset of the new wearer.
    pub gain: f64,
    pub offset: f64,
    /// Length of the unlabelled target recording.
    pub target_seconds: f64,
    pub transfer: TransferConfig,
}

impl Default for TransferSetup {
    fn default() -> Self {
        TransferSetup {
            base: Setup {
                split: [18, 2, 4],
                ..Setup::default()
            },
            gain: 1.3,
            offset: 40.0,
            target_seconds: 41.0,
            transfer: TransferConfig {
                epochs: 10,
                learning_rate: 0.004,
                ..TransferConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub criterion: Criterion,
    /// MAE of the source model on the new wearer before adaptation.
    pub frozen_mae: f64,
    pub transferred_mae: f64,
    pub selected: usize,
    pub source_sessions: usize,
    pub target_windows: usize,
    pub report: TransferReport,
}

/// Train a source model ranked by `criterion`, then adapt it to a new
/// wearer at one held-out placement from unlabelled windows only.
///
/// The new wearer's data is normalized with the statistics of the source
/// recording at the same placement, as at deployment time.
pub fn transfer_ablation(setup: &TransferSetup, criterion: Criterion, seed: u64) -> Result<TransferResult> {
    let mut base = setup.base.clone();
    base.pipeline.rank.criterion = criterion;
    let cfg = &base.pipeline;
    let ds = base.dataset(seed)?;
    let (params, _, source) = base.train(&ds, seed)?;

    let placement = ds.placements_in(Split::Test)[0];
    let reference = ds
        .sessions
        .iter()
        .find(|s| s.placement == placement)
        .ok_or_else(|| Error::InvalidArgument(format!("no source recording at {placement}")))?;
    let stats = NormStats::from_session(reference);
    let wearer = base.user.perturbed("new", setup.gain, setup.offset, seed.wrapping_add(77));
    let record = |sim_seed: u64, seconds: f64| -> Result<Session> {
        let spec = SimSpec { seed: sim_seed, duration_s: seconds, ..base.sim };
        Ok(gen_sessions(&[placement], &base.templates, std::slice::from_ref(&wearer), &spec)?.remove(0))
    };
    let target = prepare_with_stats(&record(seed.wrapping_add(500), setup.target_seconds)?, &stats, cfg)?;
    let held_out = prepare_with_stats(&record(seed.wrapping_add(900), base.sim.duration_s)?, &stats, cfg)?;

    let rankings: Vec<_> = source.iter().map(|p| p.ranking.clone()).collect();
    let chosen: Vec<Prepared> = select_source(&rankings, &target.ranking)?
        .into_iter()
        .map(|i| source[i].clone())
        .collect();
    let mut target_windows = windows_all(std::slice::from_ref(&target), cfg, 1);
    target_windows.truncate(setup.transfer.budget);
    let batch = DomainBatch::new(windows_all(&chosen, cfg, base.train_stride), target_windows)?;
    let tc = TransferConfig { seed, ..setup.transfer };
    let (adapted, report) = transfer_fit(&params, &batch, &tc)?;
    let held_out = std::slice::from_ref(&held_out);
    Ok(TransferResult {
        criterion,
        frozen_mae: evaluate(&params, held_out, cfg, None)?.overall_mae,
        transferred_mae: evaluate(&adapted, held_out, cfg, None)?.overall_mae,
        selected: chosen.len(),
        source_sessions: source.len(),
        target_windows: batch.target.len(),
        report,
    })
}
