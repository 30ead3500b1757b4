//! The training recipe: Adam with per-epoch validation-ICC model selection,
//! then cyclic-learning-rate SGD whose end-of-cycle weights are averaged.

mod eval;
mod log;

pub use eval::{
    evaluate_volumes, icc_per_measurement, mean_icc, normalized_mse, predict, stack_batch, SplitEvaluation,
};
pub use log::{read_log, LogRow, LogWriter, Phase, LOG_HEADER};

use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::Measurement;
use crate::metrics::MetricsError;
use crate::nn::{ModelState, NnError};
use crate::optim::{sgd_step, AdamConfig, AdamState, CyclicSchedule, OptimError, SelectionState, SwaAccumulator};
use crate::phantom::{augment, AugmentConfig, Dataset, PhantomError, Scaler, Split, Volume3D};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite training loss in {phase:?} phase at step {step} (epoch {epoch})")]
    NonFiniteLoss { phase: Phase, epoch: usize, step: usize },
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("model predicts {model} measurements but the dataset has {data}")]
    MeasurementCount { model: usize, data: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub adam_epochs: usize,
    /// Validate every this many Adam epochs (the last epoch always is).
    pub eval_interval: usize,
    pub swa_cycles: usize,
    pub swa_epochs_per_cycle: usize,
    pub swa_lr_max: f64,
    pub swa_lr_min: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            adam: AdamConfig::default(),
            adam_epochs: 60,
            eval_interval: 1,
            swa_cycles: 5,
            swa_epochs_per_cycle: 4,
            swa_lr_max: 1e-2,
            swa_lr_min: 1e-6,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        if self.swa_epochs_per_cycle == 0 {
            return bad("swa_epochs_per_cycle must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("adam lr must be positive");
        }
        Ok(())
    }
}

/// A scan with its target in physical and normalized units.
#[derive(Clone, Debug)]
pub struct Sample {
    pub volume: Volume3D,
    pub target: Vec<f64>,
    pub normalized: Vec<f32>,
}

/// Training and validation samples, normalized by a scaler fitted on the
/// training split.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub measurements: Vec<Measurement>,
    pub scaler: Scaler,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, TrainError> {
        let scaler = ds.manifest.fit_scaler()?;
        let take = |split: Split| -> Result<Vec<Sample>, TrainError> {
            let out: Vec<Sample> = ds
                .manifest
                .rows_in(split)
                .map(|(i, r)| Sample {
                    volume: ds.volumes[i].clone(),
                    target: r.targets.clone(),
                    normalized: scaler.apply(&r.targets).into_iter().map(|v| v as f32).collect(),
                })
                .collect();
            if out.is_empty() {
                return Err(TrainError::EmptySplit(split));
            }
            Ok(out)
        };
        Ok(Self {
            measurements: ds.manifest.measurements.clone(),
            train: take(Split::Train)?,
            val: take(Split::Validation)?,
            scaler,
        })
    }

    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.train.len().div_ceil(batch_size)
    }
}

/// Ordered record of what the trainer did, for recipe-conformance checks.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    AdamEpoch { epoch: usize },
    Validated { epoch: usize, mean_icc: f64 },
    NewBest { epoch: usize, mean_icc: f64 },
    RestoredBest { epoch: Option<usize> },
    SwaCycleStart { cycle: usize },
    Snapshot { cycle: usize, step: usize, lr: f64 },
    Averaged { snapshots: usize },
}

/// Hooks for logging and checkpointing. All methods default to no-ops.
pub trait TrainObserver {
    fn on_step(&mut self, _row: &LogRow) {}
    fn on_event(&mut self, _event: &TraceEvent) {}
    fn on_best(&mut self, _epoch: usize, _model: &ModelState) {}
    fn on_snapshot(&mut self, _cycle: usize, _model: &ModelState) {}
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The weight-averaged model, or the best Adam model if no SWA ran.
    pub model: ModelState,
    pub best_epoch: Option<usize>,
    pub best_val_icc: Option<f64>,
    pub trace: Vec<TraceEvent>,
}

/// Owns the model and all optimizer state. Cloning forks a run: both
/// copies continue identically from the same point given the same calls.
#[derive(Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    data: Arc<TrainData>,
    model: ModelState,
    adam: AdamState,
    rng: ChaCha8Rng,
    selection: SelectionState<ModelState>,
    epoch: usize,
    step: usize,
    trace: Vec<TraceEvent>,
    started: Instant,
}

impl Trainer {
    pub fn new(model: ModelState, data: Arc<TrainData>, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let m = model.spec().measurements;
        if m != data.measurements.len() {
            return Err(TrainError::MeasurementCount {
                model: m,
                data: data.measurements.len(),
            });
        }
        if data.val.len() < 3 {
            return Err(TrainError::Config(format!(
                "validation split has {} scans; ICC needs at least 3",
                data.val.len()
            )));
        }
        Ok(Self {
            adam: AdamState::new(cfg.adam),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            data,
            model,
            selection: SelectionState::new(),
            epoch: 0,
            step: 0,
            trace: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn data(&self) -> &TrainData {
        &self.data
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.selection.epoch_of_best()
    }

    pub fn best_model(&self) -> Option<&ModelState> {
        self.selection.best()
    }

    pub fn swa_schedule(&self) -> Result<CyclicSchedule, TrainError> {
        Ok(CyclicSchedule::from_epochs(
            self.cfg.swa_lr_max,
            self.cfg.swa_lr_min,
            self.cfg.swa_epochs_per_cycle,
            self.data.train.len(),
            self.cfg.batch_size,
            self.cfg.swa_cycles,
        )?)
    }

    fn emit(&mut self, obs: &mut dyn TrainObserver, ev: TraceEvent) {
        obs.on_event(&ev);
        self.trace.push(ev);
    }

    /// Mean ICC over all measurements on the validation split.
    pub fn validate(&self) -> Result<f64, TrainError> {
        let vols: Vec<&Volume3D> = self.data.val.iter().map(|s| &s.volume).collect();
        let preds = predict(&self.model, &vols, self.cfg.batch_size)?;
        let refs: Vec<Vec<f64>> = self
            .data
            .val
            .iter()
            .map(|s| s.normalized.iter().map(|&v| v as f64).collect())
            .collect();
        Ok(mean_icc(&icc_per_measurement(&refs, &preds)?))
    }

    fn shuffled_batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.cfg.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Loss and gradients on one augmented batch.
    fn loss_and_grads(&mut self, batch: &[usize], phase: Phase) -> Result<(f64, IndexMap<String, Tensor<f32>>), TrainError> {
        let data = Arc::clone(&self.data);
        let augmented: Vec<Volume3D> = batch
            .iter()
            .map(|&i| augment(&data.train[i].volume, &self.cfg.augment, &mut self.rng))
            .collect();
        let m = data.measurements.len();
        let mut target = Vec::with_capacity(batch.len() * m);
        for &i in batch {
            target.extend_from_slice(&data.train[i].normalized);
        }

        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape, true);
        let input = tape.constant(stack_batch(&augmented));
        let out = self.model.forward_on_tape(&mut tape, &vars, input)?;
        let target = tape.constant(Tensor::new(vec![batch.len(), m], target)?);
        let loss_var = tape.mse_loss(out.combined, target)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                phase,
                epoch: self.epoch,
                step: self.step,
            });
        }
        let mut grads = tape.backward(loss_var)?;
        let named = vars.iter().map(|(k, &v)| (k.clone(), grads.take(v))).collect();
        Ok((loss, named))
    }

    fn log_row(&self, phase: Phase, lr: f64, loss: f64) -> LogRow {
        LogRow {
            phase,
            epoch: self.epoch,
            step: self.step,
            lr,
            train_mse: loss,
            val_mean_icc: None,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }

    /// `epochs` Adam epochs, validating every `eval_interval` epochs and on
    /// the last one, keeping the best model seen so far.
    pub fn run_adam(&mut self, epochs: usize, obs: &mut dyn TrainObserver) -> Result<(), TrainError> {
        for e in 0..epochs {
            let batches = self.shuffled_batches();
            let n_batches = batches.len();
            let validate_now = (e + 1) % self.cfg.eval_interval == 0 || e + 1 == epochs;
            for (b, batch) in batches.iter().enumerate() {
                let (loss, grads) = self.loss_and_grads(batch, Phase::Adam)?;
                self.adam.step(self.model.params_mut(), &grads)?;
                let mut row = self.log_row(Phase::Adam, self.cfg.adam.lr, loss);
                self.step += 1;
                if b + 1 == n_batches {
                    self.emit(obs, TraceEvent::AdamEpoch { epoch: self.epoch });
                    if validate_now {
                        let icc = self.validate()?;
                        row.val_mean_icc = Some(icc);
                        self.emit(obs, TraceEvent::Validated { epoch: self.epoch, mean_icc: icc });
                        let model = &self.model;
                        if self.selection.offer(self.epoch, icc, || model.clone()) {
                            obs.on_best(self.epoch, &self.model);
                            self.emit(obs, TraceEvent::NewBest { epoch: self.epoch, mean_icc: icc });
                        }
                    }
                }
                obs.on_step(&row);
            }
            self.epoch += 1;
        }
        Ok(())
    }

    /// Replaces the current weights with the best validated ones, if any.
    pub fn restore_best(&mut self, obs: &mut dyn TrainObserver) {
        if let Some(best) = self.selection.best() {
            self.model = best.clone();
        }
        let epoch = self.selection.epoch_of_best();
        self.emit(obs, TraceEvent::RestoredBest { epoch });
    }

    /// Cyclic-rate SGD; the weights at the end of each cycle (minimal rate)
    /// are averaged into the final model, which replaces the current one.
    pub fn run_swa(&mut self, obs: &mut dyn TrainObserver) -> Result<usize, TrainError> {
        if self.cfg.swa_cycles == 0 {
            return Ok(0);
        }
        let sched = self.swa_schedule()?;
        let mut acc = SwaAccumulator::new();
        let mut phase_step = 0usize;
        let epochs = self.cfg.swa_cycles * self.cfg.swa_epochs_per_cycle;
        for e in 0..epochs {
            if e % self.cfg.swa_epochs_per_cycle == 0 {
                self.emit(obs, TraceEvent::SwaCycleStart { cycle: e / self.cfg.swa_epochs_per_cycle });
            }
            let batches = self.shuffled_batches();
            let n_batches = batches.len();
            for (b, batch) in batches.iter().enumerate() {
                let lr = sched.lr(phase_step);
                let (loss, grads) = self.loss_and_grads(batch, Phase::Swa)?;
                sgd_step(self.model.params_mut(), &grads, lr)?;
                let mut row = self.log_row(Phase::Swa, lr, loss);
                if sched.is_cycle_end(phase_step) {
                    let cycle = phase_step / sched.cycle_len();
                    acc.absorb(&self.model.flatten())?;
                    obs.on_snapshot(cycle, &self.model);
                    self.emit(
                        obs,
                        TraceEvent::Snapshot {
                            cycle,
                            step: self.step,
                            lr,
                        },
                    );
                }
                if b + 1 == n_batches {
                    row.val_mean_icc = Some(self.validate()?);
                }
                obs.on_step(&row);
                self.step += 1;
                phase_step += 1;
            }
            self.epoch += 1;
        }
        let mean = acc.mean_f32().expect("at least one cycle ran");
        self.model.unflatten(&mean)?;
        self.emit(obs, TraceEvent::Averaged { snapshots: acc.count() });
        Ok(acc.count())
    }

    /// Adam phase, restore best, SWA cycles, averaged model.
    pub fn fit(mut self, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
        let epochs = self.cfg.adam_epochs;
        self.run_adam(epochs, obs)?;
        self.restore_best(obs);
        self.run_swa(obs)?;
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            best_epoch: self.selection.epoch_of_best(),
            best_val_icc: self.selection.best_mean_icc(),
            model: self.model,
            trace: self.trace,
        }
    }

    /// Ends an Adam-only run: the best validated model, or the current one
    /// if validation never produced a finite score.
    pub fn finish_adam_only(mut self) -> TrainOutcome {
        if let Some(best) = self.selection.best() {
            self.model = best.clone();
        }
        self.finish()
    }
}
