//! MSE training with Adam, plateau LR decay, early stopping and
//! best-validation checkpointing.

mod adam;
mod persist;
mod scheduler;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use persist::OPT_MAGIC;
pub use scheduler::{Decision, Scheduler, SchedulerConfig};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Mode;
use crate::real::Real;
use crate::tensor::Tensor4;

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Restart the LR plateau counter after each drop.
    pub reset_lr_counter_on_drop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            plateau_patience: 4,
            lr_factor: 0.1,
            early_stop_patience: 15,
            max_epochs: 200,
            batch_size: 6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            reset_lr_counter_on_drop: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rule = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        rule(self.lr0 > 0.0 && self.lr0.is_finite(), "lr0 must be positive")?;
        rule(
            self.lr_factor > 0.0 && self.lr_factor < 1.0,
            "lr_factor must lie in (0, 1)",
        )?;
        rule(self.plateau_patience >= 1, "plateau_patience must be >= 1")?;
        rule(self.early_stop_patience >= 1, "early_stop_patience must be >= 1")?;
        rule(self.batch_size >= 1, "batch_size must be >= 1")?;
        rule(self.max_epochs >= 1, "max_epochs must be >= 1")?;
        rule(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)",
        )?;
        rule(self.eps > 0.0, "Adam eps must be positive")
    }

    /// Disables early stopping.
    pub fn without_early_stop(mut self) -> Self {
        self.early_stop_patience = usize::MAX;
        self
    }

    pub fn scheduler(&self) -> SchedulerConfig {
        SchedulerConfig {
            lr0: self.lr0,
            lr_factor: self.lr_factor,
            plateau_patience: self.plateau_patience,
            early_stop_patience: self.early_stop_patience,
            reset_on_drop: self.reset_lr_counter_on_drop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

impl HistoryRow {
    /// Equality ignoring wall-clock time.
    pub fn same_run(&self, o: &HistoryRow) -> bool {
        self.epoch == o.epoch
            && self.train_mse.to_bits() == o.train_mse.to_bits()
            && self.val_mse.to_bits() == o.val_mse.to_bits()
            && self.lr.to_bits() == o.lr.to_bits()
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("epoch,train_mse,val_mse,lr,seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{:.3}", r.epoch, r.train_mse, r.val_mse, r.lr, r.seconds);
    }
    s
}

/// Parameters and buffers of the best epoch so far.
pub type Snapshot<T> = Vec<(String, Tensor4<T>)>;

#[derive(Clone, Debug)]
pub struct TrainState<T> {
    /// Completed epochs.
    pub epoch: usize,
    pub scheduler: Scheduler,
    pub best_val: f64,
    pub best_epoch: usize,
    pub best: Option<Snapshot<T>>,
    pub adam: Adam<T>,
    pub rng: ChaCha8Rng,
    pub history: Vec<HistoryRow>,
    pub stopped: bool,
}

impl<T: Real> TrainState<T> {
    pub fn current_lr(&self) -> f64 {
        self.scheduler.lr()
    }
}

/// A model together with its optimisation state.
pub struct Trainer<T> {
    pub model: Model<T>,
    pub state: TrainState<T>,
    pub cfg: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct EpochReport {
    pub row: HistoryRow,
    pub decision: Decision,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&model.store, cfg.beta1, cfg.beta2, cfg.eps);
        let state = TrainState {
            epoch: 0,
            scheduler: Scheduler::new(cfg.scheduler()),
            best_val: f64::INFINITY,
            best_epoch: 0,
            best: None,
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            history: Vec::new(),
            stopped: false,
        };
        Ok(Trainer { model, state, cfg })
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.state.history
    }

    /// One pass over `train` in a freshly shuffled order, then validation
    /// and a scheduler step.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<EpochReport> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset(
                "training needs non-empty train and val splits".into(),
            ));
        }
        let start = Instant::now();
        let epoch = self.state.epoch + 1;
        let lr = self.state.current_lr();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let b = train.batch::<T>(chunk)?;
            self.model.store.zero_grad();
            let loss = self.model.loss_and_grads(&b.inputs, &b.targets, Mode::Train)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(Error::Numeric(format!(
                    "training loss {loss} at epoch {epoch} exceeds the divergence limit {DIVERGENCE_LIMIT}"
                )));
            }
            self.state.adam.step(&mut self.model.store, lr)?;
            weighted += loss * chunk.len() as f64;
        }
        let train_mse = weighted / train.len() as f64;
        let val_mse = evaluate_mse(&self.model, val, self.cfg.batch_size)?;
        if !val_mse.is_finite() || val_mse > DIVERGENCE_LIMIT {
            return Err(Error::Numeric(format!(
                "validation loss {val_mse} at epoch {epoch}; training aborted"
            )));
        }
        let decision = self.state.scheduler.step(val_mse)?;
        if decision.improved {
            self.state.best_val = val_mse;
            self.state.best_epoch = epoch;
            self.state.best = Some(
                self.model
                    .store
                    .named_tensors()
                    .map(|(n, t)| (n.to_string(), t.clone()))
                    .collect(),
            );
        }
        let row = HistoryRow {
            epoch,
            train_mse,
            val_mse,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.state.history.push(row);
        self.state.epoch = epoch;
        self.state.stopped = decision.stop;
        Ok(EpochReport { row, decision })
    }

    /// Runs epochs until early stopping or `max_epochs`.
    pub fn fit(&mut self, train: &Dataset, val: &Dataset) -> Result<()> {
        self.fit_with(train, val, |_| {})
    }

    /// As [`Trainer::fit`], calling `on_epoch` after every epoch.
    pub fn fit_with(&mut self, train: &Dataset, val: &Dataset, mut on_epoch: impl FnMut(&EpochReport)) -> Result<()> {
        while !self.state.stopped && self.state.epoch < self.cfg.max_epochs {
            let r = self.run_epoch(train, val)?;
            on_epoch(&r);
        }
        Ok(())
    }

    /// The model with the best-validation parameters restored.
    pub fn best_model(&self) -> Result<Model<T>> {
        let mut m = self.model.clone();
        if let Some(snap) = &self.state.best {
            for (name, t) in snap {
                m.store.set_by_name(name, t.clone())?;
            }
        }
        Ok(m)
    }
}

/// Trains a fresh trainer to completion.
pub fn fit<T: Real>(model: Model<T>, train: &Dataset, val: &Dataset, cfg: TrainConfig) -> Result<Trainer<T>> {
    let mut t = Trainer::new(model, cfg)?;
    t.fit(train, val)?;
    Ok(t)
}

/// Eval-mode MSE over a dataset, in normalised units. Per-batch squared
/// error sums are combined in index order.
pub fn evaluate_mse<T: Real>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = data.batch::<T>(chunk)?;
        let y = model.predict(&b.inputs)?;
        sum += crate::model::mse(&y, &b.targets)? * y.numel() as f64;
        count += y.numel();
    }
    Ok(sum / count as f64)
}
