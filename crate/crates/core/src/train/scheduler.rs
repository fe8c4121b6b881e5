//! Plateau learning-rate decay and early stopping.
//!
//! An epoch improves when its validation loss is strictly below the best
//! seen so far. Both counters hold the number of epochs since the last
//! improvement over a previously recorded best, counted from epoch 0, so
//! the very first epoch (which sets the initial best) counts as
//! non-improving. The LR counter drops the rate when it reaches
//! `plateau_patience` and, by default, restarts; the early-stop counter is
//! independent and fires at `early_stop_patience`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub lr0: f64,
    pub lr_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub reset_on_drop: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            lr0: 1e-3,
            lr_factor: 0.1,
            plateau_patience: 4,
            early_stop_patience: 15,
            reset_on_drop: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scheduler {
    pub cfg: SchedulerConfig,
    pub best: f64,
    pub since_improvement_lr: usize,
    pub since_improvement_stop: usize,
    /// Number of LR drops so far; the rate is `lr0 * factor^drops`.
    pub drops: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    /// The rate for the next epoch.
    pub lr: f64,
    pub improved: bool,
    pub dropped: bool,
    pub stop: bool,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        Scheduler {
            cfg,
            best: f64::INFINITY,
            since_improvement_lr: 0,
            since_improvement_stop: 0,
            drops: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        // Dividing by an integral 1/factor keeps decimal rates exact
        // (1e-3 / 100 == 1e-5, unlike 1e-3 * 0.1 * 0.1).
        let inv = 1.0 / self.cfg.lr_factor;
        if inv.fract() == 0.0 {
            self.cfg.lr0 / inv.powi(self.drops as i32)
        } else {
            self.cfg.lr0 * self.cfg.lr_factor.powi(self.drops as i32)
        }
    }

    pub fn step(&mut self, val_loss: f64) -> Result<Decision> {
        if val_loss.is_nan() {
            return Err(Error::Numeric("validation loss is NaN; training aborted".into()));
        }
        let improved = val_loss < self.best;
        if improved && self.best.is_finite() {
            self.since_improvement_lr = 0;
            self.since_improvement_stop = 0;
        } else {
            self.since_improvement_lr += 1;
            self.since_improvement_stop += 1;
        }
        if improved {
            self.best = val_loss;
        }
        let mut dropped = false;
        if self.since_improvement_lr >= self.cfg.plateau_patience {
            self.drops += 1;
            dropped = true;
            if self.cfg.reset_on_drop {
                self.since_improvement_lr = 0;
            }
        }
        Ok(Decision {
            lr: self.lr(),
            improved,
            dropped,
            stop: self.since_improvement_stop >= self.cfg.early_stop_patience,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_aborts() {
        let mut s = Scheduler::new(SchedulerConfig::default());
        assert!(matches!(s.step(f64::NAN), Err(Error::Numeric(_))));
    }

    #[test]
    fn ties_do_not_improve() {
        let mut s = Scheduler::new(SchedulerConfig::default());
        assert!(s.step(1.0).unwrap().improved);
        assert!(!s.step(1.0).unwrap().improved);
    }
}
