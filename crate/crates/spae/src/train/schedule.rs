//! Plateau learning-rate reduction and early stopping, as pure counter logic
//! so the exact boundary semantics are testable with injected loss
//! sequences.
//!
//! An epoch "improves" when its validation loss is below `best − min_delta`.
//! Improvement resets both counters and marks a new best. A non-improving
//! epoch advances both counters; when the early-stop counter reaches its
//! patience, training stops (checked first), and when the plateau counter
//! reaches its patience the learning rate is multiplied by `lr_factor`
//! (floored at `min_lr`) and the plateau counter alone resets.

/// What the training loop should do after recording an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    /// Keep going; the epoch improved the best validation loss.
    Improved,
    /// Keep going, no improvement.
    Continue,
    /// No improvement, and the plateau patience was just reached: the
    /// learning rate was reduced to the carried value.
    ReducedLr,
    /// Early-stop patience reached; stop and restore the best snapshot.
    Stop,
}

#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    lr_factor: f64,
    min_lr: f64,
    plateau_patience: usize,
    stop_patience: usize,
    min_delta: f64,
    best: f64,
    plateau_wait: usize,
    stop_wait: usize,
}

impl PlateauSchedule {
    pub fn new(
        initial_lr: f64,
        lr_factor: f64,
        min_lr: f64,
        plateau_patience: usize,
        stop_patience: usize,
        min_delta: f64,
    ) -> Self {
        PlateauSchedule {
            lr: initial_lr,
            lr_factor,
            min_lr,
            plateau_patience,
            stop_patience,
            min_delta,
            best: f64::INFINITY,
            plateau_wait: 0,
            stop_wait: 0,
        }
    }

    /// Learning rate to use for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record one epoch's validation loss.
    pub fn observe(&mut self, val_loss: f64) -> ScheduleAction {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.plateau_wait = 0;
            self.stop_wait = 0;
            return ScheduleAction::Improved;
        }
        self.plateau_wait += 1;
        self.stop_wait += 1;
        if self.stop_wait >= self.stop_patience {
            return ScheduleAction::Stop;
        }
        if self.plateau_wait >= self.plateau_patience {
            self.plateau_wait = 0;
            self.lr = (self.lr * self.lr_factor).max(self.min_lr);
            return ScheduleAction::ReducedLr;
        }
        ScheduleAction::Continue
    }
}
