//! Early stopping and learning-rate reduction on validation loss.
//!
//! "No improvement" means the observed loss is not below
//! `best - min_delta`. Both counters reset on improvement; the reduction
//! counter also resets after firing, so stagnation keeps shrinking the
//! rate until the floor. The first observation always counts as an
//! improvement (it establishes the best).

#[derive(Debug, Clone)]
pub struct Callbacks {
    min_delta: f64,
    stop_patience: usize,
    lr_patience: usize,
    best: Option<f64>,
    stop_wait: usize,
    lr_wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochOutcome {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

impl Callbacks {
    pub fn new(min_delta: f64, stop_patience: usize, lr_patience: usize) -> Self {
        assert!(stop_patience >= 1 && lr_patience >= 1);
        Self {
            min_delta,
            stop_patience,
            lr_patience,
            best: None,
            stop_wait: 0,
            lr_wait: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, validation_loss: f64) -> EpochOutcome {
        let improved = match self.best {
            None => true,
            Some(best) => validation_loss < best - self.min_delta,
        };
        if improved {
            self.best = Some(validation_loss);
            self.stop_wait = 0;
            self.lr_wait = 0;
        } else {
            self.stop_wait += 1;
            self.lr_wait += 1;
        }
        let reduce_lr = self.lr_wait >= self.lr_patience;
        if reduce_lr {
            self.lr_wait = 0;
        }
        EpochOutcome {
            improved,
            reduce_lr,
            stop: self.stop_wait >= self.stop_patience,
        }
    }
}
