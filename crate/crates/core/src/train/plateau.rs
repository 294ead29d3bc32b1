//! Reduce-on-plateau learning-rate schedule with a hard floor that stops
//! training.

/// Improvement means strictly greater than the best seen plus a small
/// tolerance, so float noise cannot reset the patience counter.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    since_best: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        PlateauSchedule {
            lr: lr0,
            best: f64::NEG_INFINITY,
            since_best: 0,
            patience,
            factor,
            min_lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feed one epoch's validation metric; returns `(lr, stop)`.
    pub fn observe(&mut self, metric: f64) -> (f64, bool) {
        if metric > self.best + IMPROVEMENT_TOL {
            self.best = metric;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.lr *= self.factor;
                self.since_best = 0;
            }
        }
        (self.lr, self.lr < self.min_lr)
    }
}

/// Replay a validation history through the schedule.
pub fn plateau_schedule(
    history: &[f64],
    lr0: f64,
    patience: usize,
    factor: f64,
    min_lr: f64,
) -> (f64, bool) {
    let mut s = PlateauSchedule::new(lr0, patience, factor, min_lr);
    let mut out = (lr0, false);
    for &m in history {
        out = s.observe(m);
        if out.1 {
            break;
        }
    }
    out
}
