use super::OptimError;

/// Max-mode reduce-on-plateau: the rate is multiplied by `factor` once the
/// metric has failed to beat its best for more than `patience` consecutive
/// observations. Any strictly larger value counts as an improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best.is_finite().then_some(self.best)
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Feeds one epoch's metric and returns the rate for the next epoch.
    pub fn observe(&mut self, metric: f64) -> Result<f64, OptimError> {
        if !metric.is_finite() {
            return Err(OptimError::NonFiniteMetric(metric));
        }
        if metric > self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
        }
        Ok(self.lr)
    }
}
