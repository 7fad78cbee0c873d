/// Patience-based early stopping on a loss to be minimised.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    /// Records one epoch's validation loss. Non-finite losses never count as
    /// improvements.
    pub fn update(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = loss.is_finite() && loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        (self.best_epoch > 0).then_some((self.best_epoch, self.best))
    }
}

/// Number of epochs the rule runs for a given loss sequence, capped at `max_epochs`.
pub fn epochs_run(losses: impl IntoIterator<Item = f64>, patience: usize, max_epochs: usize) -> usize {
    let mut s = EarlyStopping::new(patience);
    let mut n = 0;
    for l in losses.into_iter().take(max_epochs) {
        n += 1;
        if s.update(l).stop {
            break;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_loss_stops_after_patience() {
        assert_eq!(epochs_run(std::iter::repeat(5.0), 10, 40), 11);
    }

    #[test]
    fn decreasing_loss_runs_to_the_cap() {
        assert_eq!(epochs_run((0..).map(|e| 100.0 - e as f64), 10, 40), 40);
    }

    #[test]
    fn tracks_best_epoch() {
        let mut s = EarlyStopping::new(3);
        for l in [5.0, 3.0, 4.0, f64::NAN] {
            s.update(l);
        }
        assert_eq!(s.best(), Some((2, 3.0)));
    }

    proptest! {
        #[test]
        fn stopping_bounds(losses in proptest::collection::vec(0.0f64..10.0, 1..60), patience in 1usize..15) {
            let max = 40;
            let n = epochs_run(losses.iter().copied(), patience, max);
            prop_assert!(n <= max.min(losses.len()));
            let flat = vec![losses[0]; losses.len()];
            let nf = epochs_run(flat.iter().copied(), patience, max);
            prop_assert_eq!(nf, (patience + 1).min(max).min(losses.len()));
        }
    }
}
