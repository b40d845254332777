//! Minibatch plumbing shared by the trainers.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Draws minibatches by walking a fresh random permutation each epoch.
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl EpochSampler {
    pub fn new(len: usize, rng: StreamRng) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: len,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    /// Returns the rng for drawing per-batch noise after the permutation.
    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Averages the per-step loss over windows of `every` steps.
#[derive(Debug, Clone)]
pub struct LossLog {
    every: usize,
    acc: f64,
    count: usize,
    history: Vec<LossPoint>,
}

impl LossLog {
    pub fn new(every: usize) -> Self {
        Self {
            every: every.max(1),
            acc: 0.0,
            count: 0,
            history: Vec::new(),
        }
    }

    /// `step` is 1-based. A non-finite loss aborts training.
    pub fn record(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        self.acc += loss;
        self.count += 1;
        if self.count == self.every {
            self.flush(step);
        }
        Ok(())
    }

    fn flush(&mut self, step: usize) {
        if self.count > 0 {
            self.history.push(LossPoint {
                step,
                loss: self.acc / self.count as f64,
            });
            self.acc = 0.0;
            self.count = 0;
        }
    }

    pub fn finish(mut self, last_step: usize) -> Vec<LossPoint> {
        self.flush(last_step);
        self.history
    }
}

/// CSV rendering `step,loss` of a loss history.
pub fn loss_csv(history: &[LossPoint]) -> String {
    let mut s = String::from("step,loss\n");
    for p in history {
        s.push_str(&format!("{},{:e}\n", p.step, p.loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn epochs_cover_every_index_once() {
        let mut s = EpochSampler::new(10, rng::stream(0, &[1]));
        let mut first: Vec<usize> = s.next_batch(4);
        first.extend(s.next_batch(6));
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_batch(25).len(), 25);
    }

    #[test]
    fn nan_loss_reports_step() {
        let mut log = LossLog::new(10);
        log.record(1, 0.5).unwrap();
        match log.record(2, f64::NAN) {
            Err(Error::TrainingDiverged { step }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn windows_are_averaged() {
        let mut log = LossLog::new(2);
        for (i, l) in [1.0, 3.0, 5.0].iter().enumerate() {
            log.record(i + 1, *l).unwrap();
        }
        let h = log.finish(3);
        assert_eq!(h, vec![LossPoint { step: 2, loss: 2.0 }, LossPoint { step: 3, loss: 5.0 }]);
        assert!(loss_csv(&h).starts_with("step,loss\n2,"));
    }
}
