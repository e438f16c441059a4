use alloc::collections::VecDeque;

use crate::error::{Error, Result};

/// Returns of the most recent completed episodes, at most [`ScoreHistory::CAPACITY`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreHistory {
    recent: VecDeque<f64>,
    total: u64,
}

impl ScoreHistory {
    pub const CAPACITY: usize = 100;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64) {
        if self.recent.len() == Self::CAPACITY {
            self.recent.pop_front();
        }
        self.recent.push_back(score);
        self.total += 1;
    }

    /// Mean over the retained returns, `None` before the first episode completes.
    pub fn mean(&self) -> Option<f64> {
        if self.recent.is_empty() {
            None
        } else {
            Some(self.recent.iter().sum::<f64>() / self.recent.len() as f64)
        }
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// Episodes completed since construction, including evicted ones.
    pub fn completed(&self) -> u64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.recent.iter()
    }
}

/// `min(s_mean / (0.8 · s_highest), 1)`, clamped below at zero.
/// Zero until some episode has completed.
pub fn control_factor(history: &ScoreHistory, s_highest: f64) -> Result<f64> {
    if !(s_highest > 0.0) {
        return Err(Error::Config(alloc::format!("s_highest must be positive, got {s_highest}")));
    }
    Ok(match history.mean() {
        None => 0.0,
        Some(mean) => control_from_mean(mean, s_highest),
    })
}

pub(crate) fn control_from_mean(mean: f64, s_highest: f64) -> f64 {
    (mean / (0.8 * s_highest)).min(1.0).max(0.0)
}
