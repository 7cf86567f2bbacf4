use std::collections::VecDeque;

use super::TrainError;
use crate::env::Trajectory;

/// One collection round, tagged with the policy version that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBatch {
    pub version: usize,
    trajectories: Vec<Trajectory>,
}

impl StoredBatch {
    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }
}

/// Ring of the last `capacity` collection batches. Stored trajectories are
/// never mutated after insertion.
#[derive(Debug, Clone)]
pub struct ReplayWindow {
    capacity: usize,
    batches: VecDeque<StoredBatch>,
}

impl ReplayWindow {
    pub fn new(capacity: usize) -> Result<Self, TrainError> {
        if capacity == 0 {
            return Err(TrainError::InvalidConfig { field: "reuse", reason: "must be at least 1".into() });
        }
        Ok(Self { capacity, batches: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Inserts a batch, evicting the oldest when full. Returns the evicted
    /// version. Versions must strictly increase.
    pub fn push(&mut self, version: usize, trajectories: Vec<Trajectory>) -> Result<Option<usize>, TrainError> {
        if let Some(last) = self.batches.back() {
            if version <= last.version {
                return Err(TrainError::StaleVersion { version, latest: last.version });
            }
        }
        let evicted = if self.batches.len() == self.capacity { self.batches.pop_front().map(|b| b.version) } else { None };
        self.batches.push_back(StoredBatch { version, trajectories });
        Ok(evicted)
    }

    pub fn batches(&self) -> impl Iterator<Item = &StoredBatch> {
        self.batches.iter()
    }

    pub fn versions(&self) -> Vec<usize> {
        self.batches.iter().map(|b| b.version).collect()
    }

    /// All stored trajectories, oldest batch first.
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.batches.iter().flat_map(|b| b.trajectories.iter())
    }

    pub fn latest(&self) -> Option<&StoredBatch> {
        self.batches.back()
    }
}
