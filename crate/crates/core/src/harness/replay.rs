//! Bounded FIFO store of training pairs.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone)]
pub struct ReplayBuffer<P> {
    items: VecDeque<P>,
    capacity: usize,
    inserted: u64,
}

impl<P> ReplayBuffer<P> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be at least 1"));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
            inserted: 0,
        })
    }

    /// Appends, evicting the oldest item when full.
    pub fn push(&mut self, item: P) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes so far, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &P> {
        self.items.iter()
    }

    /// Indices of `n` uniform draws with replacement, oldest item = 0.
    pub fn sample_indices(&self, n: usize, seed: u64) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::state("cannot sample from an empty replay buffer"));
        }
        let mut rng = rng_for(seed, stream::REPLAY);
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample_batch(&self, n: usize, seed: u64) -> Result<Vec<&P>> {
        Ok(self
            .sample_indices(n, seed)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
