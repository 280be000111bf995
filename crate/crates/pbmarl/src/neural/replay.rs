//! Per-agent experience replay with recency-weighted sampling.

use std::collections::VecDeque;

use rand::Rng;

use super::{NeuralError, StateVector};

/// Newest transitions counted as "recent" when sampling.
pub const RECENT_WINDOW: usize = 32;

/// One stored experience. There is no next-state or discount: the reward
/// is immediate and the election state never changes within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    /// Chosen project index per branch.
    pub action: Vec<u16>,
    pub reward: f64,
}

/// Bounded FIFO transition store, owned by exactly one agent.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    transitions: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            transitions: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.transitions.get(index)
    }
}

/// Samples a mini-batch half made of recent experience.
///
/// `ceil(batch_size / 2)` draws come uniformly from the newest
/// `min(RECENT_WINDOW, len)` transitions and the remainder uniformly from
/// the older ones; when the buffer holds fewer than `batch_size`
/// transitions the whole batch is drawn with replacement from what exists,
/// and likewise when there are no older transitions.
pub fn sample_minibatch(
    buffer: &ReplayBuffer,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Transition>, NeuralError> {
    let len = buffer.len();
    if len == 0 {
        return Err(NeuralError::EmptyBuffer);
    }
    let mut batch = Vec::with_capacity(batch_size);
    let window = len.min(RECENT_WINDOW);
    let older = len - window;
    if len < batch_size || older == 0 {
        for _ in 0..batch_size {
            batch.push(buffer.get(rng.gen_range(0..len)).unwrap().clone());
        }
        return Ok(batch);
    }
    let recent_draws = batch_size.div_ceil(2);
    for _ in 0..recent_draws {
        batch.push(buffer.get(rng.gen_range(older..len)).unwrap().clone());
    }
    for _ in recent_draws..batch_size {
        batch.push(buffer.get(rng.gen_range(0..older)).unwrap().clone());
    }
    Ok(batch)
}
