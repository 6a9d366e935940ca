//! FIFO replay memory with uniform sampling without replacement.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

use crate::agent::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Ring buffer; once full, each push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push writes to.
    head: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be > 0");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            pushed: 0,
        }
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

    /// Total transitions ever inserted.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.head };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Distinct indices drawn uniformly; `None` if fewer than `n` stored.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        (n <= self.items.len()).then(|| index::sample(rng, self.items.len(), n).into_vec())
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Option<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let first = &self.items[idx[0]];
        let (d, k) = (first.obs.len(), first.action.len());
        let pick = |f: &dyn Fn(&Transition) -> &[f64], w: usize| {
            DMatrix::from_fn(n, w, |i, j| f(&self.items[idx[i]])[j])
        };
        Some(Batch {
            obs: pick(&|t| &t.obs, d),
            actions: pick(&|t| &t.action, k),
            rewards: DVector::from_fn(n, |i, _| self.items[idx[i]].reward),
            next_obs: pick(&|t| &t.next_obs, d),
            done: DVector::from_fn(n, |i, _| if self.items[idx[i]].done { 1.0 } else { 0.0 }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(x: f64) -> Transition {
        Transition {
            obs: vec![x],
            action: vec![x],
            reward: x,
            next_obs: vec![x + 1.0],
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i as f64));
        }
        let r: Vec<f64> = b.iter_oldest_first().map(|t| t.reward).collect();
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.pushed(), 5);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idx = b.sample_indices(10, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert!(b.sample(11, &mut rng).is_none());
    }
}
