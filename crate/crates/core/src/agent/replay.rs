use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::Matrix;
use crate::{Error, Result};

/// One environment step `(s, a, r, s', done)`.
///
/// `done` is set only for true terminal states; an episode cut by the step
/// cap is stored with `done = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Column-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    /// 1.0 for terminal transitions, 0.0 otherwise.
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let first = items
            .first()
            .ok_or_else(|| Error::Usage("cannot build an empty batch".into()))?;
        let (ds, da) = (first.state.len(), first.action.len());
        let mut states = Vec::with_capacity(items.len() * ds);
        let mut actions = Vec::with_capacity(items.len() * da);
        let mut next_states = Vec::with_capacity(items.len() * ds);
        let mut rewards = Vec::with_capacity(items.len());
        let mut dones = Vec::with_capacity(items.len());
        for t in &items {
            if t.state.len() != ds || t.next_state.len() != ds || t.action.len() != da {
                return Err(Error::Dimension {
                    context: "Batch::from_transitions",
                    expected: ds,
                    found: t.state.len(),
                });
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next_states.extend_from_slice(&t.next_state);
            rewards.push(t.reward);
            dones.push(if t.done { 1.0 } else { 0.0 });
        }
        let n = items.len();
        Ok(Self {
            states: Matrix::from_vec(n, ds, states)?,
            actions: Matrix::from_vec(n, da, actions)?,
            rewards,
            next_states: Matrix::from_vec(n, ds, next_states)?,
            dones,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Rows picked by index (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            states: self.states.select_rows(indices),
            actions: self.actions.select_rows(indices),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            next_states: self.next_states.select_rows(indices),
            dones: indices.iter().map(|&i| self.dones[i]).collect(),
        }
    }
}

/// Fixed-capacity FIFO store of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot overwritten by the next push once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// `batch_size` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::Usage(format!(
                "cannot sample {batch_size} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// Storage slots and the next overwrite position, for checkpointing.
    pub fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.items, self.head)
    }

    /// Inverse of [`ReplayBuffer::raw_parts`]; slot order is preserved so
    /// sampling continues identically.
    pub fn from_raw_parts(capacity: usize, items: Vec<Transition>, head: usize) -> Result<Self> {
        let mut buffer = Self::new(capacity)?;
        if items.len() > capacity || (head != 0 && (items.len() < capacity || head >= capacity)) {
            return Err(Error::Config(format!(
                "replay state with {} items and head {head} does not fit capacity {capacity}",
                items.len()
            )));
        }
        buffer.items = items;
        buffer.head = head;
        Ok(buffer)
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    fn transition(tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: vec![0.0],
            reward: tag,
            next_state: vec![tag + 1.0],
            done: false,
        }
    }

    #[test]
    fn capacity_one_returns_last_push() {
        let mut buf = ReplayBuffer::new(1).unwrap();
        buf.push(transition(7.0));
        let batch = buf.sample(1, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(batch.rewards, vec![7.0]);
    }

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..4 {
            buf.push(transition(i as f64));
        }
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0]);
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn underfilled_sample_is_usage_error() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        buf.push(transition(0.0));
        assert!(matches!(buf.sample(2, &mut rng::stream(0, 0)), Err(Error::Usage(_))));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            buf.push(transition(i as f64));
        }
        let mut rng = rng::stream(42, 0);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            for i in buf.sample_indices(10, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = 10_000.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected) * (c as f64 - expected) / expected)
            .sum();
        // 99th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
