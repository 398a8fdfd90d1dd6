use std::collections::VecDeque;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::Transition;

/// Two ring buffers: transitions that stay safe, and transitions that leave the safe set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    positive: VecDeque<Transition>,
    negative: VecDeque<Transition>,
    pos_capacity: usize,
    neg_capacity: usize,
}

impl ReplayBuffer {
    pub fn new(pos_capacity: usize, neg_capacity: usize) -> Self {
        assert!(pos_capacity > 0 && neg_capacity > 0);
        Self {
            positive: VecDeque::new(),
            negative: VecDeque::new(),
            pos_capacity,
            neg_capacity,
        }
    }

    /// Routes by `next_safe`; the oldest entry of a full pool is evicted.
    pub fn push(&mut self, tr: Transition) {
        let (pool, cap) = if tr.next_safe {
            (&mut self.positive, self.pos_capacity)
        } else {
            (&mut self.negative, self.neg_capacity)
        };
        if pool.len() == cap {
            pool.pop_front();
        }
        pool.push_back(tr);
    }

    pub fn positive(&self) -> &VecDeque<Transition> {
        &self.positive
    }

    pub fn negative(&self) -> &VecDeque<Transition> {
        &self.negative
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.positive.iter().chain(self.negative.iter())
    }

    /// `n_pos` uniform draws (with replacement) from the positive pool and
    /// `n_neg` from the negative pool.
    pub fn sample(&self, n_pos: usize, n_neg: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        if n_pos > 0 && self.positive.is_empty() {
            return Err(Error::EmptyPool {
                pool: "positive",
                requested: n_pos,
            });
        }
        if n_neg > 0 && self.negative.is_empty() {
            return Err(Error::EmptyPool {
                pool: "negative",
                requested: n_neg,
            });
        }
        let mut out = Vec::with_capacity(n_pos + n_neg);
        for _ in 0..n_pos {
            out.push(&self.positive[rng.random_range(0..self.positive.len())]);
        }
        for _ in 0..n_neg {
            out.push(&self.negative[rng.random_range(0..self.negative.len())]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::system::RealVec;
    use proptest::prelude::*;

    fn tr(tag: f64, safe: bool) -> Transition {
        let x = RealVec::from_vec(vec![tag]);
        Transition {
            x: x.clone(),
            u: RealVec::zeros(1),
            cost: 0.0,
            x_next: x,
            next_safe: safe,
        }
    }

    #[test]
    fn empty_pool_with_quota_errors() {
        let mut b = ReplayBuffer::new(4, 4);
        b.push(tr(0.0, true));
        let mut rng = stream(0, 0);
        assert!(b.sample(2, 0, &mut rng).is_ok());
        assert_eq!(
            b.sample(2, 1, &mut rng).unwrap_err(),
            Error::EmptyPool {
                pool: "negative",
                requested: 1
            }
        );
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(2, 2);
        for k in 0..5 {
            b.push(tr(k as f64, true));
        }
        let tags: Vec<f64> = b.positive().iter().map(|t| t.x[0]).collect();
        assert_eq!(tags, vec![3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn partition_is_exact(flags in proptest::collection::vec(any::<bool>(), 0..200), pc in 1usize..50, nc in 1usize..50) {
            let mut b = ReplayBuffer::new(pc, nc);
            for (k, f) in flags.iter().enumerate() {
                b.push(tr(k as f64, *f));
            }
            prop_assert!(b.positive().iter().all(|t| t.next_safe));
            prop_assert!(b.negative().iter().all(|t| !t.next_safe));
            let n_pos = flags.iter().filter(|f| **f).count();
            prop_assert_eq!(b.positive().len(), n_pos.min(pc));
            prop_assert_eq!(b.negative().len(), (flags.len() - n_pos).min(nc));
        }
    }
}
