//! Cumulative rate index over sites (Fenwick tree).

use alloc::vec;
use alloc::vec::Vec;

/// Number of point updates between two full rebuilds.
pub const REBUILD_INTERVAL: u64 = 1 << 20;

/// Per-site rates with O(log V) update and proportional sampling.
#[derive(Debug, Clone)]
pub struct RateIndex {
    leaves: Vec<f64>,
    tree: Vec<f64>,
    top_bit: usize,
    total: f64,
    updates: u64,
}

impl RateIndex {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        let top_bit = if n == 0 { 0 } else { 1usize << (usize::BITS - 1 - n.leading_zeros()) };
        let mut index = Self { tree: vec![0.0; n + 1], leaves: values, top_bit, total: 0.0, updates: 0 };
        index.rebuild();
        index
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.leaves[i]
    }

    /// Running total maintained by incremental updates.
    #[inline]
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Exact sum of the leaves, recomputed from scratch.
    pub fn recomputed_total(&self) -> f64 {
        self.leaves.iter().sum()
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let delta = value - self.leaves[i];
        if delta == 0.0 {
            return;
        }
        self.leaves[i] = value;
        self.total += delta;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
        self.updates += 1;
        if self.updates >= REBUILD_INTERVAL {
            self.rebuild();
        }
    }

    /// Rebuild the tree and the running total from the leaves in O(V).
    pub fn rebuild(&mut self) {
        let n = self.leaves.len();
        self.tree[1..].copy_from_slice(&self.leaves);
        for k in 1..=n {
            let parent = k + (k & k.wrapping_neg());
            if parent <= n {
                let v = self.tree[k];
                self.tree[parent] += v;
            }
        }
        self.total = self.recomputed_total();
        self.updates = 0;
    }

    /// Index `i` with `prefix(i) <= target < prefix(i + 1)`, for `target` in
    /// `[0, total)`. Rounding may land on a zero-rate leaf; callers retry.
    #[inline]
    pub fn search(&self, mut target: f64) -> usize {
        let n = self.leaves.len();
        let mut pos = 0usize;
        let mut bit = self.top_bit;
        while bit > 0 {
            let next = pos + bit;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            bit >>= 1;
        }
        pos.min(n - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn search_matches_linear_scan() {
        let values: Vec<f64> = (0..37).map(|i| ((i * 7) % 5) as f64 * 0.5).collect();
        let index = RateIndex::new(values.clone());
        let total: f64 = values.iter().sum();
        assert!((index.total() - total).abs() < 1e-12);
        let mut rng = stream(3, 0, Purpose::Analysis);
        for _ in 0..2000 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut expected = 0;
            for (i, v) in values.iter().enumerate() {
                if acc + v > u {
                    expected = i;
                    break;
                }
                acc += v;
            }
            assert_eq!(index.search(u), expected);
        }
    }

    #[test]
    fn updates_keep_total_consistent() {
        let mut index = RateIndex::new(vec![0.0; 1000]);
        let mut rng = stream(4, 0, Purpose::Analysis);
        for _ in 0..100_000 {
            let i = rng.random_range(0..1000);
            index.set(i, rng.random::<f64>() * 3.0);
        }
        let exact = index.recomputed_total();
        assert!(((index.total() - exact) / exact).abs() < 1e-9);
    }

    #[test]
    fn single_leaf() {
        let mut index = RateIndex::new(vec![2.0]);
        assert_eq!(index.search(1.9), 0);
        index.set(0, 0.0);
        assert_eq!(index.total(), 0.0);
    }
}
