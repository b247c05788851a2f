//! Per-window transition and occupancy estimates.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::segment::{CountTable, TransitionCounts};

/// Maximum-likelihood next-state rows and occupancy for one window of one
/// trajectory. Unobserved pairs have no entry, which stands for the zero
/// vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEstimate {
    pub num_states: usize,
    pub num_actions: usize,
    pub blocks: usize,
    rows: BTreeMap<usize, Vec<f64>>,
    /// `N(s,a) / G` for observed pairs.
    occupancy: BTreeMap<usize, f64>,
}

impl SegmentEstimate {
    pub fn from_counts(
        counts: &TransitionCounts,
        num_states: usize,
        num_actions: usize,
        blocks: usize,
    ) -> Self {
        let mut rows = BTreeMap::new();
        let mut occupancy = BTreeMap::new();
        for (pair, c) in counts.iter() {
            if c.total == 0 {
                continue;
            }
            let mut row = vec![0.0; num_states];
            let total = c.total as f64;
            for (&s2, &n) in &c.next {
                row[s2] = n as f64 / total;
            }
            rows.insert(pair, row);
            occupancy.insert(pair, total / blocks as f64);
        }
        SegmentEstimate {
            num_states,
            num_actions,
            blocks,
            rows,
            occupancy,
        }
    }

    pub fn row(&self, pair: usize) -> Option<&[f64]> {
        self.rows.get(&pair).map(Vec::as_slice)
    }

    pub fn is_observed(&self, pair: usize) -> bool {
        self.rows.contains_key(&pair)
    }

    pub fn observed_pairs(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn occupancy(&self, pair: usize) -> f64 {
        self.occupancy.get(&pair).copied().unwrap_or(0.0)
    }

    pub fn occupancy_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.occupancy.iter().map(|(&k, &v)| (k, v))
    }

    pub fn occupancy_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_states * self.num_actions];
        for (&k, &v) in &self.occupancy {
            d[k] = v;
        }
        d
    }
}

/// Estimates for window `w` (0 or 1) of a count table.
pub fn segment_estimates(table: &CountTable, window: usize) -> SegmentEstimate {
    SegmentEstimate::from_counts(
        &table.windows[window],
        table.num_states,
        table.num_actions,
        table.blocks,
    )
}

/// Estimates from the whole-trajectory counts.
pub fn whole_estimates(table: &CountTable) -> SegmentEstimate {
    SegmentEstimate::from_counts(&table.whole, table.num_states, table.num_actions, table.blocks)
}

/// Both window estimates of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub first: SegmentEstimate,
    pub second: SegmentEstimate,
}

impl WindowPair {
    pub fn from_table(table: &CountTable) -> Self {
        WindowPair {
            first: segment_estimates(table, 0),
            second: segment_estimates(table, 1),
        }
    }

    pub fn window(&self, w: usize) -> &SegmentEstimate {
        if w == 0 {
            &self.first
        } else {
            &self.second
        }
    }

    /// Pair observed in both windows.
    pub fn observed_in_both(&self, pair: usize) -> bool {
        self.first.is_observed(pair) && self.second.is_observed(pair)
    }
}

pub fn window_pairs(tables: &[CountTable]) -> Vec<WindowPair> {
    tables.iter().map(WindowPair::from_table).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_and_unobserved() {
        let mut counts = TransitionCounts::default();
        for s2 in [0, 0, 2, 2] {
            counts.record(0, s2);
        }
        let est = SegmentEstimate::from_counts(&counts, 3, 2, 4);
        assert_eq!(est.row(0).unwrap(), &[0.5, 0.0, 0.5]);
        assert!(est.row(2).is_none());
        assert!(!est.is_observed(2));
        assert_eq!(est.occupancy(0), 1.0);
        assert_eq!(est.occupancy(1), 0.0);
        assert_eq!(est.occupancy_dense().len(), 6);
    }

    #[test]
    fn rows_sum_to_one() {
        let mut counts = TransitionCounts::default();
        for (i, s2) in [0, 1, 2, 1, 1, 0, 2].iter().enumerate() {
            counts.record(i % 3, *s2);
        }
        let est = SegmentEstimate::from_counts(&counts, 3, 1, 2);
        for pair in est.observed_pairs() {
            let total: f64 = est.row(pair).unwrap().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
