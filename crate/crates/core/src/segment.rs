//! Slicing trajectories into segments and single-step sub-blocks, and the
//! resulting transition count tables.
//!
//! A trajectory of length `T_n` is cut into four segments of `T = ⌊T_n/4⌋`
//! steps; the second and fourth are the two observation windows. Each window
//! is split into `G` sub-blocks of `⌊T/G⌋` steps. In [`CountMode::Discard`]
//! only one transition per sub-block is kept (the anchor); in
//! [`CountMode::Full`] every transition inside the window is counted.
//!
//! Whole-trajectory counts (used by model estimation, EM and
//! classification) split the full trajectory into `G` blocks of `⌊T_n/G⌋`
//! steps and, under `Discard`, keep the last transition of each block.
//!
//! A transition `(s_t, a_t, s_{t+1})` belongs to the window containing `t`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::Trajectory;
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CountMode {
    /// Keep one transition per sub-block.
    Discard,
    /// Count every transition.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AnchorRule {
    FirstInSubblock,
    LastInBlock,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentScheme {
    /// Trajectory length `T_n`.
    pub len: usize,
    /// Blocks per window `G`.
    pub blocks: usize,
    pub mode: CountMode,
    /// Anchor used inside the two observation windows.
    pub window_anchor: AnchorRule,
    /// Anchor used for whole-trajectory counts.
    pub whole_anchor: AnchorRule,
}

impl SegmentScheme {
    pub fn new(len: usize, blocks: usize, mode: CountMode) -> Result<Self> {
        let scheme = SegmentScheme {
            len,
            blocks,
            mode,
            window_anchor: AnchorRule::FirstInSubblock,
            whole_anchor: AnchorRule::LastInBlock,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::ZeroBlocks);
        }
        if self.len < 4 * self.blocks {
            return Err(Error::SegmentUnderflow {
                len: self.len,
                blocks: self.blocks,
            });
        }
        Ok(())
    }

    pub fn segment_len(&self) -> usize {
        self.len / 4
    }

    /// Half-open timestep range of observation window `w` (0 → second
    /// segment, 1 → fourth segment).
    pub fn window(&self, w: usize) -> (usize, usize) {
        let t = self.segment_len();
        let start = (2 * w + 1) * t;
        (start, start + t)
    }

    /// Timesteps recorded for window `w`, in increasing order.
    pub fn window_timesteps(&self, w: usize) -> Vec<usize> {
        let (start, end) = self.window(w);
        match self.mode {
            CountMode::Full => (start..end).collect(),
            CountMode::Discard => {
                anchors(start, self.segment_len() / self.blocks, self.blocks, self.window_anchor)
            }
        }
    }

    /// Timesteps recorded for the whole-trajectory counts.
    pub fn whole_timesteps(&self) -> Vec<usize> {
        match self.mode {
            CountMode::Full => (0..self.len).collect(),
            CountMode::Discard => anchors(0, self.len / self.blocks, self.blocks, self.whole_anchor),
        }
    }
}

fn anchors(start: usize, width: usize, blocks: usize, rule: AnchorRule) -> Vec<usize> {
    (0..blocks)
        .map(|b| match rule {
            AnchorRule::FirstInSubblock => start + b * width,
            AnchorRule::LastInBlock => start + (b + 1) * width - 1,
        })
        .collect()
}

/// Observation count for one `(s, a)` pair with its next-state histogram.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub total: u64,
    pub next: BTreeMap<usize, u64>,
}

/// Sparse `(s,a) → counts` map. Keys are flat pair indices `s·A + a`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    pairs: BTreeMap<usize, PairCounts>,
}

impl TransitionCounts {
    pub fn record(&mut self, pair: usize, next: usize) {
        let entry = self.pairs.entry(pair).or_default();
        entry.total += 1;
        *entry.next.entry(next).or_insert(0) += 1;
    }

    pub fn get(&self, pair: usize) -> Option<&PairCounts> {
        self.pairs.get(&pair)
    }

    pub fn count(&self, pair: usize) -> u64 {
        self.pairs.get(&pair).map_or(0, |c| c.total)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &PairCounts)> {
        self.pairs.iter().map(|(&k, v)| (k, v))
    }

    pub fn pairs(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.keys().copied()
    }

    pub fn total(&self) -> u64 {
        self.pairs.values().map(|c| c.total).sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Counts extracted from one trajectory. Carries no label.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub id: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub blocks: usize,
    pub mode: CountMode,
    pub first_state: usize,
    /// Counts inside the two observation windows.
    pub windows: [TransitionCounts; 2],
    /// Whole-trajectory counts.
    pub whole: TransitionCounts,
}

impl CountTable {
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }
}

pub fn segment_trajectory(
    traj: &Trajectory,
    scheme: &SegmentScheme,
    num_states: usize,
    num_actions: usize,
) -> Result<CountTable> {
    scheme.validate()?;
    traj.validate(num_states, num_actions)?;
    if traj.len() < scheme.len {
        return Err(Error::SegmentUnderflow {
            len: traj.len(),
            blocks: scheme.blocks,
        });
    }
    let record = |steps: Vec<usize>| {
        let mut counts = TransitionCounts::default();
        for t in steps {
            let pair = traj.states[t] * num_actions + traj.actions[t];
            counts.record(pair, traj.states[t + 1]);
        }
        counts
    };
    Ok(CountTable {
        id: traj.id,
        num_states,
        num_actions,
        blocks: scheme.blocks,
        mode: scheme.mode,
        first_state: traj.states[0],
        windows: [record(scheme.window_timesteps(0)), record(scheme.window_timesteps(1))],
        whole: record(scheme.whole_timesteps()),
    })
}

pub fn segment_dataset(
    trajs: &[Trajectory],
    scheme: &SegmentScheme,
    num_states: usize,
    num_actions: usize,
) -> Result<Vec<CountTable>> {
    trajs
        .iter()
        .map(|t| segment_trajectory(t, scheme, num_states, num_actions))
        .collect()
}

/// Index sets into a dataset: one part for subspace estimation, the rest for
/// clustering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub sub: Vec<usize>,
    pub clust: Vec<usize>,
}

/// Shuffles the dataset positions with a seeded generator and sends the first
/// `⌊fraction·N⌋` to the subspace set. Both index lists come back sorted.
pub fn split_dataset(ids: &[u64], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ids.len();
    let n_sub = libm::floor(fraction * n as f64) as usize;
    // order by id first so the split depends on the id set and seed only
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (ids[i], i));
    let mut rng = stream_rng(seed, u64::MAX);
    order.shuffle(&mut rng);
    let mut sub: Vec<usize> = order[..n_sub].to_vec();
    let mut clust: Vec<usize> = order[n_sub..].to_vec();
    sub.sort_unstable();
    clust.sort_unstable();
    Ok(DatasetSplit { sub, clust })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn alternating(len: usize) -> Trajectory {
        Trajectory {
            id: 0,
            states: (0..=len).map(|t| t % 2).collect(),
            actions: vec![0; len],
            true_label: Some(1),
            rewards: None,
        }
    }

    #[test]
    fn discard_records_anchor_pairs() {
        let traj = alternating(8);
        let scheme = SegmentScheme::new(8, 1, CountMode::Discard).unwrap();
        assert_eq!(scheme.window_timesteps(0), vec![2]);
        assert_eq!(scheme.window_timesteps(1), vec![6]);
        let table = segment_trajectory(&traj, &scheme, 2, 1).unwrap();
        // timestep 2: state 0 → 1, timestep 6: state 0 → 1
        assert_eq!(table.windows[0].total(), 1);
        assert_eq!(table.windows[0].get(0).unwrap().next.get(&1), Some(&1));
        assert_eq!(table.windows[1].get(0).unwrap().next.get(&1), Some(&1));
        // whole trajectory: one block, last timestep 7 (state 1 → 0)
        assert_eq!(table.whole.get(1).unwrap().next.get(&0), Some(&1));
        assert_eq!(table.whole.total(), 1);
    }

    #[test]
    fn full_mode_counts_window() {
        let traj = alternating(8);
        let scheme = SegmentScheme::new(8, 1, CountMode::Full).unwrap();
        let table = segment_trajectory(&traj, &scheme, 2, 1).unwrap();
        // window [2,4): states 0,1 at t=2,3
        assert_eq!(table.windows[0].count(0), 1);
        assert_eq!(table.windows[0].count(1), 1);
        assert_eq!(table.whole.total(), 8);
    }

    #[test]
    fn rejects_underflow_and_zero_blocks() {
        assert!(matches!(
            SegmentScheme::new(7, 2, CountMode::Full),
            Err(Error::SegmentUnderflow { .. })
        ));
        assert_eq!(SegmentScheme::new(8, 0, CountMode::Full), Err(Error::ZeroBlocks));
        let scheme = SegmentScheme::new(16, 2, CountMode::Full).unwrap();
        assert!(segment_trajectory(&alternating(8), &scheme, 2, 1).is_err());
    }

    #[test]
    fn table_has_no_label() {
        // the only per-trajectory identity carried is the id
        let scheme = SegmentScheme::new(8, 2, CountMode::Full).unwrap();
        let a = segment_trajectory(&alternating(8), &scheme, 2, 1).unwrap();
        let mut unlabeled = alternating(8);
        unlabeled.true_label = None;
        assert_eq!(a, segment_trajectory(&unlabeled, &scheme, 2, 1).unwrap());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<u64> = (0..10).collect();
        let s = split_dataset(&ids, 0.5, 7).unwrap();
        assert_eq!((s.sub.len(), s.clust.len()), (5, 5));
        assert_eq!(s, split_dataset(&ids, 0.5, 7).unwrap());

        let ids: Vec<u64> = (0..1000).collect();
        let s = split_dataset(&ids, 0.3, 1).unwrap();
        assert_eq!(s.sub.len(), 300);
        let mut all: Vec<usize> = s.sub.iter().chain(&s.clust).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ids = [1u64, 2, 3];
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(split_dataset(&ids, f, 0).is_err());
        }
        assert_eq!(split_dataset(&[], 0.5, 0), Err(Error::EmptyDataset));
    }
}
