//! Per-cluster model estimation and classification of new trajectories.

use alloc::vec;
use alloc::vec::Vec;

use crate::clustering::FrequentPairs;
use crate::em::{finish_estimate, log_scores, EmData, EmScope, ModelEstimate};
use crate::error::{Error, Result};
use crate::estimators::WindowPair;
use crate::linalg::{dot, top_k_with_spectrum, Matrix};
use crate::segment::CountTable;
use crate::subspace::SubspaceBank;

/// Models pooled from the whole-trajectory counts of each cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModels {
    pub model: ModelEstimate,
    /// `f̂_{k,s,a}`: share of the trajectories visiting `(s,a)` that belong
    /// to cluster `k`. Zero for pairs nobody visited. `K × SA`.
    pub prevalence: Vec<Vec<f64>>,
    /// `d̂_k`: mean over the cluster of whole-trajectory `N(s,a)/G`.
    pub occupancy: Vec<Vec<f64>>,
    pub cluster_sizes: Vec<usize>,
}

pub fn estimate_models(tables: &[CountTable], labels: &[usize], k: usize) -> Result<ClusterModels> {
    let first = tables.first().ok_or(Error::EmptyDataset)?;
    if labels.len() != tables.len() {
        return Err(Error::Dimension("one label per trajectory is required".into()));
    }
    let (s_n, a_n) = (first.num_states, first.num_actions);
    let sa = s_n * a_n;
    let mut trans = vec![vec![0u64; sa * s_n]; k];
    let mut pair_tot = vec![vec![0u64; sa]; k];
    let mut starts = vec![vec![0u64; s_n]; k];
    let mut sizes = vec![0usize; k];
    let mut occupancy = vec![vec![0.0; sa]; k];
    let mut visitors = vec![vec![0usize; sa]; k];
    for (t, &l) in tables.iter().zip(labels) {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, k });
        }
        if t.num_states != s_n || t.num_actions != a_n {
            return Err(Error::Dimension("count tables disagree on S or A".into()));
        }
        sizes[l] += 1;
        starts[l][t.first_state] += 1;
        for (pair, c) in t.whole.iter() {
            pair_tot[l][pair] += c.total;
            if c.total > 0 {
                visitors[l][pair] += 1;
            }
            occupancy[l][pair] += c.total as f64 / t.blocks as f64;
            for (&s2, &n) in &c.next {
                trans[l][pair * s_n + s2] += n;
            }
        }
    }
    for (occ, &size) in occupancy.iter_mut().zip(&sizes) {
        if size > 0 {
            occ.iter_mut().for_each(|x| *x /= size as f64);
        }
    }
    let mut prevalence = vec![vec![0.0; sa]; k];
    for pair in 0..sa {
        let total: usize = visitors.iter().map(|v| v[pair]).sum();
        if total > 0 {
            for c in 0..k {
                prevalence[c][pair] = visitors[c][pair] as f64 / total as f64;
            }
        }
    }
    let to_f64 = |v: Vec<Vec<u64>>| -> Vec<Vec<f64>> {
        v.into_iter().map(|r| r.into_iter().map(|x| x as f64).collect()).collect()
    };
    let model = finish_estimate(
        s_n,
        a_n,
        tables.len(),
        sizes.iter().map(|&s| s as f64).collect(),
        to_f64(trans),
        to_f64(pair_tot),
        to_f64(starts),
    )?;
    Ok(ClusterModels {
        model,
        prevalence,
        occupancy,
        cluster_sizes: sizes,
    })
}

/// Subspaces recomputed from the cluster models:
/// `M̃_{s,a} = Σ_k f̂_{k,s,a} P̂_k P̂_kᵀ` and `D̃ = Σ_k d̂_k d̂_kᵀ`.
pub fn refined_bank(models: &ClusterModels, k: usize) -> Result<SubspaceBank> {
    let m = &models.model;
    let (s_n, a_n) = (m.num_states, m.num_actions);
    let sa = s_n * a_n;
    if k == 0 || k > s_n {
        return Err(Error::InvalidParameter(alloc::format!("K = {k} must be in 1..={s_n}")));
    }
    let mut pair_projectors = Vec::with_capacity(sa);
    let mut spectra = Vec::with_capacity(sa);
    let mut traj_counts = Vec::with_capacity(sa);
    for pair in 0..sa {
        let mut acc = Matrix::zeros(s_n, s_n);
        let mut contributors = 0;
        for c in 0..m.num_labels() {
            let w = models.prevalence[c][pair];
            let Some(row) = m.kernel_row(c, pair) else { continue };
            if w == 0.0 {
                continue;
            }
            contributors += 1;
            for i in 0..s_n {
                for j in 0..s_n {
                    acc.add_to(i, j, w * row[i] * row[j]);
                }
            }
        }
        traj_counts.push(contributors);
        if contributors == 0 {
            pair_projectors.push(Matrix::zeros(k, s_n));
            spectra.push(Vec::new());
        } else {
            let (basis, spectrum) = top_k_with_spectrum(&acc, k)?;
            pair_projectors.push(basis);
            spectra.push(spectrum);
        }
    }
    let mut d = Matrix::zeros(sa, sa);
    for occ in &models.occupancy {
        for i in 0..sa {
            if occ[i] == 0.0 {
                continue;
            }
            for j in 0..sa {
                d.add_to(i, j, occ[i] * occ[j]);
            }
        }
    }
    let (occupancy_projector, _) = top_k_with_spectrum(&d, k.min(sa))?;
    Ok(SubspaceBank {
        num_states: s_n,
        num_actions: a_n,
        k,
        pair_projectors,
        occupancy_projector,
        traj_counts,
        spectra,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// `None` when no frequent pair was seen in both windows and `λ = 1`.
    pub labels: Vec<Option<usize>>,
    /// Distance to every cluster, row-major `N × K`; `NaN` for
    /// unclassifiable trajectories.
    pub distances: Vec<f64>,
}

impl Classification {
    pub fn unclassifiable(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

fn project_diff(v: &Matrix, x: Option<&[f64]>, y: Option<&[f64]>) -> Vec<f64> {
    let n = v.cols();
    let zero = vec![0.0; n];
    let (x, y) = (x.unwrap_or(&zero), y.unwrap_or(&zero));
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    v.apply(&diff)
}

/// Assigns each trajectory to the cluster whose model is closest under the
/// double-estimator distance.
pub fn classify(
    estimates: &[WindowPair],
    models: &ClusterModels,
    bank: &SubspaceBank,
    freq: &FrequentPairs,
    lambda: f64,
) -> Result<Classification> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(alloc::format!("lambda = {lambda} outside [0, 1]")));
    }
    let m = &models.model;
    let k_n = m.num_labels();
    let mut labels = Vec::with_capacity(estimates.len());
    let mut distances = Vec::with_capacity(estimates.len() * k_n);
    for est in estimates {
        let observed: Vec<usize> =
            freq.pairs.iter().copied().filter(|&p| est.observed_in_both(p)).collect();
        if observed.is_empty() && lambda == 1.0 {
            labels.push(None);
            distances.extend(core::iter::repeat_n(f64::NAN, k_n));
            continue;
        }
        let d1 = est.first.occupancy_dense();
        let d2 = est.second.occupancy_dense();
        let u = &bank.occupancy_projector;
        let mut row = Vec::with_capacity(k_n);
        for c in 0..k_n {
            let dist1 = observed
                .iter()
                .map(|&p| {
                    let v = bank.projector(p);
                    let a = project_diff(v, est.first.row(p), m.kernel_row(c, p));
                    let b = project_diff(v, est.second.row(p), m.kernel_row(c, p));
                    dot(&a, &b)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let occ = &models.occupancy[c];
            let dist2 = dot(
                &project_diff(u, Some(&d1), Some(occ)),
                &project_diff(u, Some(&d2), Some(occ)),
            );
            row.push(if observed.is_empty() {
                dist2
            } else {
                lambda * dist1 + (1.0 - lambda) * dist2
            });
        }
        let mut best = 0;
        for c in 1..k_n {
            if row[c] < row[best] {
                best = c;
            }
        }
        labels.push(Some(best));
        distances.extend(row);
    }
    Ok(Classification { labels, distances })
}

/// Most likely component per trajectory under the model (ties to the lowest
/// label).
pub fn classify_map(data: &EmData, model: &ModelEstimate, scope: &EmScope) -> Vec<usize> {
    let k_n = model.num_labels();
    let scores = log_scores(data, model, scope);
    (0..data.len())
        .map(|i| {
            let row = &scores[i * k_n..(i + 1) * k_n];
            let mut best = 0;
            for c in 1..k_n {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{segment_trajectory, CountMode, SegmentScheme};
    use crate::Trajectory;

    fn table(id: u64, states: &[usize]) -> CountTable {
        let traj = Trajectory {
            id,
            states: states.to_vec(),
            actions: vec![0; states.len() - 1],
            true_label: None,
            rewards: None,
        };
        let scheme = SegmentScheme::new(states.len() - 1, 1, CountMode::Full).unwrap();
        segment_trajectory(&traj, &scheme, 2, 1).unwrap()
    }

    #[test]
    fn pooled_counts_and_prevalence() {
        let tables = [table(0, &[0, 0, 0, 0, 0]), table(1, &[0, 1, 0, 1, 0]), table(2, &[0, 0, 0, 0, 1])];
        let m = estimate_models(&tables, &[0, 1, 0], 2).unwrap();
        assert_eq!(m.cluster_sizes, vec![2, 1]);
        assert_eq!(m.model.kernel_row(0, 0).unwrap(), &[7.0 / 8.0, 1.0 / 8.0]);
        assert!(m.model.kernel_row(0, 1).is_none());
        assert_eq!(m.model.kernel_row(1, 1).unwrap(), &[1.0, 0.0]);
        // pair 0 is visited by all three trajectories
        assert_eq!(m.prevalence[0][0], 2.0 / 3.0);
        assert_eq!(m.prevalence[1][1], 1.0);
        assert_eq!(m.occupancy[0], vec![4.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let tables = [table(0, &[0, 0, 0, 0, 0])];
        assert_eq!(
            estimate_models(&tables, &[2], 2).unwrap_err(),
            Error::LabelOutOfRange { label: 2, k: 2 }
        );
    }
}
