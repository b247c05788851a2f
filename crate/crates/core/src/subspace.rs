//! Subspace estimation from double-estimator second moments.
//!
//! For every `(s,a)` observed in both windows of some trajectory,
//! `M̂_{s,a}` averages `P̂_{n,1}(·|s,a) P̂_{n,2}(·|s,a)ᵀ` over those
//! trajectories; its top-`K` eigenspace (by `|λ|`, after symmetrizing)
//! approximates the span of the `K` true next-state distributions. The
//! occupancy moment `D̂` averages `d̂_{n,1} d̂_{n,2}ᵀ` over all trajectories.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::WindowPair;
use crate::linalg::{top_k_with_spectrum, Matrix};

/// Second-moment estimates over the subspace set.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub num_states: usize,
    pub num_actions: usize,
    /// `M̂_{s,a}` per flat pair; `None` when no trajectory saw the pair in
    /// both windows.
    pub transition: Vec<Option<Matrix>>,
    /// `D̂`, `SA × SA`.
    pub occupancy: Matrix,
    /// `N_traj(s,a)`.
    pub traj_counts: Vec<usize>,
    pub num_trajectories: usize,
}

pub fn accumulate_moments(estimates: &[WindowPair]) -> Result<Moments> {
    let first = estimates.first().ok_or(Error::EmptyDataset)?;
    let (s_n, a_n) = (first.first.num_states, first.first.num_actions);
    let sa = s_n * a_n;
    let mut sums: Vec<Option<Matrix>> = vec![None; sa];
    let mut traj_counts = vec![0usize; sa];
    let mut occupancy = Matrix::zeros(sa, sa);

    for est in estimates {
        if est.first.num_states != s_n || est.first.num_actions != a_n {
            return Err(Error::Dimension("estimates disagree on S or A".into()));
        }
        for pair in est.first.observed_pairs() {
            let (Some(p1), Some(p2)) = (est.first.row(pair), est.second.row(pair)) else {
                continue;
            };
            traj_counts[pair] += 1;
            let m = sums[pair].get_or_insert_with(|| Matrix::zeros(s_n, s_n));
            for (i, &x) in p1.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (j, &y) in p2.iter().enumerate() {
                    if y != 0.0 {
                        m.add_to(i, j, x * y);
                    }
                }
            }
        }
        let d2: Vec<(usize, f64)> = est.second.occupancy_entries().collect();
        for (i, x) in est.first.occupancy_entries() {
            for &(j, y) in &d2 {
                occupancy.add_to(i, j, x * y);
            }
        }
    }
    for (pair, m) in sums.iter_mut().enumerate() {
        if let Some(m) = m {
            m.scale(1.0 / traj_counts[pair] as f64);
        }
    }
    occupancy.scale(1.0 / estimates.len() as f64);
    Ok(Moments {
        num_states: s_n,
        num_actions: a_n,
        transition: sums,
        occupancy,
        traj_counts,
        num_trajectories: estimates.len(),
    })
}

/// Per-pair projectors and the occupancy projector.
///
/// Each `pair_projectors[sa]` is an `r × S` matrix with orthonormal rows
/// (`r = K` for learned projectors); `VᵀV` is the orthogonal projector onto
/// the estimated span. Pairs never seen in both windows carry a zero matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBank {
    pub num_states: usize,
    pub num_actions: usize,
    pub k: usize,
    pub pair_projectors: Vec<Matrix>,
    /// `K × SA`, orthonormal rows.
    pub occupancy_projector: Matrix,
    pub traj_counts: Vec<usize>,
    /// Eigenvalues of the symmetric part `(M̂ + M̂ᵀ)/2` per pair, sorted by
    /// decreasing magnitude. Empty for unobserved pairs.
    pub spectra: Vec<Vec<f64>>,
}

impl SubspaceBank {
    pub fn from_moments(moments: &Moments, k: usize) -> Result<Self> {
        let (s_n, a_n) = (moments.num_states, moments.num_actions);
        if k == 0 || k > s_n {
            return Err(Error::InvalidParameter(format!("K = {k} must be in 1..={s_n}")));
        }
        let mut pair_projectors = Vec::with_capacity(s_n * a_n);
        let mut spectra = Vec::with_capacity(s_n * a_n);
        for (pair, m) in moments.transition.iter().enumerate() {
            match m {
                Some(m) => {
                    let mut sym = m.symmetrized_sum();
                    sym.scale(0.5);
                    let (basis, spectrum) =
                        top_k_with_spectrum(&sym, k).map_err(|e| with_pair(e, pair, a_n))?;
                    pair_projectors.push(basis);
                    spectra.push(spectrum);
                }
                None => {
                    pair_projectors.push(Matrix::zeros(k, s_n));
                    spectra.push(Vec::new());
                }
            }
        }
        let kd = k.min(s_n * a_n);
        let occupancy_projector = top_k_projector_or_context(&moments.occupancy, kd)?;
        Ok(SubspaceBank {
            num_states: s_n,
            num_actions: a_n,
            k,
            pair_projectors,
            occupancy_projector,
            traj_counts: moments.traj_counts.clone(),
            spectra,
        })
    }

    pub fn projector(&self, pair: usize) -> &Matrix {
        &self.pair_projectors[pair]
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Same bank with different per-pair projectors (identity or random
    /// baselines). Every matrix must have `S` columns.
    pub fn with_pair_projectors(&self, projectors: Vec<Matrix>) -> Result<Self> {
        if projectors.len() != self.num_pairs()
            || projectors.iter().any(|p| p.cols() != self.num_states)
        {
            return Err(Error::Dimension("replacement projectors have the wrong shape".into()));
        }
        Ok(SubspaceBank {
            pair_projectors: projectors,
            ..self.clone()
        })
    }
}

fn with_pair(err: Error, pair: usize, a_n: usize) -> Error {
    match err {
        Error::EigenNoConvergence { context } => Error::EigenNoConvergence {
            context: format!("(s={}, a={}): {context}", pair / a_n, pair % a_n),
        },
        other => other,
    }
}

fn top_k_projector_or_context(d: &Matrix, k: usize) -> Result<Matrix> {
    let sym = d.symmetrized_sum();
    match top_k_with_spectrum(&sym, k) {
        Ok((basis, _)) => Ok(basis),
        Err(Error::EigenNoConvergence { context }) => Err(Error::EigenNoConvergence {
            context: format!("occupancy moment: {context}"),
        }),
        Err(e) => Err(e),
    }
}

/// Runs moment accumulation and eigen-decomposition in one go.
pub fn estimate_subspaces(estimates: &[WindowPair], k: usize) -> Result<SubspaceBank> {
    SubspaceBank::from_moments(&accumulate_moments(estimates)?, k)
}

/// Mean squared eigenvalue by rank over the observed pairs.
pub fn eigen_energy_profile(bank: &SubspaceBank) -> Vec<f64> {
    let mut sums = vec![0.0; bank.num_states];
    let mut observed = 0usize;
    for spectrum in bank.spectra.iter().filter(|s| !s.is_empty()) {
        observed += 1;
        for (r, &lam) in spectrum.iter().enumerate() {
            sums[r] += lam * lam;
        }
    }
    if observed > 0 {
        for s in &mut sums {
            *s /= observed as f64;
        }
    }
    sums
}

/// Smallest rank `r ≥ 2` whose energy exceeds `factor` times that of
/// `r + 1`, else 1 if rank 1 alone clears it. Rank 1 carries the mean
/// kernel shared by all labels and usually dominates on its own.
pub fn select_k(profile: &[f64], factor: f64) -> Option<usize> {
    let drops = |w: &[f64]| w[0] > factor * w[1];
    profile
        .windows(2)
        .skip(1)
        .position(drops)
        .map(|r| r + 2)
        .or_else(|| profile.windows(2).next().filter(|w| drops(w)).map(|_| 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::SegmentEstimate;
    use crate::segment::TransitionCounts;

    fn pair_with_rows(rows: &[(usize, &[usize], &[usize])], s_n: usize, a_n: usize) -> WindowPair {
        let mut c1 = TransitionCounts::default();
        let mut c2 = TransitionCounts::default();
        for &(pair, n1, n2) in rows {
            for &s in n1 {
                c1.record(pair, s);
            }
            for &s in n2 {
                c2.record(pair, s);
            }
        }
        WindowPair {
            first: SegmentEstimate::from_counts(&c1, s_n, a_n, 1),
            second: SegmentEstimate::from_counts(&c2, s_n, a_n, 1),
        }
    }

    #[test]
    fn deterministic_chain_rank_one() {
        let est = pair_with_rows(&[(0, &[2, 2], &[2])], 3, 1);
        let m = accumulate_moments(&[est]).unwrap();
        let mhat = m.transition[0].as_ref().unwrap();
        let mut expected = Matrix::zeros(3, 3);
        expected.set(2, 2, 1.0);
        assert_eq!(mhat, &expected);
        assert!(m.transition[1].is_none());
        assert_eq!(m.traj_counts, alloc::vec![1, 0, 0]);
    }

    #[test]
    fn averages_two_trajectories() {
        // u = (1/2, 1/2, 0), v = (0, 0, 1)
        let a = pair_with_rows(&[(0, &[0, 1], &[0, 1])], 3, 1);
        let b = pair_with_rows(&[(0, &[2], &[2])], 3, 1);
        let m = accumulate_moments(&[a, b]).unwrap();
        let mhat = m.transition[0].as_ref().unwrap();
        let expected = [0.125, 0.125, 0.0, 0.125, 0.125, 0.0, 0.0, 0.0, 0.5];
        assert_eq!(mhat.as_slice(), &expected);
    }

    #[test]
    fn one_sided_observations_do_not_count() {
        let a = pair_with_rows(&[(0, &[1], &[])], 2, 1);
        let m = accumulate_moments(&[a]).unwrap();
        assert!(m.transition[0].is_none());
        assert_eq!(m.traj_counts[0], 0);
        let bank = SubspaceBank::from_moments(&m, 1).unwrap();
        assert!(bank.projector(0).is_zero());
        assert!(bank.spectra[0].is_empty());
    }

    #[test]
    fn energy_profile_of_rank_one() {
        let est = pair_with_rows(&[(0, &[0, 1], &[0, 1])], 2, 1);
        let bank = estimate_subspaces(&[est], 1).unwrap();
        let profile = eigen_energy_profile(&bank);
        // u = (1/2, 1/2): ‖u‖⁴ = 1/4
        assert!((profile[0] - 0.25).abs() < 1e-15);
        assert!(profile[1].abs() < 1e-15);
    }

    #[test]
    fn k_selection() {
        assert_eq!(select_k(&[5.0, 4.0, 0.1, 0.05], 10.0), Some(2));
        assert_eq!(select_k(&[1.0, 0.9], 10.0), None);
        assert_eq!(select_k(&[0.56, 0.039, 6e-5, 2e-6], 10.0), Some(2));
        assert_eq!(select_k(&[1.0, 0.01, 0.005], 10.0), Some(1));
        assert_eq!(select_k(&[0.56, 0.039, 6e-5, 2e-6, 1e-35], 10.0), Some(2));
    }

    #[test]
    fn rejects_bad_k() {
        let est = pair_with_rows(&[(0, &[0], &[0])], 2, 1);
        let m = accumulate_moments(&[est]).unwrap();
        assert!(SubspaceBank::from_moments(&m, 0).is_err());
        assert!(SubspaceBank::from_moments(&m, 3).is_err());
    }
}
