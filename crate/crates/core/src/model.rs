//! Ground-truth mixtures and sampled trajectories.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-12;

pub(crate) fn check_simplex(v: &[f64], what: &dyn Fn() -> String) -> Result<()> {
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidModel(format!("{} has a negative or non-finite entry", what())));
    }
    let total: f64 = v.iter().sum();
    if libm::fabs(total - 1.0) > SIMPLEX_TOL {
        return Err(Error::InvalidModel(format!("{} sums to {total}", what())));
    }
    Ok(())
}

/// A mixture of `K` MDPs over `S` states and `A` actions. `A = 1` is a
/// mixture of Markov chains.
///
/// Kernels are stored flat as `[s][a][s']`, policies as `[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovMixture {
    num_states: usize,
    num_actions: usize,
    kernels: Vec<Vec<f64>>,
    policies: Vec<Vec<f64>>,
    start_dists: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl MarkovMixture {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        kernels: Vec<Vec<f64>>,
        policies: Vec<Vec<f64>>,
        start_dists: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let m = MarkovMixture {
            num_states,
            num_actions,
            kernels,
            policies,
            start_dists,
            weights,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let (s_n, a_n, k_n) = (self.num_states, self.num_actions, self.weights.len());
        if s_n == 0 || a_n == 0 || k_n == 0 {
            return Err(Error::InvalidModel(format!(
                "need S, A, K >= 1 (got S={s_n}, A={a_n}, K={k_n})"
            )));
        }
        if self.kernels.len() != k_n || self.policies.len() != k_n || self.start_dists.len() != k_n
        {
            return Err(Error::InvalidModel(format!(
                "expected {k_n} kernels, policies and start distributions"
            )));
        }
        check_simplex(&self.weights, &|| "mixture weights".into())?;
        for k in 0..k_n {
            if self.kernels[k].len() != s_n * a_n * s_n {
                return Err(Error::InvalidModel(format!("kernel {k} has wrong size")));
            }
            if self.policies[k].len() != s_n * a_n {
                return Err(Error::InvalidModel(format!("policy {k} has wrong size")));
            }
            if self.start_dists[k].len() != s_n {
                return Err(Error::InvalidModel(format!("start distribution {k} has wrong size")));
            }
            for s in 0..s_n {
                for a in 0..a_n {
                    check_simplex(self.kernel_row(k, s, a), &|| {
                        format!("kernel {k} row (s={s}, a={a})")
                    })?;
                }
                check_simplex(self.policy_row(k, s), &|| format!("policy {k} at state {s}"))?;
            }
            check_simplex(&self.start_dists[k], &|| format!("start distribution {k}"))?;
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_labels(&self) -> usize {
        self.weights.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        &self.kernels[k]
    }

    pub fn kernel_row(&self, k: usize, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.kernels[k][base..base + self.num_states]
    }

    pub fn policy(&self, k: usize) -> &[f64] {
        &self.policies[k]
    }

    pub fn policy_row(&self, k: usize, s: usize) -> &[f64] {
        &self.policies[k][s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn start_dist(&self, k: usize) -> &[f64] {
        &self.start_dists[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One sampled episode. `states` has one more entry than `actions`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    /// Hidden label, kept for evaluation only.
    pub true_label: Option<usize>,
    /// Carried through untouched; learning never reads it.
    pub rewards: Option<Vec<f64>>,
}

impl Trajectory {
    /// Number of transitions `T_n`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        let fail = |reason: String| Error::InvalidTrajectory { id: self.id, reason };
        if self.states.len() != self.actions.len() + 1 {
            return Err(fail(format!(
                "{} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(&s) = self.states.iter().find(|&&s| s >= num_states) {
            return Err(fail(format!("state {s} out of range (S={num_states})")));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= num_actions) {
            return Err(fail(format!("action {a} out of range (A={num_actions})")));
        }
        Ok(())
    }
}

/// Checks that every trajectory is valid and that all share one length.
pub fn validate_dataset(trajs: &[Trajectory], num_states: usize, num_actions: usize) -> Result<usize> {
    let first = trajs.first().ok_or(Error::EmptyDataset)?;
    let len = first.len();
    for t in trajs {
        t.validate(num_states, num_actions)?;
        if t.len() != len {
            return Err(Error::MixedLengths {
                expected: len,
                found: t.len(),
            });
        }
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn chain(p: f64) -> MarkovMixture {
        MarkovMixture::new(
            2,
            1,
            vec![vec![1.0 - p, p, p, 1.0 - p]],
            vec![vec![1.0, 1.0]],
            vec![vec![0.5, 0.5]],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn accessors() {
        let m = chain(0.3);
        assert_eq!(m.kernel_row(0, 1, 0), &[0.3, 0.7]);
        assert_eq!(m.num_labels(), 1);
        assert_eq!(m.num_pairs(), 2);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = MarkovMixture::new(
            2,
            1,
            vec![vec![0.5, 0.6, 0.5, 0.5]],
            vec![vec![1.0, 1.0]],
            vec![vec![0.5, 0.5]],
            vec![1.0],
        );
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let err = MarkovMixture::new(0, 1, vec![], vec![], vec![], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn trajectory_checks() {
        let t = Trajectory {
            id: 3,
            states: vec![0, 1, 2],
            actions: vec![0, 0],
            true_label: None,
            rewards: None,
        };
        assert!(t.validate(3, 1).is_ok());
        assert!(t.validate(2, 1).is_err());
        let bad = Trajectory {
            states: vec![0, 1],
            ..t.clone()
        };
        assert!(bad.validate(3, 1).is_err());
        let short = Trajectory {
            states: vec![0],
            actions: vec![],
            ..t.clone()
        };
        assert!(matches!(
            validate_dataset(&[t, short], 3, 1),
            Err(Error::MixedLengths { .. })
        ));
    }
}
