//! Label-permutation-invariant accuracy and projector baselines.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_rows, Matrix};
use crate::rng::stream_rng;

/// Exhaustive search is used up to this many labels, the Hungarian
/// algorithm beyond it.
pub const EXHAUSTIVE_MAX_K: usize = 6;
pub const MAX_K: usize = 12;

/// `confusion[p][t]`: items predicted `p` whose true label is `t`.
pub fn confusion(predicted: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(alloc::format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        for l in [p, t] {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, k });
            }
        }
        c[p][t] += 1;
    }
    Ok(c)
}

/// Best relabeling of predictions: `mapping[p]` is the true label matched
/// to predicted label `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub accuracy: f64,
    pub mapping: Vec<usize>,
}

impl Matching {
    pub fn relabel(&self, predicted: &[usize]) -> Vec<usize> {
        predicted.iter().map(|&p| self.mapping[p]).collect()
    }
}

/// `max_σ (1/N) Σ 1{σ(predicted_n) = truth_n}` over permutations of `0..k`.
pub fn permutation_match(predicted: &[usize], truth: &[usize], k: usize) -> Result<Matching> {
    if k > MAX_K {
        return Err(Error::PermutationTooLarge(k));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = confusion(predicted, truth, k)?;
    let (best, mapping) = if k <= EXHAUSTIVE_MAX_K {
        best_assignment_exhaustive(&c)
    } else {
        best_assignment_hungarian(&c)
    };
    Ok(Matching {
        accuracy: best as f64 / predicted.len() as f64,
        mapping,
    })
}

pub fn permutation_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    Ok(permutation_match(predicted, truth, k)?.accuracy)
}

/// Best matched count over all permutations (Heap's algorithm); the first
/// permutation reaching the maximum wins.
pub fn best_assignment_exhaustive(c: &[Vec<usize>]) -> (usize, Vec<usize>) {
    let k = c.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let score = |p: &[usize]| (0..k).map(|i| c[i][p[i]]).sum::<usize>();
    let mut best = (score(&perm), perm.clone());
    let mut stack = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            let s = score(&perm);
            if s > best.0 {
                best = (s, perm.clone());
            }
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best
}

/// Maximum-weight perfect matching on a square matrix via the Hungarian
/// algorithm (potentials form) on negated costs.
pub fn best_assignment_hungarian(c: &[Vec<usize>]) -> (usize, Vec<usize>) {
    let n = c.len();
    let max = c.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| max - c[i - 1][j - 1] as i64;
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[p[j] - 1] = j - 1;
    }
    ((1..=n).map(|j| c[p[j] - 1][j - 1]).sum(), mapping)
}

/// `1 - permutation_accuracy`.
pub fn permutation_error(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    Ok(1.0 - permutation_accuracy(predicted, truth, k)?)
}

/// Random `dim`-dimensional subspace of `R^n`: a Gaussian `dim × n` matrix
/// with orthonormalized rows.
pub fn random_projector(dim: usize, n: usize, seed: u64, stream: u64) -> Result<Matrix> {
    if dim == 0 || dim > n {
        return Err(Error::InvalidParameter(alloc::format!(
            "projection dimension {dim} must be in 1..={n}"
        )));
    }
    let mut rng = stream_rng(seed, stream);
    let data: Vec<f64> = (0..dim * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut m = Matrix::from_rows(dim, n, data)?;
    orthonormalize_rows(&mut m);
    Ok(m)
}
