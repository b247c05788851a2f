//! Ground-truth generators: the two-element gridworld mixture, random
//! mixtures with a planted separation, trajectory sampling and mixing-time
//! measurement.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::model::{MarkovMixture, Trajectory};
use crate::rng::{derive_seed, sample_categorical, stream_rng};

/// Grid moves, in action order: north, east, south, west.
const MOVES: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BehaviorPolicy {
    Uniform,
    /// With probability `1 - epsilon` act greedily w.r.t. the values of the
    /// normal gridworld, otherwise uniformly.
    EpsilonGreedy { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    /// Probability of slipping to one of the two perpendicular moves.
    pub slip: f64,
    /// Per-state reward, length `width·height`. Only used to compute values.
    pub rewards: Vec<f64>,
    pub discount: f64,
    /// Fraction of each row moved onto the lowest-value neighbour in the
    /// adversarial element.
    pub adversarial_strength: f64,
    pub policy: BehaviorPolicy,
    pub value_iteration_cap: usize,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        GridworldSpec::new(8, 8)
    }
}

impl GridworldSpec {
    /// A `width × height` grid with a single unit reward in the far corner.
    pub fn new(width: usize, height: usize) -> Self {
        let mut rewards = vec![0.0; width * height];
        if let Some(last) = rewards.last_mut() {
            *last = 1.0;
        }
        GridworldSpec {
            width,
            height,
            slip: 0.1,
            rewards,
            discount: 0.9,
            adversarial_strength: 0.3,
            policy: BehaviorPolicy::EpsilonGreedy { epsilon: 0.5 },
            value_iteration_cap: 10_000,
        }
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    fn step(&self, s: usize, dir: usize) -> usize {
        let (x, y) = ((s % self.width) as isize, (s / self.width) as isize);
        let (dx, dy) = MOVES[dir];
        let (nx, ny) = (x + dx, y + dy);
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            s
        } else {
            ny as usize * self.width + nx as usize
        }
    }

    /// Grid-adjacent states of `s` (walls excluded).
    pub fn neighbors(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..4).map(|d| self.step(s, d)).filter(|&t| t != s).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("grid must be at least 1x1".into()));
        }
        if self.rewards.len() != self.num_states() {
            return Err(Error::InvalidParameter(format!(
                "reward map has {} entries for {} states",
                self.rewards.len(),
                self.num_states()
            )));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::InvalidParameter(format!("slip {} outside [0, 1]", self.slip)));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidParameter(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        if !(0.0..=1.0).contains(&self.adversarial_strength) {
            return Err(Error::InvalidStrength(self.adversarial_strength));
        }
        if let BehaviorPolicy::EpsilonGreedy { epsilon } = self.policy {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Kernel of the normal gridworld, flat `[s][a][s']`.
    pub fn normal_kernel(&self) -> Vec<f64> {
        let n = self.num_states();
        let mut p = vec![0.0; n * 4 * n];
        for s in 0..n {
            for a in 0..4 {
                let row = &mut p[(s * 4 + a) * n..(s * 4 + a + 1) * n];
                row[self.step(s, a)] += 1.0 - self.slip;
                row[self.step(s, (a + 1) % 4)] += self.slip / 2.0;
                row[self.step(s, (a + 3) % 4)] += self.slip / 2.0;
            }
        }
        p
    }
}

fn q_values(spec: &GridworldSpec, kernel: &[f64], values: &[f64]) -> Vec<f64> {
    let n = spec.num_states();
    let mut q = vec![0.0; n * 4];
    for s in 0..n {
        for a in 0..4 {
            let row = &kernel[(s * 4 + a) * n..(s * 4 + a + 1) * n];
            let future: f64 = row.iter().zip(values).map(|(p, v)| p * v).sum();
            q[s * 4 + a] = spec.rewards[s] + spec.discount * future;
        }
    }
    q
}

/// Optimal state values of the normal gridworld by value iteration.
pub fn gridworld_values(spec: &GridworldSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let kernel = spec.normal_kernel();
    let n = spec.num_states();
    let mut values = vec![0.0; n];
    for _ in 0..spec.value_iteration_cap {
        let q = q_values(spec, &kernel, &values);
        let next: Vec<f64> = (0..n)
            .map(|s| q[s * 4..s * 4 + 4].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next
            .iter()
            .zip(&values)
            .fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)));
        values = next;
        if delta < 1e-12 {
            return Ok(values);
        }
    }
    Err(Error::ValueIterationCap(spec.value_iteration_cap))
}

fn close(a: f64, b: f64) -> bool {
    libm::fabs(a - b) <= 1e-9 * (1.0 + libm::fabs(a).max(libm::fabs(b)))
}

/// Lowest-value grid neighbour of every state; ties go to the lowest index.
pub fn adversarial_targets(spec: &GridworldSpec, values: &[f64]) -> Vec<usize> {
    (0..spec.num_states())
        .map(|s| {
            let neighbors = spec.neighbors(s);
            let mut best = match neighbors.first() {
                Some(&t) => t,
                None => return s,
            };
            for &t in &neighbors[1..] {
                if values[t] < values[best] && !close(values[t], values[best]) {
                    best = t;
                }
            }
            best
        })
        .collect()
}

/// Two-element mixture: the normal gridworld and an adversarial copy whose
/// rows move a fraction `η` of their mass onto the lowest-value neighbour.
/// Both elements share one behaviour policy, uniform start states and equal
/// weights.
pub fn build_gridworld_mixture(spec: &GridworldSpec) -> Result<MarkovMixture> {
    let values = gridworld_values(spec)?;
    let n = spec.num_states();
    let normal = spec.normal_kernel();
    let targets = adversarial_targets(spec, &values);
    let eta = spec.adversarial_strength;
    let mut adversarial = normal.clone();
    for s in 0..n {
        for a in 0..4 {
            let row = &mut adversarial[(s * 4 + a) * n..(s * 4 + a + 1) * n];
            for p in row.iter_mut() {
                *p *= 1.0 - eta;
            }
            row[targets[s]] += eta;
        }
    }

    let policy = match spec.policy {
        BehaviorPolicy::Uniform => vec![0.25; n * 4],
        BehaviorPolicy::EpsilonGreedy { epsilon } => {
            let q = q_values(spec, &normal, &values);
            let mut pi = vec![epsilon / 4.0; n * 4];
            for s in 0..n {
                let qs = &q[s * 4..s * 4 + 4];
                let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let greedy: Vec<usize> = (0..4).filter(|&a| close(qs[a], best)).collect();
                for &a in &greedy {
                    pi[s * 4 + a] += (1.0 - epsilon) / greedy.len() as f64;
                }
            }
            pi
        }
    };
    let start = vec![1.0 / n as f64; n];
    MarkovMixture::new(
        n,
        4,
        vec![normal, adversarial],
        vec![policy.clone(), policy],
        vec![start.clone(), start],
        vec![0.5, 0.5],
    )
}

/// A pair of labels and the `(s,a)` that separates them most.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub labels: (usize, usize),
    pub state: usize,
    pub action: usize,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct RandomMixture {
    pub mixture: MarkovMixture,
    /// The planted separating pair (absent when `K = 1`).
    pub planted: Option<(usize, usize)>,
    /// Best separating pair for every label pair, from a full scan.
    pub separations: Vec<Separation>,
}

const RANDOM_MIXTURE_ATTEMPTS: usize = 16;

/// For each label pair, the `(s,a)` with the largest `ℓ₂` gap between rows.
pub fn max_separations(mixture: &MarkovMixture) -> Vec<Separation> {
    let k_n = mixture.num_labels();
    let mut out = Vec::new();
    for k1 in 0..k_n {
        for k2 in (k1 + 1)..k_n {
            let mut best = Separation {
                labels: (k1, k2),
                state: 0,
                action: 0,
                gap: -1.0,
            };
            for s in 0..mixture.num_states() {
                for a in 0..mixture.num_actions() {
                    let gap = l2_gap(mixture.kernel_row(k1, s, a), mixture.kernel_row(k2, s, a));
                    if gap > best.gap {
                        best = Separation {
                            labels: (k1, k2),
                            state: s,
                            action: a,
                            gap,
                        };
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

fn l2_gap(p: &[f64], q: &[f64]) -> f64 {
    libm::sqrt(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn dirichlet_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
    fix_sum(&mut row);
    row
}

/// Pushes the rounding residue of a probability vector onto its largest
/// entry so the sum is one to machine precision.
fn fix_sum(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if let Some(i) = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])) {
        row[i] += 1.0 - total;
    }
}

/// `K` chains sharing a random base kernel. One random `(s,a)` row is
/// replaced in every element by `(1-γ)·e_{t_k} + γ·base` with distinct
/// targets `t_k`, which separates every label pair by
/// `(1-γ)√2 ≥ Δ_target`. Policies and start distributions are uniform.
pub fn build_random_mixture(
    num_states: usize,
    num_actions: usize,
    num_labels: usize,
    separation: f64,
    seed: u64,
) -> Result<RandomMixture> {
    if num_states == 0 || num_actions == 0 || num_labels == 0 {
        return Err(Error::InvalidParameter("S, A and K must be positive".into()));
    }
    if !(separation > 0.0 && separation <= core::f64::consts::SQRT_2) {
        return Err(Error::InvalidParameter(format!(
            "separation target {separation} outside (0, √2]"
        )));
    }
    let (s_n, a_n) = (num_states, num_actions);
    let mut rng = stream_rng(seed, 0);
    let mut base = Vec::with_capacity(s_n * a_n * s_n);
    for _ in 0..s_n * a_n {
        base.extend(dirichlet_row(&mut rng, s_n));
    }
    let policy = vec![1.0 / a_n as f64; s_n * a_n];
    let start = vec![1.0 / s_n as f64; s_n];
    let weights = {
        let mut w = vec![1.0 / num_labels as f64; num_labels];
        fix_sum(&mut w);
        w
    };
    let assemble = |kernels: Vec<Vec<f64>>| {
        MarkovMixture::new(
            s_n,
            a_n,
            kernels,
            vec![policy.clone(); num_labels],
            vec![start.clone(); num_labels],
            weights.clone(),
        )
    };
    if num_labels == 1 {
        return Ok(RandomMixture {
            mixture: assemble(vec![base])?,
            planted: None,
            separations: Vec::new(),
        });
    }

    let gamma = (1.0 - separation / core::f64::consts::SQRT_2) / 2.0;
    for _ in 0..RANDOM_MIXTURE_ATTEMPTS {
        let s_star = rng.random_range(0..s_n);
        let a_star = rng.random_range(0..a_n);
        let mut targets: Vec<usize> = (0..s_n).collect();
        targets.shuffle(&mut rng);
        let offset = (s_star * a_n + a_star) * s_n;
        let kernels: Vec<Vec<f64>> = (0..num_labels)
            .map(|k| {
                let mut kernel = base.clone();
                let row = &mut kernel[offset..offset + s_n];
                for p in row.iter_mut() {
                    *p *= gamma;
                }
                // more labels than states: targets repeat and the scan below rejects
                row[targets[k % s_n]] += 1.0 - gamma;
                fix_sum(row);
                kernel
            })
            .collect();
        let mixture = assemble(kernels)?;
        let separations = max_separations(&mixture);
        if separations.iter().all(|s| s.gap >= separation) {
            return Ok(RandomMixture {
                mixture,
                planted: Some((s_star, a_star)),
                separations,
            });
        }
    }
    Err(Error::SeparationUnreachable {
        target: separation,
        attempts: RANDOM_MIXTURE_ATTEMPTS,
    })
}

/// Samples one trajectory of `len` transitions. The label is drawn from the
/// mixture weights unless forced; the random stream is selected by `id`, so
/// the result depends only on `(seed, id, label)`.
pub fn sample_trajectory(
    mixture: &MarkovMixture,
    len: usize,
    label: Option<usize>,
    seed: u64,
    id: u64,
) -> Result<Trajectory> {
    if len < 1 {
        return Err(Error::InvalidParameter("trajectory length must be at least 1".into()));
    }
    if let Some(k) = label {
        if k >= mixture.num_labels() {
            return Err(Error::LabelOutOfRange {
                label: k,
                k: mixture.num_labels(),
            });
        }
    }
    let mut rng = stream_rng(seed, id);
    let drawn = sample_categorical(&mut rng, mixture.weights());
    let k = label.unwrap_or(drawn);
    let mut states = Vec::with_capacity(len + 1);
    let mut actions = Vec::with_capacity(len);
    let mut s = sample_categorical(&mut rng, mixture.start_dist(k));
    states.push(s);
    for _ in 0..len {
        let a = sample_categorical(&mut rng, mixture.policy_row(k, s));
        s = sample_categorical(&mut rng, mixture.kernel_row(k, s, a));
        actions.push(a);
        states.push(s);
    }
    Ok(Trajectory {
        id,
        states,
        actions,
        true_label: Some(k),
        rewards: None,
    })
}

/// `count` trajectories with ids `0..count`.
pub fn sample_dataset(
    mixture: &MarkovMixture,
    count: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let seed = derive_seed(seed, 0x7472616a);
    (0..count as u64)
        .map(|id| sample_trajectory(mixture, len, None, seed, id))
        .collect()
}

/// Mixing measurement for one label's induced chain on `S×A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMixing {
    pub label: usize,
    pub t_mix: usize,
    /// Worst-start TV distance to stationarity at steps `1, 2, …`.
    pub tv_curve: Vec<f64>,
    /// Stationary occupancy `d_k(s,a)`, flat `s·A + a`.
    pub stationary: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport {
    pub t_mix: usize,
    pub per_label: Vec<LabelMixing>,
}

/// Sparse rows of the chain `(s,a) → (s',a')` with probability
/// `P_k(s'|s,a)·π_k(a'|s')`.
fn induced_chain(mixture: &MarkovMixture, k: usize) -> Vec<Vec<(usize, f64)>> {
    let (s_n, a_n) = (mixture.num_states(), mixture.num_actions());
    let mut rows = Vec::with_capacity(s_n * a_n);
    for s in 0..s_n {
        for a in 0..a_n {
            let mut row = Vec::new();
            for (s2, &p) in mixture.kernel_row(k, s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (a2, &q) in mixture.policy_row(k, s2).iter().enumerate() {
                    if q > 0.0 {
                        row.push((s2 * a_n + a2, p * q));
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

fn propagate(chain: &[Vec<(usize, f64)>], dist: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &mass) in dist.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for &(j, p) in &chain[i] {
            out[j] += mass * p;
        }
    }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum::<f64>()
}

/// Stationary distribution by power iteration from the uniform distribution.
pub fn stationary_distribution(mixture: &MarkovMixture, k: usize, cap: usize) -> Vec<f64> {
    let chain = induced_chain(mixture, k);
    let n = chain.len();
    let mut dist = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..cap {
        propagate(&chain, &dist, &mut next);
        let change: f64 = dist.iter().zip(&next).map(|(a, b)| libm::fabs(a - b)).sum();
        core::mem::swap(&mut dist, &mut next);
        if change < 1e-15 {
            break;
        }
    }
    dist
}

/// First `t ≥ 1` at which the worst start state (actions drawn from the
/// policy) is within `tol` total variation of the stationary occupancy.
/// Periodic or reducible chains that never get there within `cap` steps are
/// reported as errors.
pub fn estimate_mixing_time(
    mixture: &MarkovMixture,
    k: usize,
    tol: f64,
    cap: usize,
) -> Result<LabelMixing> {
    if k >= mixture.num_labels() {
        return Err(Error::LabelOutOfRange {
            label: k,
            k: mixture.num_labels(),
        });
    }
    let chain = induced_chain(mixture, k);
    let stationary = stationary_distribution(mixture, k, 200_000.max(cap));
    let (s_n, a_n) = (mixture.num_states(), mixture.num_actions());
    let n = s_n * a_n;
    let mut dists: Vec<Vec<f64>> = (0..s_n)
        .map(|s| {
            let mut d = vec![0.0; n];
            d[s * a_n..(s + 1) * a_n].copy_from_slice(mixture.policy_row(k, s));
            d
        })
        .collect();
    let mut scratch = vec![0.0; n];
    let mut tv_curve = Vec::new();
    let mut t_mix = None;
    let mut horizon = cap;
    let mut t = 0;
    while t < horizon {
        t += 1;
        let mut worst: f64 = 0.0;
        for d in dists.iter_mut() {
            propagate(&chain, d, &mut scratch);
            d.copy_from_slice(&scratch);
            worst = worst.max(tv(d, &stationary));
        }
        tv_curve.push(worst);
        if t_mix.is_none() && worst < tol {
            t_mix = Some(t);
            horizon = cap.min(2 * t + 10);
        }
    }
    match t_mix {
        Some(t_mix) => Ok(LabelMixing {
            label: k,
            t_mix,
            tv_curve,
            stationary,
        }),
        None => Err(Error::NotMixing {
            label: k,
            cap,
            last_tv: tv_curve.last().copied().unwrap_or(f64::NAN),
        }),
    }
}

pub fn mixing_report(mixture: &MarkovMixture, tol: f64, cap: usize) -> Result<MixingReport> {
    let per_label = (0..mixture.num_labels())
        .map(|k| estimate_mixing_time(mixture, k, tol, cap))
        .collect::<Result<Vec<_>>>()?;
    let t_mix = per_label.iter().map(|m| m.t_mix).max().unwrap_or(0);
    Ok(MixingReport { t_mix, per_label })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(p01: f64, p10: f64) -> MarkovMixture {
        MarkovMixture::new(
            2,
            1,
            vec![vec![1.0 - p01, p01, p10, 1.0 - p10]],
            vec![vec![1.0, 1.0]],
            vec![vec![1.0, 0.0]],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_strength_gives_identical_kernels() {
        let spec = GridworldSpec {
            adversarial_strength: 0.0,
            ..GridworldSpec::default()
        };
        let m = build_gridworld_mixture(&spec).unwrap();
        assert_eq!(m.kernel(0), m.kernel(1));
        assert_eq!(m.policy(0), m.policy(1));
    }

    #[test]
    fn two_by_two_full_strength_matches_hand_kernel() {
        // states: 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1); reward at 3.
        // V(3) > V(1) = V(2) > V(0); lowest neighbours: 0→1 (tie with 2),
        // 1→0, 2→0, 3→1 (tie with 2).
        let spec = GridworldSpec {
            adversarial_strength: 1.0,
            ..GridworldSpec::new(2, 2)
        };
        let m = build_gridworld_mixture(&spec).unwrap();
        let expected_target = [1, 0, 0, 1];
        for s in 0..4 {
            for a in 0..4 {
                let mut onehot = [0.0; 4];
                onehot[expected_target[s]] = 1.0;
                assert_eq!(m.kernel_row(1, s, a), &onehot);
            }
        }
        let v = gridworld_values(&spec).unwrap();
        assert!(v[3] > v[1] && v[1] > v[0]);
        assert!((v[1] - v[2]).abs() < 1e-12);
    }

    #[test]
    fn normal_kernel_rows() {
        let spec = GridworldSpec::new(3, 3);
        let p = spec.normal_kernel();
        // centre state 4, action north: 0.9 to 1, 0.05 to 3 and 5
        let row = &p[(4 * 4) * 9..(4 * 4 + 1) * 9];
        assert!((row[1] - 0.9).abs() < 1e-15);
        assert!((row[3] - 0.05).abs() < 1e-15 && (row[5] - 0.05).abs() < 1e-15);
        // corner 0, action west: wall, stays with 0.9 and slips N (wall) / S
        let row = &p[(3) * 9..(4) * 9];
        assert!((row[0] - 0.95).abs() < 1e-15);
        assert!((row[3] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_strength() {
        let spec = GridworldSpec {
            adversarial_strength: 1.5,
            ..GridworldSpec::default()
        };
        assert_eq!(build_gridworld_mixture(&spec), Err(Error::InvalidStrength(1.5)));
    }

    #[test]
    fn value_iteration_cap_is_reported() {
        let spec = GridworldSpec {
            value_iteration_cap: 3,
            ..GridworldSpec::default()
        };
        assert_eq!(gridworld_values(&spec), Err(Error::ValueIterationCap(3)));
    }

    #[test]
    fn strength_is_monotone_on_target_mass() {
        let base = GridworldSpec::default();
        let values = gridworld_values(&base).unwrap();
        let targets = adversarial_targets(&base, &values);
        let mut prev: Option<MarkovMixture> = None;
        for eta in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let m = build_gridworld_mixture(&GridworldSpec {
                adversarial_strength: eta,
                ..base.clone()
            })
            .unwrap();
            if let Some(p) = &prev {
                for s in 0..64 {
                    for a in 0..4 {
                        assert!(m.kernel_row(1, s, a)[targets[s]] >= p.kernel_row(1, s, a)[targets[s]]);
                    }
                }
            }
            prev = Some(m);
        }
    }

    #[test]
    fn random_mixture_single_label_is_base() {
        let r = build_random_mixture(4, 2, 1, 1.0, 3).unwrap();
        assert_eq!(r.mixture.num_labels(), 1);
        assert!(r.separations.is_empty());
        assert!(r.planted.is_none());
    }

    #[test]
    fn random_mixture_reaches_target() {
        let r = build_random_mixture(2, 1, 2, 1.0, 11).unwrap();
        assert!(r.separations[0].gap >= 1.0);
        let full = build_random_mixture(3, 1, 2, core::f64::consts::SQRT_2, 2).unwrap();
        assert!(full.separations[0].gap >= core::f64::consts::SQRT_2 - 1e-12);
    }

    #[test]
    fn random_mixture_unreachable() {
        // three labels cannot get distinct one-hot targets on two states
        assert!(matches!(
            build_random_mixture(2, 1, 3, 1.4, 0),
            Err(Error::SeparationUnreachable { .. })
        ));
        assert!(build_random_mixture(2, 1, 2, 1.5, 0).is_err());
        assert!(build_random_mixture(2, 1, 2, 0.0, 0).is_err());
    }

    #[test]
    fn deterministic_chain_walk() {
        let m = two_state(1.0, 1.0);
        let t = sample_trajectory(&m, 6, None, 9, 0).unwrap();
        assert_eq!(t.states, vec![0, 1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn forced_weights() {
        let chain = two_state(0.5, 0.5);
        let m = MarkovMixture::new(
            2,
            1,
            vec![chain.kernel(0).to_vec(), chain.kernel(0).to_vec()],
            vec![vec![1.0, 1.0]; 2],
            vec![vec![0.5, 0.5]; 2],
            vec![1.0, 0.0],
        )
        .unwrap();
        let data = sample_dataset(&m, 50, 4, 1).unwrap();
        assert!(data.iter().all(|t| t.true_label == Some(0)));
    }

    #[test]
    fn empirical_transition_frequency() {
        let m = two_state(0.3, 0.3);
        let t = sample_trajectory(&m, 100_000, Some(0), 42, 0).unwrap();
        let (mut from0, mut to1) = (0usize, 0usize);
        for w in t.states.windows(2) {
            if w[0] == 0 {
                from0 += 1;
                if w[1] == 1 {
                    to1 += 1;
                }
            }
        }
        let freq = to1 as f64 / from0 as f64;
        assert!((freq - 0.3).abs() < 0.01, "{freq}");
    }

    #[test]
    fn seed_determinism() {
        let m = build_gridworld_mixture(&GridworldSpec::default()).unwrap();
        let a = sample_trajectory(&m, 50, None, 3, 17).unwrap();
        let b = sample_trajectory(&m, 50, None, 3, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_trajectory(&m, 50, None, 3, 18).unwrap());
    }

    #[test]
    fn rank_one_kernel_mixes_in_one_step() {
        let m = MarkovMixture::new(
            3,
            1,
            vec![vec![0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 0.2, 0.3, 0.5]],
            vec![vec![1.0; 3]],
            vec![vec![1.0, 0.0, 0.0]],
            vec![1.0],
        )
        .unwrap();
        let r = estimate_mixing_time(&m, 0, 0.25, 100).unwrap();
        assert_eq!(r.t_mix, 1);
    }

    #[test]
    fn periodic_swap_never_mixes() {
        let m = two_state(1.0, 1.0);
        assert!(matches!(
            estimate_mixing_time(&m, 0, 0.25, 500),
            Err(Error::NotMixing { .. })
        ));
    }

    #[test]
    fn stationarity_and_monotone_curve() {
        let m = build_gridworld_mixture(&GridworldSpec::default()).unwrap();
        for k in 0..2 {
            let r = estimate_mixing_time(&m, k, 0.25, 1000).unwrap();
            let chain = induced_chain(&m, k);
            let mut next = vec![0.0; r.stationary.len()];
            propagate(&chain, &r.stationary, &mut next);
            let err = next
                .iter()
                .zip(&r.stationary)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-8);
            assert!(r.tv_curve.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }
}
