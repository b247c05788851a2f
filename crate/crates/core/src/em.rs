//! Expectation-maximization over whole-trajectory counts.
//!
//! The M-step is a weighted maximum-likelihood fit of every transition row,
//! policy row and start distribution. The E-step scores each trajectory
//! under each component; the `Restricted` scope only uses transitions from
//! a chosen set of pairs and ignores the policy and start state, the `Full`
//! scope uses every transition, every action and the start state.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::model::MarkovMixture;
use crate::rng::stream_rng;
use crate::segment::CountTable;

/// Sparse whole-trajectory counts, one entry per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct EmData {
    pub num_states: usize,
    pub num_actions: usize,
    pub first_states: Vec<usize>,
    /// Per trajectory: `(pair, N(n,s,a), [(s', N(n,s,a,s'))])`.
    pub counts: Vec<Vec<(usize, u64, Vec<(usize, u64)>)>>,
}

impl EmData {
    pub fn from_tables(tables: &[CountTable]) -> Result<Self> {
        let first = tables.first().ok_or(Error::EmptyDataset)?;
        let (s_n, a_n) = (first.num_states, first.num_actions);
        let mut counts = Vec::with_capacity(tables.len());
        for t in tables {
            if t.num_states != s_n || t.num_actions != a_n {
                return Err(Error::Dimension("count tables disagree on S or A".into()));
            }
            counts.push(
                t.whole
                    .iter()
                    .map(|(pair, c)| (pair, c.total, c.next.iter().map(|(&s, &n)| (s, n)).collect()))
                    .collect(),
            );
        }
        Ok(EmData {
            num_states: s_n,
            num_actions: a_n,
            first_states: tables.iter().map(|t| t.first_state).collect(),
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Per-component estimates. Rows whose weighted count is zero are
/// undefined: stored as zeros and flagged in `defined` / `policy_defined`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEstimate {
    pub num_states: usize,
    pub num_actions: usize,
    pub weights: Vec<f64>,
    /// `K × [s][a][s']`.
    pub kernels: Vec<Vec<f64>>,
    /// `K × SA`.
    pub defined: Vec<Vec<bool>>,
    /// `K × [s][a]`.
    pub policies: Vec<Vec<f64>>,
    /// `K × S`.
    pub policy_defined: Vec<Vec<bool>>,
    /// `K × S`.
    pub starts: Vec<Vec<f64>>,
}

impl ModelEstimate {
    pub fn num_labels(&self) -> usize {
        self.weights.len()
    }

    pub fn kernel_row(&self, k: usize, pair: usize) -> Option<&[f64]> {
        if self.defined[k][pair] {
            Some(&self.kernels[k][pair * self.num_states..(pair + 1) * self.num_states])
        } else {
            None
        }
    }

    /// A valid mixture; undefined rows become uniform.
    pub fn to_mixture(&self) -> Result<MarkovMixture> {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        let mut kernels = self.kernels.clone();
        let mut policies = self.policies.clone();
        let mut starts = self.starts.clone();
        for k in 0..self.num_labels() {
            for pair in 0..s_n * a_n {
                if !self.defined[k][pair] {
                    kernels[k][pair * s_n..(pair + 1) * s_n].fill(1.0 / s_n as f64);
                }
            }
            for s in 0..s_n {
                if !self.policy_defined[k][s] {
                    policies[k][s * a_n..(s + 1) * a_n].fill(1.0 / a_n as f64);
                }
            }
            if starts[k].iter().sum::<f64>() == 0.0 {
                starts[k].fill(1.0 / s_n as f64);
            }
        }
        let mut weights = self.weights.clone();
        if weights.iter().sum::<f64>() == 0.0 {
            let k = weights.len() as f64;
            weights.fill(1.0 / k);
        }
        MarkovMixture::new(s_n, a_n, kernels, policies, starts, weights)
    }
}

/// Which terms enter the E-step likelihood.
#[derive(Clone, Debug, PartialEq)]
pub enum EmScope {
    /// Transitions from pairs flagged in the mask only.
    Restricted(Vec<bool>),
    /// Every transition, the policy and the start state.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmMode {
    Soft,
    Hard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub mode: EmMode,
    pub scope: EmScope,
    pub tol: f64,
    pub max_iter: usize,
}

impl EmConfig {
    pub fn new(mode: EmMode, scope: EmScope) -> Self {
        EmConfig {
            mode,
            scope,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Responsibilities, row-major `N × K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    pub n: usize,
    pub k: usize,
    pub values: Vec<f64>,
}

impl Responsibilities {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * k {
            return Err(Error::Dimension(format!("{} weights for {n} × {k}", values.len())));
        }
        Ok(Responsibilities { n, k, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Argmax per row, ties to the lowest label.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.row(i))).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `(1 - s)·onehot(label) + s/K` per trajectory.
pub fn init_from_labels(labels: &[usize], k: usize, softening: f64) -> Result<Responsibilities> {
    if !(0.0..=1.0).contains(&softening) {
        return Err(Error::InvalidParameter(format!("softening {softening} outside [0, 1]")));
    }
    let mut values = vec![softening / k as f64; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, k });
        }
        values[i * k + l] += 1.0 - softening;
    }
    Responsibilities::new(labels.len(), k, values)
}

/// Independent Dirichlet(1) rows.
pub fn random_init(n: usize, k: usize, seed: u64) -> Responsibilities {
    let mut rng = stream_rng(seed, 0xd1c7);
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        values.extend(raw.iter().map(|x| x / total));
    }
    Responsibilities { n, k, values }
}

/// Weighted maximum-likelihood estimates.
pub fn m_step(data: &EmData, resp: &Responsibilities) -> Result<ModelEstimate> {
    if resp.n != data.len() {
        return Err(Error::Dimension(format!(
            "{} responsibility rows for {} trajectories",
            resp.n,
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (s_n, a_n, k_n) = (data.num_states, data.num_actions, resp.k);
    let sa = s_n * a_n;
    let mut trans = vec![vec![0.0; sa * s_n]; k_n];
    let mut pair_tot = vec![vec![0.0; sa]; k_n];
    let mut starts = vec![vec![0.0; s_n]; k_n];
    let mut mass = vec![0.0; k_n];
    for (i, traj) in data.counts.iter().enumerate() {
        let w = resp.row(i);
        for k in 0..k_n {
            if w[k] == 0.0 {
                continue;
            }
            mass[k] += w[k];
            starts[k][data.first_states[i]] += w[k];
            for (pair, total, next) in traj {
                pair_tot[k][*pair] += w[k] * *total as f64;
                for &(s2, c) in next {
                    trans[k][pair * s_n + s2] += w[k] * c as f64;
                }
            }
        }
    }
    finish_estimate(s_n, a_n, data.len(), mass, trans, pair_tot, starts)
}

/// Normalizes accumulated (weighted) counts into a [`ModelEstimate`].
pub(crate) fn finish_estimate(
    s_n: usize,
    a_n: usize,
    n: usize,
    mass: Vec<f64>,
    mut trans: Vec<Vec<f64>>,
    pair_tot: Vec<Vec<f64>>,
    mut starts: Vec<Vec<f64>>,
) -> Result<ModelEstimate> {
    let k_n = mass.len();
    let sa = s_n * a_n;
    let mut defined = vec![vec![false; sa]; k_n];
    let mut policies = vec![vec![0.0; sa]; k_n];
    let mut policy_defined = vec![vec![false; s_n]; k_n];
    for k in 0..k_n {
        for pair in 0..sa {
            let tot = pair_tot[k][pair];
            if tot > 0.0 {
                defined[k][pair] = true;
                for x in &mut trans[k][pair * s_n..(pair + 1) * s_n] {
                    *x /= tot;
                }
            }
        }
        for s in 0..s_n {
            let tot: f64 = pair_tot[k][s * a_n..(s + 1) * a_n].iter().sum();
            if tot > 0.0 {
                policy_defined[k][s] = true;
                for a in 0..a_n {
                    policies[k][s * a_n + a] = pair_tot[k][s * a_n + a] / tot;
                }
            }
        }
        let st: f64 = starts[k].iter().sum();
        if st > 0.0 {
            for x in &mut starts[k] {
                *x /= st;
            }
        }
    }
    Ok(ModelEstimate {
        num_states: s_n,
        num_actions: a_n,
        weights: mass.iter().map(|m| m / n as f64).collect(),
        kernels: trans,
        defined,
        policies,
        policy_defined,
        starts,
    })
}

fn ln(x: f64) -> f64 {
    if x > 0.0 {
        libm::log(x)
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln f̂_k + log-likelihood of trajectory i under component k` for every
/// `(i, k)`, row-major `N × K`. Undefined rows are skipped.
pub fn log_scores(data: &EmData, model: &ModelEstimate, scope: &EmScope) -> Vec<f64> {
    let (s_n, a_n, k_n) = (data.num_states, data.num_actions, model.num_labels());
    let mut out = vec![0.0; data.len() * k_n];
    for (i, traj) in data.counts.iter().enumerate() {
        for k in 0..k_n {
            let mut acc = ln(model.weights[k]);
            for (pair, total, next) in traj {
                let in_scope = match scope {
                    EmScope::Restricted(mask) => mask[*pair],
                    EmScope::Full => true,
                };
                if !in_scope {
                    continue;
                }
                if let Some(row) = model.kernel_row(k, *pair) {
                    for &(s2, c) in next {
                        acc += c as f64 * ln(row[s2]);
                    }
                }
                if matches!(scope, EmScope::Full) {
                    let s = pair / a_n;
                    if model.policy_defined[k][s] {
                        acc += *total as f64 * ln(model.policies[k][*pair]);
                    }
                }
            }
            if matches!(scope, EmScope::Full) {
                acc += ln(model.starts[k][data.first_states[i]]);
            }
            debug_assert!(s_n > 0);
            out[i * k_n + k] = acc;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EStep {
    pub resp: Responsibilities,
    /// Soft: `Σ_n log Σ_k exp(score)`. Hard: `Σ_n max_k score`. Rows whose
    /// scores are all `-∞` are left out.
    pub loglik: f64,
    /// Trajectories impossible under every component; given uniform rows.
    pub degenerate: usize,
}

pub fn e_step(data: &EmData, model: &ModelEstimate, scope: &EmScope, mode: EmMode) -> EStep {
    let k_n = model.num_labels();
    let scores = log_scores(data, model, scope);
    let mut values = vec![0.0; scores.len()];
    let mut loglik = 0.0;
    let mut degenerate = 0;
    for i in 0..data.len() {
        let row = &scores[i * k_n..(i + 1) * k_n];
        let out = &mut values[i * k_n..(i + 1) * k_n];
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            degenerate += 1;
            match mode {
                EmMode::Soft => out.fill(1.0 / k_n as f64),
                EmMode::Hard => out[0] = 1.0,
            }
            continue;
        }
        match mode {
            EmMode::Soft => {
                let mut z = 0.0;
                for (o, &s) in out.iter_mut().zip(row) {
                    *o = libm::exp(s - top);
                    z += *o;
                }
                for o in out.iter_mut() {
                    *o /= z;
                }
                loglik += top + libm::log(z);
            }
            EmMode::Hard => {
                out[argmax(row)] = 1.0;
                loglik += top;
            }
        }
    }
    EStep {
        resp: Responsibilities {
            n: data.len(),
            k: k_n,
            values,
        },
        loglik,
        degenerate,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmResult {
    pub model: ModelEstimate,
    pub resp: Responsibilities,
    pub labels: Vec<usize>,
    /// Log-likelihood after every E-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Degenerate rows in the final E-step.
    pub degenerate: usize,
}

impl EmResult {
    pub fn loglik(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

fn check_config(config: &EmConfig, data: &EmData) -> Result<()> {
    if let EmScope::Restricted(mask) = &config.scope {
        if mask.len() != data.num_states * data.num_actions {
            return Err(Error::Dimension("scope mask must cover every pair".into()));
        }
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    Ok(())
}

/// Alternates M and E steps starting from `init` until the log-likelihood
/// changes by less than `tol` or `max_iter` rounds have run.
pub fn run_em(data: &EmData, init: Responsibilities, config: &EmConfig) -> Result<EmResult> {
    check_config(config, data)?;
    let model = m_step(data, &init)?;
    iterate(data, model, config)
}

/// Like [`run_em`] but starts from parameters (E-step first).
pub fn run_em_from_params(
    data: &EmData,
    model: ModelEstimate,
    config: &EmConfig,
) -> Result<EmResult> {
    check_config(config, data)?;
    if model.num_states != data.num_states || model.num_actions != data.num_actions {
        return Err(Error::Dimension("model does not match the data".into()));
    }
    iterate(data, model, config)
}

fn iterate(data: &EmData, mut model: ModelEstimate, config: &EmConfig) -> Result<EmResult> {
    let mut trace = Vec::new();
    let mut converged = false;
    let mut e = e_step(data, &model, &config.scope, config.mode);
    trace.push(e.loglik);
    let mut iterations = 1;
    while iterations < config.max_iter {
        let next_model = m_step(data, &e.resp)?;
        let next = e_step(data, &next_model, &config.scope, config.mode);
        iterations += 1;
        let delta = next.loglik - e.loglik;
        trace.push(next.loglik);
        model = next_model;
        e = next;
        if libm::fabs(delta) < config.tol {
            converged = true;
            break;
        }
    }
    Ok(EmResult {
        labels: e.resp.labels(),
        model,
        resp: e.resp,
        trace,
        iterations,
        converged,
        degenerate: e.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(trajs: &[(usize, &[(usize, usize)])], s_n: usize, a_n: usize) -> EmData {
        // each trajectory: first state and a list of (pair, next state)
        let counts = trajs
            .iter()
            .map(|(_, steps)| {
                let mut map: alloc::collections::BTreeMap<usize, alloc::collections::BTreeMap<usize, u64>> =
                    Default::default();
                for &(p, s2) in steps.iter() {
                    *map.entry(p).or_default().entry(s2).or_default() += 1;
                }
                map.into_iter()
                    .map(|(p, m)| (p, m.values().sum(), m.into_iter().collect()))
                    .collect()
            })
            .collect();
        EmData {
            num_states: s_n,
            num_actions: a_n,
            first_states: trajs.iter().map(|t| t.0).collect(),
            counts,
        }
    }

    #[test]
    fn one_hot_m_step_is_ratio() {
        let d = data(&[(0, &[(0, 1), (0, 1), (0, 0)]), (1, &[(1, 0)])], 2, 1);
        let r = init_from_labels(&[0, 1], 2, 0.0).unwrap();
        let m = m_step(&d, &r).unwrap();
        assert_eq!(m.kernel_row(0, 0).unwrap(), &[1.0 / 3.0, 2.0 / 3.0]);
        assert!(m.kernel_row(0, 1).is_none());
        assert_eq!(m.kernel_row(1, 1).unwrap(), &[1.0, 0.0]);
        assert_eq!(m.weights, vec![0.5, 0.5]);
        assert_eq!(m.starts[1], vec![0.0, 1.0]);
    }

    #[test]
    fn impossible_trajectory_gets_uniform_row() {
        let d = data(&[(0, &[(0, 0)]), (0, &[(0, 1)]), (0, &[(0, 0), (0, 1)])], 2, 1);
        let r = init_from_labels(&[0, 1, 0], 2, 0.0).unwrap();
        let mut m = m_step(&d, &r).unwrap();
        // make the mixed trajectory impossible under both
        m.kernels[0] = vec![1.0, 0.0, 0.5, 0.5];
        m.kernels[1] = vec![0.0, 1.0, 0.5, 0.5];
        let e = e_step(&d, &m, &EmScope::Full, EmMode::Soft);
        assert_eq!(e.degenerate, 1);
        assert_eq!(e.resp.row(2), &[0.5, 0.5]);
        assert_eq!(e.resp.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn restricted_scope_ignores_other_pairs() {
        let d = data(&[(0, &[(0, 0), (1, 1)])], 2, 1);
        let r = init_from_labels(&[0], 2, 0.5).unwrap();
        let m = m_step(&d, &r).unwrap();
        let full = log_scores(&d, &m, &EmScope::Full);
        let restricted = log_scores(&d, &m, &EmScope::Restricted(vec![true, false]));
        // rows are deterministic, so only the weights contribute
        assert_eq!(restricted, vec![libm::log(0.75), libm::log(0.25)]);
        assert_eq!(full, restricted);
    }

    #[test]
    fn init_rows() {
        let r = init_from_labels(&[1, 0], 2, 0.2).unwrap();
        assert_eq!(r.row(0), &[0.1, 0.9]);
        assert!(init_from_labels(&[2], 2, 0.0).is_err());
        let r = random_init(5, 3, 1);
        for i in 0..5 {
            assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_ties_go_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[f64::NEG_INFINITY, 0.0]), 1);
    }
}
