//! Library results checked against independent, deliberately naive
//! re-implementations.

use std::collections::BTreeMap;

use mixmdp_core::clustering::{cluster_graph, ClusterBackend, SimilarityGraph};
use mixmdp_core::em::{
    e_step, init_from_labels, m_step, EmData, EmMode, EmScope, ModelEstimate, Responsibilities,
};
use mixmdp_core::estimators::window_pairs;
use mixmdp_core::inference::{classify_map, estimate_models};
use mixmdp_core::linalg::Matrix;
use mixmdp_core::metrics::{permutation_accuracy, permutation_match};
use mixmdp_core::model::{MarkovMixture, Trajectory};
use mixmdp_core::segment::{segment_dataset, segment_trajectory, CountMode, SegmentScheme};
use mixmdp_core::simulator::{build_random_mixture, sample_dataset};
use mixmdp_core::subspace::{accumulate_moments, estimate_subspaces};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_trajectory(rng: &mut ChaCha8Rng, id: u64, len: usize, s_n: usize, a_n: usize) -> Trajectory {
    Trajectory {
        id,
        states: (0..=len).map(|_| rng.random_range(0..s_n)).collect(),
        actions: (0..len).map(|_| rng.random_range(0..a_n)).collect(),
        true_label: None,
        rewards: None,
    }
}

/// `(pair, next) → count` over the given timesteps, read straight off the
/// trajectory.
fn slice_counts(traj: &Trajectory, steps: impl Iterator<Item = usize>, a_n: usize) -> BTreeMap<(usize, usize), u64> {
    let mut out = BTreeMap::new();
    for t in steps {
        *out.entry((traj.states[t] * a_n + traj.actions[t], traj.states[t + 1])).or_insert(0) += 1;
    }
    out
}

fn table_counts(c: &mixmdp_core::segment::TransitionCounts) -> BTreeMap<(usize, usize), u64> {
    let mut out = BTreeMap::new();
    for (pair, pc) in c.iter() {
        for (&s2, &n) in &pc.next {
            out.insert((pair, s2), n);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn count_table_matches_reslicing(seed in 0u64..1000, len in 8usize..80, g in 1usize..6, full in any::<bool>()) {
        prop_assume!(len >= 4 * g);
        let (s_n, a_n) = (5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_trajectory(&mut rng, 0, len, s_n, a_n);
        let mode = if full { CountMode::Full } else { CountMode::Discard };
        let scheme = SegmentScheme::new(len, g, mode).unwrap();
        let table = segment_trajectory(&traj, &scheme, s_n, a_n).unwrap();

        let t = len / 4;
        let sub = t / g;
        let whole_block = len / g;
        for (w, start) in [(0, t), (1, 3 * t)] {
            let expected = if full {
                slice_counts(&traj, start..start + t, a_n)
            } else {
                slice_counts(&traj, (0..g).map(|b| start + b * sub), a_n)
            };
            prop_assert_eq!(table_counts(&table.windows[w]), expected);
        }
        let whole = if full {
            slice_counts(&traj, 0..len, a_n)
        } else {
            slice_counts(&traj, (1..=g).map(|b| b * whole_block - 1), a_n)
        };
        prop_assert_eq!(table_counts(&table.whole), whole);
        prop_assert_eq!(table.first_state, traj.states[0]);
    }
}

/// Dense empirical next-state row of window `[start, start+t)`.
fn dense_row(traj: &Trajectory, start: usize, t: usize, pair: usize, s_n: usize, a_n: usize) -> Option<Vec<f64>> {
    let mut row = vec![0.0; s_n];
    let mut total = 0.0;
    for step in start..start + t {
        if traj.states[step] * a_n + traj.actions[step] == pair {
            row[traj.states[step + 1]] += 1.0;
            total += 1.0;
        }
    }
    (total > 0.0).then(|| row.iter().map(|x| x / total).collect())
}

#[test]
fn moments_match_double_loop() {
    let (s_n, a_n, len, g) = (4, 2, 40, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trajs: Vec<_> = (0..30).map(|i| random_trajectory(&mut rng, i, len, s_n, a_n)).collect();
    let scheme = SegmentScheme::new(len, g, CountMode::Full).unwrap();
    let tables = segment_dataset(&trajs, &scheme, s_n, a_n).unwrap();
    let moments = accumulate_moments(&window_pairs(&tables)).unwrap();
    let t = len / 4;

    for pair in 0..s_n * a_n {
        let mut m = vec![vec![0.0; s_n]; s_n];
        let mut seen = 0usize;
        for traj in &trajs {
            let (Some(p1), Some(p2)) =
                (dense_row(traj, t, t, pair, s_n, a_n), dense_row(traj, 3 * t, t, pair, s_n, a_n))
            else {
                continue;
            };
            seen += 1;
            for i in 0..s_n {
                for j in 0..s_n {
                    m[i][j] += p1[i] * p2[j];
                }
            }
        }
        assert_eq!(moments.traj_counts[pair], seen);
        match &moments.transition[pair] {
            None => assert_eq!(seen, 0),
            Some(got) => {
                for i in 0..s_n {
                    for j in 0..s_n {
                        assert!((got.get(i, j) - m[i][j] / seen as f64).abs() < 1e-12);
                    }
                }
            }
        }
    }

    let sa = s_n * a_n;
    let mut d = vec![vec![0.0; sa]; sa];
    for traj in &trajs {
        let occ = |start: usize| {
            let mut o = vec![0.0; sa];
            for step in start..start + t {
                o[traj.states[step] * a_n + traj.actions[step]] += 1.0 / g as f64;
            }
            o
        };
        let (d1, d2) = (occ(t), occ(3 * t));
        for i in 0..sa {
            for j in 0..sa {
                d[i][j] += d1[i] * d2[j];
            }
        }
    }
    for i in 0..sa {
        for j in 0..sa {
            assert!((moments.occupancy.get(i, j) - d[i][j] / trajs.len() as f64).abs() < 1e-12);
        }
    }
}

fn projector_of(v: &Matrix) -> Matrix {
    v.transpose().matmul(v)
}

#[test]
fn subspaces_match_nalgebra() {
    let mix = build_random_mixture(6, 2, 2, 1.2, 9).unwrap().mixture;
    let trajs = sample_dataset(&mix, 300, 80, 4).unwrap();
    let scheme = SegmentScheme::new(80, 20, CountMode::Full).unwrap();
    let tables = segment_dataset(&trajs, &scheme, 6, 2).unwrap();
    let pairs = window_pairs(&tables);
    let moments = accumulate_moments(&pairs).unwrap();
    let bank = estimate_subspaces(&pairs, 2).unwrap();
    let mut checked = 0;
    for (pair, m) in moments.transition.iter().enumerate() {
        let Some(m) = m else { continue };
        let sym = nalgebra::DMatrix::from_fn(6, 6, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        for (got, want) in bank.spectra[pair].iter().zip(&lam) {
            assert!((got - want).abs() < 1e-10, "pair {pair}: {got} vs {want}");
        }
        // the projector is only determined when the K-th and K+1-th
        // magnitudes are apart
        if (lam[1].abs() - lam[2].abs()) < 1e-6 * lam[0].abs() {
            continue;
        }
        let mut p = nalgebra::DMatrix::<f64>::zeros(6, 6);
        for &i in &order[..2] {
            let v = eig.eigenvectors.column(i);
            p += &v * v.transpose();
        }
        let ours = projector_of(bank.projector(pair));
        for i in 0..6 {
            for j in 0..6 {
                assert!((ours.get(i, j) - p[(i, j)]).abs() < 1e-9);
            }
        }
        checked += 1;
    }
    assert!(checked > 6);
}

fn model_from_mixture(mix: &MarkovMixture) -> ModelEstimate {
    let (s_n, a_n, k_n) = (mix.num_states(), mix.num_actions(), mix.num_labels());
    ModelEstimate {
        num_states: s_n,
        num_actions: a_n,
        weights: mix.weights().to_vec(),
        kernels: (0..k_n).map(|k| mix.kernel(k).to_vec()).collect(),
        defined: vec![vec![true; s_n * a_n]; k_n],
        policies: (0..k_n).map(|k| mix.policy(k).to_vec()).collect(),
        policy_defined: vec![vec![true; s_n]; k_n],
        starts: (0..k_n).map(|k| mix.start_dist(k).to_vec()).collect(),
    }
}

/// Posterior over labels by walking each trajectory step by step.
fn enumerate_posterior(mix: &MarkovMixture, traj: &Trajectory) -> Vec<f64> {
    let logs: Vec<f64> = (0..mix.num_labels())
        .map(|k| {
            let mut acc = mix.weights()[k].ln() + mix.start_dist(k)[traj.states[0]].ln();
            for t in 0..traj.len() {
                let (s, a) = (traj.states[t], traj.actions[t]);
                acc += mix.policy_row(k, s)[a].ln();
                acc += mix.kernel_row(k, s, a)[traj.states[t + 1]].ln();
            }
            acc
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    logs.iter().map(|l| (l - top).exp() / z).collect()
}

#[test]
fn e_step_matches_enumerated_posterior() {
    for seed in 0..4 {
        let mix = build_random_mixture(5, 2, 3, 1.0, seed).unwrap().mixture;
        let trajs = sample_dataset(&mix, 40, 12, seed).unwrap();
        let scheme = SegmentScheme::new(12, 3, CountMode::Full).unwrap();
        let data = EmData::from_tables(&segment_dataset(&trajs, &scheme, 5, 2).unwrap()).unwrap();
        let e = e_step(&data, &model_from_mixture(&mix), &EmScope::Full, EmMode::Soft);
        for (i, traj) in trajs.iter().enumerate() {
            let want = enumerate_posterior(&mix, traj);
            for (got, want) in e.resp.row(i).iter().zip(&want) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn permutation_accuracy_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 1..=8 {
        let perms = all_permutations(k);
        for _ in 0..5 {
            let n = rng.random_range(1..60);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let best = perms
                .iter()
                .map(|p| pred.iter().zip(&truth).filter(|(a, b)| p[**a] == **b).count())
                .max()
                .unwrap();
            let got = permutation_match(&pred, &truth, k).unwrap();
            assert!((got.accuracy - best as f64 / n as f64).abs() < 1e-12, "k = {k}");
            let relabeled = got.relabel(&pred);
            let hits = relabeled.iter().zip(&truth).filter(|(a, b)| a == b).count();
            assert_eq!(hits, best);
        }
    }
}

/// Minimum normalized cut over every bipartition, walked in Gray-code order
/// so each step moves one vertex.
fn min_ncut(adj: &[Vec<bool>]) -> Vec<bool> {
    let n = adj.len();
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().filter(|&&e| e).count() as f64).collect();
    let total: f64 = deg.iter().sum();
    let mut side = vec![false; n];
    let (mut cut, mut vol) = (0.0, 0.0);
    let mut best = (f64::INFINITY, side.clone());
    // vertex 0 stays on side A to skip mirror images
    for step in 1u64..(1 << (n - 1)) {
        let v = step.trailing_zeros() as usize + 1;
        let to_b = !side[v];
        for u in 0..n {
            if u != v && adj[v][u] {
                let same_after = side[u] == to_b;
                cut += if same_after { -1.0 } else { 1.0 };
            }
        }
        vol += if to_b { deg[v] } else { -deg[v] };
        side[v] = to_b;
        if vol > 0.0 && vol < total {
            let ncut = cut / vol + cut / (total - vol);
            if ncut < best.0 - 1e-12 {
                best = (ncut, side.clone());
            }
        }
    }
    best.1
}

#[test]
fn spectral_finds_min_normalized_cut() {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let planted: Vec<bool> = (0..n).map(|i| i % 3 == 0 || i >= 14).collect();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
        for j in (i + 1)..n {
            let p = if planted[i] == planted[j] { 0.8 } else { 0.1 };
            let e = rng.random::<f64>() < p;
            adj[i][j] = e;
            adj[j][i] = e;
        }
    }
    let oracle = min_ncut(&adj);
    let graph =
        SimilarityGraph::from_adjacency(n, adj.iter().flatten().copied().collect()).unwrap();
    let labels = cluster_graph(&graph, None, 2, ClusterBackend::Spectral, 0).unwrap();
    let ours: Vec<bool> = labels.iter().map(|&l| l != labels[0]).collect();
    assert_eq!(ours, oracle);
    assert_eq!(oracle, planted.iter().map(|&p| p != planted[0]).collect::<Vec<_>>());
}

#[test]
fn m_step_matches_weighted_counts() {
    let (s_n, a_n, k_n, len) = (4, 2, 3, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trajs: Vec<_> = (0..25).map(|i| random_trajectory(&mut rng, i, len, s_n, a_n)).collect();
    let scheme = SegmentScheme::new(len, 4, CountMode::Full).unwrap();
    let data = EmData::from_tables(&segment_dataset(&trajs, &scheme, s_n, a_n).unwrap()).unwrap();
    let values: Vec<f64> = (0..trajs.len())
        .flat_map(|_| {
            let raw: Vec<f64> = (0..k_n).map(|_| rng.random::<f64>()).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(move |x| x / z)
        })
        .collect();
    let resp = Responsibilities::new(trajs.len(), k_n, values).unwrap();
    let est = m_step(&data, &resp).unwrap();
    for k in 0..k_n {
        let w = |i: usize| resp.row(i)[k];
        let mass: f64 = (0..trajs.len()).map(w).sum();
        assert!((est.weights[k] - mass / trajs.len() as f64).abs() < 1e-12);
        for s in 0..s_n {
            let start: f64 = (0..trajs.len()).filter(|&i| trajs[i].states[0] == s).map(w).sum();
            assert!((est.starts[k][s] - start / mass).abs() < 1e-12);
            let visits: f64 = (0..trajs.len())
                .map(|i| w(i) * (0..len).filter(|&t| trajs[i].states[t] == s).count() as f64)
                .sum();
            for a in 0..a_n {
                let pair = s * a_n + a;
                let mut num = vec![0.0; s_n];
                let mut den = 0.0;
                for (i, traj) in trajs.iter().enumerate() {
                    for t in 0..len {
                        if traj.states[t] == s && traj.actions[t] == a {
                            num[traj.states[t + 1]] += w(i);
                            den += w(i);
                        }
                    }
                }
                if visits > 0.0 {
                    assert!((est.policies[k][pair] - den / visits).abs() < 1e-12);
                }
                match est.kernel_row(k, pair) {
                    Some(row) => {
                        for s2 in 0..s_n {
                            assert!((row[s2] - num[s2] / den).abs() < 1e-12);
                        }
                    }
                    None => assert_eq!(den, 0.0),
                }
            }
        }
    }
}

#[test]
fn hard_em_first_step_equals_estimate_then_classify() {
    let mix = build_random_mixture(6, 2, 2, 1.2, 2).unwrap().mixture;
    let trajs = sample_dataset(&mix, 80, 20, 8).unwrap();
    let scheme = SegmentScheme::new(20, 5, CountMode::Full).unwrap();
    let tables = segment_dataset(&trajs, &scheme, 6, 2).unwrap();
    let data = EmData::from_tables(&tables).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<usize> = (0..trajs.len()).map(|_| rng.random_range(0..2)).collect();

    let model = m_step(&data, &init_from_labels(&labels, 2, 0.0).unwrap()).unwrap();
    let pooled = estimate_models(&tables, &labels, 2).unwrap();
    assert_eq!(model, pooled.model);

    for scope in [EmScope::Full, EmScope::Restricted(vec![true; 12])] {
        let e = e_step(&data, &model, &scope, EmMode::Hard);
        assert_eq!(e.resp.labels(), classify_map(&data, &pooled.model, &scope));
    }
}

#[test]
fn permutation_accuracy_spec_example() {
    assert_eq!(permutation_accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap(), 0.75);
}
