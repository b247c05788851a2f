//! Structural properties that must hold on any input.

use mixmdp_core::clustering::{
    distance_matrix, embed_all, frequent_pairs, EmbeddingLayout,
};
use mixmdp_core::em::{random_init, run_em, EmConfig, EmData, EmMode, EmScope};
use mixmdp_core::estimators::window_pairs;
use mixmdp_core::inference::{estimate_models, refined_bank};
use mixmdp_core::linalg::Matrix;
use mixmdp_core::metrics::{permutation_accuracy, random_projector};
use mixmdp_core::segment::{segment_dataset, CountMode, SegmentScheme};
use mixmdp_core::simulator::{build_gridworld_mixture, build_random_mixture, sample_dataset, GridworldSpec};
use mixmdp_core::subspace::{estimate_subspaces, SubspaceBank};
use proptest::prelude::*;

fn check_projectors(bank: &SubspaceBank) {
    for v in &bank.pair_projectors {
        if v.is_zero() {
            continue;
        }
        let gram = v.matmul(&v.transpose());
        assert!(gram.max_abs_diff(&Matrix::identity(v.rows())) < 1e-10);
        let p = v.transpose().matmul(v);
        assert!(p.matmul(&p).max_abs_diff(&p) < 1e-10);
    }
    let u = &bank.occupancy_projector;
    assert!(u.matmul(&u.transpose()).max_abs_diff(&Matrix::identity(u.rows())) < 1e-10);
}

fn assert_simplex(v: &[f64]) {
    assert!(v.iter().all(|&x| x >= 0.0));
    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12, "sum {}", v.iter().sum::<f64>());
}

#[test]
fn gridworld_bank_is_orthonormal() {
    let mix = build_gridworld_mixture(&GridworldSpec::default()).unwrap();
    let trajs = sample_dataset(&mix, 200, 60, 1).unwrap();
    let scheme = SegmentScheme::new(60, 15, CountMode::Full).unwrap();
    let tables = segment_dataset(&trajs, &scheme, 64, 4).unwrap();
    let bank = estimate_subspaces(&window_pairs(&tables), 2).unwrap();
    check_projectors(&bank);

    let labels: Vec<usize> = trajs.iter().map(|t| t.true_label.unwrap()).collect();
    let models = estimate_models(&tables, &labels, 2).unwrap();
    check_projectors(&refined_bank(&models, 2).unwrap());
    for dim in [1, 2, 10, 64] {
        let v = random_projector(dim, 64, 3, dim as u64).unwrap();
        check_projectors(&bank.with_pair_projectors(vec![v; 256]).unwrap());
    }
}

#[test]
fn estimates_lie_on_simplex() {
    let mix = build_random_mixture(7, 3, 3, 1.0, 4).unwrap().mixture;
    let trajs = sample_dataset(&mix, 120, 24, 4).unwrap();
    let scheme = SegmentScheme::new(24, 6, CountMode::Full).unwrap();
    let tables = segment_dataset(&trajs, &scheme, 7, 3).unwrap();
    let data = EmData::from_tables(&tables).unwrap();
    let run = run_em(&data, random_init(data.len(), 3, 5), &EmConfig::new(EmMode::Soft, EmScope::Full)).unwrap();
    let m = &run.model;
    assert_simplex(&m.weights);
    for k in 0..3 {
        assert_simplex(&m.starts[k]);
        for pair in 0..21 {
            if let Some(row) = m.kernel_row(k, pair) {
                assert_simplex(row);
            }
        }
        for s in 0..7 {
            if m.policy_defined[k][s] {
                assert_simplex(&m.policies[k][s * 3..s * 3 + 3]);
            }
        }
    }
    for i in 0..run.resp.n {
        assert_simplex(run.resp.row(i));
    }
    let pooled = estimate_models(&tables, &run.labels, 3).unwrap();
    for (pair, _) in pooled.prevalence[0].iter().enumerate() {
        let col: Vec<f64> = pooled.prevalence.iter().map(|p| p[pair]).collect();
        if col.iter().any(|&x| x > 0.0) {
            assert_simplex(&col);
        }
    }
}

fn dataset(seed: u64, n: usize, len: usize) -> Vec<mixmdp_core::CountTable> {
    let mix = build_random_mixture(6, 2, 2, 1.2, seed).unwrap().mixture;
    let trajs = sample_dataset(&mix, n, len, seed).unwrap();
    let scheme = SegmentScheme::new(len, len / 4, CountMode::Full).unwrap();
    segment_dataset(&trajs, &scheme, 6, 2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distance_matrix_symmetric_zero_diagonal(seed in 0u64..500, lambda in 0.0f64..=1.0) {
        let tables = dataset(seed, 40, 32);
        let pairs = window_pairs(&tables);
        let bank = estimate_subspaces(&pairs, 2).unwrap();
        let freq = frequent_pairs(&tables, 0.02).unwrap();
        let layout = EmbeddingLayout::new(&bank, &freq);
        let d = distance_matrix(&embed_all(&pairs, &bank, &layout), &layout, lambda).unwrap();
        for i in 0..d.n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..d.n {
                prop_assert_eq!(d.get(i, j).to_bits(), d.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn soft_em_loglik_nondecreasing(seed in 0u64..500, k in 1usize..4, restricted in any::<bool>()) {
        let tables = dataset(seed, 60, 20);
        let data = EmData::from_tables(&tables).unwrap();
        let scope = if restricted {
            EmScope::Restricted(frequent_pairs(&tables, 0.05).unwrap().mask())
        } else {
            EmScope::Full
        };
        let cfg = EmConfig { tol: 0.0, max_iter: 40, ..EmConfig::new(EmMode::Soft, scope) };
        let run = run_em(&data, random_init(data.len(), k, seed), &cfg).unwrap();
        for w in run.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn accuracy_invariant_under_relabeling(
        labels in prop::collection::vec((0usize..4, 0usize..4), 1..80),
        perm in Just((0usize..4).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = labels.into_iter().unzip();
        let renamed: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = permutation_accuracy(&pred, &truth, 4).unwrap();
        prop_assert_eq!(a, permutation_accuracy(&renamed, &truth, 4).unwrap());
        prop_assert!((0.25..=1.0).contains(&a) || pred.len() < 4);
    }
}
