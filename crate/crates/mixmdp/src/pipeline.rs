//! Stage plumbing shared by the CLI subcommands and the experiment harness.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use mixmdp_core::clustering::{
    cluster_graph, distance_matrix, embed_all, frequent_pairs, pairwise_distance, sample_pairs,
    separation_scatter, suggest_beta, suggest_threshold, ClusterBackend, DistanceMatrix,
    EmbeddingLayout, FrequentPairs, SimilarityGraph, ThresholdSuggestion,
};
use mixmdp_core::estimators::{window_pairs, WindowPair};
use mixmdp_core::linalg::Matrix;
use mixmdp_core::metrics::random_projector;
use mixmdp_core::model::validate_dataset;
use mixmdp_core::segment::segment_trajectory;
use mixmdp_core::subspace::SubspaceBank;
use mixmdp_core::{CountMode, CountTable, SegmentScheme, Trajectory};

use crate::io::{csv_writer, ModeName, SchemeFile};

/// One observation per timestep inside each window.
pub fn default_blocks(len: usize) -> usize {
    (len / 4).max(1)
}

pub fn make_scheme(len: usize, blocks: Option<usize>, mode: ModeName) -> Result<SegmentScheme> {
    let scheme = SegmentScheme::new(len, blocks.unwrap_or_else(|| default_blocks(len)), mode.into())?;
    Ok(scheme)
}

pub fn scheme_file(scheme: &SegmentScheme) -> SchemeFile {
    SchemeFile {
        len: scheme.len,
        blocks: scheme.blocks,
        mode: match scheme.mode {
            CountMode::Discard => ModeName::Discard,
            CountMode::Full => ModeName::Full,
        },
    }
}

/// Counts and window estimates for a dataset, in input order.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ids: Vec<u64>,
    pub tables: Vec<CountTable>,
    pub windows: Vec<WindowPair>,
}

impl Prepared {
    pub fn subset(&self, idx: &[usize]) -> Prepared {
        Prepared {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            tables: idx.iter().map(|&i| self.tables[i].clone()).collect(),
            windows: idx.iter().map(|&i| self.windows[i].clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Infers `S` and `A` as one more than the largest index seen.
pub fn infer_dims(trajs: &[Trajectory]) -> (usize, usize) {
    let s = trajs.iter().flat_map(|t| t.states.iter()).max().map_or(1, |m| m + 1);
    let a = trajs.iter().flat_map(|t| t.actions.iter()).max().map_or(1, |m| m + 1);
    (s, a)
}

pub fn prepare(
    trajs: &[Trajectory],
    scheme: &SegmentScheme,
    num_states: usize,
    num_actions: usize,
) -> Result<Prepared> {
    validate_dataset(trajs, num_states, num_actions)?;
    let tables = trajs
        .par_iter()
        .map(|t| segment_trajectory(t, scheme, num_states, num_actions))
        .collect::<Result<Vec<_>, _>>()?;
    let windows = window_pairs(&tables);
    Ok(Prepared {
        ids: trajs.iter().map(|t| t.id).collect(),
        tables,
        windows,
    })
}

/// Positions of `ids` inside `all_ids`.
pub fn positions(all_ids: &[u64], ids: &[u64]) -> Result<Vec<usize>> {
    let index: std::collections::HashMap<u64, usize> =
        all_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    ids.iter()
        .map(|id| index.get(id).copied().with_context(|| format!("unknown trajectory id {id}")))
        .collect()
}

/// Which per-pair projector the distance computation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorVariant {
    Learned,
    Identity,
    Random(usize),
}

impl fmt::Display for ProjectorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectorVariant::Learned => write!(f, "learned"),
            ProjectorVariant::Identity => write!(f, "identity"),
            ProjectorVariant::Random(d) => write!(f, "random{d}"),
        }
    }
}

impl FromStr for ProjectorVariant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(ProjectorVariant::Learned),
            "identity" => Ok(ProjectorVariant::Identity),
            _ => {
                let dim = s
                    .strip_prefix("random:")
                    .or_else(|| s.strip_prefix("random"))
                    .with_context(|| format!("unknown projector variant {s:?}"))?;
                Ok(ProjectorVariant::Random(dim.parse().with_context(|| format!("bad dimension in {s:?}"))?))
            }
        }
    }
}

/// The bank with its per-pair projectors replaced according to `variant`.
/// Random projectors are drawn independently per pair from `seed`.
pub fn projected_bank(bank: &SubspaceBank, variant: ProjectorVariant, seed: u64) -> Result<SubspaceBank> {
    let s_n = bank.num_states;
    match variant {
        ProjectorVariant::Learned => Ok(bank.clone()),
        ProjectorVariant::Identity => {
            Ok(bank.with_pair_projectors(vec![Matrix::identity(s_n); bank.num_pairs()])?)
        }
        ProjectorVariant::Random(dim) => {
            let projectors = (0..bank.num_pairs())
                .map(|p| random_projector(dim, s_n, seed, p as u64))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(bank.with_pair_projectors(projectors)?)
        }
    }
}

/// A fixed value or `auto`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Choice {
    Fixed(f64),
    Auto,
}

impl FromStr for Choice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(Choice::Auto)
        } else {
            Ok(Choice::Fixed(s.parse().with_context(|| format!("expected a number or `auto`, got {s:?}"))?))
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Fixed(v) => write!(f, "{v}"),
            Choice::Auto => write!(f, "auto"),
        }
    }
}

pub const DEFAULT_BETA: f64 = 0.02;
pub const DEFAULT_TAU: f64 = 0.1;
/// Pairs sampled for the separation scatter behind `β = auto`.
pub const SCATTER_PAIRS: usize = 2000;
pub const BETA_QUANTILE: f64 = 0.9;
pub const BETA_WITNESSES: usize = 3;

#[derive(Clone, Debug)]
pub struct ClusterParams {
    pub k: usize,
    pub beta: Choice,
    pub tau: Choice,
    pub lambda: f64,
    pub backend: ClusterBackend,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub labels: Vec<usize>,
    pub dist: DistanceMatrix,
    pub tau: f64,
    pub freq: FrequentPairs,
    pub threshold: Option<ThresholdSuggestion>,
}

/// `β = auto`: sample trajectory pairs, average the per-pair separations and
/// pick β from the top-separation pairs' occupancies.
pub fn auto_beta(bank: &SubspaceBank, clust: &Prepared, seed: u64) -> Result<f64> {
    let pairs = sample_pairs(clust.len(), SCATTER_PAIRS, seed);
    let scatter = separation_scatter(bank, &clust.windows, &clust.tables, &pairs);
    Ok(suggest_beta(&scatter, BETA_QUANTILE, BETA_WITNESSES)?)
}

pub fn resolve_freq(
    bank: &SubspaceBank,
    clust: &Prepared,
    freq_tables: &[CountTable],
    beta: Choice,
    seed: u64,
) -> Result<FrequentPairs> {
    let beta = match beta {
        Choice::Fixed(b) => b,
        Choice::Auto => auto_beta(bank, clust, seed)?,
    };
    Ok(frequent_pairs(freq_tables, beta)?)
}

/// The distance matrix with rows computed in parallel.
pub fn par_distance_matrix(
    windows: &[WindowPair],
    bank: &SubspaceBank,
    freq: &FrequentPairs,
    lambda: f64,
) -> Result<DistanceMatrix> {
    let layout = EmbeddingLayout::new(bank, freq);
    let emb = embed_all(windows, bank, &layout);
    let n = emb.len();
    if n < 64 {
        return Ok(distance_matrix(&emb, &layout, lambda)?);
    }
    // validate λ with the serial path's checks on an empty input
    distance_matrix(&[], &layout, lambda)?;
    let rows: Vec<(Vec<[f64; 3]>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut empty = 0;
            let row = ((i + 1)..n)
                .map(|j| {
                    if !emb[i].observed.iter().zip(&emb[j].observed).any(|(&a, &b)| a && b) {
                        empty += 1;
                    }
                    let d = pairwise_distance(&emb[i], &emb[j], &layout, lambda);
                    [d.dist1, d.dist2, d.dist]
                })
                .collect();
            (row, empty)
        })
        .collect();
    let mut out = DistanceMatrix {
        n,
        lambda,
        dist1: vec![0.0; n * n],
        dist2: vec![0.0; n * n],
        dist: vec![0.0; n * n],
        pairs: layout.pairs.clone(),
        empty_intersections: 0,
    };
    for (i, (row, empty)) in rows.into_iter().enumerate() {
        out.empty_intersections += empty;
        for (off, d) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            for (m, v) in [(&mut out.dist1, d[0]), (&mut out.dist2, d[1]), (&mut out.dist, d[2])] {
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
    }
    Ok(out)
}

/// Distances, threshold and graph clustering over `clust`.
pub fn cluster_stage(
    clust: &Prepared,
    bank: &SubspaceBank,
    freq: FrequentPairs,
    params: &ClusterParams,
) -> Result<ClusterOutcome> {
    let dist = par_distance_matrix(&clust.windows, bank, &freq, params.lambda)?;
    let (tau, threshold) = match params.tau {
        Choice::Fixed(t) => (t, None),
        Choice::Auto => {
            let s = suggest_threshold(&dist.off_diagonal())
                .context("cannot pick τ automatically; pass a fixed --tau")?;
            (s.tau, Some(s))
        }
    };
    let graph = SimilarityGraph::from_distances(&dist, tau);
    let labels = cluster_graph(&graph, Some(&dist), params.k, params.backend, params.seed)?;
    Ok(ClusterOutcome {
        labels,
        dist,
        tau,
        freq,
        threshold,
    })
}

pub fn parse_backend(s: &str) -> Result<ClusterBackend> {
    Ok(match s {
        "spectral" => ClusterBackend::Spectral,
        "components" => ClusterBackend::Components,
        "agglomerative" => ClusterBackend::Agglomerative,
        other => bail!("unknown backend {other:?} (spectral|components|agglomerative)"),
    })
}

/// Histogram of off-diagonal distances; the last two columns split counts by
/// whether the true labels agree.
pub fn write_distance_histogram(
    path: &Path,
    dist: &DistanceMatrix,
    truth: Option<&[usize]>,
    bins: usize,
) -> Result<()> {
    let values = dist.off_diagonal();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![[0usize; 3]; bins];
    let n = dist.n;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = dist.dist[i * n + j];
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b][0] += 1;
            if let Some(t) = truth {
                counts[b][if t[i] == t[j] { 1 } else { 2 }] += 1;
            }
        }
    }
    let mut w = csv_writer(path)?;
    w.write_record(["bin_lo", "bin_hi", "count", "same_label", "different_label"])?;
    for (b, c) in counts.iter().enumerate() {
        let a = lo + b as f64 * width;
        w.write_record([
            a.to_string(),
            (a + width).to_string(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Similarity matrix with rows and columns sorted by predicted label (then
/// true label, then position).
pub fn write_block_matrix(
    path: &Path,
    dist: &DistanceMatrix,
    tau: f64,
    ids: &[u64],
    labels: &[usize],
    truth: Option<&[usize]>,
) -> Result<()> {
    let n = dist.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (labels[i], truth.map_or(0, |t| t[i]), i));
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string(), "label".into(), "true_label".into()];
    header.extend((0..n).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for &i in &order {
        let mut rec = vec![
            ids[i].to_string(),
            labels[i].to_string(),
            truth.map_or(String::new(), |t| t[i].to_string()),
        ];
        rec.extend(order.iter().map(|&j| if dist.dist[i * n + j] <= tau { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_energy(path: &Path, profile: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rank", "energy"])?;
    for (r, e) in profile.iter().enumerate() {
        w.write_record([(r + 1).to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "loglik"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One point per EM run: final log-likelihood against accuracy.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LoglikPoint {
    pub init: String,
    pub restart: usize,
    pub loglik: f64,
    pub accuracy: Option<f64>,
}

pub fn write_loglik_points(path: &Path, points: &[LoglikPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
