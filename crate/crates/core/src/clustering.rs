//! Pairwise-distance clustering of trajectories.
//!
//! Each trajectory's window estimates are projected through the per-pair
//! subspaces. The distance between trajectories `n` and `m` is a double
//! estimator: the inner product of the projected difference from the first
//! window with the projected difference from the second, maximised over the
//! frequent pairs (`dist₁`), optionally blended with the same construction on
//! occupancies (`dist₂`). Thresholding the distances gives a similarity
//! graph, which is then partitioned into `K` groups.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::WindowPair;
use crate::linalg::{dot, symmetric_eigen, Matrix};
use crate::rng::stream_rng;
use crate::segment::CountTable;
use crate::subspace::SubspaceBank;

/// State-action pairs whose share of recorded window observations exceeds
/// `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequentPairs {
    pub beta: f64,
    /// Flat pair indices, ascending.
    pub pairs: Vec<usize>,
    /// Observation share of every pair (length `S·A`).
    pub frequencies: Vec<f64>,
}

impl FrequentPairs {
    pub fn contains(&self, pair: usize) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.frequencies.len()];
        for &p in &self.pairs {
            m[p] = true;
        }
        m
    }
}

/// Observation share of every pair across both windows of `tables`.
pub fn pair_frequencies<'a>(tables: impl IntoIterator<Item = &'a CountTable>) -> Vec<f64> {
    let mut counts: Vec<u64> = Vec::new();
    for t in tables {
        if counts.is_empty() {
            counts = vec![0; t.num_pairs()];
        }
        for w in &t.windows {
            for (pair, c) in w.iter() {
                counts[pair] += c.total;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

pub fn frequent_pairs<'a>(
    tables: impl IntoIterator<Item = &'a CountTable>,
    beta: f64,
) -> Result<FrequentPairs> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta = {beta} outside [0, 1)")));
    }
    let frequencies = pair_frequencies(tables);
    let pairs: Vec<usize> = (0..frequencies.len()).filter(|&p| frequencies[p] > beta).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyFrequentSet {
            beta,
            max_frequency: frequencies.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(FrequentPairs {
        beta,
        pairs,
        frequencies,
    })
}

/// Where each frequent pair's projected coordinates live inside an
/// [`Embedding`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingLayout {
    pub pairs: Vec<usize>,
    offsets: Vec<usize>,
    dims: Vec<usize>,
}

impl EmbeddingLayout {
    pub fn new(bank: &SubspaceBank, freq: &FrequentPairs) -> Self {
        let mut offsets = Vec::with_capacity(freq.pairs.len());
        let mut dims = Vec::with_capacity(freq.pairs.len());
        let mut off = 0;
        for &p in &freq.pairs {
            offsets.push(off);
            let r = bank.projector(p).rows();
            dims.push(r);
            off += r;
        }
        EmbeddingLayout {
            pairs: freq.pairs.clone(),
            offsets,
            dims,
        }
    }

    fn span(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.dims[i]
    }

    pub fn width(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.dims[self.dims.len() - 1])
    }
}

/// Projected window estimates of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// `V_{s,a} P̂_{n,w}(·|s,a)` for every frequent pair, concatenated.
    pub coords: [Vec<f64>; 2],
    /// `U d̂_{n,w}`.
    pub occupancy: [Vec<f64>; 2],
    /// Frequent pair seen in both windows.
    pub observed: Vec<bool>,
}

pub fn embed(est: &WindowPair, bank: &SubspaceBank, layout: &EmbeddingLayout) -> Embedding {
    let project = |w: usize| {
        let mut out = vec![0.0; layout.width()];
        let window = est.window(w);
        for (i, &pair) in layout.pairs.iter().enumerate() {
            if let Some(row) = window.row(pair) {
                let v = bank.projector(pair);
                for (slot, r) in layout.span(i).zip(0..v.rows()) {
                    out[slot] = dot(v.row(r), row);
                }
            }
        }
        out
    };
    let project_occupancy = |w: usize| {
        let u = &bank.occupancy_projector;
        let window = est.window(w);
        (0..u.rows())
            .map(|r| {
                let urow = u.row(r);
                window.occupancy_entries().map(|(pair, d)| urow[pair] * d).sum()
            })
            .collect()
    };
    Embedding {
        coords: [project(0), project(1)],
        occupancy: [project_occupancy(0), project_occupancy(1)],
        observed: layout.pairs.iter().map(|&p| est.observed_in_both(p)).collect(),
    }
}

pub fn embed_all(
    estimates: &[WindowPair],
    bank: &SubspaceBank,
    layout: &EmbeddingLayout,
) -> Vec<Embedding> {
    estimates.iter().map(|e| embed(e, bank, layout)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairDistance {
    pub dist1: f64,
    pub dist2: f64,
    pub dist: f64,
}

fn diff_dot(a1: &[f64], b1: &[f64], a2: &[f64], b2: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a1.len() {
        acc += (a1[i] - b1[i]) * (a2[i] - b2[i]);
    }
    acc
}

/// Per-pair double-estimator inner products `Δ̂₁ᵀΔ̂₂` between two
/// trajectories, in layout order.
pub fn pair_inner_products(a: &Embedding, b: &Embedding, layout: &EmbeddingLayout) -> Vec<f64> {
    (0..layout.pairs.len())
        .map(|i| {
            let r = layout.span(i);
            diff_dot(
                &a.coords[0][r.clone()],
                &b.coords[0][r.clone()],
                &a.coords[1][r.clone()],
                &b.coords[1][r],
            )
        })
        .collect()
}

pub fn pairwise_distance(
    a: &Embedding,
    b: &Embedding,
    layout: &EmbeddingLayout,
    lambda: f64,
) -> PairDistance {
    let dist1 = pair_inner_products(a, b, layout)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let dist2 = diff_dot(&a.occupancy[0], &b.occupancy[0], &a.occupancy[1], &b.occupancy[1]);
    PairDistance {
        dist1,
        dist2,
        dist: lambda * dist1 + (1.0 - lambda) * dist2,
    }
}

/// Symmetric `n × n` distance matrices, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    pub lambda: f64,
    pub dist1: Vec<f64>,
    pub dist2: Vec<f64>,
    pub dist: Vec<f64>,
    pub pairs: Vec<usize>,
    /// Trajectory pairs sharing no frequent pair observed in both windows
    /// by both trajectories.
    pub empty_intersections: usize,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Off-diagonal values of `dist` (upper triangle).
    pub fn off_diagonal(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n.saturating_sub(1)) / 2);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                out.push(self.dist[i * self.n + j]);
            }
        }
        out
    }
}

pub fn distance_matrix(
    embeddings: &[Embedding],
    layout: &EmbeddingLayout,
    lambda: f64,
) -> Result<DistanceMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} outside [0, 1]")));
    }
    let n = embeddings.len();
    let mut dist1 = vec![0.0; n * n];
    let mut dist2 = vec![0.0; n * n];
    let mut dist = vec![0.0; n * n];
    let mut empty = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = pairwise_distance(&embeddings[i], &embeddings[j], layout, lambda);
            for (m, v) in [(&mut dist1, d.dist1), (&mut dist2, d.dist2), (&mut dist, d.dist)] {
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
            let shared = embeddings[i]
                .observed
                .iter()
                .zip(&embeddings[j].observed)
                .any(|(&a, &b)| a && b);
            if !shared {
                empty += 1;
            }
        }
    }
    Ok(DistanceMatrix {
        n,
        lambda,
        dist1,
        dist2,
        dist,
        pairs: layout.pairs.clone(),
        empty_intersections: empty,
    })
}

/// Kernel density over the off-diagonal distances and the valley picked as
/// threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSuggestion {
    pub tau: f64,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

const KDE_GRID: usize = 512;

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Gaussian KDE with Silverman's bandwidth evaluated on a regular grid by
/// linear binning. The threshold is the first local minimum to the right of
/// the mode closest to zero that is followed by another mode.
pub fn suggest_threshold(values: &[f64]) -> Result<ThresholdSuggestion> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::TooFewDistances);
    }
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = libm::sqrt(sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = 0.9 * spread * libm::pow(n, -0.2);

    let lo = sorted[0] - 3.0 * bandwidth;
    let hi = sorted[sorted.len() - 1] + 3.0 * bandwidth;
    let step = (hi - lo) / (KDE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID).map(|i| lo + i as f64 * step).collect();
    let mut bins = vec![0.0; KDE_GRID];
    for &v in &sorted {
        let pos = (v - lo) / step;
        let i = (libm::floor(pos) as usize).min(KDE_GRID - 2);
        let frac = pos - i as f64;
        bins[i] += 1.0 - frac;
        bins[i + 1] += frac;
    }
    let reach = (libm::ceil(5.0 * bandwidth / step) as usize).min(KDE_GRID);
    let kernel: Vec<f64> = (0..=reach)
        .map(|d| {
            let z = d as f64 * step / bandwidth;
            libm::exp(-0.5 * z * z)
        })
        .collect();
    let norm = 1.0 / (n * bandwidth * libm::sqrt(2.0 * core::f64::consts::PI));
    let density: Vec<f64> = (0..KDE_GRID)
        .map(|i| {
            let from = i.saturating_sub(reach);
            let to = (i + reach).min(KDE_GRID - 1);
            (from..=to).map(|j| bins[j] * kernel[i.abs_diff(j)]).sum::<f64>() * norm
        })
        .collect();

    let is_mode = |i: usize| {
        (i == 0 || density[i] > density[i - 1]) && (i + 1 == KDE_GRID || density[i] >= density[i + 1])
    };
    let modes: Vec<usize> = (0..KDE_GRID).filter(|&i| is_mode(i)).collect();
    let first = *modes
        .iter()
        .min_by(|&&a, &&b| libm::fabs(grid[a]).total_cmp(&libm::fabs(grid[b])))
        .ok_or(Error::UnimodalDistances)?;
    let next_mode = modes.iter().copied().find(|&m| m > first).ok_or(Error::UnimodalDistances)?;
    let valley = (first..=next_mode)
        .min_by(|&a, &b| density[a].total_cmp(&density[b]))
        .ok_or(Error::UnimodalDistances)?;
    Ok(ThresholdSuggestion {
        tau: grid[valley],
        bandwidth,
        grid,
        density,
    })
}

/// Boolean adjacency `simil(n,m) = dist(n,m) ≤ τ`, diagonal included.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub n: usize,
    pub adjacency: Vec<bool>,
}

impl SimilarityGraph {
    pub fn from_distances(dist: &DistanceMatrix, tau: f64) -> Self {
        let n = dist.n;
        let mut adjacency: Vec<bool> = dist.dist.iter().map(|&d| d <= tau).collect();
        for i in 0..n {
            adjacency[i * n + i] = true;
        }
        SimilarityGraph { n, adjacency }
    }

    pub fn from_adjacency(n: usize, adjacency: Vec<bool>) -> Result<Self> {
        if adjacency.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for {n} nodes", adjacency.len())));
        }
        for i in 0..n {
            if !adjacency[i * n + i] {
                return Err(Error::InvalidParameter(format!("node {i} lacks a self-loop")));
            }
            for j in 0..i {
                if adjacency[i * n + j] != adjacency[j * n + i] {
                    return Err(Error::InvalidParameter("similarity matrix is not symmetric".into()));
                }
            }
        }
        Ok(SimilarityGraph { n, adjacency })
    }

    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterBackend {
    Spectral,
    Components,
    Agglomerative,
}

pub const KMEANS_RESTARTS: usize = 50;

/// Partitions the graph into `k` labelled groups. `Agglomerative` ignores
/// the graph and runs average linkage on `dist`.
pub fn cluster_graph(
    graph: &SimilarityGraph,
    dist: Option<&DistanceMatrix>,
    k: usize,
    backend: ClusterBackend,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if k > graph.n {
        return Err(Error::TooManyClusters { k, n: graph.n });
    }
    let labels = match backend {
        ClusterBackend::Spectral => spectral_labels(graph, k, seed)?,
        ClusterBackend::Components => component_labels(graph, k)?,
        ClusterBackend::Agglomerative => {
            let dist = dist.ok_or_else(|| {
                Error::InvalidParameter("agglomerative clustering needs the distance matrix".into())
            })?;
            average_linkage(&dist.dist, dist.n, k)
        }
    };
    Ok(canonical_labels(&labels))
}

/// Renumbers labels in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = Vec::new();
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map.len() <= l {
                map.resize(l + 1, None);
            }
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

fn spectral_labels(graph: &SimilarityGraph, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = graph.n;
    let raw: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| graph.edge(i, j)).count() as f64)
        .collect();
    // regularize with mean degree / n on every entry so an isolated vertex
    // cannot claim an eigenvector of its own
    let reg = raw.iter().sum::<f64>() / (n * n) as f64;
    let degree: Vec<f64> = raw.iter().map(|d| d + reg * n as f64).collect();
    // eigenvectors of D^{-1/2} W D^{-1/2} with the largest eigenvalues are the
    // bottom eigenvectors of the normalized Laplacian
    let mut norm_adj = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let w = if graph.edge(i, j) { 1.0 + reg } else { reg };
            norm_adj.set(i, j, w / libm::sqrt(degree[i] * degree[j]));
        }
    }
    let eig = symmetric_eigen(&norm_adj)?;
    let mut points = vec![0.0; n * k];
    for c in 0..k {
        let col = n - 1 - c;
        for i in 0..n {
            points[i * k + c] = eig.vectors.get(i, col);
        }
    }
    for i in 0..n {
        let row = &mut points[i * k..(i + 1) * k];
        let nrm = libm::sqrt(dot(row, row));
        if nrm > 0.0 {
            row.iter_mut().for_each(|x| *x /= nrm);
        }
    }
    Ok(kmeans(&points, k, k, KMEANS_RESTARTS, seed).labels)
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; keeps the best of `restarts`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, restarts: usize, seed: u64) -> KMeansResult {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut best = KMeansResult {
        labels: vec![0; n],
        inertia: f64::INFINITY,
    };
    for restart in 0..restarts.max(1) {
        let mut rng = stream_rng(seed, restart as u64);
        let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
        let first = rng.random_range(0..n);
        centers.extend_from_slice(point(first));
        let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
        for _ in 1..k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = n - 1;
                for (i, &d) in nearest.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centers.extend_from_slice(point(pick));
            for i in 0..n {
                nearest[i] = nearest[i].min(sq_dist(point(i), point(pick)));
            }
        }

        let mut labels = vec![0usize; n];
        let mut inertia = f64::INFINITY;
        for _iter in 0..300 {
            let mut changed = false;
            inertia = 0.0;
            for i in 0..n {
                let (mut bl, mut bd) = (0, f64::INFINITY);
                for c in 0..k {
                    let d = sq_dist(point(i), &centers[c * dim..(c + 1) * dim]);
                    if d < bd {
                        bl = c;
                        bd = d;
                    }
                }
                if labels[i] != bl {
                    labels[i] = bl;
                    changed = true;
                }
                inertia += bd;
            }
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[labels[i]] += 1;
                for d in 0..dim {
                    sums[labels[i] * dim + d] += point(i)[d];
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for d in 0..dim {
                        centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                    }
                }
            }
            if !changed && _iter > 0 {
                break;
            }
        }
        if inertia < best.inertia {
            best = KMeansResult { labels, inertia };
        }
    }
    best
}

fn connected_components(graph: &SimilarityGraph, members: &[usize]) -> Vec<Vec<usize>> {
    let n = graph.n;
    let mut in_set = vec![false; n];
    for &m in members {
        in_set[m] = true;
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for &start in members {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for v in 0..n {
                if in_set[v] && !seen[v] && graph.edge(u, v) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Splits a node set in two by the sign of the Fiedler vector of its
/// induced subgraph; falls back to halving by index when the split is empty.
fn bisect(graph: &SimilarityGraph, members: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = members.len();
    let mut lap = Matrix::zeros(m, m);
    for (a, &i) in members.iter().enumerate() {
        for (b, &j) in members.iter().enumerate() {
            if a != b && graph.edge(i, j) {
                lap.set(a, b, -1.0);
                lap.add_to(a, a, 1.0);
            }
        }
    }
    let eig = symmetric_eigen(&lap)?;
    let fiedler = if m > 1 { eig.vector(1) } else { vec![0.0] };
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (a, &i) in members.iter().enumerate() {
        if fiedler[a] < 0.0 {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        let half = m / 2;
        return Ok((members[..half].to_vec(), members[half..].to_vec()));
    }
    Ok((left, right))
}

fn component_labels(graph: &SimilarityGraph, k: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..graph.n).collect();
    let mut groups = connected_components(graph, &all);
    // largest first, ties by smallest member
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    while groups.len() < k {
        let largest = groups.remove(0);
        let (l, r) = bisect(graph, &largest)?;
        groups.push(l);
        groups.push(r);
        groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    }
    let mut kept: Vec<Vec<usize>> = groups.drain(..k).collect();
    // merge leftovers, largest first, into whichever kept group is smallest
    for extra in groups {
        let target = (0..k).min_by_key(|&i| (kept[i].len(), i)).unwrap_or(0);
        kept[target].extend(extra);
    }
    let mut labels = vec![0; graph.n];
    for (label, group) in kept.iter().enumerate() {
        for &i in group {
            labels[i] = label;
        }
    }
    Ok(labels)
}

/// Average-linkage (UPGMA) agglomeration down to `k` clusters.
pub fn average_linkage(dist: &[f64], n: usize, k: usize) -> Vec<usize> {
    let mut d = dist.to_vec();
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut clusters = n;
    while clusters > k {
        let (mut bi, mut bj, mut bd) = (0, 0, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && d[i * n + j] < bd {
                    bi = i;
                    bj = j;
                    bd = d[i * n + j];
                }
            }
        }
        let (si, sj) = (size[bi] as f64, size[bj] as f64);
        for m in 0..n {
            if active[m] && m != bi && m != bj {
                let v = (si * d[bi * n + m] + sj * d[bj * n + m]) / (si + sj);
                d[bi * n + m] = v;
                d[m * n + bi] = v;
            }
        }
        size[bi] += size[bj];
        active[bj] = false;
        for o in owner.iter_mut() {
            if *o == bj {
                *o = bi;
            }
        }
        clusters -= 1;
    }
    owner
}

/// One point of the β-selection scatter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub pair: usize,
    /// Mean `Δ̂₁ᵀΔ̂₂` over the sampled trajectory pairs.
    pub mean_inner: f64,
    /// Empirical share of window observations.
    pub occupancy: f64,
}

/// Deterministic sample of up to `count` distinct unordered pairs from
/// `0..n`.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if total <= count {
        let mut all = Vec::with_capacity(total);
        for i in 0..n {
            for j in (i + 1)..n {
                all.push((i, j));
            }
        }
        return all;
    }
    let mut rng = stream_rng(seed, 0x5ca7);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            out.push((i.min(j), i.max(j)));
        }
    }
    out
}

/// Per-pair average separation against occupancy over every state-action
/// pair of the bank.
pub fn separation_scatter(
    bank: &SubspaceBank,
    estimates: &[WindowPair],
    tables: &[CountTable],
    sampled: &[(usize, usize)],
) -> Vec<ScatterPoint> {
    let all = FrequentPairs {
        beta: 0.0,
        pairs: (0..bank.num_pairs()).collect(),
        frequencies: vec![0.0; bank.num_pairs()],
    };
    let layout = EmbeddingLayout::new(bank, &all);
    let embeddings = embed_all(estimates, bank, &layout);
    let mut sums = vec![0.0; bank.num_pairs()];
    for &(i, j) in sampled {
        for (p, v) in pair_inner_products(&embeddings[i], &embeddings[j], &layout)
            .into_iter()
            .enumerate()
        {
            sums[p] += v;
        }
    }
    let occupancy = pair_frequencies(tables);
    let denom = sampled.len().max(1) as f64;
    (0..bank.num_pairs())
        .map(|p| ScatterPoint {
            pair: p,
            mean_inner: sums[p] / denom,
            occupancy: occupancy.get(p).copied().unwrap_or(0.0),
        })
        .collect()
}

/// Picks β from the scatter: among pairs whose mean separation is in the
/// top `1 - quantile` fraction, take the `witnesses` most frequent ones and
/// set β just below the least frequent of them.
pub fn suggest_beta(scatter: &[ScatterPoint], quantile: f64, witnesses: usize) -> Result<f64> {
    let mut seps: Vec<f64> = scatter.iter().map(|p| p.mean_inner).collect();
    if seps.is_empty() {
        return Err(Error::EmptyDataset);
    }
    seps.sort_by(f64::total_cmp);
    let cut = quantile_sorted(&seps, quantile.clamp(0.0, 1.0));
    let mut top: Vec<f64> = scatter
        .iter()
        .filter(|p| p.mean_inner >= cut && p.occupancy > 0.0)
        .map(|p| p.occupancy)
        .collect();
    if top.is_empty() {
        return Err(Error::InvalidParameter("no observed pair in the top separation quantile".into()));
    }
    top.sort_by(|a, b| b.total_cmp(a));
    let pick = top[witnesses.clamp(1, top.len()) - 1];
    Ok(pick * (1.0 - 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_graph(sizes: &[usize]) -> SimilarityGraph {
        let n: usize = sizes.iter().sum();
        let mut owner = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            owner.extend(core::iter::repeat_n(b, s));
        }
        let adjacency = (0..n * n).map(|x| owner[x / n] == owner[x % n]).collect();
        SimilarityGraph { n, adjacency }
    }

    #[test]
    fn spectral_recovers_blocks() {
        let g = block_graph(&[6, 4]);
        let labels = cluster_graph(&g, None, 2, ClusterBackend::Spectral, 0).unwrap();
        assert_eq!(labels, alloc::vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn spectral_ignores_isolated_vertex() {
        let g = block_graph(&[6, 5, 1]);
        let labels = cluster_graph(&g, None, 2, ClusterBackend::Spectral, 0).unwrap();
        assert_eq!(&labels[..11], &[0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn single_cluster() {
        let g = SimilarityGraph {
            n: 5,
            adjacency: vec![true; 25],
        };
        for backend in [ClusterBackend::Spectral, ClusterBackend::Components] {
            assert_eq!(cluster_graph(&g, None, 1, backend, 0).unwrap(), vec![0; 5]);
        }
    }

    #[test]
    fn rejects_too_many_clusters() {
        let g = block_graph(&[2]);
        assert_eq!(
            cluster_graph(&g, None, 3, ClusterBackend::Spectral, 0),
            Err(Error::TooManyClusters { k: 3, n: 2 })
        );
    }

    #[test]
    fn components_merge_and_split() {
        let g = block_graph(&[4, 3, 1]);
        let labels = cluster_graph(&g, None, 2, ClusterBackend::Components, 0).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let g = block_graph(&[6]);
        let labels = cluster_graph(&g, None, 2, ClusterBackend::Components, 0).unwrap();
        let zeros = labels.iter().filter(|&&l| l == 0).count();
        assert!(zeros > 0 && zeros < 6);
    }

    #[test]
    fn average_linkage_two_groups() {
        let pts = [0.0, 0.1, 0.2, 5.0, 5.1];
        let n = pts.len();
        let dist: Vec<f64> = (0..n * n).map(|x| libm::fabs(pts[x / n] - pts[x % n])).collect();
        assert_eq!(canonical_labels(&average_linkage(&dist, n, 2)), vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn threshold_between_point_masses() {
        let mut values = vec![0.0; 60];
        values.extend(vec![1.0; 40]);
        let t = suggest_threshold(&values).unwrap();
        assert!(t.tau > 0.1 && t.tau < 0.9, "{}", t.tau);
    }

    #[test]
    fn threshold_rejects_unimodal() {
        let values: Vec<f64> = (0..200).map(|i| libm::sin(i as f64) * 0.1).collect();
        assert_eq!(suggest_threshold(&values), Err(Error::UnimodalDistances));
        assert_eq!(suggest_threshold(&[1.0, 1.0]), Err(Error::TooFewDistances));
    }

    #[test]
    fn beta_bounds() {
        assert!(matches!(
            frequent_pairs(core::iter::empty(), 1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn canonical_relabel() {
        assert_eq!(canonical_labels(&[3, 3, 1, 0, 1]), vec![0, 0, 1, 2, 1]);
    }
}
