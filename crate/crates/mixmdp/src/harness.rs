//! Seeded experiment sweeps over trajectory length, projector variants and
//! EM initializations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mixmdp_core::clustering::ClusterBackend;
use mixmdp_core::em::{
    init_from_labels, random_init, run_em, run_em_from_params, EmConfig, EmData, EmMode, EmResult,
    EmScope,
};
use mixmdp_core::inference::{classify, classify_map, estimate_models, refined_bank, ClusterModels};
use mixmdp_core::metrics::permutation_accuracy;
use mixmdp_core::rng::derive_seed;
use mixmdp_core::segment::split_dataset;
use mixmdp_core::simulator::{
    build_gridworld_mixture, build_random_mixture, sample_dataset, GridworldSpec,
};
use mixmdp_core::subspace::{eigen_energy_profile, estimate_subspaces};
use mixmdp_core::MarkovMixture;

use crate::io::{csv_writer, ModeName};
use crate::pipeline::{
    cluster_stage, make_scheme, prepare, projected_bank, resolve_freq, write_block_matrix,
    write_distance_histogram, write_energy, write_loglik_points, write_trace, Choice, ClusterParams,
    LoglikPoint, Prepared, ProjectorVariant,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Gridworld(GridworldSpec),
    Random {
        states: usize,
        actions: usize,
        k: usize,
        delta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmInit {
    /// Dirichlet(1) responsibilities, several restarts.
    Random,
    /// Start from the models pooled over the clusters.
    ModelsFromClusters,
    /// Softened one-hot rows from cluster labels on the clustering set and
    /// classification labels on the subspace set.
    LabelsFromClusters,
}

impl EmInit {
    pub fn name(self) -> &'static str {
        match self {
            EmInit::Random => "em-random",
            EmInit::ModelsFromClusters => "em-models",
            EmInit::LabelsFromClusters => "em-labels",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => EmInit::Random,
            "models" | "models_from_clusters" => EmInit::ModelsFromClusters,
            "labels" | "labels_from_clusters_and_classification" => EmInit::LabelsFromClusters,
            other => bail!("unknown EM initialization {other:?}"),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub sweep: Vec<usize>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub k: usize,
    pub projectors: Vec<ProjectorVariant>,
    pub em_inits: Vec<EmInit>,
    pub em_restarts: usize,
    pub softening: f64,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub beta: Choice,
    pub tau: Choice,
    pub lambda: f64,
    pub backend: ClusterBackend,
    pub split_fraction: f64,
    pub blocks: Option<usize>,
    pub mode: ModeName,
    /// Record wall-clock time per row; off gives byte-identical reruns.
    pub timing: bool,
    pub diagnostics: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "gridworld".into(),
            scenario: Scenario::Gridworld(GridworldSpec::default()),
            sweep: vec![40, 60, 70, 100, 140, 200],
            n: 1000,
            trials: 10,
            seed: 0,
            k: 2,
            projectors: vec![ProjectorVariant::Learned, ProjectorVariant::Identity],
            em_inits: vec![],
            em_restarts: 30,
            softening: 0.2,
            em_tol: 1e-6,
            em_max_iter: 200,
            beta: Choice::Fixed(crate::pipeline::DEFAULT_BETA),
            tau: Choice::Fixed(crate::pipeline::DEFAULT_TAU),
            lambda: 1.0,
            backend: ClusterBackend::Spectral,
            split_fraction: 0.5,
            blocks: None,
            mode: ModeName::Full,
            timing: true,
            diagnostics: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.trials >= 1, "trials must be at least 1");
        ensure!(!self.sweep.is_empty(), "the T_n sweep is empty");
        ensure!(self.n >= 2, "need at least two trajectories");
        ensure!(
            !self.projectors.is_empty() || !self.em_inits.is_empty(),
            "nothing to run: no projector variants and no EM initializations"
        );
        ensure!(self.em_restarts >= 1, "em_restarts must be at least 1");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub variant: String,
    pub t_n: usize,
    pub trial: usize,
    pub clustering_error: Option<f64>,
    pub end_to_end_error: Option<f64>,
    pub loglik: Option<f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
}

/// Trial seed; depends only on the master seed, `T_n` and the trial index.
pub fn trial_seed(seed: u64, t_n: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(seed, t_n as u64), trial as u64)
}

fn scenario_mixture(scenario: &Scenario, seed: u64) -> Result<MarkovMixture> {
    Ok(match scenario {
        Scenario::Gridworld(spec) => build_gridworld_mixture(spec)?,
        Scenario::Random {
            states,
            actions,
            k,
            delta,
        } => build_random_mixture(*states, *actions, *k, *delta, seed)?.mixture,
    })
}

fn error_of(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    Ok(1.0 - permutation_accuracy(pred, truth, k)?)
}

struct TrialData {
    all: Prepared,
    truth: Vec<usize>,
    sub_idx: Vec<usize>,
    clust_idx: Vec<usize>,
}

fn trial_data(cfg: &ExperimentConfig, t_n: usize, seed: u64) -> Result<(TrialData, MarkovMixture)> {
    let mixture = scenario_mixture(&cfg.scenario, derive_seed(seed, 1))?;
    let trajs = sample_dataset(&mixture, cfg.n, t_n, seed)?;
    let scheme = make_scheme(t_n, cfg.blocks, cfg.mode)?;
    let all = prepare(&trajs, &scheme, mixture.num_states(), mixture.num_actions())?;
    let truth: Vec<usize> = trajs.iter().map(|t| t.true_label.unwrap_or(0)).collect();
    let split = split_dataset(&all.ids, cfg.split_fraction, derive_seed(seed, 2))?;
    Ok((
        TrialData {
            all,
            truth,
            sub_idx: split.sub,
            clust_idx: split.clust,
        },
        mixture,
    ))
}

/// Labels for every trajectory: cluster labels on the clustering set and
/// classification on the subspace set. Trajectories the distance classifier
/// cannot handle fall back to the likelihood classifier.
fn combined_labels(
    data: &TrialData,
    models: &ClusterModels,
    clust_labels: &[usize],
    freq: &mixmdp_core::clustering::FrequentPairs,
    k: usize,
    lambda: f64,
) -> Result<Vec<usize>> {
    let sub = data.all.subset(&data.sub_idx);
    let bank = refined_bank(models, k)?;
    let cls = classify(&sub.windows, models, &bank, freq, lambda)?;
    let fallback = classify_map(&EmData::from_tables(&sub.tables)?, &models.model, &EmScope::Full);
    let mut labels = vec![0; data.all.len()];
    for (pos, &i) in data.clust_idx.iter().enumerate() {
        labels[i] = clust_labels[pos];
    }
    for (pos, &i) in data.sub_idx.iter().enumerate() {
        labels[i] = cls.labels[pos].unwrap_or(fallback[pos]);
    }
    Ok(labels)
}

struct Diagnostics {
    dir: PathBuf,
    t_n: usize,
}

impl Diagnostics {
    fn path(&self, kind: &str, variant: &str) -> PathBuf {
        self.dir.join(format!("{kind}_{variant}_T{}.csv", self.t_n))
    }
}

fn run_trial(cfg: &ExperimentConfig, t_n: usize, trial: usize) -> Vec<ResultRow> {
    let start = Instant::now();
    let row = |variant: String| ResultRow {
        experiment: cfg.name.clone(),
        variant,
        t_n,
        trial,
        clustering_error: None,
        end_to_end_error: None,
        loglik: None,
        runtime_s: 0.0,
        error: None,
    };
    let variants: Vec<String> = cfg
        .projectors
        .iter()
        .map(|p| p.to_string())
        .chain(cfg.em_inits.iter().flat_map(|i| match i {
            EmInit::Random => vec![i.name().to_string(), "em-random-best".into()],
            _ => vec![i.name().to_string()],
        }))
        .collect();
    match trial_rows(cfg, t_n, trial, start) {
        Ok(rows) => rows,
        Err(e) => variants
            .into_iter()
            .map(|v| ResultRow {
                error: Some(format!("{e:#}")),
                ..row(v)
            })
            .collect(),
    }
}

fn trial_rows(cfg: &ExperimentConfig, t_n: usize, trial: usize, start: Instant) -> Result<Vec<ResultRow>> {
    let seed = trial_seed(cfg.seed, t_n, trial);
    let (data, _mixture) = trial_data(cfg, t_n, seed)?;
    let k = cfg.k;
    let sub = data.all.subset(&data.sub_idx);
    let clust = data.all.subset(&data.clust_idx);
    let clust_truth: Vec<usize> = data.clust_idx.iter().map(|&i| data.truth[i]).collect();
    let bank = estimate_subspaces(&sub.windows, k)?;
    let diag = cfg
        .diagnostics
        .as_ref()
        .filter(|_| trial == 0)
        .map(|d| Diagnostics { dir: d.clone(), t_n });
    if let Some(d) = &diag {
        write_energy(&d.path("eigen_energy", "learned"), &eigen_energy_profile(&bank))?;
    }
    let elapsed = |t: &Instant| if cfg.timing { t.elapsed().as_secs_f64() } else { 0.0 };
    let base = |variant: String| ResultRow {
        experiment: cfg.name.clone(),
        variant,
        t_n,
        trial,
        clustering_error: None,
        end_to_end_error: None,
        loglik: None,
        runtime_s: 0.0,
        error: None,
    };
    let params = ClusterParams {
        k,
        beta: cfg.beta,
        tau: cfg.tau,
        lambda: cfg.lambda,
        backend: cfg.backend,
        seed: derive_seed(seed, 3),
    };
    let freq = resolve_freq(&bank, &clust, &clust.tables, cfg.beta, derive_seed(seed, 4))?;

    let mut rows = Vec::new();
    let mut learned = None;
    let mut variants = cfg.projectors.clone();
    if !cfg.em_inits.is_empty() && !variants.contains(&ProjectorVariant::Learned) {
        variants.push(ProjectorVariant::Learned);
    }
    for variant in &variants {
        let vbank = projected_bank(&bank, *variant, derive_seed(seed, 5))?;
        let outcome = cluster_stage(&clust, &vbank, freq.clone(), &params)?;
        let clustering_error = error_of(&outcome.labels, &clust_truth, k)?;
        let models = estimate_models(&clust.tables, &outcome.labels, k)?;
        let all_labels = combined_labels(&data, &models, &outcome.labels, &freq, k, cfg.lambda)?;
        let e2e = error_of(&all_labels, &data.truth, k)?;
        if let Some(d) = &diag {
            let name = variant.to_string();
            write_distance_histogram(&d.path("dist_hist", &name), &outcome.dist, Some(&clust_truth), 100)?;
            write_block_matrix(
                &d.path("block_matrix", &name),
                &outcome.dist,
                outcome.tau,
                &clust.ids,
                &outcome.labels,
                Some(&clust_truth),
            )?;
        }
        if cfg.projectors.contains(variant) {
            rows.push(ResultRow {
                clustering_error: Some(clustering_error),
                end_to_end_error: Some(e2e),
                runtime_s: elapsed(&start),
                ..base(variant.to_string())
            });
        }
        if *variant == ProjectorVariant::Learned {
            learned = Some((models, all_labels, clustering_error));
        }
    }

    if cfg.em_inits.is_empty() {
        return Ok(rows);
    }
    let (models, all_labels, clustering_error) =
        learned.expect("learned variant always runs when EM is requested");
    let em_data = EmData::from_tables(&data.all.tables)?;
    let em_cfg = EmConfig {
        tol: cfg.em_tol,
        max_iter: cfg.em_max_iter,
        ..EmConfig::new(EmMode::Soft, EmScope::Full)
    };
    let mut points = Vec::new();
    for init in &cfg.em_inits {
        let t0 = Instant::now();
        match init {
            EmInit::Random => {
                let runs: Vec<EmResult> = (0..cfg.em_restarts)
                    .into_par_iter()
                    .map(|r| {
                        let init = random_init(data.all.len(), k, derive_seed(seed, 100 + r as u64));
                        run_em(&em_data, init, &em_cfg)
                    })
                    .collect::<Result<_, _>>()?;
                let mut errors = Vec::with_capacity(runs.len());
                for (r, run) in runs.iter().enumerate() {
                    let err = error_of(&run.labels, &data.truth, k)?;
                    errors.push(err);
                    points.push(LoglikPoint {
                        init: "random".into(),
                        restart: r,
                        loglik: run.loglik(),
                        accuracy: Some(1.0 - err),
                    });
                }
                let best = (0..runs.len())
                    .max_by(|&a, &b| runs[a].loglik().total_cmp(&runs[b].loglik()).then(b.cmp(&a)))
                    .unwrap_or(0);
                let mean_ll = runs.iter().map(EmResult::loglik).sum::<f64>() / runs.len() as f64;
                rows.push(ResultRow {
                    clustering_error: Some(clustering_error),
                    end_to_end_error: Some(errors.iter().sum::<f64>() / errors.len() as f64),
                    loglik: Some(mean_ll),
                    runtime_s: elapsed(&t0),
                    ..base(init.name().into())
                });
                rows.push(ResultRow {
                    clustering_error: Some(clustering_error),
                    end_to_end_error: Some(errors[best]),
                    loglik: Some(runs[best].loglik()),
                    runtime_s: elapsed(&t0),
                    ..base("em-random-best".into())
                });
            }
            EmInit::ModelsFromClusters | EmInit::LabelsFromClusters => {
                let run = if *init == EmInit::ModelsFromClusters {
                    run_em_from_params(&em_data, models.model.clone(), &em_cfg)?
                } else {
                    run_em(&em_data, init_from_labels(&all_labels, k, cfg.softening)?, &em_cfg)?
                };
                let err = error_of(&run.labels, &data.truth, k)?;
                points.push(LoglikPoint {
                    init: init.name().trim_start_matches("em-").into(),
                    restart: 0,
                    loglik: run.loglik(),
                    accuracy: Some(1.0 - err),
                });
                if let Some(d) = &diag {
                    write_trace(&d.path("loglik_trace", init.name()), &run.trace)?;
                }
                rows.push(ResultRow {
                    clustering_error: Some(clustering_error),
                    end_to_end_error: Some(err),
                    loglik: Some(run.loglik()),
                    runtime_s: elapsed(&t0),
                    ..base(init.name().into())
                });
            }
        }
    }
    if let Some(d) = &diag {
        write_loglik_points(&d.path("loglik_accuracy", "em"), &points)?;
    }
    Ok(rows)
}

/// Runs every `(T_n, trial)` job (in parallel) and returns rows ordered by
/// `T_n`, trial, then variant as configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if let Some(d) = &cfg.diagnostics {
        std::fs::create_dir_all(d)?;
    }
    let jobs: Vec<(usize, usize)> = cfg
        .sweep
        .iter()
        .flat_map(|&t| (0..cfg.trials).map(move |i| (t, i)))
        .collect();
    let rows: Vec<Vec<ResultRow>> = jobs.par_iter().map(|&(t, i)| run_trial(cfg, t, i)).collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut out = Vec::new();
    for r in crate::io::csv_reader(path)?.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Mean of a column over rows matching `variant` and `t_n`, skipping failed
/// rows.
pub fn mean_of(
    rows: &[ResultRow],
    variant: &str,
    t_n: usize,
    column: impl Fn(&ResultRow) -> Option<f64>,
) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.t_n == t_n && r.error.is_none())
        .filter_map(column)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Means per `(variant, T_n)`: `(variant, t_n, trials, clustering, end-to-end)`.
pub type Summary = Vec<(String, usize, usize, Option<f64>, Option<f64>)>;

pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (r.variant.clone(), r.t_n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(v, t)| {
            let n = rows.iter().filter(|r| r.variant == v && r.t_n == t && r.error.is_none()).count();
            let c = mean_of(rows, &v, t, |r| r.clustering_error);
            let e = mean_of(rows, &v, t, |r| r.end_to_end_error);
            (v, t, n, c, e)
        })
        .collect()
}
