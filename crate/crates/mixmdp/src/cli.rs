//! Command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mixmdp_core::em::{
    init_from_labels, random_init, run_em, EmConfig, EmData, EmMode, EmResult, EmScope,
    Responsibilities,
};
use mixmdp_core::inference::{classify, estimate_models, refined_bank};
use mixmdp_core::metrics::permutation_match;
use mixmdp_core::rng::derive_seed;
use mixmdp_core::segment::split_dataset;
use mixmdp_core::simulator::{
    build_gridworld_mixture, build_random_mixture, max_separations, mixing_report, sample_dataset,
    BehaviorPolicy, GridworldSpec,
};
use mixmdp_core::subspace::{eigen_energy_profile, estimate_subspaces, select_k};
use mixmdp_core::clustering::{frequent_pairs, FrequentPairs};
use mixmdp_core::SegmentScheme;

use crate::harness::{run_experiment, summarize, write_results, EmInit, ExperimentConfig, Scenario};
use crate::io::{
    read_json, read_labels, read_trajectories, write_json, write_labels, write_matrix_rows,
    write_trajectories, BankFile, EstimateFile, MixingFile, ModeName, ModelFile, TruthFile,
};
use crate::pipeline::{
    cluster_stage, infer_dims, make_scheme, parse_backend, positions, prepare, resolve_freq,
    scheme_file, write_block_matrix, write_distance_histogram, write_energy, write_loglik_points,
    write_trace, Choice, ClusterParams, LoglikPoint, ProjectorVariant, DEFAULT_BETA,
};

#[derive(Debug, Parser)]
#[command(name = "mixmdp", version, about = "Learn mixtures of Markov chains and MDPs from short trajectories")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// TOML file of flag values; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample trajectories from a gridworld or random mixture.
    Generate(GenerateArgs),
    /// Estimate per-pair subspaces from the subspace split.
    Subspace(SubspaceArgs),
    /// Cluster the clustering split.
    Cluster(ClusterArgs),
    /// Refine labels with EM.
    Em(EmArgs),
    /// Estimate one model per cluster.
    Estimate(EstimateArgs),
    /// Classify trajectories against estimated models.
    Classify(ClassifyArgs),
    /// Run a seeded sweep and write the results CSV.
    Experiment(ExperimentArgs),
    /// Score predicted labels against the true labels.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioName {
    Gridworld,
    Random,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum, default_value_t = ScenarioName::Gridworld)]
    pub scenario: ScenarioName,
    /// Grid width (gridworld).
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Grid height (gridworld).
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    /// Adversarial strength η (gridworld).
    #[arg(long, default_value_t = 0.3)]
    pub eta: f64,
    /// Slip probability (gridworld).
    #[arg(long, default_value_t = 0.1)]
    pub slip: f64,
    /// Exploration rate of the shared ε-greedy behaviour policy; 1 is uniform.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Number of states (random).
    #[arg(long = "states", short = 'S', default_value_t = 10)]
    pub states: usize,
    /// Number of actions (random).
    #[arg(long = "actions", short = 'A', default_value_t = 1)]
    pub actions: usize,
    /// Number of labels (random; the gridworld always has 2).
    #[arg(long = "labels", default_value_t = 2)]
    pub labels: usize,
    /// Target separation Δ (random).
    #[arg(long, default_value_t = 1.2)]
    pub delta: f64,
}

impl ScenarioArgs {
    fn gridworld(&self) -> GridworldSpec {
        let mut spec = GridworldSpec::new(self.width, self.height);
        spec.adversarial_strength = self.eta;
        spec.slip = self.slip;
        spec.policy = if self.epsilon >= 1.0 {
            BehaviorPolicy::Uniform
        } else {
            BehaviorPolicy::EpsilonGreedy { epsilon: self.epsilon }
        };
        spec
    }

    fn scenario(&self) -> Scenario {
        match self.scenario {
            ScenarioName::Gridworld => Scenario::Gridworld(self.gridworld()),
            ScenarioName::Random => Scenario::Random {
                states: self.states,
                actions: self.actions,
                k: self.labels,
                delta: self.delta,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Trajectory length T_n.
    #[arg(long = "length", short = 'T', default_value_t = 200)]
    pub length: usize,
    /// Number of trajectories.
    #[arg(long, short = 'N', default_value_t = 1000)]
    pub n: usize,
    /// Output JSONL path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Sidecar JSON with the true mixture and mixing report
    /// (default: `<out>.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Skip the mixing-time measurement.
    #[arg(long)]
    pub no_mixing: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Blocks per segment G (default ⌊T_n/4⌋).
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Which transitions are counted: every one, or one per block.
    #[arg(long = "count-mode", id = "count_mode", value_enum, default_value_t = ModeName::Full)]
    pub mode: ModeName,
}

#[derive(Debug, Args)]
pub struct SubspaceArgs {
    /// Trajectories (JSONL).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Fraction of trajectories used for subspace estimation.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    /// Number of components, or `auto`.
    #[arg(long, short = 'K', default_value = "2")]
    pub k: String,
    /// Energy ratio that `auto` requires between consecutive ranks.
    #[arg(long, default_value_t = 10.0)]
    pub energy_factor: f64,
    #[command(flatten)]
    pub segment: SegmentArgs,
    /// Output bank JSON.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Eigen-energy CSV.
    #[arg(long)]
    pub energy_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Bank JSON from `subspace`.
    #[arg(long)]
    pub bank: PathBuf,
    /// Number of clusters (default: the bank's K).
    #[arg(long, short = 'K')]
    pub k: Option<usize>,
    /// Frequency threshold β, or `auto`.
    #[arg(long, default_value = "0.02")]
    pub beta: Choice,
    /// Distance threshold τ, or `auto`.
    #[arg(long, default_value = "0.1")]
    pub tau: Choice,
    /// Weight of the transition distance against the occupancy distance.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// spectral | components | agglomerative
    #[arg(long, default_value = "spectral")]
    pub backend: String,
    /// learned | identity | random:<dim>
    #[arg(long, default_value = "learned")]
    pub projector: ProjectorVariant,
    /// Compute frequent pairs over every trajectory instead of the
    /// clustering split only.
    #[arg(long)]
    pub freq_all: bool,
    /// Output labels CSV (id,label).
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub hist_csv: Option<PathBuf>,
    #[arg(long)]
    pub block_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Restricted,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
pub struct EmArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Labels CSV, or `random:<seed>:<restarts>`.
    #[arg(long)]
    pub init: String,
    #[arg(long, short = 'K')]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = Variant::Full)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = ModeArg::Soft)]
    pub mode: ModeArg,
    /// Mass spread uniformly over labels when initializing from labels.
    #[arg(long, default_value_t = 0.2)]
    pub softening: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// β for the restricted variant's frequent pairs.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[command(flatten)]
    pub segment: SegmentArgs,
    /// Responsibilities CSV.
    #[arg(long)]
    pub resp_out: PathBuf,
    /// Parameter JSON.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    /// Log-likelihood trace CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Final log-likelihood against accuracy per run (needs true labels).
    #[arg(long)]
    pub loglik_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Cluster labels CSV.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, short = 'K')]
    pub k: Option<usize>,
    /// β for the frequent pairs stored with the estimate.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[command(flatten)]
    pub segment: SegmentArgs,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Estimate JSON from `estimate`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Only classify these ids (labels CSV or bank JSON `sub_ids`).
    #[arg(long)]
    pub only_bank_split: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Experiment name written into every row.
    #[arg(long, default_value = "gridworld")]
    pub name: String,
    /// Comma-separated trajectory lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [40usize, 60, 70, 100, 140, 200])]
    pub sweep: Vec<usize>,
    #[arg(long, short = 'N', default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, short = 'K', default_value_t = 2)]
    pub k: usize,
    /// Comma-separated projector variants: learned, identity, random:<dim>.
    #[arg(long, value_delimiter = ',', default_value = "learned,identity")]
    pub projectors: Vec<ProjectorVariant>,
    /// Comma-separated EM initializations: random, models, labels.
    #[arg(long, value_delimiter = ',')]
    pub em_inits: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub em_restarts: usize,
    #[arg(long, default_value_t = 0.2)]
    pub softening: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value = "0.02")]
    pub beta: Choice,
    #[arg(long, default_value = "0.1")]
    pub tau: Choice,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value = "spectral")]
    pub backend: String,
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    #[command(flatten)]
    pub segment: SegmentArgs,
    /// Write 0 for runtimes so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// Directory for diagnostic CSVs of trial 0.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted labels CSV.
    #[arg(long)]
    pub pred: PathBuf,
    /// Trajectories with true labels (JSONL).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, short = 'K')]
    pub k: Option<usize>,
}

/// Turns a TOML config into `--flag value` arguments. Top-level scalars and
/// the table named after `command` contribute; arrays become comma lists
/// and `true` booleans become bare flags.
pub fn config_args(text: &str, command: &str) -> Result<Vec<OsString>> {
    let table: toml::Table = text.parse().context("parsing config")?;
    let mut flat: BTreeMap<String, toml::Value> = BTreeMap::new();
    for (k, v) in &table {
        if !v.is_table() {
            flat.insert(k.clone(), v.clone());
        }
    }
    if let Some(toml::Value::Table(section)) = table.get(command) {
        for (k, v) in section {
            flat.insert(k.clone(), v.clone());
        }
    }
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => bail!("unsupported config value {other}"),
        })
    };
    let mut out = Vec::new();
    for (k, v) in flat {
        let flag = format!("--{}", k.replace('_', "-"));
        match &v {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                out.push(flag.into());
                out.push(joined.join(",").into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(other)?.into());
            }
        }
    }
    Ok(out)
}

/// Splices config-file arguments in right after the subcommand name so
/// explicit flags, which come later, win.
fn with_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pre = Cli::try_parse_from(&args);
    let Ok(cli) = pre else { return Ok(args) };
    let Some(path) = cli.config else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let name = command_name(&cli.command);
    let pos = args
        .iter()
        .position(|a| a.to_str() == Some(name))
        .context("subcommand not found in arguments")?;
    let mut out = args[..=pos].to_vec();
    out.extend(config_args(&text, name)?);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::Subspace(_) => "subspace",
        Command::Cluster(_) => "cluster",
        Command::Em(_) => "em",
        Command::Estimate(_) => "estimate",
        Command::Classify(_) => "classify",
        Command::Experiment(_) => "experiment",
        Command::Evaluate(_) => "evaluate",
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = with_config(args)?;
    let cli = Cli::try_parse_from(args)?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // a second call (tests running several commands) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let seed = cli.seed;
    match cli.command {
        Command::Generate(a) => generate(a, seed),
        Command::Subspace(a) => subspace(a, seed),
        Command::Cluster(a) => cluster(a, seed),
        Command::Em(a) => em(a, seed),
        Command::Estimate(a) => estimate(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Experiment(a) => experiment(a, seed),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let (mixture, separations) = match a.scenario.scenario {
        ScenarioName::Gridworld => (build_gridworld_mixture(&a.scenario.gridworld())?, vec![]),
        ScenarioName::Random => {
            let s = &a.scenario;
            let r = build_random_mixture(s.states, s.actions, s.labels, s.delta, derive_seed(seed, 1))?;
            let seps = r
                .separations
                .iter()
                .map(|x| (x.labels.0, x.labels.1, x.state, x.action, x.gap))
                .collect();
            (r.mixture, seps)
        }
    };
    let trajs = sample_dataset(&mixture, a.n, a.length, seed)?;
    write_trajectories(&a.out, &trajs)?;
    let mixing = if a.no_mixing {
        None
    } else {
        match mixing_report(&mixture, 0.25, 10_000) {
            Ok(r) => Some(MixingFile::from(&r)),
            Err(e) => {
                eprintln!("warning: mixing time not measured: {e}");
                None
            }
        }
    };
    let truth = TruthFile {
        model: ModelFile::from(&mixture),
        mixing,
        separating_pairs: if separations.is_empty() {
            max_separations(&mixture)
                .iter()
                .map(|x| (x.labels.0, x.labels.1, x.state, x.action, x.gap))
                .collect()
        } else {
            separations
        },
    };
    let truth_path = a.truth.unwrap_or_else(|| sidecar(&a.out));
    write_json(&truth_path, &truth)?;
    if let Some(m) = &truth.mixing {
        eprintln!("t_mix = {} (per label {:?})", m.t_mix, m.per_label);
    }
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

struct Loaded {
    trajs: Vec<mixmdp_core::Trajectory>,
    all: crate::pipeline::Prepared,
    scheme: SegmentScheme,
    dims: (usize, usize),
}

fn load(path: &Path, segment: &SegmentArgs, dims: Option<(usize, usize)>) -> Result<Loaded> {
    let trajs = read_trajectories(path)?;
    let dims = dims.unwrap_or_else(|| infer_dims(&trajs));
    let scheme = make_scheme(trajs[0].len(), segment.blocks, segment.mode)?;
    let all = prepare(&trajs, &scheme, dims.0, dims.1)?;
    Ok(Loaded { trajs, all, scheme, dims })
}

fn subspace(a: SubspaceArgs, seed: u64) -> Result<()> {
    let data = load(&a.input, &a.segment, None)?;
    let split = split_dataset(&data.all.ids, a.split, seed)?;
    let sub = data.all.subset(&split.sub);
    let sub_ids: Vec<u64> = split.sub.iter().map(|&i| data.all.ids[i]).collect();
    let k = if a.k == "auto" {
        let full = estimate_subspaces(&sub.windows, data.dims.0)?;
        let profile = eigen_energy_profile(&full);
        select_k(&profile, a.energy_factor)
            .context("no eigen-energy gap found; pass K explicitly")?
    } else {
        a.k.parse().context("K must be an integer or `auto`")?
    };
    let bank = estimate_subspaces(&sub.windows, k)?;
    let profile = eigen_energy_profile(&bank);
    if let Some(p) = &a.energy_csv {
        write_energy(p, &profile)?;
    }
    write_json(&a.out, &BankFile::new(&bank, scheme_file(&data.scheme), sub_ids, profile))?;
    eprintln!("K = {k}");
    Ok(())
}

fn load_bank_data(input: &Path, bank_path: &Path) -> Result<(BankFile, Loaded)> {
    let file: BankFile = read_json(bank_path)?;
    let segment = SegmentArgs {
        blocks: Some(file.scheme.blocks),
        mode: file.scheme.mode,
    };
    let data = load(input, &segment, Some((file.s, file.a)))?;
    Ok((file, data))
}

fn truth_of(trajs: &[mixmdp_core::Trajectory], idx: &[usize]) -> Option<Vec<usize>> {
    idx.iter().map(|&i| trajs[i].true_label).collect()
}

fn cluster(a: ClusterArgs, seed: u64) -> Result<()> {
    let (file, data) = load_bank_data(&a.input, &a.bank)?;
    let bank = file.to_bank()?;
    let sub_pos = positions(&data.all.ids, &file.sub_ids)?;
    let clust_pos: Vec<usize> = (0..data.all.len()).filter(|i| !sub_pos.contains(i)).collect();
    ensure!(!clust_pos.is_empty(), "no trajectories outside the subspace split");
    let clust = data.all.subset(&clust_pos);
    let freq_tables = if a.freq_all { &data.all.tables } else { &clust.tables };
    let params = ClusterParams {
        k: a.k.unwrap_or(file.k),
        beta: a.beta,
        tau: a.tau,
        lambda: a.lambda,
        backend: parse_backend(&a.backend)?,
        seed: derive_seed(seed, 3),
    };
    let vbank = crate::pipeline::projected_bank(&bank, a.projector, derive_seed(seed, 5))?;
    let freq = resolve_freq(&bank, &clust, freq_tables, a.beta, derive_seed(seed, 4))?;
    let outcome = cluster_stage(&clust, &vbank, freq, &params)?;
    write_labels(&a.out, &clust.ids, &outcome.labels)?;
    let truth = truth_of(&data.trajs, &clust_pos);
    if let Some(p) = &a.hist_csv {
        write_distance_histogram(p, &outcome.dist, truth.as_deref(), 100)?;
    }
    if let Some(p) = &a.block_csv {
        write_block_matrix(p, &outcome.dist, outcome.tau, &clust.ids, &outcome.labels, truth.as_deref())?;
    }
    eprintln!(
        "beta = {}, |Freq| = {}, tau = {}, empty intersections = {}",
        outcome.freq.beta,
        outcome.freq.pairs.len(),
        outcome.tau,
        outcome.dist.empty_intersections
    );
    Ok(())
}

fn em(a: EmArgs, _seed: u64) -> Result<()> {
    let data = load(&a.input, &a.segment, None)?;
    let em_data = EmData::from_tables(&data.all.tables)?;
    let scope = match a.variant {
        Variant::Full => EmScope::Full,
        Variant::Restricted => EmScope::Restricted(frequent_pairs(&data.all.tables, a.beta)?.mask()),
    };
    let mode = match a.mode {
        ModeArg::Soft => EmMode::Soft,
        ModeArg::Hard => EmMode::Hard,
    };
    let cfg = EmConfig {
        tol: a.tol,
        max_iter: a.max_iter,
        ..EmConfig::new(mode, scope)
    };
    let truth = truth_of(&data.trajs, &(0..data.trajs.len()).collect::<Vec<_>>());
    let n = data.all.len();
    let mut points = Vec::new();
    let result = if let Some(spec) = a.init.strip_prefix("random:") {
        let (s, r) = spec.split_once(':').context("expected random:<seed>:<restarts>")?;
        let (init_seed, restarts): (u64, usize) = (s.parse()?, r.parse()?);
        let k = a.k.context("random initialization needs -K")?;
        ensure!(restarts >= 1, "need at least one restart");
        let mut best: Option<EmResult> = None;
        for r in 0..restarts {
            let run = run_em(&em_data, random_init(n, k, derive_seed(init_seed, r as u64)), &cfg)?;
            points.push(LoglikPoint {
                init: "random".into(),
                restart: r,
                loglik: run.loglik(),
                accuracy: accuracy(&truth, &run.labels, k)?,
            });
            if best.as_ref().is_none_or(|b| run.loglik() > b.loglik()) {
                best = Some(run);
            }
        }
        best.expect("at least one restart")
    } else {
        let given = read_labels(Path::new(&a.init))?;
        let k = a.k.unwrap_or_else(|| given.values().max().map_or(1, |m| m + 1));
        let mut init = init_from_labels(&vec![0; n], k, 1.0)?;
        let rows = init_from_labels(
            &data.all.ids.iter().map(|id| given.get(id).copied().unwrap_or(0)).collect::<Vec<_>>(),
            k,
            a.softening,
        )?;
        for (i, id) in data.all.ids.iter().enumerate() {
            if given.contains_key(id) {
                init.values[i * k..(i + 1) * k].copy_from_slice(rows.row(i));
            }
        }
        let run = run_em(&em_data, init, &cfg)?;
        points.push(LoglikPoint {
            init: "labels".into(),
            restart: 0,
            loglik: run.loglik(),
            accuracy: accuracy(&truth, &run.labels, k)?,
        });
        run
    };
    write_responsibilities(&a.resp_out, &data.all.ids, &result.resp, &result.labels)?;
    if let Some(p) = &a.params_out {
        write_json(p, &EstimateFile::from_model(&result.model))?;
    }
    if let Some(p) = &a.trace_out {
        write_trace(p, &result.trace)?;
    }
    if let Some(p) = &a.loglik_csv {
        write_loglik_points(p, &points)?;
    }
    if result.degenerate > 0 {
        eprintln!("warning: {} trajectories impossible under every component", result.degenerate);
    }
    eprintln!(
        "iterations = {}, converged = {}, loglik = {}",
        result.iterations,
        result.converged,
        result.loglik()
    );
    Ok(())
}

fn accuracy(truth: &Option<Vec<usize>>, labels: &[usize], k: usize) -> Result<Option<f64>> {
    match truth {
        Some(t) => {
            let kk = k.max(t.iter().max().map_or(0, |m| m + 1));
            Ok(Some(permutation_match(labels, t, kk)?.accuracy))
        }
        None => Ok(None),
    }
}

fn write_responsibilities(path: &Path, ids: &[u64], resp: &Responsibilities, labels: &[usize]) -> Result<()> {
    let labels: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    write_matrix_rows(path, "p", ids, Some(&labels), &resp.values, resp.k)
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let data = load(&a.input, &a.segment, None)?;
    let given = read_labels(&a.labels)?;
    let ids: Vec<u64> = given.keys().copied().collect();
    let pos = positions(&data.all.ids, &ids)?;
    let subset = data.all.subset(&pos);
    let labels: Vec<usize> = ids.iter().map(|id| given[id]).collect();
    let k = a.k.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let models = estimate_models(&subset.tables, &labels, k)?;
    let freq = frequent_pairs(&subset.tables, a.beta)?;
    let mut file = EstimateFile::from_clusters(&models);
    file.frequent_pairs = Some(freq.pairs);
    file.beta = Some(freq.beta);
    file.scheme = Some(scheme_file(&data.scheme));
    write_json(&a.out, &file)?;
    for (c, size) in models.cluster_sizes.iter().enumerate() {
        if *size == 0 {
            eprintln!("warning: cluster {c} is empty; its model is undefined");
        }
    }
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let file: EstimateFile = read_json(&a.model)?;
    let models = file.to_clusters()?;
    let scheme = file.scheme.context("estimate file lacks the segmentation scheme")?;
    let segment = SegmentArgs {
        blocks: Some(scheme.blocks),
        mode: scheme.mode,
    };
    let data = load(&a.input, &segment, Some((file.s, file.a)))?;
    let pairs = file.frequent_pairs.clone().context("estimate file lacks frequent pairs")?;
    let freq = FrequentPairs {
        beta: file.beta.unwrap_or(0.0),
        pairs,
        frequencies: vec![0.0; file.s * file.a],
    };
    let selected = match &a.only_bank_split {
        Some(p) => {
            let bank: BankFile = read_json(p)?;
            data.all.subset(&positions(&data.all.ids, &bank.sub_ids)?)
        }
        None => data.all.clone(),
    };
    let bank = refined_bank(&models, file.k)?;
    let cls = classify(&selected.windows, &models, &bank, &freq, a.lambda)?;
    write_matrix_rows(&a.out, "dist", &selected.ids, Some(&cls.labels), &cls.distances, file.k)?;
    if cls.unclassifiable() > 0 {
        eprintln!("warning: {} trajectories unclassifiable (no frequent pair in both windows)", cls.unclassifiable());
    }
    Ok(())
}

fn experiment(a: ExperimentArgs, seed: u64) -> Result<()> {
    let cfg = ExperimentConfig {
        name: a.name,
        scenario: a.scenario.scenario(),
        sweep: a.sweep,
        n: a.n,
        trials: a.trials,
        seed,
        k: a.k,
        projectors: a.projectors,
        em_inits: a.em_inits.iter().map(|s| EmInit::parse(s)).collect::<Result<_>>()?,
        em_restarts: a.em_restarts,
        softening: a.softening,
        em_tol: a.tol,
        em_max_iter: a.max_iter,
        beta: a.beta,
        tau: a.tau,
        lambda: a.lambda,
        backend: parse_backend(&a.backend)?,
        split_fraction: a.split,
        blocks: a.segment.blocks,
        mode: a.segment.mode,
        timing: !a.no_timing,
        diagnostics: a.diagnostics,
    };
    let rows = run_experiment(&cfg)?;
    write_results(&a.out, &rows)?;
    for (variant, t, n, c, e) in summarize(&rows) {
        let fmt = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.4}"));
        eprintln!("{variant:>16} T_n={t:<5} trials={n:<3} clustering_error={} end_to_end_error={}", fmt(c), fmt(e));
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let pred = read_labels(&a.pred)?;
    let trajs = read_trajectories(&a.truth)?;
    let mut p = Vec::new();
    let mut t = Vec::new();
    for traj in &trajs {
        if let Some(&label) = pred.get(&traj.id) {
            p.push(label);
            t.push(traj.true_label.with_context(|| format!("trajectory {} has no true label", traj.id))?);
        }
    }
    ensure!(!p.is_empty(), "no predicted id matches a trajectory");
    let k = a.k.unwrap_or_else(|| p.iter().chain(&t).max().map_or(1, |m| m + 1));
    let m = permutation_match(&p, &t, k)?;
    println!(
        "{}",
        serde_json::json!({ "n": p.len(), "accuracy": m.accuracy, "mapping": m.mapping })
    );
    Ok(())
}
