//! File formats: trajectories (JSON Lines), models, subspace banks,
//! estimates, label/responsibility CSVs and versioned result CSVs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use mixmdp_core::em::ModelEstimate;
use mixmdp_core::inference::ClusterModels;
use mixmdp_core::linalg::Matrix;
use mixmdp_core::simulator::MixingReport;
use mixmdp_core::subspace::SubspaceBank;
use mixmdp_core::{CountMode, MarkovMixture, Trajectory};

/// Version tag written as the first (comment) line of every CSV produced by
/// the harness.
pub const CSV_SCHEMA: &str = "mixmdp-csv v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub true_label: Option<usize>,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<f64>>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            id: t.id,
            true_label: t.true_label,
            states: t.states.clone(),
            actions: t.actions.clone(),
            rewards: t.rewards.clone(),
        }
    }
}

impl From<TrajectoryRecord> for Trajectory {
    fn from(r: TrajectoryRecord) -> Self {
        Trajectory {
            id: r.id,
            states: r.states,
            actions: r.actions,
            true_label: r.true_label,
            rewards: r.rewards,
        }
    }
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for t in trajs {
        serde_json::to_writer(&mut w, &TrajectoryRecord::from(t))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}: line {}", path.display(), lineno + 1);
        let rec: TrajectoryRecord = serde_json::from_str(&line).with_context(at)?;
        ensure!(
            rec.states.len() == rec.actions.len() + 1,
            "{}: trajectory {} has {} states for {} actions",
            at(),
            rec.id,
            rec.states.len(),
            rec.actions.len()
        );
        out.push(rec.into());
    }
    ensure!(!out.is_empty(), "{} holds no trajectories", path.display());
    Ok(out)
}

/// `[K][S][A][S]` kernels, `[K][S][A]` policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub kernels: Vec<Vec<Vec<Vec<f64>>>>,
    pub policies: Vec<Vec<Vec<f64>>>,
    pub start_dists: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl From<&MarkovMixture> for ModelFile {
    fn from(m: &MarkovMixture) -> Self {
        let (s_n, a_n) = (m.num_states(), m.num_actions());
        ModelFile {
            s: s_n,
            a: a_n,
            k: m.num_labels(),
            kernels: (0..m.num_labels())
                .map(|k| {
                    (0..s_n)
                        .map(|s| (0..a_n).map(|a| m.kernel_row(k, s, a).to_vec()).collect())
                        .collect()
                })
                .collect(),
            policies: (0..m.num_labels())
                .map(|k| (0..s_n).map(|s| m.policy_row(k, s).to_vec()).collect())
                .collect(),
            start_dists: (0..m.num_labels()).map(|k| m.start_dist(k).to_vec()).collect(),
            weights: m.weights().to_vec(),
        }
    }
}

impl ModelFile {
    pub fn to_mixture(&self) -> Result<MarkovMixture> {
        ensure!(
            self.kernels.len() == self.k && self.weights.len() == self.k,
            "model file declares K={} but lists {} kernels and {} weights",
            self.k,
            self.kernels.len(),
            self.weights.len()
        );
        let flat3 = |v: &Vec<Vec<Vec<f64>>>| v.iter().flatten().flatten().copied().collect();
        let flat2 = |v: &Vec<Vec<f64>>| v.iter().flatten().copied().collect();
        Ok(MarkovMixture::new(
            self.s,
            self.a,
            self.kernels.iter().map(flat3).collect(),
            self.policies.iter().map(flat2).collect(),
            self.start_dists.clone(),
            self.weights.clone(),
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingFile {
    pub t_mix: usize,
    pub per_label: Vec<usize>,
    pub tv_curves: Vec<Vec<f64>>,
}

impl From<&MixingReport> for MixingFile {
    fn from(r: &MixingReport) -> Self {
        MixingFile {
            t_mix: r.t_mix,
            per_label: r.per_label.iter().map(|l| l.t_mix).collect(),
            tv_curves: r.per_label.iter().map(|l| l.tv_curve.clone()).collect(),
        }
    }
}

/// Sidecar written next to generated trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: ModelFile,
    pub mixing: Option<MixingFile>,
    #[serde(default)]
    pub separating_pairs: Vec<(usize, usize, usize, usize, f64)>,
}

/// Segmentation settings stored alongside derived artifacts so later stages
/// slice trajectories identically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub len: usize,
    pub blocks: usize,
    pub mode: ModeName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Discard,
    Full,
}

impl From<ModeName> for CountMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Discard => CountMode::Discard,
            ModeName::Full => CountMode::Full,
        }
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn matrix_from(rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    ensure!(
        rows.iter().all(|r| r.len() == cols),
        "matrix rows must all have {cols} entries"
    );
    Ok(Matrix::from_rows(rows.len(), cols, data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankFile {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub scheme: SchemeFile,
    /// Trajectory ids the bank was estimated from.
    pub sub_ids: Vec<u64>,
    /// `[SA][r][S]`.
    pub pair_projectors: Vec<Vec<Vec<f64>>>,
    /// `[K][SA]`.
    pub occupancy_projector: Vec<Vec<f64>>,
    pub traj_counts: Vec<usize>,
    pub spectra: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
}

impl BankFile {
    pub fn new(bank: &SubspaceBank, scheme: SchemeFile, sub_ids: Vec<u64>, energy: Vec<f64>) -> Self {
        BankFile {
            s: bank.num_states,
            a: bank.num_actions,
            k: bank.k,
            scheme,
            sub_ids,
            pair_projectors: bank.pair_projectors.iter().map(matrix_rows).collect(),
            occupancy_projector: matrix_rows(&bank.occupancy_projector),
            traj_counts: bank.traj_counts.clone(),
            spectra: bank.spectra.clone(),
            energy,
        }
    }

    pub fn to_bank(&self) -> Result<SubspaceBank> {
        ensure!(self.pair_projectors.len() == self.s * self.a, "bank needs one projector per pair");
        Ok(SubspaceBank {
            num_states: self.s,
            num_actions: self.a,
            k: self.k,
            pair_projectors: self
                .pair_projectors
                .iter()
                .map(|p| matrix_from(p, self.s))
                .collect::<Result<_>>()?,
            occupancy_projector: matrix_from(&self.occupancy_projector, self.s * self.a)?,
            traj_counts: self.traj_counts.clone(),
            spectra: self.spectra.clone(),
        })
    }
}

/// Learned parameters. Undefined rows are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub weights: Vec<f64>,
    /// `[K][S][A]` of optional next-state rows.
    pub kernels: Vec<Vec<Vec<Option<Vec<f64>>>>>,
    /// `[K][S]` of optional action rows.
    pub policies: Vec<Vec<Option<Vec<f64>>>>,
    pub start_dists: Vec<Vec<f64>>,
    /// Per-pair label prevalence `[K][SA]`; present for cluster estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prevalence: Option<Vec<Vec<f64>>>,
    /// Mean occupancy `[K][SA]`; present for cluster estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
    /// Frequent pairs (flat `s·A + a`) used for classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequent_pairs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeFile>,
}

impl EstimateFile {
    pub fn from_model(m: &ModelEstimate) -> Self {
        let (s_n, a_n) = (m.num_states, m.num_actions);
        let k_n = m.num_labels();
        EstimateFile {
            s: s_n,
            a: a_n,
            k: k_n,
            weights: m.weights.clone(),
            kernels: (0..k_n)
                .map(|k| {
                    (0..s_n)
                        .map(|s| {
                            (0..a_n).map(|a| m.kernel_row(k, s * a_n + a).map(<[f64]>::to_vec)).collect()
                        })
                        .collect()
                })
                .collect(),
            policies: (0..k_n)
                .map(|k| {
                    (0..s_n)
                        .map(|s| {
                            m.policy_defined[k][s].then(|| m.policies[k][s * a_n..(s + 1) * a_n].to_vec())
                        })
                        .collect()
                })
                .collect(),
            start_dists: m.starts.clone(),
            prevalence: None,
            occupancy: None,
            cluster_sizes: None,
            frequent_pairs: None,
            beta: None,
            scheme: None,
        }
    }

    pub fn from_clusters(models: &ClusterModels) -> Self {
        EstimateFile {
            prevalence: Some(models.prevalence.clone()),
            occupancy: Some(models.occupancy.clone()),
            cluster_sizes: Some(models.cluster_sizes.clone()),
            ..EstimateFile::from_model(&models.model)
        }
    }

    pub fn to_model(&self) -> Result<ModelEstimate> {
        let (s_n, a_n, k_n) = (self.s, self.a, self.k);
        ensure!(
            self.kernels.len() == k_n && self.policies.len() == k_n && self.weights.len() == k_n,
            "estimate file lists the wrong number of components"
        );
        let mut kernels = vec![vec![0.0; s_n * a_n * s_n]; k_n];
        let mut defined = vec![vec![false; s_n * a_n]; k_n];
        let mut policies = vec![vec![0.0; s_n * a_n]; k_n];
        let mut policy_defined = vec![vec![false; s_n]; k_n];
        for k in 0..k_n {
            ensure!(self.kernels[k].len() == s_n, "component {k} kernel needs {s_n} states");
            for s in 0..s_n {
                ensure!(self.kernels[k][s].len() == a_n, "component {k} kernel needs {a_n} actions");
                for a in 0..a_n {
                    if let Some(row) = &self.kernels[k][s][a] {
                        ensure!(row.len() == s_n, "kernel row ({k},{s},{a}) has wrong length");
                        let pair = s * a_n + a;
                        kernels[k][pair * s_n..(pair + 1) * s_n].copy_from_slice(row);
                        defined[k][pair] = true;
                    }
                }
                if let Some(row) = &self.policies[k][s] {
                    ensure!(row.len() == a_n, "policy row ({k},{s}) has wrong length");
                    policies[k][s * a_n..(s + 1) * a_n].copy_from_slice(row);
                    policy_defined[k][s] = true;
                }
            }
        }
        Ok(ModelEstimate {
            num_states: s_n,
            num_actions: a_n,
            weights: self.weights.clone(),
            kernels,
            defined,
            policies,
            policy_defined,
            starts: self.start_dists.clone(),
        })
    }

    pub fn to_clusters(&self) -> Result<ClusterModels> {
        let (Some(prevalence), Some(occupancy)) = (&self.prevalence, &self.occupancy) else {
            bail!("estimate file lacks prevalence/occupancy; produce it with `estimate`");
        };
        Ok(ClusterModels {
            model: self.to_model()?,
            prevalence: prevalence.clone(),
            occupancy: occupancy.clone(),
            cluster_sizes: self.cluster_sizes.clone().unwrap_or_default(),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

/// CSV writer whose first line is the schema comment.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = BufWriter::new(create(path)?);
    writeln!(w, "# {CSV_SCHEMA}")?;
    Ok(csv::Writer::from_writer(w))
}

/// CSV reader that skips `#` comment lines.
pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: u64,
    pub label: usize,
}

pub fn write_labels(path: &Path, ids: &[u64], labels: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (&id, &label) in ids.iter().zip(labels) {
        w.serialize(LabelRow { id, label })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `id,label[,…]` rows; rows with an empty label (unclassified) are
/// skipped and extra columns ignored.
pub fn read_labels(path: &Path) -> Result<BTreeMap<u64, usize>> {
    #[derive(Deserialize)]
    struct Row {
        id: u64,
        label: Option<usize>,
    }
    let mut out = BTreeMap::new();
    for row in csv_reader(path)?.deserialize() {
        let row: Row = row.with_context(|| format!("reading {}", path.display()))?;
        let Some(label) = row.label else { continue };
        ensure!(out.insert(row.id, label).is_none(), "duplicate id {} in {}", row.id, path.display());
    }
    Ok(out)
}

/// Rows of `id, <name>_0, …, <name>_{K-1}` with an optional leading label
/// column.
pub fn write_matrix_rows(
    path: &Path,
    name: &str,
    ids: &[u64],
    labels: Option<&[Option<usize>]>,
    values: &[f64],
    k: usize,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string()];
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..k).map(|c| format!("{name}_{c}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        if let Some(l) = labels {
            rec.push(l[i].map_or(String::new(), |x| x.to_string()));
        }
        rec.extend(values[i * k..(i + 1) * k].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_line_format() {
        let rec = TrajectoryRecord {
            id: 3,
            true_label: None,
            states: vec![0, 1],
            actions: vec![0],
            rewards: None,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(line, r#"{"id":3,"true_label":null,"states":[0,1],"actions":[0]}"#);
    }

    #[test]
    fn model_file_keys() {
        let m = MarkovMixture::new(
            1,
            1,
            vec![vec![1.0]],
            vec![vec![1.0]],
            vec![vec![1.0]],
            vec![1.0],
        )
        .unwrap();
        let v = serde_json::to_value(ModelFile::from(&m)).unwrap();
        for key in ["S", "A", "K", "kernels", "policies", "start_dists", "weights"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["kernels"], serde_json::json!([[[[1.0]]]]));
    }
}
