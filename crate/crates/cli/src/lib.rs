//! Commands behind the `hetgat` binary: synthetic graph generation,
//! multi-trial training, LPE on/off benchmarks and spectral dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hetgat::graph::{gen_synthetic, load_graph, save_graph, SyntheticSpec};
use hetgat::tasks::{mean_variance, run_trials, Architecture, ModelConfig, TrainReport};
use hetgat::{compute_basis, Error, HeteroGraph, SpectralBasis, Task};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration or input files.
    Usage(String),
    /// Failures while computing.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Format { .. } => CliError::Usage(e.to_string()),
            Error::NoConvergence { .. } | Error::NumericalFailure(_) | Error::Io(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Where a graph comes from. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Dataset {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

impl Dataset {
    pub fn load(&self, base: &Path) -> CliResult<HeteroGraph> {
        match self {
            Dataset::Path(p) => {
                let full = base.join(p);
                load_graph(&full).map_err(|e| CliError::Usage(format!("{}: {e}", full.display())))
            }
            Dataset::Synthetic(spec) => Ok(gen_synthetic(spec)?),
        }
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn default_trials() -> usize {
    5
}

pub fn cmd_gen(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut spec: SyntheticSpec = read_config(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = gen_synthetic(&spec)?;
    save_graph(&g, out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} nodes, {} edges in {} relations to {}",
        g.node_count(),
        g.edge_count(),
        g.relation_count(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: Dataset,
    pub task: Task,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub model: ModelConfig,
}

pub fn summary(report: &TrainReport) -> String {
    format!(
        "{} task, {} F1 over {} trial(s): mean {:.4}, variance {:.6}",
        report.task,
        report.f1_averaging,
        report.trials.len(),
        report.mean,
        report.variance
    )
}

pub fn cmd_train(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
) -> CliResult<TrainReport> {
    let mut cfg: TrainConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    let g = cfg.dataset.load(&base_dir(config))?;
    let report = run_trials(&g, cfg.task, &cfg.model, cfg.trials)?;
    write_output(out, &to_json(&report))?;
    println!("{}", summary(&report));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchDataset {
    pub name: String,
    pub dataset: Dataset,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub datasets: Vec<BenchDataset>,
    pub architectures: Vec<Architecture>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Model settings shared by every cell; `architecture`, `use_lpe` and
    /// `seed` are filled in per cell.
    #[serde(default = "empty_object")]
    pub model: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::json!({})
}

impl BenchConfig {
    fn model_for(&self, arch: Architecture, lpe: bool) -> CliResult<ModelConfig> {
        let mut v = self.model.clone();
        let obj = v
            .as_object_mut()
            .ok_or_else(|| CliError::Usage("bench config: model must be an object".into()))?;
        obj.insert(
            "architecture".into(),
            serde_json::to_value(arch).expect("enum"),
        );
        obj.insert("use_lpe".into(), lpe.into());
        obj.insert("seed".into(), self.seed.into());
        serde_json::from_value(v).map_err(|e| CliError::Usage(format!("bench config: model: {e}")))
    }
}

/// One (dataset, architecture) pair with LPE off and on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub dataset: String,
    pub task: Task,
    pub architecture: Architecture,
    pub off: TrainReport,
    pub on: TrainReport,
    /// `on.mean − off.mean`.
    pub delta_mean: f64,
    /// Population variance of the per-trial differences `on − off`.
    pub delta_variance: f64,
    /// Markdown cell text, in percentage points.
    pub formatted: String,
}

impl BenchCell {
    pub fn new(
        dataset: String,
        task: Task,
        architecture: Architecture,
        off: TrainReport,
        on: TrainReport,
    ) -> Self {
        let delta_mean = on.mean - off.mean;
        let diffs: Vec<f64> = on
            .trials
            .iter()
            .zip(&off.trials)
            .map(|(a, b)| a.test_f1 - b.test_f1)
            .collect();
        let delta_variance = if diffs.is_empty() {
            0.0
        } else {
            mean_variance(&diffs).1
        };
        let formatted = format_delta(delta_mean, delta_variance);
        Self {
            dataset,
            task,
            architecture,
            off,
            on,
            delta_mean,
            delta_variance,
            formatted,
        }
    }
}

/// `(+Δ, var)`: the mean difference in whole percentage points and the
/// variance in squared points with one decimal; exact zeros print as `0`.
pub fn format_delta(delta_mean: f64, delta_variance: f64) -> String {
    let pp = (delta_mean * 100.0).round();
    let pp = if pp == 0.0 { 0.0 } else { pp };
    let sign = if pp >= 0.0 { "+" } else { "" };
    let var = delta_variance * 100.0 * 100.0;
    let var = if var == 0.0 {
        "0".to_string()
    } else {
        format!("{var:.1}")
    };
    format!("({sign}{pp:.0}, {var})")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub architectures: Vec<Architecture>,
    pub cells: Vec<BenchCell>,
    pub markdown: String,
}

impl BenchReport {
    /// Cells must be ordered by dataset row, then by architecture in
    /// `architectures` order.
    pub fn new(architectures: Vec<Architecture>, cells: Vec<BenchCell>) -> Self {
        let markdown = render_markdown(&architectures, &cells);
        Self {
            architectures,
            cells,
            markdown,
        }
    }
}

/// Rows are dataset/task pairs, columns architectures. In each column the
/// cell whose LPE-on F1 is highest is bold.
pub fn render_markdown(architectures: &[Architecture], cells: &[BenchCell]) -> String {
    let mut rows: Vec<(String, Task)> = Vec::new();
    for c in cells {
        if !rows.iter().any(|(d, t)| d == &c.dataset && *t == c.task) {
            rows.push((c.dataset.clone(), c.task));
        }
    }
    let find = |row: &(String, Task), arch: Architecture| {
        cells
            .iter()
            .find(|c| c.dataset == row.0 && c.task == row.1 && c.architecture == arch)
    };
    let best: Vec<Option<f64>> = architectures
        .iter()
        .map(|&a| {
            cells
                .iter()
                .filter(|c| c.architecture == a)
                .map(|c| c.on.mean)
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        })
        .collect();

    let mut out = String::from("| Dataset | Task |");
    for a in architectures {
        let _ = write!(out, " {} |", a.to_string().to_uppercase());
    }
    out.push_str("\n|---|---|");
    for _ in architectures {
        out.push_str("---|");
    }
    out.push('\n');
    for row in &rows {
        let _ = write!(out, "| {} | {} |", row.0, row.1);
        for (k, &a) in architectures.iter().enumerate() {
            match find(row, a) {
                Some(c) if Some(c.on.mean) == best[k] => {
                    let _ = write!(out, " **{}** |", c.formatted);
                }
                Some(c) => {
                    let _ = write!(out, " {} |", c.formatted);
                }
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn cmd_bench(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
) -> CliResult<BenchReport> {
    let mut cfg: BenchConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if cfg.architectures.is_empty() || cfg.datasets.is_empty() {
        return Err(CliError::Usage(
            "bench config needs at least one dataset and one architecture".into(),
        ));
    }
    let base = base_dir(config);
    let mut cells = Vec::new();
    for ds in &cfg.datasets {
        let g = ds.dataset.load(&base)?;
        for &arch in &cfg.architectures {
            let off = run_trials(&g, ds.task, &cfg.model_for(arch, false)?, cfg.trials)?;
            let on = run_trials(&g, ds.task, &cfg.model_for(arch, true)?, cfg.trials)?;
            cells.push(BenchCell::new(ds.name.clone(), ds.task, arch, off, on));
        }
    }
    let report = BenchReport::new(cfg.architectures.clone(), cells);
    write_output(out, &to_json(&report))?;
    let mut md_path = out.as_os_str().to_owned();
    md_path.push(".md");
    write_output(Path::new(&md_path), &report.markdown)?;
    print!("{}", report.markdown);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralDumpConfig {
    pub graph: PathBuf,
    #[serde(default = "default_m")]
    pub m: usize,
}

fn default_m() -> usize {
    16
}

#[derive(Serialize)]
struct BasisJson<'a> {
    m: usize,
    eigenvalues: &'a [f64],
    eigenvectors: &'a [f64],
    mask: &'a [bool],
}

pub fn basis_json(basis: &SpectralBasis) -> String {
    to_json(&BasisJson {
        m: basis.m,
        eigenvalues: &basis.eigenvalues,
        eigenvectors: basis.eigenvectors.data(),
        mask: &basis.mask,
    })
}

pub fn cmd_spectral_dump(
    config: Option<&Path>,
    graph: Option<&Path>,
    m: Option<usize>,
    out: &Path,
) -> CliResult<SpectralBasis> {
    let (graph_path, m) = match config {
        Some(c) => {
            let cfg: SpectralDumpConfig = read_config(c)?;
            (
                graph
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| base_dir(c).join(cfg.graph)),
                m.unwrap_or(cfg.m),
            )
        }
        None => (
            graph
                .ok_or_else(|| CliError::Usage("spectral-dump needs --graph or --config".into()))?
                .to_path_buf(),
            m.unwrap_or_else(default_m),
        ),
    };
    let g = load_graph(&graph_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", graph_path.display())))?;
    let basis = compute_basis(&g, m)?;
    write_output(out, &basis_json(&basis))?;
    println!(
        "wrote {} eigenpairs ({} real) for {} nodes to {}",
        basis.m,
        basis.real_count(),
        basis.node_count(),
        out.display()
    );
    Ok(basis)
}
