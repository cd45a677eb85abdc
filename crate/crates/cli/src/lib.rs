//! Monte Carlo campaign driver for the centralized and distributed filters.
//!
//! A [`RunSpec`] names a scenario, the filters to run, the number of runs,
//! the consensus iteration counts and a seed. [`run_campaign`] executes the
//! runs in parallel and reduces them in run order, and [`export_results`]
//! writes one CSV file per filter and metric plus a `manifest.json` that is
//! enough to replay the campaign.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cvm_track::scenarios::{build_named, ScenarioConfig, SCENARIO_NAMES};
use cvm_track::sim::{central_metrics, distributed_metrics, run_central, run_distributed, simulate_inputs};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "scan_time,L,metric,mean,stderr";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUT_ENV: &str = "CVM_TRACK_OUT";
pub const DEFAULT_OUT: &str = "results";
pub const DEFAULT_SWEEP: [usize; 5] = [1, 2, 5, 10, 20];

/// Failure of a CLI command, with a stable category for the exit line.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Usage(String),
    Filter(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Filter(_) => "filter",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Usage(m) | CliError::Filter(m) => m,
        };
        f.write_str(msg)
    }
}

impl std::error::Error for CliError {}

impl From<cvm_track::Error> for CliError {
    fn from(e: cvm_track::Error) -> Self {
        match e {
            cvm_track::Error::Config(_) | cvm_track::Error::Validation(_) => CliError::Config(e.to_string()),
            _ => CliError::Filter(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Central,
    Distributed,
    Both,
}

impl FilterKind {
    pub fn central(self) -> bool {
        matches!(self, FilterKind::Central | FilterKind::Both)
    }

    pub fn distributed(self) -> bool {
        matches!(self, FilterKind::Distributed | FilterKind::Both)
    }
}

/// Loads a built-in scenario by name, or a JSON scenario file by path.
pub fn resolve_scenario(source: &str) -> CliResult<ScenarioConfig> {
    if SCENARIO_NAMES.contains(&source) {
        return Ok(build_named(source)?);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "'{source}' is neither a built-in scenario ({}) nor an existing file",
            SCENARIO_NAMES.join(", ")
        )));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {source}: {e}")))?;
    let cfg = ScenarioConfig::from_json(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Fully resolved description of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Scenario name or path as given on the command line.
    pub scenario_source: String,
    pub scenario: ScenarioConfig,
    pub filter: FilterKind,
    pub runs: usize,
    pub consensus_iters: Vec<usize>,
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> CliResult<()> {
        self.scenario.validate()?;
        if self.runs == 0 {
            return Err(CliError::Usage("--runs must be at least 1".into()));
        }
        if self.filter.distributed() {
            if self.consensus_iters.is_empty() {
                return Err(CliError::Usage("at least one consensus iteration count is required".into()));
            }
            if self.consensus_iters.contains(&0) {
                return Err(CliError::Usage("consensus iteration counts must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Parses a comma separated list such as `1,2,5`.
pub fn parse_iters(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("invalid consensus iteration count '{}'", t.trim())))
        })
        .collect()
}

/// Per-scan mean and standard error of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub iterations: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// All series of one output file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub filter: &'static str,
    pub metric: &'static str,
    pub series: Vec<Series>,
}

impl MetricTable {
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.filter, self.metric)
    }
}

/// Outcome counts of one filter configuration; `completed + diverged` is
/// always the number of runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunAccounting {
    pub filter: String,
    #[serde(rename = "L")]
    pub iterations: usize,
    pub completed: usize,
    pub diverged: usize,
    pub diverged_runs: Vec<DivergedRun>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergedRun {
    pub run: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub scan_period: f64,
    pub tables: Vec<MetricTable>,
    pub accounting: Vec<RunAccounting>,
}

impl ResultTable {
    /// Table with the files of `filter` but no rows.
    pub fn empty(filter: FilterKind, scan_period: f64) -> Self {
        let mut tables = vec![];
        if filter.central() {
            tables.extend(CENTRAL_METRICS.iter().map(|m| MetricTable { filter: "central", metric: m, series: vec![] }));
        }
        if filter.distributed() {
            tables.extend(
                DISTRIBUTED_METRICS.iter().map(|m| MetricTable { filter: "distributed", metric: m, series: vec![] }),
            );
        }
        Self { scan_period, tables, accounting: vec![] }
    }

    pub fn table(&self, filter: &str, metric: &str) -> Option<&MetricTable> {
        self.tables.iter().find(|t| t.filter == filter && t.metric == metric)
    }
}

const CENTRAL_METRICS: [&str; 3] = ["gwd", "ospa", "nees"];
const DISTRIBUTED_METRICS: [&str; 4] = ["gwd", "ospa", "acee_kin", "acee_ext"];

fn check_finite(series: &[&Vec<f64>]) -> Result<(), String> {
    if series.iter().all(|s| s.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err("non-finite metric".into())
    }
}

type RunOutcome = Result<Vec<Vec<f64>>, String>;

fn central_run(cfg: &ScenarioConfig, seed: u64, run: usize) -> CliResult<RunOutcome> {
    let inputs = simulate_inputs(cfg, seed, run as u64)?;
    let outcome = run_central(cfg, &inputs)
        .and_then(|post| central_metrics(&post, &inputs.truth, cfg.shape))
        .map_err(|e| e.to_string())
        .and_then(|m| {
            check_finite(&[&m.gwd, &m.ospa, &m.nees])?;
            Ok(vec![m.gwd, m.ospa, m.nees])
        });
    Ok(outcome)
}

fn distributed_run(cfg: &ScenarioConfig, seed: u64, run: usize, iters: &[usize]) -> CliResult<Vec<RunOutcome>> {
    let inputs = simulate_inputs(cfg, seed, run as u64)?;
    Ok(iters
        .iter()
        .map(|&l| {
            run_distributed(cfg, &inputs, l)
                .and_then(|post| distributed_metrics(&post, &inputs.truth, cfg.shape))
                .map_err(|e| e.to_string())
                .and_then(|m| {
                    check_finite(&[&m.gwd, &m.ospa, &m.acee_kin, &m.acee_ext])?;
                    Ok(vec![m.gwd, m.ospa, m.acee_kin, m.acee_ext])
                })
        })
        .collect())
}

/// Mean and `sd / sqrt(n)` per scan over the completed runs; the standard
/// error of a single run is reported as NaN.
pub fn summarize(samples: &[&Vec<f64>], scans: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; scans];
    let mut stderr = vec![f64::NAN; scans];
    for k in 0..scans {
        let m = samples.iter().map(|s| s[k]).sum::<f64>() / n;
        mean[k] = m;
        if samples.len() > 1 {
            let var = samples.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[k] = var.sqrt() / n.sqrt();
        }
    }
    (mean, stderr)
}

fn reduce(
    filter: &'static str,
    iterations: usize,
    outcomes: &[&RunOutcome],
    metrics: &[&'static str],
    scans: usize,
    table: &mut ResultTable,
) {
    let ok: Vec<&Vec<Vec<f64>>> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let diverged_runs: Vec<DivergedRun> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(run, o)| o.as_ref().err().map(|reason| DivergedRun { run, reason: reason.clone() }))
        .collect();
    table.accounting.push(RunAccounting {
        filter: filter.into(),
        iterations,
        completed: ok.len(),
        diverged: diverged_runs.len(),
        diverged_runs,
    });
    if ok.is_empty() {
        return;
    }
    for (j, metric) in metrics.iter().enumerate() {
        let samples: Vec<&Vec<f64>> = ok.iter().map(|r| &r[j]).collect();
        let (mean, stderr) = summarize(&samples, scans);
        if let Some(t) = table.tables.iter_mut().find(|t| t.filter == filter && t.metric == *metric) {
            t.series.push(Series { iterations, mean, stderr });
        }
    }
}

/// Runs every Monte Carlo index of `spec`; results do not depend on the
/// number of worker threads.
pub fn run_campaign(spec: &RunSpec) -> CliResult<ResultTable> {
    spec.validate()?;
    let cfg = &spec.scenario;
    let scans = cfg.scan_count;
    let mut table = ResultTable::empty(spec.filter, cfg.scan_period);

    if spec.filter.central() {
        let outcomes = (0..spec.runs)
            .into_par_iter()
            .map(|run| central_run(cfg, spec.seed, run))
            .collect::<CliResult<Vec<_>>>()?;
        let refs: Vec<&RunOutcome> = outcomes.iter().collect();
        reduce("central", 0, &refs, &CENTRAL_METRICS, scans, &mut table);
    }
    if spec.filter.distributed() {
        let outcomes = (0..spec.runs)
            .into_par_iter()
            .map(|run| distributed_run(cfg, spec.seed, run, &spec.consensus_iters))
            .collect::<CliResult<Vec<_>>>()?;
        for (j, &l) in spec.consensus_iters.iter().enumerate() {
            let refs: Vec<&RunOutcome> = outcomes.iter().map(|o| &o[j]).collect();
            reduce("distributed", l, &refs, &DISTRIBUTED_METRICS, scans, &mut table);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub spec: RunSpec,
    pub files: Vec<String>,
    pub accounting: Vec<RunAccounting>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))
    }
}

fn csv_text(table: &MetricTable, scan_period: f64) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &table.series {
        for (k, (m, e)) in s.mean.iter().zip(&s.stderr).enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", k as f64 * scan_period, s.iterations, table.metric, m, e));
        }
    }
    out
}

/// Writes the CSV files and the manifest into `dir`, returning the paths
/// written.
pub fn export_results(spec: &RunSpec, table: &ResultTable, dir: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: &str, text: &str| -> CliResult<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    };
    let mut written = vec![];
    for t in &table.tables {
        written.push(write(&t.file_name(), &csv_text(t, table.scan_period))?);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec: spec.clone(),
        files: table.tables.iter().map(MetricTable::file_name).collect(),
        accounting: table.accounting.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    written.push(write(MANIFEST_FILE, &(json + "\n"))?);
    Ok(written)
}

/// Output directory: the flag, then the environment variable, then
/// [`DEFAULT_OUT`].
pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
