//! Experiment configuration, orchestration, persistence and reporting.
//!
//! Layout of a results directory:
//!
//! ```text
//! <out>/config.toml                       resolved configuration
//! <out>/<alg>_<setup>_<budget>/seed_<s>/archive.jsonl
//! <out>/<alg>_<setup>_<budget>/seed_<s>/result.json
//! <out>/holdout_archive.jsonl             cache of independent evaluations
//! <out>/summary.csv, trajectory.csv, best.csv, compare.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{ConfigError, EvaluationError, NasError};
use crate::evaluation::{
    evaluations_allowed, independent_quality, EvaluationArchive, EvaluationSetup, Evaluator, FitnessFunction, PoolKind,
    SeedPool, SplitPlan, TrainingUnit, UnitSlot,
};
use crate::evaluators::{ExternalEvaluator, SyntheticBenchmark, SyntheticBenchmarkParams, TabularBenchmark};
use crate::metrics_stats::{bonferroni, spearman, top_fraction_correlation, wilcoxon_one_sided};
use crate::search::{run_algorithm, Algorithm, AlgorithmParams};
use crate::search_space::{random_genotype, repair, Genotype};

pub const CONFIG_FILE: &str = "config.toml";
pub const RESULT_FILE: &str = "result.json";
pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const HOLDOUT_ARCHIVE_FILE: &str = "holdout_archive.jsonl";
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvaluatorSpec {
    Synthetic(SyntheticBenchmarkParams),
    Tabular {
        path: PathBuf,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_workers")]
        workers: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_workers() -> usize {
    1
}
fn default_timeout_secs() -> u64 {
    3600
}

impl EvaluatorSpec {
    pub fn build(&self) -> Result<Box<dyn Evaluator>, NasError> {
        Ok(match self {
            EvaluatorSpec::Synthetic(p) => Box::new(SyntheticBenchmark::new(p.clone())?),
            EvaluatorSpec::Tabular { path } => Box::new(TabularBenchmark::load(path)?),
            EvaluatorSpec::External { command, workers, timeout_secs } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| ConfigError::Invalid("external evaluator command is empty".into()))?;
                Box::new(ExternalEvaluator::command(
                    program.clone(),
                    args.to_vec(),
                    *workers,
                    Duration::from_secs(*timeout_secs),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub partitionings: Vec<u32>,
    pub seeds: Vec<u32>,
}

impl PoolSpec {
    fn to_pool(&self, kind: PoolKind) -> Result<SeedPool, ConfigError> {
        SeedPool::new(kind, self.partitionings.clone(), self.seeds.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub n_samples: usize,
    pub fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { n_samples: 5000, fraction: 0.2, seed: 0 }
    }
}

fn one_or_many<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

fn default_n() -> usize {
    5
}
fn default_call_limit_factor() -> usize {
    10
}

/// One experiment: every combination of the listed algorithms, setups and
/// budgets, each repeated for `n_runs` search seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(alias = "algorithm", deserialize_with = "one_or_many")]
    pub algorithms: Vec<Algorithm>,
    #[serde(alias = "setup", deserialize_with = "one_or_many")]
    pub setups: Vec<EvaluationSetup>,
    #[serde(alias = "budget", deserialize_with = "one_or_many")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_n")]
    pub n_runs: usize,
    #[serde(default = "default_n")]
    pub n_best: usize,
    /// Search seeds, one per run; defaults to `0..n_runs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Objective calls allowed per run, as a multiple of the evaluations the
    /// budget pays for. Cached calls are free, so this bounds revisit loops.
    #[serde(default = "default_call_limit_factor")]
    pub call_limit_factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_pool: Option<PoolSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_pool: Option<PoolSpec>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub algorithm_params: AlgorithmParams,
    pub evaluator: EvaluatorSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative tabular path is taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, NasError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let EvaluatorSpec::Tabular { path: table } = &mut config.evaluator {
            if table.is_relative() {
                let joined = path.parent().unwrap_or(Path::new("")).join(&table);
                *table = fs::canonicalize(&joined).unwrap_or(joined);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..self.n_runs as u64).collect())
    }

    pub fn search_pool(&self) -> Result<SeedPool, ConfigError> {
        match &self.search_pool {
            Some(spec) => spec.to_pool(PoolKind::Search),
            None => Ok(SeedPool::default_search()),
        }
    }

    pub fn holdout_pool(&self) -> Result<SeedPool, ConfigError> {
        match &self.holdout_pool {
            Some(spec) => spec.to_pool(PoolKind::Holdout),
            None => Ok(SeedPool::default_holdout()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.algorithms.is_empty() || self.setups.is_empty() || self.budgets.is_empty() {
            return invalid("algorithms, setups and budgets must be nonempty");
        }
        if self.budgets.contains(&0) {
            return invalid("budgets must be positive");
        }
        if self.n_runs == 0 || self.n_best == 0 {
            return invalid("n_runs and n_best must be positive");
        }
        if self.call_limit_factor == 0 {
            return invalid("call_limit_factor must be positive");
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.n_runs {
                return Err(ConfigError::Invalid(format!("{} seeds listed for {} runs", seeds.len(), self.n_runs)));
            }
            if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
                return invalid("run seeds must be distinct");
            }
        }
        for list_has_dupes in [
            self.algorithms.iter().collect::<BTreeSet<_>>().len() != self.algorithms.len(),
            self.setups.iter().collect::<BTreeSet<_>>().len() != self.setups.len(),
            self.budgets.iter().collect::<BTreeSet<_>>().len() != self.budgets.len(),
        ] {
            if list_has_dupes {
                return invalid("algorithms, setups and budgets must not repeat");
            }
        }
        if !(self.noise.fraction > 0.0 && self.noise.fraction <= 1.0) || self.noise.n_samples < 2 {
            return invalid("noise analysis needs n_samples >= 2 and fraction in (0, 1]");
        }
        if let EvaluatorSpec::Synthetic(p) = &self.evaluator {
            p.validate()?;
        }
        if let EvaluatorSpec::External { command, workers, .. } = &self.evaluator {
            if command.is_empty() || *workers == 0 {
                return invalid("external evaluator needs a command and at least one worker");
            }
        }
        let search = self.search_pool()?;
        let holdout = self.holdout_pool()?;
        if search.overlaps(&holdout) {
            return Err(ConfigError::PoolOverlap);
        }
        Ok(())
    }

    /// Every (algorithm, setup, budget) cell in configuration order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &algorithm in &self.algorithms {
            for &setup in &self.setups {
                for &budget in &self.budgets {
                    cells.push(Cell { algorithm, setup, budget });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub setup: EvaluationSetup,
    pub budget: usize,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{}_{}_{}", self.algorithm, self.setup, self.budget)
    }
}

fn run_dir(out: &Path, cell: &Cell, seed: u64) -> PathBuf {
    out.join(cell.dir_name()).join(format!("seed_{seed}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub rank: usize,
    pub genotype: Genotype,
    pub repaired: Genotype,
    pub search_fitness: f64,
    pub independent_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub setup: EvaluationSetup,
    pub budget: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Archive file name relative to the run directory.
    pub archive: String,
    pub trainings: usize,
    pub evaluations: usize,
    pub objective_calls: usize,
    pub best: Vec<BestEntry>,
}

impl RunResult {
    pub fn cell(&self) -> Cell {
        Cell { algorithm: self.algorithm, setup: self.setup, budget: self.budget }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NasError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| NasError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| NasError::Format { path: path.display().to_string(), line: e.line(), message: e.to_string() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NasError> {
        let text = serde_json::to_string_pretty(self).expect("result serializes") + "\n";
        write_file(path.as_ref(), &text)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), NasError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| NasError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| NasError::io(path, e))
}

/// Outcome of one search run before persistence.
fn execute_run(
    config: &ExperimentConfig,
    evaluator: &dyn Evaluator,
    pool: &SeedPool,
    cell: Cell,
    seed: u64,
) -> Result<(RunResult, EvaluationArchive), ConfigError> {
    let plan = SplitPlan::make(cell.setup, pool, seed)?;
    let mut archive = EvaluationArchive::new();
    let mut ledger = crate::evaluation::BudgetLedger::new(cell.budget);
    let limit = config.call_limit_factor * evaluations_allowed(cell.budget, cell.setup).max(1);
    let mut fitness = FitnessFunction::new(plan, evaluator, &mut archive, &mut ledger).with_call_limit(limit);
    let outcome = run_algorithm(cell.algorithm, &config.algorithm_params, &mut fitness, seed);
    let calls = fitness.calls();
    let (status, error, best) = match outcome {
        Ok(state) => {
            let best = state
                .top_distinct(config.n_best)
                .into_iter()
                .enumerate()
                .map(|(rank, (genotype, search_fitness))| BestEntry {
                    rank,
                    genotype,
                    repaired: repair(&genotype),
                    search_fitness,
                    independent_quality: None,
                })
                .collect();
            (RunStatus::Ok, None, best)
        }
        Err(e) => (RunStatus::Failed, Some(e.to_string()), Vec::new()),
    };
    let result = RunResult {
        algorithm: cell.algorithm,
        setup: cell.setup,
        budget: cell.budget,
        seed,
        status,
        error,
        archive: ARCHIVE_FILE.to_string(),
        trainings: ledger.consumed(),
        evaluations: archive.evaluations(),
        objective_calls: calls,
        best,
    };
    Ok((result, archive))
}

/// Runs every cell of the grid for every seed and writes archives and
/// results under `out`. A run whose evaluator fails is recorded as failed
/// and the remaining runs continue.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunResult>, NasError> {
    config.validate()?;
    let pool = config.search_pool()?;
    let evaluator = config.evaluator.build()?;
    let mut resolved = config.clone();
    resolved.seeds = Some(config.seeds());
    resolved.output = None;
    write_file(&out.join(CONFIG_FILE), &resolved.to_toml())?;
    let mut results = Vec::new();
    for cell in config.cells() {
        for seed in config.seeds() {
            let (result, archive) = execute_run(config, evaluator.as_ref(), &pool, cell, seed)?;
            let dir = run_dir(out, &cell, seed);
            fs::create_dir_all(&dir).map_err(|e| NasError::io(&dir, e))?;
            match &result.error {
                Some(e) => warn!("{} seed {seed} failed: {e}", cell.dir_name()),
                None => info!(
                    "{} seed {seed}: {} trainings, best {:?}",
                    cell.dir_name(),
                    result.trainings,
                    result.best.first().map(|b| b.search_fitness)
                ),
            }
            archive.write_jsonl(dir.join(ARCHIVE_FILE))?;
            result.save(dir.join(RESULT_FILE))?;
            results.push(result);
        }
    }
    Ok(results)
}

pub fn load_config(out: &Path) -> Result<ExperimentConfig, NasError> {
    ExperimentConfig::load(out.join(CONFIG_FILE))
}

/// Results present under `out`, in grid order.
pub fn load_results(out: &Path) -> Result<Vec<RunResult>, NasError> {
    let config = load_config(out)?;
    let mut results = Vec::new();
    for cell in config.cells() {
        for seed in config.seeds() {
            let path = run_dir(out, &cell, seed).join(RESULT_FILE);
            if path.exists() {
                results.push(RunResult::load(path)?);
            }
        }
    }
    Ok(results)
}

/// Fills in the independent quality of every best-k genotype using the
/// holdout pool. Holdout trainings are cached in one archive per results
/// directory, so repeating the call changes nothing.
pub fn reevaluate(out: &Path) -> Result<Vec<RunResult>, NasError> {
    let config = load_config(out)?;
    let evaluator = config.evaluator.build()?;
    reevaluate_with(out, &config, evaluator.as_ref())
}

pub fn reevaluate_with(out: &Path, config: &ExperimentConfig, evaluator: &dyn Evaluator) -> Result<Vec<RunResult>, NasError> {
    let search = config.search_pool()?;
    let holdout = config.holdout_pool()?;
    let archive_path = out.join(HOLDOUT_ARCHIVE_FILE);
    let mut archive = if archive_path.exists() {
        EvaluationArchive::read_jsonl(&archive_path)?
    } else {
        EvaluationArchive::new()
    };
    let mut results = load_results(out)?;
    let mut outcome = Ok(());
    'runs: for result in results.iter_mut().filter(|r| r.status == RunStatus::Ok) {
        for entry in &mut result.best {
            match independent_quality(&entry.genotype, evaluator, &holdout, &search, &mut archive) {
                Ok(q) => entry.independent_quality = Some(q),
                Err(e) => {
                    outcome = Err(e);
                    break 'runs;
                }
            }
        }
        result.save(run_dir(out, &result.cell(), result.seed).join(RESULT_FILE))?;
    }
    archive.write_jsonl(&archive_path)?;
    outcome.map(|_| results)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub setup: EvaluationSetup,
    pub budget: usize,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub runs_missing: usize,
    pub architectures: usize,
    pub mean_search_fitness: Option<f64>,
    pub mean_independent_quality: Option<f64>,
    /// `ok`, `incomplete` (some runs missing or failed), `missing` (no
    /// completed run) or `no_quality` (not yet re-evaluated).
    pub flag: String,
}

/// Averages over all best-k architectures of the completed runs of each cell.
pub fn summarize_results(cells: &[Cell], expected_runs: usize, results: &[RunResult]) -> Vec<SummaryRow> {
    cells
        .iter()
        .map(|cell| {
            let in_cell: Vec<&RunResult> = results.iter().filter(|r| r.cell() == *cell).collect();
            let ok: Vec<&RunResult> = in_cell.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
            let entries: Vec<&BestEntry> = ok.iter().flat_map(|r| &r.best).collect();
            let fitness: Vec<f64> = entries.iter().map(|e| e.search_fitness).collect();
            let quality: Vec<f64> = entries.iter().filter_map(|e| e.independent_quality).collect();
            let quality_complete = quality.len() == entries.len();
            let runs_failed = in_cell.len() - ok.len();
            let runs_missing = expected_runs.saturating_sub(in_cell.len());
            let flag = if ok.is_empty() {
                "missing"
            } else if !quality_complete {
                "no_quality"
            } else if runs_failed + runs_missing > 0 {
                "incomplete"
            } else {
                "ok"
            };
            SummaryRow {
                algorithm: cell.algorithm,
                setup: cell.setup,
                budget: cell.budget,
                runs_ok: ok.len(),
                runs_failed,
                runs_missing,
                architectures: entries.len(),
                mean_search_fitness: mean(&fitness),
                mean_independent_quality: if quality_complete { mean(&quality) } else { None },
                flag: flag.to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub algorithm: Algorithm,
    pub setup: EvaluationSetup,
    pub budget: usize,
    pub mean_independent_quality: Option<f64>,
    pub std_independent_quality: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BestRow {
    algorithm: Algorithm,
    setup: EvaluationSetup,
    budget: usize,
    seed: u64,
    rank: usize,
    genotype: String,
    repaired: String,
    search_fitness: f64,
    independent_quality: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), NasError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| NasError::Format { path: path.display().to_string(), line: 0, message: e.to_string() })?;
    }
    let bytes = writer.into_inner().expect("in-memory writer flushes");
    write_file(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, NasError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| NasError::Format { path: path.display().to_string(), line: 0, message: e.to_string() })?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| NasError::Format { path: path.display().to_string(), line: i + 2, message: e.to_string() }))
        .collect()
}

/// Writes `summary.csv`, `trajectory.csv` (quality against budget per
/// algorithm and setup) and `best.csv` (every best-k architecture).
pub fn summarize(out: &Path) -> Result<Vec<SummaryRow>, NasError> {
    let config = load_config(out)?;
    let results = load_results(out)?;
    let mut cells = config.cells();
    cells.sort();
    let summary = summarize_results(&cells, config.n_runs, &results);
    write_csv(&out.join("summary.csv"), &summary)?;

    let trajectory: Vec<TrajectoryRow> = cells
        .iter()
        .map(|cell| {
            let q: Vec<f64> = results
                .iter()
                .filter(|r| r.cell() == *cell && r.status == RunStatus::Ok)
                .flat_map(|r| r.best.iter().filter_map(|e| e.independent_quality))
                .collect();
            let m = mean(&q);
            let sd = m.filter(|_| q.len() > 1).map(|m| (q.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (q.len() - 1) as f64).sqrt());
            TrajectoryRow { algorithm: cell.algorithm, setup: cell.setup, budget: cell.budget, mean_independent_quality: m, std_independent_quality: sd, n: q.len() }
        })
        .collect();
    write_csv(&out.join("trajectory.csv"), &trajectory)?;

    let best: Vec<BestRow> = results
        .iter()
        .flat_map(|r| {
            r.best.iter().map(move |e| BestRow {
                algorithm: r.algorithm,
                setup: r.setup,
                budget: r.budget,
                seed: r.seed,
                rank: e.rank,
                genotype: e.genotype.to_string(),
                repaired: e.repaired.to_string(),
                search_fitness: e.search_fitness,
                independent_quality: e.independent_quality,
            })
        })
        .collect();
    write_csv(&out.join("best.csv"), &best)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub budget: usize,
    /// The hypothesis is that `setup_a` finds better architectures than `setup_b`.
    pub setup_a: EvaluationSetup,
    pub setup_b: EvaluationSetup,
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Qualities of one cell keyed by (run seed, rank).
fn paired_qualities(results: &[RunResult], cell: Cell) -> Option<BTreeMap<(u64, usize), f64>> {
    let runs: Vec<&RunResult> = results.iter().filter(|r| r.cell() == cell && r.status == RunStatus::Ok).collect();
    if runs.is_empty() {
        return None;
    }
    let mut map = BTreeMap::new();
    for r in runs {
        for e in &r.best {
            map.insert((r.seed, e.rank), e.independent_quality?);
        }
    }
    Some(map)
}

/// One-sided Wilcoxon tests of `a` over `b` for each ordered setup pair,
/// per algorithm and budget, Bonferroni-corrected with `m`. Cells without
/// completed, re-evaluated runs are skipped.
pub fn compare_results(
    results: &[RunResult],
    pairs: &[(EvaluationSetup, EvaluationSetup)],
    m: usize,
) -> Result<Vec<ComparisonRow>, NasError> {
    if m == 0 {
        return Err(ConfigError::Invalid("m must be positive".into()).into());
    }
    let algorithms: BTreeSet<Algorithm> = results.iter().map(|r| r.algorithm).collect();
    let budgets: BTreeSet<usize> = results.iter().map(|r| r.budget).collect();
    let mut rows = Vec::new();
    for &algorithm in &algorithms {
        for &budget in &budgets {
            for &(setup_a, setup_b) in pairs {
                let a = paired_qualities(results, Cell { algorithm, setup: setup_a, budget });
                let b = paired_qualities(results, Cell { algorithm, setup: setup_b, budget });
                let (Some(a), Some(b)) = (a, b) else { continue };
                if a.keys().ne(b.keys()) {
                    return Err(NasError::Pairing(format!(
                        "{algorithm} budget {budget}: {setup_a} and {setup_b} results cannot be matched by run seed and rank"
                    )));
                }
                let xs: Vec<f64> = a.values().copied().collect();
                let ys: Vec<f64> = b.values().copied().collect();
                let p_value = wilcoxon_one_sided(&xs, &ys)?;
                let p_adjusted = bonferroni(p_value, m);
                rows.push(ComparisonRow {
                    algorithm,
                    budget,
                    setup_a,
                    setup_b,
                    n: xs.len(),
                    mean_a: mean(&xs).unwrap_or(f64::NAN),
                    mean_b: mean(&ys).unwrap_or(f64::NAN),
                    p_value,
                    p_adjusted,
                    significant: p_adjusted < SIGNIFICANCE_LEVEL,
                });
            }
        }
    }
    Ok(rows)
}

/// Every ordered pair of distinct setups.
pub fn all_setup_pairs(setups: &[EvaluationSetup]) -> Vec<(EvaluationSetup, EvaluationSetup)> {
    let mut pairs = Vec::new();
    for &a in setups {
        for &b in setups {
            if a != b {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Writes `compare.csv` for all ordered setup pairs of the experiment.
pub fn compare_setups(out: &Path, m: usize) -> Result<Vec<ComparisonRow>, NasError> {
    let config = load_config(out)?;
    let mut setups = config.setups.clone();
    setups.sort();
    let rows = compare_results(&load_results(out)?, &all_setup_pairs(&setups), m)?;
    write_csv(&out.join("compare.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePair {
    pub genotype: String,
    pub seed_a: f64,
    pub seed_b: f64,
    pub split_a: f64,
    pub split_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelStats {
    /// `seed`: same split, two training seeds. `split`: same seed, two partitionings.
    pub panel: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub fraction: f64,
    pub top_rho: Option<f64>,
    pub argmax_agrees: bool,
}

fn argmax(xs: impl Iterator<Item = f64>) -> Option<usize> {
    xs.enumerate().fold(None, |best: Option<(usize, f64)>, (i, x)| match best {
        Some((_, b)) if b >= x => best,
        _ => Some((i, x)),
    })
    .map(|(i, _)| i)
}

fn panel_stats(panel: &str, pairs: &[(f64, f64)], fraction: f64) -> Result<PanelStats, NasError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let defined = |r: Result<f64, crate::error::StatsError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(crate::error::StatsError::NotDefined(_)) => Ok(None),
        Err(e) => Err(NasError::from(e)),
    };
    Ok(PanelStats {
        panel: panel.to_string(),
        n: pairs.len(),
        rho: defined(spearman(&xs, &ys))?,
        fraction,
        top_rho: defined(top_fraction_correlation(pairs, fraction))?,
        argmax_agrees: argmax(xs.into_iter()) == argmax(ys.into_iter()),
    })
}

/// Statistics of the seed and split panels of a set of noise pairs.
pub fn noise_statistics(pairs: &[NoisePair], fraction: f64) -> Result<Vec<PanelStats>, NasError> {
    let seed: Vec<(f64, f64)> = pairs.iter().map(|p| (p.seed_a, p.seed_b)).collect();
    let split: Vec<(f64, f64)> = pairs.iter().map(|p| (p.split_a, p.split_b)).collect();
    Ok(vec![panel_stats("seed", &seed, fraction)?, panel_stats("split", &split, fraction)?])
}

/// Scores random genotypes on a reference unit, on a unit with another
/// training seed, and on a unit with another partitioning.
pub fn noise_pairs(
    evaluator: &dyn Evaluator,
    pool: &SeedPool,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<NoisePair>, NasError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p0, p1) = (pool.partitionings[0], pool.partitionings[1]);
    let (s0, s1) = (pool.seeds[0], pool.seeds[1]);
    let slots = [
        UnitSlot { partitioning: p0, fold: 0, seed: s0 },
        UnitSlot { partitioning: p0, fold: 0, seed: s1 },
        UnitSlot { partitioning: p1, fold: 0, seed: s0 },
    ];
    let mut pairs = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let g = random_genotype(&mut rng);
        let r = repair(&g);
        let units: Vec<TrainingUnit> = slots.iter().map(|&slot| TrainingUnit { genotype: r, slot }).collect();
        let s = evaluator.score_batch(&units).map_err(EvaluationError::from)?;
        pairs.push(NoisePair { genotype: g.to_string(), seed_a: s[0], seed_b: s[1], split_a: s[0], split_b: s[2] });
    }
    Ok(pairs)
}

/// Runs the noise study of `config` and writes `noise_pairs.csv` and
/// `noise_summary.csv` under `out`.
pub fn noise_analysis(config: &ExperimentConfig, out: &Path) -> Result<Vec<PanelStats>, NasError> {
    let evaluator = config.evaluator.build()?;
    let pairs = noise_pairs(evaluator.as_ref(), &config.search_pool()?, config.noise.n_samples, config.noise.seed)?;
    let stats = noise_statistics(&pairs, config.noise.fraction)?;
    write_csv(&out.join("noise_pairs.csv"), &pairs)?;
    write_csv(&out.join("noise_summary.csv"), &stats)?;
    Ok(stats)
}

pub fn load_noise_pairs(path: &Path) -> Result<Vec<NoisePair>, NasError> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> String {
        format!(
            r#"
algorithm = "ls"
setup = "cv"
budget = 100
n_runs = 2
n_best = 3
{extra}
[evaluator]
kind = "synthetic"
benchmark_seed = 4
"#
        )
    }

    #[test]
    fn config_defaults_and_lists() {
        let c = ExperimentConfig::from_toml(&config("")).unwrap();
        assert_eq!(c.algorithms, vec![Algorithm::Ls]);
        assert_eq!(c.seeds(), vec![0, 1]);
        assert_eq!(c.search_pool().unwrap(), SeedPool::default_search());
        let grid = ExperimentConfig::from_toml(
            &config("").replace(r#"algorithm = "ls""#, r#"algorithms = ["ls", "tpe"]"#).replace(r#"setup = "cv""#, r#"setups = ["1fold", "cv", "3cv"]"#).replace("budget = 100", "budgets = [375, 750, 1500, 3000]"),
        )
        .unwrap();
        assert_eq!(grid.cells().len(), 24);
        let round = ExperimentConfig::from_toml(&grid.to_toml()).unwrap();
        assert_eq!(round, grid);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("nonsense = 1"), Err(ConfigError::Parse(_))));
        assert!(ExperimentConfig::from_toml(&config("seeds = [3, 3]")).is_err());
        assert!(ExperimentConfig::from_toml(&config("seeds = [1]")).is_err());
        let overlap = "[holdout_pool]\npartitionings = [0, 100, 101]\nseeds = [1000, 1001, 1002, 1003, 1004, 1005, 1006, 1007, 1008, 1009, 1010, 1011, 1012, 1013, 1014]";
        assert!(matches!(ExperimentConfig::from_toml(&config(overlap)), Err(ConfigError::PoolOverlap)));
    }

    fn result(setup: EvaluationSetup, seed: u64, qualities: &[f64]) -> RunResult {
        RunResult {
            algorithm: Algorithm::Ls,
            setup,
            budget: 375,
            seed,
            status: RunStatus::Ok,
            error: None,
            archive: ARCHIVE_FILE.into(),
            trainings: 0,
            evaluations: 0,
            objective_calls: 0,
            best: qualities
                .iter()
                .enumerate()
                .map(|(rank, &q)| BestEntry {
                    rank,
                    genotype: Genotype::zeros(),
                    repaired: Genotype::zeros(),
                    search_fitness: q,
                    independent_quality: Some(q),
                })
                .collect(),
        }
    }

    #[test]
    fn summary_means() {
        let cell = Cell { algorithm: Algorithm::Ls, setup: EvaluationSetup::Cv, budget: 375 };
        let one = summarize_results(&[cell], 1, &[result(EvaluationSetup::Cv, 0, &[0.7])]);
        assert_eq!(one[0].mean_independent_quality, Some(0.7));
        assert_eq!(one[0].flag, "ok");
        let runs = [result(EvaluationSetup::Cv, 0, &[0.5, 0.7]), result(EvaluationSetup::Cv, 1, &[0.9, 0.1])];
        let two = summarize_results(&[cell], 3, &runs);
        let run_means = (0.6 + 0.5) / 2.0;
        assert!((two[0].mean_independent_quality.unwrap() - run_means).abs() < 1e-15);
        assert_eq!(two[0].flag, "incomplete");
        let empty = summarize_results(&[Cell { budget: 750, ..cell }], 1, &runs);
        assert_eq!(empty[0].flag, "missing");
        assert_eq!(empty[0].mean_search_fitness, None);
    }

    #[test]
    fn comparison_all_favoring_a() {
        let a: Vec<RunResult> = (0..5).map(|s| result(EvaluationSetup::Cv, s, &[0.9, 0.8, 0.7, 0.6, 0.5].map(|q| q + s as f64 * 0.01))).collect();
        let b: Vec<RunResult> = (0..5)
            .map(|s| result(EvaluationSetup::OneFold, s, &[0.9, 0.8, 0.7, 0.6, 0.5].map(|q| q + s as f64 * 0.01 - 0.001 * (1.0 + q))))
            .collect();
        let all: Vec<RunResult> = a.into_iter().chain(b).collect();
        let rows = compare_results(&all, &[(EvaluationSetup::Cv, EvaluationSetup::OneFold)], 8).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 25);
        assert_eq!(rows[0].p_value, 2f64.powi(-25));
        assert_eq!(rows[0].p_adjusted, 8.0 * 2f64.powi(-25));
        assert!(rows[0].significant);
    }

    #[test]
    fn comparison_identical_and_unmatched() {
        let same = [result(EvaluationSetup::Cv, 0, &[0.5, 0.6]), result(EvaluationSetup::OneFold, 0, &[0.5, 0.6])];
        let rows = compare_results(&same, &[(EvaluationSetup::Cv, EvaluationSetup::OneFold)], 8).unwrap();
        assert_eq!(rows[0].p_value, 1.0);
        assert!(!rows[0].significant);
        let unmatched = [result(EvaluationSetup::Cv, 0, &[0.5, 0.6]), result(EvaluationSetup::OneFold, 1, &[0.5, 0.6])];
        assert!(matches!(
            compare_results(&unmatched, &[(EvaluationSetup::Cv, EvaluationSetup::OneFold)], 8),
            Err(NasError::Pairing(_))
        ));
    }

    #[test]
    fn noise_on_zero_noise_evaluator() {
        let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default().noiseless()).unwrap();
        let pairs = noise_pairs(&bench, &SeedPool::default_search(), 300, 1).unwrap();
        for s in noise_statistics(&pairs, 0.2).unwrap() {
            assert_eq!(s.rho, Some(1.0));
            assert_eq!(s.top_rho, Some(1.0));
            assert!(s.argmax_agrees);
        }
    }
}
