//! Fitness evaluation under a budget measured in network trainings.
//!
//! A fitness evaluation averages the scores of the training units in a
//! [`SplitPlan`]. Units already in the [`EvaluationArchive`] are free; every
//! other unit costs one training from the [`BudgetLedger`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EvaluationError, EvaluatorError, NasError};
use crate::search::Objective;
use crate::search_space::{repair, Genotype};

pub const FOLDS_PER_CV: usize = 5;
pub const PARTITIONINGS_3CV: usize = 3;
/// Seeds consumed by the largest plan (three 5-fold cross-validations).
pub const MAX_PLAN_UNITS: usize = FOLDS_PER_CV * PARTITIONINGS_3CV;

/// Budgets T, 2T, 4T and 8T in trainings.
pub const BUDGETS: [usize; 4] = [375, 750, 1500, 3000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvaluationSetup {
    #[serde(rename = "1fold")]
    OneFold,
    #[serde(rename = "cv")]
    Cv,
    #[serde(rename = "3cv")]
    ThreeCv,
}

impl EvaluationSetup {
    pub const ALL: [EvaluationSetup; 3] = [EvaluationSetup::OneFold, EvaluationSetup::Cv, EvaluationSetup::ThreeCv];

    pub fn trainings_per_evaluation(self) -> usize {
        match self {
            EvaluationSetup::OneFold => 1,
            EvaluationSetup::Cv => FOLDS_PER_CV,
            EvaluationSetup::ThreeCv => MAX_PLAN_UNITS,
        }
    }

    pub fn partitionings(self) -> usize {
        match self {
            EvaluationSetup::ThreeCv => PARTITIONINGS_3CV,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvaluationSetup::OneFold => "1fold",
            EvaluationSetup::Cv => "cv",
            EvaluationSetup::ThreeCv => "3cv",
        }
    }
}

impl fmt::Display for EvaluationSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvaluationSetup {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1fold" | "onefold" => Ok(EvaluationSetup::OneFold),
            "cv" => Ok(EvaluationSetup::Cv),
            "3cv" | "threecv" => Ok(EvaluationSetup::ThreeCv),
            other => Err(ConfigError::Invalid(format!("unknown setup {other:?}"))),
        }
    }
}

/// Number of fitness evaluations a budget pays for when nothing is cached.
pub fn evaluations_allowed(budget: usize, setup: EvaluationSetup) -> usize {
    budget / setup.trainings_per_evaluation()
}

/// Where a unit's data split and seed come from, without the genotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitSlot {
    pub partitioning: u32,
    pub fold: u8,
    pub seed: u32,
}

/// One network training: a repaired genotype on one fold of one partitioning with one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainingUnit {
    pub genotype: Genotype,
    pub slot: UnitSlot,
}

impl fmt::Display for TrainingUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] partitioning {} fold {} seed {}",
            self.genotype, self.slot.partitioning, self.slot.fold, self.slot.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Search,
    Holdout,
}

/// Partitioning ids and training seeds available to one phase of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPool {
    pub kind: PoolKind,
    pub partitionings: Vec<u32>,
    pub seeds: Vec<u32>,
}

impl SeedPool {
    pub fn new(kind: PoolKind, partitionings: Vec<u32>, seeds: Vec<u32>) -> Result<Self, ConfigError> {
        let pool = SeedPool { kind, partitionings, seeds };
        pool.validate()?;
        Ok(pool)
    }

    /// Default search pool: partitionings 0..8, seeds 0..64.
    pub fn default_search() -> Self {
        SeedPool { kind: PoolKind::Search, partitionings: (0..8).collect(), seeds: (0..64).collect() }
    }

    /// Default holdout pool: partitionings 1000..1003, seeds 10000..10015.
    pub fn default_holdout() -> Self {
        SeedPool {
            kind: PoolKind::Holdout,
            partitionings: (1000..1003).collect(),
            seeds: (10_000..10_015).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let distinct_seeds = self.seeds.iter().collect::<BTreeSet<_>>().len();
        let distinct_parts = self.partitionings.iter().collect::<BTreeSet<_>>().len();
        if distinct_seeds != self.seeds.len() || distinct_parts != self.partitionings.len() {
            return Err(ConfigError::Invalid("seed pool contains duplicate ids".into()));
        }
        if self.seeds.len() < MAX_PLAN_UNITS || self.partitionings.len() < PARTITIONINGS_3CV {
            return Err(ConfigError::PoolExhausted {
                needed_seeds: MAX_PLAN_UNITS,
                needed_partitionings: PARTITIONINGS_3CV,
                seeds: self.seeds.len(),
                partitionings: self.partitionings.len(),
            });
        }
        Ok(())
    }

    pub fn overlaps(&self, other: &SeedPool) -> bool {
        self.seeds.iter().any(|s| other.seeds.contains(s))
            || self.partitionings.iter().any(|p| other.partitionings.contains(p))
    }
}

/// The ordered training units that make up one fitness evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub setup: EvaluationSetup,
    pub pool: PoolKind,
    pub slots: Vec<UnitSlot>,
}

impl SplitPlan {
    /// Nested slot layout over already ordered pool ids: `(p0, f0, s0)`, then
    /// `(p0, f1..4, s1..4)`, then partitionings `p1`, `p2` with seeds `s5..s14`.
    fn nested(setup: EvaluationSetup, kind: PoolKind, partitionings: &[u32], seeds: &[u32]) -> Self {
        let slots = (0..setup.trainings_per_evaluation())
            .map(|i| UnitSlot {
                partitioning: partitionings[i / FOLDS_PER_CV],
                fold: (i % FOLDS_PER_CV) as u8,
                seed: seeds[i],
            })
            .collect();
        SplitPlan { setup, pool: kind, slots }
    }

    /// Plan drawn from `pool` with the pool's ids shuffled by `rng_seed`.
    /// Plans for different setups built from the same pool and seed are nested.
    pub fn make(setup: EvaluationSetup, pool: &SeedPool, rng_seed: u64) -> Result<Self, ConfigError> {
        pool.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut partitionings = pool.partitionings.clone();
        let mut seeds = pool.seeds.clone();
        partitionings.shuffle(&mut rng);
        seeds.shuffle(&mut rng);
        Ok(Self::nested(setup, pool.kind, &partitionings, &seeds))
    }

    /// Three 5-fold cross-validations over the pool's ids in their listed order.
    pub fn three_cv_in_order(pool: &SeedPool) -> Result<Self, ConfigError> {
        pool.validate()?;
        Ok(Self::nested(EvaluationSetup::ThreeCv, pool.kind, &pool.partitionings, &pool.seeds))
    }

    pub fn units(&self, repaired: &Genotype) -> Vec<TrainingUnit> {
        self.slots.iter().map(|&slot| TrainingUnit { genotype: *repaired, slot }).collect()
    }
}

pub fn make_split_plan(setup: EvaluationSetup, pool: &SeedPool, rng_seed: u64) -> Result<SplitPlan, ConfigError> {
    SplitPlan::make(setup, pool, rng_seed)
}

/// Counts executed trainings against a fixed budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    budget: usize,
    consumed: usize,
}

impl BudgetLedger {
    pub fn new(budget: usize) -> Self {
        BudgetLedger { budget, consumed: 0 }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX)
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.consumed
    }

    fn charge(&mut self, trainings: usize) -> Result<(), EvaluationError> {
        if trainings > self.remaining() {
            return Err(EvaluationError::BudgetExhausted { needed: trainings, remaining: self.remaining() });
        }
        self.consumed += trainings;
        Ok(())
    }
}

/// A score source: maps one training unit to a score in `[0, 1]`.
pub trait Evaluator: Send + Sync {
    fn score(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError>;

    /// Scores several units; implementations may run them concurrently.
    fn score_batch(&self, units: &[TrainingUnit]) -> Result<Vec<f64>, EvaluatorError> {
        units.iter().map(|u| self.score(u)).collect()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn score(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        (**self).score(unit)
    }

    fn score_batch(&self, units: &[TrainingUnit]) -> Result<Vec<f64>, EvaluatorError> {
        (**self).score_batch(units)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn score(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        (**self).score(unit)
    }

    fn score_batch(&self, units: &[TrainingUnit]) -> Result<Vec<f64>, EvaluatorError> {
        (**self).score_batch(units)
    }
}

/// One executed training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub genotype: Genotype,
    pub repaired: Genotype,
    pub partitioning: u32,
    pub fold: u8,
    pub seed: u32,
    pub score: f64,
    pub training_index: usize,
}

impl TrainingRecord {
    pub fn unit(&self) -> TrainingUnit {
        TrainingUnit {
            genotype: self.repaired,
            slot: UnitSlot { partitioning: self.partitioning, fold: self.fold, seed: self.seed },
        }
    }
}

/// One completed fitness evaluation of a raw genotype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub genotype: Genotype,
    pub setup: EvaluationSetup,
    pub fitness: f64,
    pub eval_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchiveEvent {
    Training(TrainingRecord),
    Fitness(FitnessRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeEntry {
    pub repaired: Genotype,
    pub fitness: BTreeMap<EvaluationSetup, f64>,
}

/// Cache of executed training units and fitness values, backed by an
/// append-only event log from which it can be rebuilt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationArchive {
    units: BTreeMap<TrainingUnit, f64>,
    genotypes: BTreeMap<Genotype, GenotypeEntry>,
    log: Vec<ArchiveEvent>,
    trainings: usize,
    evaluations: usize,
}

impl EvaluationArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unit_score(&self, unit: &TrainingUnit) -> Option<f64> {
        self.units.get(unit).copied()
    }

    pub fn genotype(&self, raw: &Genotype) -> Option<&GenotypeEntry> {
        self.genotypes.get(raw)
    }

    pub fn genotypes(&self) -> impl Iterator<Item = (&Genotype, &GenotypeEntry)> {
        self.genotypes.iter()
    }

    pub fn events(&self) -> &[ArchiveEvent] {
        &self.log
    }

    /// Number of distinct training units executed.
    pub fn trainings(&self) -> usize {
        self.trainings
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn training_records(&self) -> impl Iterator<Item = &TrainingRecord> {
        self.log.iter().filter_map(|e| match e {
            ArchiveEvent::Training(t) => Some(t),
            ArchiveEvent::Fitness(_) => None,
        })
    }

    pub fn fitness_records(&self) -> impl Iterator<Item = &FitnessRecord> {
        self.log.iter().filter_map(|e| match e {
            ArchiveEvent::Fitness(f) => Some(f),
            ArchiveEvent::Training(_) => None,
        })
    }

    fn apply(&mut self, event: ArchiveEvent) {
        match &event {
            ArchiveEvent::Training(t) => {
                if self.units.insert(t.unit(), t.score).is_none() {
                    self.trainings += 1;
                }
                self.genotypes
                    .entry(t.genotype)
                    .or_insert_with(|| GenotypeEntry { repaired: t.repaired, fitness: BTreeMap::new() });
            }
            ArchiveEvent::Fitness(f) => {
                self.evaluations += 1;
                self.genotypes
                    .entry(f.genotype)
                    .or_insert_with(|| GenotypeEntry { repaired: repair(&f.genotype), fitness: BTreeMap::new() })
                    .fitness
                    .insert(f.setup, f.fitness);
            }
        }
        self.log.push(event);
    }

    /// Rebuilds an archive by replaying its event log.
    pub fn from_events(events: impl IntoIterator<Item = ArchiveEvent>) -> Self {
        let mut archive = Self::new();
        for e in events {
            archive.apply(e);
        }
        archive
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e).expect("archive events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), NasError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| NasError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).map_err(|e| NasError::io(path, e))?;
        w.flush().map_err(|e| NasError::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, NasError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| NasError::io(path, e))?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| NasError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: ArchiveEvent = serde_json::from_str(&line).map_err(|e| NasError::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(Self::from_events(events))
    }
}

/// Averages unit scores after ordering them by unit key, so the result does
/// not depend on the order in which units completed.
fn aggregate(mut scored: Vec<(TrainingUnit, f64)>) -> f64 {
    scored.sort_by_key(|a| a.0);
    scored.iter().map(|(_, s)| s).sum::<f64>() / scored.len() as f64
}

fn clamp_score(unit: &TrainingUnit, score: f64) -> Result<f64, EvaluatorError> {
    if score.is_nan() {
        return Err(EvaluatorError::Failure(format!("NaN score for {unit}")));
    }
    Ok(score.clamp(0.0, 1.0))
}

/// Scores `units`, using the archive where possible. Misses are paid from the
/// ledger all at once; if the ledger cannot cover them nothing changes.
fn score_units(
    raw: &Genotype,
    units: &[TrainingUnit],
    evaluator: &dyn Evaluator,
    archive: &mut EvaluationArchive,
    ledger: &mut BudgetLedger,
) -> Result<f64, EvaluationError> {
    let mut scored = Vec::with_capacity(units.len());
    let mut missing = Vec::new();
    for unit in units {
        match archive.unit_score(unit) {
            Some(s) => scored.push((*unit, s)),
            None if !missing.contains(unit) => missing.push(*unit),
            None => {}
        }
    }
    if missing.len() > ledger.remaining() {
        return Err(EvaluationError::BudgetExhausted { needed: missing.len(), remaining: ledger.remaining() });
    }
    if !missing.is_empty() {
        let fresh = evaluator.score_batch(&missing)?;
        if fresh.len() != missing.len() {
            return Err(EvaluatorError::Protocol(format!(
                "evaluator returned {} scores for {} units",
                fresh.len(),
                missing.len()
            ))
            .into());
        }
        let fresh = missing
            .iter()
            .zip(fresh)
            .map(|(u, s)| clamp_score(u, s).map(|s| (*u, s)))
            .collect::<Result<Vec<_>, _>>()?;
        ledger.charge(fresh.len())?;
        for (unit, score) in &fresh {
            let training_index = archive.trainings;
            archive.apply(ArchiveEvent::Training(TrainingRecord {
                genotype: *raw,
                repaired: unit.genotype,
                partitioning: unit.slot.partitioning,
                fold: unit.slot.fold,
                seed: unit.slot.seed,
                score: *score,
                training_index,
            }));
        }
        scored.extend(units.iter().filter_map(|u| fresh.iter().find(|(f, _)| f == u).copied()));
    }
    Ok(aggregate(scored))
}

/// Repairs `genotype`, scores every unit of `plan` and returns their mean.
/// The raw genotype is what gets recorded; repair is used only for scoring.
pub fn evaluate_fitness(
    genotype: &Genotype,
    plan: &SplitPlan,
    evaluator: &dyn Evaluator,
    archive: &mut EvaluationArchive,
    ledger: &mut BudgetLedger,
) -> Result<f64, EvaluationError> {
    let repaired = repair(genotype);
    let fitness = score_units(genotype, &plan.units(&repaired), evaluator, archive, ledger)?;
    let eval_index = archive.evaluations;
    archive.apply(ArchiveEvent::Fitness(FitnessRecord {
        genotype: *genotype,
        setup: plan.setup,
        fitness,
        eval_index,
    }));
    Ok(fitness)
}

/// Mean score over three 5-fold cross-validations drawn from the holdout
/// pool. Uses its own archive and never touches a search ledger.
pub fn independent_quality(
    genotype: &Genotype,
    evaluator: &dyn Evaluator,
    holdout: &SeedPool,
    search: &SeedPool,
    archive: &mut EvaluationArchive,
) -> Result<f64, NasError> {
    if holdout.overlaps(search) {
        return Err(ConfigError::PoolOverlap.into());
    }
    let plan = SplitPlan::three_cv_in_order(holdout)?;
    let repaired = repair(genotype);
    let mut ledger = BudgetLedger::unlimited();
    Ok(score_units(genotype, &plan.units(&repaired), evaluator, archive, &mut ledger)?)
}

/// A fitness function bound to one run's plan, archive and ledger.
pub struct FitnessFunction<'a> {
    plan: SplitPlan,
    evaluator: &'a dyn Evaluator,
    archive: &'a mut EvaluationArchive,
    ledger: &'a mut BudgetLedger,
    calls: usize,
    call_limit: usize,
}

impl<'a> FitnessFunction<'a> {
    pub fn new(
        plan: SplitPlan,
        evaluator: &'a dyn Evaluator,
        archive: &'a mut EvaluationArchive,
        ledger: &'a mut BudgetLedger,
    ) -> Self {
        FitnessFunction { plan, evaluator, archive, ledger, calls: 0, call_limit: usize::MAX }
    }

    /// Caps the number of calls, cached or not. Cached calls are free, so a
    /// search that keeps revisiting known genotypes would otherwise never stop.
    pub fn with_call_limit(mut self, limit: usize) -> Self {
        self.call_limit = limit;
        self
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    pub fn ledger(&self) -> &BudgetLedger {
        self.ledger
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Objective for FitnessFunction<'_> {
    fn evaluate(&mut self, genotype: &Genotype) -> Result<f64, EvaluationError> {
        if self.calls >= self.call_limit {
            return Err(EvaluationError::CallLimit(self.call_limit));
        }
        let f = evaluate_fitness(genotype, &self.plan, self.evaluator, self.archive, self.ledger)?;
        self.calls += 1;
        Ok(f)
    }
}
