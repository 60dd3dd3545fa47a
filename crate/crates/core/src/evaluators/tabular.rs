//! Precomputed scores loaded from an archive-format JSON-lines file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{EvaluatorError, NasError};
use crate::evaluation::{ArchiveEvent, Evaluator, TrainingUnit};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularBenchmark {
    scores: HashMap<TrainingUnit, f64>,
}

impl TabularBenchmark {
    /// Builds a table from training records. Fitness records are ignored;
    /// a unit listed twice with different scores is rejected.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a ArchiveEvent>) -> Result<Self, String> {
        let mut scores = HashMap::new();
        for event in events {
            if let ArchiveEvent::Training(t) = event {
                if !(0.0..=1.0).contains(&t.score) {
                    return Err(format!("score {} outside [0, 1] for {}", t.score, t.unit()));
                }
                if let Some(prev) = scores.insert(t.unit(), t.score) {
                    if prev != t.score {
                        return Err(format!("conflicting scores {prev} and {} for {}", t.score, t.unit()));
                    }
                }
            }
        }
        Ok(TabularBenchmark { scores })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NasError> {
        let path = path.as_ref();
        let format_err = |line: usize, message: String| NasError::Format { path: path.display().to_string(), line, message };
        let file = File::open(path).map_err(|e| NasError::io(path, e))?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| NasError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str::<ArchiveEvent>(&line).map_err(|e| format_err(i + 1, e.to_string()))?);
        }
        Self::from_events(&events).map_err(|m| format_err(0, m))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn lookup(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        self.scores.get(unit).copied().ok_or(EvaluatorError::MissingEntry(*unit))
    }
}

impl Evaluator for TabularBenchmark {
    fn score(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        self.lookup(unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{evaluate_fitness, make_split_plan, BudgetLedger, EvaluationArchive, EvaluationSetup, SeedPool, TrainingRecord, UnitSlot};
    use crate::evaluators::{SyntheticBenchmark, SyntheticBenchmarkParams};
    use crate::search_space::{random_genotype, Genotype};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(g: Genotype, seed: u32, score: f64) -> ArchiveEvent {
        ArchiveEvent::Training(TrainingRecord {
            genotype: g,
            repaired: g,
            partitioning: 0,
            fold: 1,
            seed,
            score,
            training_index: 0,
        })
    }

    #[test]
    fn stored_value_is_returned() {
        let g = Genotype::zeros();
        let table = TabularBenchmark::from_events(&[record(g, 4, 0.5)]).unwrap();
        let unit = TrainingUnit { genotype: g, slot: UnitSlot { partitioning: 0, fold: 1, seed: 4 } };
        assert_eq!(table.lookup(&unit), Ok(0.5));
        let missing = TrainingUnit { slot: UnitSlot { seed: 5, ..unit.slot }, ..unit };
        assert_eq!(table.lookup(&missing), Err(EvaluatorError::MissingEntry(missing)));
    }

    #[test]
    fn conflicting_duplicates_rejected() {
        let g = Genotype::zeros();
        assert!(TabularBenchmark::from_events(&[record(g, 4, 0.5), record(g, 4, 0.6)]).is_err());
        assert!(TabularBenchmark::from_events(&[record(g, 4, 0.5), record(g, 4, 0.5)]).is_ok());
    }

    #[test]
    fn archive_file_round_trip() {
        let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default()).unwrap();
        let plan = make_split_plan(EvaluationSetup::Cv, &SeedPool::default_search(), 8).unwrap();
        let mut archive = EvaluationArchive::new();
        let mut ledger = BudgetLedger::new(200);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            evaluate_fitness(&random_genotype(&mut rng), &plan, &bench, &mut archive, &mut ledger).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        archive.write_jsonl(&path).unwrap();
        let table = TabularBenchmark::load(&path).unwrap();
        assert_eq!(table.len(), archive.trainings());
        for rec in archive.training_records() {
            assert_eq!(table.lookup(&rec.unit()).unwrap(), rec.score);
        }
    }
}
