//! Acceptance suite A1 to A8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nas_core::evaluation::{
    evaluations_allowed, make_split_plan, BudgetLedger, EvaluationArchive, EvaluationSetup, FitnessFunction, SeedPool, BUDGETS,
};
use nas_core::evaluators::{SyntheticBenchmark, SyntheticBenchmarkParams};
use nas_core::experiments::{noise_pairs, noise_statistics};
use nas_core::metrics_stats::{dice, spearman, wilcoxon_one_sided, LabelVolume};
use nas_core::search::{p3_gomea, random_search, run_algorithm, single_sweep_local_search, Algorithm, AlgorithmParams, FnObjective};
use nas_core::search_space::{cardinality, repair, repair_topology, Genotype, N_CELLS, N_GENES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn levels_stay_in_range(topology: &[u8]) -> bool {
    let mut level = 0i32;
    for &g in topology {
        level += match g {
            1 => 1,
            2 => -1,
            _ => 0,
        };
        if !(0..=4).contains(&level) {
            return false;
        }
    }
    true
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut bad = 0usize;
    let total = 3usize.pow(N_CELLS as u32);
    for code in 0..total {
        let mut t = [0u8; N_CELLS];
        let mut c = code;
        for gene in t.iter_mut() {
            *gene = (c % 3) as u8;
            c /= 3;
        }
        let mut once = t;
        repair_topology(&mut once);
        let mut twice = once;
        repair_topology(&mut twice);
        if !levels_stay_in_range(&once) || twice != once {
            bad += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(bad == 0 && elapsed < Duration::from_secs(10), format!("{total} topologies, {bad} bad, {elapsed:.2?}"))
}

fn a2() -> Outcome {
    let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default()).unwrap();
    let mut failures = Vec::new();
    let mut three_cv_375 = None;
    for setup in EvaluationSetup::ALL {
        for budget in BUDGETS {
            let plan = make_split_plan(setup, &SeedPool::default_search(), budget as u64).unwrap();
            let mut archive = EvaluationArchive::new();
            let mut ledger = BudgetLedger::new(budget);
            let mut f = FitnessFunction::new(plan, &bench, &mut archive, &mut ledger);
            random_search(&mut f, 11).unwrap();
            let distinct: std::collections::HashSet<Genotype> = archive.fitness_records().map(|r| repair(&r.genotype)).collect();
            let expected = budget / setup.trainings_per_evaluation();
            let cache_hits = archive.evaluations() - distinct.len();
            let recorded = archive.training_records().count();
            if ledger.consumed() > budget || recorded != ledger.consumed() || (cache_hits == 0 && archive.evaluations() != expected) {
                failures.push(format!("{setup}/{budget}: {} evaluations, {} trainings", archive.evaluations(), ledger.consumed()));
            }
            if setup == EvaluationSetup::ThreeCv && budget == 375 {
                three_cv_375 = Some(archive.evaluations());
            }
        }
    }
    let pass = failures.is_empty() && three_cv_375 == Some(25) && evaluations_allowed(375, EvaluationSetup::ThreeCv) == 25;
    outcome(pass, format!("3CV/375 evaluations {three_cv_375:?}; failures {failures:?}"))
}

fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn brute_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let rank = |v: f64| {
        let less = abs.iter().filter(|w| **w < v).count() as f64;
        let equal = abs.iter().filter(|w| **w == v).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = abs.iter().map(|&v| rank(v)).collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let mut count = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= observed {
            count += 1;
        }
    }
    count as f64 / (1u64 << n) as f64
}

fn a3() -> Outcome {
    let mut problems = Vec::new();
    // class 1: |R|=3, |P|=2, overlap 2 -> 0.8; class 2: |R|=1, |P|=2, overlap 1 -> 2/3
    let r = LabelVolume::new(vec![2, 3], vec![1, 1, 1, 2, 0, 0]).unwrap();
    let p = LabelVolume::new(vec![2, 3], vec![1, 1, 0, 2, 2, 0]).unwrap();
    let expected = (0.8 + 2.0 / 3.0) / 2.0;
    if dice(&r, &p, 3).unwrap() != expected {
        problems.push("dice 2x3 case".to_string());
    }
    let only_bg = LabelVolume::new(vec![4], vec![0, 0, 0, 0]).unwrap();
    let one_fg = LabelVolume::new(vec![4], vec![0, 1, 1, 0]).unwrap();
    if dice(&only_bg, &only_bg, 2).unwrap() != 1.0 || dice(&only_bg, &one_fg, 2).unwrap() != 0.0 {
        problems.push("dice empty-class cases".to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut instances = 0;
    for _ in 0..3000 {
        let n = rng.gen_range(2..=12);
        let levels = rng.gen_range(2..8);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.1).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.1).collect();
        instances += 1;
        if x.windows(2).any(|w| w[0] != w[1]) && y.windows(2).any(|w| w[0] != w[1]) {
            let got = spearman(&x, &y).unwrap();
            if (got - brute_spearman(&x, &y)).abs() >= 1e-12 {
                problems.push(format!("spearman {x:?} {y:?}"));
            }
        }
        if wilcoxon_one_sided(&x, &y).unwrap() != brute_wilcoxon(&x, &y) {
            problems.push(format!("wilcoxon {x:?} {y:?}"));
        }
    }
    outcome(problems.is_empty(), format!("{instances} random instances, problems {:?}", &problems[..problems.len().min(3)]))
}

fn a4() -> Outcome {
    let start = Instant::now();
    let pool = SeedPool::default_search();
    let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default()).unwrap();
    let pairs = noise_pairs(&bench, &pool, 5000, 0).unwrap();
    let seed_panel = &noise_statistics(&pairs, 0.2).unwrap()[0];
    let rho = seed_panel.rho.unwrap();
    let top = seed_panel.top_rho.unwrap();
    let mut differ = 0;
    for bseed in 0..20 {
        let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::with_seed(bseed)).unwrap();
        let pairs = noise_pairs(&bench, &pool, 5000, bseed).unwrap();
        if !noise_statistics(&pairs, 0.2).unwrap()[0].argmax_agrees {
            differ += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        rho > 0.6 && top < 0.3 && differ >= 10 && elapsed < Duration::from_secs(30),
        format!("rho {rho:.3}, top-20% rho {top:.3}, argmax differs {differ}/20, {elapsed:.2?}"),
    )
}

fn best_quality(bench: &SyntheticBenchmark, alg: Algorithm, setup: EvaluationSetup, budget: usize, run: u64) -> f64 {
    let plan = make_split_plan(setup, &SeedPool::default_search(), run).unwrap();
    let mut archive = EvaluationArchive::new();
    let mut ledger = BudgetLedger::new(budget);
    let limit = 10 * evaluations_allowed(budget, setup) + 100;
    let mut f = FitnessFunction::new(plan, bench, &mut archive, &mut ledger).with_call_limit(limit);
    let state = run_algorithm(alg, &AlgorithmParams::default(), &mut f, run).unwrap();
    bench.base_fitness(&repair(&state.best.unwrap().0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn qualities(bench: &SyntheticBenchmark, alg: Algorithm, setup: EvaluationSetup, budget: usize) -> Vec<f64> {
    (0..10).map(|run| best_quality(bench, alg, setup, budget, run)).collect()
}

fn a5() -> Outcome {
    let start = Instant::now();
    let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default()).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for alg in [Algorithm::Ls, Algorithm::Tpe] {
        let one = qualities(&bench, alg, EvaluationSetup::OneFold, 3000);
        let cv = qualities(&bench, alg, EvaluationSetup::Cv, 3000);
        let p = wilcoxon_one_sided(&cv, &one).unwrap();
        pass &= mean(&cv) > mean(&one) && p < 0.05;
        detail.push(format!("{alg}: 1Fold {:.4} CV {:.4} p {p:.4}", mean(&one), mean(&cv)));
    }
    let elapsed = start.elapsed();
    detail.push(format!("{elapsed:.2?}"));
    outcome(pass && elapsed < Duration::from_secs(600), detail.join("; "))
}

fn a6() -> Outcome {
    let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default()).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for alg in [Algorithm::Ls, Algorithm::Tpe] {
        let cv = mean(&qualities(&bench, alg, EvaluationSetup::Cv, 375));
        let three = mean(&qualities(&bench, alg, EvaluationSetup::ThreeCv, 375));
        pass &= three <= cv;
        detail.push(format!("{alg}: CV {cv:.4} 3CV {three:.4}"));
    }
    outcome(pass, detail.join("; "))
}

/// Concatenated order-3 deceptive trap; the optimum has every gene at its
/// largest value.
fn trap(g: &Genotype) -> f64 {
    let v = g.genes();
    (0..N_GENES / 3)
        .map(|b| {
            let u = (3 * b..3 * b + 3).filter(|&i| v[i] == cardinality(i) - 1).count();
            if u == 3 {
                3.0
            } else {
                (2 - u) as f64
            }
        })
        .sum()
}

fn a7() -> Outcome {
    let optimum = N_GENES as f64;
    let (mut p3_hits, mut ls_hits) = (0, 0);
    for seed in 0..20 {
        let mut obj = FnObjective::new(trap, 50_000);
        if p3_gomea(&mut obj, seed).unwrap().best_fitness() == Some(optimum) {
            p3_hits += 1;
        }
        let mut obj = FnObjective::new(trap, 50_000);
        if single_sweep_local_search(&mut obj, seed).unwrap().best_fitness() == Some(optimum) {
            ls_hits += 1;
        }
    }
    let mut separable_misses = Vec::new();
    for bseed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(bseed);
        let table: Vec<Vec<f64>> = (0..N_GENES).map(|i| (0..cardinality(i)).map(|_| rng.gen::<f64>()).collect()).collect();
        let f = |g: &Genotype| -> f64 { g.genes().iter().enumerate().map(|(i, &v)| table[i][v as usize]).sum() };
        let argmax: Vec<u8> = table
            .iter()
            .map(|t| (0..t.len()).max_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap() as u8)
            .collect();
        let best = Genotype::from_genes(&argmax).unwrap();
        for alg in [Algorithm::Ls, Algorithm::Gomea, Algorithm::Tpe, Algorithm::Sagomea] {
            for seed in 0..5 {
                let mut obj = FnObjective::new(f, 50_000);
                let state = run_algorithm(alg, &AlgorithmParams::default(), &mut obj, seed).unwrap();
                if !state.history.iter().any(|(g, _)| *g == best) {
                    separable_misses.push(format!("{alg}/b{bseed}/s{seed}"));
                }
            }
        }
    }
    outcome(
        p3_hits >= 18 && ls_hits == 0 && separable_misses.is_empty(),
        format!("trap: P3 {p3_hits}/20, single-sweep LS {ls_hits}/20; separable misses {separable_misses:?}"),
    )
}

fn nas(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_nas")).args(args).current_dir(cwd).stdout(Stdio::null()).status().map(|s| s.success()).unwrap_or(false)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
        }
    }
}

fn a8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"
name = "determinism"
algorithms = ["random", "ls", "gomea", "tpe", "sagomea"]
setups = ["1fold", "cv", "3cv"]
budget = 375
n_runs = 2
[noise]
n_samples = 300
[evaluator]
kind = "synthetic"
benchmark_seed = 5
"#;
    fs::write(tmp.path().join("config.toml"), config).unwrap();
    let mut trees = Vec::new();
    for out in ["a", "b"] {
        let ok = nas(&["run", "--config", "config.toml", "--output", out], tmp.path())
            && nas(&["reeval", "--results", out], tmp.path())
            && nas(&["report", "--results", out], tmp.path())
            && nas(&["compare", "--results", out, "--m", "6"], tmp.path())
            && nas(&["noise", "--config", "config.toml", "--output", out], tmp.path());
        if !ok {
            return outcome(false, format!("nas pipeline failed for output {out}"));
        }
        let mut files = Vec::new();
        collect_files(&tmp.path().join(out), &tmp.path().join(out), &mut files);
        trees.push(files);
    }
    let n = trees[0].len();
    outcome(n > 30 && trees[0] == trees[1], format!("{n} files compared"))
}

fn main() {
    type Criterion = (&'static str, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("A1", "repair totality", a1),
        ("A2", "budget exactness", a2),
        ("A3", "metric oracles", a3),
        ("A4", "noise phenomenology", a4),
        ("A5", "CV beats 1Fold at budget 3000", a5),
        ("A6", "3CV does not beat CV at budget 375", a6),
        ("A7", "search sanity", a7),
        ("A8", "determinism", a8),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let o = check();
        eprintln!("{id} took {:.1?}", start.elapsed());
        if !o.pass {
            failed += 1;
        }
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
