use std::collections::HashSet;

use nas_core::evaluation::{
    evaluate_fitness, make_split_plan, BudgetLedger, EvaluationArchive, EvaluationSetup, Evaluator, SeedPool, TrainingUnit, UnitSlot,
};
use nas_core::evaluators::{SyntheticBenchmark, SyntheticBenchmarkParams};
use nas_core::metrics_stats::{bonferroni, dice, spearman, wilcoxon_one_sided, LabelVolume};
use nas_core::search::{run_algorithm, Algorithm, AlgorithmParams, FnObjective};
use nas_core::search_space::{build_graph, decode_levels, derive_skips, repair, Genotype, N_CELLS};
use proptest::prelude::*;

fn genotype() -> impl Strategy<Value = Genotype> {
    (prop::collection::vec(0u8..3, N_CELLS), prop::collection::vec(0u8..5, N_CELLS)).prop_map(|(t, b)| {
        let genes: Vec<u8> = t.into_iter().chain(b).collect();
        Genotype::from_genes(&genes).unwrap()
    })
}

fn setup() -> impl Strategy<Value = EvaluationSetup> {
    prop::sample::select(EvaluationSetup::ALL.to_vec())
}

fn brute_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|v| abs.iter().filter(|w| *w < v).count() as f64 + (abs.iter().filter(|w| *w == v).count() as f64 + 1.0) / 2.0)
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let hits = (0u32..1 << n).filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum::<f64>() >= observed).count();
    hits as f64 / (1u64 << n) as f64
}

proptest! {
    #[test]
    fn repair_is_feasible_idempotent_and_minimal(g in genotype()) {
        let r = repair(&g);
        let trace = decode_levels(r.topology());
        prop_assert!(trace.is_feasible());
        prop_assert_eq!(repair(&r), r);
        prop_assert_eq!(r.blocks(), g.blocks());
        let flagged: HashSet<usize> = decode_levels(g.topology()).infeasible_positions.into_iter().collect();
        for i in 0..N_CELLS {
            if !flagged.contains(&i) {
                prop_assert_eq!(r.topology()[i], g.topology()[i]);
            }
        }
        let mut prev = 0i32;
        for &l in &trace.levels {
            prop_assert!(l <= 4);
            prop_assert!((l as i32 - prev).abs() <= 1);
            prev = l as i32;
        }
    }

    #[test]
    fn skips_connect_matching_levels(g in genotype()) {
        let trace = decode_levels(repair(&g).topology());
        for (src, dst) in derive_skips(&trace) {
            prop_assert!(src + 2 <= dst);
            prop_assert_eq!(trace.levels[src], trace.input_level(dst));
        }
        prop_assert!(build_graph(&g, 32, 128, 128).is_consistent());
    }

    #[test]
    fn dimensionality_tradeoff(g in genotype(), d in 1u32..64, w_exp in 4u32..9, h_exp in 4u32..9) {
        let (w, h) = (1u32 << w_exp, 1u32 << h_exp);
        for cell in build_graph(&g, d, w, h).cells {
            let s = cell.shape;
            let volume = s.channels as u64 * s.width as u64 * s.height as u64;
            prop_assert_eq!(volume << cell.out_level, d as u64 * w as u64 * h as u64);
        }
    }

    #[test]
    fn ledger_counts_distinct_units(seeds in prop::collection::vec(any::<u64>(), 1..20), s in setup(), budget in 1usize..120) {
        let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default()).unwrap();
        let plan = make_split_plan(s, &SeedPool::default_search(), 1).unwrap();
        let mut archive = EvaluationArchive::new();
        let mut ledger = BudgetLedger::new(budget);
        let mut units = HashSet::new();
        for seed in seeds {
            let g = nas_core::search_space::random_genotype(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed % 7));
            let before = (archive.events().len(), ledger.consumed());
            match evaluate_fitness(&g, &plan, &bench, &mut archive, &mut ledger) {
                Ok(_) => units.extend(plan.units(&repair(&g))),
                Err(_) => prop_assert_eq!((archive.events().len(), ledger.consumed()), before),
            }
        }
        prop_assert_eq!(ledger.consumed(), units.len());
        prop_assert_eq!(archive.training_records().count(), units.len());
        prop_assert!(ledger.consumed() <= budget);
    }

    #[test]
    fn nested_plans(seed in any::<u64>(), g in genotype()) {
        let pool = SeedPool::default_search();
        let r = repair(&g);
        let units = |s| make_split_plan(s, &pool, seed).unwrap().units(&r).into_iter().collect::<HashSet<TrainingUnit>>();
        let (one, cv, three) = (units(EvaluationSetup::OneFold), units(EvaluationSetup::Cv), units(EvaluationSetup::ThreeCv));
        prop_assert!(one.is_subset(&cv));
        prop_assert!(cv.is_subset(&three));
        prop_assert_eq!((one.len(), cv.len(), three.len()), (1, 5, 15));
    }

    #[test]
    fn synthetic_scores_are_pure_and_bounded(g in genotype(), bseed in 0u64..50, p in 0u32..10, fold in 0u8..5, seed in 0u32..100) {
        let mut params = SyntheticBenchmarkParams::with_seed(bseed);
        params.sigma_seed = 0.5;
        let bench = SyntheticBenchmark::new(params.clone()).unwrap();
        let unit = TrainingUnit { genotype: repair(&g), slot: UnitSlot { partitioning: p, fold, seed } };
        let s = bench.score(&unit).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(SyntheticBenchmark::new(params).unwrap().score(&unit).unwrap(), s);
    }

    #[test]
    fn runs_respect_budget_and_report_argmax(alg in prop::sample::select(Algorithm::ALL.to_vec()), seed in 0u64..1000, limit in 1usize..300) {
        let bench = SyntheticBenchmark::new(SyntheticBenchmarkParams::default().noiseless()).unwrap();
        let f = |g: &Genotype| bench.base_fitness(&repair(g));
        let mut obj = FnObjective::new(f, limit);
        let state = run_algorithm(alg, &AlgorithmParams::default(), &mut obj, seed).unwrap();
        prop_assert!(state.history.len() <= limit);
        let max = state.history.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(state.best_fitness(), Some(max));
        let mut again = FnObjective::new(f, limit);
        prop_assert_eq!(run_algorithm(alg, &AlgorithmParams::default(), &mut again, seed).unwrap().history, state.history);
    }

    #[test]
    fn dice_symmetric_and_bounded(pairs in prop::collection::vec((0u32..4, 0u32..4), 1..60)) {
        let (a, b): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
        let n = a.len();
        let ra = LabelVolume::new(vec![n], a).unwrap();
        let rb = LabelVolume::new(vec![n], b).unwrap();
        let ab = dice(&ra, &rb, 4).unwrap();
        prop_assert_eq!(ab, dice(&rb, &ra, 4).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&ra, &ra, 4).unwrap(), 1.0);
    }

    #[test]
    fn spearman_bounded_and_rank_invariant(xy in prop::collection::vec((-100i32..100, -100i32..100), 2..40)) {
        let x: Vec<f64> = xy.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1 as f64).collect();
        if let Ok(rho) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
            let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 + 7.0).collect();
            let ty: Vec<f64> = y.iter().map(|v| v * v * v).collect();
            prop_assert!((spearman(&tx, &ty).unwrap() - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn wilcoxon_matches_enumeration(ab in prop::collection::vec((0u8..6, 0u8..6), 1..=12)) {
        let a: Vec<f64> = ab.iter().map(|p| p.0 as f64 * 0.25).collect();
        let b: Vec<f64> = ab.iter().map(|p| p.1 as f64 * 0.25).collect();
        prop_assert_eq!(wilcoxon_one_sided(&a, &b).unwrap(), brute_wilcoxon(&a, &b));
    }

    #[test]
    fn bonferroni_monotone(p in 0.0f64..=1.0, q in 0.0f64..=1.0, m in 1usize..100, k in 1usize..100) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(bonferroni(lo, m) <= bonferroni(hi, m));
        prop_assert!(bonferroni(p, m) <= bonferroni(p, m + k));
        prop_assert!(bonferroni(p, m) <= 1.0);
    }
}
