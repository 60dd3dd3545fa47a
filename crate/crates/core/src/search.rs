//! Budget-driven search algorithms over raw genotypes.
//!
//! Every algorithm sees the fitness function only as an [`Objective`] and
//! stops cleanly when it reports budget or call-limit exhaustion.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EvaluationError;
use crate::search_space::{cardinality, random_genotype, repair, Genotype, BLOCK_CARDINALITY, N_GENES};

/// An opaque fitness function to be maximised.
pub trait Objective {
    fn evaluate(&mut self, genotype: &Genotype) -> Result<f64, EvaluationError>;
}

impl<O: Objective + ?Sized> Objective for &mut O {
    fn evaluate(&mut self, genotype: &Genotype) -> Result<f64, EvaluationError> {
        (**self).evaluate(genotype)
    }
}

/// Wraps a plain function with a cap on the number of calls.
pub struct FnObjective<F> {
    f: F,
    calls: usize,
    limit: usize,
}

impl<F: FnMut(&Genotype) -> f64> FnObjective<F> {
    pub fn new(f: F, limit: usize) -> Self {
        FnObjective { f, calls: 0, limit }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl<F: FnMut(&Genotype) -> f64> Objective for FnObjective<F> {
    fn evaluate(&mut self, genotype: &Genotype) -> Result<f64, EvaluationError> {
        if self.calls >= self.limit {
            return Err(EvaluationError::CallLimit(self.limit));
        }
        self.calls += 1;
        Ok((self.f)(genotype))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub seed: u64,
    /// Every successful objective call in order.
    pub history: Vec<(Genotype, f64)>,
    pub best: Option<(Genotype, f64)>,
}

impl SearchState {
    pub fn new(seed: u64) -> Self {
        SearchState { seed, ..Default::default() }
    }

    fn record(&mut self, genotype: Genotype, fitness: f64) {
        self.history.push((genotype, fitness));
        if self.best.is_none_or(|(_, b)| fitness > b) {
            self.best = Some((genotype, fitness));
        }
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.best.map(|(_, f)| f)
    }

    /// Up to `k` best entries, one per repaired architecture, in descending
    /// fitness order. Equal fitness keeps the earlier entry first.
    pub fn top_distinct(&self, k: usize) -> Vec<(Genotype, f64)> {
        let mut order: Vec<usize> = (0..self.history.len()).collect();
        order.sort_by(|&a, &b| self.history[b].1.total_cmp(&self.history[a].1).then(a.cmp(&b)));
        let mut seen = HashSet::new();
        order
            .into_iter()
            .map(|i| self.history[i])
            .filter(|(g, _)| seen.insert(repair(g)))
            .take(k)
            .collect()
    }
}

/// Records every call into a [`SearchState`].
struct Tracker<'a> {
    objective: &'a mut dyn Objective,
    state: SearchState,
}

impl Objective for Tracker<'_> {
    fn evaluate(&mut self, genotype: &Genotype) -> Result<f64, EvaluationError> {
        let f = self.objective.evaluate(genotype)?;
        self.state.record(*genotype, f);
        Ok(f)
    }
}

/// Runs `body` until it returns; exhaustion counts as normal termination.
fn drive(
    objective: &mut dyn Objective,
    seed: u64,
    body: impl FnOnce(&mut Tracker, &mut ChaCha8Rng) -> Result<(), EvaluationError>,
) -> Result<SearchState, EvaluationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker { objective, state: SearchState::new(seed) };
    match body(&mut tracker, &mut rng) {
        Ok(()) => Ok(tracker.state),
        Err(e) if e.is_exhaustion() => Ok(tracker.state),
        Err(e) => Err(e),
    }
}

pub fn random_search(objective: &mut dyn Objective, seed: u64) -> Result<SearchState, EvaluationError> {
    drive(objective, seed, |t, rng| loop {
        t.evaluate(&random_genotype(rng))?;
    })
}

/// One greedy sweep over all genes in a fresh random order. Each gene takes
/// the best of its values; ties keep the current value. Returns whether the
/// solution improved. Progress is kept in `x` even when an error interrupts.
pub fn ls_sweep<R: Rng + ?Sized>(
    objective: &mut dyn Objective,
    x: &mut Genotype,
    fx: &mut f64,
    rng: &mut R,
) -> Result<bool, EvaluationError> {
    let mut order: Vec<usize> = (0..N_GENES).collect();
    order.shuffle(rng);
    let mut improved = false;
    for i in order {
        let current = x.gene(i);
        let (mut best_v, mut best_f) = (current, *fx);
        for v in (0..cardinality(i)).filter(|&v| v != current) {
            let mut y = *x;
            y.set_gene(i, v);
            let fy = objective.evaluate(&y)?;
            if fy > best_f {
                best_v = v;
                best_f = fy;
            }
        }
        if best_v != current {
            x.set_gene(i, best_v);
            *fx = best_f;
            improved = true;
        }
    }
    Ok(improved)
}

/// Greedy local search with restarts from fresh random genotypes.
pub fn local_search(objective: &mut dyn Objective, seed: u64) -> Result<SearchState, EvaluationError> {
    drive(objective, seed, |t, rng| loop {
        let mut x = random_genotype(rng);
        let mut fx = t.evaluate(&x)?;
        while ls_sweep(t, &mut x, &mut fx, rng)? {}
    })
}

/// A random start followed by exactly one sweep.
pub fn single_sweep_local_search(objective: &mut dyn Objective, seed: u64) -> Result<SearchState, EvaluationError> {
    drive(objective, seed, |t, rng| {
        let mut x = random_genotype(rng);
        let mut fx = t.evaluate(&x)?;
        ls_sweep(t, &mut x, &mut fx, rng).map(|_| ())
    })
}

/// Family of subsets of gene indices mixed jointly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkageModel {
    pub fos: Vec<Vec<usize>>,
}

impl LinkageModel {
    pub fn singletons() -> Self {
        LinkageModel { fos: (0..N_GENES).map(|i| vec![i]).collect() }
    }
}

const MAX_CARD: usize = BLOCK_CARDINALITY as usize;

/// Pairwise mutual information between genes over a population.
pub fn mutual_information(population: &[Genotype]) -> [[f64; N_GENES]; N_GENES] {
    let n = population.len() as f64;
    let genes: Vec<[u8; N_GENES]> = population.iter().map(|g| g.genes()).collect();
    let mut mi = [[0.0; N_GENES]; N_GENES];
    let entropy = |counts: &[usize]| -> f64 {
        counts.iter().filter(|&&c| c > 0).map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        }).sum()
    };
    let mut h = [0.0; N_GENES];
    for (i, hi) in h.iter_mut().enumerate() {
        let mut c = [0usize; MAX_CARD];
        genes.iter().for_each(|g| c[g[i] as usize] += 1);
        *hi = entropy(&c);
    }
    for i in 0..N_GENES {
        for j in i + 1..N_GENES {
            let mut c = [0usize; MAX_CARD * MAX_CARD];
            genes.iter().for_each(|g| c[g[i] as usize * MAX_CARD + g[j] as usize] += 1);
            let v = (h[i] + h[j] - entropy(&c)).max(0.0);
            mi[i][j] = v;
            mi[j][i] = v;
        }
    }
    mi
}

/// Linkage tree by average-linkage agglomeration on mutual information.
/// The FOS holds every cluster of the merge tree except the root; a
/// population without variation yields singletons only.
pub fn learn_linkage_tree(population: &[Genotype]) -> LinkageModel {
    if population.len() < 2 || population.iter().all(|g| g == &population[0]) {
        return LinkageModel::singletons();
    }
    let mi = mutual_information(population);
    let mut clusters: Vec<Vec<usize>> = (0..N_GENES).map(|i| vec![i]).collect();
    let mut fos = clusters.clone();
    let similarity = |a: &[usize], b: &[usize]| -> f64 {
        let total: f64 = a.iter().flat_map(|&x| b.iter().map(move |&y| mi[x][y])).sum();
        total / (a.len() * b.len()) as f64
    };
    while clusters.len() > 2 {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let s = similarity(&clusters[a], &clusters[b]);
                if s > best.2 {
                    best = (a, b, s);
                }
            }
        }
        let (a, b, _) = best;
        let right = clusters.remove(b);
        let mut merged = clusters.remove(a);
        merged.extend(right);
        merged.sort_unstable();
        fos.push(merged.clone());
        clusters.push(merged);
    }
    LinkageModel { fos }
}

/// Gene-pool optimal mixing. For each subset in random order, copies a random
/// donor's genes; a changed genotype is passed to `evaluate`, and the change
/// is kept iff the returned fitness is at least the current one. `evaluate`
/// may decline a candidate by returning `None`, which reverts it.
pub fn gom_step_with<R: Rng + ?Sized>(
    solution: &mut Genotype,
    fitness: &mut f64,
    fos: &[Vec<usize>],
    population: &[Genotype],
    evaluate: &mut dyn FnMut(&Genotype) -> Result<Option<f64>, EvaluationError>,
    rng: &mut R,
) -> Result<(), EvaluationError> {
    if population.is_empty() {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..fos.len()).collect();
    order.shuffle(rng);
    for s in order {
        let donor = population.choose(rng).expect("population is nonempty");
        let mut candidate = *solution;
        for &i in &fos[s] {
            candidate.set_gene(i, donor.gene(i));
        }
        if candidate == *solution {
            continue;
        }
        if let Some(f) = evaluate(&candidate)? {
            if f >= *fitness {
                *solution = candidate;
                *fitness = f;
            }
        }
    }
    Ok(())
}

pub fn gom_step<R: Rng + ?Sized>(
    solution: &mut Genotype,
    fitness: &mut f64,
    fos: &[Vec<usize>],
    population: &[Genotype],
    objective: &mut dyn Objective,
    rng: &mut R,
) -> Result<(), EvaluationError> {
    gom_step_with(solution, fitness, fos, population, &mut |g| objective.evaluate(g).map(Some), rng)
}

#[derive(Debug, Clone, Default)]
struct Level {
    members: Vec<(Genotype, f64)>,
    index: HashSet<Genotype>,
    model: Option<LinkageModel>,
}

impl Level {
    fn add(&mut self, g: Genotype, f: f64) -> bool {
        if !self.index.insert(g) {
            return false;
        }
        self.members.push((g, f));
        self.model = None;
        true
    }

    fn max(&self) -> f64 {
        self.members.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Population pyramid of P3-GOMEA.
///
/// After mixing at level `i` the solution moves up when it strictly improved
/// there or when it beats the best of level `i + 1`. A new top level opens
/// only for a strict improvement that also matches the best of the current
/// top. Together these keep per-level maxima non-decreasing upwards.
#[derive(Debug, Clone, Default)]
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> &[(Genotype, f64)] {
        &self.levels[i].members
    }

    pub fn level_max(&self, i: usize) -> f64 {
        self.levels[i].max()
    }

    fn model(&mut self, i: usize) -> LinkageModel {
        let level = &mut self.levels[i];
        if level.model.is_none() {
            let pop: Vec<Genotype> = level.members.iter().map(|m| m.0).collect();
            level.model = Some(learn_linkage_tree(&pop));
        }
        level.model.clone().expect("model was just learned")
    }

    /// Inserts a hill-climbed solution at level 0 and climbs it through the
    /// pyramid. Solutions already present at level 0 are dropped.
    fn climb<R: Rng + ?Sized>(
        &mut self,
        mut x: Genotype,
        mut fx: f64,
        evaluate: &mut dyn FnMut(&Genotype) -> Result<Option<f64>, EvaluationError>,
        rng: &mut R,
    ) -> Result<(), EvaluationError> {
        if self.levels.is_empty() {
            self.levels.push(Level::default());
        }
        if !self.levels[0].add(x, fx) {
            return Ok(());
        }
        let mut i = 0;
        while i < self.levels.len() {
            let before = fx;
            let fos = self.model(i).fos;
            let donors: Vec<Genotype> = self.levels[i].members.iter().map(|m| m.0).collect();
            gom_step_with(&mut x, &mut fx, &fos, &donors, evaluate, rng)?;
            let improved = fx > before;
            if i + 1 < self.levels.len() {
                if improved || fx > self.levels[i + 1].max() {
                    self.levels[i + 1].add(x, fx);
                }
            } else if improved && fx >= self.levels[i].max() {
                let mut top = Level::default();
                top.add(x, fx);
                self.levels.push(top);
            }
            i += 1;
        }
        Ok(())
    }
}

fn new_hill_climbed<R: Rng + ?Sized>(t: &mut Tracker, rng: &mut R) -> Result<(Genotype, f64), EvaluationError> {
    let mut x = random_genotype(rng);
    let mut fx = t.evaluate(&x)?;
    ls_sweep(t, &mut x, &mut fx, rng)?;
    Ok((x, fx))
}

/// One P3-GOMEA iteration: a new random solution, one hill-climbing sweep,
/// then mixing through every pyramid level.
pub fn p3_iteration<R: Rng + ?Sized>(
    pyramid: &mut Pyramid,
    objective: &mut dyn Objective,
    rng: &mut R,
) -> Result<(), EvaluationError> {
    let mut x = random_genotype(rng);
    let mut fx = objective.evaluate(&x)?;
    ls_sweep(objective, &mut x, &mut fx, rng)?;
    pyramid.climb(x, fx, &mut |g| objective.evaluate(g).map(Some), rng)
}

pub fn p3_gomea(objective: &mut dyn Objective, seed: u64) -> Result<SearchState, EvaluationError> {
    drive(objective, seed, |t, rng| {
        let mut pyramid = Pyramid::new();
        loop {
            p3_iteration(&mut pyramid, t, rng)?;
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeParams {
    pub gamma: f64,
    pub n_candidates: usize,
    /// Random evaluations before the first model-based proposal.
    pub n_startup: usize,
}

impl Default for TpeParams {
    fn default() -> Self {
        TpeParams { gamma: 0.25, n_candidates: 24, n_startup: 20 }
    }
}

type Density = [[f64; MAX_CARD]; N_GENES];
type Counts = [[u32; MAX_CARD]; N_GENES];

/// Per-gene categorical densities with add-one smoothing.
fn smoothed(counts: &Counts) -> Density {
    let mut d = [[0.0; MAX_CARD]; N_GENES];
    for i in 0..N_GENES {
        let card = cardinality(i) as usize;
        let total: f64 = counts[i][..card].iter().map(|&c| c as f64 + 1.0).sum();
        for v in 0..card {
            d[i][v] = (counts[i][v] as f64 + 1.0) / total;
        }
    }
    d
}

fn add_counts(counts: &mut Counts, g: &Genotype, sign: i32) {
    for (i, &v) in g.genes().iter().enumerate() {
        counts[i][v as usize] = counts[i][v as usize].wrapping_add_signed(sign);
    }
}

/// Good/bad split of the distinct observed genotypes, kept up to date
/// incrementally. The good set holds the best ⌈γ·n⌉ distinct points; equal
/// fitness ranks the earlier observation first.
#[derive(Debug, Clone)]
pub struct TpeModel {
    gamma: f64,
    seen: HashSet<Genotype>,
    /// Distinct points as (fitness, arrival order, genotype), best first.
    ranked: Vec<(f64, usize, Genotype)>,
    n_good: usize,
    good: Counts,
    all: Counts,
}

impl TpeModel {
    pub fn new(gamma: f64) -> Self {
        TpeModel {
            gamma,
            seen: HashSet::new(),
            ranked: Vec::new(),
            n_good: 0,
            good: [[0; MAX_CARD]; N_GENES],
            all: [[0; MAX_CARD]; N_GENES],
        }
    }

    pub fn from_history(history: &[(Genotype, f64)], gamma: f64) -> Self {
        let mut m = Self::new(gamma);
        history.iter().for_each(|(g, f)| m.observe(*g, *f));
        m
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn contains(&self, g: &Genotype) -> bool {
        self.seen.contains(g)
    }

    /// Adds an observation; repeats of a known genotype are ignored.
    pub fn observe(&mut self, g: Genotype, f: f64) {
        if !self.seen.insert(g) {
            return;
        }
        let order = self.ranked.len();
        let pos = self.ranked.partition_point(|(rf, _, _)| rf.total_cmp(&f).is_ge());
        self.ranked.insert(pos, (f, order, g));
        add_counts(&mut self.all, &g, 1);
        if pos < self.n_good {
            add_counts(&mut self.good, &g, 1);
            let dropped = self.ranked[self.n_good].2;
            add_counts(&mut self.good, &dropped, -1);
        }
        let target = ((self.gamma * self.ranked.len() as f64).ceil() as usize).clamp(1, self.ranked.len());
        while self.n_good < target {
            let joined = self.ranked[self.n_good].2;
            add_counts(&mut self.good, &joined, 1);
            self.n_good += 1;
        }
    }

    /// Smoothed densities (l, g) of the good and bad sets.
    pub fn densities(&self) -> (Density, Density) {
        let mut bad = self.all;
        for (row, good) in bad.iter_mut().zip(&self.good) {
            for (b, g) in row.iter_mut().zip(good) {
                *b -= g;
            }
        }
        (smoothed(&self.good), smoothed(&bad))
    }

    /// Draws candidates from l, each paired with its log ratio Σ ln(l/g).
    pub fn candidates<R: Rng + ?Sized>(&self, n_candidates: usize, rng: &mut R) -> Vec<(Genotype, f64)> {
        assert!(!self.is_empty(), "TPE needs at least one observation");
        let (l, g) = self.densities();
        (0..n_candidates.max(1))
            .map(|_| {
                let mut genes = [0u8; N_GENES];
                for (i, gene) in genes.iter_mut().enumerate() {
                    let card = cardinality(i) as usize;
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    *gene = (card - 1) as u8;
                    for (v, p) in l[i][..card].iter().enumerate() {
                        acc += p;
                        if u < acc {
                            *gene = v as u8;
                            break;
                        }
                    }
                }
                let score: f64 = genes.iter().enumerate().map(|(i, &v)| (l[i][v as usize] / g[i][v as usize]).ln()).sum();
                (Genotype::from_genes(&genes).expect("sampled genes are in range"), score)
            })
            .collect()
    }
}

pub fn tpe_densities(history: &[(Genotype, f64)], gamma: f64) -> (Density, Density) {
    TpeModel::from_history(history, gamma).densities()
}

fn argmax_candidate<'a>(candidates: impl Iterator<Item = &'a (Genotype, f64)>) -> Option<Genotype> {
    candidates
        .fold(None::<&(Genotype, f64)>, |best, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
        .map(|c| c.0)
}

/// The candidate with the highest l/g ratio.
pub fn tpe_propose<R: Rng + ?Sized>(history: &[(Genotype, f64)], gamma: f64, n_candidates: usize, rng: &mut R) -> Genotype {
    let model = TpeModel::from_history(history, gamma);
    argmax_candidate(model.candidates(n_candidates, rng).iter()).expect("at least one candidate")
}

/// TPE loop. Candidates not yet observed are preferred; a known genotype is
/// proposed only when every candidate is known.
pub fn tpe(objective: &mut dyn Objective, seed: u64, params: TpeParams) -> Result<SearchState, EvaluationError> {
    drive(objective, seed, |t, rng| {
        let mut model = TpeModel::new(params.gamma);
        for _ in 0..params.n_startup.max(1) {
            let g = random_genotype(rng);
            let f = t.evaluate(&g)?;
            model.observe(g, f);
        }
        loop {
            let candidates = model.candidates(params.n_candidates, rng);
            let g = argmax_candidate(candidates.iter().filter(|c| !model.contains(&c.0)))
                .or_else(|| argmax_candidate(candidates.iter()))
                .expect("at least one candidate");
            let f = t.evaluate(&g)?;
            model.observe(g, f);
        }
    })
}

/// Distance-weighted k-nearest-neighbour regressor on Hamming distance.
#[derive(Debug, Clone, Default)]
pub struct KnnSurrogate {
    k: usize,
    data: Vec<(Genotype, f64)>,
}

impl KnnSurrogate {
    pub fn new(k: usize) -> Self {
        KnnSurrogate { k: k.max(1), data: Vec::new() }
    }

    pub fn insert(&mut self, g: Genotype, f: f64) {
        self.data.push((g, f));
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Weighted mean of the `min(k, n)` nearest stored points with weights
    /// `1/d`; exact matches among them are averaged on their own.
    pub fn predict(&self, g: &Genotype) -> Option<f64> {
        if self.data.is_empty() {
            return None;
        }
        let mut dists: Vec<(usize, usize)> = self.data.iter().enumerate().map(|(i, (x, _))| (x.hamming(g), i)).collect();
        dists.sort_unstable();
        let nearest = &dists[..self.k.min(dists.len())];
        let exact: Vec<f64> = nearest.iter().filter(|(d, _)| *d == 0).map(|&(_, i)| self.data[i].1).collect();
        if !exact.is_empty() {
            return Some(exact.iter().sum::<f64>() / exact.len() as f64);
        }
        let (num, den) = nearest.iter().fold((0.0, 0.0), |(n, d), &(dist, i)| {
            let w = 1.0 / dist as f64;
            (n + w * self.data[i].1, d + w)
        });
        Some(num / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SagomeaParams {
    pub k: usize,
    /// Real evaluations made before the surrogate is consulted.
    pub bootstrap: usize,
    /// Lower bound on the acceptance margin δ.
    pub min_delta: f64,
}

impl Default for SagomeaParams {
    fn default() -> Self {
        SagomeaParams { k: 10, bootstrap: 10, min_delta: 1e-6 }
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// P3-GOMEA whose mixing candidates are screened by a k-NN surrogate.
/// A candidate is evaluated only when its estimate is within δ of the
/// elitist. δ doubles after an iteration in which mixing made no real
/// evaluation and halves whenever the elitist improves.
pub fn sagomea(objective: &mut dyn Objective, seed: u64, params: SagomeaParams) -> Result<SearchState, EvaluationError> {
    drive(objective, seed, |t, rng| {
        let mut pyramid = Pyramid::new();
        let mut surrogate = KnnSurrogate::new(params.k);
        let mut delta: Option<f64> = None;
        loop {
            let start = t.state.history.len();
            let result = new_hill_climbed(t, rng);
            for &(g, f) in &t.state.history[start..] {
                surrogate.insert(g, f);
            }
            let (x, fx) = result?;
            if delta.is_none() && surrogate.len() >= params.bootstrap {
                let first: Vec<f64> = t.state.history[..params.bootstrap].iter().map(|h| h.1).collect();
                delta = Some(std_dev(&first).max(params.min_delta));
            }
            let mut mixing_evals = 0usize;
            let outcome = {
                let mut screened = |g: &Genotype| -> Result<Option<f64>, EvaluationError> {
                    let elitist = t.state.best_fitness().unwrap_or(f64::NEG_INFINITY);
                    if let (Some(d), Some(est)) = (delta, surrogate.predict(g)) {
                        if surrogate.len() >= params.bootstrap && est < elitist - d {
                            return Ok(None);
                        }
                    }
                    let f = t.evaluate(g)?;
                    surrogate.insert(*g, f);
                    mixing_evals += 1;
                    if f > elitist {
                        if let Some(d) = delta.as_mut() {
                            *d = (*d * 0.5).max(params.min_delta);
                        }
                    }
                    Ok(Some(f))
                };
                pyramid.climb(x, fx, &mut screened, rng)
            };
            outcome?;
            if mixing_evals == 0 {
                if let Some(d) = delta.as_mut() {
                    *d *= 2.0;
                }
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Random,
    Ls,
    Gomea,
    Tpe,
    Sagomea,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Random, Algorithm::Ls, Algorithm::Gomea, Algorithm::Tpe, Algorithm::Sagomea];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Random => "random",
            Algorithm::Ls => "ls",
            Algorithm::Gomea => "gomea",
            Algorithm::Tpe => "tpe",
            Algorithm::Sagomea => "sagomea",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmParams {
    pub tpe: TpeParams,
    pub sagomea: SagomeaParams,
}

pub fn run_algorithm(
    algorithm: Algorithm,
    params: &AlgorithmParams,
    objective: &mut dyn Objective,
    seed: u64,
) -> Result<SearchState, EvaluationError> {
    match algorithm {
        Algorithm::Random => random_search(objective, seed),
        Algorithm::Ls => local_search(objective, seed),
        Algorithm::Gomea => p3_gomea(objective, seed),
        Algorithm::Tpe => tpe(objective, seed, params.tpe),
        Algorithm::Sagomea => sagomea(objective, seed, params.sagomea),
    }
}
