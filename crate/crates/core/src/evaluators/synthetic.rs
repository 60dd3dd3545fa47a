//! Deterministic synthetic benchmark with structured seed/split noise.
//!
//! Everything here is derived from a counter-based hash so any unit can be
//! scored in any order, and an independent implementation can reproduce the
//! exact same numbers:
//!
//! * `hash(tag, benchmark_seed, payload)` is 64-bit FNV-1a over the bytes
//!   `[tag: u8][benchmark_seed: u64 LE][payload]`, followed by the murmur3
//!   `fmix64` finalizer.
//! * `unit(h) = (h >> 11) / 2^53`.
//! * `normal(h)`: lanes `hi = h >> 32`, `lo = h & 0xffff_ffff`;
//!   `u1 = (hi + 1) / 2^32`, `u2 = lo / 2^32`,
//!   `z = sqrt(-2 ln u1) * cos(2 pi u2)`.
//!
//! Landscape: subfunction `j` reads gene `j % 24` followed by `k - 1` distinct
//! other genes, picked by `hash(TAG_SUBSET, seed, [j, r, attempt] as u32 LE) % 24`
//! for `r = 1..k`, retrying `attempt = 0, 1, ...` on collisions. Its table is
//! indexed mixed-radix in that gene order; entry `e` is
//! `1 - penalty_scale * unit(hash(TAG_VALUE, seed, [j, e]))` when
//! `unit(hash(TAG_PENALTY, seed, [j, e])) < penalty_rate`, else
//! `1 - fine_scale * unit(hash(TAG_VALUE, seed, [j, e]))`, clamped to `[0, 1]`.
//! The base fitness is the mean of the `m` table lookups.
//!
//! Noise: `z1 = normal(hash(TAG_SEED, seed, genes ++ [seed_id]))`,
//! `z2 = normal(hash(TAG_FOLD, seed, genes ++ [partitioning, fold]))`,
//! `z3 = normal(hash(TAG_INTERACTION, seed, genes ++ [partitioning, fold, seed_id]))`,
//! with `genes` as 24 single bytes and ids as u32 LE; the score is
//! `clamp(((base + s_seed*z1) + s_fold*z2) + s_int*z3, 0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EvaluatorError};
use crate::evaluation::{Evaluator, TrainingUnit};
use crate::search_space::{cardinality, Genotype, N_GENES};

const TAG_SEED: u8 = 1;
const TAG_FOLD: u8 = 2;
const TAG_INTERACTION: u8 = 3;
const TAG_SUBSET: u8 = 4;
const TAG_PENALTY: u8 = 5;
const TAG_VALUE: u8 = 6;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Hash of `[tag][benchmark_seed LE][genes?][ids LE]`.
pub fn hash_key(tag: u8, benchmark_seed: u64, genes: Option<&[u8; N_GENES]>, ids: &[u32]) -> u64 {
    let mut bytes = Vec::with_capacity(1 + 8 + N_GENES + 4 * ids.len());
    bytes.push(tag);
    bytes.extend_from_slice(&benchmark_seed.to_le_bytes());
    if let Some(genes) = genes {
        bytes.extend_from_slice(genes);
    }
    for id in ids {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    fmix64(fnv1a64(&bytes))
}

/// Uniform in `[0, 1)` from the top 53 bits.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal deviate by Box-Muller over the two 32-bit lanes of `h`.
pub fn normal_deviate(h: u64) -> f64 {
    let scale = 4_294_967_296.0;
    let u1 = ((h >> 32) as f64 + 1.0) / scale;
    let u2 = (h & 0xffff_ffff) as f64 / scale;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn default_k() -> usize {
    3
}
fn default_m() -> usize {
    24
}
fn default_sigma_seed() -> f64 {
    0.006
}
fn default_sigma_fold() -> f64 {
    0.006
}
fn default_sigma_interaction() -> f64 {
    0.018
}
fn default_penalty_rate() -> f64 {
    0.08
}
fn default_penalty_scale() -> f64 {
    1.0
}
fn default_fine_scale() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBenchmarkParams {
    #[serde(default)]
    pub benchmark_seed: u64,
    /// Genes per subfunction.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Number of subfunctions.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_sigma_seed")]
    pub sigma_seed: f64,
    #[serde(default = "default_sigma_fold")]
    pub sigma_fold: f64,
    #[serde(default = "default_sigma_interaction")]
    pub sigma_interaction: f64,
    /// Probability that a table entry is a penalty entry.
    #[serde(default = "default_penalty_rate")]
    pub penalty_rate: f64,
    /// Largest loss of a penalty entry.
    #[serde(default = "default_penalty_scale")]
    pub penalty_scale: f64,
    /// Largest loss of an ordinary entry.
    #[serde(default = "default_fine_scale")]
    pub fine_scale: f64,
}

impl Default for SyntheticBenchmarkParams {
    fn default() -> Self {
        SyntheticBenchmarkParams {
            benchmark_seed: 0,
            k: default_k(),
            m: default_m(),
            sigma_seed: default_sigma_seed(),
            sigma_fold: default_sigma_fold(),
            sigma_interaction: default_sigma_interaction(),
            penalty_rate: default_penalty_rate(),
            penalty_scale: default_penalty_scale(),
            fine_scale: default_fine_scale(),
        }
    }
}

impl SyntheticBenchmarkParams {
    pub fn with_seed(benchmark_seed: u64) -> Self {
        SyntheticBenchmarkParams { benchmark_seed, ..Self::default() }
    }

    pub fn noiseless(mut self) -> Self {
        self.sigma_seed = 0.0;
        self.sigma_fold = 0.0;
        self.sigma_interaction = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.k > N_GENES {
            return Err(ConfigError::Invalid(format!("subfunction arity k={} must be in 1..=24", self.k)));
        }
        if self.m == 0 {
            return Err(ConfigError::Invalid("need at least one subfunction".into()));
        }
        for (name, v) in [
            ("sigma_seed", self.sigma_seed),
            ("sigma_fold", self.sigma_fold),
            ("sigma_interaction", self.sigma_interaction),
            ("penalty_scale", self.penalty_scale),
            ("fine_scale", self.fine_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be a non-negative number")));
            }
        }
        if !(0.0..=1.0).contains(&self.penalty_rate) {
            return Err(ConfigError::Invalid("penalty_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subfunction {
    pub genes: Vec<usize>,
    pub table: Vec<f64>,
}

impl Subfunction {
    pub fn index_of(&self, genotype: &Genotype) -> usize {
        self.genes
            .iter()
            .fold(0usize, |acc, &g| acc * cardinality(g) as usize + genotype.gene(g) as usize)
    }
}

/// NK-style additive landscape plus hash-driven evaluation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    params: SyntheticBenchmarkParams,
    subfunctions: Vec<Subfunction>,
}

impl SyntheticBenchmark {
    pub fn new(params: SyntheticBenchmarkParams) -> Result<Self, ConfigError> {
        params.validate()?;
        let seed = params.benchmark_seed;
        let subfunctions = (0..params.m)
            .map(|j| {
                let mut genes = vec![j % N_GENES];
                for r in 1..params.k {
                    let mut attempt = 0u32;
                    loop {
                        let h = hash_key(TAG_SUBSET, seed, None, &[j as u32, r as u32, attempt]);
                        let candidate = (h % N_GENES as u64) as usize;
                        if !genes.contains(&candidate) {
                            genes.push(candidate);
                            break;
                        }
                        attempt += 1;
                    }
                }
                let size: usize = genes.iter().map(|&g| cardinality(g) as usize).product();
                let table = (0..size)
                    .map(|e| {
                        let ids = [j as u32, e as u32];
                        let penalized = unit_interval(hash_key(TAG_PENALTY, seed, None, &ids)) < params.penalty_rate;
                        let u = unit_interval(hash_key(TAG_VALUE, seed, None, &ids));
                        let scale = if penalized { params.penalty_scale } else { params.fine_scale };
                        (1.0 - scale * u).clamp(0.0, 1.0)
                    })
                    .collect();
                Subfunction { genes, table }
            })
            .collect();
        Ok(SyntheticBenchmark { params, subfunctions })
    }

    pub fn params(&self) -> &SyntheticBenchmarkParams {
        &self.params
    }

    pub fn subfunctions(&self) -> &[Subfunction] {
        &self.subfunctions
    }

    /// Noise-free quality of a genotype, as given (callers repair first).
    pub fn base_fitness(&self, genotype: &Genotype) -> f64 {
        let total: f64 = self.subfunctions.iter().map(|s| s.table[s.index_of(genotype)]).sum();
        total / self.subfunctions.len() as f64
    }

    /// The three standard-normal noise components of a unit.
    pub fn noise_deviates(&self, unit: &TrainingUnit) -> [f64; 3] {
        let seed = self.params.benchmark_seed;
        let genes = unit.genotype.genes();
        let s = unit.slot;
        [
            normal_deviate(hash_key(TAG_SEED, seed, Some(&genes), &[s.seed])),
            normal_deviate(hash_key(TAG_FOLD, seed, Some(&genes), &[s.partitioning, s.fold as u32])),
            normal_deviate(hash_key(TAG_INTERACTION, seed, Some(&genes), &[s.partitioning, s.fold as u32, s.seed])),
        ]
    }

    pub fn noisy_score(&self, unit: &TrainingUnit) -> f64 {
        let [z1, z2, z3] = self.noise_deviates(unit);
        let p = &self.params;
        let score = self.base_fitness(&unit.genotype) + p.sigma_seed * z1 + p.sigma_fold * z2 + p.sigma_interaction * z3;
        score.clamp(0.0, 1.0)
    }
}

impl Evaluator for SyntheticBenchmark {
    fn score(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        Ok(self.noisy_score(unit))
    }
}
