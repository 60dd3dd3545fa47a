//! Segmentation overlap and rank statistics.

use crate::error::StatsError;

/// Integer class labels on a dense grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    shape: Vec<usize>,
    labels: Vec<u32>,
}

impl LabelVolume {
    pub fn new(shape: Vec<usize>, labels: Vec<u32>) -> Result<Self, StatsError> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 4 || n != labels.len() {
            return Err(StatsError::Invalid(format!("{} labels do not fill shape {shape:?}", labels.len())));
        }
        Ok(LabelVolume { shape, labels })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Mean Dice over foreground classes `1..n_classes`. A class absent from
/// both volumes counts as 1.0.
pub fn dice(reference: &LabelVolume, prediction: &LabelVolume, n_classes: u32) -> Result<f64, StatsError> {
    if reference.shape != prediction.shape {
        return Err(StatsError::ShapeMismatch(reference.shape.clone(), prediction.shape.clone()));
    }
    if n_classes < 2 {
        return Err(StatsError::Invalid("need at least one foreground class".into()));
    }
    if let Some(&l) = reference.labels.iter().chain(&prediction.labels).find(|&&l| l >= n_classes) {
        return Err(StatsError::Invalid(format!("label {l} outside 0..{n_classes}")));
    }
    let c = n_classes as usize;
    let (mut r, mut p, mut both) = (vec![0u64; c], vec![0u64; c], vec![0u64; c]);
    for (&a, &b) in reference.labels.iter().zip(&prediction.labels) {
        r[a as usize] += 1;
        p[b as usize] += 1;
        if a == b {
            both[a as usize] += 1;
        }
    }
    let total: f64 = (1..c)
        .map(|k| if r[k] + p[k] == 0 { 1.0 } else { 2.0 * both[k] as f64 / (r[k] + p[k]) as f64 })
        .sum();
    Ok(total / (c - 1) as f64)
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::NotDefined("constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::Invalid(format!("lengths {} and {} differ", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(StatsError::NotDefined("fewer than two observations"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::Invalid("non-finite score".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Spearman's ρ over the pairs whose first score is among the top
/// ⌈fraction·n⌉ first scores.
pub fn top_fraction_correlation(pairs: &[(f64, f64)], fraction: f64) -> Result<f64, StatsError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(StatsError::Invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let keep = (fraction * pairs.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0).then(a.cmp(&b)));
    let (xs, ys): (Vec<f64>, Vec<f64>) = order[..keep].iter().map(|&i| pairs[i]).unzip();
    if xs.len() < 2 {
        return Err(StatsError::NotDefined("fewer than two selected pairs"));
    }
    spearman(&xs, &ys)
}

/// Sample sizes up to this use the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 50;

/// One-sided Wilcoxon signed-rank test of `a > b` on paired samples.
///
/// Zero differences are dropped. For up to [`WILCOXON_EXACT_MAX_N`] nonzero
/// differences the p-value is the exact share of the 2^n sign assignments
/// whose positive rank sum reaches the observed one; beyond that a normal
/// approximation with tie correction is used.
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Invalid(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::Invalid("non-finite score".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(1.0);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    // doubled ranks are integers even with ties
    let ranks2: Vec<usize> = average_ranks(&abs).iter().map(|r| (r * 2.0).round() as usize).collect();
    let observed: usize = diffs.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let n = diffs.len();
    if n <= WILCOXON_EXACT_MAX_N {
        let total: usize = ranks2.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &ranks2 {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let tail: u64 = counts[observed..].iter().sum();
        return Ok(tail as f64 / 2f64.powi(n as i32));
    }
    let nf = n as f64;
    let w = observed as f64 / 2.0;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        tie_term += (j * j * j - j) as f64;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w - mean) / var.sqrt();
    Ok(0.5 * libm::erfc(z / std::f64::consts::SQRT_2))
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    assert!(m >= 1, "m must be positive");
    (p * m as f64).min(1.0)
}
