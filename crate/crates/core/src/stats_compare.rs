//! Two-group comparisons: mean difference, permutation p-value, percentile
//! bootstrap CI, persona-level IQR; sign consistency across repeated runs;
//! percent change.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::numeric::{self, substream_seed};
use crate::trace_model::Persona;

/// Permutation tests enumerate every split up to this many arrangements.
pub const EXHAUSTIVE_LIMIT: u64 = 20_000;

/// Resampling draws per deterministic substream.
const CHUNK: usize = 1024;
/// Offset separating bootstrap substreams from permutation substreams.
const BOOTSTRAP_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("groups of {n_a} and {n_b} values; need at least 2 each")]
    TooFewTrials { n_a: usize, n_b: usize },
    #[error("non-finite input value")]
    NonFinite,
    #[error("{labels} persona labels for {values} values")]
    LabelCountMismatch { values: usize, labels: usize },
    #[error("reference value is zero")]
    ZeroReference,
    #[error("resamples must be positive")]
    ZeroResamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub resamples: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Also report Welch's t-test p-value.
    pub welch: bool,
}

impl Default for ComparisonSpec {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            seed: 0,
            ci_level: 0.95,
            welch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_a − mean_b`.
    pub delta_mean: f64,
    /// Standard error of `delta_mean` (unpooled).
    pub std_error: f64,
    pub p_value: f64,
    /// Whether `p_value` came from full enumeration.
    pub exact: bool,
    /// All values identical in both groups; `p_value` is 1 by convention.
    pub degenerate: bool,
    pub ci_low: f64,
    pub ci_high: f64,
    pub iqr_persona: Option<f64>,
    pub welch_p: Option<f64>,
}

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

fn check(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Counts subsets of size `k` of `pooled` whose split has absolute mean
/// difference at least `threshold`.
fn exhaustive_count(pooled: &[f64], k: usize, threshold: f64) -> (u64, u64) {
    let n = pooled.len();
    let total: f64 = pooled.iter().sum();
    let (na, nb) = (k as f64, (n - k) as f64);
    let mut idx: Vec<usize> = (0..k).collect();
    let (mut hits, mut all) = (0u64, 0u64);
    loop {
        let sa: f64 = idx.iter().map(|i| pooled[*i]).sum();
        let d = sa / na - (total - sa) / nb;
        all += 1;
        if d.abs() >= threshold {
            hits += 1;
        }
        // next combination in lexicographic order
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return (hits, all);
        };
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Monte Carlo permutation count over `draws` random splits. Draws are
/// produced in fixed-size chunks, each from its own counter-derived stream,
/// so the result does not depend on the number of worker threads.
fn monte_carlo_count(pooled: &[f64], k: usize, threshold: f64, draws: usize, seed: u64) -> u64 {
    let n = pooled.len();
    let total: f64 = pooled.iter().sum();
    let (na, nb) = (k as f64, (n - k) as f64);
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, c as u64));
            let mut idx: Vec<usize> = (0..n).collect();
            let len = CHUNK.min(draws - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..len {
                // partial Fisher-Yates: the first k slots form a uniform subset
                let mut sa = 0.0;
                for i in 0..k {
                    let j = rng.random_range(i..n);
                    idx.swap(i, j);
                    sa += pooled[idx[i]];
                }
                let d = sa / na - (total - sa) / nb;
                if d.abs() >= threshold {
                    hits += 1;
                }
            }
            hits
        })
        .sum()
}

/// Pooled values and the extremeness threshold for `|mean(a) − mean(b)|`.
fn permutation_setup(a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let observed = (numeric::mean(a).unwrap_or(0.0) - numeric::mean(b).unwrap_or(0.0)).abs();
    let scale = pooled.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    // splits whose statistic equals the observed one up to rounding count as extreme
    (pooled, observed - 1e-9 * scale)
}

/// Exact two-sided permutation p-value by enumerating every split.
pub fn exact_permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let (pooled, threshold) = permutation_setup(a, b);
    let (hits, all) = exhaustive_count(&pooled, a.len(), threshold);
    hits as f64 / all as f64
}

/// Monte Carlo two-sided permutation p-value, `(hits + 1) / (draws + 1)`.
pub fn monte_carlo_permutation_p(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    let (pooled, threshold) = permutation_setup(a, b);
    let hits = monte_carlo_count(&pooled, a.len(), threshold, resamples, seed);
    (hits + 1) as f64 / (resamples + 1) as f64
}

/// Two-sided permutation p-value of the difference in means: exact when
/// there are at most [`EXHAUSTIVE_LIMIT`] splits, Monte Carlo otherwise.
/// Returns the p-value and whether it was computed exactly.
pub fn permutation_p(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> (f64, bool) {
    if binomial((a.len() + b.len()) as u64, a.len() as u64) <= EXHAUSTIVE_LIMIT {
        (exact_permutation_p(a, b), true)
    } else {
        (monte_carlo_permutation_p(a, b, resamples, seed), false)
    }
}

/// Percentile bootstrap interval of `mean(a) − mean(b)`, resampling each
/// group independently.
pub fn bootstrap_ci(a: &[f64], b: &[f64], resamples: usize, seed: u64, level: f64) -> (f64, f64) {
    let chunks = resamples.div_ceil(CHUNK);
    let mut diffs: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(substream_seed(seed, BOOTSTRAP_STREAM + c as u64));
            let len = CHUNK.min(resamples - c * CHUNK);
            (0..len)
                .map(|_| {
                    let ma = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).sum::<f64>()
                        / a.len() as f64;
                    let mb = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).sum::<f64>()
                        / b.len() as f64;
                    ma - mb
                })
                .collect::<Vec<_>>()
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (
        numeric::quantile_sorted(&diffs, tail).unwrap_or(f64::NAN),
        numeric::quantile_sorted(&diffs, 1.0 - tail).unwrap_or(f64::NAN),
    )
}

/// Welch's unequal-variance t-test, two-sided. `None` when both groups have
/// zero variance.
pub fn welch_p(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (numeric::sample_variance(a)?, numeric::sample_variance(b)?);
    let se2 = va / na + vb / nb;
    if se2 <= 0.0 {
        return None;
    }
    let t = (numeric::mean(a)? - numeric::mean(b)?) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// IQR of per-persona mean differences, over personas present in both groups.
pub fn iqr_persona(
    a: &[f64],
    labels_a: &[Persona],
    b: &[f64],
    labels_b: &[Persona],
) -> Option<f64> {
    let group = |v: &[f64], l: &[Persona]| {
        let mut m: BTreeMap<Persona, (f64, usize)> = BTreeMap::new();
        for (x, p) in v.iter().zip(l) {
            let e = m.entry(p.clone()).or_insert((0.0, 0));
            e.0 += x;
            e.1 += 1;
        }
        m
    };
    let (ga, gb) = (group(a, labels_a), group(b, labels_b));
    let deltas: Vec<f64> = ga
        .iter()
        .filter_map(|(p, (sa, na))| {
            gb.get(p)
                .map(|(sb, nb)| sa / *na as f64 - sb / *nb as f64)
        })
        .collect();
    numeric::iqr(&deltas)
}

/// Compares group `a` against group `b`. `personas` optionally labels each
/// value for the persona-level IQR.
pub fn compare(
    spec: &ComparisonSpec,
    a: &[f64],
    b: &[f64],
    personas: Option<(&[Persona], &[Persona])>,
) -> Result<ComparisonResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewTrials {
            n_a: a.len(),
            n_b: b.len(),
        });
    }
    if spec.resamples == 0 {
        return Err(StatsError::ZeroResamples);
    }
    check(a)?;
    check(b)?;
    if let Some((la, lb)) = personas {
        for (values, labels) in [(a, la), (b, lb)] {
            if values.len() != labels.len() {
                return Err(StatsError::LabelCountMismatch {
                    values: values.len(),
                    labels: labels.len(),
                });
            }
        }
    }

    let mean_a = numeric::mean(a).expect("non-empty");
    let mean_b = numeric::mean(b).expect("non-empty");
    let va = numeric::sample_variance(a).expect("n >= 2");
    let vb = numeric::sample_variance(b).expect("n >= 2");
    let std_error = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    let first = a[0];
    let degenerate = a.iter().chain(b).all(|x| *x == first);

    let (p_value, exact) = if degenerate {
        (1.0, true)
    } else {
        permutation_p(a, b, spec.resamples, spec.seed)
    };
    let (ci_low, ci_high) = bootstrap_ci(a, b, spec.resamples, spec.seed, spec.ci_level);
    Ok(ComparisonResult {
        n_a: a.len(),
        n_b: b.len(),
        mean_a,
        mean_b,
        delta_mean: mean_a - mean_b,
        std_error,
        p_value,
        exact,
        degenerate,
        ci_low,
        ci_high,
        iqr_persona: personas.and_then(|(la, lb)| iqr_persona(a, la, b, lb)),
        welch_p: if spec.welch { welch_p(a, b) } else { None },
    })
}

/// `100 · (value − reference) / reference`.
pub fn percent_change(value: f64, reference: f64) -> Result<f64, StatsError> {
    if reference == 0.0 {
        return Err(StatsError::ZeroReference);
    }
    Ok(100.0 * (value - reference) / reference)
}

/// Identifies one repeated-run cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub task: String,
    pub claim_id: String,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConsistency {
    pub key: CellKey,
    pub consistency: f64,
    pub n_runs: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_zero: usize,
    /// Every run had an exact zero delta; consistency reported as 1.
    pub all_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub cells: Vec<CellConsistency>,
    /// Cells left out because they had a single run.
    pub excluded: Vec<CellKey>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Fraction of runs agreeing with the majority sign, zeros excluded.
pub fn cell_consistency(deltas: &[f64]) -> (f64, usize, usize, usize) {
    let pos = deltas.iter().filter(|d| **d > 0.0).count();
    let neg = deltas.iter().filter(|d| **d < 0.0).count();
    let zero = deltas.len() - pos - neg;
    if pos + neg == 0 {
        return (1.0, pos, neg, zero);
    }
    (pos.max(neg) as f64 / (pos + neg) as f64, pos, neg, zero)
}

pub fn consistency(cells: &BTreeMap<CellKey, Vec<f64>>) -> ConsistencyResult {
    let mut out = Vec::new();
    let mut excluded = Vec::new();
    for (key, deltas) in cells {
        if deltas.len() < 2 {
            log::warn!(
                "consistency cell {}/{}/{} has {} run(s); excluded",
                key.task,
                key.claim_id,
                key.condition,
                deltas.len()
            );
            excluded.push(key.clone());
            continue;
        }
        let (c, pos, neg, zero) = cell_consistency(deltas);
        out.push(CellConsistency {
            key: key.clone(),
            consistency: c,
            n_runs: deltas.len(),
            n_positive: pos,
            n_negative: neg,
            n_zero: zero,
            all_zero: pos + neg == 0,
        });
    }
    let values: Vec<f64> = out.iter().map(|c| c.consistency).collect();
    ConsistencyResult {
        mean: numeric::mean(&values),
        std: numeric::sample_std(&values),
        cells: out,
        excluded,
    }
}
