//! Activity / breadth / depth constructs: each construct's metric deltas are
//! standardized within a stratum and projected onto the first principal
//! component of their correlation matrix.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construct {
    Activity,
    Breadth,
    Depth,
}

impl Construct {
    pub const ALL: [Construct; 3] = [Construct::Activity, Construct::Breadth, Construct::Depth];

    /// Short column suffix: `act`, `brd`, `dpt`.
    pub fn short(self) -> &'static str {
        match self {
            Construct::Activity => "act",
            Construct::Breadth => "brd",
            Construct::Depth => "dpt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Construct::Activity => "Activity",
            Construct::Breadth => "Breadth",
            Construct::Depth => "Depth",
        }
    }
}

impl fmt::Display for Construct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstructError {
    #[error("{found} trials in stratum, need at least 3")]
    TooFewTrials { found: usize },
    #[error("every column of {0} has zero variance")]
    AllColumnsDropped(Construct),
    #[error("metric '{0}' is not a column of the delta matrix")]
    MissingColumn(String),
    #[error("row has {found} values, fit expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("metric '{0}' is assigned to more than one construct")]
    DuplicateMetric(String),
}

/// Metric-to-construct assignment; the first metric of each construct is
/// its sign anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructMap {
    pub constructs: Vec<(Construct, Vec<String>)>,
}

impl Default for ConstructMap {
    fn default() -> Self {
        let v = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            constructs: vec![
                (
                    Construct::Activity,
                    v(&["num_web_events", "total_duration_s", "tool_drift"]),
                ),
                (
                    Construct::Breadth,
                    v(&[
                        "num_domains",
                        "num_searches",
                        "domain_entropy",
                        "unique_url_ratio",
                        "domain_kl",
                        "domain_jaccard",
                    ]),
                ),
                (
                    Construct::Depth,
                    v(&[
                        "num_unique_urls",
                        "num_summaries",
                        "avg_latency_s",
                        "query_similarity",
                    ]),
                ),
            ],
        }
    }
}

impl ConstructMap {
    pub fn validate(&self) -> Result<(), ConstructError> {
        let mut seen = std::collections::BTreeSet::new();
        for (_, metrics) in &self.constructs {
            for m in metrics {
                if !seen.insert(m) {
                    return Err(ConstructError::DuplicateMetric(m.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn metrics(&self, c: Construct) -> &[String] {
        self.constructs
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, m)| m.as_slice())
            .unwrap_or(&[])
    }
}

/// Trials × metrics matrix of persona-relative deltas; `None` is Absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub trial_ids: Vec<String>,
    pub metrics: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl DeltaMatrix {
    fn column_index(&self, metric: &str) -> Result<usize, ConstructError> {
        self.metrics
            .iter()
            .position(|m| m == metric)
            .ok_or_else(|| ConstructError::MissingColumn(metric.to_string()))
    }

    /// Sub-matrix rows restricted to `metrics`, in that order.
    pub fn select(&self, metrics: &[String]) -> Result<Vec<Vec<Option<f64>>>, ConstructError> {
        let idx = metrics
            .iter()
            .map(|m| self.column_index(m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .rows
            .iter()
            .map(|r| idx.iter().map(|i| r[*i]).collect())
            .collect())
    }
}

/// First principal component of one construct in one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFit {
    pub construct: Construct,
    /// Metrics that entered the fit, anchor first when it survived.
    pub metrics: Vec<String>,
    /// Zero-variance metrics left out of the fit.
    pub dropped: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Unit-norm PC1 loadings over `metrics`.
    pub loadings: Vec<f64>,
    /// Variance along PC1 of the standardized data.
    pub eigenvalue: f64,
    /// Absent cells replaced by their column mean.
    pub imputed: usize,
    pub n_trials: usize,
}

impl PcaFit {
    /// Score of one row given over the fit's `metrics`; Absent values are
    /// imputed with the fitted mean (contributing 0).
    pub fn score(&self, row: &[Option<f64>]) -> Result<f64, ConstructError> {
        if row.len() != self.metrics.len() {
            return Err(ConstructError::DimensionMismatch {
                expected: self.metrics.len(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .zip(&self.loadings)
            .map(|((v, (m, s)), l)| v.map_or(0.0, |v| (v - m) / s) * l)
            .sum())
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching unit eigenvectors (as columns of
/// `vectors`, i.e. `vectors[row][k]` is component `row` of eigenvector `k`).
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Fits PC1 on `rows` (trials × `metrics`). Columns are mean-imputed, then
/// standardized with the sample standard deviation; zero-variance columns are
/// dropped with a warning. The loading of the first surviving metric is made
/// non-negative (the first non-zero loading when it is exactly zero).
pub fn fit_pca(
    construct: Construct,
    metrics: &[String],
    rows: &[Vec<Option<f64>>],
) -> Result<PcaFit, ConstructError> {
    let n = rows.len();
    if n < 3 {
        return Err(ConstructError::TooFewTrials { found: n });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != metrics.len()) {
        return Err(ConstructError::DimensionMismatch {
            expected: metrics.len(),
            found: r.len(),
        });
    }

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut imputed = 0;
    for (j, name) in metrics.iter().enumerate() {
        let present: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        let Some(mean) = numeric::mean(&present) else {
            log::warn!("{construct}: metric {name} is absent in every trial; dropped");
            dropped.push(name.clone());
            continue;
        };
        let col: Vec<f64> = rows.iter().map(|r| r[j].unwrap_or(mean)).collect();
        let std = numeric::sample_std(&col).unwrap_or(0.0);
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            log::warn!("{construct}: metric {name} has zero variance; dropped");
            dropped.push(name.clone());
            continue;
        }
        imputed += n - present.len();
        kept.push(name.clone());
        columns.push(col.iter().map(|x| (x - mean) / std).collect());
        means.push(mean);
        stds.push(std);
    }
    if kept.is_empty() {
        return Err(ConstructError::AllColumnsDropped(construct));
    }

    let k = kept.len();
    let corr: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum::<f64>()
                        / (n - 1) as f64
                })
                .collect()
        })
        .collect();
    let (values, vectors) = symmetric_eigen(&corr);
    let top = (0..k)
        .max_by(|a, b| values[*a].total_cmp(&values[*b]).then(b.cmp(a)))
        .expect("at least one column");
    let mut loadings: Vec<f64> = vectors.iter().map(|row| row[top]).collect();
    let norm = loadings.iter().map(|x| x * x).sum::<f64>().sqrt();
    loadings.iter_mut().for_each(|x| *x /= norm);
    let pivot = loadings.iter().copied().find(|x| *x != 0.0).unwrap_or(1.0);
    if pivot < 0.0 {
        loadings.iter_mut().for_each(|x| *x = -*x);
    }

    Ok(PcaFit {
        construct,
        metrics: kept,
        dropped,
        means,
        stds,
        loadings,
        eigenvalue: values[top],
        imputed,
        n_trials: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructScore {
    pub trial_id: String,
    pub dpc_act: Option<f64>,
    pub dpc_brd: Option<f64>,
    pub dpc_dpt: Option<f64>,
}

impl ConstructScore {
    pub fn get(&self, c: Construct) -> Option<f64> {
        match c {
            Construct::Activity => self.dpc_act,
            Construct::Breadth => self.dpc_brd,
            Construct::Depth => self.dpc_dpt,
        }
    }

    fn set(&mut self, c: Construct, v: f64) {
        match c {
            Construct::Activity => self.dpc_act = Some(v),
            Construct::Breadth => self.dpc_brd = Some(v),
            Construct::Depth => self.dpc_dpt = Some(v),
        }
    }
}

/// All construct fits of one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumFit {
    pub stratum: String,
    pub fits: Vec<PcaFit>,
    /// Constructs that could not be fitted, with the reason.
    pub failures: Vec<(Construct, String)>,
}

/// Fits every construct of `map` on `matrix`. A construct that cannot be
/// fitted is recorded in `failures`; a missing column is a hard error.
pub fn fit_construct_pca(
    matrix: &DeltaMatrix,
    map: &ConstructMap,
    stratum: &str,
) -> Result<StratumFit, ConstructError> {
    map.validate()?;
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (construct, metrics) in &map.constructs {
        let rows = matrix.select(metrics)?;
        match fit_pca(*construct, metrics, &rows) {
            Ok(f) => fits.push(f),
            Err(e @ (ConstructError::TooFewTrials { .. } | ConstructError::AllColumnsDropped(_))) => {
                log::warn!("stratum {stratum}: {construct} not fitted: {e}");
                failures.push((*construct, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(StratumFit {
        stratum: stratum.to_string(),
        fits,
        failures,
    })
}

/// Scores every row of `matrix` with the fitted loadings.
pub fn score_trials(fit: &StratumFit, matrix: &DeltaMatrix) -> Result<Vec<ConstructScore>, ConstructError> {
    let mut out: Vec<ConstructScore> = matrix
        .trial_ids
        .iter()
        .map(|id| ConstructScore {
            trial_id: id.clone(),
            dpc_act: None,
            dpc_brd: None,
            dpc_dpt: None,
        })
        .collect();
    for f in &fit.fits {
        let rows = matrix.select(&f.metrics)?;
        for (score, row) in out.iter_mut().zip(&rows) {
            score.set(f.construct, f.score(row)?);
        }
    }
    Ok(out)
}

/// One cell of the exported loading table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingRow {
    pub construct: Construct,
    pub metric: String,
    pub stratum: String,
    /// `None` for a metric dropped from the fit.
    pub loading: Option<f64>,
}

pub fn loading_table(fits: &[StratumFit]) -> Vec<LoadingRow> {
    let mut rows = Vec::new();
    for s in fits {
        for f in &s.fits {
            for (m, l) in f.metrics.iter().zip(&f.loadings) {
                rows.push(LoadingRow {
                    construct: f.construct,
                    metric: m.clone(),
                    stratum: s.stratum.clone(),
                    loading: Some(*l),
                });
            }
            for m in &f.dropped {
                rows.push(LoadingRow {
                    construct: f.construct,
                    metric: m.clone(),
                    stratum: s.stratum.clone(),
                    loading: None,
                });
            }
        }
    }
    rows
}
