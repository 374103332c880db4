//! Coding-task process metrics, persona-normalized deltas, percentile ranks,
//! and the Time-and-Revision (TRS) / Edit Volatility (EVS) composites.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::shannon_entropy_bits;
use crate::trace_model::{Condition, EventKind, EventPayload, Persona, TaskType, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingMetric {
    Cd,
    Td,
    Nr,
    Re,
    Ms,
}

impl CodingMetric {
    pub const ALL: [CodingMetric; 5] = [
        CodingMetric::Cd,
        CodingMetric::Td,
        CodingMetric::Nr,
        CodingMetric::Re,
        CodingMetric::Ms,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CodingMetric::Cd => "cd",
            CodingMetric::Td => "td",
            CodingMetric::Nr => "nr",
            CodingMetric::Re => "re",
            CodingMetric::Ms => "ms",
        }
    }
}

impl fmt::Display for CodingMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodingError {
    #[error("trial {0} is not a coding trial")]
    WrongTaskType(String),
    #[error("trial {0} lacks a task_start/task_end pair")]
    MissingTaskBoundary(String),
    #[error("trial {0} has no code_exec events")]
    NoCodeActivity(String),
    #[error("no baseline for persona {persona} metric {metric}")]
    MissingBaseline { persona: Persona, metric: String },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("missing rank for metric {0}")]
    MissingRank(CodingMetric),
}

/// Raw per-trial coding metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingRaw {
    /// Total coding duration: spans from a code-producing event to the
    /// execution that closes it, in seconds.
    pub cd: f64,
    /// End-to-end task duration in seconds.
    pub td: f64,
    /// Number of code revisions.
    pub nr: u32,
    /// Revision entropy in bits.
    pub re: f64,
    /// Mean revision size in changed lines.
    pub ms: f64,
}

impl CodingRaw {
    pub fn get(&self, metric: CodingMetric) -> f64 {
        match metric {
            CodingMetric::Cd => self.cd,
            CodingMetric::Td => self.td,
            CodingMetric::Nr => f64::from(self.nr),
            CodingMetric::Re => self.re,
            CodingMetric::Ms => self.ms,
        }
    }
}

/// Extracts [`CodingRaw`] from a coding trial.
///
/// `TaskStart` and every `CodeRevision` open a coding span; the next
/// `CodeExec` closes it. Time outside spans counts toward `td` only, and
/// only events inside the task window are considered.
pub fn extract_coding_raw(trial: &TrialRecord) -> Result<CodingRaw, CodingError> {
    let id = || trial.header.trial_id.clone();
    if trial.header.task_type != TaskType::Coding {
        return Err(CodingError::WrongTaskType(id()));
    }
    let (start, end) = trial
        .task_window()
        .ok_or_else(|| CodingError::MissingTaskBoundary(id()))?;
    let span = trial
        .task_event_span()
        .ok_or_else(|| CodingError::MissingTaskBoundary(id()))?;

    let mut open = Some(start);
    let mut cd = 0.0;
    let mut execs = 0usize;
    let mut sizes: Vec<f64> = Vec::new();
    for e in &trial.events[span] {
        match e.payload {
            EventPayload::CodeRevision { lines_changed } => {
                sizes.push(f64::from(lines_changed));
                open = Some(e.t);
            }
            EventPayload::CodeExec { .. } => {
                execs += 1;
                if let Some(o) = open.take() {
                    cd += e.t - o;
                }
            }
            _ => {}
        }
    }
    if execs == 0 {
        return Err(CodingError::NoCodeActivity(id()));
    }
    let nr = sizes.len() as u32;
    let ms = if sizes.is_empty() {
        0.0
    } else {
        sizes.iter().sum::<f64>() / sizes.len() as f64
    };
    let re = if nr <= 1 {
        0.0
    } else {
        shannon_entropy_bits(sizes.iter().copied())
    };
    Ok(CodingRaw {
        cd,
        td: end - start,
        nr,
        re,
        ms,
    })
}

/// Mean of one metric over a persona's baseline trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaBaseline {
    pub persona: Persona,
    pub metric: String,
    pub mu: f64,
    pub n_baseline: usize,
}

pub fn persona_delta(value: f64, baseline: &PersonaBaseline) -> f64 {
    value - baseline.mu
}

/// Persona baselines keyed by `(persona, metric)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    entries: BTreeMap<(Persona, String), PersonaBaseline>,
}

impl BaselineTable {
    /// Builds baselines from `(persona, metric, value)` observations.
    pub fn from_observations<'a, I>(obs: I) -> Self
    where
        I: IntoIterator<Item = (&'a Persona, &'a str, f64)>,
    {
        let mut sums: BTreeMap<(Persona, String), (f64, usize)> = BTreeMap::new();
        for (persona, metric, value) in obs {
            let e = sums
                .entry((persona.clone(), metric.to_string()))
                .or_insert((0.0, 0));
            e.0 += value;
            e.1 += 1;
        }
        let entries = sums
            .into_iter()
            .map(|((persona, metric), (sum, n))| {
                let b = PersonaBaseline {
                    persona: persona.clone(),
                    metric: metric.clone(),
                    mu: sum / n as f64,
                    n_baseline: n,
                };
                ((persona, metric), b)
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, persona: &Persona, metric: &str) -> Result<&PersonaBaseline, CodingError> {
        self.entries
            .get(&(persona.clone(), metric.to_string()))
            .ok_or_else(|| CodingError::MissingBaseline {
                persona: persona.clone(),
                metric: metric.to_string(),
            })
    }

    pub fn delta(&self, persona: &Persona, metric: &str, value: f64) -> Result<f64, CodingError> {
        Ok(persona_delta(value, self.get(persona, metric)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PersonaBaseline> {
        self.entries.values()
    }

    pub fn has_persona(&self, persona: &Persona) -> bool {
        self.entries.keys().any(|(p, _)| p == persona)
    }
}

/// `q_i = (1/N) * #{j : d_j <= d_i}`. Tied values share the larger rank.
pub fn percentile_ranks(deltas: &[f64]) -> Result<Vec<f64>, CodingError> {
    if deltas.is_empty() {
        return Err(CodingError::EmptyInput);
    }
    if let Some(i) = deltas.iter().position(|d| !d.is_finite()) {
        return Err(CodingError::NonFinite(i));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = deltas.len() as f64;
    Ok(deltas
        .iter()
        .map(|d| {
            // number of sorted values <= d
            let count = sorted.partition_point(|x| x <= d);
            count as f64 / n
        })
        .collect())
}

/// TRS and EVS from per-metric ranks.
pub fn composite_scores(ranks: &BTreeMap<CodingMetric, f64>) -> Result<(f64, f64), CodingError> {
    let q = |m| ranks.get(&m).copied().ok_or(CodingError::MissingRank(m));
    let trs = 1.0 - (q(CodingMetric::Cd)? + q(CodingMetric::Td)? + q(CodingMetric::Nr)?) / 3.0;
    let evs = (q(CodingMetric::Re)? + (1.0 - q(CodingMetric::Ms)?)) / 2.0;
    Ok((trs, evs))
}

/// One coding trial entering a stratum computation.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingEntry {
    pub trial_id: String,
    pub persona: Persona,
    pub condition: Condition,
    pub raw: CodingRaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingScores {
    pub trial_id: String,
    pub deltas: BTreeMap<CodingMetric, f64>,
    pub ranks: BTreeMap<CodingMetric, f64>,
    /// `1 - q_ms`.
    pub ms_inverted: f64,
    pub trs: f64,
    pub evs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CodingStratum {
    pub baselines: BaselineTable,
    pub scores: Vec<CodingScores>,
    /// Non-baseline trials dropped because their persona has no baseline.
    pub skipped: Vec<String>,
}

/// Scores one (backbone, task) stratum. Trials in `baseline` define the
/// persona means and are excluded from the rank population.
pub fn score_stratum(
    entries: &[CodingEntry],
    baseline: Condition,
) -> Result<CodingStratum, CodingError> {
    let baselines = BaselineTable::from_observations(
        entries
            .iter()
            .filter(|e| e.condition == baseline)
            .flat_map(|e| {
                CodingMetric::ALL
                    .into_iter()
                    .map(move |m| (&e.persona, m.as_str(), e.raw.get(m)))
            }),
    );

    let mut skipped = Vec::new();
    let mut targets: Vec<(&CodingEntry, BTreeMap<CodingMetric, f64>)> = Vec::new();
    for e in entries.iter().filter(|e| e.condition != baseline) {
        if !baselines.has_persona(&e.persona) {
            log::warn!(
                "coding trial {}: no {baseline} baseline for persona {}",
                e.trial_id,
                e.persona
            );
            skipped.push(e.trial_id.clone());
            continue;
        }
        let mut deltas = BTreeMap::new();
        for m in CodingMetric::ALL {
            deltas.insert(m, baselines.delta(&e.persona, m.as_str(), e.raw.get(m))?);
        }
        targets.push((e, deltas));
    }
    if targets.is_empty() {
        return Ok(CodingStratum {
            baselines,
            scores: Vec::new(),
            skipped,
        });
    }

    let mut ranks: BTreeMap<CodingMetric, Vec<f64>> = BTreeMap::new();
    for m in CodingMetric::ALL {
        let column: Vec<f64> = targets.iter().map(|(_, d)| d[&m]).collect();
        ranks.insert(m, percentile_ranks(&column)?);
    }

    let scores = targets
        .iter()
        .enumerate()
        .map(|(i, (e, deltas))| {
            let q: BTreeMap<CodingMetric, f64> =
                CodingMetric::ALL.into_iter().map(|m| (m, ranks[&m][i])).collect();
            let (trs, evs) = composite_scores(&q)?;
            Ok(CodingScores {
                trial_id: e.trial_id.clone(),
                deltas: deltas.clone(),
                ms_inverted: 1.0 - q[&CodingMetric::Ms],
                ranks: q,
                trs,
                evs,
            })
        })
        .collect::<Result<Vec<_>, CodingError>>()?;

    Ok(CodingStratum {
        baselines,
        scores,
        skipped,
    })
}

/// Whether an event kind belongs to coding activity.
pub fn is_code_event(kind: EventKind) -> bool {
    matches!(kind, EventKind::CodeExec | EventKind::CodeRevision)
}
