//! Web-research behavioral metrics and the baseline-relative distributional
//! metrics (domain KL, domain Jaccard, tool drift).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{cosine_similarity, shannon_entropy_bits};
use crate::trace_model::{EventPayload, Persona, TaskType, TrialRecord};

/// Additive smoothing applied to both histograms before the KL divergence.
pub const KL_SMOOTHING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WebError {
    #[error("trial {0} is not a web trial")]
    WrongTaskType(String),
    #[error("trial {0} lacks a task_start/task_end pair")]
    MissingTaskBoundary(String),
    #[error("reference profile has no domains")]
    EmptyReference,
    #[error("both domain sets are empty")]
    BothEmpty,
    #[error("tool vector has {found} entries, vocabulary has {expected}")]
    VocabularyMismatch { expected: usize, found: usize },
    #[error("tool '{0}' is not in the reference vocabulary")]
    UnknownTool(String),
    #[error("{vectors} query vectors for {queries} queries")]
    VectorCountMismatch { queries: usize, vectors: usize },
    #[error("query vectors have inconsistent dimensions")]
    VectorDimensionMismatch,
}

/// Per-trial web metrics that need no reference population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebRaw {
    pub num_web_events: u64,
    pub total_duration_s: f64,
    pub num_searches: u64,
    pub num_domains: u64,
    pub num_unique_urls: u64,
    pub num_summaries: u64,
    pub domain_entropy: f64,
    pub unique_url_ratio: f64,
    pub avg_latency_s: f64,
    pub query_similarity: Option<f64>,
    pub total_visits: u64,
    pub domain_histogram: BTreeMap<String, u64>,
    pub tool_counts: BTreeMap<String, u64>,
    pub queries: Vec<String>,
    /// No web events inside the task window.
    pub zero_events: bool,
}

impl WebRaw {
    pub fn domains(&self) -> BTreeSet<&str> {
        self.domain_histogram.keys().map(String::as_str).collect()
    }
}

pub fn extract_web_raw(trial: &TrialRecord) -> Result<WebRaw, WebError> {
    extract_web_raw_with_vectors(trial, None)
}

/// Like [`extract_web_raw`], with optional externally computed query
/// embeddings (one per search, in order).
pub fn extract_web_raw_with_vectors(
    trial: &TrialRecord,
    query_vectors: Option<&[Vec<f64>]>,
) -> Result<WebRaw, WebError> {
    let id = || trial.header.trial_id.clone();
    if trial.header.task_type != TaskType::Web {
        return Err(WebError::WrongTaskType(id()));
    }
    let (start, end) = trial
        .task_window()
        .ok_or_else(|| WebError::MissingTaskBoundary(id()))?;
    let span = trial
        .task_event_span()
        .ok_or_else(|| WebError::MissingTaskBoundary(id()))?;
    let inner = &trial.events[span];

    let mut raw = WebRaw {
        num_web_events: 0,
        total_duration_s: end - start,
        num_searches: 0,
        num_domains: 0,
        num_unique_urls: 0,
        num_summaries: 0,
        domain_entropy: 0.0,
        unique_url_ratio: 0.0,
        avg_latency_s: 0.0,
        query_similarity: None,
        total_visits: 0,
        domain_histogram: BTreeMap::new(),
        tool_counts: BTreeMap::new(),
        queries: Vec::new(),
        zero_events: false,
    };
    let mut urls: BTreeSet<&str> = BTreeSet::new();
    for e in inner {
        match &e.payload {
            EventPayload::Search { query } => {
                raw.num_searches += 1;
                raw.queries.push(query.clone());
            }
            EventPayload::Visit { url, domain } => {
                raw.total_visits += 1;
                urls.insert(url);
                *raw.domain_histogram.entry(domain.clone()).or_default() += 1;
            }
            EventPayload::Summarize => raw.num_summaries += 1,
            EventPayload::ToolCall { tool_name } => {
                *raw.tool_counts.entry(tool_name.clone()).or_default() += 1;
            }
            _ => continue,
        }
        raw.num_web_events += 1;
    }
    raw.zero_events = raw.num_web_events == 0;
    if raw.zero_events {
        log::warn!("web trial {} has no web events", trial.header.trial_id);
    }
    raw.num_domains = raw.domain_histogram.len() as u64;
    raw.num_unique_urls = urls.len() as u64;
    raw.domain_entropy = shannon_entropy_bits(raw.domain_histogram.values().map(|c| *c as f64));
    if raw.total_visits > 0 {
        raw.unique_url_ratio = raw.num_unique_urls as f64 / raw.total_visits as f64;
    }
    if inner.len() >= 2 {
        raw.avg_latency_s = (inner[inner.len() - 1].t - inner[0].t) / (inner.len() - 1) as f64;
    }
    raw.query_similarity = query_similarity(&raw.queries, query_vectors)?;
    Ok(raw)
}

fn tf_vectors(a: &str, b: &str) -> (Vec<f64>, Vec<f64>) {
    let count = |s: &str| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for tok in s.split_whitespace() {
            *m.entry(tok.to_lowercase()).or_default() += 1.0;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let vocab: BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
    let va = vocab.iter().map(|t| ca.get(*t).copied().unwrap_or(0.0)).collect();
    let vb = vocab.iter().map(|t| cb.get(*t).copied().unwrap_or(0.0)).collect();
    (va, vb)
}

/// Mean cosine similarity of consecutive queries; `None` with fewer than two.
/// Uses `vectors` when given, else term-frequency vectors over lowercase
/// whitespace tokens. A pair involving an all-zero vector scores 0.
pub fn query_similarity(
    queries: &[String],
    vectors: Option<&[Vec<f64>]>,
) -> Result<Option<f64>, WebError> {
    if let Some(v) = vectors {
        if v.len() != queries.len() {
            return Err(WebError::VectorCountMismatch {
                queries: queries.len(),
                vectors: v.len(),
            });
        }
    }
    if queries.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in 1..queries.len() {
        let sim = match vectors {
            Some(v) => cosine_similarity(&v[i - 1], &v[i]),
            None => {
                let (a, b) = tf_vectors(&queries[i - 1], &queries[i]);
                cosine_similarity(&a, &b)
            }
        };
        total += match sim {
            Ok(s) => s,
            Err(crate::numeric::NumericError::DimensionMismatch { .. }) => {
                return Err(WebError::VectorDimensionMismatch)
            }
            Err(_) => 0.0,
        };
    }
    Ok(Some(total / (queries.len() - 1) as f64))
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn domain_jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> Result<f64, WebError> {
    let union = a.union(b).count();
    if union == 0 {
        return Err(WebError::BothEmpty);
    }
    Ok(a.intersection(b).count() as f64 / union as f64)
}

/// Sorted union of every tool name seen in `raws`.
pub fn tool_vocabulary<'a, I: IntoIterator<Item = &'a WebRaw>>(raws: I) -> Vec<String> {
    let set: BTreeSet<&String> = raws.into_iter().flat_map(|r| r.tool_counts.keys()).collect();
    set.into_iter().cloned().collect()
}

/// Pooled baseline behavior for one (backbone, persona) stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub backbone: String,
    pub persona: Persona,
    pub n_trials: u64,
    /// Visit counts pooled over the baseline trials.
    pub domain_counts: BTreeMap<String, u64>,
    /// Number of baseline trials that visited each domain.
    pub domain_trial_counts: BTreeMap<String, u64>,
    pub tool_vocabulary: Vec<String>,
    pub tool_totals: Vec<u64>,
}

impl ReferenceProfile {
    pub fn build<'a, I>(
        backbone: &str,
        persona: &Persona,
        baseline: I,
        tool_vocabulary: &[String],
    ) -> Result<Self, WebError>
    where
        I: IntoIterator<Item = &'a WebRaw>,
    {
        let mut p = ReferenceProfile {
            backbone: backbone.to_string(),
            persona: persona.clone(),
            n_trials: 0,
            domain_counts: BTreeMap::new(),
            domain_trial_counts: BTreeMap::new(),
            tool_vocabulary: tool_vocabulary.to_vec(),
            tool_totals: vec![0; tool_vocabulary.len()],
        };
        for raw in baseline {
            p.n_trials += 1;
            for (d, c) in &raw.domain_histogram {
                *p.domain_counts.entry(d.clone()).or_default() += c;
                *p.domain_trial_counts.entry(d.clone()).or_default() += 1;
            }
            let v = p.tool_vector(raw)?;
            for (t, c) in p.tool_totals.iter_mut().zip(v) {
                *t += c as u64;
            }
        }
        Ok(p)
    }

    /// The profile with one of its own member trials removed, so a baseline
    /// trial is never compared against itself.
    pub fn leave_one_out(&self, member: &WebRaw) -> Result<Self, WebError> {
        let mut p = self.clone();
        p.n_trials = p.n_trials.saturating_sub(1);
        for (d, c) in &member.domain_histogram {
            for (map, by) in [(&mut p.domain_counts, *c), (&mut p.domain_trial_counts, 1)] {
                if let Some(v) = map.get_mut(d) {
                    *v = v.saturating_sub(by);
                    if *v == 0 {
                        map.remove(d);
                    }
                }
            }
        }
        let v = self.tool_vector(member)?;
        for (t, c) in p.tool_totals.iter_mut().zip(v) {
            *t = t.saturating_sub(c as u64);
        }
        Ok(p)
    }

    pub fn domain_set(&self) -> BTreeSet<&str> {
        self.domain_counts.keys().map(String::as_str).collect()
    }

    pub fn tool_means(&self) -> Vec<f64> {
        if self.n_trials == 0 {
            return vec![0.0; self.tool_totals.len()];
        }
        self.tool_totals
            .iter()
            .map(|t| *t as f64 / self.n_trials as f64)
            .collect()
    }

    /// A trial's tool counts laid out over this profile's vocabulary.
    pub fn tool_vector(&self, raw: &WebRaw) -> Result<Vec<f64>, WebError> {
        let mut v = vec![0.0; self.tool_vocabulary.len()];
        for (name, c) in &raw.tool_counts {
            let i = self
                .tool_vocabulary
                .binary_search(name)
                .map_err(|_| WebError::UnknownTool(name.clone()))?;
            v[i] = *c as f64;
        }
        Ok(v)
    }

    /// Smoothed reference distribution over `support`.
    pub fn smoothed_distribution(&self, support: &BTreeSet<&str>) -> Vec<f64> {
        smoothed(support, |d| self.domain_counts.get(d).copied().unwrap_or(0))
    }
}

fn smoothed(support: &BTreeSet<&str>, count: impl Fn(&str) -> u64) -> Vec<f64> {
    let raw: Vec<f64> = support
        .iter()
        .map(|d| count(d) as f64 + KL_SMOOTHING)
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// KL(trial ‖ reference) in bits, both histograms smoothed over the union of
/// their supports.
pub fn domain_kl(
    trial_hist: &BTreeMap<String, u64>,
    reference: &ReferenceProfile,
) -> Result<f64, WebError> {
    if reference.domain_counts.is_empty() {
        return Err(WebError::EmptyReference);
    }
    let support: BTreeSet<&str> = trial_hist
        .keys()
        .map(String::as_str)
        .chain(reference.domain_set())
        .collect();
    let p = smoothed(&support, |d| trial_hist.get(d).copied().unwrap_or(0));
    let q = reference.smoothed_distribution(&support);
    let kl: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).log2()).sum();
    Ok(kl.max(0.0))
}

/// L1 distance between a trial's tool counts and the reference mean counts.
pub fn tool_drift(trial_counts: &[f64], reference_means: &[f64]) -> Result<f64, WebError> {
    if trial_counts.len() != reference_means.len() {
        return Err(WebError::VocabularyMismatch {
            expected: reference_means.len(),
            found: trial_counts.len(),
        });
    }
    Ok(trial_counts
        .iter()
        .zip(reference_means)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Raw metrics plus the three reference-relative ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebMetrics {
    pub raw: WebRaw,
    pub domain_kl: f64,
    /// `None` when neither the trial nor the reference visited any domain.
    pub domain_jaccard: Option<f64>,
    pub tool_drift: f64,
}

pub fn relative_metrics(raw: WebRaw, reference: &ReferenceProfile) -> Result<WebMetrics, WebError> {
    let domain_kl = domain_kl(&raw.domain_histogram, reference)?;
    let domain_jaccard = match domain_jaccard(&raw.domains(), &reference.domain_set()) {
        Ok(j) => Some(j),
        Err(WebError::BothEmpty) => None,
        Err(e) => return Err(e),
    };
    let tool_drift = tool_drift(&reference.tool_vector(&raw)?, &reference.tool_means())?;
    Ok(WebMetrics {
        raw,
        domain_kl,
        domain_jaccard,
        tool_drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WebMetric {
    NumWebEvents,
    TotalDurationS,
    NumSearches,
    NumDomains,
    NumUniqueUrls,
    NumSummaries,
    DomainEntropy,
    UniqueUrlRatio,
    AvgLatencyS,
    QuerySimilarity,
    DomainKl,
    DomainJaccard,
    ToolDrift,
}

impl WebMetric {
    pub const ALL: [WebMetric; 13] = [
        WebMetric::NumWebEvents,
        WebMetric::TotalDurationS,
        WebMetric::NumSearches,
        WebMetric::NumDomains,
        WebMetric::NumUniqueUrls,
        WebMetric::NumSummaries,
        WebMetric::DomainEntropy,
        WebMetric::UniqueUrlRatio,
        WebMetric::AvgLatencyS,
        WebMetric::QuerySimilarity,
        WebMetric::DomainKl,
        WebMetric::DomainJaccard,
        WebMetric::ToolDrift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WebMetric::NumWebEvents => "num_web_events",
            WebMetric::TotalDurationS => "total_duration_s",
            WebMetric::NumSearches => "num_searches",
            WebMetric::NumDomains => "num_domains",
            WebMetric::NumUniqueUrls => "num_unique_urls",
            WebMetric::NumSummaries => "num_summaries",
            WebMetric::DomainEntropy => "domain_entropy",
            WebMetric::UniqueUrlRatio => "unique_url_ratio",
            WebMetric::AvgLatencyS => "avg_latency_s",
            WebMetric::QuerySimilarity => "query_similarity",
            WebMetric::DomainKl => "domain_kl",
            WebMetric::DomainJaccard => "domain_jaccard",
            WebMetric::ToolDrift => "tool_drift",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            WebMetric::NumWebEvents => "# Web Events",
            WebMetric::TotalDurationS => "Total Duration (s)",
            WebMetric::NumSearches => "# Searches",
            WebMetric::NumDomains => "# Domains",
            WebMetric::NumUniqueUrls => "# Unique URLs",
            WebMetric::NumSummaries => "# Summaries",
            WebMetric::DomainEntropy => "Domain Entropy",
            WebMetric::UniqueUrlRatio => "Unique URL Ratio",
            WebMetric::AvgLatencyS => "Avg Latency (s)",
            WebMetric::QuerySimilarity => "Query Similarity",
            WebMetric::DomainKl => "Domain KL",
            WebMetric::DomainJaccard => "Domain Jaccard",
            WebMetric::ToolDrift => "Tool Drift",
        }
    }
}

impl fmt::Display for WebMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WebMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WebMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown web metric '{s}'"))
    }
}

impl WebMetrics {
    /// The metric's value; `None` when Absent.
    pub fn get(&self, m: WebMetric) -> Option<f64> {
        let r = &self.raw;
        Some(match m {
            WebMetric::NumWebEvents => r.num_web_events as f64,
            WebMetric::TotalDurationS => r.total_duration_s,
            WebMetric::NumSearches => r.num_searches as f64,
            WebMetric::NumDomains => r.num_domains as f64,
            WebMetric::NumUniqueUrls => r.num_unique_urls as f64,
            WebMetric::NumSummaries => r.num_summaries as f64,
            WebMetric::DomainEntropy => r.domain_entropy,
            WebMetric::UniqueUrlRatio => r.unique_url_ratio,
            WebMetric::AvgLatencyS => r.avg_latency_s,
            WebMetric::QuerySimilarity => return r.query_similarity,
            WebMetric::DomainKl => self.domain_kl,
            WebMetric::DomainJaccard => return self.domain_jaccard,
            WebMetric::ToolDrift => self.tool_drift,
        })
    }
}
