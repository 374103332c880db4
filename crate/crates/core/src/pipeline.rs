//! File-based analysis stages: traces → metrics → aggregate → comparisons.
//! Each stage reads the previous stage's JSON from a work directory and
//! writes its own, so stages can be re-run independently.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coding_metrics::{
    extract_coding_raw, score_stratum, CodingEntry, CodingMetric, CodingRaw, CodingScores,
    PersonaBaseline, BaselineTable,
};
use crate::constructs::{
    fit_construct_pca, loading_table, score_trials, Construct, ConstructMap, ConstructScore,
    DeltaMatrix, LoadingRow, StratumFit,
};
use crate::numeric::{self, substream_seed};
use crate::stance_dynamics::{
    outcome_table_from, persuasion_success, trajectory, GroupKey, OutcomeRow, TrajectoryStatus,
};
use crate::stats_compare::{compare, consistency, CellKey, ComparisonResult, ComparisonSpec, ConsistencyResult};
use crate::trace_model::{
    parse_trace_file, Condition, ParsedTraces, Persona, Setting, TaskType, TrialHeader, TrialRecord,
};
use crate::web_metrics::{
    extract_web_raw, relative_metrics, tool_vocabulary, ReferenceProfile, WebMetric, WebMetrics,
    WebRaw,
};

pub const METRICS_FILE: &str = "metrics.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const COMPARISONS_FILE: &str = "comparisons.json";
pub const CODING_CSV: &str = "coding_metrics.csv";
pub const WEB_CSV: &str = "web_metrics.csv";
pub const SCORES_CSV: &str = "construct_scores.csv";
pub const REFERENCES_FILE: &str = "reference_profiles.json";
pub const LOADINGS_FILE: &str = "loadings.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing upstream file {0}")]
    MissingUpstream(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingUpstream(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Trace files under `path`: the file itself, or every `*.jsonl` in the
/// directory in name order.
pub fn trace_files(path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingUpstream(path.to_path_buf()));
    }
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Parses every trace file under `path`. Duplicate trial ids across files
/// are resolved in favour of the first file.
pub fn load_traces(path: &Path) -> Result<(ParsedTraces, Vec<PathBuf>), PipelineError> {
    let files = trace_files(path)?;
    let mut all = ParsedTraces::default();
    for f in &files {
        let file = fs::File::open(f).map_err(io_err(f))?;
        let parsed = parse_trace_file(BufReader::new(file)).map_err(io_err(f))?;
        all.extend(parsed);
    }
    Ok((all, files))
}

/// Baseline condition of each setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Baselines {
    pub on_the_fly: Condition,
    pub prefill: Condition,
}

impl Default for Baselines {
    fn default() -> Self {
        Self {
            on_the_fly: Condition::C1,
            prefill: Condition::C0P,
        }
    }
}

impl Baselines {
    /// Defaults with the baseline of `condition`'s setting replaced.
    pub fn with_override(condition: Condition) -> Result<Self, PipelineError> {
        let mut b = Self::default();
        match condition {
            Condition::C0 | Condition::C1 => b.on_the_fly = condition,
            Condition::C0P => b.prefill = condition,
            other => {
                return Err(PipelineError::Usage(format!(
                    "{other} cannot serve as a baseline (use C0, C1 or C0P)"
                )))
            }
        }
        Ok(b)
    }

    pub fn for_setting(&self, s: Setting) -> Condition {
        match s {
            Setting::OnTheFly => self.on_the_fly,
            Setting::Prefill => self.prefill,
        }
    }

    pub fn is_baseline(&self, c: Condition) -> bool {
        self.for_setting(c.setting()) == c
    }
}

/// Everything the metrics stage knows about one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub header: TrialHeader,
    pub stance: TrajectoryStatus,
    /// Persisted stance change; `None` when not probed or not classifiable.
    pub persuaded: Option<bool>,
    pub is_baseline: bool,
    pub coding: Option<CodingRaw>,
    pub coding_scores: Option<CodingScores>,
    pub web: Option<WebMetrics>,
    /// Persona-relative web deltas keyed by metric name; `None` is Absent.
    pub web_deltas: BTreeMap<String, Option<f64>>,
}

impl TrialMetrics {
    pub fn trial_id(&self) -> &str {
        &self.header.trial_id
    }

    /// Value of a named per-trial quantity: raw coding (`cd` …), coding
    /// deltas (`d_cd` …), `trs`/`evs`, raw web metrics, web deltas
    /// (`d_num_searches` …) or construct scores (`dpc_act` …).
    pub fn value(&self, name: &str, scores: Option<&ConstructScore>) -> Option<f64> {
        if let Some(c) = Construct::ALL.iter().find(|c| name == format!("dpc_{}", c.short())) {
            return scores.and_then(|s| s.get(*c));
        }
        match name {
            "trs" => return self.coding_scores.as_ref().map(|s| s.trs),
            "evs" => return self.coding_scores.as_ref().map(|s| s.evs),
            _ => {}
        }
        if let Some(m) = CodingMetric::ALL.iter().find(|m| m.as_str() == name) {
            return self.coding.map(|c| c.get(*m));
        }
        if let Some(rest) = name.strip_prefix("d_") {
            if let Some(m) = CodingMetric::ALL.iter().find(|m| m.as_str() == rest) {
                return self.coding_scores.as_ref().map(|s| s.deltas[m]);
            }
            return self.web_deltas.get(rest).copied().flatten();
        }
        let metric: WebMetric = name.parse().ok()?;
        self.web.as_ref().and_then(|w| w.get(metric))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub trial_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumBaselines {
    pub backbone: String,
    pub setting: Setting,
    pub condition: Condition,
    pub coding: Vec<PersonaBaseline>,
    pub web: Vec<PersonaBaseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub baselines: Baselines,
    pub trials: Vec<TrialMetrics>,
    pub references: Vec<ReferenceProfile>,
    pub stratum_baselines: Vec<StratumBaselines>,
    /// Trials (or parts of trials) left out, with the reason.
    pub skipped: Vec<Skipped>,
}

type Stratum = (String, Setting);

fn stratum_of(h: &TrialHeader) -> Stratum {
    (h.backbone.clone(), h.condition.setting())
}

fn stratum_name(s: &Stratum) -> String {
    format!("{}/{}", s.0, s.1)
}

/// Per-trial metrics, persona baselines, reference profiles and TRS/EVS
/// ranks. Strata are (backbone, setting); the setting's baseline condition
/// defines persona means and reference profiles.
pub fn compute_metrics(trials: &[TrialRecord], baselines: Baselines) -> MetricsFile {
    let mut skipped = Vec::new();
    let mut out: Vec<TrialMetrics> = trials
        .iter()
        .map(|t| {
            let stance = trajectory(t);
            TrialMetrics {
                header: t.header.clone(),
                persuaded: match stance {
                    TrajectoryStatus::Classified(tr) => Some(persuasion_success(&tr)),
                    _ => None,
                },
                stance,
                is_baseline: baselines.is_baseline(t.header.condition),
                coding: None,
                coding_scores: None,
                web: None,
                web_deltas: BTreeMap::new(),
            }
        })
        .collect();

    let mut web_raw: Vec<Option<WebRaw>> = vec![None; trials.len()];
    for (i, t) in trials.iter().enumerate() {
        let reason = match t.header.task_type {
            TaskType::Coding => extract_coding_raw(t).map(|r| out[i].coding = Some(r)).err().map(|e| e.to_string()),
            TaskType::Web => extract_web_raw(t).map(|r| web_raw[i] = Some(r)).err().map(|e| e.to_string()),
            TaskType::Opinion => None,
        };
        if let Some(reason) = reason {
            log::warn!("{}: {reason}", t.header.trial_id);
            skipped.push(Skipped {
                trial_id: t.header.trial_id.clone(),
                reason,
            });
        }
    }

    let mut strata: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        strata.entry(stratum_of(&t.header)).or_default().push(i);
    }
    let vocabulary = tool_vocabulary(web_raw.iter().flatten());
    let mut references = Vec::new();
    let mut stratum_baselines = Vec::new();

    for (stratum, members) in &strata {
        let baseline = baselines.for_setting(stratum.1);

        // coding: persona deltas, ranks, composites
        let entries: Vec<CodingEntry> = members
            .iter()
            .filter_map(|i| {
                out[*i].coding.map(|raw| CodingEntry {
                    trial_id: trials[*i].header.trial_id.clone(),
                    persona: trials[*i].header.persona.clone(),
                    condition: trials[*i].header.condition,
                    raw,
                })
            })
            .collect();
        let mut coding_baselines = Vec::new();
        if !entries.is_empty() {
            match score_stratum(&entries, baseline) {
                Ok(result) => {
                    let by_id: HashMap<&str, usize> =
                        members.iter().map(|i| (trials[*i].header.trial_id.as_str(), *i)).collect();
                    for s in result.scores {
                        let i = by_id[s.trial_id.as_str()];
                        out[i].coding_scores = Some(s);
                    }
                    for id in result.skipped {
                        skipped.push(Skipped {
                            trial_id: id,
                            reason: format!("no {baseline} coding baseline for persona"),
                        });
                    }
                    coding_baselines = result.baselines.iter().cloned().collect();
                }
                Err(e) => log::warn!("coding stratum {}: {e}", stratum_name(stratum)),
            }
        }

        // web: reference profiles, relative metrics, persona deltas
        let mut by_persona: BTreeMap<Persona, Vec<usize>> = BTreeMap::new();
        for i in members {
            if web_raw[*i].is_some() && trials[*i].header.condition == baseline {
                by_persona.entry(trials[*i].header.persona.clone()).or_default().push(*i);
            }
        }
        let mut profiles: BTreeMap<Persona, ReferenceProfile> = BTreeMap::new();
        for (persona, idx) in &by_persona {
            match ReferenceProfile::build(
                &stratum.0,
                persona,
                idx.iter().filter_map(|i| web_raw[*i].as_ref()),
                &vocabulary,
            ) {
                Ok(p) => {
                    profiles.insert(persona.clone(), p);
                }
                Err(e) => log::warn!("reference {}/{persona}: {e}", stratum_name(stratum)),
            }
        }
        for i in members {
            let Some(raw) = web_raw[*i].take() else { continue };
            let h = &trials[*i].header;
            let Some(profile) = profiles.get(&h.persona) else {
                skipped.push(Skipped {
                    trial_id: h.trial_id.clone(),
                    reason: format!("no {baseline} web reference for persona {}", h.persona),
                });
                continue;
            };
            let result = if h.condition == baseline {
                profile.leave_one_out(&raw).and_then(|p| relative_metrics(raw, &p))
            } else {
                relative_metrics(raw, profile)
            };
            match result {
                Ok(m) => out[*i].web = Some(m),
                Err(e) => skipped.push(Skipped {
                    trial_id: h.trial_id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        let web_table = BaselineTable::from_observations(members.iter().flat_map(|i| {
            let t = &out[*i];
            let w = t.web.as_ref().filter(|_| t.header.condition == baseline);
            WebMetric::ALL
                .into_iter()
                .filter_map(move |m| w.and_then(|w| w.get(m)).map(|v| (&t.header.persona, m.as_str(), v)))
        }));
        for i in members {
            let t = &mut out[*i];
            let Some(w) = &t.web else { continue };
            for m in WebMetric::ALL {
                let d = w
                    .get(m)
                    .and_then(|v| web_table.delta(&t.header.persona, m.as_str(), v).ok());
                t.web_deltas.insert(m.as_str().to_string(), d);
            }
        }

        references.extend(profiles.into_values());
        stratum_baselines.push(StratumBaselines {
            backbone: stratum.0.clone(),
            setting: stratum.1,
            condition: baseline,
            coding: coding_baselines,
            web: web_table.iter().cloned().collect(),
        });
    }

    MetricsFile {
        baselines,
        trials: out,
        references,
        stratum_baselines,
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub name: String,
    pub group_by: Vec<GroupKey>,
    /// Decimal places of rendered percentages.
    pub decimals: u32,
    pub rows: Vec<OutcomeRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateFile {
    pub outcome_tables: Vec<OutcomeTable>,
    pub construct_fits: Vec<StratumFit>,
    pub loadings: Vec<LoadingRow>,
    pub construct_scores: Vec<ConstructScore>,
}

pub const DEFAULT_GROUP_BY: [GroupKey; 3] = [GroupKey::Backbone, GroupKey::Condition, GroupKey::Tactic];

/// Outcome tables plus per-stratum construct fits and scores.
pub fn aggregate(
    metrics: &MetricsFile,
    map: &ConstructMap,
    group_by: &[GroupKey],
) -> Result<AggregateFile, PipelineError> {
    map.validate()
        .map_err(|e| PipelineError::Usage(e.to_string()))?;
    let statuses = || metrics.trials.iter().map(|t| (&t.header, t.stance));
    let outcome_tables = vec![
        OutcomeTable {
            name: "outcomes".into(),
            group_by: group_by.to_vec(),
            decimals: 2,
            rows: outcome_table_from(statuses(), group_by),
        },
        OutcomeTable {
            name: "outcomes_by_distractors".into(),
            group_by: vec![GroupKey::Backbone, GroupKey::DistractorCount, GroupKey::Tactic],
            decimals: 1,
            rows: outcome_table_from(
                statuses(),
                &[GroupKey::Backbone, GroupKey::DistractorCount, GroupKey::Tactic],
            ),
        },
    ];

    let mut strata: BTreeMap<Stratum, Vec<&TrialMetrics>> = BTreeMap::new();
    for t in &metrics.trials {
        if t.web.is_some() {
            strata.entry(stratum_of(&t.header)).or_default().push(t);
        }
    }
    let columns: Vec<String> = map.constructs.iter().flat_map(|(_, m)| m.clone()).collect();
    let mut fits = Vec::new();
    let mut scores = Vec::new();
    for (stratum, members) in strata {
        let matrix = DeltaMatrix {
            trial_ids: members.iter().map(|t| t.trial_id().to_string()).collect(),
            rows: members
                .iter()
                .map(|t| columns.iter().map(|c| t.web_deltas.get(c).copied().flatten()).collect())
                .collect(),
            metrics: columns.clone(),
        };
        let fit = fit_construct_pca(&matrix, map, &stratum_name(&stratum))
            .map_err(|e| PipelineError::Usage(e.to_string()))?;
        scores.extend(score_trials(&fit, &matrix).map_err(|e| PipelineError::Usage(e.to_string()))?);
        fits.push(fit);
    }
    Ok(AggregateFile {
        outcome_tables,
        loadings: loading_table(&fits),
        construct_fits: fits,
        construct_scores: scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonTable {
    /// Persuaded vs non-persuaded, coding task.
    CodingPnp,
    /// Persuaded vs non-persuaded, web task, pooled over personas.
    WebPnp,
    /// Persuaded vs non-persuaded, web task, one persona.
    WebPersonaPnp,
    /// Prefill regimes against each other and the neutral prefill.
    Prefill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub table: ComparisonTable,
    pub backbone: String,
    pub persona: Option<Persona>,
    pub task: TaskType,
    pub metric: String,
    pub group_a: String,
    pub group_b: String,
    pub result: Option<ComparisonResult>,
    /// Why `result` is missing.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyBlock {
    pub backbone: String,
    pub task: TaskType,
    pub metric: String,
    pub result: ConsistencyResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonsFile {
    pub spec: ComparisonSpec,
    pub records: Vec<ComparisonRecord>,
    pub consistency: Vec<ConsistencyBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub spec: ComparisonSpec,
    /// Also compare P vs NP within each persona (construct scores only).
    pub persona_level: bool,
    /// Restrict to these tables; empty means all.
    pub tables: Vec<ComparisonTable>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            spec: ComparisonSpec::default(),
            persona_level: true,
            tables: Vec::new(),
        }
    }
}

pub const CODING_PNP_METRICS: [&str; 7] = ["trs", "evs", "d_cd", "d_td", "d_nr", "d_re", "d_ms"];
pub const CONSTRUCT_SCORES: [&str; 3] = ["dpc_act", "dpc_brd", "dpc_dpt"];

pub fn web_pnp_metrics() -> Vec<String> {
    WebMetric::ALL
        .iter()
        .map(|m| format!("d_{m}"))
        .chain(CONSTRUCT_SCORES.iter().map(|s| s.to_string()))
        .collect()
}

pub fn prefill_metrics(task: TaskType) -> Vec<String> {
    match task {
        TaskType::Web => WebMetric::ALL
            .iter()
            .map(|m| m.as_str().to_string())
            .chain(CONSTRUCT_SCORES.iter().map(|s| s.to_string()))
            .collect(),
        TaskType::Coding => CodingMetric::ALL.iter().map(|m| m.as_str().to_string()).collect(),
        TaskType::Opinion => Vec::new(),
    }
}

struct Comparer<'a> {
    spec: &'a ComparisonSpec,
    scores: HashMap<&'a str, &'a ConstructScore>,
    counter: u64,
    records: Vec<ComparisonRecord>,
}

impl<'a> Comparer<'a> {
    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        table: ComparisonTable,
        backbone: &str,
        persona: Option<&Persona>,
        task: TaskType,
        metric: &str,
        (label_a, a): (&str, &[&TrialMetrics]),
        (label_b, b): (&str, &[&TrialMetrics]),
    ) {
        let values = |group: &[&TrialMetrics]| {
            let mut v = Vec::new();
            let mut p = Vec::new();
            for t in group {
                if let Some(x) = t.value(metric, self.scores.get(t.trial_id()).copied()) {
                    v.push(x);
                    p.push(t.header.persona.clone());
                }
            }
            (v, p)
        };
        let (va, pa) = values(a);
        let (vb, pb) = values(b);
        let spec = ComparisonSpec {
            seed: substream_seed(self.spec.seed, self.counter),
            ..self.spec.clone()
        };
        self.counter += 1;
        let (result, error) = match compare(&spec, &va, &vb, Some((&pa, &pb))) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.records.push(ComparisonRecord {
            table,
            backbone: backbone.to_string(),
            persona: persona.cloned(),
            task,
            metric: metric.to_string(),
            group_a: label_a.to_string(),
            group_b: label_b.to_string(),
            result,
            error,
        });
    }
}

/// Runs every comparison table and the sign-consistency summary.
pub fn compare_stage<'m>(
    metrics: &'m MetricsFile,
    aggregate: &AggregateFile,
    opts: &CompareOptions,
) -> ComparisonsFile {
    let wants = |t: ComparisonTable| opts.tables.is_empty() || opts.tables.contains(&t);
    let mut c = Comparer {
        spec: &opts.spec,
        scores: aggregate
            .construct_scores
            .iter()
            .map(|s| (s.trial_id.as_str(), s))
            .collect(),
        counter: 0,
        records: Vec::new(),
    };

    let mut by_backbone: BTreeMap<&str, Vec<&TrialMetrics>> = BTreeMap::new();
    for t in &metrics.trials {
        by_backbone.entry(&t.header.backbone).or_default().push(t);
    }

    for (backbone, trials) in &by_backbone {
        let select = |task: TaskType, f: &dyn Fn(&TrialMetrics) -> bool| -> Vec<&TrialMetrics> {
            trials
                .iter()
                .copied()
                .filter(|t| t.header.task_type == task && f(t))
                .collect()
        };
        let pnp = |task| {
            let c2 = |t: &TrialMetrics| t.header.condition == Condition::C2;
            (
                select(task, &|t| c2(t) && t.persuaded == Some(true)),
                select(task, &|t| c2(t) && t.persuaded == Some(false)),
            )
        };

        if wants(ComparisonTable::CodingPnp) {
            let (p, np) = pnp(TaskType::Coding);
            for m in CODING_PNP_METRICS {
                c.run(ComparisonTable::CodingPnp, backbone, None, TaskType::Coding, m, ("P", &p), ("NP", &np));
            }
        }
        let (p, np) = pnp(TaskType::Web);
        if wants(ComparisonTable::WebPnp) {
            for m in web_pnp_metrics() {
                c.run(ComparisonTable::WebPnp, backbone, None, TaskType::Web, &m, ("P", &p), ("NP", &np));
            }
        }
        if opts.persona_level && wants(ComparisonTable::WebPersonaPnp) {
            let personas: std::collections::BTreeSet<&Persona> =
                p.iter().chain(&np).map(|t| &t.header.persona).collect();
            for persona in personas {
                let of = |g: &[&'m TrialMetrics]| -> Vec<&'m TrialMetrics> {
                    g.iter().copied().filter(|t| &t.header.persona == persona).collect()
                };
                let (pp, pn) = (of(&p), of(&np));
                for m in CONSTRUCT_SCORES {
                    c.run(ComparisonTable::WebPersonaPnp, backbone, Some(persona), TaskType::Web, m, ("P", &pp), ("NP", &pn));
                }
            }
        }
        if wants(ComparisonTable::Prefill) {
            let base = metrics.baselines.prefill;
            let base_label = base.as_str();
            for task in [TaskType::Web, TaskType::Coding] {
                let of = |cond: Condition| select(task, &|t| t.header.condition == cond);
                let (b, nb, c0p) = (of(Condition::B), of(Condition::NB), of(base));
                if b.is_empty() && nb.is_empty() && c0p.is_empty() {
                    continue;
                }
                for m in prefill_metrics(task) {
                    c.run(ComparisonTable::Prefill, backbone, None, task, &m, ("B", &b), (base_label, &c0p));
                    c.run(ComparisonTable::Prefill, backbone, None, task, &m, ("NB", &nb), (base_label, &c0p));
                    c.run(ComparisonTable::Prefill, backbone, None, task, &m, ("B", &b), ("NB", &nb));
                }
            }
        }
    }

    ComparisonsFile {
        spec: opts.spec.clone(),
        consistency: consistency_blocks(metrics, aggregate),
        records: c.records,
    }
}

/// Sign consistency of per-trial deltas within (task, claim, condition)
/// cells. Coding deltas are `TRS − ½` and `EVS − ½` (½ is the expected rank
/// composite); web deltas are construct scores minus the stratum's mean
/// baseline score.
pub fn consistency_blocks(metrics: &MetricsFile, aggregate: &AggregateFile) -> Vec<ConsistencyBlock> {
    let scores: HashMap<&str, &ConstructScore> = aggregate
        .construct_scores
        .iter()
        .map(|s| (s.trial_id.as_str(), s))
        .collect();
    let mut baseline_means: BTreeMap<(Stratum, &str), f64> = BTreeMap::new();
    let mut strata: BTreeMap<Stratum, Vec<&TrialMetrics>> = BTreeMap::new();
    for t in &metrics.trials {
        if t.is_baseline {
            strata.entry(stratum_of(&t.header)).or_default().push(t);
        }
    }
    for (stratum, members) in &strata {
        for m in CONSTRUCT_SCORES {
            let v: Vec<f64> = members
                .iter()
                .filter_map(|t| t.value(m, scores.get(t.trial_id()).copied()))
                .collect();
            if let Some(mean) = numeric::mean(&v) {
                baseline_means.insert((stratum.clone(), m), mean);
            }
        }
    }

    let mut cells: BTreeMap<(String, TaskType, &str), BTreeMap<CellKey, Vec<f64>>> = BTreeMap::new();
    for t in metrics.trials.iter().filter(|t| !t.is_baseline) {
        let h = &t.header;
        let key = CellKey {
            task: h.task_type.as_str().to_string(),
            claim_id: h.claim_id.clone(),
            condition: h.condition.as_str().to_string(),
        };
        let metrics_for: &[&str] = match h.task_type {
            TaskType::Coding => &["trs", "evs"],
            TaskType::Web => &CONSTRUCT_SCORES,
            TaskType::Opinion => &[],
        };
        for m in metrics_for {
            let Some(v) = t.value(m, scores.get(t.trial_id()).copied()) else { continue };
            let delta = match h.task_type {
                TaskType::Coding => v - 0.5,
                _ => match baseline_means.get(&(stratum_of(h), *m)) {
                    Some(mean) => v - mean,
                    None => continue,
                },
            };
            cells
                .entry((h.backbone.clone(), h.task_type, m))
                .or_default()
                .entry(key.clone())
                .or_default()
                .push(delta);
        }
    }
    cells
        .into_iter()
        .map(|((backbone, task, metric), cells)| ConsistencyBlock {
            backbone,
            task,
            metric: metric.to_string(),
            result: consistency(&cells),
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, PipelineError> {
    csv::Writer::from_path(path).map_err(|source| PipelineError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_result<T>(path: &Path, r: Result<T, csv::Error>) -> Result<T, PipelineError> {
    r.map_err(|source| PipelineError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_coding_csv(path: &Path, metrics: &MetricsFile) -> Result<(), PipelineError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["trial_id".to_string()];
    for prefix in ["", "d_", "q_"] {
        header.extend(CodingMetric::ALL.iter().map(|m| format!("{prefix}{m}")));
    }
    header.extend(["trs".to_string(), "evs".to_string()]);
    csv_result(path, w.write_record(&header))?;
    for t in &metrics.trials {
        let Some(raw) = t.coding else { continue };
        let mut row = vec![t.trial_id().to_string()];
        row.extend(CodingMetric::ALL.iter().map(|m| raw.get(*m).to_string()));
        let s = t.coding_scores.as_ref();
        row.extend(CodingMetric::ALL.iter().map(|m| opt(s.map(|s| s.deltas[m]))));
        row.extend(CodingMetric::ALL.iter().map(|m| opt(s.map(|s| s.ranks[m]))));
        row.push(opt(s.map(|s| s.trs)));
        row.push(opt(s.map(|s| s.evs)));
        csv_result(path, w.write_record(&row))?;
    }
    csv_result(path, w.flush().map_err(csv::Error::from))
}

fn write_web_csv(path: &Path, metrics: &MetricsFile) -> Result<(), PipelineError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["trial_id".to_string()];
    header.extend(WebMetric::ALL.iter().map(|m| m.as_str().to_string()));
    header.extend(WebMetric::ALL.iter().map(|m| format!("d_{m}")));
    csv_result(path, w.write_record(&header))?;
    for t in &metrics.trials {
        let Some(web) = &t.web else { continue };
        let mut row = vec![t.trial_id().to_string()];
        row.extend(WebMetric::ALL.iter().map(|m| opt(web.get(*m))));
        row.extend(
            WebMetric::ALL
                .iter()
                .map(|m| opt(t.web_deltas.get(m.as_str()).copied().flatten())),
        );
        csv_result(path, w.write_record(&row))?;
    }
    csv_result(path, w.flush().map_err(csv::Error::from))
}

fn write_scores_csv(path: &Path, scores: &[ConstructScore]) -> Result<(), PipelineError> {
    let mut w = csv_writer(path)?;
    csv_result(path, w.write_record(["trial_id", "dpc_act", "dpc_brd", "dpc_dpt"]))?;
    for s in scores {
        csv_result(
            path,
            w.write_record([s.trial_id.clone(), opt(s.dpc_act), opt(s.dpc_brd), opt(s.dpc_dpt)]),
        )?;
    }
    csv_result(path, w.flush().map_err(csv::Error::from))
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Summary of a metrics run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub trials: usize,
    pub load_errors: usize,
    pub skipped: usize,
}

/// Loads traces, computes per-trial metrics and writes `metrics.json`, the
/// per-trial CSVs and the reference profiles. Invalid trials are skipped.
pub fn run_metrics_stage(
    traces: &Path,
    out: &Path,
    baselines: Baselines,
) -> Result<MetricsSummary, PipelineError> {
    let (parsed, _) = load_traces(traces)?;
    for e in &parsed.errors {
        log::warn!("skipping: {e}");
    }
    let metrics = compute_metrics(&parsed.trials, baselines);
    ensure_dir(out)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    write_json(&out.join(REFERENCES_FILE), &metrics.references)?;
    write_coding_csv(&out.join(CODING_CSV), &metrics)?;
    write_web_csv(&out.join(WEB_CSV), &metrics)?;
    Ok(MetricsSummary {
        trials: metrics.trials.len(),
        load_errors: parsed.errors.len(),
        skipped: metrics.skipped.len(),
    })
}

pub fn run_aggregate_stage(
    input: &Path,
    out: &Path,
    map: &ConstructMap,
    group_by: &[GroupKey],
) -> Result<AggregateFile, PipelineError> {
    let metrics: MetricsFile = read_json(&input.join(METRICS_FILE))?;
    let agg = aggregate(&metrics, map, group_by)?;
    ensure_dir(out)?;
    write_json(&out.join(AGGREGATE_FILE), &agg)?;
    write_json(&out.join(LOADINGS_FILE), &agg.loadings)?;
    write_scores_csv(&out.join(SCORES_CSV), &agg.construct_scores)?;
    Ok(agg)
}

pub fn run_compare_stage(
    input: &Path,
    out: &Path,
    opts: &CompareOptions,
) -> Result<ComparisonsFile, PipelineError> {
    let metrics: MetricsFile = read_json(&input.join(METRICS_FILE))?;
    let agg: AggregateFile = read_json(&input.join(AGGREGATE_FILE))?;
    let result = compare_stage(&metrics, &agg, opts);
    ensure_dir(out)?;
    write_json(&out.join(COMPARISONS_FILE), &result)?;
    Ok(result)
}
