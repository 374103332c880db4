//! Seeded synthetic-agent simulator. Replays the probe → inject → commit →
//! distract → re-probe protocol and the coding/web tasks, with population
//! effects that are known by construction.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::substream_seed;
use crate::templates::{render, tactic_definition, Template};
use crate::trace_model::{
    builtin_claims, write_trace_file, ClaimPair, Condition, EventPayload, InjectionKind, Persona,
    ProbePhase, Side, Stance, Tactic, TaskStatus, TaskType, TraceEvent, TrialHeader, TrialRecord,
    SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config value out of range: {0}")]
    ConfigOutOfRange(String),
    #[error("invalid condition plan: {0}")]
    InvalidCondition(String),
    #[error("nothing to emit")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Additive shifts of generator means. Field names are the generator
/// primitives that [`metric_dependencies`] refers to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectVector {
    pub searches: f64,
    pub unique_urls: f64,
    pub revisits: f64,
    pub summaries: f64,
    /// Applied to each tool's mean call count.
    pub tool_calls: f64,
    pub duration_s: f64,
    pub revisions: f64,
    pub revision_size: f64,
    pub exec_gap_s: f64,
}

impl EffectVector {
    pub fn is_zero(&self) -> bool {
        *self == EffectVector::default()
    }

    /// Non-zero primitives by name.
    pub fn nonzero(&self) -> Vec<&'static str> {
        self.entries()
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("searches", self.searches),
            ("unique_urls", self.unique_urls),
            ("revisits", self.revisits),
            ("summaries", self.summaries),
            ("tool_calls", self.tool_calls),
            ("duration_s", self.duration_s),
            ("revisions", self.revisions),
            ("revision_size", self.revision_size),
            ("exec_gap_s", self.exec_gap_s),
        ]
    }
}

/// Generator primitives each metric is a function of. A metric is untouched
/// by an effect vector iff none of its primitives is shifted.
pub fn metric_dependencies(metric: &str) -> &'static [&'static str] {
    const ALL_WEB_COUNTS: &[&str] = &["searches", "unique_urls", "revisits", "summaries", "tool_calls"];
    match metric {
        "num_web_events" => ALL_WEB_COUNTS,
        "total_duration_s" => &["duration_s"],
        "num_searches" => &["searches"],
        "num_domains" | "num_unique_urls" | "domain_jaccard" => &["unique_urls"],
        "num_summaries" => &["summaries"],
        "domain_entropy" | "unique_url_ratio" | "domain_kl" => &["unique_urls", "revisits"],
        "avg_latency_s" => &[
            "duration_s", "searches", "unique_urls", "revisits", "summaries", "tool_calls",
        ],
        // presence (two or more searches) depends on the search count
        "query_similarity" => &["searches"],
        "tool_drift" => &["tool_calls"],
        "cd" => &["revisions", "exec_gap_s"],
        "td" => &["revisions", "exec_gap_s"],
        "nr" => &["revisions"],
        "re" | "ms" => &["revisions", "revision_size"],
        // composite scores depend on everything their inputs depend on
        _ => &[
            "searches", "unique_urls", "revisits", "summaries", "tool_calls", "duration_s",
            "revisions", "revision_size", "exec_gap_s",
        ],
    }
}

pub fn is_affected(metric: &str, effect: &EffectVector) -> bool {
    let shifted = effect.nonzero();
    metric_dependencies(metric).iter().any(|p| shifted.contains(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WebParams {
    pub searches_mean: f64,
    pub unique_urls_mean: f64,
    pub revisits_mean: f64,
    pub summaries_mean: f64,
    pub tool_means: BTreeMap<String, f64>,
    pub duration_mean_s: f64,
    pub duration_sigma: f64,
    /// Visit domains with sampling weights.
    pub domains: Vec<(String, f64)>,
}

impl Default for WebParams {
    fn default() -> Self {
        Self {
            searches_mean: 4.35,
            unique_urls_mean: 5.27,
            revisits_mean: 1.0,
            summaries_mean: 1.5,
            tool_means: [("calculator", 0.4), ("pdf_reader", 0.6), ("python", 0.3)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            duration_mean_s: 140.0,
            duration_sigma: 0.35,
            domains: DOMAINS.iter().map(|(d, w)| (d.to_string(), *w)).collect(),
        }
    }
}

const DOMAINS: [(&str, f64); 10] = [
    ("en.wikipedia.org", 6.0),
    ("nature.com", 2.0),
    ("arxiv.org", 2.0),
    ("bbc.co.uk", 1.5),
    ("nytimes.com", 1.5),
    ("pewresearch.org", 1.0),
    ("brookings.edu", 1.0),
    ("reddit.com", 1.0),
    ("gov.uk", 0.8),
    ("who.int", 0.5),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodingParams {
    /// Mean number of revisions (at least one).
    pub revisions_mean: f64,
    /// Mean changed lines per revision (at least one).
    pub revision_size_mean: f64,
    pub exec_gap_mean_s: f64,
    pub think_gap_mean_s: f64,
    pub gap_sigma: f64,
}

impl Default for CodingParams {
    fn default() -> Self {
        Self {
            revisions_mean: 3.0,
            revision_size_mean: 9.0,
            exec_gap_mean_s: 6.0,
            think_gap_mean_s: 12.0,
            gap_sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaParams {
    pub persona: Persona,
    #[serde(default)]
    pub web: WebParams,
    #[serde(default)]
    pub coding: CodingParams,
    /// Per-tactic susceptibility overriding the global table.
    #[serde(default)]
    pub susceptibility: BTreeMap<Tactic, f64>,
}

impl PersonaParams {
    pub fn new(persona: Persona) -> Self {
        Self {
            persona,
            web: WebParams::default(),
            coding: CodingParams::default(),
            susceptibility: BTreeMap::new(),
        }
    }
}

/// How many trials of one condition to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionPlan {
    pub condition: Condition,
    /// Tactics to cross with; ignored (baseline) for non-persuasive conditions.
    #[serde(default)]
    pub tactics: Vec<Tactic>,
    pub task_types: Vec<TaskType>,
    /// Trials per backbone × persona × tactic × task type.
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub backbones: Vec<String>,
    pub personas: Vec<PersonaParams>,
    pub claims: Vec<ClaimPair>,
    pub conditions: Vec<ConditionPlan>,
    /// Cycled across on-the-fly trials.
    pub distractor_counts: Vec<u32>,
    pub susceptibility: BTreeMap<Tactic, f64>,
    /// Among trials not persuaded: probability the post probe flips and the
    /// final probe reverts.
    pub fade_rate: f64,
    /// Among unchanged trials: probability the final probe alone flips.
    pub late_change_rate: f64,
    /// Probability that any single probe answer is unparseable.
    pub unparsed_rate: f64,
    /// Applied to persuaded on-the-fly trials and to Belief prefill trials.
    pub belief_effect: EffectVector,
    /// Applied to Disbelief prefill trials.
    pub disbelief_effect: EffectVector,
}

pub const DEFAULT_PERSONAS: [Persona; 6] = [
    Persona::Gpt,
    Persona::Claude,
    Persona::Llama,
    Persona::Mistral,
    Persona::Qwen,
    Persona::Gemini,
];

impl Default for SimConfig {
    fn default() -> Self {
        let both = vec![TaskType::Coding, TaskType::Web];
        let plan = |condition, tactics: Vec<Tactic>, trials| ConditionPlan {
            condition,
            tactics,
            task_types: both.clone(),
            trials,
        };
        let persuasive: Vec<Tactic> = Tactic::ALL[1..].to_vec();
        Self {
            seed: 0,
            backbones: vec!["sim-backbone".into()],
            personas: DEFAULT_PERSONAS.iter().cloned().map(PersonaParams::new).collect(),
            claims: builtin_claims(),
            conditions: vec![
                plan(Condition::C0, vec![], 5),
                plan(Condition::C1, vec![], 10),
                plan(Condition::C2, persuasive, 5),
                plan(Condition::C0P, vec![], 10),
                plan(Condition::B, vec![], 10),
                plan(Condition::NB, vec![], 10),
            ],
            distractor_counts: vec![1, 8],
            susceptibility: [
                (Tactic::Baseline, 0.05),
                (Tactic::LogicalAppeal, 0.35),
                (Tactic::AuthorityEndorsement, 0.55),
                (Tactic::EvidenceBased, 0.5),
                (Tactic::PrimingUrgency, 0.3),
                (Tactic::Anchoring, 0.4),
            ]
            .into_iter()
            .collect(),
            fade_rate: 0.35,
            late_change_rate: 0.05,
            unparsed_rate: 0.0,
            belief_effect: EffectVector {
                searches: -1.2,
                unique_urls: -0.9,
                ..Default::default()
            },
            disbelief_effect: EffectVector::default(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::ConfigOutOfRange(format!("{name} = {p} is not in [0, 1]")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), SimError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SimError::ConfigOutOfRange(format!("{name} = {v} must be positive")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.backbones.is_empty() || self.personas.is_empty() || self.claims.is_empty() {
            return Err(SimError::ConfigOutOfRange(
                "backbones, personas and claims must be nonempty".into(),
            ));
        }
        if self.distractor_counts.is_empty() {
            return Err(SimError::ConfigOutOfRange("distractor_counts is empty".into()));
        }
        check_prob("fade_rate", self.fade_rate)?;
        check_prob("late_change_rate", self.late_change_rate)?;
        check_prob("unparsed_rate", self.unparsed_rate)?;
        for (t, s) in &self.susceptibility {
            check_prob(&format!("susceptibility.{}", t.key()), *s)?;
        }
        for p in &self.personas {
            for (t, s) in &p.susceptibility {
                check_prob(&format!("{}.susceptibility.{}", p.persona, t.key()), *s)?;
            }
            let w = &p.web;
            for (name, v) in [
                ("searches_mean", w.searches_mean),
                ("unique_urls_mean", w.unique_urls_mean),
                ("duration_mean_s", w.duration_mean_s),
            ] {
                check_positive(&format!("{}.web.{name}", p.persona), v)?;
            }
            if w.searches_mean < 1.0 || w.unique_urls_mean < 1.0 {
                return Err(SimError::ConfigOutOfRange(format!(
                    "{}: search and unique-URL means must be at least 1",
                    p.persona
                )));
            }
            for (name, v) in [("revisits_mean", w.revisits_mean), ("summaries_mean", w.summaries_mean)]
                .into_iter()
                .chain(w.tool_means.iter().map(|(k, v)| (k.as_str(), *v)))
            {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(SimError::ConfigOutOfRange(format!(
                        "{}.web.{name} = {v} must be non-negative",
                        p.persona
                    )));
                }
            }
            if !(w.duration_sigma.is_finite() && w.duration_sigma >= 0.0) {
                return Err(SimError::ConfigOutOfRange("duration_sigma must be >= 0".into()));
            }
            if w.domains.is_empty() || w.domains.iter().any(|(_, wt)| !(*wt > 0.0)) {
                return Err(SimError::ConfigOutOfRange(format!(
                    "{}: domain pool must be nonempty with positive weights",
                    p.persona
                )));
            }
            let c = &p.coding;
            for (name, v) in [
                ("exec_gap_mean_s", c.exec_gap_mean_s),
                ("think_gap_mean_s", c.think_gap_mean_s),
            ] {
                check_positive(&format!("{}.coding.{name}", p.persona), v)?;
            }
            if c.revisions_mean < 1.0 || c.revision_size_mean < 1.0 {
                return Err(SimError::ConfigOutOfRange(format!(
                    "{}: revision count and size means must be at least 1",
                    p.persona
                )));
            }
        }
        for plan in &self.conditions {
            if plan.trials == 0 {
                return Err(SimError::ConfigOutOfRange(format!(
                    "condition {} has zero trials",
                    plan.condition
                )));
            }
            if plan.task_types.is_empty() || plan.task_types.contains(&TaskType::Opinion) {
                return Err(SimError::InvalidCondition(format!(
                    "condition {} needs coding and/or web task types",
                    plan.condition
                )));
            }
            if plan.condition == Condition::C2 {
                if plan.tactics.is_empty() || plan.tactics.contains(&Tactic::Baseline) {
                    return Err(SimError::InvalidCondition(
                        "C2 needs one or more persuasive tactics".into(),
                    ));
                }
            } else if plan.tactics.iter().any(|t| *t != Tactic::Baseline) {
                return Err(SimError::InvalidCondition(format!(
                    "condition {} only admits the baseline tactic",
                    plan.condition
                )));
            }
        }
        Ok(())
    }

    fn susceptibility_of(&self, persona: &PersonaParams, tactic: Tactic) -> f64 {
        persona
            .susceptibility
            .get(&tactic)
            .or_else(|| self.susceptibility.get(&tactic))
            .copied()
            .unwrap_or(0.0)
    }

    /// Sets susceptibility to zero everywhere.
    pub fn without_persuasion(mut self) -> Self {
        for v in self.susceptibility.values_mut() {
            *v = 0.0;
        }
        for p in &mut self.personas {
            p.susceptibility.clear();
        }
        self
    }
}

/// What the simulator did to a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Persuaded by the injection; `None` for prefill conditions.
    pub persuaded: Option<bool>,
    pub applied_effect: EffectVector,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub trial: TrialRecord,
    pub truth: GroundTruth,
}

/// One trial to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub index: u64,
    pub backbone: String,
    pub persona: usize,
    pub condition: Condition,
    pub tactic: Tactic,
    pub task_type: TaskType,
    pub claim: usize,
    pub distractor_count: u32,
}

/// Expands the condition plans into trial specs, in output order.
pub fn trial_specs(config: &SimConfig) -> Vec<TrialSpec> {
    let mut out = Vec::new();
    let mut index = 0u64;
    for plan in &config.conditions {
        let tactics = if plan.condition == Condition::C2 {
            plan.tactics.clone()
        } else {
            vec![Tactic::Baseline]
        };
        for backbone in &config.backbones {
            for persona in 0..config.personas.len() {
                for tactic in &tactics {
                    for task_type in &plan.task_types {
                        for k in 0..plan.trials {
                            let probed = plan.condition.has_probes();
                            let dc = &config.distractor_counts;
                            out.push(TrialSpec {
                                index,
                                backbone: backbone.clone(),
                                persona,
                                condition: plan.condition,
                                tactic: *tactic,
                                task_type: *task_type,
                                claim: (k as usize) % config.claims.len(),
                                distractor_count: if probed { dc[k as usize % dc.len()] } else { 0 },
                            });
                            index += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

fn trial_id(spec: &TrialSpec, persona: &Persona) -> String {
    format!(
        "{}-{}-{}-{}-{}-{:06}",
        spec.backbone,
        persona.as_str().to_lowercase(),
        spec.condition.as_str().to_lowercase(),
        spec.tactic.key(),
        spec.task_type.as_str(),
        spec.index
    )
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let d: Poisson<f64> = Poisson::new(lambda).expect("positive rate");
    d.sample(rng) as u64
}

/// Log-normal draw with the given mean.
fn lognormal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    let mean = mean.max(1e-3);
    let mu = mean.ln() - sigma * sigma / 2.0;
    LogNormal::new(mu, sigma).expect("valid log-normal").sample(rng)
}

struct Clock {
    t: f64,
    events: Vec<TraceEvent>,
}

impl Clock {
    fn step(&mut self, rng: &mut ChaCha8Rng, payload: EventPayload) {
        self.t = round_ms(self.t + 1.0 + rng.random::<f64>() * 2.0);
        self.events.push(TraceEvent::new(self.t, payload));
    }
}

fn probe_text(stance: Stance) -> String {
    match stance {
        Stance::A => "(A)".into(),
        Stance::B => "(B)".into(),
        Stance::Unparsed => "I would rather not pick a side.".into(),
    }
}

fn query_pool(claim: &ClaimPair) -> Vec<String> {
    let topic = claim.topic.to_lowercase();
    [
        topic.to_string(),
        format!("{topic} evidence"),
        format!("{topic} policy debate"),
        format!("{topic} recent research"),
        format!("arguments for {topic}"),
        format!("arguments against {topic}"),
        format!("{topic} statistics"),
        format!("expert opinion {topic}"),
    ]
    .to_vec()
}

fn simulate_web(
    rng: &mut ChaCha8Rng,
    clock: &mut Clock,
    p: &WebParams,
    e: &EffectVector,
    claim: &ClaimPair,
) {
    let start = clock.t;
    let searches = 1 + poisson(rng, p.searches_mean - 1.0 + e.searches);
    let unique = 1 + poisson(rng, p.unique_urls_mean - 1.0 + e.unique_urls);
    let revisits = poisson(rng, p.revisits_mean + e.revisits);
    let summaries = poisson(rng, p.summaries_mean + e.summaries);
    let duration = round_ms(lognormal(rng, p.duration_mean_s + e.duration_s, p.duration_sigma)).max(0.01);

    let total_weight: f64 = p.domains.iter().map(|(_, w)| w).sum();
    let pick_domain = |rng: &mut ChaCha8Rng| {
        let mut x = rng.random::<f64>() * total_weight;
        for (d, w) in &p.domains {
            if x < *w {
                return d.clone();
            }
            x -= w;
        }
        p.domains[p.domains.len() - 1].0.clone()
    };
    let urls: Vec<(String, String)> = (0..unique)
        .map(|k| {
            let domain = pick_domain(rng);
            (format!("https://{domain}/{}/{k}", claim.claim_id), domain)
        })
        .collect();
    let queries = query_pool(claim);

    let mut rest: Vec<EventPayload> = Vec::new();
    for _ in 1..searches {
        rest.push(EventPayload::Search {
            query: queries[rng.random_range(0..queries.len())].clone(),
        });
    }
    for (url, domain) in urls.iter().skip(1) {
        rest.push(EventPayload::Visit {
            url: url.clone(),
            domain: domain.clone(),
        });
    }
    for _ in 0..revisits {
        let (url, domain) = &urls[rng.random_range(0..urls.len())];
        rest.push(EventPayload::Visit {
            url: url.clone(),
            domain: domain.clone(),
        });
    }
    for _ in 0..summaries {
        rest.push(EventPayload::Summarize);
    }
    for (tool, mean) in &p.tool_means {
        for _ in 0..poisson(rng, mean + e.tool_calls) {
            rest.push(EventPayload::ToolCall {
                tool_name: tool.clone(),
            });
        }
    }
    rest.shuffle(rng);

    let mut payloads = vec![
        EventPayload::Search {
            query: queries[rng.random_range(0..queries.len())].clone(),
        },
        EventPayload::Visit {
            url: urls[0].0.clone(),
            domain: urls[0].1.clone(),
        },
    ];
    payloads.extend(rest);

    let mut offsets: Vec<f64> = (0..payloads.len())
        .map(|_| round_ms(rng.random::<f64>() * duration))
        .collect();
    offsets.sort_by(f64::total_cmp);
    clock.events.push(TraceEvent::new(start, EventPayload::TaskStart));
    for (payload, off) in payloads.into_iter().zip(offsets) {
        clock.events.push(TraceEvent::new(round_ms(start + off), payload));
    }
    clock.t = round_ms(start + duration);
    clock.events.push(TraceEvent::new(clock.t, EventPayload::TaskEnd {
        status: TaskStatus::Completed,
    }));
}

fn simulate_coding(rng: &mut ChaCha8Rng, clock: &mut Clock, p: &CodingParams, e: &EffectVector) {
    clock.events.push(TraceEvent::new(clock.t, EventPayload::TaskStart));
    let revisions = 1 + poisson(rng, p.revisions_mean - 1.0 + e.revisions);
    let size_mean = (p.revision_size_mean + e.revision_size).max(1.0);
    let geometric = Geometric::new(1.0 / size_mean).expect("p in (0, 1]");
    for i in 0..revisions {
        clock.t = round_ms(clock.t + lognormal(rng, p.think_gap_mean_s, p.gap_sigma));
        let lines = 1 + geometric.sample(rng).min(u64::from(u32::MAX - 1)) as u32;
        clock.events.push(TraceEvent::new(clock.t, EventPayload::CodeRevision {
            lines_changed: lines,
        }));
        clock.t = round_ms(clock.t + lognormal(rng, p.exec_gap_mean_s + e.exec_gap_s, p.gap_sigma));
        clock.events.push(TraceEvent::new(clock.t, EventPayload::CodeExec {
            passed: i + 1 == revisions,
        }));
    }
    clock.t = round_ms(clock.t + 0.5);
    clock.events.push(TraceEvent::new(clock.t, EventPayload::TaskEnd {
        status: TaskStatus::Completed,
    }));
}

/// Generates one trial from its spec and sub-seed.
pub fn simulate_trial(config: &SimConfig, spec: &TrialSpec, seed: u64) -> SimOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = &config.personas[spec.persona];
    let claim = &config.claims[spec.claim];
    let mut clock = Clock {
        t: 0.0,
        events: Vec::new(),
    };

    let mut persuaded = None;
    let mut effect = EffectVector::default();
    if spec.condition.has_probes() {
        let initial = if rng.random::<bool>() { Side::A } else { Side::B };
        let s = config.susceptibility_of(params, spec.tactic);
        let u: f64 = rng.random();
        let fade_cut = s + (1.0 - s) * config.fade_rate;
        let (post, fin) = if u < s {
            (initial.flipped(), initial.flipped())
        } else if u < fade_cut {
            (initial.flipped(), initial)
        } else if rng.random::<f64>() < config.late_change_rate {
            (initial, initial.flipped())
        } else {
            (initial, initial)
        };
        let is_persuaded = u < s;
        persuaded = Some(is_persuaded);
        if is_persuaded {
            effect = config.belief_effect;
        }

        let probe = |clock: &mut Clock, rng: &mut ChaCha8Rng, phase, side: Side| {
            let stance = if rng.random::<f64>() < config.unparsed_rate {
                Stance::Unparsed
            } else {
                side.into()
            };
            clock.step(rng, EventPayload::StanceProbe {
                phase,
                stance,
                raw_text: probe_text(stance),
            });
        };
        probe(&mut clock, &mut rng, ProbePhase::Initial, initial);
        let injection = if spec.condition == Condition::C2 {
            EventPayload::Injection {
                injection_kind: InjectionKind::Persuasive,
                text: render(Template::PersuasiveClaim, &[
                    ("topic", &claim.topic),
                    ("prior", claim.side_text(initial)),
                    ("target", claim.side_text(initial.flipped())),
                    ("tactic", spec.tactic.label()),
                    ("definition", tactic_definition(spec.tactic)),
                ]),
            }
        } else {
            EventPayload::Injection {
                injection_kind: InjectionKind::Neutral,
                text: format!("Please restate your view on {}.", claim.topic.to_lowercase()),
            }
        };
        if spec.condition != Condition::C0 {
            clock.step(&mut rng, injection);
            clock.step(&mut rng, EventPayload::Commitment);
        }
        probe(&mut clock, &mut rng, ProbePhase::Post, post);
        for index in 0..spec.distractor_count {
            clock.step(&mut rng, EventPayload::Distractor { index });
        }
        probe(&mut clock, &mut rng, ProbePhase::Final, fin);
    } else {
        let regime = spec.condition.prefill_regime().expect("prefill condition");
        effect = match spec.condition {
            Condition::B => config.belief_effect,
            Condition::NB => config.disbelief_effect,
            _ => EffectVector::default(),
        };
        clock.step(&mut rng, EventPayload::Prefill {
            regime,
            text: render(Template::for_prefill(regime), &[("claim", &claim.side_a)]),
        });
    }

    clock.t = round_ms(clock.t + 1.0);
    match spec.task_type {
        TaskType::Web => simulate_web(&mut rng, &mut clock, &params.web, &effect, claim),
        TaskType::Coding => simulate_coding(&mut rng, &mut clock, &params.coding, &effect),
        TaskType::Opinion => unreachable!("validated"),
    }

    let header = TrialHeader {
        trial_id: trial_id(spec, &params.persona),
        backbone: spec.backbone.clone(),
        persona: params.persona.clone(),
        tactic: spec.tactic,
        condition: spec.condition,
        task_type: spec.task_type,
        claim_id: claim.claim_id.clone(),
        distractor_count: spec.distractor_count,
        seed,
        schema_version: SCHEMA_VERSION,
    };
    SimOutcome {
        trial: TrialRecord {
            header,
            events: clock.events,
        },
        truth: GroundTruth {
            persuaded,
            applied_effect: effect,
            seed,
        },
    }
}

/// Generates every planned trial. Output order is the plan order whatever the
/// number of worker threads.
pub fn run_pipeline(config: &SimConfig) -> Result<Vec<SimOutcome>, SimError> {
    config.validate()?;
    let specs = trial_specs(config);
    Ok(specs
        .par_iter()
        .map(|spec| simulate_trial(config, spec, substream_seed(config.seed, spec.index)))
        .collect())
}

/// Sidecar document accompanying an emitted corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub seed: u64,
    pub config: SimConfig,
    pub trials: BTreeMap<String, GroundTruth>,
}

pub const TRACES_FILE: &str = "traces.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Writes `traces.jsonl` and `ground_truth.json` into `dir`.
pub fn emit_corpus(outcomes: &[SimOutcome], config: &SimConfig, dir: &Path) -> Result<(), SimError> {
    if outcomes.is_empty() {
        return Err(SimError::EmptyCorpus);
    }
    fs::create_dir_all(dir)?;
    let trials: Vec<TrialRecord> = outcomes.iter().map(|o| o.trial.clone()).collect();
    let mut w = BufWriter::new(fs::File::create(dir.join(TRACES_FILE))?);
    write_trace_file(&trials, &mut w)?;
    w.flush()?;
    let sidecar = GroundTruthFile {
        seed: config.seed,
        config: config.clone(),
        trials: outcomes
            .iter()
            .map(|o| (o.trial.header.trial_id.clone(), o.truth.clone()))
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&sidecar).map_err(io::Error::from)?;
    json.push('\n');
    fs::write(dir.join(GROUND_TRUTH_FILE), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stance_dynamics::{classify, trajectory, Outcome, TrajectoryStatus};
    use crate::trace_model::{parse_trace_bytes, to_trace_string, validate_trial, EventKind};

    fn small() -> SimConfig {
        SimConfig {
            seed: 17,
            conditions: vec![
                ConditionPlan {
                    condition: Condition::C2,
                    tactics: vec![Tactic::Anchoring, Tactic::EvidenceBased],
                    task_types: vec![TaskType::Web, TaskType::Coding],
                    trials: 3,
                },
                ConditionPlan {
                    condition: Condition::B,
                    tactics: vec![],
                    task_types: vec![TaskType::Web],
                    trials: 2,
                },
                ConditionPlan {
                    condition: Condition::C0,
                    tactics: vec![],
                    task_types: vec![TaskType::Coding],
                    trials: 2,
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = to_trace_string(&run_pipeline(&small()).unwrap().into_iter().map(|o| o.trial).collect::<Vec<_>>());
        let b = to_trace_string(&run_pipeline(&small()).unwrap().into_iter().map(|o| o.trial).collect::<Vec<_>>());
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 18;
        let c = to_trace_string(&run_pipeline(&other).unwrap().into_iter().map(|o| o.trial).collect::<Vec<_>>());
        assert_ne!(a, c);
    }

    #[test]
    fn trials_are_valid_and_protocol_shaped() {
        let out = run_pipeline(&small()).unwrap();
        assert_eq!(out.len(), 6 * (2 * 2 * 3 + 2 + 2));
        for o in &out {
            assert!(validate_trial(&o.trial).is_empty(), "{:?}", validate_trial(&o.trial));
            let kinds: Vec<EventKind> = o.trial.events.iter().map(|e| e.kind()).collect();
            match o.trial.header.condition {
                Condition::C2 => {
                    let k = o.trial.header.distractor_count as usize;
                    assert_eq!(kinds[0], EventKind::StanceProbe);
                    assert_eq!(kinds[1], EventKind::Injection);
                    assert_eq!(kinds[2], EventKind::Commitment);
                    assert_eq!(kinds[3], EventKind::StanceProbe);
                    assert!(kinds[4..4 + k].iter().all(|x| *x == EventKind::Distractor));
                    assert_eq!(kinds[4 + k], EventKind::StanceProbe);
                    assert_eq!(kinds[5 + k], EventKind::TaskStart);
                    assert_eq!(*kinds.last().unwrap(), EventKind::TaskEnd);
                }
                Condition::C0 => {
                    assert!(!kinds.contains(&EventKind::Injection));
                    assert!(!kinds.contains(&EventKind::Commitment));
                }
                Condition::B => {
                    assert!(!kinds.contains(&EventKind::StanceProbe));
                    assert_eq!(kinds[0], EventKind::Prefill);
                }
                _ => {}
            }
            // ground truth agrees with the emitted probes
            if let TrajectoryStatus::Classified(t) = trajectory(&o.trial) {
                assert_eq!(o.truth.persuaded, Some(classify(&t) == Outcome::Persisted));
            }
        }
    }

    #[test]
    fn zero_susceptibility_never_persuades() {
        let cfg = small().without_persuasion();
        for o in run_pipeline(&cfg).unwrap() {
            if o.trial.header.condition.has_probes() {
                assert_eq!(o.truth.persuaded, Some(false));
                assert!(o.truth.applied_effect.is_zero());
                if let TrajectoryStatus::Classified(t) = trajectory(&o.trial) {
                    assert_ne!(classify(&t), Outcome::Persisted);
                }
            }
        }
    }

    #[test]
    fn round_trips_through_parser() {
        let out = run_pipeline(&small()).unwrap();
        let trials: Vec<TrialRecord> = out.into_iter().map(|o| o.trial).collect();
        let parsed = parse_trace_bytes(to_trace_string(&trials).as_bytes());
        assert!(parsed.errors.is_empty());
        assert_eq!(parsed.trials, trials);
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.fade_rate = 1.5;
        assert!(matches!(c.validate(), Err(SimError::ConfigOutOfRange(_))));
        let mut c = small();
        c.conditions[1].tactics = vec![Tactic::Anchoring];
        assert!(matches!(c.validate(), Err(SimError::InvalidCondition(_))));
        let mut c = small();
        c.conditions[0].tactics = vec![Tactic::Baseline];
        assert!(matches!(c.validate(), Err(SimError::InvalidCondition(_))));
        let json = serde_json::to_string(&SimConfig::default()).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, SimConfig::default());
        let partial: SimConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.personas.len(), 6);
    }

    #[test]
    fn dependency_map() {
        let e = SimConfig::default().belief_effect;
        assert!(is_affected("num_searches", &e));
        assert!(is_affected("num_web_events", &e));
        assert!(!is_affected("num_summaries", &e));
        assert!(!is_affected("tool_drift", &e));
        assert!(!is_affected("cd", &e));
    }
}
