use std::fmt;

use serde::Serialize;

use super::types::{EventKind, EventPayload, TrialRecord};

/// The trial invariant a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyTrialId,
    /// Prefill conditions (C0P/B/NB) carry no stance probes.
    PrefillHasProbe,
    /// Prefill conditions carry no injection or commitment interaction.
    PrefillHasInteraction,
    /// On-the-fly conditions (C0/C1/C2) carry stance probes.
    MissingProbes,
    /// C0/C0P/B/NB use the baseline tactic.
    TacticNotBaseline,
    PrefillOutsidePrefillCondition,
    PrefillRegimeMismatch,
    InvalidTime,
    EventsUnsorted,
    DuplicateTaskStart,
    DuplicateTaskEnd,
    TaskEndBeforeStart,
    DomainMismatch,
    ZeroLinesChanged,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::EmptyTrialId => "empty_trial_id",
            Rule::PrefillHasProbe => "prefill_has_probe",
            Rule::PrefillHasInteraction => "prefill_has_interaction",
            Rule::MissingProbes => "missing_probes",
            Rule::TacticNotBaseline => "tactic_not_baseline",
            Rule::PrefillOutsidePrefillCondition => "prefill_outside_prefill_condition",
            Rule::PrefillRegimeMismatch => "prefill_regime_mismatch",
            Rule::InvalidTime => "invalid_time",
            Rule::EventsUnsorted => "events_unsorted",
            Rule::DuplicateTaskStart => "duplicate_task_start",
            Rule::DuplicateTaskEnd => "duplicate_task_end",
            Rule::TaskEndBeforeStart => "task_end_before_start",
            Rule::DomainMismatch => "domain_mismatch",
            Rule::ZeroLinesChanged => "zero_lines_changed",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub detail: String,
}

impl Violation {
    fn new(rule: Rule, detail: impl Into<String>) -> Self {
        Self {
            rule,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Host of `url`, lowercased, with a leading `www.` removed. No public
/// suffix handling: `news.example.co.uk` stays as is.
pub fn registrable_domain(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    let host = parsed.host_str()?.to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host).to_string();
    (!host.is_empty()).then_some(host)
}

/// Checks every header and event invariant of a trial. Each rule is reported
/// at most once per trial.
pub fn validate_trial(trial: &TrialRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let h = &trial.header;

    if h.trial_id.is_empty() {
        out.push(Violation::new(Rule::EmptyTrialId, "trial_id is empty"));
    }

    let probes = trial
        .events
        .iter()
        .filter(|e| e.kind() == EventKind::StanceProbe)
        .count();
    if h.condition.has_probes() {
        if probes == 0 {
            out.push(Violation::new(
                Rule::MissingProbes,
                format!("condition {} requires stance probes", h.condition),
            ));
        }
    } else if probes > 0 {
        out.push(Violation::new(
            Rule::PrefillHasProbe,
            format!(
                "condition {} is a prefill condition but has {probes} stance probe(s)",
                h.condition
            ),
        ));
    }

    if h.condition.requires_baseline_tactic() && h.tactic != super::Tactic::Baseline {
        out.push(Violation::new(
            Rule::TacticNotBaseline,
            format!("condition {} requires tactic baseline, got {}", h.condition, h.tactic),
        ));
    }

    if !h.condition.has_probes()
        && trial
            .events
            .iter()
            .any(|e| matches!(e.kind(), EventKind::Injection | EventKind::Commitment))
    {
        out.push(Violation::new(
            Rule::PrefillHasInteraction,
            format!("condition {} has injection or commitment events", h.condition),
        ));
    }

    let mut prefill_outside = false;
    let mut regime_mismatch = false;
    for e in &trial.events {
        if let EventPayload::Prefill { regime, .. } = &e.payload {
            match h.condition.prefill_regime() {
                None => prefill_outside = true,
                Some(expected) if expected != *regime => regime_mismatch = true,
                _ => {}
            }
        }
    }
    if prefill_outside {
        out.push(Violation::new(
            Rule::PrefillOutsidePrefillCondition,
            format!("prefill event in on-the-fly condition {}", h.condition),
        ));
    }
    if regime_mismatch {
        out.push(Violation::new(
            Rule::PrefillRegimeMismatch,
            format!("prefill regime does not match condition {}", h.condition),
        ));
    }

    if let Some(bad) = trial.events.iter().position(|e| !(e.t.is_finite() && e.t >= 0.0)) {
        out.push(Violation::new(
            Rule::InvalidTime,
            format!("event {bad} has time {}", trial.events[bad].t),
        ));
    }
    if let Some(i) = trial.events.windows(2).position(|w| w[1].t < w[0].t) {
        out.push(Violation::new(
            Rule::EventsUnsorted,
            format!(
                "event {} at t={} precedes event {} at t={}",
                i + 1,
                trial.events[i + 1].t,
                i,
                trial.events[i].t
            ),
        ));
    }

    let starts: Vec<f64> = trial
        .events
        .iter()
        .filter(|e| e.kind() == EventKind::TaskStart)
        .map(|e| e.t)
        .collect();
    let ends: Vec<f64> = trial
        .events
        .iter()
        .filter(|e| e.kind() == EventKind::TaskEnd)
        .map(|e| e.t)
        .collect();
    if starts.len() > 1 {
        out.push(Violation::new(
            Rule::DuplicateTaskStart,
            format!("{} task_start events", starts.len()),
        ));
    }
    if ends.len() > 1 {
        out.push(Violation::new(
            Rule::DuplicateTaskEnd,
            format!("{} task_end events", ends.len()),
        ));
    }
    if let (Some(s), Some(e)) = (starts.first(), ends.first()) {
        if e < s {
            out.push(Violation::new(
                Rule::TaskEndBeforeStart,
                format!("task_end at {e} before task_start at {s}"),
            ));
        }
    }

    for e in &trial.events {
        if let EventPayload::Visit { url, domain } = &e.payload {
            match registrable_domain(url) {
                Some(expected) if &expected == domain => {}
                Some(expected) => {
                    out.push(Violation::new(
                        Rule::DomainMismatch,
                        format!("visit to {url} records domain '{domain}', expected '{expected}'"),
                    ));
                    break;
                }
                None => {
                    out.push(Violation::new(
                        Rule::DomainMismatch,
                        format!("visit url '{url}' has no host"),
                    ));
                    break;
                }
            }
        }
    }

    if trial
        .events
        .iter()
        .any(|e| matches!(e.payload, EventPayload::CodeRevision { lines_changed: 0 }))
    {
        out.push(Violation::new(
            Rule::ZeroLinesChanged,
            "code_revision with lines_changed = 0",
        ));
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_model::types::*;

    fn header(condition: Condition, tactic: Tactic) -> TrialHeader {
        TrialHeader {
            trial_id: "t1".into(),
            backbone: "bb".into(),
            persona: Persona::Neutral,
            tactic,
            condition,
            task_type: TaskType::Web,
            claim_id: "c1".into(),
            distractor_count: 1,
            seed: 7,
            schema_version: 1,
        }
    }

    fn probe(t: f64, phase: ProbePhase) -> TraceEvent {
        TraceEvent::new(
            t,
            EventPayload::StanceProbe {
                phase,
                stance: Stance::A,
                raw_text: "(A) yes".into(),
            },
        )
    }

    fn rules(trial: &TrialRecord) -> Vec<Rule> {
        validate_trial(trial).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn domains() {
        assert_eq!(
            registrable_domain("https://WWW.Example.com/a?b=1").as_deref(),
            Some("example.com")
        );
        assert_eq!(
            registrable_domain("http://news.bbc.co.uk/x").as_deref(),
            Some("news.bbc.co.uk")
        );
        assert_eq!(registrable_domain("not a url"), None);
    }

    #[test]
    fn probe_in_prefill_trial() {
        let t = TrialRecord {
            header: header(Condition::B, Tactic::Baseline),
            events: vec![probe(0.0, ProbePhase::Initial)],
        };
        assert_eq!(rules(&t), vec![Rule::PrefillHasProbe]);
    }

    #[test]
    fn on_the_fly_needs_probes() {
        let t = TrialRecord {
            header: header(Condition::C2, Tactic::Anchoring),
            events: vec![],
        };
        assert_eq!(rules(&t), vec![Rule::MissingProbes]);
    }

    #[test]
    fn tactic_rule() {
        let t = TrialRecord {
            header: header(Condition::C0P, Tactic::Anchoring),
            events: vec![],
        };
        assert_eq!(rules(&t), vec![Rule::TacticNotBaseline]);
    }

    #[test]
    fn ordering_and_task_window() {
        let t = TrialRecord {
            header: header(Condition::C1, Tactic::Baseline),
            events: vec![
                probe(1.0, ProbePhase::Initial),
                TraceEvent::new(5.0, EventPayload::TaskStart),
                TraceEvent::new(3.0, EventPayload::TaskEnd {
                    status: TaskStatus::Completed,
                }),
                TraceEvent::new(6.0, EventPayload::TaskEnd {
                    status: TaskStatus::Completed,
                }),
            ],
        };
        assert_eq!(
            rules(&t),
            vec![
                Rule::EventsUnsorted,
                Rule::DuplicateTaskEnd,
                Rule::TaskEndBeforeStart
            ]
        );
    }

    #[test]
    fn visit_domain_and_revision_size() {
        let t = TrialRecord {
            header: header(Condition::C0P, Tactic::Baseline),
            events: vec![
                TraceEvent::new(0.0, EventPayload::Visit {
                    url: "https://www.example.org/".into(),
                    domain: "www.example.org".into(),
                }),
                TraceEvent::new(1.0, EventPayload::CodeRevision { lines_changed: 0 }),
                TraceEvent::new(f64::NAN, EventPayload::Summarize),
            ],
        };
        assert_eq!(
            rules(&t),
            vec![Rule::InvalidTime, Rule::DomainMismatch, Rule::ZeroLinesChanged]
        );
    }

    #[test]
    fn prefill_regime_checks() {
        let t = TrialRecord {
            header: header(Condition::NB, Tactic::Baseline),
            events: vec![TraceEvent::new(0.0, EventPayload::Prefill {
                regime: PrefillRegime::Belief,
                text: String::new(),
            })],
        };
        assert_eq!(rules(&t), vec![Rule::PrefillRegimeMismatch]);
        let t = TrialRecord {
            header: header(Condition::C1, Tactic::Baseline),
            events: vec![
                probe(0.0, ProbePhase::Initial),
                TraceEvent::new(1.0, EventPayload::Prefill {
                    regime: PrefillRegime::Neutral,
                    text: String::new(),
                }),
            ],
        };
        assert_eq!(rules(&t), vec![Rule::PrefillOutsidePrefillCondition]);
    }
}
