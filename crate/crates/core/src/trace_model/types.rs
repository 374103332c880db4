use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Persona-style system prompt family. Unknown labels are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Persona {
    Neutral,
    Gpt,
    Claude,
    Llama,
    Mistral,
    Qwen,
    Gemini,
    Other(String),
}

impl Persona {
    pub const KNOWN: [Persona; 7] = [
        Persona::Neutral,
        Persona::Gpt,
        Persona::Claude,
        Persona::Llama,
        Persona::Mistral,
        Persona::Qwen,
        Persona::Gemini,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            Persona::Neutral => "Neutral",
            Persona::Gpt => "GPT",
            Persona::Claude => "Claude",
            Persona::Llama => "LLaMA",
            Persona::Mistral => "Mistral",
            Persona::Qwen => "Qwen",
            Persona::Gemini => "Gemini",
            Persona::Other(s) => s,
        }
    }
}

impl From<String> for Persona {
    fn from(s: String) -> Self {
        match s.as_str() {
            "Neutral" => Persona::Neutral,
            "GPT" => Persona::Gpt,
            "Claude" => Persona::Claude,
            "LLaMA" => Persona::Llama,
            "Mistral" => Persona::Mistral,
            "Qwen" => Persona::Qwen,
            "Gemini" => Persona::Gemini,
            _ => Persona::Other(s),
        }
    }
}

impl From<Persona> for String {
    fn from(p: Persona) -> Self {
        p.as_str().to_string()
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tactic {
    Baseline,
    LogicalAppeal,
    AuthorityEndorsement,
    EvidenceBased,
    PrimingUrgency,
    Anchoring,
}

impl Tactic {
    pub const ALL: [Tactic; 6] = [
        Tactic::Baseline,
        Tactic::LogicalAppeal,
        Tactic::AuthorityEndorsement,
        Tactic::EvidenceBased,
        Tactic::PrimingUrgency,
        Tactic::Anchoring,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Tactic::Baseline => "Baseline (none)",
            Tactic::LogicalAppeal => "Logical Appeal",
            Tactic::AuthorityEndorsement => "Authority Endorsement",
            Tactic::EvidenceBased => "Evidence-based",
            Tactic::PrimingUrgency => "Priming Urgency",
            Tactic::Anchoring => "Anchoring",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Tactic::Baseline => "baseline",
            Tactic::LogicalAppeal => "logical_appeal",
            Tactic::AuthorityEndorsement => "authority_endorsement",
            Tactic::EvidenceBased => "evidence_based",
            Tactic::PrimingUrgency => "priming_urgency",
            Tactic::Anchoring => "anchoring",
        }
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Experimental condition of a trial.
///
/// `C0`/`C1`/`C2` are the on-the-fly conditions (probing only, neutral
/// injection, persuasive injection). `C0P`/`B`/`NB` are the prefill
/// conditions (neutral, belief, disbelief) which carry no probing at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    C0,
    C1,
    C2,
    C0P,
    B,
    NB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    OnTheFly,
    Prefill,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::OnTheFly => "on_the_fly",
            Setting::Prefill => "prefill",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::C0,
        Condition::C1,
        Condition::C2,
        Condition::C0P,
        Condition::B,
        Condition::NB,
    ];

    pub fn setting(self) -> Setting {
        match self {
            Condition::C0 | Condition::C1 | Condition::C2 => Setting::OnTheFly,
            Condition::C0P | Condition::B | Condition::NB => Setting::Prefill,
        }
    }

    pub fn has_probes(self) -> bool {
        self.setting() == Setting::OnTheFly
    }

    /// Conditions whose tactic must be `Baseline`.
    pub fn requires_baseline_tactic(self) -> bool {
        matches!(
            self,
            Condition::C0 | Condition::C0P | Condition::B | Condition::NB
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::C0 => "C0",
            Condition::C1 => "C1",
            Condition::C2 => "C2",
            Condition::C0P => "C0P",
            Condition::B => "B",
            Condition::NB => "NB",
        }
    }

    /// The prefill regime a prefill condition announces, if any.
    pub fn prefill_regime(self) -> Option<PrefillRegime> {
        match self {
            Condition::C0P => Some(PrefillRegime::Neutral),
            Condition::B => Some(PrefillRegime::Belief),
            Condition::NB => Some(PrefillRegime::Disbelief),
            _ => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown condition '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Opinion,
    Coding,
    Web,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Opinion => "opinion",
            TaskType::Coding => "coding",
            TaskType::Web => "web",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialHeader {
    pub trial_id: String,
    pub backbone: String,
    pub persona: Persona,
    pub tactic: Tactic,
    pub condition: Condition,
    pub task_type: TaskType,
    pub claim_id: String,
    pub distractor_count: u32,
    pub seed: u64,
    pub schema_version: u32,
}

/// Answer extracted from a stance probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stance {
    A,
    B,
    #[serde(rename = "unparsed")]
    Unparsed,
}

/// A parsed side of a claim pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl Stance {
    pub fn side(self) -> Option<Side> {
        match self {
            Stance::A => Some(Side::A),
            Stance::B => Some(Side::B),
            Stance::Unparsed => None,
        }
    }
}

impl From<Side> for Stance {
    fn from(s: Side) -> Self {
        match s {
            Side::A => Stance::A,
            Side::B => Stance::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePhase {
    Initial,
    Post,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Neutral,
    Persuasive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefillRegime {
    Neutral,
    Belief,
    Disbelief,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    Terminated,
    Aborted,
}

/// Kind-specific event data. Serialized flattened into the event record
/// with the `kind` field as discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    StanceProbe {
        phase: ProbePhase,
        stance: Stance,
        raw_text: String,
    },
    Injection {
        injection_kind: InjectionKind,
        text: String,
    },
    Commitment,
    /// Belief instruction delivered at task time in the prefill conditions.
    Prefill {
        regime: PrefillRegime,
        text: String,
    },
    Distractor {
        index: u32,
    },
    TaskStart,
    Search {
        query: String,
    },
    Visit {
        url: String,
        domain: String,
    },
    Summarize,
    ToolCall {
        tool_name: String,
    },
    CodeExec {
        passed: bool,
    },
    CodeRevision {
        lines_changed: u32,
    },
    TaskEnd {
        status: TaskStatus,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    StanceProbe,
    Injection,
    Commitment,
    Prefill,
    Distractor,
    TaskStart,
    Search,
    Visit,
    Summarize,
    ToolCall,
    CodeExec,
    CodeRevision,
    TaskEnd,
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::StanceProbe { .. } => EventKind::StanceProbe,
            EventPayload::Injection { .. } => EventKind::Injection,
            EventPayload::Commitment => EventKind::Commitment,
            EventPayload::Prefill { .. } => EventKind::Prefill,
            EventPayload::Distractor { .. } => EventKind::Distractor,
            EventPayload::TaskStart => EventKind::TaskStart,
            EventPayload::Search { .. } => EventKind::Search,
            EventPayload::Visit { .. } => EventKind::Visit,
            EventPayload::Summarize => EventKind::Summarize,
            EventPayload::ToolCall { .. } => EventKind::ToolCall,
            EventPayload::CodeExec { .. } => EventKind::CodeExec,
            EventPayload::CodeRevision { .. } => EventKind::CodeRevision,
            EventPayload::TaskEnd { .. } => EventKind::TaskEnd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Seconds since trial start.
    pub t: f64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl TraceEvent {
    pub fn new(t: f64, payload: EventPayload) -> Self {
        Self { t, payload }
    }

    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub header: TrialHeader,
    pub events: Vec<TraceEvent>,
}

impl TrialRecord {
    pub fn trial_id(&self) -> &str {
        &self.header.trial_id
    }

    /// Time of the unique `TaskStart`/`TaskEnd` pair, when both are present.
    pub fn task_window(&self) -> Option<(f64, f64)> {
        let start = self
            .events
            .iter()
            .find(|e| e.kind() == EventKind::TaskStart)?
            .t;
        let end = self
            .events
            .iter()
            .find(|e| e.kind() == EventKind::TaskEnd)?
            .t;
        Some((start, end))
    }

    /// Index range of the events strictly between `TaskStart` and `TaskEnd`.
    pub fn task_event_span(&self) -> Option<std::ops::Range<usize>> {
        let start = self
            .events
            .iter()
            .position(|e| e.kind() == EventKind::TaskStart)?;
        let end = self
            .events
            .iter()
            .position(|e| e.kind() == EventKind::TaskEnd)?;
        (end > start).then_some(start + 1..end)
    }

    pub fn probe(&self, phase: ProbePhase) -> Option<Stance> {
        self.events.iter().find_map(|e| match &e.payload {
            EventPayload::StanceProbe { phase: p, stance, .. } if *p == phase => Some(*stance),
            _ => None,
        })
    }
}

/// Two mutually exclusive claims on one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimPair {
    pub claim_id: String,
    pub topic: String,
    pub side_a: String,
    pub side_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_b: Option<Vec<f64>>,
}
