//! Stance trajectories and persuasion outcome tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numeric::{format_scaled, percent_half_up_scaled};
use crate::trace_model::{
    Condition, Persona, ProbePhase, Side, Tactic, TaskType, TrialHeader, TrialRecord,
};

/// Stances at the initial, post-exposure and final probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StanceTrajectory {
    pub initial: Side,
    pub post: Side,
    #[serde(rename = "final")]
    pub final_: Side,
    pub distractor_count: u32,
}

impl StanceTrajectory {
    pub fn new(initial: Side, post: Side, final_: Side, distractor_count: u32) -> Self {
        Self {
            initial,
            post,
            final_,
            distractor_count,
        }
    }

    /// Compact `A-B-B` rendering.
    pub fn notation(&self) -> String {
        let s = |x: Side| match x {
            Side::A => 'A',
            Side::B => 'B',
        };
        format!("{}-{}-{}", s(self.initial), s(self.post), s(self.final_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Persisted,
    Faded,
    NoChange,
}

/// A change at the post-exposure probe either persists or fades by the final
/// probe; no immediate change is `NoChange` whatever the final probe says.
pub fn classify(t: &StanceTrajectory) -> Outcome {
    if t.post == t.initial {
        Outcome::NoChange
    } else if t.final_ == t.post {
        Outcome::Persisted
    } else {
        Outcome::Faded
    }
}

pub fn persuasion_success(t: &StanceTrajectory) -> bool {
    classify(t) == Outcome::Persisted
}

/// `A-A-B`: unchanged after exposure, changed only at the final probe.
pub fn is_late_change(t: &StanceTrajectory) -> bool {
    t.post == t.initial && t.final_ != t.initial
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "trajectory", rename_all = "snake_case")]
pub enum TrajectoryStatus {
    /// Prefill conditions are never probed.
    NotProbed,
    /// A probe is missing or its answer could not be parsed.
    Excluded,
    Classified(StanceTrajectory),
}

pub fn trajectory(trial: &TrialRecord) -> TrajectoryStatus {
    if !trial.header.condition.has_probes() {
        return TrajectoryStatus::NotProbed;
    }
    let side = |phase| trial.probe(phase).and_then(|s| s.side());
    match (
        side(ProbePhase::Initial),
        side(ProbePhase::Post),
        side(ProbePhase::Final),
    ) {
        (Some(i), Some(p), Some(f)) => TrajectoryStatus::Classified(StanceTrajectory::new(
            i,
            p,
            f,
            trial.header.distractor_count,
        )),
        _ => TrajectoryStatus::Excluded,
    }
}

/// Persuaded flag of an on-the-fly trial; `None` when it cannot be classified.
pub fn persuaded(trial: &TrialRecord) -> Option<bool> {
    match trajectory(trial) {
        TrajectoryStatus::Classified(t) => Some(persuasion_success(&t)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub persisted: u64,
    pub faded: u64,
    pub no_change: u64,
    pub excluded: u64,
    /// Subset of `no_change` whose final probe differs from the initial one.
    pub late_change: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, status: TrajectoryStatus) {
        match status {
            TrajectoryStatus::NotProbed => {}
            TrajectoryStatus::Excluded => self.excluded += 1,
            TrajectoryStatus::Classified(t) => {
                match classify(&t) {
                    Outcome::Persisted => self.persisted += 1,
                    Outcome::Faded => self.faded += 1,
                    Outcome::NoChange => self.no_change += 1,
                }
                if is_late_change(&t) {
                    self.late_change += 1;
                }
            }
        }
    }

    pub fn tally<I: IntoIterator<Item = StanceTrajectory>>(trajectories: I) -> Self {
        let mut c = Self::default();
        for t in trajectories {
            c.add(TrajectoryStatus::Classified(t));
        }
        c
    }

    pub fn classified(&self) -> u64 {
        self.persisted + self.faded + self.no_change
    }

    /// Persisted/faded/no-change percentages of the classified trials,
    /// rounded half-up, in units of `10^-decimals` percent. All zero for an
    /// empty group.
    pub fn percentages_scaled(&self, decimals: u32) -> [i64; 3] {
        let n = self.classified();
        [self.persisted, self.faded, self.no_change]
            .map(|c| percent_half_up_scaled(c, n, decimals))
    }

    pub fn percentages(&self, decimals: u32) -> [String; 3] {
        self.percentages_scaled(decimals)
            .map(|v| format_scaled(v, decimals))
    }

    /// Unrounded percentages.
    pub fn fractions(&self) -> [f64; 3] {
        let n = self.classified();
        if n == 0 {
            return [0.0; 3];
        }
        [self.persisted, self.faded, self.no_change].map(|c| 100.0 * c as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Backbone,
    Persona,
    Tactic,
    DistractorCount,
    Condition,
    TaskType,
}

impl FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "backbone" => GroupKey::Backbone,
            "persona" => GroupKey::Persona,
            "tactic" => GroupKey::Tactic,
            "distractor_count" | "distractors" => GroupKey::DistractorCount,
            "condition" => GroupKey::Condition,
            "task_type" | "task" => GroupKey::TaskType,
            other => return Err(format!("unknown grouping key '{other}'")),
        })
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKey::Backbone => "backbone",
            GroupKey::Persona => "persona",
            GroupKey::Tactic => "tactic",
            GroupKey::DistractorCount => "distractor_count",
            GroupKey::Condition => "condition",
            GroupKey::TaskType => "task_type",
        })
    }
}

/// One component of a group key, ordered naturally (tactics in table order).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPart {
    Text(String),
    Persona(Persona),
    Tactic(Tactic),
    Count(u32),
    Condition(Condition),
    Task(TaskType),
}

impl fmt::Display for KeyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyPart::Text(s) => f.write_str(s),
            KeyPart::Persona(p) => write!(f, "{p}"),
            KeyPart::Tactic(t) => f.write_str(t.label()),
            KeyPart::Count(n) => write!(f, "{n}"),
            KeyPart::Condition(c) => write!(f, "{c}"),
            KeyPart::Task(t) => write!(f, "{t}"),
        }
    }
}

pub fn key_part(h: &TrialHeader, key: GroupKey) -> KeyPart {
    match key {
        GroupKey::Backbone => KeyPart::Text(h.backbone.clone()),
        GroupKey::Persona => KeyPart::Persona(h.persona.clone()),
        GroupKey::Tactic => KeyPart::Tactic(h.tactic),
        GroupKey::DistractorCount => KeyPart::Count(h.distractor_count),
        GroupKey::Condition => KeyPart::Condition(h.condition),
        GroupKey::TaskType => KeyPart::Task(h.task_type),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub key: Vec<KeyPart>,
    pub counts: OutcomeCounts,
}

/// Outcome counts of every probed trial, grouped by `group_by`. Prefill
/// trials are skipped; trials whose probes do not all parse are counted as
/// `excluded`. Rows are sorted by key.
pub fn outcome_table(trials: &[TrialRecord], group_by: &[GroupKey]) -> Vec<OutcomeRow> {
    outcome_table_from(trials.iter().map(|t| (&t.header, trajectory(t))), group_by)
}

/// [`outcome_table`] over precomputed trajectory statuses.
pub fn outcome_table_from<'a, I>(statuses: I, group_by: &[GroupKey]) -> Vec<OutcomeRow>
where
    I: IntoIterator<Item = (&'a TrialHeader, TrajectoryStatus)>,
{
    let mut groups: BTreeMap<Vec<KeyPart>, OutcomeCounts> = BTreeMap::new();
    for (header, status) in statuses {
        if status == TrajectoryStatus::NotProbed {
            continue;
        }
        let key: Vec<KeyPart> = group_by.iter().map(|k| key_part(header, *k)).collect();
        groups.entry(key).or_default().add(status);
    }
    groups
        .into_iter()
        .map(|(key, counts)| OutcomeRow { key, counts })
        .collect()
}
