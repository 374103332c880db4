//! Trace analytics for persuasion-drift experiments on LLM agents: stance
//! outcome tables, coding and web process metrics, latent behavioral
//! constructs, group comparisons, and a seeded trace simulator.

pub mod coding_metrics;
pub mod constructs;
pub mod numeric;
pub mod pipeline;
pub mod report;
pub mod sim;
pub mod stance_dynamics;
pub mod stats_compare;
pub mod templates;
pub mod web_metrics;
pub mod trace_model;

pub use trace_model::{
    ClaimPair, Condition, EventKind, EventPayload, Persona, Setting, Side, Stance, Tactic,
    TaskType, TraceEvent, TrialHeader, TrialRecord,
};
