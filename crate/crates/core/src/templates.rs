//! Prompt templates used by the persuasion protocol and the two tasks.
//!
//! Placeholders are written `{name}`; [`render`] substitutes them and leaves
//! unknown placeholders untouched.

use crate::trace_model::{PrefillRegime, Tactic};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    StanceProbe,
    PersuasiveClaim,
    PrefillBelief,
    PrefillDisbelief,
    PrefillNeutral,
    CodingTask,
    WebTask,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::StanceProbe,
        Template::PersuasiveClaim,
        Template::PrefillBelief,
        Template::PrefillDisbelief,
        Template::PrefillNeutral,
        Template::CodingTask,
        Template::WebTask,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Template::StanceProbe => include_str!("../templates/stance_probe.txt"),
            Template::PersuasiveClaim => include_str!("../templates/persuasive_claim.txt"),
            Template::PrefillBelief => include_str!("../templates/prefill_belief.txt"),
            Template::PrefillDisbelief => include_str!("../templates/prefill_disbelief.txt"),
            Template::PrefillNeutral => include_str!("../templates/prefill_neutral.txt"),
            Template::CodingTask => include_str!("../templates/coding_task.txt"),
            Template::WebTask => include_str!("../templates/web_task.txt"),
        }
    }

    pub fn for_prefill(regime: PrefillRegime) -> Template {
        match regime {
            PrefillRegime::Belief => Template::PrefillBelief,
            PrefillRegime::Disbelief => Template::PrefillDisbelief,
            PrefillRegime::Neutral => Template::PrefillNeutral,
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let text = self.text();
        let mut out: Vec<&'static str> = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else { break };
            let name = &rest[open + 1..open + close];
            if !name.is_empty()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                && !out.contains(&name)
            {
                out.push(name);
            }
            rest = &rest[open + close + 1..];
        }
        out
    }
}

pub fn render(template: Template, vars: &[(&str, &str)]) -> String {
    let mut text = template.text().to_string();
    for (name, value) in vars {
        text = text.replace(&format!("{{{name}}}"), value);
    }
    text
}

/// Short operational definition fed to the claim-writer prompt.
pub fn tactic_definition(tactic: Tactic) -> &'static str {
    match tactic {
        Tactic::Baseline => "no persuasive framing",
        Tactic::LogicalAppeal => "argue from explicit cause-and-effect reasoning",
        Tactic::AuthorityEndorsement => "appeal to recognized experts, standards or protocols",
        Tactic::EvidenceBased => "cite measurable empirical outcomes",
        Tactic::PrimingUrgency => "stress time pressure and the cost of delay",
        Tactic::Anchoring => "open with a demanding goal, then offer the target as the moderate option",
    }
}
