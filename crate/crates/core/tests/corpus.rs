use std::fs;

use driftlab_core::sim::{
    emit_corpus, run_pipeline, ConditionPlan, GroundTruthFile, SimConfig, GROUND_TRUTH_FILE,
    TRACES_FILE,
};
use driftlab_core::trace_model::{parse_trace_bytes, to_trace_string};
use driftlab_core::{Condition, EventPayload, TaskType, TrialRecord};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn small_config(seed: u64, trials: u32) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    for plan in &mut cfg.conditions {
        plan.trials = trials;
    }
    cfg
}

fn digest(path: &std::path::Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn single_outcome_corpus() {
    let mut cfg = small_config(3, 1);
    cfg.personas.truncate(1);
    cfg.conditions = vec![ConditionPlan {
        condition: Condition::C1,
        tactics: vec![],
        task_types: vec![TaskType::Web],
        trials: 1,
    }];
    let outcomes = run_pipeline(&cfg).unwrap();
    assert_eq!(outcomes.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    emit_corpus(&outcomes, &cfg, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(TRACES_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + outcomes[0].trial.events.len());
    assert!(lines[0].contains("\"record\":\"trial_header\""));
    let sidecar: GroundTruthFile =
        serde_json::from_str(&fs::read_to_string(dir.path().join(GROUND_TRUTH_FILE)).unwrap())
            .unwrap();
    assert_eq!(sidecar.trials.len(), 1);
}

#[test]
fn six_hundred_trials_survive_parsing() {
    // 6 personas × 2 tasks × (C0 + C1 + 5 C2 tactics + C0P + B + NB) = 120 per trial count
    let cfg = small_config(11, 5);
    let outcomes = run_pipeline(&cfg).unwrap();
    assert_eq!(outcomes.len(), 600);
    let dir = tempfile::tempdir().unwrap();
    emit_corpus(&outcomes, &cfg, dir.path()).unwrap();
    let parsed = parse_trace_bytes(&fs::read(dir.path().join(TRACES_FILE)).unwrap());
    assert!(parsed.errors.is_empty(), "{:?}", parsed.errors.first());
    assert_eq!(parsed.trials.len(), 600);
    let emitted: Vec<&TrialRecord> = outcomes.iter().map(|o| &o.trial).collect();
    assert!(parsed.trials.iter().zip(emitted).all(|(a, b)| a == b));
}

#[test]
fn corpus_regenerates_from_sidecar_seed() {
    let cfg = small_config(2024, 2);
    let first = tempfile::tempdir().unwrap();
    emit_corpus(&run_pipeline(&cfg).unwrap(), &cfg, first.path()).unwrap();

    let sidecar: GroundTruthFile =
        serde_json::from_str(&fs::read_to_string(first.path().join(GROUND_TRUTH_FILE)).unwrap())
            .unwrap();
    let mut again = sidecar.config.clone();
    again.seed = sidecar.seed;
    let second = tempfile::tempdir().unwrap();
    emit_corpus(&run_pipeline(&again).unwrap(), &again, second.path()).unwrap();

    for f in [TRACES_FILE, GROUND_TRUTH_FILE] {
        assert_eq!(digest(&first.path().join(f)), digest(&second.path().join(f)), "{f}");
    }

    let mut other = cfg.clone();
    other.seed += 1;
    let third = tempfile::tempdir().unwrap();
    emit_corpus(&run_pipeline(&other).unwrap(), &other, third.path()).unwrap();
    assert_ne!(digest(&first.path().join(TRACES_FILE)), digest(&third.path().join(TRACES_FILE)));
}

#[test]
fn thread_count_does_not_change_corpus() {
    let cfg = small_config(5, 2);
    let run = |threads| {
        let pool = rayon_pool(threads);
        pool.install(|| to_trace_string(&run_pipeline(&cfg).unwrap().into_iter().map(|o| o.trial).collect::<Vec<_>>()))
    };
    assert_eq!(run(1), run(4));
}

fn rayon_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

/// Replaces every free-text field with `text` so the round trip exercises
/// escaping of arbitrary strings.
fn overwrite_text(trial: &mut TrialRecord, text: &str) {
    for e in &mut trial.events {
        match &mut e.payload {
            EventPayload::StanceProbe { raw_text, .. } => *raw_text = text.to_string(),
            EventPayload::Injection { text: t, .. } | EventPayload::Prefill { text: t, .. } => {
                *t = text.to_string()
            }
            EventPayload::Search { query } => *query = text.to_string(),
            EventPayload::ToolCall { tool_name } => *tool_name = format!("tool {text}"),
            _ => {}
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn traces_round_trip(seed in any::<u64>(), text in "\\PC{0,24}", scale in 0.001f64..1000.0) {
        let cfg = small_config(seed, 1);
        let mut trials: Vec<TrialRecord> =
            run_pipeline(&cfg).unwrap().into_iter().map(|o| o.trial).collect();
        for t in &mut trials {
            overwrite_text(t, &text);
            for e in &mut t.events {
                e.t *= scale;
            }
        }
        let text_form = to_trace_string(&trials);
        let parsed = parse_trace_bytes(text_form.as_bytes());
        prop_assert!(parsed.errors.is_empty(), "{:?}", parsed.errors.first());
        prop_assert_eq!(&parsed.trials, &trials);
        prop_assert_eq!(to_trace_string(&parsed.trials), text_form);
    }
}
