use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftlab_core::constructs::ConstructMap;
use driftlab_core::pipeline::{
    load_traces, run_aggregate_stage, run_compare_stage, run_metrics_stage, Baselines,
    CompareOptions, PipelineError, DEFAULT_GROUP_BY,
};
use driftlab_core::report::{parse_formats, run_report_stage, Format};
use driftlab_core::sim::{emit_corpus, run_pipeline, SimConfig, SimError};
use driftlab_core::stance_dynamics::GroupKey;
use driftlab_core::stats_compare::ComparisonSpec;
use driftlab_core::Condition;

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "driftlab", version, about = "Belief-drift analytics for agent traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check trace files against the schema and trial invariants.
    Validate {
        /// Trace files or directories of *.jsonl files.
        #[arg(long = "traces", value_name = "PATH")]
        traces: Vec<PathBuf>,
        #[arg(value_name = "PATH")]
        paths: Vec<PathBuf>,
    },
    /// Generate a synthetic corpus with known ground truth.
    Simulate {
        /// JSON simulator configuration; defaults apply to missing fields.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Per-trial stance, coding and web metrics.
    Metrics {
        #[arg(long, value_name = "DIR")]
        traces: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Baseline condition for its setting (C0/C1 on the fly, C0P prefill).
        #[arg(long, value_name = "COND")]
        baseline: Option<String>,
    },
    /// Outcome tables and construct fits.
    Aggregate {
        #[command(flatten)]
        io: StageIo,
        /// Comma-separated grouping keys for the outcome table.
        #[arg(long, value_name = "KEYS")]
        group_by: Option<String>,
        /// JSON construct map overriding the default metric assignment.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Group comparisons and consistency.
    Compare {
        #[command(flatten)]
        io: StageIo,
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "N", default_value_t = 10_000)]
        resamples: usize,
        /// Skip the per-persona construct comparisons.
        #[arg(long)]
        no_persona: bool,
    },
    /// Render tables from aggregate and comparison outputs.
    Report {
        #[command(flatten)]
        io: StageIo,
        #[arg(long, value_name = "FORMATS", default_value = "csv,md,json")]
        format: String,
    },
}

#[derive(Args)]
struct StageIo {
    /// Directory holding the previous stage's outputs.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output directory; defaults to the input directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl StageIo {
    fn out(&self) -> &Path {
        self.out.as_deref().unwrap_or(&self.input)
    }
}

enum Failure {
    Usage(String),
    Io(String),
    Validation,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Usage(m) => Failure::Usage(m),
            other => Failure::Io(other.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn validate(paths: Vec<PathBuf>) -> Result<(), Failure> {
    if paths.is_empty() {
        return Err(Failure::Usage("no trace paths given".into()));
    }
    let mut trials = 0;
    let mut violations = 0;
    for p in &paths {
        let (parsed, _) = load_traces(p)?;
        for e in &parsed.errors {
            println!("{e}");
        }
        trials += parsed.trials.len() + parsed.errors.iter().filter(|e| e.trial_id.is_some()).count();
        violations += parsed.violation_count();
    }
    println!("{trials} trials, {violations} violations");
    if violations > 0 {
        return Err(Failure::Validation);
    }
    Ok(())
}

fn simulate(config: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg: SimConfig = match config {
        Some(p) => read_config(&p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let outcomes = run_pipeline(&cfg)?;
    emit_corpus(&outcomes, &cfg, out)?;
    println!("{} trials written to {}", outcomes.len(), out.display());
    Ok(())
}

fn parse_group_by(s: &str) -> Result<Vec<GroupKey>, Failure> {
    let keys: Vec<GroupKey> = s
        .split(',')
        .filter(|k| !k.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(Failure::Usage)?;
    if keys.is_empty() {
        return Err(Failure::Usage("--group-by needs at least one key".into()));
    }
    Ok(keys)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { mut traces, paths } => {
            traces.extend(paths);
            validate(traces)
        }
        Command::Simulate { config, seed, out } => simulate(config, seed, &out),
        Command::Metrics {
            traces,
            out,
            baseline,
        } => {
            let baselines = match baseline {
                Some(b) => {
                    let c: Condition = b.parse().map_err(Failure::Usage)?;
                    Baselines::with_override(c)?
                }
                None => Baselines::default(),
            };
            let s = run_metrics_stage(&traces, &out, baselines)?;
            println!(
                "{} trials, {} dropped at load, {} metric skips",
                s.trials, s.load_errors, s.skipped
            );
            Ok(())
        }
        Command::Aggregate {
            io,
            group_by,
            config,
        } => {
            let keys = match group_by {
                Some(s) => parse_group_by(&s)?,
                None => DEFAULT_GROUP_BY.to_vec(),
            };
            let map: ConstructMap = match config {
                Some(p) => read_config(&p)?,
                None => ConstructMap::default(),
            };
            let agg = run_aggregate_stage(&io.input, io.out(), &map, &keys)?;
            println!("{} construct scores", agg.construct_scores.len());
            Ok(())
        }
        Command::Compare {
            io,
            seed,
            resamples,
            no_persona,
        } => {
            if resamples == 0 {
                return Err(Failure::Usage("--resamples must be positive".into()));
            }
            let opts = CompareOptions {
                spec: ComparisonSpec {
                    resamples,
                    seed,
                    ..ComparisonSpec::default()
                },
                persona_level: !no_persona,
                tables: Vec::new(),
            };
            let cmp = run_compare_stage(&io.input, io.out(), &opts)?;
            println!("{} comparisons", cmp.records.len());
            Ok(())
        }
        Command::Report { io, format } => {
            let formats: Vec<Format> = parse_formats(&format).map_err(Failure::Usage)?;
            let report = run_report_stage(&io.input, io.out(), &formats)?;
            for l in &report.headline {
                println!("{l}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRIFTLAB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(EXIT_VALIDATION),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_IO)
        }
    }
}
