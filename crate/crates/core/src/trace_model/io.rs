//! JSON-lines trace files.
//!
//! One `trial_header` record opens each trial; the trial's `event` records
//! follow contiguously. Load errors abort only the trial they belong to.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::{EventPayload, TraceEvent, TrialHeader, TrialRecord, SCHEMA_VERSION};
use super::validate::{validate_trial, Violation};

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum WireRecord {
    TrialHeader(TrialHeader),
    Event(WireEvent),
}

#[derive(Serialize, Deserialize)]
struct WireEvent {
    trial_id: String,
    t: f64,
    #[serde(flatten)]
    payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum LoadErrorKind {
    MalformedLine { message: String },
    UnknownSchemaVersion { version: u64 },
    DuplicateTrialId,
    EventBeforeHeader,
    Invalid { violations: Vec<Violation> },
}

/// A problem that caused one trial (or one stray line) to be dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadError {
    pub line: usize,
    pub trial_id: Option<String>,
    #[serde(flatten)]
    pub kind: LoadErrorKind,
}

impl LoadError {
    /// Number of distinct rule violations this error stands for.
    pub fn violation_count(&self) -> usize {
        match &self.kind {
            LoadErrorKind::Invalid { violations } => violations.len(),
            _ => 1,
        }
    }
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = self.trial_id.as_deref().unwrap_or("?");
        match &self.kind {
            LoadErrorKind::MalformedLine { message } => {
                write!(f, "line {}: trial {id}: malformed line: {message}", self.line)
            }
            LoadErrorKind::UnknownSchemaVersion { version } => write!(
                f,
                "line {}: trial {id}: unsupported schema_version {version} (max {SCHEMA_VERSION})",
                self.line
            ),
            LoadErrorKind::DuplicateTrialId => {
                write!(f, "line {}: trial {id}: duplicate trial_id", self.line)
            }
            LoadErrorKind::EventBeforeHeader => write!(
                f,
                "line {}: trial {id}: event outside its trial's header block",
                self.line
            ),
            LoadErrorKind::Invalid { violations } => {
                write!(f, "line {}: trial {id}: ", self.line)?;
                for (i, v) in violations.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct ParsedTraces {
    pub trials: Vec<TrialRecord>,
    pub errors: Vec<LoadError>,
}

impl ParsedTraces {
    pub fn violation_count(&self) -> usize {
        self.errors.iter().map(LoadError::violation_count).sum()
    }

    pub fn extend(&mut self, other: ParsedTraces) {
        self.trials.extend(other.trials);
        self.errors.extend(other.errors);
    }
}

struct Open {
    record: TrialRecord,
    line: usize,
}

enum Skip {
    Nothing,
    /// Drop events of this trial id.
    Trial(String),
    /// Drop every event until the next header (header line was unreadable).
    UntilHeader,
}

struct Parser {
    out: ParsedTraces,
    open: Option<Open>,
    skip: Skip,
    seen: HashSet<String>,
}

impl Parser {
    fn close(&mut self) {
        if let Some(open) = self.open.take() {
            let violations = validate_trial(&open.record);
            if violations.is_empty() {
                self.out.trials.push(open.record);
            } else {
                self.out.errors.push(LoadError {
                    line: open.line,
                    trial_id: Some(open.record.header.trial_id),
                    kind: LoadErrorKind::Invalid { violations },
                });
            }
        }
    }

    fn abort_open(&mut self, line: usize, kind: LoadErrorKind) {
        let open = self.open.take().expect("abort without open trial");
        let id = open.record.header.trial_id;
        self.out.errors.push(LoadError {
            line,
            trial_id: Some(id.clone()),
            kind,
        });
        self.skip = Skip::Trial(id);
    }

    fn line(&mut self, line_no: usize, text: &str) {
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                let kind = LoadErrorKind::MalformedLine {
                    message: e.to_string(),
                };
                if self.open.is_some() {
                    self.abort_open(line_no, kind);
                } else {
                    self.out.errors.push(LoadError {
                        line: line_no,
                        trial_id: None,
                        kind,
                    });
                }
                return;
            }
        };
        let trial_id = value
            .get("trial_id")
            .and_then(Value::as_str)
            .map(str::to_string);
        match value.get("record").and_then(Value::as_str) {
            Some("trial_header") => self.header(line_no, value, trial_id),
            Some("event") => self.event(line_no, value, trial_id),
            other => {
                let message = match other {
                    Some(r) => format!("unknown record type '{r}'"),
                    None => "missing 'record' field".to_string(),
                };
                let kind = LoadErrorKind::MalformedLine { message };
                if self.open.is_some() && self.open_id() == trial_id.as_deref() {
                    self.abort_open(line_no, kind);
                } else {
                    self.out.errors.push(LoadError {
                        line: line_no,
                        trial_id,
                        kind,
                    });
                }
            }
        }
    }

    fn open_id(&self) -> Option<&str> {
        self.open.as_ref().map(|o| o.record.header.trial_id.as_str())
    }

    fn header(&mut self, line_no: usize, value: Value, trial_id: Option<String>) {
        self.close();
        self.skip = Skip::Nothing;
        let version = value.get("schema_version").and_then(Value::as_u64);
        if let Some(v) = version {
            if v != u64::from(SCHEMA_VERSION) {
                self.out.errors.push(LoadError {
                    line: line_no,
                    trial_id: trial_id.clone(),
                    kind: LoadErrorKind::UnknownSchemaVersion { version: v },
                });
                self.skip = trial_id.map_or(Skip::UntilHeader, Skip::Trial);
                return;
            }
        }
        let header = match serde_json::from_value::<WireRecord>(value) {
            Ok(WireRecord::TrialHeader(h)) => h,
            Ok(WireRecord::Event(_)) => unreachable!("record tag checked"),
            Err(e) => {
                self.out.errors.push(LoadError {
                    line: line_no,
                    trial_id: trial_id.clone(),
                    kind: LoadErrorKind::MalformedLine {
                        message: e.to_string(),
                    },
                });
                self.skip = trial_id.map_or(Skip::UntilHeader, Skip::Trial);
                return;
            }
        };
        if !self.seen.insert(header.trial_id.clone()) {
            self.out.errors.push(LoadError {
                line: line_no,
                trial_id: Some(header.trial_id.clone()),
                kind: LoadErrorKind::DuplicateTrialId,
            });
            self.skip = Skip::Trial(header.trial_id);
            return;
        }
        self.open = Some(Open {
            record: TrialRecord {
                header,
                events: Vec::new(),
            },
            line: line_no,
        });
    }

    fn event(&mut self, line_no: usize, value: Value, trial_id: Option<String>) {
        if self.open.is_some() && self.open_id() == trial_id.as_deref() {
            match serde_json::from_value::<WireRecord>(value) {
                Ok(WireRecord::Event(ev)) => {
                    let open = self.open.as_mut().expect("checked");
                    open.record.events.push(TraceEvent {
                        t: ev.t,
                        payload: ev.payload,
                    });
                }
                Ok(WireRecord::TrialHeader(_)) => unreachable!("record tag checked"),
                Err(e) => self.abort_open(
                    line_no,
                    LoadErrorKind::MalformedLine {
                        message: e.to_string(),
                    },
                ),
            }
            return;
        }
        match (&self.skip, &trial_id) {
            (Skip::UntilHeader, _) => return,
            (Skip::Trial(id), Some(tid)) if id == tid => return,
            _ => {}
        }
        self.out.errors.push(LoadError {
            line: line_no,
            trial_id: trial_id.clone(),
            kind: LoadErrorKind::EventBeforeHeader,
        });
        // one report per stray trial id
        if self.open.is_none() {
            self.skip = trial_id.map_or(Skip::UntilHeader, Skip::Trial);
        }
    }
}

/// Parses a trace stream. Valid trials are returned in file order; every
/// dropped trial is described in `errors`.
pub fn parse_trace_file<R: BufRead>(reader: R) -> io::Result<ParsedTraces> {
    let mut parser = Parser {
        out: ParsedTraces::default(),
        open: None,
        skip: Skip::Nothing,
        seen: HashSet::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        parser.line(i + 1, trimmed);
    }
    parser.close();
    Ok(parser.out)
}

pub fn parse_trace_bytes(bytes: &[u8]) -> ParsedTraces {
    parse_trace_file(bytes).expect("reading from a byte slice cannot fail")
}

/// Writes trials in the canonical layout: header line, then one line per
/// event, fields in declaration order.
pub fn write_trace_file<W: Write>(trials: &[TrialRecord], mut w: W) -> io::Result<()> {
    for trial in trials {
        write_trial(trial, &mut w)?;
    }
    w.flush()
}

pub fn write_trial<W: Write>(trial: &TrialRecord, w: &mut W) -> io::Result<()> {
    let header = serde_json::to_string(&WireRecord::TrialHeader(trial.header.clone()))
        .map_err(io::Error::other)?;
    writeln!(w, "{header}")?;
    for e in &trial.events {
        let line = serde_json::to_string(&WireRecord::Event(WireEvent {
            trial_id: trial.header.trial_id.clone(),
            t: e.t,
            payload: e.payload.clone(),
        }))
        .map_err(io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn to_trace_string(trials: &[TrialRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_file(trials, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
