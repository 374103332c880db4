//! Rendering of stage outputs into tables. Values are copied verbatim from
//! the upstream files; the only arithmetic here is `percent_change` for the
//! headline and rounding at render time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::pipeline::{
    read_json, AggregateFile, ComparisonRecord, ComparisonTable, ComparisonsFile, PipelineError,
    AGGREGATE_FILE, COMPARISONS_FILE,
};
use crate::stance_dynamics::GroupKey;
use crate::stats_compare::{percent_change, ComparisonResult};
use crate::trace_model::TaskType;
use crate::web_metrics::WebMetric;

pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const HEADLINE_FILE: &str = "headline.txt";
pub const NO_CELLS: &str = "no cells";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Md,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Md),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}' (expected csv, md or json)")),
        }
    }
}

/// Parses a comma-separated format list; duplicates collapse.
pub fn parse_formats(s: &str) -> Result<Vec<Format>, String> {
    let mut v: Vec<Format> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err("no output format given".into());
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cell {
    Text { value: String },
    Int { value: u64 },
    /// Rendered with `decimals` places in markdown; full precision elsewhere.
    Num { value: f64, decimals: u32 },
    /// A percentage with its pre-rounded rendering.
    Percent { value: f64, text: String },
    Empty,
}

impl Cell {
    fn text(s: impl Into<String>) -> Self {
        Cell::Text { value: s.into() }
    }

    fn num(v: f64, decimals: u32) -> Self {
        Cell::Num { value: v, decimals }
    }

    fn opt(v: Option<f64>, decimals: u32) -> Self {
        v.map_or(Cell::Empty, |v| Cell::num(v, decimals))
    }

    /// Numeric content, if any.
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Int { value } => Some(*value as f64),
            Cell::Num { value, .. } | Cell::Percent { value, .. } => Some(*value),
            _ => None,
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Text { value } => value.clone(),
            Cell::Int { value } => value.to_string(),
            Cell::Num { value, .. } | Cell::Percent { value, .. } => value.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn md(&self) -> String {
        match self {
            Cell::Text { value } => value.replace('|', "\\|"),
            Cell::Int { value } => value.to_string(),
            Cell::Num { value, decimals } => format!("{value:.*}", *decimals as usize),
            Cell::Percent { text, .. } => text.clone(),
            Cell::Empty => "–".into(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Text { value } => value.clone().into(),
            Cell::Int { value } => (*value).into(),
            Cell::Num { value, .. } | Cell::Percent { value, .. } => {
                serde_json::Number::from_f64(*value).map_or(serde_json::Value::Null, Into::into)
            }
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        // writing into a Vec cannot fail
        w.write_record(&self.columns).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv)).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("## {}\n\n", self.title);
        if self.rows.is_empty() {
            s.push_str(NO_CELLS);
            s.push_str("\n\n");
            return s;
        }
        let _ = writeln!(s, "| {} |", self.columns.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(self.columns.len()));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::md).collect();
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        s.push('\n');
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "title": self.title,
            "columns": self.columns,
            "rows": self.rows.iter()
                .map(|r| r.iter().map(Cell::json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tables: Vec<Table>,
    pub headline: Vec<String>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Drift report\n\n## Headline\n\n");
        if self.headline.is_empty() {
            s.push_str(NO_CELLS);
            s.push('\n');
        }
        for l in &self.headline {
            let _ = writeln!(s, "{l}");
        }
        s.push('\n');
        for t in &self.tables {
            s.push_str(&t.to_markdown());
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "headline": self.headline,
            "tables": self.tables.iter().map(Table::to_json).collect::<Vec<_>>(),
        })
    }
}

fn group_key_name(k: GroupKey) -> &'static str {
    match k {
        GroupKey::Backbone => "backbone",
        GroupKey::Persona => "persona",
        GroupKey::Tactic => "tactic",
        GroupKey::DistractorCount => "distractors",
        GroupKey::Condition => "condition",
        GroupKey::TaskType => "task",
    }
}

fn outcome_tables(agg: &AggregateFile) -> Vec<Table> {
    agg.outcome_tables
        .iter()
        .map(|ot| {
            let mut cols: Vec<&str> = ot.group_by.iter().map(|k| group_key_name(*k)).collect();
            cols.extend(["n", "persisted_pct", "faded_pct", "no_change_pct", "late_change", "excluded"]);
            let title = format!(
                "Stance outcomes by {}",
                ot.group_by.iter().map(|k| group_key_name(*k)).collect::<Vec<_>>().join(", ")
            );
            let mut t = Table::new(&ot.name, title, &cols);
            for r in &ot.rows {
                let mut row: Vec<Cell> = r.key.iter().map(|k| Cell::text(k.to_string())).collect();
                row.push(Cell::Int { value: r.counts.classified() });
                let exact = r.counts.fractions();
                let text = r.counts.percentages(ot.decimals);
                for (value, text) in exact.into_iter().zip(text) {
                    row.push(Cell::Percent { value, text });
                }
                row.push(Cell::Int { value: r.counts.late_change });
                row.push(Cell::Int { value: r.counts.excluded });
                t.rows.push(row);
            }
            t
        })
        .collect()
}

const STAT_COLUMNS: [&str; 12] = [
    "n_a", "n_b", "mean_a", "mean_b", "delta", "se", "ci_low", "ci_high", "p", "welch_p",
    "iqr_persona", "note",
];

fn stat_cells(rec: &ComparisonRecord) -> Vec<Cell> {
    match &rec.result {
        Some(r) => vec![
            Cell::Int { value: r.n_a as u64 },
            Cell::Int { value: r.n_b as u64 },
            Cell::num(r.mean_a, 3),
            Cell::num(r.mean_b, 3),
            Cell::num(r.delta_mean, 3),
            Cell::num(r.std_error, 3),
            Cell::num(r.ci_low, 3),
            Cell::num(r.ci_high, 3),
            Cell::num(r.p_value, 4),
            Cell::opt(r.welch_p, 4),
            Cell::opt(r.iqr_persona, 3),
            Cell::text(if r.degenerate { "degenerate" } else if r.exact { "exact" } else { "" }),
        ],
        None => {
            let mut v = vec![Cell::Empty; STAT_COLUMNS.len() - 1];
            v.push(Cell::text(rec.error.clone().unwrap_or_default()));
            v
        }
    }
}

fn metric_label(name: &str) -> String {
    let bare = name.strip_prefix("d_").unwrap_or(name);
    match bare.parse::<WebMetric>() {
        Ok(m) if name.starts_with("d_") => format!("Δ {}", m.label()),
        Ok(m) => m.label().to_string(),
        Err(_) => name.to_string(),
    }
}

fn pnp_table(name: &str, title: &str, cmp: &ComparisonsFile, which: ComparisonTable) -> Table {
    let persona = which == ComparisonTable::WebPersonaPnp;
    let mut cols = vec!["backbone"];
    if persona {
        cols.push("persona");
    }
    cols.extend(["metric", "label"]);
    cols.extend(STAT_COLUMNS);
    let mut t = Table::new(name, title, &cols);
    for rec in cmp.records.iter().filter(|r| r.table == which) {
        let mut row = vec![Cell::text(&rec.backbone)];
        if persona {
            row.push(Cell::text(rec.persona.as_ref().map(|p| p.to_string()).unwrap_or_default()));
        }
        row.push(Cell::text(&rec.metric));
        row.push(Cell::text(metric_label(&rec.metric)));
        row.extend(stat_cells(rec));
        t.rows.push(row);
    }
    t
}

type PrefillKey<'a> = (&'a str, TaskType, &'a str);
type PrefillPairs<'a> = BTreeMap<(&'a str, &'a str), &'a ComparisonRecord>;

/// Prefill records grouped by (backbone, task, metric) and then by
/// (group_a, group_b), in record order.
fn prefill_groups(cmp: &ComparisonsFile) -> Vec<(PrefillKey<'_>, PrefillPairs<'_>)> {
    let mut order: Vec<PrefillKey> = Vec::new();
    let mut groups: BTreeMap<PrefillKey, PrefillPairs> = BTreeMap::new();
    for r in cmp.records.iter().filter(|r| r.table == ComparisonTable::Prefill) {
        let key = (r.backbone.as_str(), r.task, r.metric.as_str());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups
            .entry(key)
            .or_default()
            .insert((r.group_a.as_str(), r.group_b.as_str()), r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = groups.remove(&k).unwrap_or_default();
            (k, g)
        })
        .collect()
}

fn result_of<'a>(g: &BTreeMap<(&str, &str), &'a ComparisonRecord>, a: &str, b: &str) -> Option<&'a ComparisonResult> {
    g.iter()
        .find(|((ga, gb), _)| *ga == a && (b.is_empty() || *gb == b))
        .and_then(|(_, r)| r.result.as_ref())
}

fn baseline_label(g: &BTreeMap<(&str, &str), &ComparisonRecord>) -> Option<String> {
    g.keys().find(|(a, _)| *a == "B" || *a == "NB").map(|(_, b)| b.to_string()).filter(|b| b != "NB")
}

fn prefill_table(cmp: &ComparisonsFile) -> Table {
    let mut t = Table::new(
        "prefill_effects",
        "Prefilled opinion effects",
        &[
            "backbone", "task", "metric", "label", "baseline", "b", "nb", "delta_b_nb", "ci_low",
            "ci_high", "p",
        ],
    );
    for ((backbone, task, metric), g) in prefill_groups(cmp) {
        let base = baseline_label(&g).unwrap_or_default();
        let b = result_of(&g, "B", &base);
        let nb = result_of(&g, "NB", &base);
        let bnb = result_of(&g, "B", "NB");
        t.rows.push(vec![
            Cell::text(backbone),
            Cell::text(task.as_str()),
            Cell::text(metric),
            Cell::text(metric_label(metric)),
            Cell::opt(b.or(nb).map(|r| r.mean_b), 3),
            Cell::opt(b.map(|r| r.mean_a), 3),
            Cell::opt(nb.map(|r| r.mean_a), 3),
            Cell::opt(bnb.map(|r| r.delta_mean), 3),
            Cell::opt(bnb.map(|r| r.ci_low), 3),
            Cell::opt(bnb.map(|r| r.ci_high), 3),
            Cell::opt(bnb.map(|r| r.p_value), 4),
        ]);
    }
    t
}

fn consistency_table(cmp: &ComparisonsFile) -> Table {
    let mut t = Table::new(
        "consistency",
        "Directional consistency across repeated runs",
        &["backbone", "task", "metric", "cells", "excluded", "mean", "std"],
    );
    for c in &cmp.consistency {
        t.rows.push(vec![
            Cell::text(&c.backbone),
            Cell::text(c.task.as_str()),
            Cell::text(&c.metric),
            Cell::Int { value: c.result.cells.len() as u64 },
            Cell::Int { value: c.result.excluded.len() as u64 },
            Cell::opt(c.result.mean, 3),
            Cell::opt(c.result.std, 3),
        ]);
    }
    t
}

fn loadings_table(agg: &AggregateFile) -> Table {
    let mut t = Table::new(
        "loadings",
        "Construct loadings",
        &["stratum", "construct", "metric", "loading"],
    );
    for l in &agg.loadings {
        t.rows.push(vec![
            Cell::text(&l.stratum),
            Cell::text(l.construct.name()),
            Cell::text(&l.metric),
            Cell::opt(l.loading, 3),
        ]);
    }
    t
}

/// Percent change of `value` relative to `reference`, formatted to one
/// decimal; "n/a" for a zero reference.
fn pct(value: f64, reference: f64) -> String {
    percent_change(value, reference).map_or_else(|_| "n/a".into(), |p| format!("{p:.1}%"))
}

/// The headline line for B against the neutral prefill.
pub fn headline_line(
    searches_baseline: f64,
    searches_b: f64,
    urls_baseline: f64,
    urls_b: f64,
) -> String {
    format!(
        "searches: {}, unique URLs: {}",
        pct(searches_b, searches_baseline),
        pct(urls_b, urls_baseline)
    )
}

/// One headline line per backbone with both web prefill comparisons.
pub fn headline(cmp: &ComparisonsFile) -> Vec<String> {
    let mut lines = Vec::new();
    let groups = prefill_groups(cmp);
    let find = |backbone: &str, metric: WebMetric| {
        groups
            .iter()
            .find(|((bb, task, m), _)| *bb == backbone && *task == TaskType::Web && *m == metric.as_str())
            .and_then(|(_, g)| result_of(g, "B", &baseline_label(g).unwrap_or_default()))
    };
    let mut backbones: Vec<&str> = groups.iter().map(|((b, _, _), _)| *b).collect();
    backbones.dedup();
    for b in backbones {
        if let (Some(s), Some(u)) = (find(b, WebMetric::NumSearches), find(b, WebMetric::NumUniqueUrls)) {
            lines.push(format!("[{b}]"));
            lines.push(headline_line(s.mean_b, s.mean_a, u.mean_b, u.mean_a));
        }
    }
    lines
}

/// Builds every report table from the aggregate and comparison outputs.
pub fn build_report(agg: &AggregateFile, cmp: &ComparisonsFile) -> Report {
    let mut tables = outcome_tables(agg);
    tables.push(pnp_table(
        "coding_pnp",
        "Coding task: persuaded vs not persuaded",
        cmp,
        ComparisonTable::CodingPnp,
    ));
    tables.push(pnp_table(
        "web_pnp",
        "Web task: persuaded vs not persuaded",
        cmp,
        ComparisonTable::WebPnp,
    ));
    tables.push(pnp_table(
        "web_persona",
        "Web task by persona: construct scores, persuaded vs not persuaded",
        cmp,
        ComparisonTable::WebPersonaPnp,
    ));
    tables.push(prefill_table(cmp));
    tables.push(consistency_table(cmp));
    tables.push(loadings_table(agg));
    Report {
        tables,
        headline: headline(cmp),
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the report in each requested format plus `headline.txt`.
pub fn write_report(report: &Report, out: &Path, formats: &[Format]) -> Result<(), PipelineError> {
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut head = report.headline.join("\n");
    if head.is_empty() {
        head.push_str(NO_CELLS);
    }
    head.push('\n');
    write(&out.join(HEADLINE_FILE), &head)?;
    for f in formats {
        match f {
            Format::Csv => {
                for t in &report.tables {
                    write(&out.join(format!("{}.csv", t.name)), &t.to_csv())?;
                }
            }
            Format::Md => write(&out.join(REPORT_MD), &report.to_markdown())?,
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&report.to_json())
                    .expect("report json is always serializable");
                s.push('\n');
                write(&out.join(REPORT_JSON), &s)?;
            }
        }
    }
    Ok(())
}

pub fn run_report_stage(input: &Path, out: &Path, formats: &[Format]) -> Result<Report, PipelineError> {
    let agg: AggregateFile = read_json(&input.join(AGGREGATE_FILE))?;
    let cmp: ComparisonsFile = read_json(&input.join(COMPARISONS_FILE))?;
    let report = build_report(&agg, &cmp);
    write_report(&report, out, formats)?;
    Ok(report)
}
