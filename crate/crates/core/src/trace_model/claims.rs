//! Claim-pair corpora and the task-irrelevance similarity check.

use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{ClaimPair, Side, Stance};
use crate::numeric::{self, cosine_similarity, NumericError};

/// Stance answer from a probe response: the first whitespace-delimited
/// token, case-insensitively, must be `(A)`, `A` or `A.` (likewise for B).
/// A single trailing `,`, `:` or `;` after the marker is tolerated.
pub fn parse_stance(raw_text: &str) -> Stance {
    let Some(token) = raw_text.split_whitespace().next() else {
        return Stance::Unparsed;
    };
    let token = token.to_ascii_lowercase();
    let token = token
        .strip_suffix([',', ':', ';'])
        .unwrap_or(&token);
    match token {
        "(a)" | "a" | "a." | "(a)." => Stance::A,
        "(b)" | "b" | "b." | "(b)." => Stance::B,
        _ => Stance::Unparsed,
    }
}

#[derive(Debug, Error)]
pub enum ClaimError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("claim {claim_id}: side_a and side_b are identical")]
    IdenticalSides { claim_id: String },
    #[error("claim {claim_id}: embedding dimension {found}, corpus uses {expected}")]
    DimensionMismatch {
        claim_id: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a claim corpus: one JSON document per line.
pub fn read_claim_corpus<R: BufRead>(reader: R) -> Result<Vec<ClaimPair>, ClaimError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ClaimPair =
            serde_json::from_str(line.trim()).map_err(|e| ClaimError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(pair);
    }
    validate_claim_corpus(&out)?;
    Ok(out)
}

pub fn validate_claim_corpus(pairs: &[ClaimPair]) -> Result<(), ClaimError> {
    let mut dim: Option<usize> = None;
    for p in pairs {
        if p.side_a == p.side_b {
            return Err(ClaimError::IdenticalSides {
                claim_id: p.claim_id.clone(),
            });
        }
        for v in [&p.embedding_a, &p.embedding_b].into_iter().flatten() {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(ClaimError::DimensionMismatch {
                        claim_id: p.claim_id.clone(),
                        expected: d,
                        found: v.len(),
                    })
                }
                _ => {}
            }
        }
    }
    Ok(())
}

impl ClaimPair {
    pub fn side_text(&self, side: Side) -> &str {
        match side {
            Side::A => &self.side_a,
            Side::B => &self.side_b,
        }
    }
}

/// The claim pairs shipped with the toolkit.
pub fn builtin_claims() -> Vec<ClaimPair> {
    read_claim_corpus(include_str!("../../templates/claims.jsonl").as_bytes())
        .expect("bundled claim corpus is valid")
}

/// Externally computed embeddings of an injected claim and the downstream
/// task prompt it accompanied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub claim_id: String,
    pub claim_vector: Vec<f64>,
    pub task_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrelevanceSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Claim-vs-task cosine similarities summarized by mean, median and quartiles.
pub fn irrelevance_summary(pairs: &[EmbeddingPair]) -> Result<IrrelevanceSummary, NumericError> {
    if pairs.is_empty() {
        return Err(NumericError::Empty);
    }
    let sims = pairs
        .iter()
        .map(|p| cosine_similarity(&p.claim_vector, &p.task_vector))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sorted = sims.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(IrrelevanceSummary {
        n: sims.len(),
        mean: numeric::mean(&sims).expect("non-empty"),
        median: numeric::quantile_sorted(&sorted, 0.5).expect("non-empty"),
        q1: numeric::quantile_sorted(&sorted, 0.25).expect("non-empty"),
        q3: numeric::quantile_sorted(&sorted, 0.75).expect("non-empty"),
    })
}

pub fn read_embedding_pairs<R: BufRead>(reader: R) -> Result<Vec<EmbeddingPair>, ClaimError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line.trim()).map_err(|e| ClaimError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
