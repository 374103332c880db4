//! Canonical trial/event data model, the JSON-lines trace format, and
//! structural validation.

mod claims;
mod io;
mod types;
mod validate;

pub use claims::{
    builtin_claims, irrelevance_summary, parse_stance, read_claim_corpus, read_embedding_pairs,
    validate_claim_corpus, ClaimError, EmbeddingPair, IrrelevanceSummary,
};
pub use io::{
    parse_trace_bytes, parse_trace_file, to_trace_string, write_trace_file, write_trial,
    LoadError, LoadErrorKind, ParsedTraces,
};
pub use types::*;
pub use validate::{registrable_domain, validate_trial, Rule, Violation};

pub use crate::numeric::{cosine_similarity, NumericError};
