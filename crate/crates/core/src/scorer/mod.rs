//! Passage scorers.
//!
//! Every scorer maps a (query, passage) pair to a relevance score in `[0, 1]`.
//! The teacher used for labeling and the student used for reranking are both
//! scorers; which one is plugged in is a matter of configuration.

mod external;
mod lexical;
mod oracle;
mod pool;
pub mod stub;

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::corpus::{CorpusError, Query};
use crate::index::InvertedIndex;

pub use external::{ExternalScorer, ScorerInfo};
pub use lexical::LexicalScorer;
pub use oracle::OracleScorer;
pub use pool::{ScoreJob, ScorerPool};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("scorer protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("scorer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("invalid scorer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

/// A passage handed to a scorer, with enough identity for lookup-based
/// scorers.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub doc_id: &'a str,
    pub passage_index: usize,
    pub text: &'a str,
}

pub trait PassageScorer: Send {
    /// One score per passage, in input order.
    fn score_batch(&mut self, query: &Query, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>>;
}

impl<S: PassageScorer + ?Sized> PassageScorer for Box<S> {
    fn score_batch(&mut self, query: &Query, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
        (**self).score_batch(query, passages)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relevance {
    Relevant,
    NotRelevant,
}

/// Threshold a probability; the boundary counts as relevant.
pub fn binarize(score: f64, tau: f64) -> Relevance {
    debug_assert!((0.0..=1.0).contains(&score), "score {score} outside [0,1]");
    if score >= tau {
        Relevance::Relevant
    } else {
        Relevance::NotRelevant
    }
}

pub enum ScorerHandle {
    Lexical(LexicalScorer),
    Oracle(OracleScorer),
    External(ExternalScorer),
}

impl PassageScorer for ScorerHandle {
    fn score_batch(&mut self, query: &Query, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
        match self {
            ScorerHandle::Lexical(s) => s.score_batch(query, passages),
            ScorerHandle::Oracle(s) => s.score_batch(query, passages),
            ScorerHandle::External(s) => s.score_batch(query, passages),
        }
    }
}

/// Scorer selection as written on the command line:
/// `lexical`, `oracle:<path>`, `exec:<cmd>` or `tcp:<host:port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Lexical,
    Oracle(PathBuf),
    Exec(String),
    Tcp(String),
}

impl FromStr for ScorerSpec {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self> {
        let spec = if s == "lexical" {
            ScorerSpec::Lexical
        } else if let Some(path) = s.strip_prefix("oracle:") {
            ScorerSpec::Oracle(PathBuf::from(path))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            ScorerSpec::Exec(cmd.to_string())
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            ScorerSpec::Tcp(addr.to_string())
        } else {
            return Err(ScorerError::Config(format!("unknown scorer {s:?}")));
        };
        match &spec {
            ScorerSpec::Exec(v) | ScorerSpec::Tcp(v) if v.trim().is_empty() => {
                Err(ScorerError::Config(format!("empty target in {s:?}")))
            }
            _ => Ok(spec),
        }
    }
}

/// What a spec needs to become a live handle.
#[derive(Clone, Default)]
pub struct ScorerContext {
    /// Collection statistics for the lexical scorer.
    pub index: Option<Arc<InvertedIndex>>,
    pub timeout: Option<Duration>,
}

impl ScorerSpec {
    pub fn connect(&self, ctx: &ScorerContext) -> Result<ScorerHandle> {
        let timeout = ctx.timeout.unwrap_or(DEFAULT_TIMEOUT);
        Ok(match self {
            ScorerSpec::Lexical => {
                let index = ctx.index.clone().ok_or_else(|| {
                    ScorerError::Config("the lexical scorer needs an index".into())
                })?;
                ScorerHandle::Lexical(LexicalScorer::new(index))
            }
            ScorerSpec::Oracle(path) => ScorerHandle::Oracle(OracleScorer::load(path)?),
            ScorerSpec::Exec(cmd) => ScorerHandle::External(ExternalScorer::spawn(cmd, timeout)?),
            ScorerSpec::Tcp(addr) => {
                ScorerHandle::External(ExternalScorer::connect(addr, timeout)?)
            }
        })
    }
}
