//! Passage scores to document scores, and reranking of first-stage runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{group_run, read_text, CorpusError, Qrels, RunEntry};
use crate::eval::{compensated_sum, evaluate_grouped, EvalError, Metric};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("document has no passage scores")]
    NoPassages,
    #[error("interpolation needs a first-stage score")]
    MissingFirstStageScore,
    #[error("invalid aggregation: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, AggregateError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    FirstP,
    MaxP,
    SumP,
    AvgP,
    /// `alpha * normalized first-stage score + (1 - alpha) * mean of the top
    /// k passage scores`.
    InterpTopK {
        k: usize,
        alpha: f64,
    },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FirstP => "firstp",
            Strategy::MaxP => "maxp",
            Strategy::SumP => "sump",
            Strategy::AvgP => "avgp",
            Strategy::InterpTopK { .. } => "interp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Strategy::InterpTopK { k, alpha } = *self {
            if k == 0 {
                return Err(AggregateError::InvalidStrategy(
                    "k must be at least 1".into(),
                ));
            }
            if !(0.0..=1.0).contains(&alpha) {
                return Err(AggregateError::InvalidStrategy(format!(
                    "alpha must be in [0,1], got {alpha}"
                )));
            }
        }
        Ok(())
    }

    pub const SIMPLE: [Strategy; 4] = [
        Strategy::FirstP,
        Strategy::MaxP,
        Strategy::SumP,
        Strategy::AvgP,
    ];
}

impl FromStr for Strategy {
    type Err = AggregateError;

    /// `firstp`, `maxp`, `sump`, `avgp`. Interpolation needs parameters and is
    /// built directly.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "firstp" => Ok(Strategy::FirstP),
            "maxp" => Ok(Strategy::MaxP),
            "sump" => Ok(Strategy::SumP),
            "avgp" => Ok(Strategy::AvgP),
            other => Err(AggregateError::InvalidStrategy(format!(
                "unknown aggregation {other:?}"
            ))),
        }
    }
}

/// Aggregates passage scores given in passage-index order.
pub fn aggregate(scores: &[f64], strategy: Strategy, first_stage: Option<f64>) -> Result<f64> {
    strategy.validate()?;
    let Some(&first) = scores.first() else {
        return Err(AggregateError::NoPassages);
    };
    let n = scores.len() as f64;
    Ok(match strategy {
        Strategy::FirstP => first,
        Strategy::MaxP => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Strategy::SumP => compensated_sum(scores.iter().copied()),
        Strategy::AvgP => compensated_sum(scores.iter().copied()) / n,
        Strategy::InterpTopK { k, alpha } => {
            let first_stage = first_stage.ok_or(AggregateError::MissingFirstStageScore)?;
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted.truncate(k);
            let top = compensated_sum(sorted.iter().copied()) / sorted.len() as f64;
            alpha * first_stage + (1.0 - alpha) * top
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentScore {
    pub query_id: String,
    pub doc_id: String,
    pub value: f64,
    pub n_passages: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MinMax,
    ZScore,
}

impl FromStr for Normalization {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Normalization::MinMax),
            "zscore" => Ok(Normalization::ZScore),
            other => Err(AggregateError::InvalidStrategy(format!(
                "unknown normalization {other:?}"
            ))),
        }
    }
}

/// Normalizes first-stage scores of one query's candidates. A constant score
/// list maps to 1.0 under min-max and 0.0 under z-score.
pub fn normalize_scores(scores: &[f64], norm: Normalization) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    match norm {
        Normalization::MinMax => {
            let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
            } else {
                vec![1.0; scores.len()]
            }
        }
        Normalization::ZScore => {
            let n = scores.len() as f64;
            let mean = compensated_sum(scores.iter().copied()) / n;
            let var = compensated_sum(scores.iter().map(|s| (s - mean).powi(2))) / n;
            if var > 0.0 {
                let sd = var.sqrt();
                scores.iter().map(|s| (s - mean) / sd).collect()
            } else {
                vec![0.0; scores.len()]
            }
        }
    }
}

/// Passage scores keyed by (query id, doc id), each list in passage-index
/// order.
pub type PassageScores = HashMap<(String, String), Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageScoreRecord {
    pub query_id: String,
    pub doc_id: String,
    pub passage_index: usize,
    pub score: f64,
}

/// Groups records; every (query, doc) must list passage indices 0..n exactly
/// once.
pub fn group_passage_scores(records: Vec<PassageScoreRecord>) -> Result<PassageScores> {
    let mut by_pair: HashMap<(String, String), BTreeMap<usize, f64>> = HashMap::new();
    for r in records {
        if !r.score.is_finite() {
            return Err(AggregateError::InvalidStrategy(format!(
                "non-finite score for {} {} #{}",
                r.query_id, r.doc_id, r.passage_index
            )));
        }
        let slot = by_pair
            .entry((r.query_id.clone(), r.doc_id.clone()))
            .or_default();
        if slot.insert(r.passage_index, r.score).is_some() {
            return Err(CorpusError::MalformedRecord {
                line: 0,
                reason: format!(
                    "passage {} of {} scored twice for {}",
                    r.passage_index, r.doc_id, r.query_id
                ),
            }
            .into());
        }
    }
    let mut out = HashMap::with_capacity(by_pair.len());
    for (key, scores) in by_pair {
        if scores.keys().enumerate().any(|(i, &idx)| i != idx) {
            return Err(CorpusError::MalformedRecord {
                line: 0,
                reason: format!("passage indices of {} for {} are not 0..n", key.1, key.0),
            }
            .into());
        }
        out.insert(key, scores.into_values().collect());
    }
    Ok(out)
}

pub fn load_passage_scores(path: &Path) -> Result<PassageScores> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str::<PassageScoreRecord>(line).map_err(|e| {
                CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: e.to_string(),
                }
            })?,
        );
    }
    group_passage_scores(records)
}

/// Writes records as JSON lines, sorted by (query, doc, passage index).
pub fn write_passage_scores(records: &[PassageScoreRecord], path: &Path) -> Result<()> {
    let mut sorted: Vec<&PassageScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.query_id, &a.doc_id, a.passage_index).cmp(&(&b.query_id, &b.doc_id, b.passage_index))
    });
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in sorted {
        serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankOptions {
    pub strategy: Strategy,
    pub normalization: Normalization,
}

impl RerankOptions {
    pub fn new(strategy: Strategy) -> Self {
        RerankOptions {
            strategy,
            normalization: Normalization::MinMax,
        }
    }
}

/// Reorders each query's candidates by aggregated passage score, ties by doc
/// id. Candidates without passage scores go last in first-stage order with a
/// score one below the lowest aggregated score of the query.
pub fn rerank(
    first_stage: &[RunEntry],
    passage_scores: &PassageScores,
    options: RerankOptions,
    tag: &str,
) -> Result<Vec<RunEntry>> {
    options.strategy.validate()?;
    let mut out = Vec::with_capacity(first_stage.len());
    for (qid, entries) in group_run(first_stage) {
        let normalized = normalize_scores(
            &entries.iter().map(|e| e.score).collect::<Vec<_>>(),
            options.normalization,
        );
        let mut scored: Vec<(f64, &str)> = Vec::new();
        let mut empty: Vec<&str> = Vec::new();
        for (entry, norm) in entries.iter().zip(normalized) {
            match passage_scores.get(&(qid.clone(), entry.doc_id.clone())) {
                Some(scores) if !scores.is_empty() => {
                    let value = aggregate(scores, options.strategy, Some(norm))?;
                    scored.push((value, &entry.doc_id));
                }
                _ => empty.push(&entry.doc_id),
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let floor = scored.last().map_or(0.0, |s| s.0) - 1.0;
        let ordered = scored
            .into_iter()
            .chain(empty.into_iter().map(|d| (floor, d)));
        out.extend(ordered.enumerate().map(|(i, (score, doc))| RunEntry {
            query_id: qid.clone(),
            doc_id: doc.to_string(),
            rank: i + 1,
            score,
            tag: tag.to_string(),
        }));
    }
    Ok(out)
}

/// Document scores for every scored candidate, in run order.
pub fn document_scores(
    first_stage: &[RunEntry],
    passage_scores: &PassageScores,
    options: RerankOptions,
) -> Result<Vec<DocumentScore>> {
    let mut out = Vec::new();
    for (qid, entries) in group_run(first_stage) {
        let normalized = normalize_scores(
            &entries.iter().map(|e| e.score).collect::<Vec<_>>(),
            options.normalization,
        );
        for (entry, norm) in entries.iter().zip(normalized) {
            if let Some(scores) = passage_scores.get(&(qid.clone(), entry.doc_id.clone())) {
                if !scores.is_empty() {
                    out.push(DocumentScore {
                        query_id: qid.clone(),
                        doc_id: entry.doc_id.clone(),
                        value: aggregate(scores, options.strategy, Some(norm))?,
                        n_passages: scores.len(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Grid search over alpha in {0, 0.1, ..., 1} maximizing MAP on the given
/// (validation) run. Ties keep the smaller alpha.
pub fn fit_alpha(
    validation_run: &[RunEntry],
    passage_scores: &PassageScores,
    qrels: &Qrels,
    k: usize,
    normalization: Normalization,
) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in 0..=10 {
        let alpha = step as f64 / 10.0;
        let options = RerankOptions {
            strategy: Strategy::InterpTopK { k, alpha },
            normalization,
        };
        let run = rerank(validation_run, passage_scores, options, "fit")?;
        let map = evaluate_grouped(&group_run(&run), qrels, Metric::AveragePrecision, None)?.mean;
        if map > best.0 {
            best = (map, alpha);
        }
    }
    Ok(best.1)
}
