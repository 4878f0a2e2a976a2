use std::collections::HashSet;
use std::path::Path;

use super::{PassageScorer, Result, ScoreInput};
use crate::corpus::{read_text, CorpusError, Query};

/// Scores 1.0 for passages judged relevant in a passage-level qrels file and
/// 0.0 otherwise.
///
/// Passage qrels lines are `qid docid passage_index grade`; a grade above 0
/// marks the passage relevant.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    relevant: HashSet<(String, String, usize)>,
}

impl OracleScorer {
    pub fn new<I>(relevant: I) -> Self
    where
        I: IntoIterator<Item = (String, String, usize)>,
    {
        OracleScorer {
            relevant: relevant.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_text(path)?)?)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, CorpusError> {
        let mut relevant = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let malformed = |reason: &str| CorpusError::MalformedRecord {
                line: i + 1,
                reason: reason.to_string(),
            };
            let [qid, docid, index, grade] = fields.as_slice() else {
                return Err(malformed("expected qid docid passage_index grade"));
            };
            let index: usize = index
                .parse()
                .map_err(|_| malformed("passage index is not a non-negative integer"))?;
            let grade: i64 = grade
                .parse()
                .map_err(|_| malformed("grade is not an integer"))?;
            if grade < 0 {
                return Err(CorpusError::NegativeGrade { line: i + 1, grade });
            }
            let key = (qid.to_string(), docid.to_string(), index);
            if grade > 0 {
                relevant.insert(key);
            } else {
                relevant.remove(&key);
            }
        }
        Ok(OracleScorer { relevant })
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str, passage_index: usize) -> bool {
        self.relevant
            .contains(&(query_id.to_string(), doc_id.to_string(), passage_index))
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }
}

impl PassageScorer for OracleScorer {
    fn score_batch(&mut self, query: &Query, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
        Ok(passages
            .iter()
            .map(|p| {
                if self.is_relevant(&query.id, p.doc_id, p.passage_index) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}
