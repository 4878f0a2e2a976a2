use std::collections::HashMap;
use std::sync::Arc;

use super::{PassageScorer, Result, ScoreInput};
use crate::corpus::Query;
use crate::index::{bm25_tf, InvertedIndex, DEFAULT_B, DEFAULT_K1};
use crate::passage::DEFAULT_TARGET_LEN;

/// BM25 between the query and the passage text, with idf taken from the
/// document collection and the score squashed to `[0, 1)` by `s / (s + 1)`.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    index: Arc<InvertedIndex>,
    pub k1: f64,
    pub b: f64,
    /// Reference passage length for length normalization.
    pub avg_passage_len: f64,
}

impl LexicalScorer {
    pub fn new(index: Arc<InvertedIndex>) -> Self {
        LexicalScorer {
            index,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            avg_passage_len: DEFAULT_TARGET_LEN as f64,
        }
    }

    pub fn raw_score(&self, query_terms: &[String], text: &str) -> f64 {
        let terms = self.index.analyzer().analyze(text);
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for t in &terms {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        query_terms
            .iter()
            .map(|t| {
                let f = tf.get(t.as_str()).copied().unwrap_or(0) as f64;
                self.index.idf(t)
                    * bm25_tf(f, terms.len() as f64, self.avg_passage_len, self.k1, self.b)
            })
            .sum()
    }
}

impl PassageScorer for LexicalScorer {
    fn score_batch(&mut self, query: &Query, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
        let query_terms = self.index.analyzer().analyze(&query.text);
        Ok(passages
            .iter()
            .map(|p| {
                let s = self.raw_score(&query_terms, p.text);
                s / (s + 1.0)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    #[test]
    fn matching_passage_scores_higher() {
        let docs = vec![
            Document {
                id: "a".into(),
                title: None,
                body: "the cat sat".into(),
            },
            Document {
                id: "b".into(),
                title: None,
                body: "dogs only here".into(),
            },
        ];
        let mut scorer = LexicalScorer::new(Arc::new(InvertedIndex::build(&docs)));
        let query = Query {
            id: "q".into(),
            text: "cat".into(),
        };
        let passages = [
            ScoreInput {
                doc_id: "a",
                passage_index: 0,
                text: "the cat sat",
            },
            ScoreInput {
                doc_id: "b",
                passage_index: 0,
                text: "dogs only",
            },
        ];
        let scores = scorer.score_batch(&query, &passages).unwrap();
        assert!(scores[0] > scores[1]);
        assert_eq!(scores[1], 0.0);
        assert!(scores.iter().all(|s| (0.0..1.0).contains(s)));
    }
}
