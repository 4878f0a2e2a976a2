//! Python bindings: tokenization, BM25/QL retrieval, chunking, aggregation,
//! evaluation metrics, paired t-tests and fold assignment.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use passrank::aggregate::{aggregate as aggregate_scores, Strategy};
use passrank::corpus::{self, Document, Qrels, Query, RunEntry};
use passrank::eval::{self, Gain, Metric};
use passrank::index::{self, InvertedIndex, RetrievalParams};
use passrank::passage;
use passrank::textproc::{self, AnalyzerConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Lower-cased word tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    textproc::tokenize_words(text)
}

/// Sentences as `(first_token, end_token)` ranges over `tokenize(text)`.
#[pyfunction]
fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    textproc::split_sentences(text)
        .into_iter()
        .map(|s| (s.first_token, s.end_token))
        .collect()
}

/// In-memory inverted index over `(doc_id, title, body)` triples.
#[pyclass(frozen)]
struct Index {
    inner: Arc<InvertedIndex>,
}

#[pymethods]
impl Index {
    #[new]
    #[pyo3(signature = (docs, stem = false, remove_stopwords = false))]
    fn new(
        docs: Vec<(String, Option<String>, String)>,
        stem: bool,
        remove_stopwords: bool,
    ) -> Self {
        let docs: Vec<Document> = docs
            .into_iter()
            .map(|(id, title, body)| Document { id, title, body })
            .collect();
        let config = AnalyzerConfig {
            remove_stopwords,
            stem,
        };
        Index {
            inner: Arc::new(InvertedIndex::build_with(&docs, config)),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.doc_count()
    }

    /// Ranked `(doc_id, score)` pairs.
    #[pyo3(signature = (query, model = "ql", top_k = 1000, mu = 2500.0, k1 = 0.9, b = 0.4))]
    fn retrieve(
        &self,
        query: &str,
        model: &str,
        top_k: usize,
        mu: f64,
        k1: f64,
        b: f64,
    ) -> PyResult<Vec<(String, f64)>> {
        let params = match model {
            "ql" => RetrievalParams::ql(mu, top_k),
            "bm25" => RetrievalParams::bm25(k1, b, top_k),
            other => return Err(value_error(format!("unknown model {other:?}"))),
        };
        let q = Query {
            id: "q".into(),
            text: query.to_string(),
        };
        let run = index::retrieve(&q, &self.inner, &params).map_err(value_error)?;
        Ok(run.into_iter().map(|e| (e.doc_id, e.score)).collect())
    }
}

/// Passages as `(index, start, end, text)` tuples. Policies: `sentence100`,
/// `window150-75`, `sentences`.
#[pyfunction]
#[pyo3(signature = (doc_id, body, title = None, policy = "sentence100", seed = 123))]
fn chunk(
    doc_id: &str,
    body: &str,
    title: Option<String>,
    policy: &str,
    seed: u64,
) -> PyResult<Vec<(usize, usize, usize, String)>> {
    let policy = passage::parse_policy(policy, seed).map_err(value_error)?;
    let doc = Document {
        id: doc_id.to_string(),
        title,
        body: body.to_string(),
    };
    let passages = passage::chunk_document(&doc, &policy).map_err(value_error)?;
    Ok(passages
        .into_iter()
        .map(|p| (p.index, p.start, p.end, p.text))
        .collect())
}

/// One document score from its passage scores.
#[pyfunction]
#[pyo3(signature = (scores, strategy = "maxp", first_stage = None, k = 3, alpha = 0.5))]
fn aggregate(
    scores: Vec<f64>,
    strategy: &str,
    first_stage: Option<f64>,
    k: usize,
    alpha: f64,
) -> PyResult<f64> {
    let strategy = match strategy {
        "interp" => Strategy::InterpTopK { k, alpha },
        name => name.parse().map_err(value_error)?,
    };
    aggregate_scores(&scores, strategy, first_stage).map_err(value_error)
}

fn build_run(run: Vec<(String, String, f64)>) -> Vec<RunEntry> {
    let mut ranks: HashMap<String, usize> = HashMap::new();
    run.into_iter()
        .map(|(query_id, doc_id, score)| {
            let rank = ranks.entry(query_id.clone()).or_insert(0);
            *rank += 1;
            RunEntry {
                query_id,
                doc_id,
                rank: *rank,
                score,
                tag: "py".into(),
            }
        })
        .collect()
}

/// `(mean, {query_id: value})` for a run given as ranked
/// `(query_id, doc_id, score)` rows.
#[pyfunction]
#[pyo3(signature = (run, qrels, metric = "ndcg20", gain = "exp"))]
fn evaluate(
    run: Vec<(String, String, f64)>,
    qrels: Vec<(String, String, u32)>,
    metric: &str,
    gain: &str,
) -> PyResult<(f64, BTreeMap<String, f64>)> {
    let gain: Gain = gain.parse().map_err(value_error)?;
    let metric = Metric::parse(metric, gain).map_err(value_error)?;
    let mut judged = Qrels::new();
    for (q, d, g) in &qrels {
        judged.insert(q, d, *g);
    }
    let report = eval::evaluate(&build_run(run), &judged, metric).map_err(value_error)?;
    Ok((report.mean, report.per_query))
}

/// Paired two-sided t-test: `(t, p, bonferroni_p)`.
#[pyfunction]
#[pyo3(signature = (a, b, comparisons = 1))]
fn ttest(a: Vec<f64>, b: Vec<f64>, comparisons: usize) -> PyResult<(f64, f64, f64)> {
    let r = eval::paired_ttest(&a, &b, comparisons, 0.05).map_err(value_error)?;
    Ok((r.t_statistic, r.p_value, r.corrected_p))
}

/// Query ids split into `k` folds.
#[pyfunction]
#[pyo3(signature = (query_ids, k = 5, seed = 123))]
fn make_folds(query_ids: Vec<String>, k: usize, seed: u64) -> PyResult<Vec<Vec<String>>> {
    Ok(corpus::make_folds(&query_ids, k, seed)
        .map_err(value_error)?
        .folds)
}

#[pymodule]
fn passrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Index>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(chunk, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ttest, m)?)?;
    m.add_function(wrap_pyfunction!(make_folds, m)?)?;
    Ok(())
}
