//! In-memory inverted index with Dirichlet-smoothed query likelihood and BM25
//! first-stage retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Query, RunEntry};
use crate::textproc::{Analyzer, AnalyzerConfig};

pub const DEFAULT_MU: f64 = 2500.0;
pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("query has no terms after analysis")]
    EmptyQuery,
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("invalid retrieval parameters: {0}")]
    InvalidParams(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an index snapshot")]
    BadMagic,
    #[error("snapshot version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, IndexError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TermEntry {
    postings: Vec<Posting>,
    cf: u64,
}

/// Documents are numbered in ascending doc-id order, so postings sorted by
/// internal number are also sorted by doc id.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    analyzer: Analyzer,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    doc_lookup: HashMap<String, u32>,
    terms: HashMap<String, TermEntry>,
    collection_length: u64,
}

impl PartialEq for InvertedIndex {
    fn eq(&self, other: &Self) -> bool {
        self.analyzer.config() == other.analyzer.config()
            && self.doc_ids == other.doc_ids
            && self.doc_lengths == other.doc_lengths
            && self.terms == other.terms
            && self.collection_length == other.collection_length
    }
}

impl InvertedIndex {
    pub fn build(documents: &[Document]) -> Self {
        Self::build_with(documents, AnalyzerConfig::default())
    }

    /// Indexes `title + " " + body` of every document.
    pub fn build_with(documents: &[Document], config: AnalyzerConfig) -> Self {
        let analyzer = Analyzer::new(config);
        let mut order: Vec<&Document> = documents.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));

        let mut doc_ids = Vec::with_capacity(order.len());
        let mut doc_lengths = Vec::with_capacity(order.len());
        let mut terms: HashMap<String, TermEntry> = HashMap::new();
        let mut collection_length = 0u64;
        for (num, doc) in order.into_iter().enumerate() {
            let text = match &doc.title {
                Some(title) => format!("{title} {}", doc.body),
                None => doc.body.clone(),
            };
            let tokens = analyzer.analyze(&text);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                let entry = terms.entry(term).or_default();
                entry.postings.push(Posting {
                    doc: num as u32,
                    tf,
                });
                entry.cf += tf as u64;
            }
            doc_ids.push(doc.id.clone());
            doc_lengths.push(tokens.len() as u32);
            collection_length += tokens.len() as u64;
        }
        let doc_lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        InvertedIndex {
            analyzer,
            doc_ids,
            doc_lengths,
            doc_lookup,
            terms,
            collection_length,
        }
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn collection_length(&self) -> u64 {
        self.collection_length
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.collection_length as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_lookup
            .get(doc_id)
            .map(|&n| self.doc_lengths[n as usize])
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.terms.get(term).map_or(0, |e| e.postings.len())
    }

    pub fn collection_frequency(&self, term: &str) -> u64 {
        self.terms.get(term).map_or(0, |e| e.cf)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.terms.get(term).map_or(&[], |e| &e.postings)
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        let Some(&num) = self.doc_lookup.get(doc_id) else {
            return 0;
        };
        let postings = self.postings(term);
        match postings.binary_search_by_key(&num, |p| p.doc) {
            Ok(i) => postings[i].tf,
            Err(_) => 0,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Analyzed query terms, in query order with repetitions.
    pub fn query_terms(&self, query: &str) -> Result<Vec<String>> {
        let terms = self.analyzer.analyze(query);
        if terms.is_empty() {
            Err(IndexError::EmptyQuery)
        } else {
            Ok(terms)
        }
    }

    /// BM25 idf, `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.doc_count(), self.doc_frequency(term))
    }

    /// Collection length used by smoothing; an index over empty documents
    /// behaves as if it held one token so probabilities stay finite.
    fn smoothing_length(&self) -> f64 {
        self.collection_length.max(1) as f64
    }
}

pub fn bm25_idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated term-frequency component of BM25.
pub fn bm25_tf(tf: f64, doc_len: f64, avg_len: f64, k1: f64, b: f64) -> f64 {
    if tf == 0.0 {
        return 0.0;
    }
    let norm = if avg_len > 0.0 {
        1.0 - b + b * doc_len / avg_len
    } else {
        1.0
    };
    tf * (k1 + 1.0) / (tf + k1 * norm)
}

/// One query term's contribution to the Dirichlet query likelihood.
/// Unseen terms use the floor `cf / C = 1 / (2C)`.
fn ql_term(tf: u32, cf: u64, doc_len: u32, collection_len: f64, mu: f64) -> f64 {
    let p = if cf == 0 {
        1.0 / (2.0 * collection_len)
    } else {
        cf as f64 / collection_len
    };
    ((tf as f64 + mu * p) / (doc_len as f64 + mu)).ln()
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(IndexError::InvalidParams(format!(
            "mu must be > 0, got {mu}"
        )))
    }
}

fn check_bm25(k1: f64, b: f64) -> Result<()> {
    if !(k1 >= 0.0 && k1.is_finite()) {
        return Err(IndexError::InvalidParams(format!(
            "k1 must be >= 0, got {k1}"
        )));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(IndexError::InvalidParams(format!(
            "b must be in [0,1], got {b}"
        )));
    }
    Ok(())
}

pub fn score_ql(query: &str, doc_id: &str, index: &InvertedIndex, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let terms = index.query_terms(query)?;
    let doc_len = index
        .doc_length(doc_id)
        .ok_or_else(|| IndexError::UnknownDocument(doc_id.to_string()))?;
    let c = index.smoothing_length();
    Ok(terms
        .iter()
        .map(|t| {
            ql_term(
                index.term_frequency(t, doc_id),
                index.collection_frequency(t),
                doc_len,
                c,
                mu,
            )
        })
        .sum())
}

pub fn score_bm25(
    query: &str,
    doc_id: &str,
    index: &InvertedIndex,
    k1: f64,
    b: f64,
) -> Result<f64> {
    check_bm25(k1, b)?;
    let terms = index.query_terms(query)?;
    let doc_len = index
        .doc_length(doc_id)
        .ok_or_else(|| IndexError::UnknownDocument(doc_id.to_string()))?;
    let avg = index.avg_doc_length();
    Ok(terms
        .iter()
        .map(|t| {
            let df = index.doc_frequency(t);
            if df == 0 {
                return 0.0;
            }
            let tf = index.term_frequency(t, doc_id) as f64;
            index.idf(t) * bm25_tf(tf, doc_len as f64, avg, k1, b)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RetrievalModel {
    QlDirichlet { mu: f64 },
    Bm25 { k1: f64, b: f64 },
}

impl RetrievalModel {
    pub fn name(&self) -> &'static str {
        match self {
            RetrievalModel::QlDirichlet { .. } => "ql",
            RetrievalModel::Bm25 { .. } => "bm25",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub model: RetrievalModel,
    pub top_k: usize,
}

impl RetrievalParams {
    pub fn ql(mu: f64, top_k: usize) -> Self {
        RetrievalParams {
            model: RetrievalModel::QlDirichlet { mu },
            top_k,
        }
    }

    pub fn bm25(k1: f64, b: f64, top_k: usize) -> Self {
        RetrievalParams {
            model: RetrievalModel::Bm25 { k1, b },
            top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(IndexError::InvalidParams("top_k must be >= 1".into()));
        }
        match self.model {
            RetrievalModel::QlDirichlet { mu } => check_mu(mu),
            RetrievalModel::Bm25 { k1, b } => check_bm25(k1, b),
        }
    }
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams::ql(DEFAULT_MU, 1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ql,
    Bm25,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ql" | "qlm" => Ok(ModelKind::Ql),
            "bm25" => Ok(ModelKind::Bm25),
            other => Err(format!("unknown retrieval model {other:?}")),
        }
    }
}

fn by_score_then_id(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Scores every candidate document and returns the top `top_k` as run
/// entries tagged with the model name. Ties go to the smaller doc id.
pub fn retrieve(
    query: &Query,
    index: &InvertedIndex,
    params: &RetrievalParams,
) -> Result<Vec<RunEntry>> {
    params.validate()?;
    let terms = index.query_terms(&query.text)?;
    let n = index.doc_count();
    let mut scored: Vec<(f64, u32)> = match params.model {
        RetrievalModel::QlDirichlet { mu } => {
            let c = index.smoothing_length();
            // tf lookup tables for each distinct query term
            let mut tfs: HashMap<&str, HashMap<u32, u32>> = HashMap::new();
            for t in &terms {
                tfs.entry(t.as_str())
                    .or_insert_with(|| index.postings(t).iter().map(|p| (p.doc, p.tf)).collect());
            }
            (0..n as u32)
                .map(|d| {
                    let len = index.doc_lengths[d as usize];
                    let score = terms
                        .iter()
                        .map(|t| {
                            let tf = tfs[t.as_str()].get(&d).copied().unwrap_or(0);
                            ql_term(tf, index.collection_frequency(t), len, c, mu)
                        })
                        .sum();
                    (score, d)
                })
                .collect()
        }
        RetrievalModel::Bm25 { k1, b } => {
            let avg = index.avg_doc_length();
            let mut tfs: HashMap<&str, HashMap<u32, u32>> = HashMap::new();
            let mut candidates: Vec<u32> = Vec::new();
            for t in &terms {
                tfs.entry(t.as_str()).or_insert_with(|| {
                    let postings = index.postings(t);
                    candidates.extend(postings.iter().map(|p| p.doc));
                    postings.iter().map(|p| (p.doc, p.tf)).collect()
                });
            }
            candidates.sort_unstable();
            candidates.dedup();
            candidates
                .into_iter()
                .map(|d| {
                    let len = index.doc_lengths[d as usize] as f64;
                    let score = terms
                        .iter()
                        .map(|t| match tfs[t.as_str()].get(&d) {
                            Some(&tf) => index.idf(t) * bm25_tf(tf as f64, len, avg, k1, b),
                            None => 0.0,
                        })
                        .sum();
                    (score, d)
                })
                .collect()
        }
    };
    scored.sort_by(by_score_then_id);
    scored.truncate(params.top_k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, d))| RunEntry {
            query_id: query.id.clone(),
            doc_id: index.doc_ids[d as usize].clone(),
            rank: i + 1,
            score,
            tag: params.model.name().to_string(),
        })
        .collect())
}

/// Retrieves for every query in parallel. Queries whose text has no indexable
/// terms yield no entries. Output order follows `queries`.
pub fn retrieve_all(
    queries: &[Query],
    index: &InvertedIndex,
    params: &RetrievalParams,
) -> Result<Vec<RunEntry>> {
    params.validate()?;
    let per_query: Vec<Result<Vec<RunEntry>>> = queries
        .par_iter()
        .map(|q| match retrieve(q, index, params) {
            Err(IndexError::EmptyQuery) => Ok(Vec::new()),
            other => other,
        })
        .collect();
    let mut out = Vec::new();
    for r in per_query {
        out.extend(r?);
    }
    Ok(out)
}

// Snapshot layout, all integers little-endian:
//   magic  b"PRIDX\0\0\0"
//   u32    format version
//   u8     remove_stopwords, u8 stem
//   u64    collection length
//   u32    doc count, then per doc: u32 id length, id bytes, u32 token count
//   u32    term count, then per term in byte order:
//          u32 term length, term bytes, u64 cf, u32 posting count,
//          posting count x (u32 doc number, u32 tf)
const MAGIC: &[u8; 8] = b"PRIDX\0\0\0";
pub const SNAPSHOT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(IndexError::Corrupt("unexpected end of snapshot".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| IndexError::Corrupt("string is not UTF-8".into()))
    }
}

impl InvertedIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, SNAPSHOT_VERSION);
        let config = self.analyzer.config();
        out.push(config.remove_stopwords as u8);
        out.push(config.stem as u8);
        put_u64(&mut out, self.collection_length);
        put_u32(&mut out, self.doc_ids.len() as u32);
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            put_str(&mut out, id);
            put_u32(&mut out, *len);
        }
        let mut terms: Vec<(&String, &TermEntry)> = self.terms.iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        put_u32(&mut out, terms.len() as u32);
        for (term, entry) in terms {
            put_str(&mut out, term);
            put_u64(&mut out, entry.cf);
            put_u32(&mut out, entry.postings.len() as u32);
            for p in &entry.postings {
                put_u32(&mut out, p.doc);
                put_u32(&mut out, p.tf);
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < MAGIC.len() || &data[..MAGIC.len()] != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let mut cur = Cursor {
            data,
            pos: MAGIC.len(),
        };
        let version = cur.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let config = AnalyzerConfig {
            remove_stopwords: cur.u8()? != 0,
            stem: cur.u8()? != 0,
        };
        let collection_length = cur.u64()?;
        let n_docs = cur.u32()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs.min(1 << 20));
        let mut doc_lengths = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            doc_ids.push(cur.string()?);
            doc_lengths.push(cur.u32()?);
        }
        if doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IndexError::Corrupt(
                "document ids not strictly ascending".into(),
            ));
        }
        let length_sum: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        if length_sum != collection_length {
            return Err(IndexError::Corrupt(
                "document lengths do not sum to the collection length".into(),
            ));
        }
        let n_terms = cur.u32()? as usize;
        let mut terms = HashMap::with_capacity(n_terms.min(1 << 20));
        for _ in 0..n_terms {
            let term = cur.string()?;
            let cf = cur.u64()?;
            let n_postings = cur.u32()? as usize;
            let mut postings = Vec::with_capacity(n_postings.min(1 << 20));
            let mut sum = 0u64;
            for _ in 0..n_postings {
                let doc = cur.u32()?;
                let tf = cur.u32()?;
                if doc as usize >= n_docs || postings.last().is_some_and(|p: &Posting| p.doc >= doc)
                {
                    return Err(IndexError::Corrupt(format!("bad postings for {term:?}")));
                }
                sum += tf as u64;
                postings.push(Posting { doc, tf });
            }
            if sum != cf {
                return Err(IndexError::Corrupt(format!("cf mismatch for {term:?}")));
            }
            terms.insert(term, TermEntry { postings, cf });
        }
        if cur.pos != data.len() {
            return Err(IndexError::Corrupt("trailing bytes".into()));
        }
        let doc_lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(InvertedIndex {
            analyzer: Analyzer::new(config),
            doc_ids,
            doc_lengths,
            doc_lookup,
            terms,
            collection_length,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        fs::File::open(path)?.read_to_end(&mut data)?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn doc(id: &str, body: &str) -> Document {
        Document {
            id: id.into(),
            title: None,
            body: body.into(),
        }
    }

    fn toy() -> InvertedIndex {
        InvertedIndex::build(&[doc("d1", "a b a"), doc("d2", "b c")])
    }

    fn q(text: &str) -> Query {
        Query {
            id: "q".into(),
            text: text.into(),
        }
    }

    #[test]
    fn counting() {
        let index = toy();
        assert_eq!(index.collection_length(), 5);
        assert_eq!(index.doc_frequency("b"), 2);
        assert_eq!(index.term_frequency("a", "d1"), 2);
        assert_eq!(index.collection_frequency("a"), 2);
    }

    #[test]
    fn empty_corpus_retrieves_nothing() {
        let index = InvertedIndex::build(&[]);
        assert_eq!(index.doc_count(), 0);
        assert!(retrieve(&q("a"), &index, &RetrievalParams::ql(1.0, 10))
            .unwrap()
            .is_empty());
        assert!(
            retrieve(&q("a"), &index, &RetrievalParams::bm25(0.9, 0.4, 10))
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn title_is_indexed() {
        let index = InvertedIndex::build(&[Document {
            id: "d".into(),
            title: Some("x".into()),
            body: String::new(),
        }]);
        assert_eq!(index.doc_length("d"), Some(1));
    }

    #[test]
    fn ql_hand_value() {
        // (2 + 1 * 2/5) / (3 + 1) = 0.6
        let s = score_ql("a", "d1", &toy(), 1.0).unwrap();
        assert_abs_diff_eq!(s, 0.6f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s, -0.5108, epsilon = 1e-4);
        let doubled = score_ql("a a", "d1", &toy(), 1.0).unwrap();
        assert_abs_diff_eq!(doubled, 2.0 * s, epsilon = 1e-12);
        assert!(matches!(
            score_ql("", "d1", &toy(), 1.0),
            Err(IndexError::EmptyQuery)
        ));
    }

    #[test]
    fn ql_unseen_term_floor() {
        // cf = 0 -> mu * 1/(2C) / (|d| + mu) = 0.1 / 4
        let s = score_ql("zzz", "d1", &toy(), 1.0).unwrap();
        assert_abs_diff_eq!(s, (0.1f64 / 4.0).ln(), epsilon = 1e-12);
        assert!(s < score_ql("c", "d1", &toy(), 1.0).unwrap());
    }

    #[test]
    fn bm25_hand_value() {
        // N=2, df(t)=1, tf(t,x)=1, |x|=3, avgdl=2.5
        let index = InvertedIndex::build(&[doc("x", "t u v"), doc("y", "u v")]);
        let s = score_bm25("t", "x", &index, 0.9, 0.4).unwrap();
        let idf = 2f64.ln();
        let tf_part = 1.9 / (1.0 + 0.9 * (0.6 + 0.4 * 3.0 / 2.5));
        assert_abs_diff_eq!(s, idf * tf_part, epsilon = 1e-12);
        assert_abs_diff_eq!(tf_part, 0.9635, epsilon = 1e-4);
        assert_abs_diff_eq!(s, 0.6679, epsilon = 1e-4);
    }

    #[test]
    fn bm25_edge_cases() {
        let index = toy();
        assert_eq!(score_bm25("zzz", "d1", &index, 0.9, 0.4).unwrap(), 0.0);
        assert!(matches!(
            score_bm25("  ", "d1", &index, 0.9, 0.4),
            Err(IndexError::EmptyQuery)
        ));
        let long = InvertedIndex::build(&[doc("a", "x y y y y y"), doc("b", "x z")]);
        let s1 = score_bm25("x", "a", &long, 0.9, 0.0).unwrap();
        let s2 = score_bm25("x", "b", &long, 0.9, 0.0).unwrap();
        assert_abs_diff_eq!(s1, s2, epsilon = 1e-15);
    }

    #[test]
    fn bm25_prefers_shorter_doc() {
        let run = retrieve(&q("b"), &toy(), &RetrievalParams::bm25(0.9, 0.4, 2)).unwrap();
        let ids: Vec<&str> = run.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["d2", "d1"]);
        assert_eq!(run[0].rank, 1);
        assert_eq!(run[1].rank, 2);
    }

    #[test]
    fn top_k_and_ties() {
        let index = InvertedIndex::build(&[doc("b", "x"), doc("a", "x"), doc("c", "y")]);
        let run = retrieve(&q("x"), &index, &RetrievalParams::bm25(0.9, 0.4, 1)).unwrap();
        assert_eq!(run.len(), 1);
        assert_eq!(run[0].doc_id, "a");
        let run = retrieve(&q("x"), &index, &RetrievalParams::ql(10.0, 10)).unwrap();
        let ids: Vec<&str> = run.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn invalid_params() {
        let index = toy();
        assert!(retrieve(&q("a"), &index, &RetrievalParams::ql(0.0, 1)).is_err());
        assert!(retrieve(&q("a"), &index, &RetrievalParams::bm25(0.9, 1.5, 1)).is_err());
        assert!(retrieve(&q("a"), &index, &RetrievalParams::ql(1.0, 0)).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let index = InvertedIndex::build_with(
            &[doc("d1", "a b a"), doc("d2", "b c"), doc("d3", "")],
            AnalyzerConfig {
                remove_stopwords: true,
                stem: false,
            },
        );
        let bytes = index.to_bytes();
        let back = InvertedIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.to_bytes(), bytes);

        let mut bumped = bytes.clone();
        bumped[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            InvertedIndex::from_bytes(&bumped),
            Err(IndexError::VersionMismatch { found: 99, .. })
        ));
        assert!(matches!(
            InvertedIndex::from_bytes(b"nope"),
            Err(IndexError::BadMagic)
        ));
        assert!(InvertedIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn index_invariants(docs in prop::collection::vec("[a-e ]{0,30}", 0..20)) {
            let docs: Vec<Document> = docs
                .iter()
                .enumerate()
                .map(|(i, b)| doc(&format!("d{i:02}"), b))
                .collect();
            let index = InvertedIndex::build(&docs);
            let total: u64 = index.doc_ids().iter().map(|d| index.doc_length(d).unwrap() as u64).sum();
            prop_assert_eq!(total, index.collection_length());
            for term in ["a", "b", "c", "d", "e"] {
                let postings = index.postings(term);
                prop_assert_eq!(postings.len(), index.doc_frequency(term));
                prop_assert!(postings.windows(2).all(|w| w[0].doc < w[1].doc));
            }
        }

        #[test]
        fn bm25_monotone_in_tf(tf in 0u32..50, len in 1u32..500, avg in 1.0f64..300.0, k1 in 0.0f64..3.0, b in 0.0f64..=1.0) {
            let lo = bm25_tf(tf as f64, len as f64, avg, k1, b);
            let hi = bm25_tf((tf + 1) as f64, len as f64, avg, k1, b);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn ql_is_additive(a in "[a-d]( [a-d]){0,4}", b in "[a-f]( [a-f]){0,4}") {
            let index = InvertedIndex::build(&[doc("d1", "a b c a"), doc("d2", "b d d"), doc("d3", "c")]);
            for d in ["d1", "d2", "d3"] {
                let joint = score_ql(&format!("{a} {b}"), d, &index, 50.0).unwrap();
                let split = score_ql(&a, d, &index, 50.0).unwrap() + score_ql(&b, d, &index, 50.0).unwrap();
                prop_assert!((joint - split).abs() < 1e-9);
            }
        }
    }
}
