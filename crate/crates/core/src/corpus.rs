//! Readers and writers for corpora, queries, qrels, run files, fold
//! specifications and training-instance exports.
//!
//! All loaders are strict: structural problems are reported with a line number
//! and never repaired.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    InvalidUtf8 { path: String },
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("duplicate query id {0:?}")]
    DuplicateQueryId(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("negative grade {grade} at line {line}")]
    NegativeGrade { line: usize, grade: i64 },
    #[error(
        "query {query_id}: ranks are not contiguous from 1 (expected {expected}, found {found})"
    )]
    RankGap {
        query_id: String,
        expected: usize,
        found: usize,
    },
    #[error("query {query_id}: score increases at rank {rank}")]
    NonMonotonicScore { query_id: String, rank: usize },
    #[error("query {query_id}: document {doc_id} appears more than once")]
    DuplicateRunDoc { query_id: String, doc_id: String },
    #[error("need at least {k} queries for {k} folds, got {available}")]
    TooFewQueries { k: usize, available: usize },
    #[error("invalid fold specification: {0}")]
    InvalidFolds(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    String::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8 {
        path: path.display().to_string(),
    })
}

fn malformed(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    TrecText,
    MsmarcoTsv,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "trec_text" | "trec-text" | "trec" => Ok(CorpusFormat::TrecText),
            "msmarco_tsv" | "msmarco-tsv" | "tsv" => Ok(CorpusFormat::MsmarcoTsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// Documents in file order, with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, doc) in docs.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateDocId(doc.id.clone()));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let text = read_text(path)?;
    parse_corpus(&text, format)
}

pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Corpus> {
    let docs = match format {
        CorpusFormat::TrecText => parse_trec_text(text)?,
        CorpusFormat::MsmarcoTsv => parse_msmarco_tsv(text)?,
        CorpusFormat::Jsonl => parse_corpus_jsonl(text)?,
    };
    Corpus::new(docs)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Content of every `<tag>...</tag>` element inside `block`, in order.
fn tag_contents<'a>(
    block: &'a str,
    block_offset: usize,
    source: &str,
    tag: &str,
) -> Result<Vec<&'a str>> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = 0;
    while let Some(pos) = block[rest..].find(&open) {
        let start = rest + pos + open.len();
        let end = block[start..].find(&close).ok_or_else(|| {
            malformed(
                line_of(source, block_offset + start),
                format!("unclosed {open}"),
            )
        })?;
        out.push(&block[start..start + end]);
        rest = start + end + close.len();
    }
    Ok(out)
}

fn parse_trec_text(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut pos = 0;
    loop {
        let Some(found) = text[pos..].find("<DOC>") else {
            if !text[pos..].trim().is_empty() {
                return Err(malformed(line_of(text, pos), "content outside <DOC> block"));
            }
            break;
        };
        let start = pos + found;
        if !text[pos..start].trim().is_empty() {
            return Err(malformed(line_of(text, pos), "content outside <DOC> block"));
        }
        let body_start = start + "<DOC>".len();
        let end = text[body_start..]
            .find("</DOC>")
            .map(|e| body_start + e)
            .ok_or_else(|| malformed(line_of(text, start), "unclosed <DOC>"))?;
        let block = &text[body_start..end];
        if block.contains("<DOC>") {
            return Err(malformed(line_of(text, start), "nested <DOC>"));
        }
        let docnos = tag_contents(block, body_start, text, "DOCNO")?;
        let id = match docnos.as_slice() {
            [one] => one.trim().to_string(),
            [] => return Err(malformed(line_of(text, start), "missing <DOCNO>")),
            _ => return Err(malformed(line_of(text, start), "more than one <DOCNO>")),
        };
        if id.is_empty() {
            return Err(malformed(line_of(text, start), "empty <DOCNO>"));
        }
        let titles = tag_contents(block, body_start, text, "TITLE")?;
        let title = match titles.as_slice() {
            [] => None,
            parts => Some(parts.iter().map(|t| t.trim()).collect::<Vec<_>>().join(" ")),
        };
        let body = tag_contents(block, body_start, text, "TEXT")?
            .iter()
            .map(|t| t.trim())
            .collect::<Vec<_>>()
            .join("\n");
        docs.push(Document { id, title, body });
        pos = end + "</DOC>".len();
    }
    Ok(docs)
}

fn parse_msmarco_tsv(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, _url, title, body] = fields.as_slice() else {
            return Err(malformed(
                i + 1,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        };
        if id.is_empty() {
            return Err(malformed(i + 1, "empty document id"));
        }
        docs.push(Document {
            id: id.to_string(),
            title: (!title.is_empty()).then(|| title.to_string()),
            body: body.to_string(),
        });
    }
    Ok(docs)
}

fn parse_corpus_jsonl(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(line).map_err(|e| malformed(i + 1, e.to_string()))?;
        if doc.id.is_empty() {
            return Err(malformed(i + 1, "empty document id"));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Queries as `qid<TAB>text` lines.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    parse_queries(&read_text(path)?)
}

pub fn parse_queries(text: &str) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, query_text)) = line.split_once('\t') else {
            return Err(malformed(i + 1, "expected qid<TAB>text"));
        };
        let id = id.trim();
        let query_text = query_text.trim();
        if id.is_empty() || query_text.is_empty() {
            return Err(malformed(i + 1, "empty query id or text"));
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateQueryId(id.to_string()));
        }
        queries.push(Query {
            id: id.to_string(),
            text: query_text.to_string(),
        });
    }
    Ok(queries)
}

/// Graded judgments keyed by query, then document. Unjudged pairs read as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true when an existing judgment was overwritten.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> bool {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
            .is_some()
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Number of documents with grade > 0 for the query.
    pub fn num_relevant(&self, query_id: &str) -> usize {
        self.query(query_id)
            .map(|docs| docs.values().filter(|&&g| g > 0).count())
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loaded qrels plus the number of duplicate lines that overwrote an earlier
/// judgment.
#[derive(Debug, Clone)]
pub struct LoadedQrels {
    pub qrels: Qrels,
    pub overwrites: usize,
}

pub fn load_qrels(path: &Path) -> Result<LoadedQrels> {
    parse_qrels(&read_text(path)?)
}

pub fn parse_qrels(text: &str) -> Result<LoadedQrels> {
    let mut qrels = Qrels::new();
    let mut overwrites = 0;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _, docid, grade] = fields.as_slice() else {
            return Err(malformed(
                i + 1,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| malformed(i + 1, format!("grade {grade:?} is not an integer")))?;
        if grade < 0 {
            return Err(CorpusError::NegativeGrade { line: i + 1, grade });
        }
        let grade = u32::try_from(grade).map_err(|_| malformed(i + 1, "grade out of range"))?;
        if qrels.insert(qid, docid, grade) {
            overwrites += 1;
        }
    }
    Ok(LoadedQrels { qrels, overwrites })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Sorts entries by (query id, rank) and checks the per-query invariants:
/// ranks 1..n, non-increasing scores, no repeated documents.
pub fn validate_run(entries: &mut [RunEntry]) -> Result<()> {
    entries.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.rank.cmp(&b.rank)));
    let mut start = 0;
    while start < entries.len() {
        let qid = &entries[start].query_id;
        let end = start
            + entries[start..]
                .iter()
                .take_while(|e| &e.query_id == qid)
                .count();
        let group = &entries[start..end];
        let mut docs = HashSet::new();
        for (i, entry) in group.iter().enumerate() {
            if entry.rank != i + 1 {
                return Err(CorpusError::RankGap {
                    query_id: qid.clone(),
                    expected: i + 1,
                    found: entry.rank,
                });
            }
            if i > 0 && entry.score > group[i - 1].score {
                return Err(CorpusError::NonMonotonicScore {
                    query_id: qid.clone(),
                    rank: entry.rank,
                });
            }
            if !docs.insert(entry.doc_id.as_str()) {
                return Err(CorpusError::DuplicateRunDoc {
                    query_id: qid.clone(),
                    doc_id: entry.doc_id.clone(),
                });
            }
        }
        start = end;
    }
    Ok(())
}

/// Canonical run text: one `qid Q0 docid rank score tag` line per entry,
/// sorted by (query id, rank), scores with six decimals.
pub fn format_run(entries: &[RunEntry]) -> Result<String> {
    let mut sorted = entries.to_vec();
    validate_run(&mut sorted)?;
    let mut out = String::new();
    for e in &sorted {
        writeln!(
            out,
            "{} Q0 {} {} {:.6} {}",
            e.query_id, e.doc_id, e.rank, e.score, e.tag
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

pub fn write_run(entries: &[RunEntry], path: &Path) -> Result<()> {
    let text = format_run(entries)?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_run(path: &Path) -> Result<Vec<RunEntry>> {
    parse_run(&read_text(path)?)
}

pub fn parse_run(text: &str) -> Result<Vec<RunEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _, docid, rank, score, tag] = fields.as_slice() else {
            return Err(malformed(
                i + 1,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| malformed(i + 1, format!("rank {rank:?} is not a positive integer")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| malformed(i + 1, format!("score {score:?} is not a number")))?;
        if score.is_nan() {
            return Err(malformed(i + 1, "score is NaN"));
        }
        entries.push(RunEntry {
            query_id: qid.to_string(),
            doc_id: docid.to_string(),
            rank,
            score,
            tag: tag.to_string(),
        });
    }
    validate_run(&mut entries)?;
    Ok(entries)
}

/// Groups a validated run by query id, each list in rank order.
pub fn group_run(entries: &[RunEntry]) -> BTreeMap<String, Vec<RunEntry>> {
    let mut grouped: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for e in entries {
        grouped
            .entry(e.query_id.clone())
            .or_default()
            .push(e.clone());
    }
    for list in grouped.values_mut() {
        list.sort_by_key(|e| e.rank);
    }
    grouped
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Teacher,
    DocTransfer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub query_id: String,
    pub doc_id: String,
    pub passage_index: usize,
    pub query_text: String,
    pub passage_text: String,
    pub label: Label,
    pub provenance: Provenance,
}

impl TrainingInstance {
    pub fn key(&self) -> (&str, &str, usize) {
        (&self.query_id, &self.doc_id, self.passage_index)
    }
}

/// Sorts by (query id, doc id, passage index).
pub fn sort_instances(instances: &mut [TrainingInstance]) {
    instances.sort_by(|a, b| a.key().cmp(&b.key()).then(a.label.cmp(&b.label)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingFormat {
    Jsonl,
    Tsv,
}

impl FromStr for TrainingFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(TrainingFormat::Jsonl),
            "tsv" => Ok(TrainingFormat::Tsv),
            other => Err(format!("unknown training format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub written: usize,
    /// Instances whose text contained tabs or line breaks that were replaced
    /// by single spaces (tsv only).
    pub sanitized: usize,
}

fn tsv_field(text: &str) -> (String, bool) {
    if text.contains(['\t', '\n', '\r']) {
        (text.replace(['\t', '\n', '\r'], " "), true)
    } else {
        (text.to_string(), false)
    }
}

pub fn write_training<W: Write>(
    instances: &[TrainingInstance],
    format: TrainingFormat,
    out: &mut W,
) -> io::Result<ExportSummary> {
    let mut sorted = instances.to_vec();
    sort_instances(&mut sorted);
    let mut summary = ExportSummary::default();
    for inst in &sorted {
        match format {
            TrainingFormat::Jsonl => {
                serde_json::to_writer(&mut *out, inst)?;
                out.write_all(b"\n")?;
            }
            TrainingFormat::Tsv => {
                let (query, q_changed) = tsv_field(&inst.query_text);
                let (passage, p_changed) = tsv_field(&inst.passage_text);
                if q_changed || p_changed {
                    summary.sanitized += 1;
                }
                let label = match inst.label {
                    Label::Positive => 1,
                    Label::Negative => 0,
                };
                writeln!(out, "{query}\t{passage}\t{label}")?;
            }
        }
        summary.written += 1;
    }
    Ok(summary)
}

pub fn export_training(
    instances: &[TrainingInstance],
    path: &Path,
    format: TrainingFormat,
) -> Result<ExportSummary> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    let summary = write_training(instances, format, &mut writer).map_err(io_err(path))?;
    writer.flush().map_err(io_err(path))?;
    Ok(summary)
}

pub fn load_training_jsonl(path: &Path) -> Result<Vec<TrainingInstance>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| malformed(i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldRole {
    Train,
    Validation,
    Test,
}

/// Disjoint query folds plus, for every evaluation round, the role of each
/// fold. Round `r` tests on fold `r` and validates on fold `r + 1 (mod k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub rounds: Vec<Vec<FoldRole>>,
}

impl FoldSpec {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_of(&self, query_id: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.iter().any(|q| q == query_id))
    }

    pub fn role(&self, round: usize, query_id: &str) -> Option<FoldRole> {
        let fold = self.fold_of(query_id)?;
        self.rounds.get(round).map(|roles| roles[fold])
    }

    pub fn test_fold(&self, round: usize) -> Option<usize> {
        self.rounds
            .get(round)?
            .iter()
            .position(|&r| r == FoldRole::Test)
    }

    pub fn queries_with_role(&self, round: usize, role: FoldRole) -> BTreeSet<&str> {
        let Some(roles) = self.rounds.get(round) else {
            return BTreeSet::new();
        };
        self.folds
            .iter()
            .zip(roles)
            .filter(|(_, &r)| r == role)
            .flat_map(|(f, _)| f.iter().map(String::as_str))
            .collect()
    }

    /// Folds pairwise disjoint, every round assigns every fold a role with
    /// exactly one test fold, and every fold is tested in exactly one round.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for fold in &self.folds {
            for q in fold {
                if !seen.insert(q.as_str()) {
                    return Err(CorpusError::InvalidFolds(format!(
                        "query {q:?} appears in more than one fold"
                    )));
                }
            }
        }
        let mut tested = vec![0usize; self.folds.len()];
        for (r, roles) in self.rounds.iter().enumerate() {
            if roles.len() != self.folds.len() {
                return Err(CorpusError::InvalidFolds(format!(
                    "round {r} assigns {} roles for {} folds",
                    roles.len(),
                    self.folds.len()
                )));
            }
            let tests: Vec<usize> = roles
                .iter()
                .enumerate()
                .filter(|(_, &role)| role == FoldRole::Test)
                .map(|(i, _)| i)
                .collect();
            let [test] = tests.as_slice() else {
                return Err(CorpusError::InvalidFolds(format!(
                    "round {r} has {} test folds",
                    tests.len()
                )));
            };
            tested[*test] += 1;
        }
        if let Some(f) = tested.iter().position(|&n| n != 1) {
            return Err(CorpusError::InvalidFolds(format!(
                "fold {f} is the test fold of {} rounds",
                tested[f]
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: FoldSpec = serde_json::from_str(&read_text(path)?)
            .map_err(|e| malformed(e.line(), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold spec serializes")
    }
}

/// Seeded shuffle (ChaCha8 Fisher-Yates over the sorted ids) followed by
/// round-robin assignment to `k` folds.
pub fn make_folds(query_ids: &[String], k: usize, seed: u64) -> Result<FoldSpec> {
    let mut ids: Vec<String> = query_ids.to_vec();
    ids.sort();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CorpusError::DuplicateQueryId(dup[0].clone()));
    }
    if k < 2 || ids.len() < k {
        return Err(CorpusError::TooFewQueries {
            k,
            available: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    let rounds = (0..k)
        .map(|r| {
            (0..k)
                .map(|f| {
                    if f == r {
                        FoldRole::Test
                    } else if f == (r + 1) % k {
                        FoldRole::Validation
                    } else {
                        FoldRole::Train
                    }
                })
                .collect()
        })
        .collect();
    Ok(FoldSpec {
        seed,
        folds,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(q: &str, d: &str, rank: usize, score: f64) -> RunEntry {
        RunEntry {
            query_id: q.into(),
            doc_id: d.into(),
            rank,
            score,
            tag: "t".into(),
        }
    }

    #[test]
    fn trec_text_block() {
        let corpus = parse_corpus(
            "<DOC>\n<DOCNO> d1 </DOCNO>\n<TEXT>\nhello\n</TEXT>\n</DOC>\n",
            CorpusFormat::TrecText,
        )
        .unwrap();
        assert_eq!(
            corpus.docs(),
            &[Document {
                id: "d1".into(),
                title: None,
                body: "hello".into()
            }]
        );
    }

    #[test]
    fn trec_text_title_and_errors() {
        let corpus = parse_corpus(
            "<DOC><DOCNO>d1</DOCNO><TITLE>T</TITLE><TEXT>a</TEXT><TEXT>b</TEXT></DOC>",
            CorpusFormat::TrecText,
        )
        .unwrap();
        assert_eq!(corpus.docs()[0].title.as_deref(), Some("T"));
        assert_eq!(corpus.docs()[0].body, "a\nb");

        let dup = "<DOC><DOCNO>d1</DOCNO><TEXT>a</TEXT></DOC>\n<DOC><DOCNO>d1</DOCNO><TEXT>b</TEXT></DOC>";
        assert!(matches!(
            parse_corpus(dup, CorpusFormat::TrecText),
            Err(CorpusError::DuplicateDocId(id)) if id == "d1"
        ));

        let missing = "<DOC><DOCNO>d1</DOCNO><TEXT>a</TEXT></DOC>\n\n<DOC><TEXT>b</TEXT></DOC>";
        assert!(matches!(
            parse_corpus(missing, CorpusFormat::TrecText),
            Err(CorpusError::MalformedRecord { line: 3, .. })
        ));

        let unclosed = "<DOC><DOCNO>d1</DOCNO><TEXT>a</TEXT>";
        assert!(parse_corpus(unclosed, CorpusFormat::TrecText).is_err());

        let junk = "stray\n<DOC><DOCNO>d1</DOCNO><TEXT>a</TEXT></DOC>";
        assert!(matches!(
            parse_corpus(junk, CorpusFormat::TrecText),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn msmarco_tsv_line() {
        let corpus = parse_corpus("d2\tu\tT\tB\n", CorpusFormat::MsmarcoTsv).unwrap();
        assert_eq!(
            corpus.docs(),
            &[Document {
                id: "d2".into(),
                title: Some("T".into()),
                body: "B".into()
            }]
        );
        assert!(matches!(
            parse_corpus("d1\tu\tT\tB\nd2\tu\tT\n", CorpusFormat::MsmarcoTsv),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_corpus() {
        let corpus = parse_corpus(
            "{\"id\":\"a\",\"body\":\"x\"}\n{\"id\":\"b\",\"title\":\"t\",\"body\":\"y\"}\n",
            CorpusFormat::Jsonl,
        )
        .unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("b").unwrap().title.as_deref(), Some("t"));
        assert!(matches!(
            parse_corpus("{\"id\":\"a\"}\n", CorpusFormat::Jsonl),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn qrels_examples() {
        let loaded = parse_qrels("q1 0 d1 2\n").unwrap();
        assert_eq!(loaded.qrels.grade("q1", "d1"), 2);
        assert_eq!(loaded.overwrites, 0);

        let loaded = parse_qrels("q1 0 d1 1\nq1 0 d1 0\n").unwrap();
        assert_eq!(loaded.qrels.grade("q1", "d1"), 0);
        assert_eq!(loaded.overwrites, 1);

        assert!(matches!(
            parse_qrels("q1 0 d1 -1"),
            Err(CorpusError::NegativeGrade { line: 1, grade: -1 })
        ));
        assert!(matches!(
            parse_qrels("q1 0 d1 2\nq1 0 d1"),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn run_line_format() {
        let text = format_run(&[entry("q1", "d1", 1, 0.5)]).unwrap();
        assert_eq!(text, "q1 Q0 d1 1 0.500000 t\n");
    }

    #[test]
    fn run_invariants() {
        assert!(matches!(
            format_run(&[entry("q1", "a", 1, 1.0), entry("q1", "b", 3, 0.5)]),
            Err(CorpusError::RankGap { found: 3, .. })
        ));
        assert!(matches!(
            format_run(&[entry("q1", "a", 1, 0.1), entry("q1", "b", 2, 0.5)]),
            Err(CorpusError::NonMonotonicScore { rank: 2, .. })
        ));
        assert!(matches!(
            parse_run("q1 Q0 a 1 1.0 t\nq1 Q0 a 2 0.5 t\n"),
            Err(CorpusError::DuplicateRunDoc { .. })
        ));
        assert!(matches!(
            parse_run("q1 Q0 a 1 nan t\n"),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn training_export() {
        let inst = TrainingInstance {
            query_id: "q".into(),
            doc_id: "d".into(),
            passage_index: 0,
            query_text: "query".into(),
            passage_text: "a\tb".into(),
            label: Label::Positive,
            provenance: Provenance::Teacher,
        };
        let mut buf = Vec::new();
        let summary =
            write_training(std::slice::from_ref(&inst), TrainingFormat::Tsv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "query\ta b\t1\n");
        assert_eq!(
            summary,
            ExportSummary {
                written: 1,
                sanitized: 1
            }
        );

        let mut buf = Vec::new();
        write_training(std::slice::from_ref(&inst), TrainingFormat::Jsonl, &mut buf).unwrap();
        let back: TrainingInstance =
            serde_json::from_str(String::from_utf8(buf).unwrap().trim()).unwrap();
        assert_eq!(back, inst);

        let mut buf = Vec::new();
        let summary = write_training(&[], TrainingFormat::Jsonl, &mut buf).unwrap();
        assert!(buf.is_empty());
        assert_eq!(summary.written, 0);
    }

    #[test]
    fn fold_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("q{i}")).collect();
        let spec = make_folds(&ids, 5, 123).unwrap();
        assert!(spec.folds.iter().all(|f| f.len() == 2));
        spec.validate().unwrap();

        let ids: Vec<String> = (0..11).map(|i| format!("q{i}")).collect();
        let spec = make_folds(&ids, 5, 123).unwrap();
        let mut sizes: Vec<usize> = spec.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
        assert_eq!(spec, make_folds(&ids, 5, 123).unwrap());

        assert!(matches!(
            make_folds(&ids[..3], 5, 1),
            Err(CorpusError::TooFewQueries { k: 5, available: 3 })
        ));
    }

    #[test]
    fn fold_validation_rejects_overlap() {
        let mut spec = make_folds(&["a".into(), "b".into(), "c".into()], 3, 0).unwrap();
        let stolen = spec.folds[0][0].clone();
        spec.folds[1].push(stolen);
        assert!(spec.validate().is_err());
    }

    fn arb_run() -> impl Strategy<Value = Vec<RunEntry>> {
        prop::collection::vec((0u8..4, prop::collection::vec(-1e6f64..1e6, 1..30)), 1..5).prop_map(
            |groups| {
                let mut out = Vec::new();
                for (q, mut scores) in groups {
                    scores.sort_by(|a, b| b.total_cmp(a));
                    let qid = format!("q{q}");
                    if out.iter().any(|e: &RunEntry| e.query_id == qid) {
                        continue;
                    }
                    for (i, s) in scores.into_iter().enumerate() {
                        out.push(entry(&qid, &format!("d{i}"), i + 1, s));
                    }
                }
                out
            },
        )
    }

    proptest! {
        #[test]
        fn run_serialization_is_canonical(run in arb_run()) {
            let first = format_run(&run).unwrap();
            let reloaded = parse_run(&first).unwrap();
            prop_assert_eq!(reloaded.len(), run.len());
            for (a, b) in reloaded.iter().zip(group_run(&run).values().flatten()) {
                prop_assert_eq!(&a.doc_id, &b.doc_id);
                prop_assert!((a.score - b.score).abs() <= 5e-7 + 1e-9);
            }
            prop_assert_eq!(format_run(&reloaded).unwrap(), first);
        }

        #[test]
        fn folds_partition_queries(n in 2usize..60, k in 2usize..8, seed: u64) {
            prop_assume!(n >= k);
            let ids: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
            let spec = make_folds(&ids, k, seed).unwrap();
            spec.validate().unwrap();
            let mut all: Vec<String> = spec.folds.concat();
            all.sort();
            let mut expected = ids.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
            let max = spec.folds.iter().map(Vec::len).max().unwrap();
            let min = spec.folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
