//! Passage-level training sets.
//!
//! Two labeling policies produce positives from the passages of relevant
//! retrieved documents:
//!
//! * `DocTransfer` copies the document label to every passage;
//! * `Teacher { tau }` asks a passage scorer and keeps only passages whose
//!   score reaches `tau`. Rejected passages of relevant documents are
//!   discarded, never turned into negatives.
//!
//! In both policies every passage of a retrieved document with grade 0 (or no
//! judgment) becomes a negative candidate for that query.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    sort_instances, FoldRole, FoldSpec, Label, Provenance, Qrels, Query, RunEntry, TrainingInstance,
};
use crate::passage::{mixed_seed, Passage};
use crate::scorer::{binarize, Relevance, ScoreInput, ScoreJob, ScorerError, ScorerPool};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("the teacher policy needs a scorer")]
    MissingScorer,
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    InvalidTau(f64),
    #[error("run mentions query {0:?} which has no text")]
    UnknownQuery(String),
    #[error("round {round} does not exist in the fold specification")]
    UnknownRound { round: usize },
    #[error("training data uses {} test-fold queries: {}", .0.len(), .0.join(", "))]
    LeakageDetected(Vec<String>),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelingPolicy {
    Teacher { tau: f64 },
    DocTransfer,
}

impl LabelingPolicy {
    pub fn provenance(&self) -> Provenance {
        match self {
            LabelingPolicy::Teacher { .. } => Provenance::Teacher,
            LabelingPolicy::DocTransfer => Provenance::DocTransfer,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub queries: usize,
    pub relevant_docs: usize,
    /// Passages of relevant retrieved documents (what doc transfer would label).
    pub relevant_doc_passages: usize,
    pub positives: usize,
    /// Passages of relevant documents rejected by the teacher.
    pub discarded: usize,
    pub negative_candidates: usize,
    /// Retrieved documents with no passages.
    pub empty_docs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPool {
    pub positives: Vec<TrainingInstance>,
    pub negative_candidates: Vec<TrainingInstance>,
    pub stats: LabelStats,
}

impl LabeledPool {
    /// Rebuilds a pool from exported instances (positives and candidates
    /// together, told apart by label).
    pub fn from_instances(instances: Vec<TrainingInstance>) -> Self {
        let (mut positives, mut negative_candidates): (Vec<_>, Vec<_>) = instances
            .into_iter()
            .partition(|i| i.label == Label::Positive);
        sort_instances(&mut positives);
        sort_instances(&mut negative_candidates);
        let queries: BTreeSet<&str> = positives
            .iter()
            .chain(&negative_candidates)
            .map(|i| i.query_id.as_str())
            .collect();
        let stats = LabelStats {
            queries: queries.len(),
            positives: positives.len(),
            negative_candidates: negative_candidates.len(),
            ..LabelStats::default()
        };
        LabeledPool {
            positives,
            negative_candidates,
            stats,
        }
    }

    pub fn instances(&self) -> Vec<TrainingInstance> {
        let mut all: Vec<TrainingInstance> = self
            .positives
            .iter()
            .chain(&self.negative_candidates)
            .cloned()
            .collect();
        sort_instances(&mut all);
        all
    }
}

fn instance(
    query: &Query,
    passage: &Passage,
    label: Label,
    provenance: Provenance,
) -> TrainingInstance {
    TrainingInstance {
        query_id: query.id.clone(),
        doc_id: passage.doc_id.clone(),
        passage_index: passage.index,
        query_text: query.text.clone(),
        passage_text: passage.text.clone(),
        label,
        provenance,
    }
}

/// Groups passages by document, each list sorted by passage index.
pub fn passages_by_doc(passages: Vec<Passage>) -> HashMap<String, Vec<Passage>> {
    let mut by_doc: HashMap<String, Vec<Passage>> = HashMap::new();
    for p in passages {
        by_doc.entry(p.doc_id.clone()).or_default().push(p);
    }
    for list in by_doc.values_mut() {
        list.sort_by_key(|p| p.index);
    }
    by_doc
}

/// Labels the passages of every retrieved document in `run`.
pub fn label_passages(
    queries: &[Query],
    run: &[RunEntry],
    passages: &HashMap<String, Vec<Passage>>,
    qrels: &Qrels,
    policy: LabelingPolicy,
    scorer: Option<&mut ScorerPool>,
) -> Result<LabeledPool, LabelError> {
    if let LabelingPolicy::Teacher { tau } = policy {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(LabelError::InvalidTau(tau));
        }
        if scorer.is_none() {
            return Err(LabelError::MissingScorer);
        }
    }
    let query_map: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let empty: Vec<Passage> = Vec::new();

    // (query, relevant doc passages) pairs in canonical order
    let mut relevant: Vec<(&Query, &[Passage])> = Vec::new();
    let mut stats = LabelStats::default();
    let mut negative_candidates = Vec::new();
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut run_sorted: Vec<&RunEntry> = run.iter().collect();
    run_sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.doc_id.cmp(&b.doc_id)));
    let mut query_ids = BTreeSet::new();
    for entry in run_sorted {
        if !seen.insert((&entry.query_id, &entry.doc_id)) {
            continue;
        }
        let query = *query_map
            .get(entry.query_id.as_str())
            .ok_or_else(|| LabelError::UnknownQuery(entry.query_id.clone()))?;
        query_ids.insert(entry.query_id.as_str());
        let doc_passages = passages.get(&entry.doc_id).unwrap_or(&empty);
        if doc_passages.is_empty() {
            stats.empty_docs += 1;
        }
        if qrels.grade(&entry.query_id, &entry.doc_id) > 0 {
            stats.relevant_docs += 1;
            stats.relevant_doc_passages += doc_passages.len();
            relevant.push((query, doc_passages));
        } else {
            negative_candidates.extend(
                doc_passages
                    .iter()
                    .map(|p| instance(query, p, Label::Negative, Provenance::DocTransfer)),
            );
        }
    }
    stats.queries = query_ids.len();

    let mut positives = Vec::new();
    match (policy, scorer) {
        (LabelingPolicy::DocTransfer, _) => {
            for (query, doc_passages) in &relevant {
                positives.extend(
                    doc_passages
                        .iter()
                        .map(|p| instance(query, p, Label::Positive, Provenance::DocTransfer)),
                );
            }
        }
        (LabelingPolicy::Teacher { tau }, Some(pool)) => {
            let jobs: Vec<ScoreJob<'_>> = relevant
                .iter()
                .map(|(query, doc_passages)| ScoreJob {
                    query,
                    passages: doc_passages
                        .iter()
                        .map(|p| ScoreInput {
                            doc_id: &p.doc_id,
                            passage_index: p.index,
                            text: &p.text,
                        })
                        .collect(),
                })
                .collect();
            let scores = pool.score_jobs(&jobs)?;
            for ((query, doc_passages), doc_scores) in relevant.iter().zip(scores) {
                for (p, score) in doc_passages.iter().zip(doc_scores) {
                    if binarize(score, tau) == Relevance::Relevant {
                        positives.push(instance(query, p, Label::Positive, Provenance::Teacher));
                    } else {
                        stats.discarded += 1;
                    }
                }
            }
        }
        (LabelingPolicy::Teacher { .. }, None) => unreachable!("checked above"),
    }
    sort_instances(&mut positives);
    sort_instances(&mut negative_candidates);
    stats.positives = positives.len();
    stats.negative_candidates = negative_candidates.len();
    Ok(LabeledPool {
        positives,
        negative_candidates,
        stats,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub instances: Vec<TrainingInstance>,
    /// Queries that had fewer candidates than positives, with the deficit.
    pub shortfalls: BTreeMap<String, usize>,
    /// Queries dropped for having no positives.
    pub excluded_queries: Vec<String>,
}

/// Per query, draws as many negatives as there are positives, uniformly
/// without replacement from that query's candidates.
pub fn sample_negatives(pool: &LabeledPool, seed: u64) -> TrainingSet {
    let mut positives: BTreeMap<&str, Vec<&TrainingInstance>> = BTreeMap::new();
    for p in &pool.positives {
        positives.entry(&p.query_id).or_default().push(p);
    }
    let mut candidates: BTreeMap<&str, Vec<&TrainingInstance>> = BTreeMap::new();
    for c in &pool.negative_candidates {
        candidates.entry(&c.query_id).or_default().push(c);
    }
    let mut set = TrainingSet::default();
    for qid in candidates.keys() {
        if !positives.contains_key(qid) {
            set.excluded_queries.push(qid.to_string());
        }
    }
    for (qid, pos) in &positives {
        set.instances.extend(pos.iter().map(|&i| i.clone()));
        let mut cands = candidates.get(qid).cloned().unwrap_or_default();
        cands.sort_by(|a, b| a.key().cmp(&b.key()));
        if cands.len() <= pos.len() {
            if cands.len() < pos.len() {
                set.shortfalls
                    .insert(qid.to_string(), pos.len() - cands.len());
            }
            set.instances.extend(cands.iter().map(|&i| i.clone()));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mixed_seed(seed, qid));
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, cands.len(), pos.len()).into_vec();
            picked.sort_unstable();
            set.instances
                .extend(picked.into_iter().map(|i| cands[i].clone()));
        }
    }
    sort_instances(&mut set.instances);
    set
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldCount {
    pub fold: usize,
    pub role: FoldRole,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HygieneReport {
    pub round: usize,
    pub per_fold: Vec<FoldCount>,
    /// Instances whose query is in no fold.
    pub unassigned: usize,
}

/// Fails if any instance, whatever its provenance, belongs to a query in the
/// test fold of `round`.
pub fn enforce_split_hygiene(
    folds: &FoldSpec,
    round: usize,
    instances: &[TrainingInstance],
) -> Result<HygieneReport, LabelError> {
    let roles = folds
        .rounds
        .get(round)
        .ok_or(LabelError::UnknownRound { round })?;
    let fold_of: HashMap<&str, usize> = folds
        .folds
        .iter()
        .enumerate()
        .flat_map(|(f, ids)| ids.iter().map(move |q| (q.as_str(), f)))
        .collect();
    let mut counts = vec![0usize; folds.k()];
    let mut unassigned = 0;
    let mut leaked = BTreeSet::new();
    for inst in instances {
        match fold_of.get(inst.query_id.as_str()) {
            Some(&f) => {
                counts[f] += 1;
                if roles[f] == FoldRole::Test {
                    leaked.insert(inst.query_id.clone());
                }
            }
            None => unassigned += 1,
        }
    }
    if !leaked.is_empty() {
        return Err(LabelError::LeakageDetected(leaked.into_iter().collect()));
    }
    Ok(HygieneReport {
        round,
        per_fold: counts
            .into_iter()
            .enumerate()
            .map(|(fold, instances)| FoldCount {
                fold,
                role: roles[fold],
                instances,
            })
            .collect(),
        unassigned,
    })
}
