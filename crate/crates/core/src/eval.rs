//! Ranking metrics (P@k, AP, nDCG@k), cross-validated pooling and paired
//! significance testing.
//!
//! Conventions: grades above 0 count as relevant for P@k and AP; unjudged
//! documents are non-relevant; a query enters the mean only if the qrels hold
//! at least one relevant document for it. Relevant queries missing from the
//! run score 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{group_run, FoldRole, FoldSpec, Qrels, RunEntry};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no query in the qrels has a relevant document")]
    NoJudgedQueries,
    #[error("cutoff must be at least 1")]
    InvalidCutoff,
    #[error("paired samples differ: {0}")]
    LengthMismatch(String),
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("no run for fold round {0}")]
    MissingFoldRun(usize),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `2^grade - 1`
    Exponential,
    /// `grade`
    Linear,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => grade as f64,
        }
    }
}

impl FromStr for Gain {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exponential" => Ok(Gain::Exponential),
            "lin" | "linear" => Ok(Gain::Linear),
            other => Err(EvalError::UnknownMetric(format!("gain {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    AveragePrecision,
    PrecisionAt(usize),
    NdcgAt(usize, Gain),
}

impl Metric {
    pub fn cutoff(&self) -> Option<usize> {
        match *self {
            Metric::AveragePrecision => None,
            Metric::PrecisionAt(k) | Metric::NdcgAt(k, _) => Some(k),
        }
    }

    /// Parses a comma-separated list such as `map,p20,ndcg20`.
    pub fn parse_list(list: &str, gain: Gain) -> Result<Vec<Metric>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| Metric::parse(s, gain))
            .collect()
    }

    pub fn parse(name: &str, gain: Gain) -> Result<Metric> {
        let unknown = || EvalError::UnknownMetric(name.to_string());
        let lower = name.to_ascii_lowercase();
        let cutoff = |digits: &str| -> Result<usize> {
            let k: usize = digits.parse().map_err(|_| unknown())?;
            if k == 0 {
                Err(EvalError::InvalidCutoff)
            } else {
                Ok(k)
            }
        };
        if lower == "map" || lower == "ap" {
            Ok(Metric::AveragePrecision)
        } else if let Some(k) = lower.strip_prefix("ndcg") {
            Ok(Metric::NdcgAt(cutoff(k.trim_start_matches('@'))?, gain))
        } else if let Some(k) = lower.strip_prefix('p') {
            Ok(Metric::PrecisionAt(cutoff(k.trim_start_matches('@'))?))
        } else {
            Err(unknown())
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::AveragePrecision => write!(f, "map"),
            Metric::PrecisionAt(k) => write!(f, "P@{k}"),
            Metric::NdcgAt(k, Gain::Exponential) => write!(f, "nDCG@{k}"),
            Metric::NdcgAt(k, Gain::Linear) => write!(f, "nDCG@{k}(lin)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Run queries left out because the qrels hold no relevant document.
    pub excluded: Vec<String>,
}

/// Neumaier-compensated sum, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn ranked_docs(entries: Option<&Vec<RunEntry>>) -> Vec<&str> {
    entries
        .map(|list| list.iter().map(|e| e.doc_id.as_str()).collect())
        .unwrap_or_default()
}

fn query_precision(docs: &[&str], qrels: &Qrels, qid: &str, k: usize) -> f64 {
    let hits = docs
        .iter()
        .take(k)
        .filter(|d| qrels.grade(qid, d) > 0)
        .count();
    hits as f64 / k as f64
}

fn query_ap(docs: &[&str], qrels: &Qrels, qid: &str) -> f64 {
    let total = qrels.num_relevant(qid);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, d) in docs.iter().enumerate() {
        if qrels.grade(qid, d) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

fn dcg(grades: impl Iterator<Item = u32>, gain: Gain) -> f64 {
    compensated_sum(
        grades
            .enumerate()
            .map(|(i, g)| gain.apply(g) / ((i + 2) as f64).log2()),
    )
}

fn query_ndcg(docs: &[&str], qrels: &Qrels, qid: &str, k: usize, gain: Gain) -> f64 {
    let mut ideal: Vec<u32> = qrels
        .query(qid)
        .map(|m| m.values().copied().collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k), gain);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(docs.iter().take(k).map(|d| qrels.grade(qid, d)), gain) / idcg
}

fn query_value(metric: Metric, docs: &[&str], qrels: &Qrels, qid: &str) -> f64 {
    match metric {
        Metric::AveragePrecision => query_ap(docs, qrels, qid),
        Metric::PrecisionAt(k) => query_precision(docs, qrels, qid, k),
        Metric::NdcgAt(k, gain) => query_ndcg(docs, qrels, qid, k, gain),
    }
}

/// Evaluates `metric` over a run grouped by query. When `only` is given,
/// just those queries are considered.
pub fn evaluate_grouped(
    grouped: &BTreeMap<String, Vec<RunEntry>>,
    qrels: &Qrels,
    metric: Metric,
    only: Option<&BTreeSet<&str>>,
) -> Result<MetricReport> {
    if metric.cutoff() == Some(0) {
        return Err(EvalError::InvalidCutoff);
    }
    let keep = |q: &str| only.is_none_or(|set| set.contains(q));
    let judged: BTreeSet<&str> = qrels
        .query_ids()
        .filter(|q| qrels.num_relevant(q) > 0 && keep(q))
        .collect();
    if judged.is_empty() {
        return Err(EvalError::NoJudgedQueries);
    }
    let per_query: BTreeMap<String, f64> = judged
        .iter()
        .map(|&qid| {
            let docs = ranked_docs(grouped.get(qid));
            (qid.to_string(), query_value(metric, &docs, qrels, qid))
        })
        .collect();
    let excluded = grouped
        .keys()
        .filter(|q| keep(q) && !judged.contains(q.as_str()))
        .cloned()
        .collect();
    let mean = compensated_sum(per_query.values().copied()) / per_query.len() as f64;
    Ok(MetricReport {
        metric,
        per_query,
        mean,
        excluded,
    })
}

pub fn evaluate(run: &[RunEntry], qrels: &Qrels, metric: Metric) -> Result<MetricReport> {
    evaluate_grouped(&group_run(run), qrels, metric, None)
}

pub fn precision_at_k(run: &[RunEntry], qrels: &Qrels, k: usize) -> Result<MetricReport> {
    evaluate(run, qrels, Metric::PrecisionAt(k))
}

pub fn average_precision(run: &[RunEntry], qrels: &Qrels) -> Result<MetricReport> {
    evaluate(run, qrels, Metric::AveragePrecision)
}

pub fn ndcg_at_k(run: &[RunEntry], qrels: &Qrels, k: usize, gain: Gain) -> Result<MetricReport> {
    evaluate(run, qrels, Metric::NdcgAt(k, gain))
}

/// Pools per-query values across rounds, taking each query from the round in
/// which it was tested. `runs[r]` is the run produced for round `r`.
pub fn cross_validate(
    folds: &FoldSpec,
    runs: &BTreeMap<usize, Vec<RunEntry>>,
    qrels: &Qrels,
    metrics: &[Metric],
) -> Result<Vec<MetricReport>> {
    let mut grouped = Vec::with_capacity(folds.rounds.len());
    for r in 0..folds.rounds.len() {
        let run = runs.get(&r).ok_or(EvalError::MissingFoldRun(r))?;
        grouped.push(group_run(run));
    }
    let mut reports = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let mut per_query = BTreeMap::new();
        let mut excluded = Vec::new();
        for (r, run) in grouped.iter().enumerate() {
            let test = folds.queries_with_role(r, FoldRole::Test);
            match evaluate_grouped(run, qrels, metric, Some(&test)) {
                Ok(report) => {
                    per_query.extend(report.per_query);
                    excluded.extend(report.excluded);
                }
                Err(EvalError::NoJudgedQueries) => {}
                Err(e) => return Err(e),
            }
        }
        if per_query.is_empty() {
            return Err(EvalError::NoJudgedQueries);
        }
        excluded.sort();
        let mean = compensated_sum(per_query.values().copied()) / per_query.len() as f64;
        reports.push(MetricReport {
            metric,
            per_query,
            mean,
            excluded,
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub corrected_p: f64,
    pub n_pairs: usize,
    pub alpha: f64,
    pub mean_difference: f64,
}

impl SignificanceResult {
    pub fn significant(&self) -> bool {
        self.corrected_p < self.alpha
    }
}

/// Two-sided paired t-test on `a - b` with Bonferroni correction for `m`
/// comparisons. Zero-variance differences give `t = 0, p = 1` when the mean
/// difference is zero and `t = ±inf, p = 0` otherwise.
pub fn paired_ttest(a: &[f64], b: &[f64], m: usize, alpha: f64) -> Result<SignificanceResult> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = compensated_sum(diffs.iter().copied()) / n as f64;
    let var = compensated_sum(diffs.iter().map(|d| (d - mean).powi(2))) / (n - 1) as f64;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let t = mean / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom >= 1");
        (t, (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
    };
    Ok(SignificanceResult {
        t_statistic: t,
        p_value: p,
        corrected_p: (p * m.max(1) as f64).min(1.0),
        n_pairs: n,
        alpha,
        mean_difference: mean,
    })
}

/// Paired test over two reports, aligned by query id.
pub fn compare_reports(
    a: &MetricReport,
    b: &MetricReport,
    m: usize,
    alpha: f64,
) -> Result<SignificanceResult> {
    if a.per_query.keys().ne(b.per_query.keys()) {
        return Err(EvalError::LengthMismatch(
            "reports cover different queries".into(),
        ));
    }
    let xs: Vec<f64> = a.per_query.values().copied().collect();
    let ys: Vec<f64> = b.per_query.values().copied().collect();
    paired_ttest(&xs, &ys, m, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn run_of(qid: &str, docs: &[&str]) -> Vec<RunEntry> {
        docs.iter()
            .enumerate()
            .map(|(i, d)| RunEntry {
                query_id: qid.into(),
                doc_id: d.to_string(),
                rank: i + 1,
                score: -(i as f64),
                tag: "t".into(),
            })
            .collect()
    }

    fn qrels_of(qid: &str, grades: &[(&str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for (d, g) in grades {
            q.insert(qid, d, *g);
        }
        q
    }

    #[test]
    fn precision_examples() {
        let docs: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let qrels = qrels_of(
            "q",
            &[("d0", 1), ("d3", 1), ("d7", 2), ("d11", 1), ("d19", 1)],
        );
        let r = precision_at_k(&run_of("q", &refs), &qrels, 20).unwrap();
        assert_abs_diff_eq!(r.mean, 0.25, epsilon = 1e-15);

        let qrels = qrels_of("q", &[("a", 1), ("b", 1), ("c", 1)]);
        let r = precision_at_k(&run_of("q", &["a", "b", "c"]), &qrels, 20).unwrap();
        assert_abs_diff_eq!(r.mean, 0.15, epsilon = 1e-15);

        let mut qrels = qrels_of("q", &[("a", 1)]);
        qrels.insert("empty", "a", 0);
        let mut run = run_of("q", &["a"]);
        run.extend(run_of("empty", &["a"]));
        let r = precision_at_k(&run, &qrels, 1).unwrap();
        assert_eq!(r.per_query.len(), 1);
        assert_eq!(r.excluded, vec!["empty".to_string()]);
    }

    #[test]
    fn ap_examples() {
        let qrels = qrels_of("q", &[("a", 1), ("c", 1)]);
        let r = average_precision(&run_of("q", &["a", "b", "c"]), &qrels).unwrap();
        assert_abs_diff_eq!(r.mean, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean, 0.8333, epsilon = 1e-4);

        let r = average_precision(&run_of("q", &["a", "c", "b"]), &qrels).unwrap();
        assert_eq!(r.mean, 1.0);

        let r = average_precision(&run_of("q", &["x", "y"]), &qrels).unwrap();
        assert_eq!(r.mean, 0.0);

        // unretrieved relevant documents still count in R
        let r = average_precision(&run_of("q", &["a"]), &qrels).unwrap();
        assert_eq!(r.mean, 0.5);
    }

    #[test]
    fn ndcg_examples() {
        let qrels = qrels_of("q", &[("a", 0), ("b", 3), ("c", 2)]);
        let r = ndcg_at_k(&run_of("q", &["a", "b", "c"]), &qrels, 3, Gain::Exponential).unwrap();
        let dcg = 7.0 / 3f64.log2() + 3.0 / 2.0;
        let idcg = 7.0 + 3.0 / 3f64.log2();
        assert_abs_diff_eq!(dcg, 5.9164, epsilon = 2e-4);
        assert_abs_diff_eq!(idcg, 8.8928, epsilon = 1e-4);
        assert_abs_diff_eq!(r.mean, dcg / idcg, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean, 0.6653, epsilon = 1e-4);

        let r = ndcg_at_k(&run_of("q", &["b", "c", "a"]), &qrels, 3, Gain::Linear).unwrap();
        assert_abs_diff_eq!(r.mean, 1.0, epsilon = 1e-15);

        let r = ndcg_at_k(&run_of("q", &["a", "x"]), &qrels, 3, Gain::Exponential).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn no_judged_queries() {
        let qrels = qrels_of("q", &[("a", 0)]);
        assert_eq!(
            average_precision(&run_of("q", &["a"]), &qrels).unwrap_err(),
            EvalError::NoJudgedQueries
        );
    }

    #[test]
    fn metric_names() {
        assert_eq!(
            Metric::parse_list("map,p20,ndcg20", Gain::Linear).unwrap(),
            vec![
                Metric::AveragePrecision,
                Metric::PrecisionAt(20),
                Metric::NdcgAt(20, Gain::Linear)
            ]
        );
        assert_eq!(
            Metric::parse("P@5", Gain::Exponential).unwrap(),
            Metric::PrecisionAt(5)
        );
        assert!(Metric::parse("mrr", Gain::Exponential).is_err());
        assert_eq!(
            Metric::parse("p0", Gain::Exponential),
            Err(EvalError::InvalidCutoff)
        );
    }

    #[test]
    fn ttest_conventions() {
        let r = paired_ttest(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], 1, 0.05).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.t_statistic, 0.0);

        let r = paired_ttest(&[2.0, 2.0, 2.0, 2.0], &[1.0, 1.0, 1.0, 1.0], 1, 0.05).unwrap();
        assert!(r.p_value < 1e-12);
        assert!(r.t_statistic.is_infinite());

        assert!(matches!(
            paired_ttest(&[1.0], &[1.0], 1, 0.05),
            Err(EvalError::TooFewPairs(1))
        ));
        assert!(matches!(
            paired_ttest(&[1.0, 2.0], &[1.0], 1, 0.05),
            Err(EvalError::LengthMismatch(_))
        ));
    }

    #[test]
    fn ttest_reference_value() {
        // differences [1, 2, 3, 4]: mean 2.5, sd sqrt(5/3), t = 2.5 / (sd / 2) = 3.8730
        let r = paired_ttest(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 2, 0.05).unwrap();
        assert_abs_diff_eq!(r.t_statistic, 3.872983346207417, epsilon = 1e-12);
        // two-sided p for t = 3.873 with 3 df, from the closed-form t(3) CDF
        let t: f64 = r.t_statistic;
        let x = t / 3f64.sqrt();
        let cdf_upper = 0.5 - (x.atan() + x / (1.0 + x * x)) / std::f64::consts::PI;
        assert_abs_diff_eq!(r.p_value, 2.0 * cdf_upper, epsilon = 1e-9);
        assert_abs_diff_eq!(r.corrected_p, (2.0 * r.p_value).min(1.0), epsilon = 1e-15);
    }

    #[test]
    fn bonferroni() {
        let r = SignificanceResult {
            t_statistic: 0.0,
            p_value: 0.03,
            corrected_p: (0.03f64 * 2.0).min(1.0),
            n_pairs: 2,
            alpha: 0.05,
            mean_difference: 0.0,
        };
        assert_abs_diff_eq!(r.corrected_p, 0.06, epsilon = 1e-15);
        assert!(!r.significant());
        let r = paired_ttest(&[0.9, 0.1, 0.5], &[0.1, 0.2, 0.3], 1000, 0.05).unwrap();
        assert_eq!(r.corrected_p, 1.0);
    }

    #[test]
    fn cross_validation_pooling() {
        let ids: Vec<String> = (0..10).map(|i| format!("q{i}")).collect();
        let folds = crate::corpus::make_folds(&ids, 5, 3).unwrap();
        let mut qrels = Qrels::new();
        let mut run = Vec::new();
        for (i, q) in ids.iter().enumerate() {
            qrels.insert(q, "rel", 1);
            let docs: Vec<&str> = if i % 2 == 0 {
                vec!["rel", "x"]
            } else {
                vec!["x", "rel"]
            };
            run.extend(run_of(q, &docs));
        }
        let runs: BTreeMap<usize, Vec<RunEntry>> = (0..5).map(|r| (r, run.clone())).collect();
        let pooled = cross_validate(&folds, &runs, &qrels, &[Metric::AveragePrecision]).unwrap();
        assert_eq!(pooled[0].per_query.len(), 10);
        let direct = average_precision(&run, &qrels).unwrap();
        assert_abs_diff_eq!(pooled[0].mean, direct.mean, epsilon = 1e-12);

        let mut partial = runs.clone();
        partial.remove(&3);
        assert_eq!(
            cross_validate(&folds, &partial, &qrels, &[Metric::AveragePrecision]).unwrap_err(),
            EvalError::MissingFoldRun(3)
        );
    }

    fn arb_case() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
        // grades of the ranked list, then grades of extra unretrieved docs
        (
            prop::collection::vec(0u32..4, 1..25),
            prop::collection::vec(0u32..4, 0..5),
        )
    }

    fn build(ranked: &[u32], extra: &[u32]) -> (Vec<RunEntry>, Qrels) {
        let names: Vec<String> = (0..ranked.len()).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut qrels = Qrels::new();
        for (n, g) in names.iter().zip(ranked) {
            qrels.insert("q", n, *g);
        }
        for (i, g) in extra.iter().enumerate() {
            qrels.insert("q", &format!("u{i}"), *g);
        }
        (run_of("q", &refs), qrels)
    }

    proptest! {
        #[test]
        fn metrics_are_bounded((ranked, extra) in arb_case(), k in 1usize..30) {
            let (run, qrels) = build(&ranked, &extra);
            prop_assume!(qrels.num_relevant("q") > 0);
            for m in [Metric::AveragePrecision, Metric::PrecisionAt(k), Metric::NdcgAt(k, Gain::Exponential), Metric::NdcgAt(k, Gain::Linear)] {
                let v = evaluate(&run, &qrels, m).unwrap().mean;
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{m}: {v}");
            }
        }

        #[test]
        fn promoting_a_relevant_doc_never_hurts((ranked, extra) in arb_case(), pos in 0usize..25, k in 1usize..30) {
            let (run, qrels) = build(&ranked, &extra);
            prop_assume!(qrels.num_relevant("q") > 0);
            prop_assume!(ranked.len() >= 2);
            let pos = pos % (ranked.len() - 1);
            if ranked[pos] >= ranked[pos + 1] {
                return Ok(());
            }
            let mut swapped = run.clone();
            let (a, b) = (swapped[pos].doc_id.clone(), swapped[pos + 1].doc_id.clone());
            swapped[pos].doc_id = b;
            swapped[pos + 1].doc_id = a;
            for m in [Metric::NdcgAt(k, Gain::Exponential), Metric::NdcgAt(k, Gain::Linear)] {
                let before = evaluate(&run, &qrels, m).unwrap().mean;
                let after = evaluate(&swapped, &qrels, m).unwrap().mean;
                prop_assert!(after >= before - 1e-12);
            }
            if ranked[pos] == 0 {
                let before = evaluate(&run, &qrels, Metric::AveragePrecision).unwrap().mean;
                let after = evaluate(&swapped, &qrels, Metric::AveragePrecision).unwrap().mean;
                prop_assert!(after >= before - 1e-12);
            }
        }
    }
}
