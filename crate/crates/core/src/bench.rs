//! Wall-clock timing of per-query inference.

use std::io::{self, Write};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Query;
use crate::eval::compensated_sum;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no queries to benchmark")]
    EmptyQuerySet,
    #[error("query {query_id}: {message}")]
    Pipeline { query_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryTiming {
    pub query_id: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub per_query: Vec<QueryTiming>,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Sample standard deviation; 0 for a single query.
    pub stddev_ms: f64,
}

impl TimingStats {
    pub fn from_timings(per_query: Vec<QueryTiming>) -> Result<Self, BenchError> {
        if per_query.is_empty() {
            return Err(BenchError::EmptyQuerySet);
        }
        let n = per_query.len();
        let mean = compensated_sum(per_query.iter().map(|t| t.ms)) / n as f64;
        let mut sorted: Vec<f64> = per_query.iter().map(|t| t.ms).collect();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let stddev = if n > 1 {
            (compensated_sum(per_query.iter().map(|t| (t.ms - mean).powi(2))) / (n - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        Ok(TimingStats {
            per_query,
            mean_ms: mean,
            median_ms: median,
            stddev_ms: stddev,
        })
    }

    /// `query_id,ms` rows, one per query in benchmark order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "query_id,ms")?;
        for t in &self.per_query {
            writeln!(out, "{},{:.6}", csv_field(&t.query_id), t.ms)?;
        }
        out.flush()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs `prepare` then `run` for each query in order. Only `run` is timed, so
/// tokenization and batch building belong in `prepare`.
pub fn bench_inference<P, T, R, E>(
    queries: &[Query],
    mut prepare: P,
    mut run: R,
) -> Result<TimingStats, BenchError>
where
    P: FnMut(&Query) -> Result<T, E>,
    R: FnMut(&Query, T) -> Result<(), E>,
    E: std::fmt::Display,
{
    if queries.is_empty() {
        return Err(BenchError::EmptyQuerySet);
    }
    let fail = |q: &Query, e: E| BenchError::Pipeline {
        query_id: q.id.clone(),
        message: e.to_string(),
    };
    let mut timings = Vec::with_capacity(queries.len());
    for q in queries {
        let input = prepare(q).map_err(|e| fail(q, e))?;
        let start = Instant::now();
        run(q, input).map_err(|e| fail(q, e))?;
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        timings.push(QueryTiming {
            query_id: q.id.clone(),
            ms,
        });
    }
    TimingStats::from_timings(timings)
}
