use std::thread;

use super::{PassageScorer, Result, ScoreInput, ScorerContext, ScorerError, ScorerSpec};
use crate::corpus::Query;

/// All passages of one (query, document) pair.
#[derive(Debug, Clone)]
pub struct ScoreJob<'a> {
    pub query: &'a Query,
    pub passages: Vec<ScoreInput<'a>>,
}

/// A fixed set of scorer handles used in parallel. Each handle processes its
/// share of jobs serially; results come back in job order.
pub struct ScorerPool {
    handles: Vec<Box<dyn PassageScorer>>,
}

impl ScorerPool {
    pub fn new(handles: Vec<Box<dyn PassageScorer>>) -> Result<Self> {
        if handles.is_empty() {
            return Err(ScorerError::Config(
                "scorer pool needs at least one handle".into(),
            ));
        }
        Ok(ScorerPool { handles })
    }

    pub fn single<S: PassageScorer + 'static>(scorer: S) -> Self {
        ScorerPool {
            handles: vec![Box::new(scorer)],
        }
    }

    pub fn connect(spec: &ScorerSpec, ctx: &ScorerContext, size: usize) -> Result<Self> {
        let handles = (0..size.max(1))
            .map(|_| {
                spec.connect(ctx)
                    .map(|h| Box::new(h) as Box<dyn PassageScorer>)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(handles)
    }

    pub fn size(&self) -> usize {
        self.handles.len()
    }

    pub fn handle_mut(&mut self, i: usize) -> &mut dyn PassageScorer {
        self.handles[i].as_mut()
    }

    pub fn score_jobs(&mut self, jobs: &[ScoreJob<'_>]) -> Result<Vec<Vec<f64>>> {
        if jobs.is_empty() {
            return Ok(Vec::new());
        }
        let shard = jobs.len().div_ceil(self.handles.len());
        if self.handles.len() == 1 || jobs.len() == 1 {
            return score_shard(self.handles[0].as_mut(), jobs);
        }
        let results: Vec<Result<Vec<Vec<f64>>>> = thread::scope(|scope| {
            let workers: Vec<_> = self
                .handles
                .iter_mut()
                .zip(jobs.chunks(shard))
                .map(|(handle, part)| scope.spawn(move || score_shard(handle.as_mut(), part)))
                .collect();
            workers
                .into_iter()
                .map(|w| w.join().expect("scorer worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(jobs.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

fn score_shard(handle: &mut dyn PassageScorer, jobs: &[ScoreJob<'_>]) -> Result<Vec<Vec<f64>>> {
    jobs.iter()
        .map(|job| {
            if job.passages.is_empty() {
                return Ok(Vec::new());
            }
            let scores = handle.score_batch(job.query, &job.passages)?;
            if scores.len() != job.passages.len() {
                return Err(ScorerError::ProtocolViolation(format!(
                    "{} scores for {} passages",
                    scores.len(),
                    job.passages.len()
                )));
            }
            if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(ScorerError::ProtocolViolation(format!(
                    "score {bad} is not in [0,1]"
                )));
            }
            Ok(scores)
        })
        .collect()
}
