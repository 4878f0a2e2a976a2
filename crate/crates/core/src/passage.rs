//! Splitting documents into passages.
//!
//! Three policies are supported:
//!
//! * sentence-complete chunks: whole sentences are added to a passage until it
//!   holds at least `target_len` tokens, so a sentence crossing the boundary
//!   stays in the passage it started in;
//! * overlapping fixed windows with an optional cap on the number of windows,
//!   keeping the first and last windows and a seeded sample of the rest;
//! * one passage per sentence.
//!
//! The title, when present, is prepended to the body and counts as the first
//! sentence.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_text, CorpusError, Document};
use crate::textproc::{split_sentences_with, tokenize, Sentence, Token};

pub const DEFAULT_TARGET_LEN: usize = 100;
pub const DEFAULT_WINDOW_LEN: usize = 150;
pub const DEFAULT_STRIDE: usize = 75;
pub const DEFAULT_MAX_PASSAGES: usize = 30;

#[derive(Debug, Error)]
pub enum PassageError {
    #[error("invalid chunking policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub index: usize,
    /// Token offsets into the prepared document stream.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Passage {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Title tokens followed by body tokens, with sentence boundaries over the
/// combined stream.
#[derive(Debug, Clone)]
pub struct PreparedDocument<'a> {
    pub doc_id: &'a str,
    title: &'a str,
    body: &'a str,
    pub tokens: Vec<Token>,
    pub sentences: Vec<Sentence>,
    title_tokens: usize,
}

impl<'a> PreparedDocument<'a> {
    pub fn new(doc: &'a Document) -> Self {
        let title = doc.title.as_deref().unwrap_or("");
        let mut tokens = tokenize(title);
        let title_tokens = tokens.len();
        let mut sentences = Vec::new();
        if title_tokens > 0 {
            sentences.push(Sentence {
                first_token: 0,
                end_token: title_tokens,
            });
        }
        let body_tokens = tokenize(&doc.body);
        sentences.extend(
            split_sentences_with(&doc.body, &body_tokens)
                .into_iter()
                .map(|s| Sentence {
                    first_token: s.first_token + title_tokens,
                    end_token: s.end_token + title_tokens,
                }),
        );
        tokens.extend(body_tokens);
        PreparedDocument {
            doc_id: &doc.id,
            title,
            body: &doc.body,
            tokens,
            sentences,
            title_tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Source text covering tokens `[start, end)`, including the punctuation
    /// between them. A range spanning title and body joins the two parts
    /// with a space.
    pub fn text(&self, start: usize, end: usize) -> String {
        if start >= end {
            return String::new();
        }
        let slice = |src: &str, from: usize, to: usize| {
            src[self.tokens[from].start..self.tokens[to - 1].end].to_string()
        };
        let split = self.title_tokens;
        if end <= split {
            slice(self.title, start, end)
        } else if start >= split {
            slice(self.body, start, end)
        } else {
            format!(
                "{} {}",
                slice(self.title, start, split),
                slice(self.body, split, end)
            )
        }
    }

    fn passage(&self, index: usize, start: usize, end: usize) -> Passage {
        Passage {
            doc_id: self.doc_id.to_string(),
            index,
            start,
            end,
            text: self.text(start, end),
        }
    }
}

/// Greedy sentence packing: a passage closes at the first sentence end where
/// it holds at least `target_len` tokens.
pub fn chunk_sentence_complete(doc: &PreparedDocument<'_>, target_len: usize) -> Vec<Passage> {
    let target_len = target_len.max(1);
    let mut passages = Vec::new();
    let mut start = None;
    for sentence in &doc.sentences {
        let from = *start.get_or_insert(sentence.first_token);
        if sentence.end_token - from >= target_len {
            passages.push(doc.passage(passages.len(), from, sentence.end_token));
            start = None;
        }
    }
    if let Some(from) = start {
        passages.push(doc.passage(passages.len(), from, doc.len()));
    }
    passages
}

/// Window start offsets. Generation stops at the first window that reaches
/// the end of the document, so trailing windows fully contained in their
/// predecessor are never produced.
pub fn window_starts(len: usize, window_len: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    if len == 0 {
        return starts;
    }
    let mut s = 0;
    loop {
        starts.push(s);
        if s + window_len >= len {
            break;
        }
        s += stride;
    }
    starts
}

/// 64-bit FNV-1a, used to derive per-document seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Seed for per-key sampling: the run seed mixed with the key's FNV-1a hash,
/// so results do not depend on processing order.
pub fn mixed_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a(key.as_bytes())
}

/// Indices of the windows kept when `count` exceeds `max_passages`: the
/// first, the last, and `max_passages - 2` interior windows drawn uniformly
/// without replacement with a ChaCha8 generator. Ascending order.
pub fn select_windows(count: usize, max_passages: usize, seed: u64) -> Vec<usize> {
    if count <= max_passages {
        return (0..count).collect();
    }
    let interior = count - 2;
    let wanted = max_passages.saturating_sub(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, interior, wanted)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    picked.sort_unstable();
    let mut keep = Vec::with_capacity(max_passages);
    keep.push(0);
    keep.extend(picked);
    if max_passages >= 2 {
        keep.push(count - 1);
    }
    keep
}

pub fn chunk_windows(
    doc: &PreparedDocument<'_>,
    window_len: usize,
    stride: usize,
    max_passages: Option<usize>,
    seed: u64,
) -> Result<Vec<Passage>, PassageError> {
    validate_window(window_len, stride, max_passages)?;
    let starts = window_starts(doc.len(), window_len, stride);
    let keep = match max_passages {
        Some(max) => select_windows(starts.len(), max, mixed_seed(seed, doc.doc_id)),
        None => (0..starts.len()).collect(),
    };
    Ok(keep
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let s = starts[w];
            doc.passage(i, s, (s + window_len).min(doc.len()))
        })
        .collect())
}

fn validate_window(
    window_len: usize,
    stride: usize,
    max_passages: Option<usize>,
) -> Result<(), PassageError> {
    if window_len == 0 || stride == 0 {
        return Err(PassageError::InvalidPolicy(
            "window length and stride must be positive".into(),
        ));
    }
    if stride > window_len {
        return Err(PassageError::InvalidPolicy(format!(
            "stride {stride} exceeds window length {window_len}"
        )));
    }
    if max_passages.is_some_and(|m| m < 2) {
        return Err(PassageError::InvalidPolicy(
            "max passages must be at least 2 (first and last windows are kept)".into(),
        ));
    }
    Ok(())
}

pub fn chunk_sentences(doc: &PreparedDocument<'_>) -> Vec<Passage> {
    doc.sentences
        .iter()
        .enumerate()
        .map(|(i, s)| doc.passage(i, s.first_token, s.end_token))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChunkingPolicy {
    SentenceComplete {
        target_len: usize,
    },
    Windows {
        window_len: usize,
        stride: usize,
        max_passages: Option<usize>,
        seed: u64,
    },
    Sentences,
}

impl ChunkingPolicy {
    pub fn sentence_complete() -> Self {
        ChunkingPolicy::SentenceComplete {
            target_len: DEFAULT_TARGET_LEN,
        }
    }

    pub fn windows(seed: u64) -> Self {
        ChunkingPolicy::Windows {
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
            max_passages: Some(DEFAULT_MAX_PASSAGES),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PassageError> {
        match *self {
            ChunkingPolicy::SentenceComplete { target_len: 0 } => Err(PassageError::InvalidPolicy(
                "target length must be at least 1".into(),
            )),
            ChunkingPolicy::Windows {
                window_len,
                stride,
                max_passages,
                ..
            } => validate_window(window_len, stride, max_passages),
            _ => Ok(()),
        }
    }
}

/// Names accepted on the command line: `sentence100`, `window150-75`,
/// `sentences`. The numbers may be changed (`sentence80`, `window200-100`).
pub fn parse_policy(name: &str, seed: u64) -> Result<ChunkingPolicy, PassageError> {
    let bad = || PassageError::InvalidPolicy(format!("unknown policy {name:?}"));
    let policy = if name == "sentences" {
        ChunkingPolicy::Sentences
    } else if let Some(n) = name.strip_prefix("sentence") {
        ChunkingPolicy::SentenceComplete {
            target_len: n.parse().map_err(|_| bad())?,
        }
    } else if let Some(rest) = name.strip_prefix("window") {
        let (w, s) = rest.split_once('-').ok_or_else(bad)?;
        ChunkingPolicy::Windows {
            window_len: w.parse().map_err(|_| bad())?,
            stride: s.parse().map_err(|_| bad())?,
            max_passages: Some(DEFAULT_MAX_PASSAGES),
            seed,
        }
    } else {
        return Err(bad());
    };
    policy.validate()?;
    Ok(policy)
}

impl FromStr for ChunkingPolicy {
    type Err = PassageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s, 123)
    }
}

pub fn chunk_document(
    doc: &Document,
    policy: &ChunkingPolicy,
) -> Result<Vec<Passage>, PassageError> {
    let prepared = PreparedDocument::new(doc);
    match *policy {
        ChunkingPolicy::SentenceComplete { target_len } => {
            Ok(chunk_sentence_complete(&prepared, target_len))
        }
        ChunkingPolicy::Windows {
            window_len,
            stride,
            max_passages,
            seed,
        } => chunk_windows(&prepared, window_len, stride, max_passages, seed),
        ChunkingPolicy::Sentences => Ok(chunk_sentences(&prepared)),
    }
}

/// Chunks every document in parallel; output is in input order.
pub fn chunk_corpus(
    docs: &[Document],
    policy: &ChunkingPolicy,
) -> Result<Vec<Passage>, PassageError> {
    use rayon::prelude::*;
    policy.validate()?;
    let chunks: Vec<Result<Vec<Passage>, PassageError>> =
        docs.par_iter().map(|d| chunk_document(d, policy)).collect();
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// One JSON object per line: `{doc_id, index, start, end, text}`.
pub fn write_passages(passages: &[Passage], path: &Path) -> Result<(), PassageError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in passages {
        serde_json::to_writer(&mut out, p).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_passages(path: &Path) -> Result<Vec<Passage>, PassageError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Passage = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(title: Option<&str>, body: &str) -> Document {
        Document {
            id: "d".into(),
            title: title.map(String::from),
            body: body.into(),
        }
    }

    /// Body made of sentences with the given token counts.
    fn sentences_body(lengths: &[usize]) -> String {
        lengths
            .iter()
            .map(|&n| {
                let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
                format!("{}.", words.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn ranges(passages: &[Passage]) -> Vec<(usize, usize)> {
        passages.iter().map(|p| (p.start, p.end)).collect()
    }

    /// Straightforward restatement of the packing rule over sentence lengths.
    fn reference_packing(lengths: &[usize], target: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        let mut open_at = 0;
        let mut acc = 0;
        for &len in lengths {
            acc += len;
            pos += len;
            if acc >= target {
                out.push((open_at, pos));
                open_at = pos;
                acc = 0;
            }
        }
        if acc > 0 {
            out.push((open_at, pos));
        }
        out
    }

    #[test]
    fn prepare_prepends_title() {
        let d = doc(Some("T"), "a b.");
        let prepared = PreparedDocument::new(&d);
        let words: Vec<&str> = prepared.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, vec!["t", "a", "b"]);
        assert_eq!(
            prepared.sentences,
            vec![
                Sentence {
                    first_token: 0,
                    end_token: 1
                },
                Sentence {
                    first_token: 1,
                    end_token: 3
                }
            ]
        );
        assert_eq!(prepared.text(0, 3), "T a b");

        let untitled = doc(None, "a b.");
        assert_eq!(PreparedDocument::new(&untitled).len(), 2);

        let empty = doc(None, "");
        assert!(chunk_document(&empty, &ChunkingPolicy::sentence_complete())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn below_target_is_one_passage() {
        let d = doc(None, &sentences_body(&[80]));
        let p = chunk_sentence_complete(&PreparedDocument::new(&d), 100);
        assert_eq!(ranges(&p), vec![(0, 80)]);
    }

    #[test]
    fn straddling_sentence_stays_in_current_passage() {
        let lengths = [60, 50, 40, 70];
        assert_eq!(reference_packing(&lengths, 100), vec![(0, 110), (110, 220)]);
        let d = doc(None, &sentences_body(&lengths));
        let p = chunk_sentence_complete(&PreparedDocument::new(&d), 100);
        assert_eq!(ranges(&p), vec![(0, 110), (110, 220)]);
        assert_eq!(p[1].index, 1);
    }

    #[test]
    fn oversized_sentence() {
        let d = doc(None, &sentences_body(&[230]));
        let p = chunk_sentence_complete(&PreparedDocument::new(&d), 100);
        assert_eq!(ranges(&p), vec![(0, 230)]);
    }

    #[test]
    fn passage_text_keeps_source_punctuation() {
        let d = doc(Some("My Title"), "First one. Second, here!");
        let p = chunk_sentence_complete(&PreparedDocument::new(&d), 3);
        assert_eq!(p[0].text, "My Title First one");
        assert_eq!(p[1].text, "Second, here");
    }

    #[test]
    fn window_arithmetic() {
        let words: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let d = doc(None, &words.join(" "));
        let p = chunk_windows(&PreparedDocument::new(&d), 150, 75, None, 1).unwrap();
        assert_eq!(ranges(&p), vec![(0, 150), (75, 225), (150, 300)]);

        let d = doc(None, &words[..120].join(" "));
        let p = chunk_windows(&PreparedDocument::new(&d), 150, 75, None, 1).unwrap();
        assert_eq!(ranges(&p), vec![(0, 120)]);
    }

    #[test]
    fn window_selection_keeps_first_and_last() {
        // 3050 tokens -> starts 0, 75, ..., 2925: 40 windows
        assert_eq!(window_starts(3050, 150, 75).len(), 40);
        let words: Vec<String> = (0..3050).map(|i| format!("w{i}")).collect();
        let d = doc(None, &words.join(" "));
        let prepared = PreparedDocument::new(&d);
        let p = chunk_windows(&prepared, 150, 75, Some(30), 9).unwrap();
        assert_eq!(p.len(), 30);
        assert_eq!((p[0].start, p[0].end), (0, 150));
        assert_eq!((p[29].start, p[29].end), (2925, 3050));
        assert!(p.iter().enumerate().all(|(i, q)| q.index == i));
        assert!(p.windows(2).all(|w| w[0].start < w[1].start));
        assert_eq!(p, chunk_windows(&prepared, 150, 75, Some(30), 9).unwrap());
    }

    #[test]
    fn invalid_window_policies() {
        let d = doc(None, "a b c");
        let prepared = PreparedDocument::new(&d);
        assert!(chunk_windows(&prepared, 10, 20, None, 0).is_err());
        assert!(chunk_windows(&prepared, 10, 0, None, 0).is_err());
        assert!(chunk_windows(&prepared, 10, 5, Some(1), 0).is_err());
    }

    #[test]
    fn sentence_passages() {
        let d = doc(None, "A b. C d.");
        assert_eq!(chunk_sentences(&PreparedDocument::new(&d)).len(), 2);

        let d = doc(Some("T"), "");
        let p = chunk_sentences(&PreparedDocument::new(&d));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].text, "T");

        let d = doc(None, "a. b. c. d. e.");
        let idx: Vec<usize> = chunk_sentences(&PreparedDocument::new(&d))
            .iter()
            .map(|p| p.index)
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn policy_names() {
        assert_eq!(
            parse_policy("sentence100", 1).unwrap(),
            ChunkingPolicy::SentenceComplete { target_len: 100 }
        );
        assert_eq!(
            parse_policy("window150-75", 7).unwrap(),
            ChunkingPolicy::windows(7)
        );
        assert_eq!(
            parse_policy("sentences", 1).unwrap(),
            ChunkingPolicy::Sentences
        );
        assert!(parse_policy("window10-20", 1).is_err());
        assert!(parse_policy("paragraphs", 1).is_err());
        assert!(parse_policy("sentence0", 1).is_err());
    }

    proptest! {
        #[test]
        fn packing_matches_reference(lengths in prop::collection::vec(1usize..60, 0..20), target in 1usize..150) {
            let d = doc(None, &sentences_body(&lengths));
            let p = chunk_sentence_complete(&PreparedDocument::new(&d), target);
            prop_assert_eq!(ranges(&p), reference_packing(&lengths, target));
        }

        #[test]
        fn count_non_increasing_in_target(lengths in prop::collection::vec(1usize..60, 0..20), target in 1usize..150) {
            let d = doc(None, &sentences_body(&lengths));
            let prepared = PreparedDocument::new(&d);
            let a = chunk_sentence_complete(&prepared, target).len();
            let b = chunk_sentence_complete(&prepared, target + 1).len();
            prop_assert!(b <= a);
        }

        #[test]
        fn windows_overlap_by_window_minus_stride(len in 0usize..600, window in 1usize..80, stride_frac in 0.05f64..=1.0) {
            let stride = ((window as f64 * stride_frac).ceil() as usize).clamp(1, window);
            let starts = window_starts(len, window, stride);
            for w in starts.windows(2) {
                let prev_end = (w[0] + window).min(len);
                prop_assert_eq!(w[1], w[0] + stride);
                prop_assert!(prev_end < len);
                prop_assert_eq!(prev_end - w[1], window - stride);
            }
            if len > 0 {
                prop_assert!(starts.last().unwrap() + window >= len);
            }
        }

        #[test]
        fn selection_keeps_ends(count in 2usize..200, max in 2usize..50, seed: u64) {
            let keep = select_windows(count, max, seed);
            prop_assert_eq!(keep.len(), count.min(max));
            prop_assert_eq!(keep[0], 0);
            prop_assert_eq!(*keep.last().unwrap(), count - 1);
            prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
