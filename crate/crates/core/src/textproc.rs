//! Tokenization and sentence segmentation shared by the index, the chunker and
//! the lexical scorer.
//!
//! Normalization is Unicode NFC followed by lowercasing. A token is a maximal
//! run of alphanumeric characters (Unicode letters and numbers); combining
//! marks that follow an alphanumeric character stay attached to it. Everything
//! else separates tokens.

use std::collections::HashSet;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// A normalized word with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// A sentence as a half-open range of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub first_token: usize,
    pub end_token: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.end_token - self.first_token
    }

    pub fn is_empty(&self) -> bool {
        self.end_token == self.first_token
    }
}

fn normalize_token(raw: &str) -> String {
    let lowered: String = raw.nfc().collect::<String>().to_lowercase();
    lowered.nfc().collect()
}

/// Byte spans of the raw (unnormalized) token runs in `text`.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut current: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let in_token = c.is_alphanumeric() || (current.is_some() && is_combining_mark(c));
        match (in_token, current) {
            (true, None) => current = Some(i),
            (false, Some(start)) => {
                spans.push((start, i));
                current = None;
            }
            _ => {}
        }
    }
    if let Some(start) = current {
        spans.push((start, text.len()));
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<Token> {
    token_spans(text)
        .into_iter()
        .map(|(start, end)| Token {
            text: normalize_token(&text[start..end]),
            start,
            end,
        })
        .filter(|t| !t.text.is_empty())
        .collect()
}

/// Token texts only.
pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Byte offsets just past each sentence terminator ('.', '!', '?') that is
/// followed by whitespace or by the end of the text.
fn sentence_breaks(text: &str) -> Vec<usize> {
    let mut breaks = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                breaks.push(i + c.len_utf8());
            }
        }
    }
    breaks
}

/// Sentences over the tokens of an already tokenized text. Sentences without
/// tokens are dropped, so the result tiles `tokens` exactly.
pub fn split_sentences_with(text: &str, tokens: &[Token]) -> Vec<Sentence> {
    let breaks = sentence_breaks(text);
    let mut sentences = Vec::new();
    let mut first = 0;
    let mut next_break = 0;
    for (i, token) in tokens.iter().enumerate() {
        // advance past every boundary located before this token
        let mut crossed = false;
        while next_break < breaks.len() && breaks[next_break] <= token.start {
            next_break += 1;
            crossed = true;
        }
        if crossed && i > first {
            sentences.push(Sentence {
                first_token: first,
                end_token: i,
            });
            first = i;
        }
    }
    if tokens.len() > first {
        sentences.push(Sentence {
            first_token: first,
            end_token: tokens.len(),
        });
    }
    sentences
}

pub fn split_sentences(text: &str) -> Vec<Sentence> {
    split_sentences_with(text, &tokenize(text))
}

const ENGLISH_STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

/// Term analysis applied on top of [`tokenize`] for indexing and lexical
/// scoring. Both options are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerConfig {
    pub remove_stopwords: bool,
    pub stem: bool,
}

pub struct Analyzer {
    config: AnalyzerConfig,
    stopwords: HashSet<&'static str>,
    stemmer: Option<Stemmer>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer")
            .field("config", &self.config)
            .finish()
    }
}

impl Clone for Analyzer {
    fn clone(&self) -> Self {
        Analyzer::new(self.config)
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::new(AnalyzerConfig::default())
    }
}

impl Analyzer {
    pub fn new(config: AnalyzerConfig) -> Self {
        let stopwords = if config.remove_stopwords {
            ENGLISH_STOPWORDS.iter().copied().collect()
        } else {
            HashSet::new()
        };
        let stemmer = config.stem.then(|| Stemmer::create(Algorithm::English));
        Analyzer {
            config,
            stopwords,
            stemmer,
        }
    }

    pub fn config(&self) -> AnalyzerConfig {
        self.config
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t.text.as_str()))
            .map(|t| match &self.stemmer {
                Some(stemmer) => stemmer.stem(&t.text).into_owned(),
                None => t.text,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence_words(text: &str) -> Vec<Vec<String>> {
        let tokens = tokenize(text);
        split_sentences(text)
            .iter()
            .map(|s| {
                tokens[s.first_token..s.end_token]
                    .iter()
                    .map(|t| t.text.clone())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize_words("The cat, the CAT!"),
            vec!["the", "cat", "the", "cat"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize_words("BERT-3S 2019"), vec!["bert", "3s", "2019"]);
    }

    #[test]
    fn spans_point_into_source() {
        let text = "  Héllo, wörld";
        let tokens = tokenize(text);
        assert_eq!(&text[tokens[0].start..tokens[0].end], "Héllo");
        assert_eq!(&text[tokens[1].start..tokens[1].end], "wörld");
    }

    #[test]
    fn combining_marks_stay_in_token_and_compose() {
        // "e" + COMBINING ACUTE ACCENT composes to a single "é" under NFC
        let tokens = tokenize_words("Cafe\u{301} au lait");
        assert_eq!(tokens, vec!["café", "au", "lait"]);
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(
            sentence_words("A b. C d? E"),
            vec![vec!["a", "b"], vec!["c", "d"], vec!["e"]]
        );
        assert_eq!(split_sentences("no terminator here").len(), 1);
        assert_eq!(split_sentences("x.").len(), 1);
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn terminator_without_whitespace_is_not_a_boundary() {
        assert_eq!(split_sentences("pi is 3.14 ok").len(), 1);
        assert_eq!(split_sentences("a.b c").len(), 1);
    }

    #[test]
    fn punctuation_only_sentences_are_dropped() {
        assert_eq!(
            sentence_words("one. ... ! two"),
            vec![vec!["one"], vec!["two"]]
        );
    }

    #[test]
    fn analyzer_defaults_to_plain_tokens() {
        let analyzer = Analyzer::default();
        assert_eq!(
            analyzer.analyze("The Running dogs"),
            vec!["the", "running", "dogs"]
        );
    }

    #[test]
    fn analyzer_options() {
        let analyzer = Analyzer::new(AnalyzerConfig {
            remove_stopwords: true,
            stem: true,
        });
        assert_eq!(analyzer.analyze("The Running dogs"), vec!["run", "dog"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_tokens(text in "\\PC{0,80}") {
            let first = tokenize_words(&text);
            let second = tokenize_words(&first.join(" "));
            prop_assert_eq!(first, second);
        }

        #[test]
        fn sentences_cover_all_tokens(text in "[a-zA-Z0-9 .!?,\n]{0,120}") {
            let tokens = tokenize(&text);
            let sentences = split_sentences(&text);
            let total: usize = sentences.iter().map(Sentence::len).sum();
            prop_assert_eq!(total, tokens.len());
            let mut expected_start = 0;
            for s in &sentences {
                prop_assert_eq!(s.first_token, expected_start);
                prop_assert!(!s.is_empty());
                expected_start = s.end_token;
            }
        }

        #[test]
        fn tokens_are_nonempty_and_whitespace_free(text in "\\PC{0,80}") {
            for t in tokenize(&text) {
                prop_assert!(!t.text.is_empty());
                prop_assert!(!t.text.chars().any(char::is_whitespace));
                prop_assert!(t.start < t.end);
            }
        }
    }
}
