//! Teacher-forcing inputs and multi-hot step targets from a reference caption.

use crate::error::{Error, Result};
use crate::tokens::{normalize_token_text, SourceId, SpecialToken, Vocabulary, WordChoice};

/// One piece of a reference caption after span matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    /// A span copied from special tokens; `pointers` lists every token whose
    /// normalized text equals the span.
    Span { text: String, pointers: Vec<usize> },
    Word(String),
}

/// Greedy left-to-right matching, preferring the longest token text at each position.
pub fn match_spans(reference: &str, tokens: &[SpecialToken]) -> Vec<Segment> {
    let norm = normalize_token_text(reference);
    let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    let token_words: Vec<Vec<String>> = tokens
        .iter()
        .map(|t| t.normalized_text().split(' ').map(String::from).collect())
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let best = token_words
            .iter()
            .filter(|tw| !tw.is_empty() && !tw[0].is_empty() && i + tw.len() <= words.len())
            .filter(|tw| tw.iter().zip(&words[i..]).all(|(a, b)| a == b))
            .map(Vec::len)
            .max();
        match best {
            Some(len) => {
                let span = &words[i..i + len];
                let pointers = token_words
                    .iter()
                    .enumerate()
                    .filter(|(_, tw)| tw.len() == len && tw.iter().zip(span).all(|(a, b)| a == b))
                    .map(|(j, _)| j)
                    .collect();
                out.push(Segment::Span {
                    text: span.join(" "),
                    pointers,
                });
                i += len;
            }
            None => {
                out.push(Segment::Word(words[i].to_string()));
                i += 1;
            }
        }
    }
    out
}

/// Multi-hot targets, one row per decoding step, over `K + N` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetMatrix {
    width: usize,
    vocab_size: usize,
    /// Sorted active indices per row.
    rows: Vec<Vec<usize>>,
}

impl TargetMatrix {
    pub fn new(vocab_size: usize, pointer_slots: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let width = vocab_size + pointer_slots;
        for r in &rows {
            if let Some(&bad) = r.iter().find(|&&i| i >= width) {
                return Err(Error::IndexOutOfRange {
                    context: "target row",
                    index: bad,
                    len: width,
                });
            }
        }
        Ok(Self {
            width,
            vocab_size,
            rows,
        })
    }

    pub fn t_end(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, t: usize) -> &[usize] {
        &self.rows[t]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Dense 0/1 row.
    pub fn dense_row(&self, t: usize) -> Vec<bool> {
        let mut v = vec![false; self.width];
        for &i in &self.rows[t] {
            v[i] = true;
        }
        v
    }

    /// Row as [`WordChoice`]s.
    pub fn row_choices(&self, t: usize) -> Vec<WordChoice> {
        self.rows[t]
            .iter()
            .map(|&i| {
                if i < self.vocab_size {
                    WordChoice::Vocab(i)
                } else {
                    WordChoice::Pointer(i - self.vocab_size)
                }
            })
            .collect()
    }
}

/// Decoder inputs (starting with `<begin>`) and the matching targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Targets {
    pub inputs: Vec<WordChoice>,
    pub targets: TargetMatrix,
}

pub fn build_targets(reference: &str, vocab: &Vocabulary, tokens: &[SpecialToken]) -> Result<Targets> {
    build_targets_capped(reference, vocab, tokens, usize::MAX)
}

/// As [`build_targets`], keeping at most `t_max` rows; the last row is always `<end>`.
pub fn build_targets_capped(
    reference: &str,
    vocab: &Vocabulary,
    tokens: &[SpecialToken],
    t_max: usize,
) -> Result<Targets> {
    if normalize_token_text(reference).is_empty() {
        return Err(Error::EmptyReference);
    }
    if t_max == 0 {
        return Err(Error::InvalidValue {
            field: "t_max".into(),
            reason: "must be positive".into(),
        });
    }
    let k = vocab.len();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut inputs = vec![WordChoice::Vocab(Vocabulary::BEGIN)];
    for seg in match_spans(reference, tokens) {
        if rows.len() + 1 >= t_max {
            break;
        }
        let (row, input) = match seg {
            Segment::Span { text, pointers } => {
                let mut row: Vec<usize> = Vec::new();
                if !text.contains(' ') {
                    if let Some(v) = vocab.index_of(&text) {
                        row.push(v);
                    }
                }
                row.extend(pointers.iter().map(|p| k + p));
                (row, WordChoice::Pointer(pointers[0]))
            }
            Segment::Word(w) => {
                let v = vocab.index_of(&w).unwrap_or(Vocabulary::UNK);
                (vec![v], WordChoice::Vocab(v))
            }
        };
        rows.push(row);
        inputs.push(input);
    }
    rows.push(vec![Vocabulary::END]);
    inputs.truncate(rows.len());
    Ok(Targets {
        inputs,
        targets: TargetMatrix::new(k, tokens.len(), rows)?,
    })
}

/// A copied span the caption should contain, with the classifier it comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSlot {
    pub text: String,
    pub source: SourceId,
}

/// Copy slots of a reference in caption order.
pub fn gold_slots(reference: &str, tokens: &[SpecialToken]) -> Vec<GoldSlot> {
    match_spans(reference, tokens)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Span { text, pointers } => Some(GoldSlot {
                text,
                source: tokens[pointers[0]].source,
            }),
            Segment::Word(_) => None,
        })
        .collect()
}
