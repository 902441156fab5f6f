//! Caption metrics, copy diagnostics, embedding separation, and the
//! `key: value` evaluation report.

mod cider;
mod diagnostics;
mod text;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::CaptionSample;
use crate::error::{Error, Result};
use crate::tokens::{Vocabulary, WordChoice};
use crate::training::gold_slots;

pub use cider::{cider, cider_per_image, CIDER_SCALE, CIDER_SIGMA};
pub use diagnostics::{copy_diagnostics, source_separation, CopyCase, CopyDiagnostics};
pub use text::{bleu4, corpus_bleu4, rouge_l, tokenize, BleuStats, BLEU_SMOOTHING, ROUGE_BETA_SQ};

/// One line of a captions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub choices: Vec<ChoiceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub kind: String,
    pub index: usize,
    pub text: String,
}

impl ChoiceRecord {
    pub fn new(choice: WordChoice, vocab: &Vocabulary, tokens: &[crate::tokens::SpecialToken]) -> Self {
        let text = match choice {
            WordChoice::Vocab(i) => vocab.word(i).unwrap_or("<unk>").to_string(),
            WordChoice::Pointer(j) => tokens.get(j).map_or_else(|| "<unk>".to_string(), |t| t.text.clone()),
        };
        Self {
            kind: choice.kind().to_string(),
            index: choice.index(),
            text,
        }
    }

    pub fn choice(&self) -> Result<WordChoice> {
        match self.kind.as_str() {
            "vocab" => Ok(WordChoice::Vocab(self.index)),
            "pointer" => Ok(WordChoice::Pointer(self.index)),
            other => Err(Error::InvalidValue {
                field: "choices.kind".into(),
                reason: format!("expected vocab or pointer, got {other:?}"),
            }),
        }
    }
}

pub fn captions_to_jsonl(records: &[CaptionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_captions(text: &str) -> Result<Vec<CaptionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    parse_captions(&std::fs::read_to_string(path)?)
}

/// Ordered `key: value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Floats are written with a fixed 6-decimal format.
    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push(key, format!("{value:.6}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            writeln!(out, "{k}: {v}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Report::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(": ").ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key: value`".into(),
            })?;
            r.push(k, v);
        }
        Ok(r)
    }
}

/// Scores captions against the references of the samples they name.
/// Gold copy slots come from each sample's first reference.
pub fn evaluate(records: &[CaptionRecord], samples: &[CaptionSample], separation: Option<f64>) -> Result<Report> {
    let by_id: HashMap<&str, &CaptionSample> = samples.iter().map(|s| (s.image_id.as_str(), s)).collect();
    let mut cands = Vec::with_capacity(records.len());
    let mut refs = Vec::with_capacity(records.len());
    let mut choices = Vec::with_capacity(records.len());
    let mut golds = Vec::with_capacity(records.len());
    let mut matched = Vec::with_capacity(records.len());
    for r in records {
        let s = *by_id.get(r.image_id.as_str()).ok_or_else(|| Error::InvalidValue {
            field: "image_id".into(),
            reason: format!("{:?} not in dataset", r.image_id),
        })?;
        if s.references.is_empty() {
            return Err(Error::EmptyReferenceSet);
        }
        cands.push(r.caption.clone());
        refs.push(s.references.clone());
        choices.push(r.choices.iter().map(ChoiceRecord::choice).collect::<Result<Vec<_>>>()?);
        golds.push(gold_slots(&s.references[0], &s.special_tokens));
        matched.push(s);
    }
    let n = records.len();
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mut sent_bleu = Vec::with_capacity(n);
    let mut rouge = Vec::with_capacity(n);
    for (c, r) in cands.iter().zip(&refs) {
        sent_bleu.push(bleu4(c, r)?);
        rouge.push(rouge_l(c, r)?);
    }
    let cases: Vec<CopyCase<'_>> = (0..n)
        .map(|i| CopyCase {
            tokens: &matched[i].special_tokens,
            choices: &choices[i],
            gold: &golds[i],
        })
        .collect();
    let diag = copy_diagnostics(&cases);

    let mut report = Report::new();
    report.push("images", n);
    report.push_f64("bleu4", corpus_bleu4(&cands, &refs)?);
    report.push_f64("bleu4_sentence_mean", mean(sent_bleu));
    report.push_f64("rouge_l", mean(rouge));
    if n >= 2 {
        report.push_f64("cider", cider(&cands, &refs)?);
    } else {
        report.push("cider", "nan");
    }
    report.push_f64("face_copy_rate", diag.face_copy_rate);
    report.push_f64("ocr_copy_rate", diag.ocr_copy_rate);
    report.push_f64("wrong_source_rate", diag.wrong_source_rate);
    report.push("face_slots", diag.face_slots);
    report.push("ocr_slots", diag.ocr_slots);
    if let Some(s) = separation {
        report.push_f64("source_separation", s);
    }
    Ok(report)
}
