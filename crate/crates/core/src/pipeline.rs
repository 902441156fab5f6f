//! Dataset-level operations shared by the command line and the test suites.

use std::fmt::Write as _;

use crate::data::CaptionSample;
use crate::decoder::generate_caption;
use crate::error::{Error, Result};
use crate::metrics::{source_separation, CaptionRecord, ChoiceRecord};
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tokens::SourceId;

/// Rejects samples whose feature widths or sources do not fit `config`.
pub fn check_dataset(config: &ModelConfig, samples: &[CaptionSample]) -> Result<()> {
    for s in samples {
        for o in &s.objects {
            if o.visual_feature.len() != config.d_fr {
                return Err(Error::InvalidValue {
                    field: "d_fr".into(),
                    reason: format!(
                        "image {}: object feature has {} values, config expects {}",
                        s.image_id,
                        o.visual_feature.len(),
                        config.d_fr
                    ),
                });
            }
        }
        for t in &s.special_tokens {
            if t.visual_feature.len() != config.d_fr {
                return Err(Error::InvalidValue {
                    field: "d_fr".into(),
                    reason: format!(
                        "image {}: token feature has {} values, config expects {}",
                        s.image_id,
                        t.visual_feature.len(),
                        config.d_fr
                    ),
                });
            }
            if t.source.0 >= config.num_sources {
                return Err(Error::InvalidValue {
                    field: "num_sources".into(),
                    reason: format!("image {}: source {} out of range", s.image_id, t.source.0),
                });
            }
        }
    }
    Ok(())
}

/// Greedy captions for every sample, in input order.
pub fn caption_samples<T: Scalar>(model: &Model<T>, samples: &[CaptionSample]) -> Result<Vec<CaptionRecord>> {
    samples
        .iter()
        .map(|s| {
            let g = generate_caption(&s.objects, &s.special_tokens, model, model.config.t_max)?;
            Ok(CaptionRecord {
                image_id: s.image_id.clone(),
                caption: g.text,
                choices: g
                    .choices
                    .iter()
                    .map(|&c| ChoiceRecord::new(c, &model.vocab, &s.special_tokens))
                    .collect(),
            })
        })
        .collect()
}

/// One special token's input embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub text: String,
    pub source: SourceId,
    pub vector: Vec<f64>,
}

/// Special-token embeddings (as fed to the transformer) of every sample.
pub fn export_embeddings<T: Scalar>(model: &Model<T>, samples: &[CaptionSample]) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::new();
    for s in samples {
        let enc = model.encode(&s.objects, &s.special_tokens)?;
        let e = model.token_embeddings(&enc)?;
        for (i, t) in s.special_tokens.iter().enumerate() {
            rows.push(EmbeddingRow {
                text: t.text.clone(),
                source: t.source,
                vector: e.row(i).iter().map(|v| v.as_f64()).collect(),
            });
        }
    }
    Ok(rows)
}

/// Silhouette of the rows with sources as cluster labels.
pub fn embedding_separation(rows: &[EmbeddingRow]) -> Result<f64> {
    let points: Vec<(Vec<f64>, usize)> = rows.iter().map(|r| (r.vector.clone(), r.source.0)).collect();
    source_separation(&points)
}

/// `text<TAB>source<TAB>v1<TAB>...`; values are written so they parse back exactly.
pub fn embeddings_to_tsv(rows: &[EmbeddingRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let text = r.text.replace(['\t', '\n', '\r'], " ");
        write!(out, "{text}\t{}", r.source.0).unwrap();
        for v in &r.vector {
            write!(out, "\t{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings_tsv(text: &str) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let mut cols = line.split('\t');
        let text = cols.next().ok_or_else(|| bad("missing text"))?.to_string();
        let source = cols
            .next()
            .and_then(|s| s.parse().ok())
            .map(SourceId)
            .ok_or_else(|| bad("missing or invalid source"))?;
        let vector = cols
            .map(|c| c.parse::<f64>().map_err(|_| bad("invalid value")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow { text, source, vector });
    }
    Ok(rows)
}
