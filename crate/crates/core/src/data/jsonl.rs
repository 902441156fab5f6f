use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{cap_objects, cap_special_tokens, CaptionSample, MAX_OBJECTS, MAX_SPECIAL_TOKENS};
use crate::error::{Error, Result};
use crate::tokens::{normalize_token_text, BBox, ObjectRegion, SourceId, SpecialToken};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject unknown fields instead of ignoring them.
    pub strict: bool,
    pub num_sources: usize,
    pub max_objects: usize,
    pub max_special_tokens: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            strict: true,
            num_sources: 2,
            max_objects: MAX_OBJECTS,
            max_special_tokens: MAX_SPECIAL_TOKENS,
        }
    }
}

const SAMPLE_FIELDS: [&str; 4] = ["image_id", "objects", "special_tokens", "references"];
const OBJECT_FIELDS: [&str; 2] = ["bbox", "feat"];
const TOKEN_FIELDS: [&str; 4] = ["text", "source", "bbox", "feat"];

struct LineCtx {
    line: usize,
    strict: bool,
}

impl LineCtx {
    fn schema(&self, field: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Schema {
            line: self.line,
            field: field.into(),
            message: message.into(),
        }
    }

    fn object<'a>(&self, v: &'a Value, path: &str, allowed: &[&str]) -> Result<&'a Map<String, Value>> {
        let obj = v.as_object().ok_or_else(|| self.schema(path, "expected an object"))?;
        if self.strict {
            if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(self.schema(join(path, k), "unknown field"));
            }
        }
        Ok(obj)
    }

    fn field<'a>(&self, obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
        obj.get(key).ok_or_else(|| self.schema(join(path, key), "missing field"))
    }

    fn reals(&self, v: &Value, path: &str) -> Result<Vec<f64>> {
        let arr = v.as_array().ok_or_else(|| self.schema(path, "expected an array of numbers"))?;
        arr.iter()
            .map(|x| {
                x.as_f64()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| self.schema(path, "expected finite numbers"))
            })
            .collect()
    }

    fn bbox(&self, v: &Value, path: &str) -> Result<BBox> {
        let r = self.reals(v, path)?;
        let arr: [f64; 4] = r
            .try_into()
            .map_err(|r: Vec<f64>| self.schema(path, format!("expected 4 numbers, found {}", r.len())))?;
        let b = BBox(arr);
        b.validate().map_err(|e| self.schema(path, e.to_string()))?;
        Ok(b)
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn parse_sample(v: &Value, ctx: &LineCtx, opts: &LoadOptions) -> Result<CaptionSample> {
    let root = ctx.object(v, "", &SAMPLE_FIELDS)?;
    let image_id = ctx
        .field(root, "", "image_id")?
        .as_str()
        .ok_or_else(|| ctx.schema("image_id", "expected a string"))?
        .to_string();

    let objs = ctx
        .field(root, "", "objects")?
        .as_array()
        .ok_or_else(|| ctx.schema("objects", "expected an array"))?;
    let mut objects = Vec::with_capacity(objs.len());
    for (i, o) in objs.iter().enumerate() {
        let path = format!("objects[{i}]");
        let m = ctx.object(o, &path, &OBJECT_FIELDS)?;
        objects.push(ObjectRegion {
            bbox: ctx.bbox(ctx.field(m, &path, "bbox")?, &join(&path, "bbox"))?,
            visual_feature: ctx.reals(ctx.field(m, &path, "feat")?, &join(&path, "feat"))?,
        });
    }

    let toks = ctx
        .field(root, "", "special_tokens")?
        .as_array()
        .ok_or_else(|| ctx.schema("special_tokens", "expected an array"))?;
    let mut tokens = Vec::with_capacity(toks.len());
    for (i, t) in toks.iter().enumerate() {
        let path = format!("special_tokens[{i}]");
        let m = ctx.object(t, &path, &TOKEN_FIELDS)?;
        let text = ctx
            .field(m, &path, "text")?
            .as_str()
            .ok_or_else(|| ctx.schema(join(&path, "text"), "expected a string"))?;
        if normalize_token_text(text).is_empty() {
            return Err(ctx.schema(join(&path, "text"), "empty after normalization"));
        }
        let source = ctx
            .field(m, &path, "source")?
            .as_u64()
            .ok_or_else(|| ctx.schema(join(&path, "source"), "expected a non-negative integer"))?
            as usize;
        if source >= opts.num_sources {
            return Err(ctx.schema(
                join(&path, "source"),
                format!("source {source} >= registered sources {}", opts.num_sources),
            ));
        }
        tokens.push(SpecialToken {
            text: text.to_string(),
            source: SourceId(source),
            bbox: ctx.bbox(ctx.field(m, &path, "bbox")?, &join(&path, "bbox"))?,
            visual_feature: ctx.reals(ctx.field(m, &path, "feat")?, &join(&path, "feat"))?,
        });
    }

    let refs = ctx
        .field(root, "", "references")?
        .as_array()
        .ok_or_else(|| ctx.schema("references", "expected an array of strings"))?;
    let references = refs
        .iter()
        .map(|r| {
            r.as_str()
                .map(String::from)
                .ok_or_else(|| ctx.schema("references", "expected an array of strings"))
        })
        .collect::<Result<Vec<_>>>()?;
    if references.is_empty() {
        return Err(ctx.schema("references", "at least one reference required"));
    }
    if references.iter().any(|r| normalize_token_text(r).is_empty()) {
        return Err(ctx.schema("references", "reference empty after normalization"));
    }

    Ok(CaptionSample {
        image_id,
        objects: cap_objects(objects, opts.max_objects),
        special_tokens: cap_special_tokens(tokens, opts.max_special_tokens),
        references,
    })
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str, opts: &LoadOptions) -> Result<Vec<CaptionSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let ctx = LineCtx {
            line: i + 1,
            strict: opts.strict,
        };
        out.push(parse_sample(&v, &ctx, opts)?);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<CaptionSample>> {
    parse_dataset(&std::fs::read_to_string(path)?, opts)
}

#[derive(Serialize)]
struct ObjectOut<'a> {
    bbox: &'a [f64; 4],
    feat: &'a [f64],
}

#[derive(Serialize)]
struct TokenOut<'a> {
    text: &'a str,
    source: usize,
    bbox: &'a [f64; 4],
    feat: &'a [f64],
}

#[derive(Serialize)]
struct SampleOut<'a> {
    image_id: &'a str,
    objects: Vec<ObjectOut<'a>>,
    special_tokens: Vec<TokenOut<'a>>,
    references: &'a [String],
}

/// Canonical one-line JSON encoding of a sample (fixed key order, shortest round-trip floats).
pub fn to_jsonl(sample: &CaptionSample) -> String {
    let out = SampleOut {
        image_id: &sample.image_id,
        objects: sample
            .objects
            .iter()
            .map(|o| ObjectOut {
                bbox: &o.bbox.0,
                feat: &o.visual_feature,
            })
            .collect(),
        special_tokens: sample
            .special_tokens
            .iter()
            .map(|t| TokenOut {
                text: &t.text,
                source: t.source.0,
                bbox: &t.bbox.0,
                feat: &t.visual_feature,
            })
            .collect(),
        references: &sample.references,
    };
    serde_json::to_string(&out).expect("sample serializes")
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[CaptionSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        writeln!(f, "{}", to_jsonl(s))?;
    }
    f.flush()?;
    Ok(())
}
