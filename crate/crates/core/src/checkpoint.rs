//! Versioned text checkpoints.
//!
//! ```text
//! stcap-checkpoint 1
//! precision f32|f64
//! config <key> <value>            (one line per model-config field)
//! vocab <n>                       (followed by n words, one per line)
//! provider hash <dim>
//! provider table <dim> <n>        (followed by n lines: word v1 .. v_dim)
//! tensor <name> <rows> <cols>     (followed by one line of rows*cols values)
//! adam <step> <beta1> <beta2> <eps>
//! epoch <completed epochs>
//! loss_history <n>                (followed by one line of n values)
//! end
//! ```
//!
//! Values are written as the shortest decimal that round-trips the `f64`
//! representation, so saving and loading is bit-exact for both precisions.
//! Optimizer moments are stored as tensors named `adam.m.<param>` and
//! `adam.v.<param>`; the `adam`, `epoch`, and `loss_history` lines are present
//! only when training state is saved.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tokens::{VectorProvider, Vocabulary};
use crate::training::{Adam, Precision, TrainState};

pub const CHECKPOINT_MAGIC: &str = "stcap-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub state: Option<TrainState<T>>,
}

fn precision_of<T: Scalar>() -> Precision {
    if std::mem::size_of::<T>() == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

fn config_pairs(c: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("d_model", c.d_model.to_string()),
        ("layers", c.layers.to_string()),
        ("heads", c.heads.to_string()),
        ("d_ffn", c.d_ffn.to_string()),
        ("d_pointer", c.d_pointer.to_string()),
        ("d_fr", c.d_fr.to_string()),
        ("d_ft", c.d_ft.to_string()),
        ("num_sources", c.num_sources.to_string()),
        ("t_max", c.t_max.to_string()),
        ("dropout", format!("{:?}", c.dropout)),
    ]
}

fn write_values<T: Scalar>(out: &mut String, values: impl IntoIterator<Item = T>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{:?}", v.as_f64()).unwrap();
    }
    out.push('\n');
}

fn write_tensor<T: Scalar>(out: &mut String, name: &str, m: &Matrix<T>) {
    writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).unwrap();
    write_values(out, m.as_slice().iter().copied());
}

pub fn to_text<T: Scalar>(model: &Model<T>, state: Option<&TrainState<T>>) -> String {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
    writeln!(out, "precision {}", precision_of::<T>().name()).unwrap();
    for (k, v) in config_pairs(&model.config) {
        writeln!(out, "config {k} {v}").unwrap();
    }
    writeln!(out, "vocab {}", model.vocab.len()).unwrap();
    for w in model.vocab.words() {
        writeln!(out, "{w}").unwrap();
    }
    match &model.provider {
        VectorProvider::HashFallback { dim } => writeln!(out, "provider hash {dim}").unwrap(),
        VectorProvider::FileTable { dim, table } => {
            writeln!(out, "provider table {dim} {}", table.len()).unwrap();
            let sorted: BTreeMap<&String, &Vec<f64>> = table.iter().collect();
            for (w, v) in sorted {
                out.push_str(w);
                out.push(' ');
                write_values(&mut out, v.iter().copied());
            }
        }
    }
    for (name, m) in model.params.named() {
        write_tensor(&mut out, &name, m);
    }
    if let Some(s) = state {
        let a = &s.optimizer;
        writeln!(out, "adam {} {:?} {:?} {:?}", a.step, a.beta1, a.beta2, a.eps).unwrap();
        for (name, m) in a.m.named() {
            write_tensor(&mut out, &format!("adam.m.{name}"), m);
        }
        for (name, m) in a.v.named() {
            write_tensor(&mut out, &format!("adam.v.{name}"), m);
        }
        writeln!(out, "epoch {}", s.epoch).unwrap();
        writeln!(out, "loss_history {}", s.loss_history.len()).unwrap();
        write_values(&mut out, s.loss_history.iter().copied());
    }
    out.push_str("end\n");
    out
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, model: &Model<T>, state: Option<&TrainState<T>>) -> Result<()> {
    std::fs::write(path, to_text(model, state))?;
    Ok(())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let (i, l) = self
            .inner
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file after line {}", self.line)))?;
        self.line = i + 1;
        Ok(l)
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line))
    }
}

fn parse_num<N: std::str::FromStr>(s: &str, lines: &Lines<'_>) -> Result<N> {
    s.parse().map_err(|_| lines.err(format!("cannot parse {s:?}")))
}

fn parse_values(line: &str, expected: usize, lines: &Lines<'_>) -> Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split_ascii_whitespace()
        .map(|s| parse_num::<f64>(s, lines))
        .collect::<Result<_>>()?;
    if v.len() != expected {
        return Err(lines.err(format!("expected {expected} values, got {}", v.len())));
    }
    Ok(v)
}

fn fill_params<T: Scalar>(params: &mut ModelParams<T>, tensors: &mut HashMap<String, (usize, usize, Vec<f64>)>, prefix: &str) -> Result<()> {
    for (name, m) in params.named_mut() {
        let key = format!("{prefix}{name}");
        let (r, c, vals) = tensors
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if (r, c) != m.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {key}: shape {r}x{c}, expected {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for (d, s) in m.as_mut_slice().iter_mut().zip(vals) {
            *d = T::lit(s);
        }
    }
    Ok(())
}

pub fn from_text<T: Scalar>(text: &str) -> Result<Checkpoint<T>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.next()?;
    let version = header
        .strip_prefix(CHECKPOINT_MAGIC)
        .map(str::trim)
        .ok_or_else(|| lines.err("not a checkpoint file"))?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(lines.err(format!("unsupported version {version}")));
    }

    let mut config: BTreeMap<String, String> = BTreeMap::new();
    let mut precision = None;
    let mut vocab = None;
    let mut provider = None;
    let mut tensors: HashMap<String, (usize, usize, Vec<f64>)> = HashMap::new();
    let mut adam_header: Option<(u64, f64, f64, f64)> = None;
    let mut epoch = None;
    let mut history = None;
    loop {
        let line = lines.next()?;
        let parts: Vec<&str> = line.split_ascii_whitespace().collect();
        match parts.as_slice() {
            ["end"] => break,
            ["precision", p] => precision = Some(Precision::parse(p).map_err(|e| lines.err(e))?),
            ["config", k, v] => {
                config.insert(k.to_string(), v.to_string());
            }
            ["vocab", n] => {
                let n: usize = parse_num(n, &lines)?;
                let mut words = Vec::with_capacity(n);
                for _ in 0..n {
                    words.push(lines.next()?.to_string());
                }
                vocab = Some(words);
            }
            ["provider", "hash", dim] => provider = Some(VectorProvider::hash(parse_num(dim, &lines)?)),
            ["provider", "table", dim, n] => {
                let dim: usize = parse_num(dim, &lines)?;
                let n: usize = parse_num(n, &lines)?;
                let mut table = HashMap::with_capacity(n);
                for _ in 0..n {
                    let row = lines.next()?;
                    let (w, rest) = row.split_once(' ').ok_or_else(|| lines.err("malformed table row"))?;
                    table.insert(w.to_string(), parse_values(rest, dim, &lines)?);
                }
                provider = Some(VectorProvider::FileTable { dim, table });
            }
            ["tensor", name, r, c] => {
                let r: usize = parse_num(r, &lines)?;
                let c: usize = parse_num(c, &lines)?;
                let vals = parse_values(lines.next()?, r * c, &lines)?;
                tensors.insert(name.to_string(), (r, c, vals));
            }
            ["adam", step, b1, b2, eps] => {
                adam_header = Some((
                    parse_num(step, &lines)?,
                    parse_num(b1, &lines)?,
                    parse_num(b2, &lines)?,
                    parse_num(eps, &lines)?,
                ))
            }
            ["epoch", e] => epoch = Some(parse_num::<usize>(e, &lines)?),
            ["loss_history", n] => {
                let n: usize = parse_num(n, &lines)?;
                history = Some(parse_values(lines.next()?, n, &lines)?);
            }
            _ => return Err(lines.err(format!("unrecognized line {line:?}"))),
        }
    }

    let want = precision_of::<T>();
    match precision {
        Some(p) if p == want => {}
        Some(p) => {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, requested {}",
                p.name(),
                want.name()
            )))
        }
        None => return Err(Error::Checkpoint("missing precision".into())),
    }
    let get = |k: &str| -> Result<&String> { config.get(k).ok_or_else(|| Error::Checkpoint(format!("missing config {k}"))) };
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Checkpoint(format!("bad config {k}"))) };
    let model_config = ModelConfig {
        d_model: num("d_model")?,
        layers: num("layers")?,
        heads: num("heads")?,
        d_ffn: num("d_ffn")?,
        d_pointer: num("d_pointer")?,
        d_fr: num("d_fr")?,
        d_ft: num("d_ft")?,
        num_sources: num("num_sources")?,
        t_max: num("t_max")?,
        dropout: get("dropout")?.parse().map_err(|_| Error::Checkpoint("bad config dropout".into()))?,
    };
    let words = vocab.ok_or_else(|| Error::Checkpoint("missing vocab".into()))?;
    let vocab = Vocabulary::from_words(words).map_err(|e| Error::Checkpoint(format!("vocab: {e}")))?;
    let provider = provider.ok_or_else(|| Error::Checkpoint("missing provider".into()))?;
    let mut model = Model::<T>::zeros(model_config, vocab, provider).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fill_params(&mut model.params, &mut tensors, "")?;

    let state = match adam_header {
        None => None,
        Some((step, beta1, beta2, eps)) => {
            let mut m = model.params.zeros_like();
            let mut v = model.params.zeros_like();
            fill_params(&mut m, &mut tensors, "adam.m.")?;
            fill_params(&mut v, &mut tensors, "adam.v.")?;
            Some(TrainState {
                optimizer: Adam {
                    beta1,
                    beta2,
                    eps,
                    step,
                    m,
                    v,
                },
                epoch: epoch.ok_or_else(|| Error::Checkpoint("missing epoch".into()))?,
                loss_history: history.ok_or_else(|| Error::Checkpoint("missing loss_history".into()))?,
            })
        }
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { model, state })
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    from_text(&std::fs::read_to_string(path)?)
}

/// Reads only the precision line, to pick the scalar type before loading.
pub fn peek_precision(text: &str) -> Result<Precision> {
    text.lines()
        .find_map(|l| l.strip_prefix("precision "))
        .ok_or_else(|| Error::Checkpoint("missing precision".into()))
        .and_then(|p| Precision::parse(p.trim()).map_err(|e| Error::Checkpoint(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadInit;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            d_ffn: 16,
            d_pointer: 8,
            d_fr: 4,
            d_ft: 6,
            num_sources: 2,
            t_max: 5,
            dropout: 0.0,
        }
    }

    fn model<T: Scalar>() -> Model<T> {
        Model::new(tiny(), Vocabulary::new(["a", "b"]), VectorProvider::hash(6), 3, HeadInit::Random).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model::<f64>();
        let text = to_text(&m, None);
        let back = from_text::<f64>(&text).unwrap();
        assert_eq!(back.model.params, m.params);
        assert_eq!(to_text(&back.model, None), text);
        assert!(back.state.is_none());

        let m32 = model::<f32>();
        let t32 = to_text(&m32, None);
        assert_eq!(from_text::<f32>(&t32).unwrap().model.params, m32.params);
        assert!(from_text::<f64>(&t32).is_err());
        assert_eq!(peek_precision(&t32).unwrap(), Precision::F32);
    }

    #[test]
    fn round_trip_with_state() {
        let m = model::<f64>();
        let mut state = TrainState::new(&m);
        state.optimizer.step = 4;
        state.optimizer.m.heads.b_voc.fill(0.125);
        state.epoch = 2;
        state.loss_history = vec![0.7, 0.1 + 0.2];
        let back = from_text::<f64>(&to_text(&m, Some(&state))).unwrap();
        assert_eq!(back.state.unwrap(), state);
    }

    #[test]
    fn table_provider_round_trip() {
        let mut m = model::<f64>();
        m.provider = VectorProvider::parse_table("hello 1 2 3 4 5 6\nworld 0.5 0 0 0 0 -1\n", 6).unwrap();
        let back = from_text::<f64>(&to_text(&m, None)).unwrap();
        assert_eq!(back.model.provider, m.provider);
    }

    #[test]
    fn rejects_corruption() {
        assert!(from_text::<f64>("garbage").is_err());
        let text = to_text(&model::<f64>(), None);
        assert!(from_text::<f64>(&text.replace("stcap-checkpoint 1", "stcap-checkpoint 9")).is_err());
        assert!(from_text::<f64>(&text.replace("\nend\n", "\n")).is_err());
        let cut: String = text.lines().filter(|l| !l.starts_with("tensor heads.b_voc")).collect::<Vec<_>>().join("\n");
        assert!(from_text::<f64>(&cut).is_err());
    }
}
