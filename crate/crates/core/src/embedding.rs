//! Input embeddings: special tokens (text, box and source branches, each
//! layer-normalized and summed), object regions, and decoder inputs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{linear, linear_backward, LayerNormCache, LayerNormParams, Matrix};
use crate::scalar::Scalar;
use crate::tokens::{phoc_encode, word_vector, ObjectRegion, SpecialToken, VectorProvider, WordChoice, PHOC_DIM};

pub const LN_EPS: f64 = 1e-5;

/// Sizes that fix every embedding tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub d_model: usize,
    pub d_fr: usize,
    pub d_ft: usize,
    pub num_sources: usize,
    pub vocab_size: usize,
    pub t_max: usize,
}

impl EmbeddingDims {
    pub fn text_input(&self) -> usize {
        self.d_fr + self.d_ft + PHOC_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWeights<T> {
    /// `d x (d_fr + d_ft + 604)` over `[visual; word vector; phoc]`.
    pub text_proj: Matrix<T>,
    pub box_proj: Matrix<T>,
    pub source_proj: Matrix<T>,
    pub ln_text: LayerNormParams<T>,
    pub ln_box: LayerNormParams<T>,
    pub ln_source: LayerNormParams<T>,
    pub obj_proj: Matrix<T>,
    pub obj_box_proj: Matrix<T>,
    pub ln_obj: LayerNormParams<T>,
    pub ln_obj_box: LayerNormParams<T>,
    pub vocab_table: Matrix<T>,
    pub step_table: Matrix<T>,
}

impl<T: Scalar> EmbeddingWeights<T> {
    /// All projections and tables zero, layer norms with unit gain and zero bias.
    pub fn zeros(dims: EmbeddingDims) -> Self {
        let d = dims.d_model;
        Self {
            text_proj: Matrix::zeros(d, dims.text_input()),
            box_proj: Matrix::zeros(d, 4),
            source_proj: Matrix::zeros(d, dims.num_sources),
            ln_text: LayerNormParams::identity(d),
            ln_box: LayerNormParams::identity(d),
            ln_source: LayerNormParams::identity(d),
            obj_proj: Matrix::zeros(d, dims.d_fr),
            obj_box_proj: Matrix::zeros(d, 4),
            ln_obj: LayerNormParams::identity(d),
            ln_obj_box: LayerNormParams::identity(d),
            vocab_table: Matrix::zeros(dims.vocab_size, d),
            step_table: Matrix::zeros(dims.t_max, d),
        }
    }

    pub fn random<R: Rng>(dims: EmbeddingDims, rng: &mut R) -> Self {
        let mut w = Self::zeros(dims);
        let d = dims.d_model;
        fill_normal(&mut w.text_proj, (1.0 / dims.text_input() as f64).sqrt(), rng);
        fill_normal(&mut w.box_proj, 0.5, rng);
        fill_normal(&mut w.source_proj, 1.0, rng);
        fill_normal(&mut w.obj_proj, (1.0 / dims.d_fr.max(1) as f64).sqrt(), rng);
        fill_normal(&mut w.obj_box_proj, 0.5, rng);
        fill_normal(&mut w.vocab_table, 1.0, rng);
        fill_normal(&mut w.step_table, 0.5, rng);
        debug_assert_eq!(w.vocab_table.cols(), d);
        w
    }

    pub fn dims(&self) -> EmbeddingDims {
        EmbeddingDims {
            d_model: self.text_proj.rows(),
            d_fr: self.obj_proj.cols(),
            d_ft: self.text_proj.cols() - self.obj_proj.cols() - PHOC_DIM,
            num_sources: self.source_proj.cols(),
            vocab_size: self.vocab_table.rows(),
            t_max: self.step_table.rows(),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Matrix<T>)> {
        vec![
            ("text_proj", &self.text_proj),
            ("box_proj", &self.box_proj),
            ("source_proj", &self.source_proj),
            ("ln_text.gain", &self.ln_text.gain),
            ("ln_text.bias", &self.ln_text.bias),
            ("ln_box.gain", &self.ln_box.gain),
            ("ln_box.bias", &self.ln_box.bias),
            ("ln_source.gain", &self.ln_source.gain),
            ("ln_source.bias", &self.ln_source.bias),
            ("obj_proj", &self.obj_proj),
            ("obj_box_proj", &self.obj_box_proj),
            ("ln_obj.gain", &self.ln_obj.gain),
            ("ln_obj.bias", &self.ln_obj.bias),
            ("ln_obj_box.gain", &self.ln_obj_box.gain),
            ("ln_obj_box.bias", &self.ln_obj_box.bias),
            ("vocab_table", &self.vocab_table),
            ("step_table", &self.step_table),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        vec![
            ("text_proj", &mut self.text_proj),
            ("box_proj", &mut self.box_proj),
            ("source_proj", &mut self.source_proj),
            ("ln_text.gain", &mut self.ln_text.gain),
            ("ln_text.bias", &mut self.ln_text.bias),
            ("ln_box.gain", &mut self.ln_box.gain),
            ("ln_box.bias", &mut self.ln_box.bias),
            ("ln_source.gain", &mut self.ln_source.gain),
            ("ln_source.bias", &mut self.ln_source.bias),
            ("obj_proj", &mut self.obj_proj),
            ("obj_box_proj", &mut self.obj_box_proj),
            ("ln_obj.gain", &mut self.ln_obj.gain),
            ("ln_obj.bias", &mut self.ln_obj.bias),
            ("ln_obj_box.gain", &mut self.ln_obj_box.gain),
            ("ln_obj_box.bias", &mut self.ln_obj_box.bias),
            ("vocab_table", &mut self.vocab_table),
            ("step_table", &mut self.step_table),
        ]
    }
}

pub(crate) fn fill_normal<T: Scalar, R: Rng>(m: &mut Matrix<T>, std: f64, rng: &mut R) {
    for x in m.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *x = T::lit(z * std);
    }
}

/// One-hot source indicator of length `num_sources`.
pub fn source_one_hot<T: Scalar>(source: usize, num_sources: usize) -> Result<Vec<T>> {
    if source >= num_sources {
        return Err(Error::IndexOutOfRange {
            context: "source one-hot",
            index: source,
            len: num_sources,
        });
    }
    let mut v = vec![T::zero(); num_sources];
    v[source] = T::one();
    Ok(v)
}

/// Fixed (non-learned) inputs of a sample's special tokens.
#[derive(Debug, Clone)]
pub struct TokenBatch<T> {
    /// `[visual; word vector; phoc]` per row.
    pub text_input: Matrix<T>,
    pub boxes: Matrix<T>,
    pub sources: Matrix<T>,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn prepare(tokens: &[SpecialToken], provider: &VectorProvider, dims: EmbeddingDims) -> Result<Self> {
        if provider.dim() != dims.d_ft {
            return Err(Error::dim("word vector provider", dims.d_ft, provider.dim()));
        }
        let n = tokens.len();
        let mut text_input = Matrix::zeros(n, dims.text_input());
        let mut boxes = Matrix::zeros(n, 4);
        let mut sources = Matrix::zeros(n, dims.num_sources);
        for (i, tok) in tokens.iter().enumerate() {
            tok.validate(dims.num_sources)?;
            if tok.visual_feature.len() != dims.d_fr {
                return Err(Error::dim("special token visual feature", dims.d_fr, tok.visual_feature.len()));
            }
            let row = text_input.row_mut(i);
            let (vis, rest) = row.split_at_mut(dims.d_fr);
            let (ft, ph) = rest.split_at_mut(dims.d_ft);
            for (dst, &src) in vis.iter_mut().zip(&tok.visual_feature) {
                *dst = T::lit(src);
            }
            for (dst, src) in ft.iter_mut().zip(word_vector(&tok.text, provider)) {
                *dst = T::lit(src);
            }
            for (dst, bit) in ph.iter_mut().zip(phoc_encode(&tok.text)?) {
                *dst = T::lit(f64::from(bit));
            }
            for (dst, &src) in boxes.row_mut(i).iter_mut().zip(&tok.bbox.0) {
                *dst = T::lit(src);
            }
            sources.set(i, tok.source.0, T::one());
        }
        Ok(Self {
            text_input,
            boxes,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.text_input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed inputs of a sample's object regions.
#[derive(Debug, Clone)]
pub struct ObjectBatch<T> {
    pub feats: Matrix<T>,
    pub boxes: Matrix<T>,
}

impl<T: Scalar> ObjectBatch<T> {
    pub fn prepare(regions: &[ObjectRegion], dims: EmbeddingDims) -> Result<Self> {
        let mut feats = Matrix::zeros(regions.len(), dims.d_fr);
        let mut boxes = Matrix::zeros(regions.len(), 4);
        for (i, r) in regions.iter().enumerate() {
            r.bbox.validate()?;
            if r.visual_feature.len() != dims.d_fr {
                return Err(Error::dim("object visual feature", dims.d_fr, r.visual_feature.len()));
            }
            for (dst, &src) in feats.row_mut(i).iter_mut().zip(&r.visual_feature) {
                *dst = T::lit(src);
            }
            for (dst, &src) in boxes.row_mut(i).iter_mut().zip(&r.bbox.0) {
                *dst = T::lit(src);
            }
        }
        Ok(Self { feats, boxes })
    }

    pub fn len(&self) -> usize {
        self.feats.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct BranchCache<T> {
    pub pre_norm: Matrix<T>,
    ln: LayerNormCache<T>,
}

fn branch_forward<T: Scalar>(
    x: &Matrix<T>,
    proj: &Matrix<T>,
    ln: &LayerNormParams<T>,
) -> Result<(Matrix<T>, BranchCache<T>)> {
    let pre_norm = linear(x, proj, None)?;
    let (y, ln_cache) = ln.forward(&pre_norm, T::lit(LN_EPS))?;
    Ok((
        y,
        BranchCache {
            pre_norm,
            ln: ln_cache,
        },
    ))
}

fn branch_backward<T: Scalar>(
    x: &Matrix<T>,
    proj: &Matrix<T>,
    ln: &LayerNormParams<T>,
    cache: &BranchCache<T>,
    dy: &Matrix<T>,
    dproj: &mut Matrix<T>,
    dln: &mut LayerNormParams<T>,
) {
    let dpre = ln.backward(&cache.ln, dy, dln);
    linear_backward(x, proj, &dpre, dproj, None, false);
}

#[derive(Debug, Clone)]
pub struct TokenEmbedCache<T> {
    pub text: BranchCache<T>,
    pub bbox: BranchCache<T>,
    pub source: BranchCache<T>,
}

/// Special-token embeddings for a whole sample, `N x d`.
pub fn embed_tokens<T: Scalar>(
    batch: &TokenBatch<T>,
    w: &EmbeddingWeights<T>,
) -> Result<(Matrix<T>, TokenEmbedCache<T>)> {
    let d = w.text_proj.rows();
    if batch.is_empty() {
        let empty = || BranchCache {
            pre_norm: Matrix::zeros(0, d),
            ln: LayerNormParams::identity(d).forward(&Matrix::zeros(0, d), T::lit(LN_EPS)).unwrap().1,
        };
        return Ok((
            Matrix::zeros(0, d),
            TokenEmbedCache {
                text: empty(),
                bbox: empty(),
                source: empty(),
            },
        ));
    }
    let (mut out, text) = branch_forward(&batch.text_input, &w.text_proj, &w.ln_text)?;
    let (yb, bbox) = branch_forward(&batch.boxes, &w.box_proj, &w.ln_box)?;
    let (ys, source) = branch_forward(&batch.sources, &w.source_proj, &w.ln_source)?;
    out.add_assign(&yb);
    out.add_assign(&ys);
    Ok((out, TokenEmbedCache { text, bbox, source }))
}

pub fn embed_tokens_backward<T: Scalar>(
    batch: &TokenBatch<T>,
    w: &EmbeddingWeights<T>,
    cache: &TokenEmbedCache<T>,
    d_out: &Matrix<T>,
    grad: &mut EmbeddingWeights<T>,
) {
    if batch.is_empty() {
        return;
    }
    branch_backward(
        &batch.text_input,
        &w.text_proj,
        &w.ln_text,
        &cache.text,
        d_out,
        &mut grad.text_proj,
        &mut grad.ln_text,
    );
    branch_backward(&batch.boxes, &w.box_proj, &w.ln_box, &cache.bbox, d_out, &mut grad.box_proj, &mut grad.ln_box);
    branch_backward(
        &batch.sources,
        &w.source_proj,
        &w.ln_source,
        &cache.source,
        d_out,
        &mut grad.source_proj,
        &mut grad.ln_source,
    );
}

#[derive(Debug, Clone)]
pub struct ObjectEmbedCache<T> {
    pub feat: BranchCache<T>,
    pub bbox: BranchCache<T>,
}

/// Object-region embeddings, `M x d`.
pub fn embed_objects<T: Scalar>(
    batch: &ObjectBatch<T>,
    w: &EmbeddingWeights<T>,
) -> Result<(Matrix<T>, Option<ObjectEmbedCache<T>>)> {
    let d = w.obj_proj.rows();
    if batch.is_empty() {
        return Ok((Matrix::zeros(0, d), None));
    }
    let (mut out, feat) = branch_forward(&batch.feats, &w.obj_proj, &w.ln_obj)?;
    let (yb, bbox) = branch_forward(&batch.boxes, &w.obj_box_proj, &w.ln_obj_box)?;
    out.add_assign(&yb);
    Ok((out, Some(ObjectEmbedCache { feat, bbox })))
}

pub fn embed_objects_backward<T: Scalar>(
    batch: &ObjectBatch<T>,
    w: &EmbeddingWeights<T>,
    cache: Option<&ObjectEmbedCache<T>>,
    d_out: &Matrix<T>,
    grad: &mut EmbeddingWeights<T>,
) {
    let Some(cache) = cache else { return };
    branch_backward(&batch.feats, &w.obj_proj, &w.ln_obj, &cache.feat, d_out, &mut grad.obj_proj, &mut grad.ln_obj);
    branch_backward(
        &batch.boxes,
        &w.obj_box_proj,
        &w.ln_obj_box,
        &cache.bbox,
        d_out,
        &mut grad.obj_box_proj,
        &mut grad.ln_obj_box,
    );
}

/// Embedding of a single special token.
pub fn embed_special_token<T: Scalar>(
    token: &SpecialToken,
    provider: &VectorProvider,
    w: &EmbeddingWeights<T>,
) -> Result<Vec<T>> {
    let batch = TokenBatch::prepare(std::slice::from_ref(token), provider, w.dims())?;
    Ok(embed_tokens(&batch, w)?.0.row(0).to_vec())
}

/// Embedding of a single object region.
pub fn embed_object<T: Scalar>(region: &ObjectRegion, w: &EmbeddingWeights<T>) -> Result<Vec<T>> {
    let batch = ObjectBatch::prepare(std::slice::from_ref(region), w.dims())?;
    Ok(embed_objects(&batch, w)?.0.row(0).to_vec())
}

/// Pre-normalization branch activations `(W_obj·feat, W_objb·bbox)` of one region.
pub fn object_pre_norm<T: Scalar>(region: &ObjectRegion, w: &EmbeddingWeights<T>) -> Result<(Vec<T>, Vec<T>)> {
    let batch = ObjectBatch::prepare(std::slice::from_ref(region), w.dims())?;
    let (_, cache) = embed_objects(&batch, w)?;
    let cache = cache.expect("one region");
    Ok((cache.feat.pre_norm.row(0).to_vec(), cache.bbox.pre_norm.row(0).to_vec()))
}

/// Decoder input for the word chosen at the previous step.
///
/// Step 0 always feeds `<begin>` regardless of `choice`.
pub fn embed_prev_word<T: Scalar>(
    choice: WordChoice,
    step: usize,
    sample_tokens: &[SpecialToken],
    provider: &VectorProvider,
    w: &EmbeddingWeights<T>,
) -> Result<Vec<T>> {
    let t_max = w.step_table.rows();
    if step >= t_max {
        return Err(Error::IndexOutOfRange {
            context: "decoding step",
            index: step,
            len: t_max,
        });
    }
    let choice = if step == 0 {
        WordChoice::Vocab(crate::tokens::Vocabulary::BEGIN)
    } else {
        choice
    };
    let mut out = match choice {
        WordChoice::Vocab(i) => {
            if i >= w.vocab_table.rows() {
                return Err(Error::IndexOutOfRange {
                    context: "vocab choice",
                    index: i,
                    len: w.vocab_table.rows(),
                });
            }
            w.vocab_table.row(i).to_vec()
        }
        WordChoice::Pointer(j) => {
            let tok = sample_tokens.get(j).ok_or(Error::IndexOutOfRange {
                context: "pointer choice",
                index: j,
                len: sample_tokens.len(),
            })?;
            embed_special_token(tok, provider, w)?
        }
    };
    for (o, &s) in out.iter_mut().zip(w.step_table.row(step)) {
        *o += s;
    }
    Ok(out)
}

/// Decoder inputs for a whole choice sequence; pointer rows reuse `token_embeds`.
pub fn decoder_inputs<T: Scalar>(
    choices: &[WordChoice],
    token_embeds: &Matrix<T>,
    w: &EmbeddingWeights<T>,
) -> Result<Matrix<T>> {
    let d = w.vocab_table.cols();
    let t_max = w.step_table.rows();
    if choices.len() > t_max {
        return Err(Error::IndexOutOfRange {
            context: "decoding step",
            index: choices.len() - 1,
            len: t_max,
        });
    }
    let mut out = Matrix::zeros(choices.len(), d);
    for (t, &c) in choices.iter().enumerate() {
        let src = match c {
            WordChoice::Vocab(i) if i < w.vocab_table.rows() => w.vocab_table.row(i),
            WordChoice::Pointer(j) if j < token_embeds.rows() => token_embeds.row(j),
            WordChoice::Vocab(i) => {
                return Err(Error::IndexOutOfRange {
                    context: "vocab choice",
                    index: i,
                    len: w.vocab_table.rows(),
                })
            }
            WordChoice::Pointer(j) => {
                return Err(Error::IndexOutOfRange {
                    context: "pointer choice",
                    index: j,
                    len: token_embeds.rows(),
                })
            }
        };
        let row = out.row_mut(t);
        for ((o, &a), &s) in row.iter_mut().zip(src).zip(w.step_table.row(t)) {
            *o = a + s;
        }
    }
    Ok(out)
}

/// Backward of [`decoder_inputs`]; pointer-row gradients land in `d_token_embeds`.
pub fn decoder_inputs_backward<T: Scalar>(
    choices: &[WordChoice],
    d_dec: &Matrix<T>,
    grad: &mut EmbeddingWeights<T>,
    d_token_embeds: &mut Matrix<T>,
) {
    for (t, &c) in choices.iter().enumerate() {
        let g = d_dec.row(t);
        crate::linalg::axpy(T::one(), g, grad.step_table.row_mut(t));
        match c {
            WordChoice::Vocab(i) => crate::linalg::axpy(T::one(), g, grad.vocab_table.row_mut(i)),
            WordChoice::Pointer(j) => crate::linalg::axpy(T::one(), g, d_token_embeds.row_mut(j)),
        }
    }
}
