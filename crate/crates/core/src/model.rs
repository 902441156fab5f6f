//! The full captioner: configuration, parameter container, and the
//! teacher-forced forward/backward pass over one sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{score_steps, score_steps_backward, HeadCache, PointerHeads};
use crate::embedding::{
    decoder_inputs, decoder_inputs_backward, embed_objects, embed_objects_backward, embed_tokens,
    embed_tokens_backward, EmbeddingDims, EmbeddingWeights, ObjectBatch, ObjectEmbedCache, TokenBatch,
    TokenEmbedCache,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tokens::{ObjectRegion, SpecialToken, VectorProvider, Vocabulary, WordChoice};
use crate::transformer::{
    backward_sequence, build_attention_mask, forward_sequence, ForwardCache, TransformerConfig, TransformerParams,
};

/// Architecture sizes. The vocabulary size comes from the attached [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub d_pointer: usize,
    pub d_fr: usize,
    pub d_ft: usize,
    pub num_sources: usize,
    pub t_max: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 768,
            layers: 4,
            heads: 12,
            d_ffn: 3072,
            d_pointer: 768,
            d_fr: 2048,
            d_ft: 300,
            num_sources: 2,
            t_max: 30,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ffn: self.d_ffn,
            dropout: self.dropout,
        }
    }

    pub fn embedding_dims(&self, vocab_size: usize) -> EmbeddingDims {
        EmbeddingDims {
            d_model: self.d_model,
            d_fr: self.d_fr,
            d_ft: self.d_ft,
            num_sources: self.num_sources,
            vocab_size,
            t_max: self.t_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer().validate()?;
        let positive = [
            ("d_pointer", self.d_pointer),
            ("d_fr", self.d_fr),
            ("num_sources", self.num_sources),
            ("t_max", self.t_max),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::InvalidValue {
                    field: field.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

/// Every learned tensor. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: EmbeddingWeights<T>,
    pub transformer: TransformerParams<T>,
    pub heads: PointerHeads<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Same shapes as `self`, all entries zero (layer-norm gains included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.named_mut() {
            m.fill(T::zero());
        }
        z
    }

    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out: Vec<(String, &Matrix<T>)> = Vec::new();
        for (n, m) in self.embedding.named() {
            out.push((format!("embedding.{n}"), m));
        }
        for (i, l) in self.transformer.layers.iter().enumerate() {
            for (n, m) in l.named() {
                out.push((format!("transformer.layer{i}.{n}"), m));
            }
        }
        for (n, m) in self.heads.named() {
            out.push((format!("heads.{n}"), m));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out: Vec<(String, &mut Matrix<T>)> = Vec::new();
        for (n, m) in self.embedding.named_mut() {
            out.push((format!("embedding.{n}"), m));
        }
        for (i, l) in self.transformer.layers.iter_mut().enumerate() {
            for (n, m) in l.named_mut() {
                out.push((format!("transformer.layer{i}.{n}"), m));
            }
        }
        for (n, m) in self.heads.named_mut() {
            out.push((format!("heads.{n}"), m));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            crate::linalg::axpy(scale, b.as_slice(), a.as_mut_slice());
        }
    }
}

/// How the output heads start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    Random,
    /// Vocabulary head and the decoder-side pointer projection start at zero,
    /// so every initial score is exactly 0 while `w_st` stays random and the
    /// bilinear pointer term can still receive gradient.
    Zero,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub provider: VectorProvider,
    pub params: ModelParams<T>,
}

/// Fixed per-sample inputs, computed once and reused across epochs.
#[derive(Debug, Clone)]
pub struct EncodedSample<T> {
    pub objects: ObjectBatch<T>,
    pub tokens: TokenBatch<T>,
}

/// Saved activations of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct SampleCache<T> {
    obj_cache: Option<ObjectEmbedCache<T>>,
    tok_cache: TokenEmbedCache<T>,
    seq_cache: ForwardCache<T>,
    head_cache: HeadCache<T>,
    z_dec: Matrix<T>,
    z_st: Matrix<T>,
    objects: usize,
    tokens: usize,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab: Vocabulary, provider: VectorProvider, seed: u64, heads: HeadInit) -> Result<Self> {
        config.validate()?;
        if provider.dim() != config.d_ft {
            return Err(Error::dim("word vector provider", config.d_ft, provider.dim()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.embedding_dims(vocab.len());
        let embedding = EmbeddingWeights::random(dims, &mut rng);
        let transformer = TransformerParams::random(&config.transformer(), &mut rng);
        let mut heads_p = PointerHeads::random(config.d_model, config.d_pointer, vocab.len(), &mut rng);
        if heads == HeadInit::Zero {
            heads_p.w_voc.fill(T::zero());
            heads_p.b_voc.fill(T::zero());
            heads_p.w_dec.fill(T::zero());
            heads_p.b_dec.fill(T::zero());
        }
        Ok(Self {
            config,
            vocab,
            provider,
            params: ModelParams {
                embedding,
                transformer,
                heads: heads_p,
            },
        })
    }

    /// A model with every parameter zero except unit layer-norm gains.
    pub fn zeros(config: ModelConfig, vocab: Vocabulary, provider: VectorProvider) -> Result<Self> {
        config.validate()?;
        let dims = config.embedding_dims(vocab.len());
        let params = ModelParams {
            embedding: EmbeddingWeights::zeros(dims),
            transformer: TransformerParams::zeros(&config.transformer()),
            heads: PointerHeads::zeros(config.d_model, config.d_pointer, vocab.len()),
        };
        Ok(Self {
            config,
            vocab,
            provider,
            params,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn encode(&self, objects: &[ObjectRegion], tokens: &[SpecialToken]) -> Result<EncodedSample<T>> {
        let dims = self.config.embedding_dims(self.vocab.len());
        Ok(EncodedSample {
            objects: ObjectBatch::prepare(objects, dims)?,
            tokens: TokenBatch::prepare(tokens, &self.provider, dims)?,
        })
    }

    /// Special-token embeddings (`N x d`) as fed to the transformer.
    pub fn token_embeddings(&self, enc: &EncodedSample<T>) -> Result<Matrix<T>> {
        Ok(embed_tokens(&enc.tokens, &self.params.embedding)?.0)
    }

    /// Teacher-forced scores `T x (K + N)` for decoder inputs `inputs`.
    pub fn forward_teacher(
        &self,
        enc: &EncodedSample<T>,
        inputs: &[WordChoice],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix<T>, SampleCache<T>)> {
        let p = &self.params;
        let (obj, obj_cache) = embed_objects(&enc.objects, &p.embedding)?;
        let (st, tok_cache) = embed_tokens(&enc.tokens, &p.embedding)?;
        let dec = decoder_inputs(inputs, &st, &p.embedding)?;
        let (m, n, t) = (obj.rows(), st.rows(), dec.rows());
        let x = Matrix::vstack(&[&obj, &st, &dec])?;
        let mask = build_attention_mask(m, n, t);
        let (z, seq_cache) = forward_sequence(&x, &mask, &self.config.transformer(), &p.transformer, dropout_rng)?;
        let z_st = z.slice_rows(m, m + n);
        let z_dec = z.slice_rows(m + n, m + n + t);
        let (scores, head_cache) = score_steps(&z_dec, &z_st, &p.heads)?;
        Ok((
            scores,
            SampleCache {
                obj_cache,
                tok_cache,
                seq_cache,
                head_cache,
                z_dec,
                z_st,
                objects: m,
                tokens: n,
            },
        ))
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d scores`.
    pub fn backward_teacher(
        &self,
        enc: &EncodedSample<T>,
        inputs: &[WordChoice],
        cache: &SampleCache<T>,
        d_scores: &Matrix<T>,
        grad: &mut ModelParams<T>,
    ) {
        let p = &self.params;
        let (dz_dec, dz_st) =
            score_steps_backward(&cache.z_dec, &cache.z_st, &p.heads, &cache.head_cache, d_scores, &mut grad.heads);
        let (m, n) = (cache.objects, cache.tokens);
        let t = dz_dec.rows();
        let d = self.config.d_model;
        let mut dz = Matrix::zeros(m + n + t, d);
        for r in 0..n {
            dz.row_mut(m + r).copy_from_slice(dz_st.row(r));
        }
        for r in 0..t {
            dz.row_mut(m + n + r).copy_from_slice(dz_dec.row(r));
        }
        let dx = backward_sequence(&cache.seq_cache, &self.config.transformer(), &p.transformer, &dz, &mut grad.transformer);
        let d_obj = dx.slice_rows(0, m);
        let mut d_st = dx.slice_rows(m, m + n);
        let d_dec = dx.slice_rows(m + n, m + n + t);
        decoder_inputs_backward(inputs, &d_dec, &mut grad.embedding, &mut d_st);
        embed_tokens_backward(&enc.tokens, &p.embedding, &cache.tok_cache, &d_st, &mut grad.embedding);
        embed_objects_backward(&enc.objects, &p.embedding, cache.obj_cache.as_ref(), &d_obj, &mut grad.embedding);
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::zeros(self.config, self.vocab.clone(), self.provider.clone())
            .expect("config already validated");
        for ((_, dst), (_, src)) in out.params.named_mut().into_iter().zip(self.params.named()) {
            for (d, &s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }
}
