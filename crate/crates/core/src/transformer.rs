//! Pre-norm multi-head self-attention stack run jointly over
//! `[objects; special tokens; decoder steps]` under a causal mask.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{fill_normal, LN_EPS};
use crate::error::{Error, Result};
use crate::linalg::{dot, gelu, gelu_grad, linear, linear_backward, LayerNormCache, LayerNormParams, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub dropout: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidValue {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.heads == 0 {
            return bad("heads", "must be positive");
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model", "must be positive and divisible by heads");
        }
        if self.d_ffn == 0 {
            return bad("d_ffn", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Which key positions each query position may attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.size + k]
    }
}

/// Objects and tokens see each other but no decoder step; decoder step `t`
/// sees every object/token and decoder steps `<= t`.
pub fn build_attention_mask(objects: usize, tokens: usize, steps: usize) -> AttentionMask {
    let ctx = objects + tokens;
    let size = ctx + steps;
    let mut allowed = vec![false; size * size];
    for q in 0..size {
        for k in 0..size {
            allowed[q * size + k] = if q < ctx { k < ctx } else { k < ctx || k <= q };
        }
    }
    AttentionMask { size, allowed }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln_attn: LayerNormParams<T>,
    pub wq: Matrix<T>,
    pub bq: Matrix<T>,
    /// Keys carry no bias: it would add a per-query constant to every
    /// attention logit, which softmax ignores.
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub bv: Matrix<T>,
    pub wo: Matrix<T>,
    pub bo: Matrix<T>,
    pub ln_ffn: LayerNormParams<T>,
    pub w_ff1: Matrix<T>,
    pub b_ff1: Matrix<T>,
    pub w_ff2: Matrix<T>,
    pub b_ff2: Matrix<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(d: usize, d_ffn: usize) -> Self {
        Self {
            ln_attn: LayerNormParams::identity(d),
            wq: Matrix::zeros(d, d),
            bq: Matrix::zeros(1, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            bv: Matrix::zeros(1, d),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln_ffn: LayerNormParams::identity(d),
            w_ff1: Matrix::zeros(d_ffn, d),
            b_ff1: Matrix::zeros(1, d_ffn),
            w_ff2: Matrix::zeros(d, d_ffn),
            b_ff2: Matrix::zeros(1, d),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Matrix<T>)> {
        vec![
            ("ln_attn.gain", &self.ln_attn.gain),
            ("ln_attn.bias", &self.ln_attn.bias),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln_ffn.gain", &self.ln_ffn.gain),
            ("ln_ffn.bias", &self.ln_ffn.bias),
            ("w_ff1", &self.w_ff1),
            ("b_ff1", &self.b_ff1),
            ("w_ff2", &self.w_ff2),
            ("b_ff2", &self.b_ff2),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        vec![
            ("ln_attn.gain", &mut self.ln_attn.gain),
            ("ln_attn.bias", &mut self.ln_attn.bias),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln_ffn.gain", &mut self.ln_ffn.gain),
            ("ln_ffn.bias", &mut self.ln_ffn.bias),
            ("w_ff1", &mut self.w_ff1),
            ("b_ff1", &mut self.b_ff1),
            ("w_ff2", &mut self.w_ff2),
            ("b_ff2", &mut self.b_ff2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> TransformerParams<T> {
    pub fn zeros(cfg: &TransformerConfig) -> Self {
        Self {
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg.d_model, cfg.d_ffn)).collect(),
        }
    }

    pub fn random<R: Rng>(cfg: &TransformerConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let s_d = (1.0 / cfg.d_model as f64).sqrt();
        let s_f = (1.0 / cfg.d_ffn as f64).sqrt();
        for l in &mut p.layers {
            fill_normal(&mut l.wq, s_d, rng);
            fill_normal(&mut l.wk, s_d, rng);
            fill_normal(&mut l.wv, s_d, rng);
            fill_normal(&mut l.wo, s_d, rng);
            fill_normal(&mut l.w_ff1, s_d, rng);
            fill_normal(&mut l.w_ff2, s_f, rng);
        }
        p
    }
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    ln_attn: LayerNormCache<T>,
    h: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// One `n x n` probability matrix per head.
    probs: Vec<Matrix<T>>,
    attn: Matrix<T>,
    attn_keep: Option<Vec<T>>,
    ln_ffn: LayerNormCache<T>,
    h2: Matrix<T>,
    f1: Matrix<T>,
    g: Matrix<T>,
    ffn_keep: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let scale = T::lit(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
        .collect()
}

/// Runs the stack over a concatenated sequence `x` (`n x d`).
///
/// `dropout_rng` enables dropout (training only); `None` is deterministic.
pub fn forward_sequence<T: Scalar>(
    x: &Matrix<T>,
    mask: &AttentionMask,
    cfg: &TransformerConfig,
    params: &TransformerParams<T>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    if x.cols() != cfg.d_model {
        return Err(Error::dim("transformer input width", cfg.d_model, x.cols()));
    }
    if mask.size() != x.rows() {
        return Err(Error::dim("attention mask size", x.rows(), mask.size()));
    }
    if params.layers.len() != cfg.layers {
        return Err(Error::dim("transformer layer count", cfg.layers, params.layers.len()));
    }
    let n = x.rows();
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let eps = T::lit(LN_EPS);
    let mut x = x.clone();
    let mut caches = Vec::with_capacity(params.layers.len());

    for lp in &params.layers {
        let (h, ln_attn) = lp.ln_attn.forward(&x, eps)?;
        let q = linear(&h, &lp.wq, Some(&lp.bq))?;
        let k = linear(&h, &lp.wk, None)?;
        let v = linear(&h, &lp.wv, Some(&lp.bv))?;
        let mut concat = Matrix::zeros(n, cfg.d_model);
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let mut p = Matrix::zeros(n, n);
            for qi in 0..n {
                let qrow = &q.row(qi)[cols.clone()];
                let mut max = T::neg_infinity();
                for ki in 0..n {
                    if mask.allows(qi, ki) {
                        let s = dot(qrow, &k.row(ki)[cols.clone()]) * scale;
                        p.set(qi, ki, s);
                        if s > max {
                            max = s;
                        }
                    }
                }
                let mut z = T::zero();
                for ki in 0..n {
                    if mask.allows(qi, ki) {
                        let e = (p.get(qi, ki) - max).exp();
                        p.set(qi, ki, e);
                        z += e;
                    } else {
                        p.set(qi, ki, T::zero());
                    }
                }
                for ki in 0..n {
                    p.set(qi, ki, p.get(qi, ki) / z);
                }
                let out = &mut concat.row_mut(qi)[cols.clone()];
                for ki in 0..n {
                    let a = p.get(qi, ki);
                    if a != T::zero() {
                        crate::linalg::axpy(a, &v.row(ki)[cols.clone()], out);
                    }
                }
            }
            probs.push(p);
        }
        let mut attn_out = linear(&concat, &lp.wo, Some(&lp.bo))?;
        let attn_keep = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => {
                let m = dropout_mask::<T>(attn_out.as_slice().len(), cfg.dropout, rng);
                attn_out.as_mut_slice().iter_mut().zip(&m).for_each(|(a, &k)| *a *= k);
                Some(m)
            }
            _ => None,
        };
        x.add_assign(&attn_out);

        let (h2, ln_ffn) = lp.ln_ffn.forward(&x, eps)?;
        let f1 = linear(&h2, &lp.w_ff1, Some(&lp.b_ff1))?;
        let g = f1.map(gelu);
        let mut f2 = linear(&g, &lp.w_ff2, Some(&lp.b_ff2))?;
        let ffn_keep = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => {
                let m = dropout_mask::<T>(f2.as_slice().len(), cfg.dropout, rng);
                f2.as_mut_slice().iter_mut().zip(&m).for_each(|(a, &k)| *a *= k);
                Some(m)
            }
            _ => None,
        };
        x.add_assign(&f2);

        caches.push(LayerCache {
            ln_attn,
            h,
            q,
            k,
            v,
            probs,
            attn: concat,
            attn_keep,
            ln_ffn,
            h2,
            f1,
            g,
            ffn_keep,
        });
    }
    Ok((x, ForwardCache { layers: caches }))
}

/// Backward of [`forward_sequence`]; accumulates into `grad` and returns `dX`.
pub fn backward_sequence<T: Scalar>(
    cache: &ForwardCache<T>,
    cfg: &TransformerConfig,
    params: &TransformerParams<T>,
    d_out: &Matrix<T>,
    grad: &mut TransformerParams<T>,
) -> Matrix<T> {
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dx = d_out.clone();
    let n = dx.rows();

    for ((lp, lc), lg) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grad.layers.iter_mut())
        .rev()
    {
        // Feed-forward branch.
        let mut df2 = dx.clone();
        if let Some(keep) = &lc.ffn_keep {
            df2.as_mut_slice().iter_mut().zip(keep).for_each(|(a, &k)| *a *= k);
        }
        let dg = linear_backward(&lc.g, &lp.w_ff2, &df2, &mut lg.w_ff2, Some(&mut lg.b_ff2), true).unwrap();
        let mut df1 = dg;
        for (d, &f) in df1.as_mut_slice().iter_mut().zip(lc.f1.as_slice()) {
            *d *= gelu_grad(f);
        }
        let dh2 = linear_backward(&lc.h2, &lp.w_ff1, &df1, &mut lg.w_ff1, Some(&mut lg.b_ff1), true).unwrap();
        let dx_ffn = lp.ln_ffn.backward(&lc.ln_ffn, &dh2, &mut lg.ln_ffn);
        dx.add_assign(&dx_ffn);

        // Attention branch.
        let mut dattn_out = dx.clone();
        if let Some(keep) = &lc.attn_keep {
            dattn_out.as_mut_slice().iter_mut().zip(keep).for_each(|(a, &k)| *a *= k);
        }
        let dconcat =
            linear_backward(&lc.attn, &lp.wo, &dattn_out, &mut lg.wo, Some(&mut lg.bo), true).unwrap();
        let mut dq = Matrix::zeros(n, cfg.d_model);
        let mut dk = Matrix::zeros(n, cfg.d_model);
        let mut dv = Matrix::zeros(n, cfg.d_model);
        let mut dp = vec![T::zero(); n];
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let p = &lc.probs[hd];
            for qi in 0..n {
                let dorow = &dconcat.row(qi)[cols.clone()];
                // dP = dO Vᵀ, dV += Pᵀ dO
                for ki in 0..n {
                    let a = p.get(qi, ki);
                    if a == T::zero() {
                        dp[ki] = T::zero();
                        continue;
                    }
                    dp[ki] = dot(dorow, &lc.v.row(ki)[cols.clone()]);
                    crate::linalg::axpy(a, dorow, &mut dv.row_mut(ki)[cols.clone()]);
                }
                let inner: T = (0..n).map(|ki| p.get(qi, ki) * dp[ki]).sum();
                for ki in 0..n {
                    let a = p.get(qi, ki);
                    if a == T::zero() {
                        continue;
                    }
                    let ds = a * (dp[ki] - inner) * scale;
                    let krow: Vec<T> = lc.k.row(ki)[cols.clone()].to_vec();
                    crate::linalg::axpy(ds, &krow, &mut dq.row_mut(qi)[cols.clone()]);
                    let qrow: Vec<T> = lc.q.row(qi)[cols.clone()].to_vec();
                    crate::linalg::axpy(ds, &qrow, &mut dk.row_mut(ki)[cols.clone()]);
                }
            }
        }
        let mut dh = linear_backward(&lc.h, &lp.wq, &dq, &mut lg.wq, Some(&mut lg.bq), true).unwrap();
        dh.add_assign(&linear_backward(&lc.h, &lp.wk, &dk, &mut lg.wk, None, true).unwrap());
        dh.add_assign(&linear_backward(&lc.h, &lp.wv, &dv, &mut lg.wv, Some(&mut lg.bv), true).unwrap());
        let dx_attn = lp.ln_attn.backward(&lc.ln_attn, &dh, &mut lg.ln_attn);
        dx.add_assign(&dx_attn);
    }
    dx
}

/// Output of the stack, split back by modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityOutputs<T> {
    pub objects: Matrix<T>,
    pub tokens: Matrix<T>,
    pub decoder: Matrix<T>,
}

/// Joint pass over objects (`M x d`), special tokens (`N x d`) and decoder inputs (`T x d`).
pub fn forward<T: Scalar>(
    obj_embeds: &Matrix<T>,
    st_embeds: &Matrix<T>,
    dec_embeds: &Matrix<T>,
    cfg: &TransformerConfig,
    params: &TransformerParams<T>,
) -> Result<ModalityOutputs<T>> {
    let (m, n, t) = (obj_embeds.rows(), st_embeds.rows(), dec_embeds.rows());
    for (rows, mat) in [(m, obj_embeds), (n, st_embeds), (t, dec_embeds)] {
        if rows > 0 && mat.cols() != cfg.d_model {
            return Err(Error::dim("transformer input width", cfg.d_model, mat.cols()));
        }
    }
    let x = Matrix::vstack(&[obj_embeds, st_embeds, dec_embeds])?;
    let x = if x.cols() == 0 { Matrix::zeros(0, cfg.d_model) } else { x };
    let mask = build_attention_mask(m, n, t);
    let (z, _) = forward_sequence(&x, &mask, cfg, params, None)?;
    Ok(ModalityOutputs {
        objects: z.slice_rows(0, m),
        tokens: z.slice_rows(m, m + n),
        decoder: z.slice_rows(m + n, m + n + t),
    })
}
