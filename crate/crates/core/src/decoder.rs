//! Per-step scoring over the fixed vocabulary and the sample's special
//! tokens, greedy word selection, and the auto-regressive caption loop.

use rand::Rng;

use crate::embedding::{decoder_inputs, embed_objects, embed_tokens, fill_normal};
use crate::error::{Error, Result};
use crate::linalg::{dot, linear, linear_backward, matvec, Matrix};
use crate::model::{EncodedSample, Model};
use crate::scalar::Scalar;
use crate::tokens::{ObjectRegion, SpecialToken, Vocabulary, WordChoice};
use crate::transformer::{build_attention_mask, forward_sequence};

/// Output heads: vocabulary logits and the bilinear pointer projections.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerHeads<T> {
    pub w_st: Matrix<T>,
    pub b_st: Matrix<T>,
    pub w_dec: Matrix<T>,
    pub b_dec: Matrix<T>,
    pub w_voc: Matrix<T>,
    pub b_voc: Matrix<T>,
}

impl<T: Scalar> PointerHeads<T> {
    pub fn zeros(d_model: usize, d_pointer: usize, vocab_size: usize) -> Self {
        Self {
            w_st: Matrix::zeros(d_pointer, d_model),
            b_st: Matrix::zeros(1, d_pointer),
            w_dec: Matrix::zeros(d_pointer, d_model),
            b_dec: Matrix::zeros(1, d_pointer),
            w_voc: Matrix::zeros(vocab_size, d_model),
            b_voc: Matrix::zeros(1, vocab_size),
        }
    }

    pub fn random<R: Rng>(d_model: usize, d_pointer: usize, vocab_size: usize, rng: &mut R) -> Self {
        let mut h = Self::zeros(d_model, d_pointer, vocab_size);
        let s = (1.0 / d_model as f64).sqrt();
        fill_normal(&mut h.w_st, s, rng);
        fill_normal(&mut h.w_dec, s, rng);
        fill_normal(&mut h.w_voc, s, rng);
        h
    }

    pub fn vocab_size(&self) -> usize {
        self.w_voc.rows()
    }

    pub fn named(&self) -> Vec<(&'static str, &Matrix<T>)> {
        vec![
            ("w_st", &self.w_st),
            ("b_st", &self.b_st),
            ("w_dec", &self.w_dec),
            ("b_dec", &self.b_dec),
            ("w_voc", &self.w_voc),
            ("b_voc", &self.b_voc),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        vec![
            ("w_st", &mut self.w_st),
            ("b_st", &mut self.b_st),
            ("w_dec", &mut self.w_dec),
            ("b_dec", &mut self.b_dec),
            ("w_voc", &mut self.w_voc),
            ("b_voc", &mut self.b_voc),
        ]
    }
}

/// Scores of one decoding step: `K` vocabulary entries then one per pointer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores<T> {
    pub values: Vec<T>,
    pub vocab_size: usize,
}

impl<T: Scalar> StepScores<T> {
    pub fn new(values: Vec<T>, vocab_size: usize) -> Result<Self> {
        if vocab_size > values.len() {
            return Err(Error::dim("step scores", vocab_size, values.len()));
        }
        Ok(Self { values, vocab_size })
    }

    pub fn vocab(&self) -> &[T] {
        &self.values[..self.vocab_size]
    }

    pub fn pointers(&self) -> &[T] {
        &self.values[self.vocab_size..]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Scores for one decoder state against the sample's `N'` decoded tokens,
/// padded with `-inf` up to `pointer_slots` entries.
pub fn score_step<T: Scalar>(
    z_dec_t: &[T],
    z_st: &Matrix<T>,
    heads: &PointerHeads<T>,
    pointer_slots: usize,
) -> Result<StepScores<T>> {
    let d = heads.w_voc.cols();
    if z_dec_t.len() != d {
        return Err(Error::dim("score_step decoder state", d, z_dec_t.len()));
    }
    if z_st.rows() > 0 && z_st.cols() != d {
        return Err(Error::dim("score_step token states", d, z_st.cols()));
    }
    if pointer_slots < z_st.rows() {
        return Err(Error::dim("score_step pointer slots", z_st.rows(), pointer_slots));
    }
    let mut values = matvec(&heads.w_voc, z_dec_t, Some(heads.b_voc.as_slice()))?;
    let dec_proj = matvec(&heads.w_dec, z_dec_t, Some(heads.b_dec.as_slice()))?;
    for n in 0..z_st.rows() {
        let st_proj = matvec(&heads.w_st, z_st.row(n), Some(heads.b_st.as_slice()))?;
        values.push(dot(&st_proj, &dec_proj));
    }
    values.resize(heads.vocab_size() + pointer_slots, T::neg_infinity());
    StepScores::new(values, heads.vocab_size())
}

/// Global argmax; ties go to the lowest index, so vocabulary beats pointers.
pub fn select_word<T: Scalar>(scores: &StepScores<T>) -> WordChoice {
    let mut best = 0;
    for (i, &v) in scores.values.iter().enumerate().skip(1) {
        if v > scores.values[best] {
            best = i;
        }
    }
    if best < scores.vocab_size {
        WordChoice::Vocab(best)
    } else {
        WordChoice::Pointer(best - scores.vocab_size)
    }
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    st_proj: Matrix<T>,
    dec_proj: Matrix<T>,
}

/// Scores for every decoder row at once: `T x (K + N)`.
pub fn score_steps<T: Scalar>(
    z_dec: &Matrix<T>,
    z_st: &Matrix<T>,
    heads: &PointerHeads<T>,
) -> Result<(Matrix<T>, HeadCache<T>)> {
    let k = heads.vocab_size();
    let n = z_st.rows();
    let voc = linear(z_dec, &heads.w_voc, Some(&heads.b_voc))?;
    let dec_proj = linear(z_dec, &heads.w_dec, Some(&heads.b_dec))?;
    let st_proj = if n > 0 {
        linear(z_st, &heads.w_st, Some(&heads.b_st))?
    } else {
        Matrix::zeros(0, heads.w_st.rows())
    };
    let mut out = Matrix::zeros(z_dec.rows(), k + n);
    for t in 0..z_dec.rows() {
        let row = out.row_mut(t);
        row[..k].copy_from_slice(voc.row(t));
        for j in 0..n {
            row[k + j] = dot(st_proj.row(j), dec_proj.row(t));
        }
    }
    Ok((out, HeadCache { st_proj, dec_proj }))
}

/// Backward of [`score_steps`]; returns `(dZ_dec, dZ_st)`.
pub fn score_steps_backward<T: Scalar>(
    z_dec: &Matrix<T>,
    z_st: &Matrix<T>,
    heads: &PointerHeads<T>,
    cache: &HeadCache<T>,
    d_scores: &Matrix<T>,
    grad: &mut PointerHeads<T>,
) -> (Matrix<T>, Matrix<T>) {
    let k = heads.vocab_size();
    let n = z_st.rows();
    let steps = z_dec.rows();
    let dp = heads.w_st.rows();
    let mut d_voc = Matrix::zeros(steps, k);
    let mut d_dec_proj = Matrix::zeros(steps, dp);
    let mut d_st_proj = Matrix::zeros(n, dp);
    for t in 0..steps {
        let g = d_scores.row(t);
        d_voc.row_mut(t).copy_from_slice(&g[..k]);
        for j in 0..n {
            let gj = g[k + j];
            if gj != T::zero() {
                crate::linalg::axpy(gj, cache.st_proj.row(j), d_dec_proj.row_mut(t));
                crate::linalg::axpy(gj, cache.dec_proj.row(t), d_st_proj.row_mut(j));
            }
        }
    }
    let mut dz_dec =
        linear_backward(z_dec, &heads.w_voc, &d_voc, &mut grad.w_voc, Some(&mut grad.b_voc), true).unwrap();
    dz_dec.add_assign(
        &linear_backward(z_dec, &heads.w_dec, &d_dec_proj, &mut grad.w_dec, Some(&mut grad.b_dec), true).unwrap(),
    );
    let dz_st = if n > 0 {
        linear_backward(z_st, &heads.w_st, &d_st_proj, &mut grad.w_st, Some(&mut grad.b_st), true).unwrap()
    } else {
        Matrix::zeros(0, z_st.cols())
    };
    (dz_dec, dz_st)
}

/// Result of greedy decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation<T> {
    pub choices: Vec<WordChoice>,
    pub scores: Vec<StepScores<T>>,
    /// Emitted steps, including `<end>` when it was produced.
    pub t_end: usize,
    pub text: String,
}

/// Renders choices as text: vocabulary words, and copied tokens in their original spelling.
pub fn render_choices(choices: &[WordChoice], vocab: &Vocabulary, tokens: &[SpecialToken]) -> String {
    let mut words: Vec<&str> = Vec::new();
    for &c in choices {
        match c {
            WordChoice::Vocab(Vocabulary::END) => break,
            WordChoice::Vocab(i) => words.push(vocab.word(i).unwrap_or("<unk>")),
            WordChoice::Pointer(j) => words.push(tokens.get(j).map_or("<unk>", |t| t.text.as_str())),
        }
    }
    words.join(" ")
}

/// Greedy caption for one sample with at most `t_max` steps.
pub fn generate_caption<T: Scalar>(
    objects: &[ObjectRegion],
    tokens: &[SpecialToken],
    model: &Model<T>,
    t_max: usize,
) -> Result<Generation<T>> {
    let enc = model.encode(objects, tokens)?;
    generate_encoded(&enc, tokens, model, t_max)
}

pub fn generate_encoded<T: Scalar>(
    enc: &EncodedSample<T>,
    tokens: &[SpecialToken],
    model: &Model<T>,
    t_max: usize,
) -> Result<Generation<T>> {
    let p = &model.params;
    let t_max = t_max.min(p.embedding.step_table.rows());
    let (obj, _) = embed_objects(&enc.objects, &p.embedding)?;
    let (st, _) = embed_tokens(&enc.tokens, &p.embedding)?;
    let (m, n) = (obj.rows(), st.rows());
    let tcfg = model.config.transformer();

    let mut choices: Vec<WordChoice> = Vec::new();
    let mut scores = Vec::new();
    let mut inputs = vec![WordChoice::Vocab(Vocabulary::BEGIN)];
    for step in 0..t_max {
        let dec = decoder_inputs(&inputs, &st, &p.embedding)?;
        let x = Matrix::vstack(&[&obj, &st, &dec])?;
        let mask = build_attention_mask(m, n, dec.rows());
        let (z, _) = forward_sequence(&x, &mask, &tcfg, &p.transformer, None)?;
        let z_st = z.slice_rows(m, m + n);
        let s = score_step(z.row(m + n + step), &z_st, &p.heads, n)?;
        let choice = select_word(&s);
        choices.push(choice);
        scores.push(s);
        if choice == WordChoice::Vocab(Vocabulary::END) {
            break;
        }
        inputs.push(choice);
    }
    let text = render_choices(&choices, &model.vocab, tokens);
    Ok(Generation {
        t_end: choices.len(),
        choices,
        scores,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> Matrix<f64> {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[test]
    fn identity_pointer_score() {
        let mut h = PointerHeads::<f64>::zeros(2, 2, 3);
        h.w_st = eye(2);
        h.w_dec = eye(2);
        let z_st = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let s = score_step(&[0.5, 2.0], &z_st, &h, 1).unwrap();
        assert_eq!(s.pointers(), &[0.5]);
        assert_eq!(s.vocab(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_decoder_state_gives_zero_pointers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = PointerHeads::<f64>::random(4, 3, 5, &mut rng);
        let mut z = Matrix::zeros(3, 4);
        fill_normal(&mut z, 1.0, &mut rng);
        let s = score_step(&[0.0; 4], &z, &h, 3).unwrap();
        assert!(s.pointers().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_straight_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut h = PointerHeads::<f64>::random(4, 3, 5, &mut rng);
        fill_normal(&mut h.b_st, 0.3, &mut rng);
        fill_normal(&mut h.b_dec, 0.3, &mut rng);
        fill_normal(&mut h.b_voc, 0.3, &mut rng);
        let mut z_st = Matrix::zeros(2, 4);
        fill_normal(&mut z_st, 1.0, &mut rng);
        let z_dec = [0.3, -1.2, 0.8, 0.1];
        let s = score_step(&z_dec, &z_st, &h, 2).unwrap();
        for kk in 0..5 {
            let mut v = h.b_voc.get(0, kk);
            for i in 0..4 {
                v += h.w_voc.get(kk, i) * z_dec[i];
            }
            assert!((s.values[kk] - v).abs() < 1e-12);
        }
        for n in 0..2 {
            let mut y = 0.0;
            for p in 0..3 {
                let mut a = h.b_st.get(0, p);
                let mut b = h.b_dec.get(0, p);
                for i in 0..4 {
                    a += h.w_st.get(p, i) * z_st.get(n, i);
                    b += h.w_dec.get(p, i) * z_dec[i];
                }
                y += a * b;
            }
            assert!((s.values[5 + n] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_slots_are_masked() {
        let h = PointerHeads::<f64>::zeros(2, 2, 2);
        let z = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let s = score_step(&[1.0, 1.0], &z, &h, 4).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.pointers()[1..].iter().all(|v| *v == f64::NEG_INFINITY));
        assert!(score_step(&[1.0, 1.0], &z, &h, 0).is_err());
        assert!(score_step(&[1.0], &z, &h, 1).is_err());
    }

    #[test]
    fn select_word_cases() {
        let s = StepScores::new(vec![0.1, 0.2, 0.9], 2).unwrap();
        assert_eq!(select_word(&s), WordChoice::Pointer(0));
        let tie = StepScores::new(vec![0.1, 0.9, 0.9], 2).unwrap();
        assert_eq!(select_word(&tie), WordChoice::Vocab(1));
        let shifted = StepScores::new(s.values.iter().map(|v| v + 100.0).collect(), 2).unwrap();
        assert_eq!(select_word(&shifted), select_word(&s));
    }

    #[test]
    fn render_uses_original_token_text() {
        let vocab = Vocabulary::new(["holds", "a", "sign"]);
        let toks = vec![SpecialToken::new(
            "Bernie Sanders",
            crate::tokens::SourceId::FACE,
            crate::tokens::BBox([0.0, 0.0, 0.5, 0.5]),
            vec![],
        )];
        let c = [
            WordChoice::Pointer(0),
            WordChoice::Vocab(4),
            WordChoice::Vocab(5),
            WordChoice::Vocab(6),
            WordChoice::Vocab(Vocabulary::END),
        ];
        assert_eq!(render_choices(&c, &vocab, &toks), "Bernie Sanders holds a sign");
    }
}
