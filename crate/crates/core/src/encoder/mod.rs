//! Sentence encoder: a small pre-norm transformer with CLS pooling, plus
//! ingestion of externally computed sentence embeddings.

mod embeddings;

use serde::{Deserialize, Serialize};

pub use embeddings::{load_precomputed_embeddings, write_embeddings, EmbeddingsError, EMBEDDINGS_MAGIC};

use crate::corpus::{Document, CLS_ID, MAX_LEN};
use crate::nn::{Activation, Graph, ParamId, ParamStore, Rng, Scalar, ShapeError, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_model: 64, n_layers: 2, n_heads: 4, ffn_mult: 4, vocab_size: 32768, max_len: MAX_LEN }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_mult == 0 || self.max_len == 0 {
            return Err("encoder dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size < 4 {
            return Err(format!("vocab_size {} leaves no room beyond the reserved ids", self.vocab_size));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sentence {index} of document {doc} has no tokens")]
    NotTokenized { doc: String, index: usize },
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Whether sentence vectors came from the internal encoder or a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Internal,
    Precomputed,
}

/// `n × d` sentence vectors of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Tensor<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderLayer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Parameter handles of the encoder inside a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    tok_emb: ParamId,
    layers: Vec<EncoderLayer>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, d], |idx| {
        let (pos, i) = (idx / d, idx % d);
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

impl Encoder {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, config: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = config.d_model;
        let f = d * config.ffn_mult;
        let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let tok_emb = store.add("enc.tok_emb", Tensor::normal(&[config.vocab_size, d], 1.0, rng));
        let layers = (0..config.n_layers)
            .map(|l| {
                let mut add = |name: &str, t: Tensor<T>| store.add(format!("enc.{l}.{name}"), t);
                EncoderLayer {
                    ln1_g: add("ln1_g", Tensor::full(&[d], T::one())),
                    ln1_b: add("ln1_b", Tensor::zeros(&[d])),
                    wq: add("wq", Tensor::uniform(&[d, d], lin(d), rng)),
                    bq: add("bq", Tensor::zeros(&[d])),
                    wk: add("wk", Tensor::uniform(&[d, d], lin(d), rng)),
                    bk: add("bk", Tensor::zeros(&[d])),
                    wv: add("wv", Tensor::uniform(&[d, d], lin(d), rng)),
                    bv: add("bv", Tensor::zeros(&[d])),
                    wo: add("wo", Tensor::uniform(&[d, d], lin(d), rng)),
                    bo: add("bo", Tensor::zeros(&[d])),
                    ln2_g: add("ln2_g", Tensor::full(&[d], T::one())),
                    ln2_b: add("ln2_b", Tensor::zeros(&[d])),
                    w1: add("w1", Tensor::uniform(&[d, f], lin(d), rng)),
                    b1: add("b1", Tensor::zeros(&[f])),
                    w2: add("w2", Tensor::uniform(&[f, d], lin(f), rng)),
                    b2: add("b2", Tensor::zeros(&[d])),
                }
            })
            .collect();
        let lnf_g = store.add("enc.lnf_g", Tensor::full(&[d], T::one()));
        let lnf_b = store.add("enc.lnf_b", Tensor::zeros(&[d]));
        Self { config: config.clone(), tok_emb, layers, lnf_g, lnf_b }
    }

    /// Every parameter owned by the encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok_emb];
        for l in &self.layers {
            ids.extend([
                l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1,
                l.w2, l.b2,
            ]);
        }
        ids.extend([self.lnf_g, self.lnf_b]);
        ids
    }

    fn token_ids(&self, tokens: &[u32]) -> Result<Vec<usize>, EncoderError> {
        if tokens.len() > self.config.max_len {
            return Err(EncoderError::TooLong { len: tokens.len(), max: self.config.max_len });
        }
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        ids.push(CLS_ID as usize);
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(EncoderError::TokenOutOfRange { id: t, vocab: self.config.vocab_size });
            }
            ids.push(t as usize);
        }
        Ok(ids)
    }

    fn forward_tokens<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[u32],
        mut attn: Option<&mut Vec<Var>>,
    ) -> Result<Var, EncoderError> {
        let ids = self.token_ids(tokens)?;
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let table = g.param(self.tok_emb);
        let emb = g.gather_rows(table, &ids)?;
        let pe = g.input(positional_encoding(ids.len(), d));
        let mut x = g.add(emb, pe)?;

        for l in &self.layers {
            let [ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2] = [
                l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1,
                l.w2, l.b2,
            ]
            .map(|id| g.param(id));

            let a = g.layer_norm(x, ln1_g, ln1_b)?;
            let q = g.matmul(a, wq)?;
            let q = g.add_row(q, bq)?;
            let k = g.matmul(a, wk)?;
            let k = g.add_row(k, bk)?;
            let v = g.matmul(a, wv)?;
            let v = g.add_row(v, bv)?;
            let mut head_out = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
                let p = g.softmax(scores);
                if let Some(maps) = attn.as_deref_mut() {
                    maps.push(p);
                }
                head_out.push(g.matmul(p, vh)?);
            }
            let cat = g.concat_cols(&head_out)?;
            let o = g.matmul(cat, wo)?;
            let o = g.add_row(o, bo)?;
            x = g.add(x, o)?;

            let b = g.layer_norm(x, ln2_g, ln2_b)?;
            let f = g.matmul(b, w1)?;
            let f = g.add_row(f, b1)?;
            let f = g.activation(f, Activation::Gelu);
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, b2)?;
            x = g.add(x, f)?;
        }
        let (lnf_g, lnf_b) = (g.param(self.lnf_g), g.param(self.lnf_b));
        let out = g.layer_norm(x, lnf_g, lnf_b)?;
        Ok(g.slice_rows(out, 0, 1)?)
    }

    /// `1 × d` CLS output for one token sequence.
    pub fn encode_sentence<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[u32]) -> Result<Var, EncoderError> {
        self.forward_tokens(g, tokens, None)
    }

    /// `n × d`: each sentence encoded independently, rows in sentence order.
    pub fn encode_document<T: Scalar>(&self, g: &mut Graph<'_, T>, document: &Document) -> Result<Var, EncoderError> {
        let mut rows = Vec::with_capacity(document.len());
        for (index, s) in document.sentences.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(EncoderError::NotTokenized { doc: document.id.clone(), index });
            }
            rows.push(self.encode_sentence(g, &s.tokens.ids)?);
        }
        Ok(g.concat_rows(&rows)?)
    }

    /// Attention probabilities of every layer and head, in that order.
    pub fn attention_maps<T: Scalar>(&self, store: &ParamStore<T>, tokens: &[u32]) -> Result<Vec<Tensor<T>>, EncoderError> {
        let mut g = Graph::new(store);
        let mut maps = Vec::new();
        self.forward_tokens(&mut g, tokens, Some(&mut maps))?;
        Ok(maps.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Inference-time sentence vectors for a whole document.
    pub fn embed_document(&self, store: &ParamStore<f32>, document: &Document) -> Result<EmbeddingMatrix, EncoderError> {
        let mut g = Graph::new(store);
        let h = self.encode_document(&mut g, document)?;
        Ok(EmbeddingMatrix { rows: g.value(h).clone(), provenance: Provenance::Internal })
    }
}
