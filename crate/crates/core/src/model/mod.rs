//! Encoder, Mamba stack and sigmoid relevance head assembled into one
//! extractive model, with training, sentence selection and checkpoints.

mod checkpoint;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, EpochMetrics, TrainConfig, TrainOutcome};

use crate::corpus::Document;
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::nn::{grad_check, seeded_rng, Activation, Graph, OpKind, ParamId, ParamStore, Rng, Scalar, ShapeError, Tensor, Var};
use crate::ssm::{MambaStack, SsmConfig};

pub const HEAD_INIT_STD: f64 = 0.02;
pub const DEFAULT_K: usize = 3;
/// Step and pass threshold of the end-to-end gradient check.
pub const GRAD_CHECK_EPS: f64 = 1e-3;
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Sentence vectors supplied from outside, keyed by document id.
pub type EmbeddingTable = BTreeMap<String, Tensor<f32>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub ssm: SsmConfig,
    pub freeze_encoder: bool,
}

impl ModelConfig {
    /// Both halves sized to `d_model`.
    pub fn with_d_model(d_model: usize) -> Self {
        let mut cfg = Self::default();
        cfg.encoder.d_model = d_model;
        cfg.ssm.d_model = d_model;
        cfg
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate().map_err(ModelError::Config)?;
        self.ssm.validate().map_err(ModelError::Config)?;
        if self.encoder.d_model != self.ssm.d_model {
            return Err(ModelError::Config(format!(
                "encoder d_model {} differs from ssm d_model {}",
                self.encoder.d_model, self.ssm.d_model
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("document {id} has no labels")]
    Unlabeled { id: String },
    #[error("document {id} has no precomputed embeddings")]
    MissingEmbedding { id: String },
    #[error("document {id}: {found} embedding rows for {expected} sentences")]
    EmbeddingRows { id: String, expected: usize, found: usize },
    #[error("document {id} has no sentences")]
    EmptyDocument { id: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Arch {
    encoder: Encoder,
    ssm: MambaStack,
    head_w: ParamId,
    head_b: ParamId,
}

/// Model parameters at precision `T` plus the handles that address them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    arch: Arch,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::init(&mut params, &config.encoder, &mut rng);
        let ssm = MambaStack::init(&mut params, &config.ssm, &mut rng);
        let d = config.ssm.d_model;
        let head_w = params.add("head.w", Tensor::normal(&[d, 1], HEAD_INIT_STD, &mut rng));
        let head_b = params.add("head.b", Tensor::zeros(&[1]));
        let arch = Arch { encoder, ssm, head_w, head_b };
        let mut model = Self { config, params, arch };
        model.set_encoder_frozen(model.config.freeze_encoder);
        Ok(model)
    }

    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        self.config.freeze_encoder = frozen;
        for id in self.arch.encoder.param_ids() {
            self.params.set_frozen(id, frozen);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast(), arch: self.arch.clone() }
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.arch.head_w, self.arch.head_b)
    }

    pub fn ssm_stack(&self) -> &MambaStack {
        &self.arch.ssm
    }

    /// Sentence matrix `H`: from `embeddings` when given, else the encoder.
    pub fn sentence_matrix(
        &self,
        g: &mut Graph<'_, T>,
        document: &Document,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Var, ModelError> {
        if document.is_empty() {
            return Err(ModelError::EmptyDocument { id: document.id.clone() });
        }
        match embeddings {
            None => Ok(self.arch.encoder.encode_document(g, document)?),
            Some(table) => {
                let m = table.get(&document.id).ok_or_else(|| ModelError::MissingEmbedding { id: document.id.clone() })?;
                if m.rows() != document.len() {
                    return Err(ModelError::EmbeddingRows {
                        id: document.id.clone(),
                        expected: document.len(),
                        found: m.rows(),
                    });
                }
                Ok(g.input(m.cast()))
            }
        }
    }

    /// Head `σ(W·m_i + b)` on each row of `m`, as an `n × 1` variable.
    pub fn head(&self, g: &mut Graph<'_, T>, m: Var) -> Result<Var, ShapeError> {
        let (w, b) = (g.param(self.arch.head_w), g.param(self.arch.head_b));
        let logits = g.matmul(m, w)?;
        let logits = g.add_row(logits, b)?;
        Ok(g.activation(logits, Activation::Sigmoid))
    }

    /// Relevance probabilities on `g`. Dropout is active only when `rng` is given.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_, T>,
        document: &Document,
        embeddings: Option<&EmbeddingTable>,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> Result<Var, ModelError> {
        let h = self.sentence_matrix(g, document, embeddings)?;
        let m = self.arch.ssm.forward(g, h, dropout, rng)?;
        Ok(self.head(g, m)?)
    }

    fn new_graph(&self) -> Graph<'_, T> {
        Graph::new(&self.params).with_scan_mode(self.config.ssm.scan_mode())
    }

    /// Inference-mode probabilities, one per sentence.
    pub fn forward_document(&self, document: &Document, embeddings: Option<&EmbeddingTable>) -> Result<Vec<T>, ModelError> {
        let mut g = self.new_graph();
        let p = self.forward_graph(&mut g, document, embeddings, 0.0, None)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Inference-mode probabilities for a given sentence matrix `h`.
    pub fn forward_embeddings(&self, h: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut g = self.new_graph();
        let hv = g.input(h.clone());
        let m = self.arch.ssm.forward(&mut g, hv, 0.0, None)?;
        let p = self.head(&mut g, m)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Ablation without the Mamba stack: the head reads `H` directly.
    pub fn forward_bag(&self, h: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut g = self.new_graph();
        let hv = g.input(h.clone());
        let p = self.head(&mut g, hv)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Inference-mode sentence matrix for `document`.
    pub fn embed(&self, document: &Document, embeddings: Option<&EmbeddingTable>) -> Result<Tensor<T>, ModelError> {
        let mut g = self.new_graph();
        let h = self.sentence_matrix(&mut g, document, embeddings)?;
        Ok(g.value(h).clone())
    }
}

impl ModelConfig {
    /// Smallest useful configuration, used for gradient verification.
    pub fn tiny() -> Self {
        let mut cfg = Self::with_d_model(16);
        cfg.encoder.n_layers = 1;
        cfg.encoder.n_heads = 2;
        cfg.encoder.ffn_mult = 2;
        cfg.encoder.vocab_size = 64;
        cfg.ssm.d_state = 4;
        cfg
    }
}

/// Finite-difference check of the full model in `f64` with dropout off,
/// using the BCE loss against the document labels. `fault` doubles the
/// backward rule of one op kind as a negative control.
pub fn model_grad_check(
    model: &Model<f64>,
    document: &Document,
    embeddings: Option<&EmbeddingTable>,
    eps: f64,
    sample_per_tensor: Option<usize>,
    fault: Option<OpKind>,
) -> Result<f64, ModelError> {
    let labels: Vec<f64> = document
        .labels
        .as_ref()
        .ok_or_else(|| ModelError::Unlabeled { id: document.id.clone() })?
        .iter()
        .map(|&l| l as f64)
        .collect();
    let mut store = model.params.clone();
    let err = grad_check(
        &mut store,
        |g| {
            if let Some(kind) = fault {
                g.inject_backward_fault(kind);
            }
            let probs = model
                .forward_graph(g, document, embeddings, 0.0, None)
                .map_err(|e| ShapeError::new("model", e.to_string()))?;
            g.bce(probs, &labels)
        },
        eps,
        sample_per_tensor,
    )?;
    Ok(err)
}

/// Indices of the `k` highest probabilities in ascending order. Ties go to
/// the earlier sentence.
pub fn select_sentences<T: Scalar>(probs: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].as_f64().total_cmp(&probs[a].as_f64()).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}
