use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{select_sentences, Checkpoint, EmbeddingTable, Model, ModelError, DEFAULT_K};
use crate::corpus::{join_sentences, Corpus, Document};
use crate::nn::{adam_step, bce_loss, clip_global_norm, seeded_rng, AdamConfig, AdamState, Graph};
use crate::rouge::score_text;

/// Offset separating the dropout stream from the shuffle stream.
const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub clip_max_norm: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Sentences selected when scoring validation ROUGE-1.
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            epochs: 2,
            batch_size: 1,
            grad_accum_steps: 8,
            clip_max_norm: 1.0,
            dropout: 0.2,
            seed: 42,
            k: DEFAULT_K,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if !(self.lr > 0.0) || !(self.clip_max_norm > 0.0) {
            return bad("lr and clip_max_norm must be positive");
        }
        if self.epochs == 0 || self.grad_accum_steps == 0 || self.k == 0 {
            return bad("epochs, grad_accum_steps and k must be at least 1");
        }
        if self.batch_size != 1 {
            return bad("only batch_size 1 is supported; use grad_accum_steps");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss under dropout; absent for the pre-training row.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_rouge1: f64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    /// Row 0 is measured before any update.
    pub metrics: Vec<EpochMetrics>,
}

fn labels_of(doc: &Document) -> Result<Vec<f32>, ModelError> {
    let labels = doc.labels.as_ref().ok_or_else(|| ModelError::Unlabeled { id: doc.id.clone() })?;
    Ok(labels.iter().map(|&l| l as f32).collect())
}

/// Mean inference loss and mean ROUGE-1 F1 of top-`k` selections.
pub fn validation_metrics(
    model: &Model<f32>,
    corpus: &Corpus,
    embeddings: Option<&EmbeddingTable>,
    k: usize,
) -> Result<(f64, f64), ModelError> {
    let (mut loss, mut r1) = (0.0, 0.0);
    for doc in &corpus.documents {
        let labels = labels_of(doc)?;
        let probs = model.forward_document(doc, embeddings)?;
        loss += bce_loss(&probs, &labels)? as f64;
        let picked = select_sentences(&probs, k);
        let candidate = join_sentences(picked.iter().map(|&i| doc.sentences[i].text.as_str()));
        r1 += score_text(&candidate, &doc.reference_text()).r1.f1;
    }
    let n = corpus.len().max(1) as f64;
    Ok((loss / n, r1 / n))
}

/// Train `model` on labeled `train_set`, scoring `val_set` before the first
/// epoch and after each one. Gradients are averaged over each accumulation
/// window, clipped, then applied with Adam.
pub fn train(
    mut model: Model<f32>,
    train_set: &Corpus,
    val_set: &Corpus,
    cfg: &TrainConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    let labels: Vec<Vec<f32>> = train_set.documents.iter().map(labels_of).collect::<Result<_, _>>()?;
    for d in &val_set.documents {
        labels_of(d)?;
    }
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(&model.params);
    let mut order_rng = seeded_rng(cfg.seed);
    let mut dropout_rng = seeded_rng(cfg.seed ^ DROPOUT_STREAM);
    let scan_mode = model.config.ssm.scan_mode();

    let snapshot = |model: &Model<f32>, adam: &AdamState<f32>, epoch: usize| Checkpoint {
        model: model.clone(),
        adam: adam.clone(),
        epoch,
        seed: cfg.seed,
        train_config: cfg.clone(),
    };

    let (val_loss, val_rouge1) = validation_metrics(&model, val_set, embeddings, cfg.k)?;
    let mut metrics = vec![EpochMetrics { epoch: 0, train_loss: None, val_loss, val_rouge1, optimizer_steps: 0 }];
    let mut best = snapshot(&model, &adam, 0);
    let mut best_r1 = val_rouge1;

    model.params.zero_grads();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut order_rng);
        let mut pending = 0usize;
        let mut loss_sum = 0.0;
        for (pos, &i) in order.iter().enumerate() {
            let doc = &train_set.documents[i];
            let grads = {
                let mut g = Graph::new(&model.params).with_scan_mode(scan_mode);
                let probs = model.forward_graph(&mut g, doc, embeddings, cfg.dropout, Some(&mut dropout_rng))?;
                let loss = g.bce(probs, &labels[i])?;
                loss_sum += g.value(loss).data()[0] as f64;
                g.backward(loss)
            };
            model.params.accumulate(&grads);
            pending += 1;
            if pending == cfg.grad_accum_steps || pos + 1 == order.len() {
                model.params.scale_grads(1.0 / pending as f32);
                clip_global_norm(&mut model.params, cfg.clip_max_norm);
                adam_step(&mut model.params, &mut adam, &adam_cfg);
                model.params.zero_grads();
                pending = 0;
            }
        }
        let (val_loss, val_rouge1) = validation_metrics(&model, val_set, embeddings, cfg.k)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: Some(loss_sum / train_set.len().max(1) as f64),
            val_loss,
            val_rouge1,
            optimizer_steps: adam.step,
        });
        if val_rouge1 > best_r1 {
            best_r1 = val_rouge1;
            best = snapshot(&model, &adam, epoch);
        }
    }
    let last = snapshot(&model, &adam, cfg.epochs);
    Ok(TrainOutcome { last, best, metrics })
}
