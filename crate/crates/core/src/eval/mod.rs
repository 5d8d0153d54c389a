//! Corpus-level ROUGE evaluation of the model and built-in baselines, the
//! paired significance test, and report files.

mod report;
mod stats;

use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use report::{markdown_table, read_scores_csv, summarize_report, write_scores_csv, ReportError, ScoreRow};
pub use stats::{paired_t_test, student_t_two_sided_p, SignificanceResult, StatsError};

use crate::corpus::{fnv1a64, join_sentences, Corpus, Document};
use crate::model::{select_sentences, EmbeddingTable, Model, ModelError};
use crate::nn::seeded_rng;
use crate::rouge::{greedy_label, score_text, RougeError, RougeTriple};

pub const TIMING_REPEATS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rouge(#[from] RougeError),
}

/// Sentence selector under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Summarizer<'a> {
    Lead,
    /// `k` uniformly drawn sentences, seeded per document id.
    Random { seed: u64 },
    /// Greedy ROUGE-2 oracle labels; ignores `k`.
    Oracle { max_selected: Option<usize> },
    Model { model: &'a Model<f32>, embeddings: Option<&'a EmbeddingTable>, name: &'a str },
}

impl Summarizer<'_> {
    pub fn name(&self) -> String {
        match self {
            Summarizer::Lead => "lead-k".into(),
            Summarizer::Random { .. } => "random-k".into(),
            Summarizer::Oracle { .. } => "oracle".into(),
            Summarizer::Model { name, .. } => (*name).into(),
        }
    }

    /// Selected sentence indices in document order.
    pub fn select(&self, doc: &Document, k: usize) -> Result<Vec<usize>, EvalError> {
        let n = doc.len();
        Ok(match self {
            Summarizer::Lead => (0..k.min(n)).collect(),
            Summarizer::Random { seed } => {
                let mut rng = seeded_rng(seed ^ fnv1a64(doc.id.as_bytes()));
                let mut idx = sample(&mut rng, n, k.min(n)).into_vec();
                idx.sort_unstable();
                idx
            }
            Summarizer::Oracle { max_selected } => {
                let mut idx = greedy_label(doc, *max_selected)?.selected_order;
                idx.sort_unstable();
                idx
            }
            Summarizer::Model { model, embeddings, .. } => {
                let probs = model.forward_document(doc, *embeddings)?;
                select_sentences(&probs, k)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub scores: RougeTriple,
    /// Median wall-clock seconds of selection over the timing repeats.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub k: usize,
    pub docs: Vec<DocScore>,
    pub mean: RougeTriple,
    pub mean_seconds: f64,
}

impl EvalReport {
    pub fn r1_f1(&self) -> Vec<f64> {
        self.docs.iter().map(|d| d.scores.r1.f1).collect()
    }

    pub fn mean_f1(&self) -> (f64, f64, f64) {
        (self.mean.r1.f1, self.mean.r2.f1, self.mean.rl.f1)
    }
}

pub fn summary_text(doc: &Document, selected: &[usize]) -> String {
    join_sentences(selected.iter().map(|&i| doc.sentences[i].text.as_str()))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn mean_triple(docs: &[DocScore]) -> RougeTriple {
    let n = docs.len() as f64;
    let mut m = RougeTriple::default();
    for d in docs {
        for (acc, s) in [(&mut m.r1, &d.scores.r1), (&mut m.r2, &d.scores.r2), (&mut m.rl, &d.scores.rl)] {
            acc.precision += s.precision / n;
            acc.recall += s.recall / n;
            acc.f1 += s.f1 / n;
        }
    }
    m
}

/// Score `summarizer` on every document of `corpus` with `k` sentences.
pub fn evaluate(summarizer: &Summarizer<'_>, corpus: &Corpus, k: usize) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut docs = Vec::with_capacity(corpus.len());
    for doc in &corpus.documents {
        let mut times = Vec::with_capacity(TIMING_REPEATS);
        let mut selected = Vec::new();
        for _ in 0..TIMING_REPEATS {
            let start = Instant::now();
            selected = summarizer.select(doc, k)?;
            times.push(start.elapsed().as_secs_f64());
        }
        let scores = score_text(&summary_text(doc, &selected), &doc.reference_text());
        docs.push(DocScore { doc_id: doc.id.clone(), scores, seconds: median(times) });
    }
    let mean = mean_triple(&docs);
    let mean_seconds = docs.iter().map(|d| d.seconds).sum::<f64>() / docs.len() as f64;
    Ok(EvalReport { model_id: summarizer.name(), k, docs, mean, mean_seconds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_corpus, SyntheticSpec};
    use crate::rouge::{label_corpus, normalize, rouge_n};

    fn two_docs() -> Corpus {
        Corpus::new(vec![
            Document::new("a", &["The cat sat.", "Dogs bark loudly."], &["the cat ran"]),
            Document::new("b", &["Rain fell today.", "Sun shone."], &["rain fell"]),
        ])
        .unwrap()
    }

    #[test]
    fn hand_scored_fixture_means() {
        let r = evaluate(&Summarizer::Lead, &two_docs(), 1).unwrap();
        // doc a: "the cat sat" vs "the cat ran" → R1 2/3, R2 1/2
        // doc b: "rain fell today" vs "rain fell" → R1 P 2/3 R 1, F 4/5; R2 P 1/2 R 1, F 2/3
        assert!((r.mean.r1.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((r.mean.r2.f1 - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.docs.len(), 2);
        assert_eq!(r.model_id, "lead-k");
    }

    #[test]
    fn errors_on_empty_corpus_and_zero_k() {
        assert!(matches!(evaluate(&Summarizer::Lead, &Corpus::default(), 3), Err(EvalError::EmptyCorpus)));
        assert!(matches!(evaluate(&Summarizer::Lead, &two_docs(), 0), Err(EvalError::InvalidK)));
    }

    #[test]
    fn oracle_dominates_lead_on_rouge2() {
        let corpus = label_corpus(&synthetic_corpus(SyntheticSpec { n_docs: 20, ..Default::default() }, 8), None).unwrap();
        let lead = evaluate(&Summarizer::Lead, &corpus, 3).unwrap();
        let oracle = evaluate(&Summarizer::Oracle { max_selected: None }, &corpus, 3).unwrap();
        for (l, o) in lead.docs.iter().zip(&oracle.docs) {
            assert!(o.scores.r2.f1 >= l.scores.r2.f1, "{}", l.doc_id);
        }
    }

    #[test]
    fn whole_document_has_full_unigram_recall() {
        let corpus = synthetic_corpus(SyntheticSpec { n_docs: 5, ..Default::default() }, 2);
        let r = evaluate(&Summarizer::Lead, &corpus, 100).unwrap();
        for d in &r.docs {
            assert!((d.scores.r1.recall - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_baseline_is_seeded_per_document() {
        let corpus = synthetic_corpus(SyntheticSpec { n_docs: 6, ..Default::default() }, 2);
        let s = Summarizer::Random { seed: 42 };
        let doc = &corpus.documents[0];
        assert_eq!(s.select(doc, 3).unwrap(), s.select(doc, 3).unwrap());
        let a = evaluate(&s, &corpus, 3).unwrap();
        let b = evaluate(&s, &corpus, 3).unwrap();
        assert_eq!(a.mean, b.mean);
        let picked = s.select(doc, 3).unwrap();
        assert_eq!(picked.len(), 3);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mean_is_average_of_documents() {
        let corpus = synthetic_corpus(SyntheticSpec { n_docs: 7, ..Default::default() }, 4);
        let r = evaluate(&Summarizer::Lead, &corpus, 2).unwrap();
        let avg = r.docs.iter().map(|d| d.scores.rl.f1).sum::<f64>() / 7.0;
        assert!((r.mean.rl.f1 - avg).abs() < 1e-12);
        let doc = &corpus.documents[3];
        let direct = rouge_n(&normalize(&summary_text(doc, &[0, 1])), &normalize(&doc.reference_text()), 1);
        assert_eq!(r.docs[3].scores.r1, direct);
    }
}
