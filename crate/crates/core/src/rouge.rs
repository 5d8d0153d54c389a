//! ROUGE-1/2/L F1 scoring and greedy ROUGE-2 oracle labels.
//!
//! Scores are computed on lower-cased alphanumeric word tokens with no
//! stemming and no stopword removal. ROUGE-L is the LCS over the flat
//! candidate and reference token sequences.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RougeError {
    #[error("document {id}: reference summary is empty")]
    EmptyReference { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / cand_total as f64;
        let recall = overlap as f64 / ref_total as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// ROUGE-1, ROUGE-2 and ROUGE-L for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

/// Lower-cased alphanumeric runs.
pub fn normalize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap score.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap = cand.iter().map(|(g, &c)| c.min(*refc.get(g).unwrap_or(&0))).sum();
    let total = |m: &HashMap<&[T], usize>| m.values().sum::<usize>();
    RougeScore::from_counts(overlap, total(&cand), total(&refc))
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn score_tokens<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> RougeTriple {
    RougeTriple {
        r1: rouge_n(candidate, reference, 1),
        r2: rouge_n(candidate, reference, 2),
        rl: rouge_l(candidate, reference),
    }
}

pub fn score_text(candidate: &str, reference: &str) -> RougeTriple {
    score_tokens(&normalize(candidate), &normalize(reference))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: Vec<u8>,
    pub selected_order: Vec<usize>,
}

/// Tokens of the selected sentences concatenated in document order.
pub fn concat_selected<'a>(sentences: &'a [Vec<String>], selected: &[usize]) -> Vec<&'a str> {
    let mut idx = selected.to_vec();
    idx.sort_unstable();
    idx.iter().flat_map(|&i| sentences[i].iter().map(String::as_str)).collect()
}

/// Greedily add the sentence that most increases ROUGE-2 F1 of the
/// selection against the reference; stop when no sentence gives a strictly
/// positive gain or `max_selected` is reached. Ties go to the smaller index.
pub fn greedy_label(document: &Document, max_selected: Option<usize>) -> Result<LabelSet, RougeError> {
    let reference: Vec<String> = document.reference.iter().flat_map(|s| normalize(&s.text)).collect();
    if reference.is_empty() {
        return Err(RougeError::EmptyReference { id: document.id.clone() });
    }
    let reference: Vec<&str> = reference.iter().map(String::as_str).collect();
    let sentences: Vec<Vec<String>> = document.sentences.iter().map(|s| normalize(&s.text)).collect();
    let n = sentences.len();
    let cap = max_selected.unwrap_or(n).min(n);

    let mut selected: Vec<usize> = Vec::new();
    let mut current = 0.0f64;
    while selected.len() < cap {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|i| !selected.contains(i)) {
            let mut trial = selected.clone();
            trial.push(i);
            let f1 = rouge_n(&concat_selected(&sentences, &trial), &reference, 2).f1;
            if f1 > current && best.is_none_or(|(_, b)| f1 > b) {
                best = Some((i, f1));
            }
        }
        match best {
            Some((i, f1)) => {
                selected.push(i);
                current = f1;
            }
            None => break,
        }
    }
    let mut labels = vec![0u8; n];
    for &i in &selected {
        labels[i] = 1;
    }
    Ok(LabelSet { labels, selected_order: selected })
}

/// Attach greedy labels to every document.
pub fn label_corpus(corpus: &Corpus, max_selected: Option<usize>) -> Result<Corpus, RougeError> {
    let mut out = corpus.clone();
    for doc in &mut out.documents {
        let set = greedy_label(doc, max_selected)?;
        doc.labels = Some(set.labels);
    }
    Ok(out)
}
