//! Synthetic corpus with a learnable notion of relevance.
//!
//! Each document draws a small topic vocabulary. Relevant sentences open
//! with marker words and their reference highlight repeats most of their
//! content; the rest of the document reuses the same topic words without
//! markers.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Corpus, Document, Sentence};
use crate::nn::seeded_rng;

pub const MARKER_WORDS: &[&str] = &["officials", "confirmed", "announced", "breaking", "key"];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const FUNCTION_WORDS: &[&str] = &["the", "of", "and", "in", "was", "with", "for", "on"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_relevant: usize,
    pub max_relevant: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_docs: 200, min_sentences: 8, max_sentences: 14, min_relevant: 2, max_relevant: 4 }
    }
}

fn lexicon() -> Vec<String> {
    let mut words = Vec::new();
    for a in ONSETS {
        for v in VOWELS {
            for b in ONSETS {
                for w in VOWELS {
                    words.push(format!("{a}{v}{b}{w}"));
                }
            }
        }
    }
    words
}

fn sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s.push('.');
    s
}

/// Deterministic synthetic corpus; relevant sentence positions are uniform.
pub fn synthetic_corpus(spec: SyntheticSpec, seed: u64) -> Corpus {
    let lex = lexicon();
    let mut rng = seeded_rng(seed);
    let pick_fn = |rng: &mut crate::nn::Rng| FUNCTION_WORDS[rng.gen_range(0..FUNCTION_WORDS.len())].to_string();
    let mut documents = Vec::with_capacity(spec.n_docs);
    for d in 0..spec.n_docs {
        let n = rng.gen_range(spec.min_sentences..=spec.max_sentences);
        let r = rng.gen_range(spec.min_relevant..=spec.max_relevant).min(n);
        let topic: Vec<&String> = lex.choose_multiple(&mut rng, 40).collect();
        let mut positions: Vec<usize> = (0..n).collect();
        positions.shuffle(&mut rng);
        let mut relevant = positions[..r].to_vec();
        relevant.sort_unstable();

        let mut sentences = Vec::with_capacity(n);
        let mut reference = Vec::new();
        for i in 0..n {
            let content: Vec<String> = (0..rng.gen_range(5..9))
                .map(|_| topic[rng.gen_range(0..topic.len())].clone())
                .collect();
            if relevant.contains(&i) {
                let m1 = MARKER_WORDS[rng.gen_range(0..MARKER_WORDS.len())];
                let m2 = MARKER_WORDS[rng.gen_range(0..MARKER_WORDS.len())];
                let mut words = vec![m1.to_string(), m2.to_string()];
                words.extend(content.iter().cloned());
                words.insert(3, pick_fn(&mut rng));
                sentences.push(Sentence::new(sentence(&words)));
                let keep = content.len() - 1;
                let mut highlight = vec![m1.to_string()];
                highlight.extend(content[..keep].iter().cloned());
                reference.push(Sentence::new(sentence(&highlight)));
            } else {
                let mut words = vec![pick_fn(&mut rng)];
                for (j, w) in content.into_iter().enumerate() {
                    words.push(w);
                    if j % 3 == 2 {
                        words.push(pick_fn(&mut rng));
                    }
                }
                sentences.push(Sentence::new(sentence(&words)));
            }
        }
        documents.push(Document { id: format!("syn-{d:04}"), sentences, reference, labels: None });
    }
    Corpus { documents, split_tag: super::SplitTag::Unsplit }
}
