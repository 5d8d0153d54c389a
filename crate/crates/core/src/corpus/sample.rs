//! TF-IDF document vectors, k-means diversity sampling and seeded splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::tokenize::{token_id, word_pieces};
use super::{Corpus, CorpusError, SplitTag};
use crate::nn::{seeded_rng, Rng};

pub const KMEANS_MAX_ITERS: usize = 50;
pub const KMEANS_TOL: f64 = 1e-6;

/// Sparse `n_docs × vocab_size` matrix; each row sorted by term id.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfMatrix {
    pub vocab_size: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl TfidfMatrix {
    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, doc: usize, term: usize) -> f64 {
        let row = &self.rows[doc];
        row.binary_search_by_key(&term, |&(t, _)| t).map(|i| row[i].1).unwrap_or(0.0)
    }

    pub fn dense_row(&self, doc: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        for &(t, w) in &self.rows[doc] {
            out[t] = w;
        }
        out
    }
}

fn term_counts(doc: &super::Document, vocab_size: usize) -> BTreeMap<usize, f64> {
    let mut counts = BTreeMap::new();
    for s in &doc.sentences {
        for piece in word_pieces(&s.text) {
            if piece.chars().any(char::is_alphanumeric) {
                *counts.entry(token_id(&piece, vocab_size) as usize).or_insert(0.0) += 1.0;
            }
        }
    }
    counts
}

/// `tf · (ln((1 + N) / (1 + df)) + 1)` over hashed word ids, L2-normalized rows.
pub fn tfidf_matrix(corpus: &Corpus, vocab_size: usize) -> Result<TfidfMatrix, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let counts: Vec<_> = corpus.documents.iter().map(|d| term_counts(d, vocab_size)).collect();
    let mut df: BTreeMap<usize, f64> = BTreeMap::new();
    for c in &counts {
        for &t in c.keys() {
            *df.entry(t).or_insert(0.0) += 1.0;
        }
    }
    let n = corpus.len() as f64;
    let rows = counts
        .into_iter()
        .map(|c| {
            let mut row: Vec<(usize, f64)> = c
                .into_iter()
                .map(|(t, tf)| (t, tf * (((1.0 + n) / (1.0 + df[&t])).ln() + 1.0)))
                .collect();
            let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, w)| *w /= norm);
            }
            row
        })
        .collect();
    Ok(TfidfMatrix { vocab_size, rows })
}

fn sq_dist(row: &[(usize, f64)], row_sq: f64, centroid: &[f64], centroid_sq: f64) -> f64 {
    let dot: f64 = row.iter().map(|&(t, w)| w * centroid[t]).sum();
    (row_sq + centroid_sq - 2.0 * dot).max(0.0)
}

/// Lloyd's algorithm with k-means++ seeding. Returns one cluster index per
/// row; `k` is capped at the number of rows.
pub fn kmeans_assign(m: &TfidfMatrix, k: usize, seed: u64) -> Vec<usize> {
    let n = m.n_docs();
    let k = k.min(n).max(1);
    // compact the used term ids so centroids stay small
    let mut used: Vec<usize> = m.rows.iter().flat_map(|r| r.iter().map(|&(t, _)| t)).collect();
    used.sort_unstable();
    used.dedup();
    let dim = used.len().max(1);
    let rows: Vec<Vec<(usize, f64)>> = m
        .rows
        .iter()
        .map(|r| r.iter().map(|&(t, w)| (used.binary_search(&t).unwrap(), w)).collect())
        .collect();
    let row_sq: Vec<f64> = rows.iter().map(|r| r.iter().map(|(_, w)| w * w).sum()).collect();
    let densify = |i: usize| {
        let mut c = vec![0.0; dim];
        for &(t, w) in &rows[i] {
            c[t] = w;
        }
        c
    };

    let mut rng = seeded_rng(seed);
    let mut centroids = vec![densify(rng.gen_range(0..n))];
    let mut best = vec![f64::INFINITY; n];
    while centroids.len() < k {
        let last = centroids.last().unwrap();
        let last_sq: f64 = last.iter().map(|v| v * v).sum();
        for i in 0..n {
            best[i] = best[i].min(sq_dist(&rows[i], row_sq[i], last, last_sq));
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in best.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(densify(pick));
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let csq: Vec<f64> = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        for i in 0..n {
            let mut bj = 0;
            let mut bd = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(&rows[i], row_sq[i], c, csq[j]);
                if d < bd {
                    bd = d;
                    bj = j;
                }
            }
            assign[i] = bj;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for &(t, w) in &rows[i] {
                sums[assign[i]][t] += w;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue; // empty cluster keeps its centroid
            }
            let inv = 1.0 / counts[j] as f64;
            let mut shift = 0.0;
            for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                let v = s * inv;
                shift += (v - *c) * (v - *c);
                *c = v;
            }
            moved = moved.max(shift.sqrt());
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    assign
}

/// Cluster documents, then draw round-robin across clusters (uniformly
/// within each) until `n_select` documents are chosen.
pub fn kmeans_sample(
    corpus: &Corpus,
    k_clusters: usize,
    n_select: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    if n_select > corpus.len() {
        return Err(CorpusError::Insufficient { required: n_select, available: corpus.len() });
    }
    let m = tfidf_matrix(corpus, vocab_size)?;
    let assign = kmeans_assign(&m, k_clusters, seed);
    let k = assign.iter().copied().max().unwrap_or(0) + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = seeded_rng(seed ^ 0x5eed_5a3b_1e00_0000);
    let mut picked = Vec::with_capacity(n_select);
    while picked.len() < n_select {
        for pool in members.iter_mut() {
            if picked.len() == n_select {
                break;
            }
            if pool.is_empty() {
                continue;
            }
            let j = rng.gen_range(0..pool.len());
            picked.push(pool.remove(j));
        }
    }
    Ok(Corpus {
        documents: picked.into_iter().map(|i| corpus.documents[i].clone()).collect(),
        split_tag: corpus.split_tag,
    })
}

/// Seeded shuffle, then contiguous train/val/test partition.
pub fn split(
    corpus: &Corpus,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let required = n_train + n_val + n_test;
    if required > corpus.len() {
        return Err(CorpusError::Insufficient { required, available: corpus.len() });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng: Rng = seeded_rng(seed);
    order.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>, tag| Corpus {
        documents: order[range].iter().map(|&i| corpus.documents[i].clone()).collect(),
        split_tag: tag,
    };
    Ok((
        take(0..n_train, SplitTag::Train),
        take(n_train..n_train + n_val, SplitTag::Val),
        take(n_train + n_val..required, SplitTag::Test),
    ))
}
