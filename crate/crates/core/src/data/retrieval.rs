use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::{RawReviewRecord, ReviewSet, ReviewSlot};
use super::sentences::split_review_sentences;
use crate::embedding::read_vector_file;
use crate::error::Result;
use crate::text::tokenize;

pub const RETRIEVAL_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSentence {
    pub product_id: String,
    pub text: String,
    pub review_id: String,
    pub sentence_index: usize,
}

/// Word vectors used only to encode retrieval queries and sentences.
///
/// Built from a vector file, out-of-vocabulary tokens fall back to the mean
/// of all loaded vectors. Without a file every token gets a fixed
/// pseudo-random unit vector derived from its hash.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    unk: Vec<f64>,
    hashed: bool,
}

impl WordVectors {
    pub fn hashed(dim: usize) -> Self {
        WordVectors {
            dim,
            table: HashMap::new(),
            unk: vec![0.0; dim],
            hashed: true,
        }
    }

    pub fn from_file(path: &Path, dim: usize, keep: Option<&HashSet<String>>) -> Result<Self> {
        let rows = read_vector_file(path, dim, keep)?;
        let mut unk = vec![0.0; dim];
        let mut table = HashMap::with_capacity(rows.len());
        for (word, v) in rows {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            for (u, x) in unk.iter_mut().zip(&v) {
                *u += x;
            }
            table.insert(word, v);
        }
        if !table.is_empty() {
            let n = table.len() as f64;
            unk.iter_mut().for_each(|u| *u /= n);
        }
        Ok(WordVectors {
            dim,
            table,
            unk,
            hashed: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        if self.hashed {
            return hashed_vector(token, self.dim);
        }
        self.table.get(token).cloned().unwrap_or_else(|| self.unk.clone())
    }

    /// Average of token vectors; text without tokens maps to the UNK vector.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let toks = tokenize(text);
        if toks.is_empty() {
            return if self.hashed {
                hashed_vector("<unk>", self.dim)
            } else {
                self.unk.clone()
            };
        }
        let mut acc = vec![0.0; self.dim];
        for t in &toks {
            for (a, x) in acc.iter_mut().zip(self.vector(t)) {
                *a += x;
            }
        }
        let n = toks.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

fn hashed_vector(token: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(token.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / norm).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedSentence {
    pub sentence: ReviewSentence,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    products: BTreeMap<String, Vec<IndexedSentence>>,
}

impl RetrievalIndex {
    pub fn build(reviews: &[RawReviewRecord], vectors: &WordVectors) -> Self {
        let mut grouped: BTreeMap<&str, Vec<(usize, &RawReviewRecord)>> = BTreeMap::new();
        for (i, r) in reviews.iter().enumerate() {
            grouped.entry(r.product_id.as_str()).or_default().push((i, r));
        }
        let grouped: Vec<_> = grouped.into_iter().collect();
        let products = grouped
            .into_par_iter()
            .map(|(pid, recs)| {
                let mut sents = Vec::new();
                for (i, r) in recs {
                    let review_id = r.review_id.clone().unwrap_or_else(|| format!("r{i}"));
                    for (j, text) in split_review_sentences(&r.review_text).into_iter().enumerate() {
                        let vector = vectors.embed(&text);
                        sents.push(IndexedSentence {
                            sentence: ReviewSentence {
                                product_id: pid.to_string(),
                                text,
                                review_id: review_id.clone(),
                                sentence_index: j,
                            },
                            vector,
                        });
                    }
                }
                (pid.to_string(), sents)
            })
            .collect();
        RetrievalIndex { products }
    }

    /// Index over already-split sentences, one product per key.
    pub fn from_sentences(products: BTreeMap<String, Vec<IndexedSentence>>) -> Self {
        RetrievalIndex { products }
    }

    pub fn sentences(&self, product_id: &str) -> Option<&[IndexedSentence]> {
        self.products.get(product_id).map(Vec::as_slice)
    }

    pub fn num_products(&self) -> usize {
        self.products.len()
    }

    pub fn num_sentences(&self) -> usize {
        self.products.values().map(Vec::len).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ranking order: score descending, then sentence text ascending.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Top-`k` sentences of `product_id` by dot product with the query vector,
/// padded with EMPTY slots. An unknown product yields `k` EMPTY slots and a
/// warning.
pub fn retrieve_top_k(query: &str, product_id: &str, index: &RetrievalIndex, vectors: &WordVectors, k: usize) -> ReviewSet {
    let Some(sents) = index.sentences(product_id) else {
        log::warn!("no reviews indexed for product {product_id}; using empty review slots");
        return ReviewSet::empty(k);
    };
    let q = vectors.embed(query);
    let mut scored: Vec<(&str, f64)> = sents.iter().map(|s| (s.sentence.text.as_str(), dot(&q, &s.vector))).collect();
    scored.sort_by(|a, b| rank_order(*a, *b));
    let mut slots: Vec<Option<ReviewSlot>> = scored
        .into_iter()
        .take(k)
        .map(|(text, score)| {
            Some(ReviewSlot {
                text: text.to_string(),
                score,
            })
        })
        .collect();
    slots.resize(k, None);
    ReviewSet(slots)
}
