//! Corpus ingestion, labeling, review retrieval and dataset splits.

pub mod labels;
pub mod overlap;
pub mod records;
pub mod retrieval;
pub mod sentences;
pub mod splits;

use rayon::prelude::*;

pub use labels::{derive_label, HelpfulnessLabel};
pub use overlap::{vocab_overlap, vocabulary};
pub use records::{read_jsonl, write_jsonl, LabeledQAInstance, RawAnswerRecord, RawReviewRecord, ReviewSet, ReviewSlot};
pub use retrieval::{retrieve_top_k, RetrievalIndex, ReviewSentence, WordVectors, RETRIEVAL_DIM};
pub use sentences::split_review_sentences;
pub use splits::{make_splits, DatasetSplit};

use crate::config::RetrievalQuery;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelStats {
    pub helpful: usize,
    pub unhelpful: usize,
    pub discarded: usize,
    pub empty_text: usize,
}

/// Labels raw answers, drops Discard and empty-text records, and attaches the
/// top-`k` review sentences to each survivor. Instance ids are the record's
/// position in `answers`.
pub fn build_instances(
    answers: &[RawAnswerRecord],
    index: &RetrievalIndex,
    vectors: &WordVectors,
    k: usize,
    query: RetrievalQuery,
) -> Result<(Vec<LabeledQAInstance>, LabelStats)> {
    let mut stats = LabelStats::default();
    let mut kept = Vec::new();
    for (i, rec) in answers.iter().enumerate() {
        let label = derive_label(rec.vote_x, rec.vote_y).map_err(|e| match e {
            Error::InvalidVotes { .. } => Error::InvalidArgument(format!("answer record {}: {e}", i + 1)),
            other => other,
        })?;
        if rec.question.trim().is_empty() || rec.answer.trim().is_empty() {
            stats.empty_text += 1;
            continue;
        }
        match label {
            HelpfulnessLabel::Discard => {
                stats.discarded += 1;
                continue;
            }
            HelpfulnessLabel::Helpful => stats.helpful += 1,
            HelpfulnessLabel::Unhelpful => stats.unhelpful += 1,
        }
        kept.push((i, rec, label == HelpfulnessLabel::Helpful));
    }
    let instances = kept
        .into_par_iter()
        .map(|(i, rec, helpful)| {
            let q = match query {
                RetrievalQuery::Question => rec.question.clone(),
                RetrievalQuery::QuestionAnswer => format!("{} {}", rec.question, rec.answer),
            };
            LabeledQAInstance {
                id: format!("a{i:07}"),
                product_id: rec.product_id.clone(),
                question: rec.question.clone(),
                answer: rec.answer.clone(),
                votes: [rec.vote_x, rec.vote_y],
                helpful,
                reviews: retrieve_top_k(&q, &rec.product_id, index, vectors, k),
            }
        })
        .collect();
    Ok((instances, stats))
}
