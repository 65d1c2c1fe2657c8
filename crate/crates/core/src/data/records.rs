use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One answer as ingested: `vote_x` of `vote_y` voters found it helpful.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnswerRecord {
    pub product_id: String,
    pub question: String,
    pub answer: String,
    pub vote_x: i64,
    pub vote_y: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReviewRecord {
    pub product_id: String,
    pub review_text: String,
    #[serde(default)]
    pub review_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSlot {
    pub text: String,
    pub score: f64,
}

/// Exactly `K` review slots, filled slots first, in non-increasing score
/// order. `None` marks an EMPTY slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReviewSet(pub Vec<Option<ReviewSlot>>);

impl ReviewSet {
    pub fn empty(k: usize) -> Self {
        ReviewSet(vec![None; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn filled(&self) -> impl Iterator<Item = &ReviewSlot> {
        self.0.iter().flatten()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.0.len() != k {
            return Err(Error::InvalidArgument(format!(
                "review set has {} slots, expected {k}",
                self.0.len()
            )));
        }
        let filled = self.0.iter().take_while(|s| s.is_some()).count();
        if self.0[filled..].iter().any(Option::is_some) {
            return Err(Error::InvalidArgument("EMPTY review slots must follow filled ones".into()));
        }
        let scores: Vec<f64> = self.filled().map(|s| s.score).collect();
        if scores.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("review scores must be non-increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQAInstance {
    pub id: String,
    pub product_id: String,
    pub question: String,
    pub answer: String,
    pub votes: [i64; 2],
    pub helpful: bool,
    pub reviews: ReviewSet,
}

impl LabeledQAInstance {
    pub fn label(&self) -> f64 {
        if self.helpful {
            1.0
        } else {
            0.0
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
