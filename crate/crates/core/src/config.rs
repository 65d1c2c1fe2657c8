//! Run configuration, stored as flat `key = value` text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalQuery {
    #[default]
    Question,
    QuestionAnswer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RahpConfig {
    pub hidden: usize,
    pub d1: usize,
    pub d2: usize,
    pub k: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub filter_widths: Vec<usize>,
    pub max_word_len: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    pub max_review_len: usize,
    pub mlp_hidden: usize,
    pub mlp_p_hidden: usize,
    pub dropout: f64,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub threshold: f64,
    pub precision: Precision,

    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub export_embeddings: bool,
    pub freeze_pretrained: bool,
    pub retrieval_query: RetrievalQuery,

    pub no_ra_coherence: bool,
    pub no_q_to_r_attention: bool,
    pub no_char_embedding: bool,
}

impl Default for RahpConfig {
    fn default() -> Self {
        RahpConfig {
            hidden: 128,
            d1: 128,
            d2: 3,
            k: 5,
            word_dim: 300,
            char_dim: 16,
            char_filters: 50,
            filter_widths: vec![2, 3, 4, 5],
            max_word_len: 40,
            max_question_len: 40,
            max_answer_len: 60,
            max_review_len: 50,
            mlp_hidden: 256,
            mlp_p_hidden: 128,
            dropout: 0.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            patience: 5,
            seed: 42,
            threshold: 0.5,
            precision: Precision::F32,
            pretrain_epochs: 10,
            pretrain_batch_size: 64,
            export_embeddings: true,
            freeze_pretrained: false,
            retrieval_query: RetrievalQuery::Question,
            no_ra_coherence: false,
            no_q_to_r_attention: false,
            no_char_embedding: false,
        }
    }
}

/// Keys that determine parameter names and shapes.
const ARCH_KEYS: &[&str] = &[
    "hidden",
    "d1",
    "d2",
    "k",
    "word_dim",
    "char_dim",
    "char_filters",
    "filter_widths",
    "mlp_hidden",
    "mlp_p_hidden",
    "no_ra_coherence",
    "no_char_embedding",
];

impl RahpConfig {
    /// Small dimensions for tests and desk-scale experiments.
    pub fn tiny() -> Self {
        RahpConfig {
            hidden: 8,
            d1: 8,
            word_dim: 12,
            char_dim: 4,
            char_filters: 3,
            mlp_hidden: 16,
            mlp_p_hidden: 8,
            ..RahpConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn char_out_dim(&self) -> usize {
        self.char_filters * self.filter_widths.len()
    }

    /// Width of `e(w)`.
    pub fn embed_dim(&self) -> usize {
        if self.no_char_embedding {
            self.word_dim
        } else {
            self.word_dim + self.char_out_dim()
        }
    }

    /// Width of the input to the final classifier.
    pub fn final_input_dim(&self) -> usize {
        if self.no_ra_coherence {
            self.d1
        } else {
            self.d1 + self.k * self.d2
        }
    }

    pub fn max_filter_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("d1", self.d1),
            ("d2", self.d2),
            ("k", self.k),
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("max_word_len", self.max_word_len),
            ("max_question_len", self.max_question_len),
            ("max_answer_len", self.max_answer_len),
            ("max_review_len", self.max_review_len),
            ("mlp_hidden", self.mlp_hidden),
            ("mlp_p_hidden", self.mlp_p_hidden),
            ("batch_size", self.batch_size),
            ("pretrain_batch_size", self.pretrain_batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(Error::Config("filter_widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config("learning_rate must be >= 0 and eps > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let b = |v: bool| v.to_string();
        let widths = self.filter_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let entries: Vec<(&str, String)> = vec![
            ("hidden", self.hidden.to_string()),
            ("d1", self.d1.to_string()),
            ("d2", self.d2.to_string()),
            ("k", self.k.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("char_dim", self.char_dim.to_string()),
            ("char_filters", self.char_filters.to_string()),
            ("filter_widths", widths),
            ("max_word_len", self.max_word_len.to_string()),
            ("max_question_len", self.max_question_len.to_string()),
            ("max_answer_len", self.max_answer_len.to_string()),
            ("max_review_len", self.max_review_len.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("mlp_p_hidden", self.mlp_p_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("threshold", self.threshold.to_string()),
            (
                "precision",
                match self.precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
            ),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_batch_size", self.pretrain_batch_size.to_string()),
            ("export_embeddings", b(self.export_embeddings)),
            ("freeze_pretrained", b(self.freeze_pretrained)),
            (
                "retrieval_query",
                match self.retrieval_query {
                    RetrievalQuery::Question => "question".into(),
                    RetrievalQuery::QuestionAnswer => "question_answer".into(),
                },
            ),
            ("no_ra_coherence", b(self.no_ra_coherence)),
            ("no_q_to_r_attention", b(self.no_q_to_r_attention)),
            ("no_char_embedding", b(self.no_char_embedding)),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "hidden" => self.hidden = p(key, value)?,
            "d1" => self.d1 = p(key, value)?,
            "d2" => self.d2 = p(key, value)?,
            "k" => self.k = p(key, value)?,
            "word_dim" => self.word_dim = p(key, value)?,
            "char_dim" => self.char_dim = p(key, value)?,
            "char_filters" => self.char_filters = p(key, value)?,
            "filter_widths" => self.filter_widths = value.split(',').map(|s| p(key, s.trim())).collect::<Result<Vec<usize>>>()?,
            "max_word_len" => self.max_word_len = p(key, value)?,
            "max_question_len" => self.max_question_len = p(key, value)?,
            "max_answer_len" => self.max_answer_len = p(key, value)?,
            "max_review_len" => self.max_review_len = p(key, value)?,
            "mlp_hidden" => self.mlp_hidden = p(key, value)?,
            "mlp_p_hidden" => self.mlp_p_hidden = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "eps" => self.eps = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "threshold" => self.threshold = p(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::Config(format!("bad value for precision: {value:?}"))),
                }
            }
            "pretrain_epochs" => self.pretrain_epochs = p(key, value)?,
            "pretrain_batch_size" => self.pretrain_batch_size = p(key, value)?,
            "export_embeddings" => self.export_embeddings = p(key, value)?,
            "freeze_pretrained" => self.freeze_pretrained = p(key, value)?,
            "retrieval_query" => {
                self.retrieval_query = match value {
                    "question" => RetrievalQuery::Question,
                    "question_answer" => RetrievalQuery::QuestionAnswer,
                    _ => return Err(Error::Config(format!("bad value for retrieval_query: {value:?}"))),
                }
            }
            "no_ra_coherence" => self.no_ra_coherence = p(key, value)?,
            "no_q_to_r_attention" => self.no_q_to_r_attention = p(key, value)?,
            "no_char_embedding" => self.no_char_embedding = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RahpConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over the full `key = value` serialization.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Architecture-only subset, stored in checkpoints.
    pub fn arch_map(&self) -> BTreeMap<String, String> {
        self.to_map().into_iter().filter(|(k, _)| ARCH_KEYS.contains(&k.as_str())).collect()
    }

    /// Fails when `stored` (from a checkpoint) disagrees with this config on
    /// any architecture key.
    pub fn check_arch(&self, stored: &BTreeMap<String, String>) -> Result<()> {
        let mine = self.arch_map();
        let diffs: Vec<String> = mine
            .iter()
            .filter_map(|(k, v)| match stored.get(&format!("arch.{k}")) {
                Some(s) if s == v => None,
                Some(s) => Some(format!("{k}: config {v}, checkpoint {s}")),
                None => Some(format!("{k}: missing from checkpoint")),
            })
            .collect();
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("checkpoint incompatible with config: {}", diffs.join("; "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RahpConfig::tiny();
        c.no_q_to_r_attention = true;
        c.filter_widths = vec![2, 3];
        c.learning_rate = 3e-3;
        let back = RahpConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn defaults_match_published_dimensions() {
        let c = RahpConfig::default();
        assert_eq!(c.embed_dim(), 500);
        assert_eq!(c.final_input_dim(), 143);
        assert_eq!(c.char_out_dim(), 200);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = RahpConfig::parse("# header\nk = 4 # fewer reviews\n\nseed=7").unwrap();
        assert_eq!((c.k, c.seed), (4, 7));
        assert!(RahpConfig::parse("bogus = 1").is_err());
        assert!(RahpConfig::parse("hidden = 0").is_err());
        assert!(RahpConfig::parse("hidden").is_err());
    }
}
