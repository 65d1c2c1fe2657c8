//! Siamese textual-inference network used to pre-train the context encoder,
//! the inference BiLSTM and its classifier before helpfulness training.
//!
//! Premise and hypothesis are embedded and encoded by `bilstm_c`, reduced to
//! final states by `bilstm_ra`, and `mlp_ra([o_p; o_h])` gives the logits of
//! the three classes. This is the review–answer branch of the full model with
//! the premise in the review slot and the hypothesis in the answer slot.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RahpConfig;
use crate::embedding::{init_char_params, init_word_table, TokenSeq, CHAR_TABLE, WORD_TABLE};
use crate::encoder::init_bilstm;
use crate::error::{Error, Result};
use crate::layers::{init_mlp, Dropout};
use crate::model::{checkpoint_metadata, context_encode};
use crate::ra::{ra_encode, ra_predict, BILSTM_C, BILSTM_RA, MLP_RA, TRANSFER_PREFIXES};
use crate::tensor::{self, softmax_masked, Adam, Graph, ParamStore, Var};
use crate::text::{tokenize, Vocabulary, PAD};
use crate::train::{batch_gradients, dropout_rng, epoch_order, BatchStats};

pub const NLI_CLASSES: usize = 3;
pub const PRETRAIN_KIND: &str = "nli-pretrain";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "entailment" => Some(NliLabel::Entailment),
            "neutral" => Some(NliLabel::Neutral),
            "contradiction" => Some(NliLabel::Contradiction),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliInstance {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliParseStats {
    pub records: usize,
    pub kept: usize,
    /// Gold label missing, `-` or not one of the three classes.
    pub skipped_label: usize,
    pub skipped_empty: usize,
}

#[derive(Deserialize)]
struct JsonRecord {
    #[serde(default)]
    gold_label: Option<String>,
    sentence1: String,
    sentence2: String,
}

/// Reads an inference corpus: either one JSON object per line with
/// `gold_label`, `sentence1` and `sentence2`, or tab-separated lines. A TSV
/// header naming those columns (or `label`, `premise`, `hypothesis`) selects
/// them; without one the first three
/// columns are used in that order.
pub fn parse_nli_corpus(path: &Path) -> Result<(Vec<NliInstance>, NliParseStats)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut stats = NliParseStats::default();
    let mut out = Vec::new();
    let mut columns = (0, 1, 2);
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, s1, s2) = if line.trim_start().starts_with('{') {
            let r: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            (r.gold_label.unwrap_or_default(), r.sentence1, r.sentence2)
        } else {
            let cols: Vec<&str> = line.split('\t').collect();
            if let Some(header) = header_columns(&cols) {
                columns = header;
                continue;
            }
            let get = |i: usize| cols.get(i).map(|s| s.to_string());
            match (get(columns.0), get(columns.1), get(columns.2)) {
                (Some(l), Some(a), Some(b)) => (l, a, b),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: format!(
                            "expected at least {} tab-separated fields",
                            columns.0.max(columns.1).max(columns.2) + 1
                        ),
                    })
                }
            }
        };
        stats.records += 1;
        let Some(label) = NliLabel::parse(&label) else {
            stats.skipped_label += 1;
            continue;
        };
        if tokenize(&s1).is_empty() || tokenize(&s2).is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        out.push(NliInstance {
            premise: s1,
            hypothesis: s2,
            label,
        });
    }
    stats.kept = out.len();
    if out.is_empty() {
        log::warn!("{}: no usable inference pairs", path.display());
    }
    log::info!(
        "{}: {} records, {} kept, {} skipped for label, {} skipped as empty",
        path.display(),
        stats.records,
        stats.kept,
        stats.skipped_label,
        stats.skipped_empty
    );
    Ok((out, stats))
}

fn header_columns(cols: &[&str]) -> Option<(usize, usize, usize)> {
    let find = |names: [&str; 2]| cols.iter().position(|c| names.contains(&c.trim()));
    Some((
        find(["gold_label", "label"])?,
        find(["sentence1", "premise"])?,
        find(["sentence2", "hypothesis"])?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NliInput {
    pub premise: TokenSeq,
    pub hypothesis: TokenSeq,
    pub label: NliLabel,
}

impl NliInput {
    pub fn encode(inst: &NliInstance, vocab: &Vocabulary, cfg: &RahpConfig) -> Result<Self> {
        Ok(NliInput {
            premise: TokenSeq::encode(&tokenize(&inst.premise), vocab, cfg.max_review_len, cfg)?,
            hypothesis: TokenSeq::encode(&tokenize(&inst.hypothesis), vocab, cfg.max_answer_len, cfg)?,
            label: inst.label,
        })
    }
}

/// Vocabulary over every token of the corpus, in first-seen order.
pub fn build_vocab(corpus: &[NliInstance]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for inst in corpus {
        for t in tokenize(&inst.premise).iter().chain(&tokenize(&inst.hypothesis)) {
            v.add(t);
        }
    }
    v.freeze();
    v
}

/// Parameters of the inference network, created in the same order as the
/// corresponding part of the full model.
pub fn init_nli_params<R: Rng + ?Sized>(cfg: &RahpConfig, vocab_len: usize, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let h = cfg.hidden;
    let mut s = ParamStore::default();
    s.insert(WORD_TABLE, init_word_table(vocab_len, cfg.word_dim, rng)?);
    s.freeze_row(WORD_TABLE, PAD);
    if !cfg.no_char_embedding {
        init_char_params(&mut s, cfg, rng)?;
    }
    init_bilstm(&mut s, BILSTM_C, cfg.embed_dim(), h, rng)?;
    init_bilstm(&mut s, BILSTM_RA, 2 * h, h, rng)?;
    init_mlp(&mut s, MLP_RA, 4 * h, cfg.mlp_hidden, NLI_CLASSES, rng)?;
    Ok(s)
}

/// Class logits `[1, 3]` for a premise/hypothesis pair.
pub fn nli_forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &RahpConfig,
    premise: &TokenSeq,
    hypothesis: &TokenSeq,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let c_p = context_encode(g, store, cfg, premise)?;
    let c_h = context_encode(g, store, cfg, hypothesis)?;
    let o_p = ra_encode(g, store, c_p, &premise.mask)?;
    let o_h = ra_encode(g, store, c_h, &hypothesis.mask)?;
    ra_predict(g, store, o_p, o_h, dropout)
}

/// Class probabilities in [`NliLabel::ALL`] order.
pub fn nli_probabilities(store: &ParamStore, cfg: &RahpConfig, input: &NliInput) -> Result<Vec<f64>> {
    let mut g = Graph::new(cfg.precision);
    let logits = nli_forward(&mut g, store, cfg, &input.premise, &input.hypothesis, None)?;
    softmax_masked(g.value(logits).data(), &[true; NLI_CLASSES])
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

pub fn nli_accuracy(store: &ParamStore, cfg: &RahpConfig, inputs: &[NliInput]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let correct: Vec<bool> = inputs
        .par_iter()
        .map(|x| Ok(argmax(&nli_probabilities(store, cfg, x)?) == x.label.index()))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / inputs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ParamStore,
    pub best_epoch: usize,
    pub history: Vec<PretrainEpoch>,
}

/// Trains the inference network with 3-way cross-entropy. With validation
/// data the parameters of the most accurate epoch are kept and training
/// stops after `cfg.patience` epochs without improvement; otherwise the last
/// epoch wins. Runs for `cfg.pretrain_epochs` epochs at most.
pub fn pretrain(cfg: &RahpConfig, mut store: ParamStore, train: &[NliInput], valid: &[NliInput]) -> Result<PretrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("inference corpus is empty".into()));
    }
    let mut adam = Adam::new(cfg.adam(), cfg.precision);
    let mut history = Vec::new();
    let mut best = store.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_best = 0;
    for epoch in 1..=cfg.pretrain_epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut stats = BatchStats::default();
        for chunk in order.chunks(cfg.pretrain_batch_size) {
            let (grads, s) = batch_gradients(&store, cfg.precision, chunk, |g, st, &i| {
                let x = &train[i];
                let mut rng = dropout_rng(cfg.seed, epoch, i);
                let mut drop = Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                };
                let d = (cfg.dropout > 0.0).then_some(&mut drop);
                let logits = nli_forward(g, st, cfg, &x.premise, &x.hypothesis, d)?;
                let correct = argmax(g.value(logits).data()) == x.label.index();
                Ok((g.softmax_cross_entropy(logits, x.label.index())?, correct))
            })
            .map_err(|e| match e {
                Error::Diverged(m) => Error::Diverged(format!("pre-training epoch {epoch}: {m}")),
                e => e,
            })?;
            stats.add(s);
            adam.step(&mut store, &grads)?;
        }
        let valid_accuracy = if valid.is_empty() {
            None
        } else {
            Some(nli_accuracy(&store, cfg, valid)?)
        };
        log::info!(
            "pretrain epoch {epoch}: loss {:.4} train acc {:.3}{}",
            stats.mean_loss(),
            stats.accuracy(),
            valid_accuracy.map(|a| format!(" valid acc {a:.3}")).unwrap_or_default()
        );
        history.push(PretrainEpoch {
            epoch,
            loss: stats.mean_loss(),
            train_accuracy: stats.accuracy(),
            valid_accuracy,
        });
        match valid_accuracy {
            Some(a) if a > best_acc => {
                best_acc = a;
                best = store.clone();
                best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            None => {
                best = store.clone();
                best_epoch = epoch;
            }
        }
    }
    Ok(PretrainOutcome {
        params: best,
        best_epoch,
        history,
    })
}

/// The transferable subset of a pre-trained network.
pub fn export_params(store: &ParamStore, cfg: &RahpConfig) -> ParamStore {
    let prefixes: Vec<&str> = TRANSFER_PREFIXES
        .iter()
        .copied()
        .filter(|p| cfg.export_embeddings || *p != "embedding.")
        .collect();
    store.filter_prefixes(&prefixes)
}

pub fn save_pretrained(path: &Path, store: &ParamStore, cfg: &RahpConfig, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut meta = checkpoint_metadata(cfg, PRETRAIN_KIND);
    meta.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    tensor::save_checkpoint(path, &export_params(store, cfg), &meta)
}

pub fn load_pretrained(path: &Path) -> Result<ParamStore> {
    let ck = tensor::load_checkpoint(path)?;
    if ck.metadata.get("kind").map(String::as_str) != Some(PRETRAIN_KIND) {
        return Err(Error::Checkpoint(format!("{} is not a pre-training checkpoint", path.display())));
    }
    let mut params = ck.params;
    if params.contains(WORD_TABLE) {
        params.freeze_row(WORD_TABLE, PAD);
    }
    if params.contains(CHAR_TABLE) {
        params.freeze_row(CHAR_TABLE, PAD);
    }
    Ok(params)
}
