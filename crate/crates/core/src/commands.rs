//! File-level pipeline steps behind the `rahp` subcommands.
//!
//! Every step writes a `*_meta.json` record with the configuration, seed
//! and SHA-256 hashes of the files it read and wrote. Records contain file
//! names only, so identical runs produce identical records.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RahpConfig;
use crate::data::{
    build_instances, make_splits, read_jsonl, retrieve_top_k, vocab_overlap, write_jsonl, LabelStats, LabeledQAInstance, RawAnswerRecord,
    RawReviewRecord, RetrievalIndex, ReviewSet, WordVectors, RETRIEVAL_DIM,
};
use crate::embedding::{load_pretrained_vectors, TokenSeq, WORD_TABLE};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{self, apply_frozen_rows, init_params, ModelInput};
use crate::nli::{self, build_vocab, init_nli_params, parse_nli_corpus, NliInput, PretrainEpoch};
use crate::ra::{load_transferred, TransferRecord};
use crate::tensor::{Graph, ParamStore, Tensor};
use crate::text::{tokenize, Vocabulary};
use crate::train::{score_all, train_model, EpochRecord};

pub const TRAIN_SHARD: &str = "train.jsonl";
pub const VALID_SHARD: &str = "valid.jsonl";
pub const TEST_SHARD: &str = "test.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const PRETRAIN_FILE: &str = "pretrain.ckpt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((file_name(p), sha256_file(p)?))).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta<T: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub config_fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub details: T,
}

impl<T: Serialize> RunMeta<T> {
    fn new(command: &'static str, cfg: &RahpConfig, inputs: BTreeMap<String, String>, details: T) -> Self {
        RunMeta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config: cfg.to_map(),
            config_fingerprint: cfg.fingerprint(),
            inputs,
            outputs: BTreeMap::new(),
            details,
        }
    }
}

/// Vectors used to rank review sentences: the word-vector file when given,
/// hashed vectors otherwise.
pub fn retrieval_vectors(cfg: &RahpConfig, vectors: Option<&Path>) -> Result<WordVectors> {
    match vectors {
        Some(p) => WordVectors::from_file(p, cfg.word_dim, None),
        None => Ok(WordVectors::hashed(RETRIEVAL_DIM)),
    }
}

/// Vocabulary over the questions, answers and retrieved reviews of a shard.
pub fn shard_vocab(instances: &[LabeledQAInstance]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for inst in instances {
        let reviews = inst.reviews.filled().map(|s| s.text.as_str());
        for text in [inst.question.as_str(), inst.answer.as_str()].into_iter().chain(reviews) {
            for t in tokenize(text) {
                v.add(&t);
            }
        }
    }
    v.freeze();
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub answers_read: usize,
    pub reviews_read: usize,
    pub indexed_sentences: usize,
    pub helpful: usize,
    pub unhelpful: usize,
    pub discarded: usize,
    pub empty_text: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub vocab_size: usize,
}

/// Labels the answers, retrieves reviews, splits 80/10/10 and writes the
/// shards and the training vocabulary to `out_dir`.
pub fn prepare(cfg: &RahpConfig, answers: &Path, reviews: &Path, vectors: Option<&Path>, out_dir: &Path) -> Result<PrepareSummary> {
    cfg.validate()?;
    let raw_answers: Vec<RawAnswerRecord> = read_jsonl(answers)?;
    let raw_reviews: Vec<RawReviewRecord> = read_jsonl(reviews)?;
    let wv = retrieval_vectors(cfg, vectors)?;
    let index = RetrievalIndex::build(&raw_reviews, &wv);
    let (
        instances,
        LabelStats {
            helpful,
            unhelpful,
            discarded,
            empty_text,
        },
    ) = build_instances(&raw_answers, &index, &wv, cfg.k, cfg.retrieval_query)?;
    let split = make_splits(&instances, cfg.seed)?;
    let vocab = shard_vocab(&split.train);

    create_dir(out_dir)?;
    let out = |n: &str| out_dir.join(n);
    write_jsonl(&out(TRAIN_SHARD), &split.train)?;
    write_jsonl(&out(VALID_SHARD), &split.valid)?;
    write_jsonl(&out(TEST_SHARD), &split.test)?;
    vocab.save(&out(VOCAB_FILE))?;

    let summary = PrepareSummary {
        answers_read: raw_answers.len(),
        reviews_read: raw_reviews.len(),
        indexed_sentences: index.num_sentences(),
        helpful,
        unhelpful,
        discarded,
        empty_text,
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
        vocab_size: vocab.len(),
    };
    let mut inputs = vec![answers, reviews];
    inputs.extend(vectors);
    let mut meta = RunMeta::new("prepare", cfg, hashes(&inputs)?, summary.clone());
    let (a, b, c, d) = (out(TRAIN_SHARD), out(VALID_SHARD), out(TEST_SHARD), out(VOCAB_FILE));
    meta.outputs = hashes(&[&a, &b, &c, &d])?;
    write_json(&out("prepare_meta.json"), &meta)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainSummary {
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub vocab_size: usize,
    pub best_epoch: usize,
    pub history: Vec<PretrainEpoch>,
}

/// Pre-trains the inference network on `corpus` and writes the transferable
/// parameters and the vocabulary they index to `out_dir`.
pub fn pretrain(
    cfg: &RahpConfig,
    corpus: &Path,
    valid_corpus: Option<&Path>,
    vectors: Option<&Path>,
    out_dir: &Path,
) -> Result<PretrainSummary> {
    cfg.validate()?;
    let (train_pairs, _) = parse_nli_corpus(corpus)?;
    if train_pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no usable inference pairs", corpus.display())));
    }
    let valid_pairs = match valid_corpus {
        Some(p) => parse_nli_corpus(p)?.0,
        None => Vec::new(),
    };
    let vocab = build_vocab(&train_pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = init_nli_params(cfg, vocab.len(), &mut rng)?;
    let mut pretrained_rows = None;
    if let Some(v) = vectors {
        let (table, stats) = load_pretrained_vectors(v, &vocab, cfg.word_dim, &mut rng)?;
        store.insert(WORD_TABLE, table);
        pretrained_rows = Some(stats.pretrained_rows);
    }
    apply_frozen_rows(&mut store, pretrained_rows.as_deref(), cfg.freeze_pretrained);
    let encode = |xs: &[nli::NliInstance]| xs.iter().map(|x| NliInput::encode(x, &vocab, cfg)).collect::<Result<Vec<_>>>();
    let train = encode(&train_pairs)?;
    let valid = encode(&valid_pairs)?;
    let outcome = nli::pretrain(cfg, store, &train, &valid)?;

    create_dir(out_dir)?;
    let ckpt = out_dir.join(PRETRAIN_FILE);
    let vocab_path = out_dir.join(VOCAB_FILE);
    nli::save_pretrained(&ckpt, &outcome.params, cfg, &BTreeMap::new())?;
    vocab.save(&vocab_path)?;
    let summary = PretrainSummary {
        train_pairs: train.len(),
        valid_pairs: valid.len(),
        vocab_size: vocab.len(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    };
    let mut inputs = vec![corpus];
    inputs.extend(valid_corpus);
    inputs.extend(vectors);
    let mut meta = RunMeta::new("pretrain", cfg, hashes(&inputs)?, summary.clone());
    meta.outputs = hashes(&[&ckpt, &vocab_path])?;
    write_json(&out_dir.join("pretrain_meta.json"), &meta)?;
    Ok(summary)
}

pub fn encode_instances(instances: &[LabeledQAInstance], vocab: &Vocabulary, cfg: &RahpConfig) -> Result<Vec<ModelInput>> {
    instances.iter().map(|i| ModelInput::encode(i, vocab, cfg)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub train_instances: usize,
    pub valid_instances: usize,
    pub vocab_size: usize,
    pub parameters: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub transfer: Option<TransferRecord>,
    pub history: Vec<EpochRecord>,
}

/// Trains a model on the shards in `data_dir` and writes the best
/// checkpoint, vocabulary and configuration to `out_dir`. With `pretrained`
/// the vocabulary starts from the pre-training vocabulary and the
/// transferable modules are initialized from its checkpoint.
pub fn train(cfg: &RahpConfig, data_dir: &Path, out_dir: &Path, pretrained: Option<&Path>, vectors: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_path = data_dir.join(TRAIN_SHARD);
    let valid_path = data_dir.join(VALID_SHARD);
    let train_set: Vec<LabeledQAInstance> = read_jsonl(&train_path)?;
    let valid_set: Vec<LabeledQAInstance> = if valid_path.exists() {
        read_jsonl(&valid_path)?
    } else {
        Vec::new()
    };
    if train_set.is_empty() {
        return Err(Error::InvalidArgument(format!("{} is empty", train_path.display())));
    }
    let data_vocab = Vocabulary::load(&data_dir.join(VOCAB_FILE))?;
    let mut vocab = match pretrained {
        Some(dir) => Vocabulary::load(&dir.join(VOCAB_FILE))?,
        None => Vocabulary::new(),
    };
    vocab.unfreeze();
    for w in data_vocab.words() {
        vocab.add(w);
    }
    vocab.freeze();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = init_params(cfg, vocab.len(), &mut rng)?;
    let mut pretrained_rows = None;
    if let Some(v) = vectors {
        let (table, stats) = load_pretrained_vectors(v, &vocab, cfg.word_dim, &mut rng)?;
        store.insert(WORD_TABLE, table);
        pretrained_rows = Some(stats.pretrained_rows);
    }
    let transfer = match pretrained {
        Some(dir) => {
            let source = nli::load_pretrained(&dir.join(PRETRAIN_FILE))?;
            let rec = load_transferred(&mut store, &source)?;
            log::info!(
                "transferred {} tensors ({} word rows); {} tensors freshly initialized",
                rec.copied.len(),
                rec.word_rows_copied,
                rec.freshly_initialized.len()
            );
            Some(rec)
        }
        None => None,
    };
    apply_frozen_rows(&mut store, pretrained_rows.as_deref(), cfg.freeze_pretrained);

    let train_inputs = encode_instances(&train_set, &vocab, cfg)?;
    let valid_inputs = encode_instances(&valid_set, &vocab, cfg)?;
    let parameters = store.num_values();
    let outcome = train_model(cfg, store, &train_inputs, &valid_inputs)?;

    create_dir(out_dir)?;
    let ckpt = out_dir.join(MODEL_FILE);
    let vocab_path = out_dir.join(VOCAB_FILE);
    let cfg_path = out_dir.join(CONFIG_FILE);
    let mut extra = BTreeMap::new();
    extra.insert("best_epoch".to_string(), outcome.best_epoch.to_string());
    model::save_checkpoint(&ckpt, &outcome.best, cfg, &extra)?;
    vocab.save(&vocab_path)?;
    cfg.save(&cfg_path)?;

    let summary = TrainSummary {
        train_instances: train_inputs.len(),
        valid_instances: valid_inputs.len(),
        vocab_size: vocab.len(),
        parameters,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        transfer,
        history: outcome.history,
    };
    let mut inputs = vec![train_path.as_path()];
    if valid_path.exists() {
        inputs.push(&valid_path);
    }
    let pre_ckpt = pretrained.map(|d| d.join(PRETRAIN_FILE));
    inputs.extend(pre_ckpt.as_deref());
    inputs.extend(vectors);
    let mut meta = RunMeta::new("train", cfg, hashes(&inputs)?, summary.clone());
    meta.outputs = hashes(&[&ckpt, &vocab_path, &cfg_path])?;
    write_json(&out_dir.join("train_meta.json"), &meta)?;
    if let Some(msg) = outcome.diverged {
        return Err(Error::Diverged(format!(
            "{msg}; last good checkpoint written to {}",
            ckpt.display()
        )));
    }
    Ok(summary)
}

/// A trained model directory loaded for inference.
pub struct LoadedModel {
    pub cfg: RahpConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl LoadedModel {
    /// Loads `model_dir`. Settings that do not change the architecture (for
    /// example the decision threshold) may be overridden by `overrides`.
    pub fn load(model_dir: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RahpConfig::load(&model_dir.join(CONFIG_FILE))?;
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        let vocab = Vocabulary::load(&model_dir.join(VOCAB_FILE))?;
        let (params, _) = model::load_checkpoint(&model_dir.join(MODEL_FILE), &cfg)?;
        if params.get(WORD_TABLE).map(|t| t.rows()) != Some(vocab.len()) {
            return Err(Error::Checkpoint(format!(
                "{} does not match vocabulary of {} words",
                MODEL_FILE,
                vocab.len()
            )));
        }
        Ok(LoadedModel { cfg, vocab, params })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoredInstance {
    pub id: String,
    pub score: f64,
    pub label: bool,
}

/// Scores `shard` and computes the report; with `dump` writes
/// `instance_id,score,label` rows. Scores are written with full precision
/// so metrics can be recomputed exactly from the dump.
pub fn evaluate(model: &LoadedModel, shard: &Path, dump: Option<&Path>) -> Result<(EvalReport, Vec<ScoredInstance>)> {
    let instances: Vec<LabeledQAInstance> = read_jsonl(shard)?;
    if instances.is_empty() {
        return Err(Error::InvalidArgument(format!("{} is empty", shard.display())));
    }
    let inputs = encode_instances(&instances, &model.vocab, &model.cfg)?;
    let scores = score_all(&model.params, &model.cfg, &inputs)?;
    let labels: Vec<bool> = instances.iter().map(|i| i.helpful).collect();
    let report = EvalReport::compute(&scores, &labels, model.cfg.threshold, &model.cfg.fingerprint())?;
    let scored: Vec<ScoredInstance> = instances
        .iter()
        .zip(&scores)
        .map(|(i, &score)| ScoredInstance {
            id: i.id.clone(),
            score,
            label: i.helpful,
        })
        .collect();
    if let Some(path) = dump {
        write_score_dump(path, &scored)?;
    }
    Ok((report, scored))
}

pub fn write_score_dump(path: &Path, rows: &[ScoredInstance]) -> Result<()> {
    let mut out = String::from("instance_id,score,label\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.id, r.score, r.label as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_score_dump(path: &Path) -> Result<Vec<ScoredInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let [id, score, label] = f[..] else {
                return Err(parse_err(n + 1, "expected 3 fields".into()));
            };
            Ok(ScoredInstance {
                id: id.to_string(),
                score: score.parse().map_err(|e| parse_err(n + 1, format!("{e}")))?,
                label: match label {
                    "1" => true,
                    "0" => false,
                    other => return Err(parse_err(n + 1, format!("bad label {other:?}"))),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub probability: f64,
    pub helpful: bool,
    pub evidence: ReviewSet,
    pub known_product: bool,
}

/// Scores one question/answer pair, retrieving evidence for `product_id`
/// from `reviews` when given.
pub fn predict(
    model: &LoadedModel,
    question: &str,
    answer: &str,
    product_id: &str,
    reviews: Option<&Path>,
    vectors: Option<&Path>,
) -> Result<Prediction> {
    let cfg = &model.cfg;
    let records: Vec<RawReviewRecord> = match reviews {
        Some(p) => read_jsonl::<RawReviewRecord>(p)?
            .into_iter()
            .filter(|r| r.product_id == product_id)
            .collect(),
        None => Vec::new(),
    };
    let wv = retrieval_vectors(cfg, vectors)?;
    let index = RetrievalIndex::build(&records, &wv);
    let known_product = index.sentences(product_id).is_some();
    let query = match cfg.retrieval_query {
        crate::config::RetrievalQuery::Question => question.to_string(),
        crate::config::RetrievalQuery::QuestionAnswer => format!("{question} {answer}"),
    };
    let evidence = retrieve_top_k(&query, product_id, &index, &wv, cfg.k);
    let inst = LabeledQAInstance {
        id: "query".into(),
        product_id: product_id.into(),
        question: question.into(),
        answer: answer.into(),
        votes: [0, 0],
        helpful: false,
        reviews: evidence.clone(),
    };
    let input = ModelInput::encode(&inst, &model.vocab, cfg)?;
    let probability = model::predict(&model.params, cfg, &input)?;
    Ok(Prediction {
        probability,
        helpful: probability >= cfg.threshold,
        evidence,
        known_product,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn attention_table(rows: &[String], cols: &[String], weights: &Tensor) -> String {
    let mut out = String::from("token");
    for c in cols {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for (r, name) in rows.iter().enumerate() {
        out.push_str(&csv_field(name));
        for v in weights.row_slice(r) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Dual-attention weights for a question/answer pair as CSV tables:
/// `(alpha_q, alpha_a)`, question tokens over answer tokens and the reverse.
pub fn attention_csv(model: &LoadedModel, question: &str, answer: &str) -> Result<(String, String)> {
    let cfg = &model.cfg;
    let mut q_toks = tokenize(question);
    let mut a_toks = tokenize(answer);
    q_toks.truncate(cfg.max_question_len);
    a_toks.truncate(cfg.max_answer_len);
    let input = ModelInput {
        question: TokenSeq::encode(&q_toks, &model.vocab, cfg.max_question_len, cfg)?,
        answer: TokenSeq::encode(&a_toks, &model.vocab, cfg.max_answer_len, cfg)?,
        reviews: vec![None; cfg.k],
        label: 0.0,
    };
    let mut g = Graph::new(cfg.precision);
    let out = model::forward(&mut g, &model.params, cfg, &input, None)?;
    Ok((
        attention_table(&q_toks, &a_toks, g.value(out.alignment.alpha_q)),
        attention_table(&a_toks, &q_toks, g.value(out.alignment.alpha_a)),
    ))
}

/// Texts of a corpus file: for JSON lines the question, answer, review and
/// sentence fields that are present; otherwise each line.
pub fn read_corpus_texts(path: &Path) -> Result<Vec<String>> {
    const FIELDS: [&str; 5] = ["question", "answer", "review_text", "sentence1", "sentence2"];
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim_start().starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            out.extend(FIELDS.iter().filter_map(|f| v.get(f)?.as_str().map(String::from)));
        } else if !line.trim().is_empty() {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

/// `(category, ratio)` of each category corpus against `reference`.
pub fn overlap(reference: &Path, categories: &[(String, PathBuf)]) -> Result<Vec<(String, f64)>> {
    let reference_texts = read_corpus_texts(reference)?;
    categories
        .iter()
        .map(|(name, path)| Ok((name.clone(), vocab_overlap(&read_corpus_texts(path)?, &reference_texts)?)))
        .collect()
}

pub fn write_overlap_csv(out: &mut impl Write, rows: &[(String, f64)]) -> std::io::Result<()> {
    writeln!(out, "category,ratio")?;
    for (name, r) in rows {
        writeln!(out, "{name},{r:.6}")?;
    }
    Ok(())
}
