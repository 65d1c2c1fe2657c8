//! Word representations `e(w) = [e_c(w); e_g(w)]`: a character-level
//! convolutional embedding concatenated with a (pre-trained) word vector.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::config::RahpConfig;
use crate::error::{Error, Result};
use crate::tensor::{uniform_init, xavier_uniform_init, Graph, ParamStore, Tensor, Var};
use crate::text::{CharVocab, Vocabulary, PAD, UNK};

pub const WORD_TABLE: &str = "embedding.word";
pub const CHAR_TABLE: &str = "embedding.char";
/// Bound of the uniform distribution for randomly initialized embedding rows.
pub const EMBED_INIT_BOUND: f64 = 0.1;

pub fn conv_weight(width: usize) -> String {
    format!("embedding.conv{width}.weight")
}

pub fn conv_bias(width: usize) -> String {
    format!("embedding.conv{width}.bias")
}

/// A tokenized, index-encoded sequence. `mask[t]` is false for padding,
/// and all real positions precede padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub mask: Vec<bool>,
}

impl TokenSeq {
    /// Encodes `tokens`, truncated to `max_len`.
    pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize, cfg: &RahpConfig) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let tokens = &tokens[..tokens.len().min(max_len)];
        let cv = CharVocab;
        Ok(TokenSeq {
            words: tokens.iter().map(|t| vocab.get(t)).collect(),
            chars: tokens
                .iter()
                .map(|t| cv.encode(t, cfg.max_word_len, cfg.max_filter_width()))
                .collect(),
            mask: vec![true; tokens.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy with `extra` PAD positions appended.
    pub fn padded(&self, extra: usize) -> Self {
        let mut s = self.clone();
        s.words.extend(std::iter::repeat_n(PAD, extra));
        s.chars.extend(std::iter::repeat_n(Vec::new(), extra));
        s.mask.extend(std::iter::repeat_n(false, extra));
        s
    }
}

/// Outcome of loading a word-vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedStats {
    pub found: usize,
    pub coverage: f64,
    pub skipped_malformed: usize,
    /// Per vocabulary row: true when loaded from the file.
    pub pretrained_rows: Vec<bool>,
}

/// Random word table with a zero PAD row.
pub fn init_word_table<R: Rng + ?Sized>(vocab_len: usize, dim: usize, rng: &mut R) -> Result<Tensor> {
    let mut t = uniform_init(&[vocab_len, dim], EMBED_INIT_BOUND, rng)?;
    t.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
    Ok(t)
}

/// Builds the word table for `vocab`: rows of words present in the vector
/// file are copied verbatim, everything else is randomly initialized, and
/// PAD is zero.
///
/// Lines whose values do not parse as floats are skipped and counted; a line
/// with the wrong number of values is an error naming that line.
pub fn load_pretrained_vectors<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<(Tensor, PretrainedStats)> {
    let mut table = init_word_table(vocab.len(), dim, rng)?;
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pretrained_rows = vec![false; vocab.len()];
    let mut skipped = 0;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: std::result::Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
        let Ok(values) = values else {
            skipped += 1;
            continue;
        };
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected {dim} values for {word:?}, found {}", values.len()),
            });
        }
        if !vocab.contains(word) {
            continue;
        }
        let row = vocab.get(word);
        if row == PAD || row == UNK {
            continue;
        }
        for (dst, &v) in table.data_mut()[row * dim..(row + 1) * dim].iter_mut().zip(&values) {
            *dst = v as f64;
        }
        pretrained_rows[row] = true;
    }
    let found = pretrained_rows.iter().filter(|&&b| b).count();
    let real = vocab.len().saturating_sub(2).max(1);
    let stats = PretrainedStats {
        found,
        coverage: found as f64 / real as f64,
        skipped_malformed: skipped,
        pretrained_rows,
    };
    log::info!(
        "word vectors: {} of {} vocabulary words found ({:.1}%), {} malformed lines skipped",
        stats.found,
        real,
        100.0 * stats.coverage,
        stats.skipped_malformed
    );
    Ok((table, stats))
}

/// Reads the whole vector file into memory, keeping only `keep` words when
/// given.
pub fn read_vector_file(path: &Path, dim: usize, keep: Option<&HashSet<String>>) -> Result<Vec<(String, Vec<f32>)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if keep.is_some_and(|k| !k.contains(word)) {
            continue;
        }
        let Ok(values) = parts.map(str::parse::<f32>).collect::<std::result::Result<Vec<f32>, _>>() else {
            continue;
        };
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected {dim} values for {word:?}, found {}", values.len()),
            });
        }
        out.push((word.to_string(), values));
    }
    Ok(out)
}

/// Adds the character table and convolution filters to `store`.
pub fn init_char_params<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &RahpConfig, rng: &mut R) -> Result<()> {
    let mut table = uniform_init(&[CharVocab.len(), cfg.char_dim], EMBED_INIT_BOUND, rng)?;
    table.data_mut()[..cfg.char_dim].fill(0.0);
    store.insert(CHAR_TABLE, table);
    store.freeze_row(CHAR_TABLE, PAD);
    for &w in &cfg.filter_widths {
        store.insert(conv_weight(w), xavier_uniform_init(w * cfg.char_dim, cfg.char_filters, rng)?);
        store.insert(conv_bias(w), Tensor::zeros(&[cfg.char_filters]));
    }
    Ok(())
}

/// `e_c(w)`: for each filter width, a 1-D convolution over the character
/// embeddings followed by max-over-time pooling; the pooled blocks are
/// concatenated in `filter_widths` order. `char_ids` must already be padded
/// to at least the widest filter.
pub fn char_embed_word(g: &mut Graph, store: &ParamStore, cfg: &RahpConfig, char_ids: &[usize]) -> Result<Var> {
    let emb = g.embed_rows(store, CHAR_TABLE, char_ids)?;
    let mut blocks = Vec::with_capacity(cfg.filter_widths.len());
    for &w in &cfg.filter_widths {
        let windows = g.unfold(emb, w)?;
        let weight = g.param(store, &conv_weight(w))?;
        let bias = g.param(store, &conv_bias(w))?;
        let conv = g.matmul_nt(windows, weight)?;
        let conv = g.add_bias(conv, bias)?;
        blocks.push(g.max_rows(conv));
    }
    g.concat_cols(&blocks)
}

/// Convenience wrapper encoding a raw word first.
pub fn char_embed_str(g: &mut Graph, store: &ParamStore, cfg: &RahpConfig, word: &str) -> Result<Var> {
    let ids = CharVocab.encode(word, cfg.max_word_len, cfg.max_filter_width());
    char_embed_word(g, store, cfg, &ids)
}

/// `[L, embed_dim]` matrix whose row `t` is `[e_c(w_t); e_g(w_t)]`
/// (or `e_g` alone without character embeddings). Padding rows are zero.
pub fn embed_sequence(g: &mut Graph, store: &ParamStore, cfg: &RahpConfig, seq: &TokenSeq) -> Result<Var> {
    if seq.real_len() == 0 {
        return Err(Error::EmptySequence);
    }
    let words = g.embed_rows(store, WORD_TABLE, &seq.words)?;
    if cfg.no_char_embedding {
        return Ok(words);
    }
    let mut rows = Vec::with_capacity(seq.len());
    let mut pad_row = None;
    for (chars, &real) in seq.chars.iter().zip(&seq.mask) {
        if real {
            rows.push(char_embed_word(g, store, cfg, chars)?);
        } else {
            let z = *pad_row.get_or_insert_with(|| g.zeros(1, cfg.char_out_dim()));
            rows.push(z);
        }
    }
    let chars = g.stack_rows(&rows)?;
    g.concat_cols(&[chars, words])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use crate::text::tokenize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &RahpConfig) -> (ParamStore, Vocabulary) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vocab = Vocabulary::new();
        for w in ["the", "screen", "works", "?"] {
            vocab.add(w);
        }
        let mut store = ParamStore::default();
        store.insert(WORD_TABLE, init_word_table(vocab.len(), cfg.word_dim, &mut rng).unwrap());
        init_char_params(&mut store, cfg, &mut rng).unwrap();
        (store, vocab)
    }

    #[test]
    fn zero_filters_give_bias() {
        let cfg = RahpConfig::tiny();
        let (mut store, _) = setup(&cfg);
        for (i, &w) in cfg.filter_widths.iter().enumerate() {
            let n = store.get(&conv_weight(w)).unwrap().numel();
            store.get_mut(&conv_weight(w)).unwrap().data_mut()[..n].fill(0.0);
            let b = store.get_mut(&conv_bias(w)).unwrap();
            for (j, v) in b.data_mut().iter_mut().enumerate() {
                *v = (i * 10 + j) as f64;
            }
        }
        let mut g = Graph::new(Precision::F64);
        let out = char_embed_str(&mut g, &store, &cfg, "abc").unwrap();
        let expected: Vec<f64> = (0..cfg.filter_widths.len())
            .flat_map(|i| (0..cfg.char_filters).map(move |j| (i * 10 + j) as f64))
            .collect();
        assert_eq!(g.value(out).data(), expected.as_slice());
    }

    #[test]
    fn single_char_is_padded() {
        let cfg = RahpConfig::tiny();
        let (store, _) = setup(&cfg);
        let mut g = Graph::new(Precision::F64);
        let out = char_embed_str(&mut g, &store, &cfg, "x").unwrap();
        assert_eq!(g.shape(out), &[1, cfg.char_out_dim()]);
        assert!(g.value(out).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hand_computed_width_two_convolution() {
        // char_dim 1, one filter of width 2 with weights [2, -1], bias 0.5
        let cfg = RahpConfig {
            char_dim: 1,
            char_filters: 1,
            filter_widths: vec![2],
            ..RahpConfig::tiny()
        };
        let cv = CharVocab;
        let mut table = Tensor::zeros(&[cv.len(), 1]);
        table.data_mut()[cv.index('a')] = 1.0;
        table.data_mut()[cv.index('b')] = 3.0;
        let mut store = ParamStore::default();
        store.insert(CHAR_TABLE, table);
        store.insert(conv_weight(2), Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap());
        store.insert(conv_bias(2), Tensor::row(vec![0.5]));
        let mut g = Graph::new(Precision::F64);
        // "ab" padded to width 2 stays "ab": windows (a,b) only
        let out = char_embed_str(&mut g, &store, &cfg, "ab").unwrap();
        assert_eq!(g.value(out).data(), &[2.0 * 1.0 - 3.0 + 0.5]);
        // "ba": window (b,a) = 6 - 1 + 0.5
        let out = char_embed_str(&mut g, &store, &cfg, "ba").unwrap();
        assert_eq!(g.value(out).data(), &[5.5]);
        // "bab": windows (b,a)=5.5, (a,b)=-0.5 -> max 5.5
        let out = char_embed_str(&mut g, &store, &cfg, "bab").unwrap();
        assert_eq!(g.value(out).data(), &[5.5]);
    }

    #[test]
    fn sequence_rows_and_padding() {
        let cfg = RahpConfig::tiny();
        let (store, vocab) = setup(&cfg);
        let toks = tokenize("the screen the");
        let seq = TokenSeq::encode(&toks, &vocab, 40, &cfg).unwrap().padded(2);
        let mut g = Graph::new(Precision::F64);
        let m = embed_sequence(&mut g, &store, &cfg, &seq).unwrap();
        let v = g.value(m);
        assert_eq!(v.shape(), &[5, cfg.embed_dim()]);
        assert_eq!(v.row_slice(0), v.row_slice(2));
        assert!(v.row_slice(3).iter().chain(v.row_slice(4)).all(|&x| x == 0.0));
        assert!(TokenSeq::encode(&[], &vocab, 40, &cfg).is_err());
    }

    #[test]
    fn default_dims_give_500_wide_rows() {
        let cfg = RahpConfig::default();
        let (store, vocab) = setup(&cfg);
        let seq = TokenSeq::encode(&tokenize("works ?"), &vocab, 40, &cfg).unwrap();
        let mut g = Graph::new(Precision::F32);
        let m = embed_sequence(&mut g, &store, &cfg, &seq).unwrap();
        assert_eq!(g.shape(m), &[2, 500]);
    }

    #[test]
    fn pretrained_vectors_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        std::fs::write(&p, "screen 0.5 -0.25 1\nnot-in-vocab 1 2 3\nbroken x y z\n").unwrap();
        let mut vocab = Vocabulary::new();
        vocab.add("screen");
        vocab.add("battery");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, stats) = load_pretrained_vectors(&p, &vocab, 3, &mut rng).unwrap();
        assert_eq!(t.row_slice(2), &[0.5, -0.25, 1.0]);
        assert_eq!(t.row_slice(0), &[0.0, 0.0, 0.0]);
        assert!(t.row_slice(3).iter().all(|v| v.abs() <= EMBED_INIT_BOUND && *v != 0.0));
        assert_eq!(stats.found, 1);
        assert_eq!(stats.skipped_malformed, 1);
        assert_eq!(stats.coverage, 0.5);
        assert_eq!(stats.pretrained_rows, vec![false, false, true, false]);

        std::fs::write(&p, "screen 0.5 -0.25 1\nbattery 1 2\n").unwrap();
        let err = load_pretrained_vectors(&p, &vocab, 3, &mut rng).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(load_pretrained_vectors(&dir.path().join("missing"), &vocab, 3, &mut rng).is_err());
    }
}
