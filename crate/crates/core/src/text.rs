//! Tokenization and vocabularies.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace, and emits every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Dense word index with `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
    frozen: bool,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            index: HashMap::new(),
            words: Vec::new(),
            frozen: false,
        };
        v.words.push(PAD_TOKEN.to_string());
        v.words.push(UNK_TOKEN.to_string());
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        v
    }

    /// Adds `word` unless the vocabulary is frozen; returns its index (UNK
    /// when frozen and unseen).
    pub fn add(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        if self.frozen {
            return UNK;
        }
        let i = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), i);
        i
    }

    pub fn get(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, i: usize) -> Option<&str> {
        self.words.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `word<TAB>index` per line, in index order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, w) in self.words.iter().enumerate() {
            let _ = writeln!(s, "{w}\t{i}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Reads a dump written by [`Vocabulary::save`]. The result is frozen.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v = Vocabulary {
            index: HashMap::new(),
            words: Vec::new(),
            frozen: true,
        };
        for (n, line) in text.lines().enumerate() {
            let parse_err = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: message.to_string(),
            };
            let (w, i) = line.rsplit_once('\t').ok_or_else(|| parse_err("expected word<TAB>index"))?;
            let i: usize = i.parse().map_err(|_| parse_err("bad index"))?;
            if i != v.words.len() {
                return Err(parse_err("indices must be dense and ordered"));
            }
            v.words.push(w.to_string());
            v.index.insert(w.to_string(), i);
        }
        if v.word(PAD) != Some(PAD_TOKEN) || v.word(UNK) != Some(UNK_TOKEN) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "vocabulary must start with <pad>, <unk>".into(),
            });
        }
        Ok(v)
    }
}

/// Fixed character inventory: `PAD = 0`, `UNK = 1`, then printable ASCII.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CharVocab;

impl CharVocab {
    const FIRST: u32 = 0x20;
    const LAST: u32 = 0x7e;

    pub fn len(&self) -> usize {
        2 + (Self::LAST - Self::FIRST + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, c: char) -> usize {
        let u = c as u32;
        if (Self::FIRST..=Self::LAST).contains(&u) {
            2 + (u - Self::FIRST) as usize
        } else {
            UNK
        }
    }

    /// Character ids of `word`, clamped to `max_len` and right-padded with
    /// PAD up to `min_len`.
    pub fn encode(&self, word: &str, max_len: usize, min_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = word.chars().take(max_len).map(|c| self.index(c)).collect();
        while ids.len() < min_len {
            ids.push(PAD);
        }
        ids
    }
}
