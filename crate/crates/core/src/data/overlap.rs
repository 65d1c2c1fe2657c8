use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::text::tokenize;

pub fn vocabulary<S: AsRef<str>>(texts: &[S]) -> BTreeSet<String> {
    texts.iter().flat_map(|t| tokenize(t.as_ref())).collect()
}

/// `|V_a ∩ V_b| / |V_a|` over token types.
pub fn vocab_overlap<S: AsRef<str>, U: AsRef<str>>(corpus_a: &[S], corpus_b: &[U]) -> Result<f64> {
    let va = vocabulary(corpus_a);
    let vb = vocabulary(corpus_b);
    if va.is_empty() || vb.is_empty() {
        return Err(Error::InvalidArgument("vocabulary overlap needs two non-empty corpora".into()));
    }
    Ok(va.intersection(&vb).count() as f64 / va.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(vocab_overlap(&["a b c"], &["c b a"]).unwrap(), 1.0);
        assert_eq!(vocab_overlap(&["a b"], &["c d"]).unwrap(), 0.0);
        assert_eq!(vocab_overlap(&["u v w", "x y z"], &["u v w q"]).unwrap(), 0.5);
        assert!(vocab_overlap::<&str, &str>(&[], &["a"]).is_err());
        assert!(vocab_overlap(&["a"], &["  "]).is_err());
    }
}
