//! Review–answer coherence: encode the answer and each retrieved review with
//! the inference BiLSTM, attend over review tokens with the encoded
//! question, and score each review against the answer.
//!
//! The encoder `bilstm_ra`, the head `mlp_ra` and the context encoder
//! `bilstm_c` can be initialized from a pre-trained inference network with
//! [`load_transferred`].

use serde::{Deserialize, Serialize};

use crate::embedding::WORD_TABLE;
use crate::encoder::{bilstm_encode, final_state};
use crate::error::{Error, Result};
use crate::layers::{mlp, Dropout};
use crate::tensor::{Graph, ParamStore, Var};

pub const BILSTM_C: &str = "bilstm_c";
pub const BILSTM_RA: &str = "bilstm_ra";
pub const MLP_RA: &str = "mlp_ra";

/// Tensor-name prefixes that make up a pre-training export.
pub const TRANSFER_PREFIXES: [&str; 4] = ["embedding.", "bilstm_c.", "bilstm_ra.", "mlp_ra."];
/// Prefixes that must be present in any export.
pub const REQUIRED_TRANSFER_PREFIXES: [&str; 3] = ["bilstm_c.", "bilstm_ra.", "mlp_ra."];

#[derive(Debug, Clone, Copy)]
pub struct ReviewEncoding {
    pub o_r: Var,
    pub beta: Option<Var>,
    pub v_r: Option<Var>,
    pub m_r: Var,
    pub s_ra: Var,
}

/// Final state of `bilstm_ra` over a context-encoded sequence. Used for the
/// answer (`m_a`) and for each review (`o_r`).
pub fn ra_encode(g: &mut Graph, store: &ParamStore, context: Var, mask: &[bool]) -> Result<Var> {
    let h = bilstm_encode(g, store, BILSTM_RA, context, mask)?;
    final_state(g, h, mask)
}

/// `β = softmax(o_q · c_r[j])` over real review tokens and
/// `v_r = Σ β_j c_r[j]`.
pub fn q_to_r_attention(g: &mut Graph, o_q: Var, c_r: Var, mask: &[bool]) -> Result<(Var, Var)> {
    let (dq, dr) = (g.shape(o_q)[1], g.shape(c_r)[1]);
    if dq != dr || g.shape(o_q)[0] != 1 {
        return Err(Error::shape(
            "q_to_r_attention",
            format!("{:?} vs {:?}", g.shape(o_q), g.shape(c_r)),
        ));
    }
    let u = g.matmul_nt(o_q, c_r)?;
    let beta = g.softmax_rows(u, mask)?;
    let v = g.matmul(beta, c_r)?;
    Ok((beta, v))
}

pub fn compose_review(g: &mut Graph, v_r: Var, o_r: Var) -> Result<Var> {
    g.add(v_r, o_r)
}

/// `MLP_ra([m_r; m_a])`, returned as raw logits.
pub fn ra_predict(g: &mut Graph, store: &ParamStore, m_r: Var, m_a: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    let (a, b) = (g.shape(m_r)[1], g.shape(m_a)[1]);
    if a != b {
        return Err(Error::shape("ra_predict", format!("m_r width {a} vs m_a width {b}")));
    }
    let x = g.concat_cols(&[m_r, m_a])?;
    mlp(g, store, MLP_RA, x, dropout)
}

/// Full per-review branch. `o_q` is `None` when question-to-review attention
/// is disabled, in which case `m_r = o_r`.
pub fn score_review(
    g: &mut Graph,
    store: &ParamStore,
    c_r: Var,
    mask: &[bool],
    o_q: Option<Var>,
    m_a: Var,
    dropout: Option<&mut Dropout>,
) -> Result<ReviewEncoding> {
    let o_r = ra_encode(g, store, c_r, mask)?;
    let (beta, v_r, m_r) = match o_q {
        Some(o_q) => {
            let (beta, v_r) = q_to_r_attention(g, o_q, c_r, mask)?;
            let m_r = compose_review(g, v_r, o_r)?;
            (Some(beta), Some(v_r), m_r)
        }
        None => (None, None, o_r),
    };
    let s_ra = ra_predict(g, store, m_r, m_a, dropout)?;
    Ok(ReviewEncoding { o_r, beta, v_r, m_r, s_ra })
}

/// Where each transferred tensor came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub copied: Vec<String>,
    pub word_rows_copied: usize,
    pub freshly_initialized: Vec<String>,
}

/// Copies pre-trained `bilstm_c.*`, `bilstm_ra.*`, `mlp_ra.*` (and, when
/// present in `source`, `embedding.*`) into `target`.
///
/// Every transferable tensor in `target` must exist in `source` with the same
/// shape; the word table is the exception: its first `source` rows are
/// copied when `target` extends the source vocabulary. Nothing in `target`
/// changes on error.
pub fn load_transferred(target: &mut ParamStore, source: &ParamStore) -> Result<TransferRecord> {
    let with_embeddings = source.names().any(|n| n.starts_with("embedding."));
    let wanted: Vec<String> = target
        .names()
        .filter(|n| REQUIRED_TRANSFER_PREFIXES.iter().any(|p| n.starts_with(p)) || (with_embeddings && n.starts_with("embedding.")))
        .map(String::from)
        .collect();

    let missing: Vec<String> = wanted.iter().filter(|n| !source.contains(n)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingTensors(missing));
    }
    let mut bad = Vec::new();
    for name in &wanted {
        let (t, s) = (target.get(name).unwrap(), source.get(name).unwrap());
        let ok = if name == WORD_TABLE {
            t.cols() == s.cols() && s.rows() <= t.rows()
        } else {
            t.shape() == s.shape()
        };
        if !ok {
            bad.push(format!("{name}: expected {:?}, checkpoint has {:?}", t.shape(), s.shape()));
        }
    }
    if !bad.is_empty() {
        return Err(Error::TensorMismatch(bad));
    }

    let mut record = TransferRecord::default();
    for name in &wanted {
        let s = source.get(name).unwrap().clone();
        if name == WORD_TABLE {
            let t = target.get_mut(name).unwrap();
            let n = s.numel();
            t.data_mut()[..n].copy_from_slice(s.data());
            record.word_rows_copied = s.rows();
        } else {
            target.insert(name.clone(), s);
        }
        record.copied.push(name.clone());
    }
    record.freshly_initialized = target
        .names()
        .filter(|n| !wanted.iter().any(|w| w == n))
        .map(String::from)
        .collect();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_bilstm;
    use crate::tensor::{Precision, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_query_gives_mean() {
        let mut g = Graph::new(Precision::F64);
        let o_q = g.constant(Tensor::row(vec![0.0, 0.0]));
        let c_r = g.constant(mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 8.0, 0.0]));
        let (beta, v) = q_to_r_attention(&mut g, o_q, c_r, &[true; 3]).unwrap();
        assert!(g.value(beta).data().iter().all(|b| (b - 1.0 / 3.0).abs() < 1e-15));
        let v = g.value(v).data();
        assert!((v[0] - 4.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_attention_selects_a_row() {
        // logits +50 and -50
        let mut g = Graph::new(Precision::F64);
        let o_q = g.constant(Tensor::row(vec![1.0, 0.0]));
        let c_r = g.constant(mat(2, 2, &[50.0, 1.0, -50.0, 7.0]));
        let (beta, v) = q_to_r_attention(&mut g, o_q, c_r, &[true; 2]).unwrap();
        let b = g.value(beta).data();
        assert!(b[0] == 1.0 && b[1] < 1e-40, "{b:?}");
        let v = g.value(v).data();
        assert!((v[0] - 50.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_token_hand_oracle() {
        let c = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let q = [0.5, -1.0];
        let u: Vec<f64> = c.iter().map(|r| r[0] * q[0] + r[1] * q[1]).collect();
        let z: f64 = u.iter().map(|x| x.exp()).sum();
        let beta: Vec<f64> = u.iter().map(|x| x.exp() / z).collect();
        let v = [
            beta.iter().zip(&c).map(|(b, r)| b * r[0]).sum::<f64>(),
            beta.iter().zip(&c).map(|(b, r)| b * r[1]).sum::<f64>(),
        ];
        let mut g = Graph::new(Precision::F64);
        let o_q = g.constant(Tensor::row(q.to_vec()));
        let c_r = g.constant(mat(3, 2, &c.concat()));
        let (bv, vv) = q_to_r_attention(&mut g, o_q, c_r, &[true; 3]).unwrap();
        for (a, b) in g.value(bv).data().iter().zip(&beta) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in g.value(vv).data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_review_tokens_get_zero_weight() {
        let mut g = Graph::new(Precision::F64);
        let o_q = g.constant(Tensor::row(vec![1.0, 1.0]));
        let c_r = g.constant(mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]));
        let (beta, _) = q_to_r_attention(&mut g, o_q, c_r, &[true, true, false]).unwrap();
        assert_eq!(g.value(beta).data()[2], 0.0);
        assert!(q_to_r_attention(&mut g, o_q, c_r, &[false; 3]).is_err());
    }

    #[test]
    fn composition() {
        let mut g = Graph::new(Precision::F64);
        let o = g.constant(Tensor::row(vec![1.5, -2.0, 0.25]));
        let zero = g.constant(Tensor::row(vec![0.0; 3]));
        let neg = g.constant(Tensor::row(vec![-1.5, 2.0, -0.25]));
        let other = g.constant(Tensor::row(vec![0.1, 0.2, 0.3]));
        let a = compose_review(&mut g, zero, o).unwrap();
        assert_eq!(g.value(a).data(), g.value(o).data());
        let b = compose_review(&mut g, neg, o).unwrap();
        assert_eq!(g.value(b).data(), &[0.0; 3]);
        let c = compose_review(&mut g, other, o).unwrap();
        assert_eq!(g.value(c).data(), &[1.6, -1.8, 0.55]);
        let short = g.constant(Tensor::row(vec![0.0; 2]));
        assert!(compose_review(&mut g, short, o).is_err());
    }

    fn transfer_store(hidden: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::default();
        init_bilstm(&mut s, BILSTM_C, 5, hidden, &mut rng).unwrap();
        init_bilstm(&mut s, BILSTM_RA, 2 * hidden, hidden, &mut rng).unwrap();
        crate::layers::init_mlp(&mut s, MLP_RA, 4 * hidden, 6, 3, &mut rng).unwrap();
        s
    }

    #[test]
    fn transfer_copies_exactly() {
        let src = transfer_store(3, 1);
        let mut dst = transfer_store(3, 2);
        dst.insert("qa.mlp.l1.bias", Tensor::row(vec![0.0; 2]));
        let rec = load_transferred(&mut dst, &src).unwrap();
        for (name, t) in src.iter() {
            assert_eq!(dst.get(name).unwrap(), t);
        }
        assert_eq!(rec.copied.len(), src.len());
        assert_eq!(rec.freshly_initialized, vec!["qa.mlp.l1.bias".to_string()]);
    }

    #[test]
    fn transfer_rejects_wrong_hidden_size() {
        let src = transfer_store(4, 1);
        let mut dst = transfer_store(3, 2);
        let before = dst.clone();
        let err = load_transferred(&mut dst, &src).unwrap_err().to_string();
        assert!(err.contains("bilstm_ra."), "{err}");
        assert_eq!(dst, before);
    }

    #[test]
    fn transfer_rejects_missing_tensor() {
        let mut src = transfer_store(3, 1);
        src.remove("mlp_ra.l2.bias");
        let mut dst = transfer_store(3, 2);
        assert!(matches!(load_transferred(&mut dst, &src), Err(Error::MissingTensors(v)) if v == ["mlp_ra.l2.bias"]));
    }
}
