//! Question–answer interaction: dot-product dual attention, attended
//! representations, a shared BiLSTM over `[c; n]`, and the QA prediction
//! vector `s_qa`.

use crate::encoder::{bilstm_encode, final_state};
use crate::error::{Error, Result};
use crate::layers::{mlp, Dropout};
use crate::tensor::{Graph, ParamStore, Var};

pub const BILSTM_QA: &str = "bilstm_qa";
pub const MLP_QA: &str = "qa.mlp";

#[derive(Debug, Clone, Copy)]
pub struct AttentionAlignment {
    /// `S[j, k] = c_q[j] · c_a[k]`, `[L_q, L_a]`.
    pub similarity: Var,
    /// Row `j` attends over answer positions, `[L_q, L_a]`.
    pub alpha_q: Var,
    /// Row `k` attends over question positions, `[L_a, L_q]`.
    pub alpha_a: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct QaPrediction {
    pub o_q: Var,
    pub o_a: Var,
    pub s_qa: Var,
}

pub fn similarity_matrix(g: &mut Graph, c_q: Var, c_a: Var) -> Result<Var> {
    let (dq, da) = (g.shape(c_q)[1], g.shape(c_a)[1]);
    if dq != da {
        return Err(Error::shape("similarity_matrix", format!("inner dims {dq} vs {da}")));
    }
    g.matmul_nt(c_q, c_a)
}

pub fn dual_attention(g: &mut Graph, similarity: Var, mask_q: &[bool], mask_a: &[bool]) -> Result<AttentionAlignment> {
    let shape = g.shape(similarity).to_vec();
    if shape != [mask_q.len(), mask_a.len()] {
        return Err(Error::shape(
            "dual_attention",
            format!("S {shape:?} vs masks ({}, {})", mask_q.len(), mask_a.len()),
        ));
    }
    let alpha_q = g.softmax_rows(similarity, mask_a)?;
    let st = g.transpose(similarity);
    let alpha_a = g.softmax_rows(st, mask_q)?;
    Ok(AttentionAlignment {
        similarity,
        alpha_q,
        alpha_a,
    })
}

/// `(n_aq, n_qa)`: each question row as an attention-weighted sum of answer
/// rows, and vice versa.
pub fn attended_representations(g: &mut Graph, align: &AttentionAlignment, c_q: Var, c_a: Var) -> Result<(Var, Var)> {
    let n_aq = g.matmul(align.alpha_q, c_a)?;
    let n_qa = g.matmul(align.alpha_a, c_q)?;
    Ok((n_aq, n_qa))
}

/// Encodes `[c_q; n_aq]` and `[c_a; n_qa]` with the same BiLSTM, takes the
/// final states and maps `[o_q; o_a]` through the QA MLP.
#[allow(clippy::too_many_arguments)]
pub fn qa_encode_and_predict(
    g: &mut Graph,
    store: &ParamStore,
    c_q: Var,
    n_aq: Var,
    c_a: Var,
    n_qa: Var,
    mask_q: &[bool],
    mask_a: &[bool],
    dropout: Option<&mut Dropout>,
) -> Result<QaPrediction> {
    let q_in = g.concat_cols(&[c_q, n_aq])?;
    let a_in = g.concat_cols(&[c_a, n_qa])?;
    let q_enc = bilstm_encode(g, store, BILSTM_QA, q_in, mask_q)?;
    let a_enc = bilstm_encode(g, store, BILSTM_QA, a_in, mask_a)?;
    let o_q = final_state(g, q_enc, mask_q)?;
    let o_a = final_state(g, a_enc, mask_a)?;
    let joined = g.concat_cols(&[o_q, o_a])?;
    let s_qa = mlp(g, store, MLP_QA, joined, dropout)?;
    Ok(QaPrediction { o_q, o_a, s_qa })
}
