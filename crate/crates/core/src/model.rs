//! The assembled helpfulness model: context encoding, QA interaction,
//! review–answer coherence and the final classifier.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::config::RahpConfig;
use crate::data::records::LabeledQAInstance;
use crate::embedding::{embed_sequence, init_char_params, init_word_table, TokenSeq, CHAR_TABLE, WORD_TABLE};
use crate::encoder::{bilstm_encode, init_bilstm};
use crate::error::{Error, Result};
use crate::layers::{init_mlp, mlp, Dropout};
use crate::qa::{
    attended_representations, dual_attention, qa_encode_and_predict, similarity_matrix, AttentionAlignment, BILSTM_QA, MLP_QA,
};
use crate::ra::{ra_encode, score_review, BILSTM_C, BILSTM_RA, MLP_RA};
use crate::tensor::{self, Graph, ParamStore, Tensor, Var};
use crate::text::{tokenize, Vocabulary, PAD};

pub const MLP_P: &str = "mlp_p";

/// Tokenized inputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub question: TokenSeq,
    pub answer: TokenSeq,
    /// `None` for EMPTY slots.
    pub reviews: Vec<Option<TokenSeq>>,
    pub label: f64,
}

impl ModelInput {
    pub fn encode(inst: &LabeledQAInstance, vocab: &Vocabulary, cfg: &RahpConfig) -> Result<Self> {
        if inst.reviews.len() != cfg.k {
            return Err(Error::InvalidArgument(format!(
                "instance {} has {} review slots, config expects {}",
                inst.id,
                inst.reviews.len(),
                cfg.k
            )));
        }
        let question = TokenSeq::encode(&tokenize(&inst.question), vocab, cfg.max_question_len, cfg)?;
        let answer = TokenSeq::encode(&tokenize(&inst.answer), vocab, cfg.max_answer_len, cfg)?;
        let reviews = inst
            .reviews
            .0
            .iter()
            .map(|slot| {
                slot.as_ref().and_then(|s| {
                    let toks = tokenize(&s.text);
                    TokenSeq::encode(&toks, vocab, cfg.max_review_len, cfg).ok()
                })
            })
            .collect();
        Ok(ModelInput {
            question,
            answer,
            reviews,
            label: inst.label(),
        })
    }
}

/// Every intermediate of a forward pass that tests and tooling inspect.
#[derive(Debug, Clone)]
pub struct RahpOutputs {
    pub logit: Var,
    pub alignment: AttentionAlignment,
    pub s_qa: Var,
    pub o_q: Var,
    pub m_a: Option<Var>,
    pub s_ra: Vec<Var>,
    pub betas: Vec<Option<Var>>,
    pub final_input: Var,
}

/// Creates every parameter for `cfg` in a fixed order.
pub fn init_params<R: Rng + ?Sized>(cfg: &RahpConfig, vocab_len: usize, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let h = cfg.hidden;
    let mut s = ParamStore::default();
    s.insert(WORD_TABLE, init_word_table(vocab_len, cfg.word_dim, rng)?);
    s.freeze_row(WORD_TABLE, PAD);
    if !cfg.no_char_embedding {
        init_char_params(&mut s, cfg, rng)?;
    }
    init_bilstm(&mut s, BILSTM_C, cfg.embed_dim(), h, rng)?;
    init_bilstm(&mut s, BILSTM_QA, 4 * h, h, rng)?;
    init_mlp(&mut s, MLP_QA, 4 * h, cfg.mlp_hidden, cfg.d1, rng)?;
    if !cfg.no_ra_coherence {
        init_bilstm(&mut s, BILSTM_RA, 2 * h, h, rng)?;
        init_mlp(&mut s, MLP_RA, 4 * h, cfg.mlp_hidden, cfg.d2, rng)?;
    }
    init_mlp(&mut s, MLP_P, cfg.final_input_dim(), cfg.mlp_p_hidden, 1, rng)?;
    Ok(s)
}

/// Re-applies the fixed-row rules (PAD rows, optionally pre-trained word
/// rows) after parameters were replaced wholesale.
pub fn apply_frozen_rows(store: &mut ParamStore, pretrained_rows: Option<&[bool]>, freeze_pretrained: bool) {
    store.unfreeze_rows(WORD_TABLE);
    store.freeze_row(WORD_TABLE, PAD);
    if freeze_pretrained {
        if let Some(rows) = pretrained_rows {
            for (i, _) in rows.iter().enumerate().filter(|(_, &p)| p) {
                store.freeze_row(WORD_TABLE, i);
            }
        }
    }
    if store.contains(CHAR_TABLE) {
        store.freeze_row(CHAR_TABLE, PAD);
    }
}

/// Context encoding `c = BiLSTM_c(e(w))`.
pub fn context_encode(g: &mut Graph, store: &ParamStore, cfg: &RahpConfig, seq: &TokenSeq) -> Result<Var> {
    let e = embed_sequence(g, store, cfg, seq)?;
    bilstm_encode(g, store, BILSTM_C, e, &seq.mask)
}

/// Builds the full network for one instance and returns the helpfulness
/// logit (`ŷ = sigmoid(logit)`) together with its intermediates.
pub fn forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &RahpConfig,
    input: &ModelInput,
    mut dropout: Option<&mut Dropout>,
) -> Result<RahpOutputs> {
    let (q, a) = (&input.question, &input.answer);
    if q.real_len() == 0 || a.real_len() == 0 {
        return Err(Error::EmptySequence);
    }
    let c_q = context_encode(g, store, cfg, q)?;
    let c_a = context_encode(g, store, cfg, a)?;
    let sim = similarity_matrix(g, c_q, c_a)?;
    let alignment = dual_attention(g, sim, &q.mask, &a.mask)?;
    let (n_aq, n_qa) = attended_representations(g, &alignment, c_q, c_a)?;
    let qa = qa_encode_and_predict(g, store, c_q, n_aq, c_a, n_qa, &q.mask, &a.mask, dropout.as_deref_mut())?;

    let mut s_ra = Vec::new();
    let mut betas = Vec::new();
    let mut m_a = None;
    let mut parts = vec![qa.s_qa];
    if !cfg.no_ra_coherence {
        if input.reviews.len() != cfg.k {
            return Err(Error::InvalidArgument(format!(
                "{} review slots, expected {}",
                input.reviews.len(),
                cfg.k
            )));
        }
        let ma = ra_encode(g, store, c_a, &a.mask)?;
        m_a = Some(ma);
        let query = (!cfg.no_q_to_r_attention).then_some(qa.o_q);
        for slot in &input.reviews {
            match slot {
                Some(r) if r.real_len() > 0 => {
                    let c_r = context_encode(g, store, cfg, r)?;
                    let enc = score_review(g, store, c_r, &r.mask, query, ma, dropout.as_deref_mut())?;
                    s_ra.push(enc.s_ra);
                    betas.push(enc.beta);
                }
                _ => {
                    s_ra.push(g.zeros(1, cfg.d2));
                    betas.push(None);
                }
            }
        }
        parts.extend(&s_ra);
    }
    let final_input = g.concat_cols(&parts)?;
    let logit = mlp(g, store, MLP_P, final_input, dropout)?;
    Ok(RahpOutputs {
        logit,
        alignment,
        s_qa: qa.s_qa,
        o_q: qa.o_q,
        m_a,
        s_ra,
        betas,
        final_input,
    })
}

/// `ŷ ∈ (0, 1)` evaluated without recording gradients.
pub fn predict(store: &ParamStore, cfg: &RahpConfig, input: &ModelInput) -> Result<f64> {
    let mut g = Graph::new(cfg.precision);
    let out = forward(&mut g, store, cfg, input, None)?;
    Ok(probability(g.value(out.logit).item()))
}

/// Sigmoid kept strictly inside (0, 1) by evaluating at the clamped logit.
pub fn probability(logit: f64) -> f64 {
    let z = logit.clamp(-tensor_clamp(), tensor_clamp());
    1.0 / (1.0 + (-z).exp())
}

fn tensor_clamp() -> f64 {
    crate::tensor::LOGIT_CLAMP
}

/// Binary cross-entropy of probability `prob` against `label`, computed via
/// the logit clamped to `±15`.
pub fn loss(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    let z = (p / (1.0 - p)).ln().clamp(-tensor_clamp(), tensor_clamp());
    z.max(0.0) + (-z.abs()).exp().ln_1p() - label * z
}

/// Training objective for one instance: BCE on the logit.
pub fn loss_node(g: &mut Graph, out: &RahpOutputs, label: f64) -> Result<Var> {
    g.bce_with_logits(out.logit, label)
}

pub fn checkpoint_metadata(cfg: &RahpConfig, kind: &str) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> = cfg.arch_map().into_iter().map(|(k, v)| (format!("arch.{k}"), v)).collect();
    m.insert("kind".into(), kind.into());
    m.insert("config_fingerprint".into(), cfg.fingerprint());
    m
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, cfg: &RahpConfig, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut meta = checkpoint_metadata(cfg, "rahp");
    meta.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    tensor::save_checkpoint(path, store, &meta)
}

/// Loads a model checkpoint and verifies that it matches `cfg` in
/// architecture and every tensor shape.
pub fn load_checkpoint(path: &Path, cfg: &RahpConfig) -> Result<(ParamStore, BTreeMap<String, String>)> {
    let ck = tensor::load_checkpoint(path)?;
    if ck.metadata.get("kind").map(String::as_str) != Some("rahp") {
        return Err(Error::Checkpoint(format!("{} is not a model checkpoint", path.display())));
    }
    cfg.check_arch(&ck.metadata)?;
    let vocab_len = ck
        .params
        .get(WORD_TABLE)
        .map(Tensor::rows)
        .ok_or_else(|| Error::MissingTensors(vec![WORD_TABLE.into()]))?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let expected = init_params(cfg, vocab_len, &mut rng)?;
    expected.check_compatible(&ck.params)?;
    let mut params = ck.params;
    apply_frozen_rows(&mut params, None, false);
    Ok((params, ck.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert!((loss(0.5, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!((loss(0.5, 0.0) - 2f64.ln()).abs() < 1e-12);
        assert!((loss(0.999, 1.0) - -(0.999f64.ln())).abs() < 1e-9);
        for p in [0.01, 0.2, 0.73, 0.999] {
            assert!((loss(p, 1.0) - loss(1.0 - p, 0.0)).abs() < 1e-9);
        }
        assert!(loss(0.0, 1.0).is_finite() && loss(1.0, 0.0).is_finite());
    }

    #[test]
    fn probability_in_open_interval() {
        for z in [-1e9, -40.0, 0.0, 40.0, 1e9] {
            let p = probability(z);
            assert!(p > 0.0 && p < 1.0);
        }
    }
}
