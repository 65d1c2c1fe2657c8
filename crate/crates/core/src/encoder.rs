//! LSTM cell and the bidirectional wrapper shared by every sequence encoder
//! in the model.
//!
//! Parameters for a direction live under `<prefix>.w_ih` (`4H × D_in`),
//! `<prefix>.w_hh` (`4H × H`) and `<prefix>.bias` (`4H`), with gate blocks in
//! the order input, forget, cell candidate, output.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{xavier_uniform_init, Graph, ParamStore, Tensor, Var};

pub const FORGET_BIAS: f64 = 1.0;

pub fn init_lstm<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{prefix}.w_ih"), xavier_uniform_init(input_dim, 4 * hidden, rng)?);
    store.insert(format!("{prefix}.w_hh"), xavier_uniform_init(hidden, 4 * hidden, rng)?);
    let mut bias = Tensor::zeros(&[4 * hidden]);
    bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS);
    store.insert(format!("{prefix}.bias"), bias);
    Ok(())
}

pub fn init_bilstm<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Result<()> {
    init_lstm(store, &format!("{prefix}.fwd"), input_dim, hidden, rng)?;
    init_lstm(store, &format!("{prefix}.bwd"), input_dim, hidden, rng)
}

struct Cell {
    w_hh: Var,
    hidden: usize,
}

impl Cell {
    /// Gated update from an already projected input `x W_ihᵀ + b`.
    fn step(&self, g: &mut Graph, projected: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hh = g.matmul_nt(h, self.w_hh)?;
        let gates = g.add(projected, hh)?;
        let n = self.hidden;
        let i = g.slice_cols(gates, 0, n)?;
        let f = g.slice_cols(gates, n, 2 * n)?;
        let cand = g.slice_cols(gates, 2 * n, 3 * n)?;
        let o = g.slice_cols(gates, 3 * n, 4 * n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        let h = g.mul(o, squashed)?;
        Ok((h, c))
    }
}

fn hidden_size(store: &ParamStore, prefix: &str) -> Result<usize> {
    let w = store
        .get(&format!("{prefix}.w_hh"))
        .ok_or_else(|| Error::MissingTensors(vec![format!("{prefix}.w_hh")]))?;
    Ok(w.cols())
}

/// One LSTM step on a `[1, D_in]` input with `[1, H]` state.
pub fn lstm_step(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hidden = hidden_size(store, prefix)?;
    for (what, v) in [("h_prev", h), ("c_prev", c)] {
        if g.shape(v) != [1, hidden] {
            return Err(Error::shape("lstm_step", format!("{what} {:?}, hidden {hidden}", g.shape(v))));
        }
    }
    let w_ih = g.param(store, &format!("{prefix}.w_ih"))?;
    let bias = g.param(store, &format!("{prefix}.bias"))?;
    let w_hh = g.param(store, &format!("{prefix}.w_hh"))?;
    let xw = g.matmul_nt(x, w_ih)?;
    let projected = g.add_bias(xw, bias)?;
    Cell { w_hh, hidden }.step(g, projected, h, c)
}

/// Runs one direction over the first `len` rows of `seq`; returns the hidden
/// state for each visited position in sequence order.
fn run_direction(g: &mut Graph, store: &ParamStore, prefix: &str, seq: Var, len: usize, reverse: bool) -> Result<Vec<Var>> {
    let hidden = hidden_size(store, prefix)?;
    let w_ih = g.param(store, &format!("{prefix}.w_ih"))?;
    let bias = g.param(store, &format!("{prefix}.bias"))?;
    let w_hh = g.param(store, &format!("{prefix}.w_hh"))?;
    let real = if len == g.shape(seq)[0] { seq } else { g.slice_rows(seq, 0, len)? };
    let xw = g.matmul_nt(real, w_ih)?;
    let projected = g.add_bias(xw, bias)?;
    let cell = Cell { w_hh, hidden };
    let mut h = g.zeros(1, hidden);
    let mut c = g.zeros(1, hidden);
    let mut out = vec![h; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..len).rev()) } else { Box::new(0..len) };
    for t in order {
        let x = g.row(projected, t)?;
        (h, c) = cell.step(g, x, h, c)?;
        out[t] = h;
    }
    Ok(out)
}

/// Number of real positions; the mask must be a prefix of trues.
pub fn real_length(mask: &[bool]) -> Result<usize> {
    let n = mask.iter().take_while(|&&m| m).count();
    if mask[n..].iter().any(|&m| m) {
        return Err(Error::InvalidArgument("mask must mark a prefix of real tokens".into()));
    }
    Ok(n)
}

/// `[L, D_in] -> [L, 2H]`: row `t` is `[forward h_t; backward h_t]`. Both
/// directions run over real tokens only; padding rows are zero.
pub fn bilstm_encode(g: &mut Graph, store: &ParamStore, prefix: &str, seq: Var, mask: &[bool]) -> Result<Var> {
    let total = g.shape(seq)[0];
    if mask.len() != total {
        return Err(Error::shape("bilstm_encode", format!("mask {} vs {total} rows", mask.len())));
    }
    let len = real_length(mask)?;
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let fwd = run_direction(g, store, &format!("{prefix}.fwd"), seq, len, false)?;
    let bwd = run_direction(g, store, &format!("{prefix}.bwd"), seq, len, true)?;
    let mut rows = Vec::with_capacity(total);
    for (f, b) in fwd.into_iter().zip(bwd) {
        rows.push(g.concat_cols(&[f, b])?);
    }
    let real = g.stack_rows(&rows)?;
    if len == total {
        return Ok(real);
    }
    let width = g.shape(real)[1];
    let pad = g.zeros(total - len, width);
    g.stack_rows(&[real, pad])
}

/// `[forward hidden at the last real position; backward hidden at position 0]`.
pub fn final_state(g: &mut Graph, hiddens: Var, mask: &[bool]) -> Result<Var> {
    let len = real_length(mask)?;
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let width = g.shape(hiddens)[1];
    if !width.is_multiple_of(2) || g.shape(hiddens)[0] != mask.len() {
        return Err(Error::shape(
            "final_state",
            format!("{:?} with mask {}", g.shape(hiddens), mask.len()),
        ));
    }
    let h = width / 2;
    let last = g.row(hiddens, len - 1)?;
    let first = g.row(hiddens, 0)?;
    let f = g.slice_cols(last, 0, h)?;
    let b = g.slice_cols(first, h, width)?;
    g.concat_cols(&[f, b])
}
