//! Affine layers and the two-layer MLP used by every prediction head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{xavier_uniform_init, Graph, ParamStore, Tensor, Var};

pub fn init_linear<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{prefix}.weight"), xavier_uniform_init(input, output, rng)?);
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[output]));
    Ok(())
}

/// `x Wᵀ + b` for `x` of shape `[n, in]`.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    let xw = g.matmul_nt(x, w)?;
    g.add_bias(xw, b)
}

/// Inverted dropout on hidden activations during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let keep = 1.0 - self.rate;
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, m)
    }
}

pub fn init_mlp<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    output: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.l1"), input, hidden, rng)?;
    init_linear(store, &format!("{prefix}.l2"), hidden, output, rng)
}

/// `affine -> ReLU -> (dropout) -> affine`.
pub fn mlp(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    let h = linear(g, store, &format!("{prefix}.l1"), x)?;
    let mut h = g.relu(h);
    if let Some(d) = dropout {
        h = d.apply(g, h)?;
    }
    linear(g, store, &format!("{prefix}.l2"), h)
}
