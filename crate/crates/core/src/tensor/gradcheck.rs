use rayon::prelude::*;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::Precision;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar produced by `f` against
/// central finite differences for every element of every tensor in
/// `inputs`, in 64-bit mode.
///
/// Returns the maximum of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &ParamStore) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
{
    grad_check_with_floor(f, inputs, REL_FLOOR)
}

/// [`grad_check`] with a different denominator floor. Central differences
/// carry an absolute error of roughly `ulp(f) / step`, so gradients far
/// below that cannot be compared in relative terms.
pub fn grad_check_with_floor<F>(f: F, inputs: &ParamStore, floor: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
{
    let mut g = Graph::new(Precision::F64);
    let root = f(&mut g, inputs)?;
    let base = g.value(root).item();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("grad_check output {base}")));
    }
    g.backward(root)?;
    let grads = g.param_grads();

    let coords: Vec<(String, usize)> = inputs
        .iter()
        .flat_map(|(name, t)| (0..t.numel()).map(move |i| (name.to_string(), i)))
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(Precision::F64);
        let r = f(&mut g, store)?;
        let v = g.value(r).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check output {v}")));
        }
        Ok(v)
    };

    let results: Vec<Result<(f64, f64, f64)>> = coords
        .par_iter()
        .map_init(
            || inputs.clone(),
            |store, (name, i)| {
                let orig = store.get(name).expect("coordinate from store").data()[*i];
                store.get_mut(name).unwrap().data_mut()[*i] = orig + FD_STEP;
                let plus = eval(store);
                store.get_mut(name).unwrap().data_mut()[*i] = orig - FD_STEP;
                let minus = eval(store);
                store.get_mut(name).unwrap().data_mut()[*i] = orig;
                let numeric = (plus? - minus?) / (2.0 * FD_STEP);
                let numel = store.get(name).unwrap().numel();
                let analytic = grads.dense(name, numel).map_or(0.0, |d| d[*i]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                Ok((rel, analytic, numeric))
            },
        )
        .collect();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for (coord, r) in coords.into_iter().zip(results) {
        let (rel, a, n) = r?;
        if rel > out.max_rel_error || out.worst.is_none() {
            out.max_rel_error = rel;
            out.worst = Some(coord);
            out.analytic = a;
            out.numeric = n;
        }
    }
    Ok(out)
}
