use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
///
/// Individual rows of a table can be frozen; the optimizer leaves them
/// untouched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    frozen_rows: BTreeMap<String, Vec<bool>>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.frozen_rows.remove(name);
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn freeze_row(&mut self, name: &str, row: usize) {
        if let Some(t) = self.tensors.get(name) {
            let rows = t.rows();
            let flags = self.frozen_rows.entry(name.to_string()).or_insert_with(|| vec![false; rows]);
            flags[row] = true;
        }
    }

    pub fn unfreeze_rows(&mut self, name: &str) {
        self.frozen_rows.remove(name);
    }

    pub fn frozen_rows(&self, name: &str) -> Option<&[bool]> {
        self.frozen_rows.get(name).map(Vec::as_slice)
    }

    /// Subset of tensors whose names start with any of `prefixes`.
    pub fn filter_prefixes(&self, prefixes: &[&str]) -> ParamStore {
        let mut out = ParamStore::default();
        for (name, t) in &self.tensors {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                out.tensors.insert(name.clone(), t.clone());
                if let Some(f) = self.frozen_rows.get(name) {
                    out.frozen_rows.insert(name.clone(), f.clone());
                }
            }
        }
        out
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        let missing: Vec<String> = self.tensors.keys().filter(|k| !other.tensors.contains_key(*k)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingTensors(missing));
        }
        let bad: Vec<String> = self
            .tensors
            .iter()
            .filter_map(|(k, t)| {
                let o = &other.tensors[k];
                (o.shape() != t.shape()).then(|| format!("{k}: expected {:?}, found {:?}", t.shape(), o.shape()))
            })
            .collect();
        if !bad.is_empty() {
            return Err(Error::TensorMismatch(bad));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, ParamGrad>,
}

impl Gradients {
    pub fn add(&mut self, name: &str, g: ParamGrad) {
        match self.grads.get_mut(name) {
            None => {
                self.grads.insert(name.to_string(), g);
            }
            Some(existing) => merge(existing, g),
        }
    }

    pub fn merge(&mut self, other: Gradients) {
        for (name, g) in other.grads {
            self.add(&name, g);
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamGrad> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.grads.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Dense view of one gradient for a tensor of `numel` values.
    pub fn dense(&self, name: &str, numel: usize) -> Option<Vec<f64>> {
        match self.grads.get(name)? {
            ParamGrad::Dense(v) => Some(v.clone()),
            ParamGrad::Rows(rows) => {
                let d = rows.values().next().map_or(0, Vec::len);
                let mut out = vec![0.0; numel];
                for (&r, g) in rows {
                    out[r * d..(r + 1) * d].copy_from_slice(g);
                }
                Some(out)
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            match g {
                ParamGrad::Dense(v) => v.iter_mut().for_each(|x| *x *= s),
                ParamGrad::Rows(rows) => rows.values_mut().flatten().for_each(|x| *x *= s),
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| match g {
            ParamGrad::Dense(v) => v.iter().all(|x| x.is_finite()),
            ParamGrad::Rows(rows) => rows.values().flatten().all(|x| x.is_finite()),
        })
    }
}

fn merge(into: &mut ParamGrad, g: ParamGrad) {
    match (into, g) {
        (ParamGrad::Dense(a), ParamGrad::Dense(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
        (ParamGrad::Rows(a), ParamGrad::Rows(b)) => {
            for (r, v) in b {
                match a.get_mut(&r) {
                    Some(e) => e.iter_mut().zip(v).for_each(|(x, y)| *x += y),
                    None => {
                        a.insert(r, v);
                    }
                }
            }
        }
        (ParamGrad::Dense(a), ParamGrad::Rows(b)) => {
            let d = b.values().next().map_or(0, Vec::len);
            for (r, v) in b {
                a[r * d..(r + 1) * d].iter_mut().zip(v).for_each(|(x, y)| *x += y);
            }
        }
        (slot @ ParamGrad::Rows(_), ParamGrad::Dense(mut b)) => {
            if let ParamGrad::Rows(a) = slot {
                let d = a.values().next().map_or(0, Vec::len);
                for (r, v) in a.iter() {
                    b[r * d..(r + 1) * d].iter_mut().zip(v).for_each(|(x, y)| *x += y);
                }
            }
            *slot = ParamGrad::Dense(b);
        }
    }
}
