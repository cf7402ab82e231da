//! Named parameter collections and their binding into a [`Graph`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Matrix::len).sum()
    }

    /// SHA-256 over names, shapes and exact bit patterns.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, m) in &self.entries {
            hasher.update(name.as_bytes());
            hasher.update((m.rows() as u64).to_le_bytes());
            hasher.update((m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Places every tensor on the graph, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|(name, m)| {
                let v = if trainable {
                    g.param(m.clone())
                } else {
                    g.constant(m.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Binding { vars }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, m)| (k.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    /// `self += other * factor` for every shared name.
    pub fn axpy(&mut self, factor: f64, other: &ParamSet) {
        for (name, m) in self.entries.iter_mut() {
            if let Some(o) = other.get(name) {
                for (a, b) in m.as_mut_slice().iter_mut().zip(o.as_slice()) {
                    *a += factor * b;
                }
            }
        }
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.entries
            .iter()
            .map(|(k, m)| other.get(k).map_or(f64::INFINITY, |o| m.max_abs_diff(o)))
            .fold(0.0, f64::max)
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Collects gradients for every bound name; missing gradients become zeros.
    pub fn gradients(&self, grads: &Gradients, params: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, var) in &self.vars {
            let m = match grads.get(*var) {
                Some(g) => g.clone(),
                None => {
                    let p = params.get(name).expect("binding and params out of sync");
                    Matrix::zeros(p.rows(), p.cols())
                }
            };
            out.insert(name.clone(), m);
        }
        out
    }
}
