//! Named, ordered parameter tensors.

use crate::tape::Tensor;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, t: Tensor) -> usize {
        assert!(self.index_of(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.names.len() - 1
    }

    /// Glorot-style normal init for a `rows x cols` weight.
    pub fn insert_normal<R: rand::Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> usize {
        let sd = (2.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.num_scalars());
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&v[off..off + n]);
            off += n;
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Per-tensor L2 norms, used in divergence diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.data.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Concatenates two stores; names must be disjoint.
    pub fn merged(&self, other: &ParamStore) -> ParamStore {
        let mut out = self.clone();
        for (n, t) in other.iter() {
            out.insert(n, t.clone());
        }
        out
    }
}
