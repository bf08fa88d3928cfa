use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node-level attention parameters for one meta-path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// `D x D` transform applied to both endpoint features.
    pub transform: Array2<f64>,
    /// Length `2D`: the first half scores the anchor, the second the neighbor.
    pub attention: Array1<f64>,
}

/// Semantic-level attention parameters shared by all meta-paths of a side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticParams {
    pub transform: Array2<f64>,
    pub bias: Array1<f64>,
    pub query: Array1<f64>,
}

/// Everything needed to embed one node type (users or items).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideParams {
    pub paths: Vec<PathParams>,
    pub semantic: SemanticParams,
}

/// Global model state. Checkpoints serialize the fields in declaration
/// order: `dim`, `user_embeddings`, `item_embeddings`, `user_side`,
/// `item_side`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub user_embeddings: Array2<f64>,
    pub item_embeddings: Array2<f64>,
    pub user_side: SideParams,
    pub item_side: SideParams,
}

fn uniform<R: Rng + ?Sized>(shape: (usize, usize), bound: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

fn uniform_vec<R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

impl SideParams {
    fn init<R: Rng + ?Sized>(dim: usize, num_paths: usize, bound: f64, rng: &mut R) -> Self {
        let paths = (0..num_paths)
            .map(|_| PathParams {
                transform: uniform((dim, dim), bound, rng),
                attention: uniform_vec(2 * dim, bound, rng),
            })
            .collect();
        SideParams {
            paths,
            semantic: SemanticParams {
                transform: uniform((dim, dim), bound, rng),
                bias: Array1::zeros(dim),
                query: uniform_vec(dim, bound, rng),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dim = self.semantic.bias.len();
        SideParams {
            paths: self
                .paths
                .iter()
                .map(|_| PathParams {
                    transform: Array2::zeros((dim, dim)),
                    attention: Array1::zeros(2 * dim),
                })
                .collect(),
            semantic: SemanticParams {
                transform: Array2::zeros((dim, dim)),
                bias: Array1::zeros(dim),
                query: Array1::zeros(dim),
            },
        }
    }

    /// Every dense tensor of this side in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for p in &self.paths {
            out.push(p.transform.as_slice().unwrap());
            out.push(p.attention.as_slice().unwrap());
        }
        out.push(self.semantic.transform.as_slice().unwrap());
        out.push(self.semantic.bias.as_slice().unwrap());
        out.push(self.semantic.query.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for p in &mut self.paths {
            out.push(p.transform.as_slice_mut().unwrap());
            out.push(p.attention.as_slice_mut().unwrap());
        }
        out.push(self.semantic.transform.as_slice_mut().unwrap());
        out.push(self.semantic.bias.as_slice_mut().unwrap());
        out.push(self.semantic.query.as_slice_mut().unwrap());
        out
    }
}

impl ModelParams {
    /// Uniform initialization in `(-1/sqrt(D), 1/sqrt(D))`; semantic biases
    /// start at zero.
    pub fn init<R: Rng + ?Sized>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        user_paths: usize,
        item_paths: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        ModelParams {
            dim,
            user_embeddings: uniform((num_users, dim), bound, rng),
            item_embeddings: uniform((num_items, dim), bound, rng),
            user_side: SideParams::init(dim, user_paths, bound, rng),
            item_side: SideParams::init(dim, item_paths, bound, rng),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_embeddings.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item_embeddings.nrows()
    }

    /// All tensors flattened in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.user_embeddings.as_slice().unwrap());
        out.extend_from_slice(self.item_embeddings.as_slice().unwrap());
        for t in self.user_side.tensors().into_iter().chain(self.item_side.tensors()) {
            out.extend_from_slice(t);
        }
        out
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        let mut tensors: Vec<&mut [f64]> = vec![
            self.user_embeddings.as_slice_mut().unwrap(),
            self.item_embeddings.as_slice_mut().unwrap(),
        ];
        tensors.extend(self.user_side.tensors_mut());
        tensors.extend(self.item_side.tensors_mut());
        for t in tensors {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Gradients with the same shapes as [`ModelParams`]. Embedding rows are
/// sparse: rows the batch never touched are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub users: BTreeMap<usize, Array1<f64>>,
    pub items: BTreeMap<usize, Array1<f64>>,
    pub user_side: SideParams,
    pub item_side: SideParams,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            users: BTreeMap::new(),
            items: BTreeMap::new(),
            user_side: params.user_side.zeros_like(),
            item_side: params.item_side.zeros_like(),
        }
    }

    /// Mutable access to every value, embedding rows included.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for row in self.users.values_mut().chain(self.items.values_mut()) {
            row.iter_mut().for_each(&mut f);
        }
        for t in self
            .user_side
            .tensors_mut()
            .into_iter()
            .chain(self.item_side.tensors_mut())
        {
            t.iter_mut().for_each(&mut f);
        }
    }

    /// Dense copy laid out like [`ModelParams::to_flat`].
    pub fn to_dense_flat(&self, params: &ModelParams) -> Vec<f64> {
        let mut dense = ModelParams {
            dim: params.dim,
            user_embeddings: Array2::zeros(params.user_embeddings.raw_dim()),
            item_embeddings: Array2::zeros(params.item_embeddings.raw_dim()),
            user_side: self.user_side.clone(),
            item_side: self.item_side.clone(),
        };
        for (&u, row) in &self.users {
            dense.user_embeddings.row_mut(u).assign(row);
        }
        for (&i, row) in &self.items {
            dense.item_embeddings.row_mut(i).assign(row);
        }
        dense.to_flat()
    }

    /// `params -= lr * self`.
    pub fn apply(&self, params: &mut ModelParams, lr: f64) {
        for (&u, row) in &self.users {
            params.user_embeddings.row_mut(u).scaled_add(-lr, row);
        }
        for (&i, row) in &self.items {
            params.item_embeddings.row_mut(i).scaled_add(-lr, row);
        }
        for (dst, src) in params
            .user_side
            .tensors_mut()
            .into_iter()
            .chain(params.item_side.tensors_mut())
            .zip(self.user_side.tensors().into_iter().chain(self.item_side.tensors()))
        {
            for (p, g) in dst.iter_mut().zip(src) {
                *p -= lr * g;
            }
        }
    }
}
