//! Building blocks of the two-level attention model, each usable on its own.

use ndarray::{Array1, ArrayView1};

use super::{PathParams, SemanticParams};

/// Negative slope of the LeakyReLU inside node-level attention.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention weights of an anchor over its meta-path neighbors:
/// softmax of `LeakyReLU(a . [W h_anchor || W h_neighbor])`.
pub fn node_attention(anchor: ArrayView1<f64>, neighbors: &[ArrayView1<f64>], path: &PathParams) -> Vec<f64> {
    let dim = anchor.len();
    let anchor_key = path.transform.t().dot(&path.attention.slice(ndarray::s![..dim]));
    let neighbor_key = path.transform.t().dot(&path.attention.slice(ndarray::s![dim..]));
    let base = anchor_key.dot(&anchor);
    let logits: Vec<f64> = neighbors
        .iter()
        .map(|h| leaky_relu(base + neighbor_key.dot(h)))
        .collect();
    softmax(&logits)
}

/// `ELU(sum_j alpha_j h_j)` over raw neighbor features.
pub fn node_aggregate(alpha: &[f64], neighbors: &[ArrayView1<f64>]) -> Array1<f64> {
    let mut mix = Array1::zeros(neighbors[0].len());
    for (a, h) in alpha.iter().zip(neighbors) {
        mix.scaled_add(*a, h);
    }
    mix.mapv_into(elu)
}

/// Importance score of one meta-path: mean over anchors of
/// `q . tanh(W z + b)`.
pub fn semantic_score(per_anchor: &[Array1<f64>], semantic: &SemanticParams) -> f64 {
    let total: f64 = per_anchor
        .iter()
        .map(|z| {
            let hidden = (semantic.transform.dot(z) + &semantic.bias).mapv_into(f64::tanh);
            semantic.query.dot(&hidden)
        })
        .sum();
    total / per_anchor.len() as f64
}

/// Softmax over meta-paths of their semantic scores. `per_path[k]` holds the
/// meta-path-`k` embeddings of every anchor in the batch.
pub fn semantic_attention(per_path: &[Vec<Array1<f64>>], semantic: &SemanticParams) -> Vec<f64> {
    let scores: Vec<f64> = per_path.iter().map(|zs| semantic_score(zs, semantic)).collect();
    softmax(&scores)
}

/// `sum_k beta_k z_k` for one anchor.
pub fn semantic_aggregate(beta: &[f64], per_path: &[ArrayView1<f64>]) -> Array1<f64> {
    let mut z = Array1::zeros(per_path[0].len());
    for (b, zp) in beta.iter().zip(per_path) {
        z.scaled_add(*b, zp);
    }
    z
}

pub fn score(user: ArrayView1<f64>, item: ArrayView1<f64>) -> f64 {
    user.dot(&item)
}

/// `-sum ln sigmoid(pos - neg)` over paired scores.
pub fn bpr_loss(positive: &[f64], negative: &[f64]) -> f64 {
    positive.iter().zip(negative).map(|(p, n)| softplus(n - p)).sum()
}

/// Derivatives of [`bpr_loss`] with respect to each positive and negative score.
pub fn bpr_score_gradients(positive: &[f64], negative: &[f64]) -> (Vec<f64>, Vec<f64>) {
    positive
        .iter()
        .zip(negative)
        .map(|(p, n)| {
            let g = sigmoid(n - p);
            (-g, g)
        })
        .unzip()
}
