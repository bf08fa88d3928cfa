use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1};

use super::layers::{bpr_loss, bpr_score_gradients, elu, elu_grad, leaky_relu, leaky_relu_grad, softmax};
use super::{Gradients, ModelParams, SideParams};
use crate::error::{Error, Result};

/// Meta-path neighbor lists, indexed `[path][node]`, holding dense user
/// indices for user-side paths and dense item indices for item-side paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Neighborhoods {
    pub user_paths: Vec<Vec<Vec<usize>>>,
    pub item_paths: Vec<Vec<Vec<usize>>>,
}

/// One positive item and its sampled negative for a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Intermediates of one anchor under one meta-path.
#[derive(Debug, Clone)]
struct NodeCache {
    neighbors: Vec<usize>,
    logits: Vec<f64>,
    alpha: Vec<f64>,
    mix: Array1<f64>,
    out: Array1<f64>,
}

#[derive(Debug, Clone)]
struct PathCache {
    anchor_key: Array1<f64>,
    neighbor_key: Array1<f64>,
    nodes: Vec<NodeCache>,
}

/// Forward intermediates for one side (users or items) of a batch.
#[derive(Debug, Clone)]
pub struct SideCache {
    anchors: Vec<usize>,
    paths: Vec<PathCache>,
    hidden: Vec<Vec<Array1<f64>>>,
    beta: Vec<f64>,
    z: Vec<Array1<f64>>,
}

impl SideCache {
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.anchors.binary_search(&node).ok()
    }

    /// Node-level attention of anchor `a` (by position) under `path`.
    pub fn alpha(&self, path: usize, a: usize) -> &[f64] {
        &self.paths[path].nodes[a].alpha
    }

    pub fn neighbors(&self, path: usize, a: usize) -> &[usize] {
        &self.paths[path].nodes[a].neighbors
    }

    /// Meta-path-specific embedding of anchor `a`.
    pub fn path_embedding(&self, path: usize, a: usize) -> &Array1<f64> {
        &self.paths[path].nodes[a].out
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn embedding(&self, a: usize) -> &Array1<f64> {
        &self.z[a]
    }

    /// Final embeddings of all anchors as rows.
    pub fn embeddings(&self) -> Array2<f64> {
        let dim = self.z.first().map_or(0, Array1::len);
        let mut out = Array2::zeros((self.z.len(), dim));
        for (i, z) in self.z.iter().enumerate() {
            out.row_mut(i).assign(z);
        }
        out
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pairs: Vec<Pair>,
    pub users: SideCache,
    pub items: SideCache,
    pub positive_scores: Vec<f64>,
    pub negative_scores: Vec<f64>,
    pub loss: f64,
}

/// Embeds `anchors` (ascending, distinct) through node-level then
/// semantic-level attention. The semantic weights are averaged over exactly
/// these anchors.
pub fn embed_side(
    table: &Array2<f64>,
    side: &SideParams,
    neighbors: &[Vec<Vec<usize>>],
    anchors: &[usize],
) -> Result<SideCache> {
    if side.paths.is_empty() {
        return Err(Error::arg("at least one meta-path is required"));
    }
    if neighbors.len() != side.paths.len() {
        return Err(Error::arg(format!(
            "{} neighbor tables for {} meta-paths",
            neighbors.len(),
            side.paths.len()
        )));
    }
    if anchors.is_empty() {
        return Err(Error::arg("empty anchor batch"));
    }
    let rows = table.nrows();
    let dim = table.ncols();
    let mut paths = Vec::with_capacity(side.paths.len());
    for (params, lists) in side.paths.iter().zip(neighbors) {
        let anchor_key = params.transform.t().dot(&params.attention.slice(s![..dim]));
        let neighbor_key = params.transform.t().dot(&params.attention.slice(s![dim..]));
        let mut nodes = Vec::with_capacity(anchors.len());
        for &a in anchors {
            if a >= rows || a >= lists.len() {
                return Err(Error::arg(format!("unknown node index {a}")));
            }
            let nbrs = &lists[a];
            if nbrs.is_empty() || nbrs.iter().any(|&j| j >= rows) {
                return Err(Error::arg(format!("node {a} has an empty or invalid neighbor list")));
            }
            let base = anchor_key.dot(&table.row(a));
            let logits: Vec<f64> = nbrs.iter().map(|&j| base + neighbor_key.dot(&table.row(j))).collect();
            let alpha = softmax(&logits.iter().map(|&c| leaky_relu(c)).collect::<Vec<_>>());
            let mut mix = Array1::zeros(dim);
            for (&w, &j) in alpha.iter().zip(nbrs) {
                mix.scaled_add(w, &table.row(j));
            }
            let out = mix.mapv(elu);
            nodes.push(NodeCache {
                neighbors: nbrs.clone(),
                logits,
                alpha,
                mix,
                out,
            });
        }
        paths.push(PathCache {
            anchor_key,
            neighbor_key,
            nodes,
        });
    }

    let sem = &side.semantic;
    let mut hidden = Vec::with_capacity(paths.len());
    let mut scores = Vec::with_capacity(paths.len());
    for path in &paths {
        let hs: Vec<Array1<f64>> = path
            .nodes
            .iter()
            .map(|n| (sem.transform.dot(&n.out) + &sem.bias).mapv_into(f64::tanh))
            .collect();
        scores.push(hs.iter().map(|h| sem.query.dot(h)).sum::<f64>() / anchors.len() as f64);
        hidden.push(hs);
    }
    let beta = softmax(&scores);
    let z = (0..anchors.len())
        .map(|a| {
            let mut z = Array1::zeros(dim);
            for (b, path) in beta.iter().zip(&paths) {
                z.scaled_add(*b, &path.nodes[a].out);
            }
            z
        })
        .collect();
    Ok(SideCache {
        anchors: anchors.to_vec(),
        paths,
        hidden,
        beta,
        z,
    })
}

fn sorted_unique(iter: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = iter.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Scores every pair and evaluates the summed BPR loss.
pub fn forward(params: &ModelParams, pairs: &[Pair], neighbors: &Neighborhoods) -> Result<ForwardCache> {
    if pairs.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let user_anchors = sorted_unique(pairs.iter().map(|p| p.user));
    let item_anchors = sorted_unique(pairs.iter().flat_map(|p| [p.positive, p.negative]));
    let users = embed_side(
        &params.user_embeddings,
        &params.user_side,
        &neighbors.user_paths,
        &user_anchors,
    )?;
    let items = embed_side(
        &params.item_embeddings,
        &params.item_side,
        &neighbors.item_paths,
        &item_anchors,
    )?;
    let (positive_scores, negative_scores): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .map(|p| {
            let zu = users.embedding(users.position(p.user).unwrap());
            let zp = items.embedding(items.position(p.positive).unwrap());
            let zn = items.embedding(items.position(p.negative).unwrap());
            (zu.dot(zp), zu.dot(zn))
        })
        .unzip();
    let loss = bpr_loss(&positive_scores, &negative_scores);
    Ok(ForwardCache {
        pairs: pairs.to_vec(),
        users,
        items,
        positive_scores,
        negative_scores,
        loss,
    })
}

fn add_row(rows: &mut BTreeMap<usize, Array1<f64>>, node: usize, scale: f64, v: ArrayView1<f64>) {
    let dim = v.len();
    rows.entry(node)
        .or_insert_with(|| Array1::zeros(dim))
        .scaled_add(scale, &v);
}

fn side_backward(
    table: &Array2<f64>,
    side: &SideParams,
    cache: &SideCache,
    dz: &[Array1<f64>],
    grad: &mut SideParams,
    rows: &mut BTreeMap<usize, Array1<f64>>,
) {
    let dim = table.ncols();
    let n = cache.anchors.len() as f64;
    let sem = &side.semantic;

    // semantic aggregation and softmax
    let mut dpath: Vec<Vec<Array1<f64>>> = Vec::with_capacity(cache.paths.len());
    let mut dbeta = vec![0.0; cache.paths.len()];
    for (k, path) in cache.paths.iter().enumerate() {
        dpath.push(dz.iter().map(|d| d * cache.beta[k]).collect());
        dbeta[k] = dz.iter().zip(&path.nodes).map(|(d, node)| d.dot(&node.out)).sum();
    }
    let mean_dbeta: f64 = cache.beta.iter().zip(&dbeta).map(|(b, d)| b * d).sum();
    let dscore: Vec<f64> = cache
        .beta
        .iter()
        .zip(&dbeta)
        .map(|(b, d)| b * (d - mean_dbeta))
        .collect();

    // semantic scores
    for (k, path) in cache.paths.iter().enumerate() {
        let scale = dscore[k] / n;
        for (a, node) in path.nodes.iter().enumerate() {
            let h = &cache.hidden[k][a];
            grad.semantic.query.scaled_add(scale, h);
            let du = (&sem.query * scale) * h.mapv(|t| 1.0 - t * t);
            grad.semantic
                .transform
                .scaled_add(1.0, &outer(du.view(), node.out.view()));
            grad.semantic.bias += &du;
            dpath[k][a] += &sem.transform.t().dot(&du);
        }
    }

    // node-level attention and aggregation
    for (k, path) in cache.paths.iter().enumerate() {
        let params = &side.paths[k];
        let mut danchor_key = Array1::zeros(dim);
        let mut dneighbor_key = Array1::zeros(dim);
        for (a, node) in path.nodes.iter().enumerate() {
            let anchor = cache.anchors[a];
            let dmix = &dpath[k][a] * &node.mix.mapv(elu_grad);
            let dalpha: Vec<f64> = node.neighbors.iter().map(|&j| dmix.dot(&table.row(j))).collect();
            for (&w, &j) in node.alpha.iter().zip(&node.neighbors) {
                add_row(rows, j, w, dmix.view());
            }
            let mean: f64 = node.alpha.iter().zip(&dalpha).map(|(w, d)| w * d).sum();
            for (idx, &j) in node.neighbors.iter().enumerate() {
                let dlogit = node.alpha[idx] * (dalpha[idx] - mean) * leaky_relu_grad(node.logits[idx]);
                if dlogit == 0.0 {
                    continue;
                }
                danchor_key.scaled_add(dlogit, &table.row(anchor));
                dneighbor_key.scaled_add(dlogit, &table.row(j));
                add_row(rows, anchor, dlogit, path.anchor_key.view());
                add_row(rows, j, dlogit, path.neighbor_key.view());
            }
        }
        // keys are W^T a_anchor and W^T a_neighbor
        let a_anchor = params.attention.slice(s![..dim]);
        let a_neighbor = params.attention.slice(s![dim..]);
        let g = &mut grad.paths[k];
        g.transform += &outer(a_anchor, danchor_key.view());
        g.transform += &outer(a_neighbor, dneighbor_key.view());
        let da = params.transform.dot(&danchor_key);
        let db = params.transform.dot(&dneighbor_key);
        g.attention.slice_mut(s![..dim]).scaled_add(1.0, &da);
        g.attention.slice_mut(s![dim..]).scaled_add(1.0, &db);
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let col = a.insert_axis(ndarray::Axis(1));
    let row = b.insert_axis(ndarray::Axis(0));
    col.dot(&row)
}

/// Exact gradients of the summed BPR loss of `cache`'s batch.
pub fn backward(params: &ModelParams, cache: &ForwardCache) -> Gradients {
    let dim = params.dim;
    let (dpos, dneg) = bpr_score_gradients(&cache.positive_scores, &cache.negative_scores);
    let mut dz_users = vec![Array1::zeros(dim); cache.users.anchors.len()];
    let mut dz_items = vec![Array1::zeros(dim); cache.items.anchors.len()];
    for (k, p) in cache.pairs.iter().enumerate() {
        let u = cache.users.position(p.user).unwrap();
        let ip = cache.items.position(p.positive).unwrap();
        let ineg = cache.items.position(p.negative).unwrap();
        let zu = &cache.users.z[u];
        let zp = &cache.items.z[ip];
        let zn = &cache.items.z[ineg];
        dz_users[u].scaled_add(dpos[k], zp);
        dz_users[u].scaled_add(dneg[k], zn);
        dz_items[ip].scaled_add(dpos[k], zu);
        dz_items[ineg].scaled_add(dneg[k], zu);
    }
    let mut grads = Gradients::zeros_like(params);
    side_backward(
        &params.user_embeddings,
        &params.user_side,
        &cache.users,
        &dz_users,
        &mut grads.user_side,
        &mut grads.users,
    );
    side_backward(
        &params.item_embeddings,
        &params.item_side,
        &cache.items,
        &dz_items,
        &mut grads.item_side,
        &mut grads.items,
    );
    grads
}
