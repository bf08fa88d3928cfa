//! Leave-one-out evaluation and perturbation statistics.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgnn::{embed_side, ModelParams, Neighborhoods};
use crate::hin::PrivateView;
use crate::perturb::PerturbedAdjacency;

/// One evaluated user: the held-out item and the items it is ranked against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalUser {
    pub user: usize,
    pub train: Vec<usize>,
    pub target: usize,
    /// Negative candidates, never containing any of the user's positives.
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub users: Vec<EvalUser>,
    /// Users left out because they had fewer than two positives.
    pub excluded: usize,
}

impl EvalSplit {
    pub fn get(&self, user: usize) -> Option<&EvalUser> {
        self.users
            .binary_search_by_key(&user, |e| e.user)
            .ok()
            .map(|i| &self.users[i])
    }

    /// Each view with its held-out item removed; users without a held-out
    /// item keep their full view.
    pub fn training_views(&self, views: &[PrivateView]) -> Vec<PrivateView> {
        views
            .iter()
            .map(|v| match self.get(v.user()) {
                Some(e) => v.without(e.target),
                None => v.clone(),
            })
            .collect()
    }
}

/// Holds out one uniformly chosen positive per user with at least two, and
/// samples `num_negatives` non-interacted candidates for it. With
/// `num_negatives == 0`, or when fewer non-interacted items exist, every
/// non-interacted item is a candidate.
pub fn leave_one_out_split<R: Rng + ?Sized>(
    views: &[PrivateView],
    num_negatives: usize,
    rng: &mut R,
) -> Result<EvalSplit> {
    let mut split = EvalSplit::default();
    for view in views {
        let items = view.items();
        if items.len() < 2 {
            split.excluded += 1;
            continue;
        }
        let bits = view.bits();
        let held = rng.random_range(0..items.len());
        let target = items[held];
        let pool: Vec<usize> = (0..bits.len()).filter(|&i| !bits[i]).collect();
        let candidates = if num_negatives == 0 || pool.len() <= num_negatives {
            pool
        } else {
            let mut picked: Vec<usize> = sample(rng, pool.len(), num_negatives)
                .into_iter()
                .map(|k| pool[k])
                .collect();
            picked.sort_unstable();
            picked
        };
        let train = items.iter().copied().filter(|&i| i != target).collect();
        split.users.push(EvalUser {
            user: view.user(),
            train,
            target,
            candidates,
        });
    }
    Ok(split)
}

/// 1-based rank of the target by descending score; equal scores rank ahead
/// of the target.
pub fn rank_target(target_score: f64, candidate_scores: &[f64]) -> usize {
    1 + candidate_scores.iter().filter(|&&s| s >= target_score).count()
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl Metrics {
    /// Means of the four metrics over a list of ranks.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
        Metrics {
            hr5: mean(&|r| hr_at_k(r, 5)),
            hr10: mean(&|r| hr_at_k(r, 10)),
            ndcg5: mean(&|r| ndcg_at_k(r, 5)),
            ndcg10: mean(&|r| ndcg_at_k(r, 10)),
        }
    }
}

/// Ranks of every evaluated user's target under the model. Items are
/// embedded together; each user is embedded on its own, as during local
/// training.
pub fn rank_split(params: &ModelParams, neighbors: &Neighborhoods, split: &EvalSplit) -> Result<Vec<usize>> {
    if split.users.is_empty() {
        return Ok(Vec::new());
    }
    let all_items: Vec<usize> = (0..params.num_items()).collect();
    let items = embed_side(
        &params.item_embeddings,
        &params.item_side,
        &neighbors.item_paths,
        &all_items,
    )?;
    split
        .users
        .iter()
        .map(|e| {
            let user = embed_side(
                &params.user_embeddings,
                &params.user_side,
                &neighbors.user_paths,
                &[e.user],
            )?;
            let zu = user.embedding(0);
            let target = zu.dot(items.embedding(e.target));
            let scores: Vec<f64> = e.candidates.iter().map(|&c| zu.dot(items.embedding(c))).collect();
            if !target.is_finite() || scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::arg(format!("non-finite score for user {}", e.user)));
            }
            Ok(rank_target(target, &scores))
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, neighbors: &Neighborhoods, split: &EvalSplit) -> Result<Metrics> {
    Ok(Metrics::from_ranks(&rank_split(params, neighbors, split)?))
}

/// How many true interactions survive publishing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStats {
    pub edges_original: usize,
    pub edges_unchanged: usize,
    pub proportion: f64,
}

/// Counts original positives that are also published positives, pairing
/// views and adjacencies by user id.
pub fn perturbation_stats(views: &[PrivateView], published: &[PerturbedAdjacency]) -> Result<PerturbationStats> {
    let lists: Vec<(usize, Vec<usize>)> = published.iter().map(|a| (a.user, a.positives())).collect();
    edge_retention(views, &lists)
}

/// [`perturbation_stats`] over plain `(user, published items)` lists.
pub fn edge_retention(views: &[PrivateView], published: &[(usize, Vec<usize>)]) -> Result<PerturbationStats> {
    let mut original = 0;
    let mut unchanged = 0;
    for view in views {
        let bits = view.bits();
        original += bits.iter().filter(|&&b| b).count();
        if let Some((_, items)) = published.iter().find(|(u, _)| *u == view.user()) {
            for &i in items {
                if i >= bits.len() {
                    return Err(Error::arg(format!("published item {i} outside the item universe")));
                }
                if bits[i] {
                    unchanged += 1;
                }
            }
        }
    }
    let proportion = if original == 0 {
        0.0
    } else {
        unchanged as f64 / original as f64
    };
    Ok(PerturbationStats {
        edges_original: original,
        edges_unchanged: unchanged,
        proportion,
    })
}
