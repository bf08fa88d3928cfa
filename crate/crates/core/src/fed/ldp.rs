use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hgnn::{Gradients, ModelParams};

/// Gradient-upload privacy settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpConfig {
    /// Per-entry clip magnitude.
    pub clip: f64,
    /// Laplace scale; 0 disables noise.
    pub noise: f64,
    /// Zero rows of non-interacted items mixed into each upload.
    pub pseudo_items: usize,
}

impl LdpConfig {
    pub fn new(clip: f64, noise: f64, pseudo_items: usize) -> Result<Self> {
        if clip.is_nan() || clip <= 0.0 {
            return Err(Error::arg("clip threshold must be positive"));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::arg("Laplace scale must be nonnegative"));
        }
        Ok(LdpConfig {
            clip,
            noise,
            pseudo_items,
        })
    }
}

/// One zero-mean Laplace draw: an exponential magnitude with a random sign.
pub fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let magnitude = -scale * (1.0 - rng.random::<f64>()).ln();
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Clips every entry to `[-clip, clip]`, then adds independent Laplace noise.
pub fn ldp_clip_noise<R: Rng + ?Sized>(mut grads: Gradients, config: &LdpConfig, rng: &mut R) -> Gradients {
    let (clip, noise) = (config.clip, config.noise);
    grads.for_each_mut(|x| {
        *x = x.clamp(-clip, clip);
        if noise > 0.0 {
            *x += laplace(noise, rng);
        }
    });
    grads
}

fn mean_rows(list: &[&BTreeMap<usize, Array1<f64>>]) -> BTreeMap<usize, Array1<f64>> {
    let mut sums: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    for rows in list {
        for (&k, row) in rows.iter() {
            let entry = sums.entry(k).or_insert_with(|| (Array1::zeros(row.len()), 0));
            entry.0 += row;
            entry.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

/// Mean of the uploads. Dense tensors average over every upload, embedding
/// rows over the uploads that carry them.
pub fn aggregate(list: &[Gradients]) -> Result<Gradients> {
    let first = list.first().ok_or_else(|| Error::arg("no gradients to aggregate"))?;
    let n = list.len() as f64;
    let mut user_side = first.user_side.zeros_like();
    let mut item_side = first.item_side.zeros_like();
    for g in list {
        for (dst, src) in user_side
            .tensors_mut()
            .into_iter()
            .chain(item_side.tensors_mut())
            .zip(g.user_side.tensors().into_iter().chain(g.item_side.tensors()))
        {
            if dst.len() != src.len() {
                return Err(Error::arg("gradient shapes differ"));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    for t in user_side.tensors_mut().into_iter().chain(item_side.tensors_mut()) {
        t.iter_mut().for_each(|x| *x /= n);
    }
    Ok(Gradients {
        users: mean_rows(&list.iter().map(|g| &g.users).collect::<Vec<_>>()),
        items: mean_rows(&list.iter().map(|g| &g.items).collect::<Vec<_>>()),
        user_side,
        item_side,
    })
}

/// `params -= lr * mean`.
pub fn sgd_update(params: &mut ModelParams, mean: &Gradients, lr: f64) {
    mean.apply(params, lr);
}
