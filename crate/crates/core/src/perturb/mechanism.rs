//! Probability laws of the publishing mechanism and their samplers.
//!
//! The privacy verifier recomputes output distributions from the functions
//! in this module, so samplers and enumerators share one definition of each
//! probability.

use rand::Rng;

use super::SharedHinEmbedding;
use crate::error::{Error, Result};
use crate::hin::SharedHinList;

/// Sensitivity of [`quality`]. Scores lie in `[0, 1]`.
pub const QUALITY_SENSITIVITY: f64 = 1.0;

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Utility of selecting `candidate` for a user whose true shared HINs are
/// `user_hins`: the best half-shifted cosine against any of them.
pub fn quality(user_hins: &SharedHinList, candidate: usize, embeddings: &[SharedHinEmbedding]) -> Result<f64> {
    let members = user_hins.selected();
    if members.is_empty() {
        return Err(Error::arg("quality needs at least one user-related shared HIN"));
    }
    if candidate >= embeddings.len() {
        return Err(Error::arg(format!("candidate {candidate} out of range")));
    }
    let c = &embeddings[candidate].vector;
    Ok(members
        .into_iter()
        .map(|s| 0.5 * (cosine(c, &embeddings[s].vector) + 1.0))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Qualities of every shared HIN as a candidate.
pub fn qualities(user_hins: &SharedHinList, embeddings: &[SharedHinEmbedding]) -> Result<Vec<f64>> {
    (0..embeddings.len())
        .map(|c| quality(user_hins, c, embeddings))
        .collect()
}

/// One exponential-mechanism round: probabilities proportional to
/// `exp(eps * q / (2 * sensitivity))` over the `available` candidates, zero
/// elsewhere.
pub fn em_round_distribution(qualities: &[f64], eps_round: f64, available: &[bool]) -> Vec<f64> {
    let scale = eps_round / (2.0 * QUALITY_SENSITIVITY);
    let max = qualities
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(q, _)| q * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = qualities
        .iter()
        .zip(available)
        .map(|(q, &a)| if a { (q * scale - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Probability that the sequential mechanism picks exactly `order`, spending
/// `eps1 / order.len()` per round.
pub fn em_sequence_probability(qualities: &[f64], eps1: f64, order: &[usize]) -> f64 {
    let eps_round = eps1 / order.len() as f64;
    let mut available = vec![true; qualities.len()];
    let mut prob = 1.0;
    for &pick in order {
        let dist = em_round_distribution(qualities, eps_round, &available);
        prob *= dist[pick];
        available[pick] = false;
    }
    prob
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Probability that selection publishes exactly the set `output`, summed over
/// every order in which it can be drawn.
pub fn em_output_probability(qualities: &[f64], eps1: f64, output: &SharedHinList) -> f64 {
    let chosen = output.selected();
    if chosen.is_empty() {
        return 1.0;
    }
    permutations(&chosen)
        .iter()
        .map(|order| em_sequence_probability(qualities, eps1, order))
        .sum()
}

fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `n` distinct shared HINs without replacement, `eps1 / n` per draw.
pub fn em_select<R: Rng + ?Sized>(qualities: &[f64], eps1: f64, n: usize, rng: &mut R) -> Result<SharedHinList> {
    let m = qualities.len();
    if n > m {
        return Err(Error::arg(format!("cannot select {n} of {m} shared HINs")));
    }
    let mut out = SharedHinList::zeros(m);
    if n == 0 {
        return Ok(out);
    }
    let eps_round = eps1 / n as f64;
    let mut available = vec![true; m];
    for _ in 0..n {
        let dist = em_round_distribution(qualities, eps_round, &available);
        let pick = sample_index(&dist, rng);
        available[pick] = false;
        out.0[pick] = true;
    }
    Ok(out)
}

/// Randomized-response flip probability `1 / (1 + e^eps)`.
pub fn rr_flip_prob(eps2: f64) -> f64 {
    1.0 / (1.0 + eps2.exp())
}

/// Degree-preserving keep probability for a group with true degree `d`,
/// clipped to `[0, 1]`. Zero when the group holds no true interaction.
pub fn preserve_prob(d: usize, group_size: usize, p: f64) -> f64 {
    if d == 0 || group_size == 0 {
        return 0.0;
    }
    let d = d as f64;
    (d / (d * (1.0 - 2.0 * p) + group_size as f64 * p)).clamp(0.0, 1.0)
}

/// Probability that a bit is published as 1 after randomized response
/// followed by keeping ones with probability `q`.
pub fn dprr_one_probability(bit: bool, p: f64, q: f64) -> f64 {
    if bit {
        (1.0 - p) * q
    } else {
        p * q
    }
}

/// Probability of randomized response alone mapping `bit` to `out`.
pub fn rr_transition_probability(bit: bool, out: bool, p: f64) -> f64 {
    if bit == out {
        1.0 - p
    } else {
        p
    }
}

pub fn dprr_perturb<R: Rng + ?Sized>(bits: &[bool], p: f64, q: f64, rng: &mut R) -> Vec<bool> {
    bits.iter()
        .map(|&b| rng.random::<f64>() < dprr_one_probability(b, p, q))
        .collect()
}

pub fn rr_perturb<R: Rng + ?Sized>(bits: &[bool], p: f64, rng: &mut R) -> Vec<bool> {
    bits.iter()
        .map(|&b| if rng.random::<f64>() < p { !b } else { b })
        .collect()
}
