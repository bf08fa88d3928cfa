//! Exact privacy-ratio checks of the publishing mechanism on enumerable
//! instances, plus a Monte Carlo audit of degree preservation.
//!
//! Nothing here samples the mechanism except the audit: output
//! distributions are recomputed from the probability functions in
//! [`crate::perturb`], the same ones the samplers draw from.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::SharedHinList;
use crate::perturb::{
    dprr_one_probability, dprr_perturb, em_output_probability, preserve_prob, qualities, rr_flip_prob,
    rr_transition_probability, SharedHinEmbedding,
};

pub const MAX_SHARED: usize = 5;
pub const MAX_ADJACENCY: usize = 6;
/// Relative slack allowed on every bound and identity.
pub const TOLERANCE: f64 = 1e-9;

/// A mechanism configuration small enough to enumerate.
///
/// The selection count `n` is a public parameter of the instance, so
/// neighboring inputs share it; otherwise their outputs would have disjoint
/// supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumInstance {
    pub embeddings: Vec<Vec<f64>>,
    pub adjacency_len: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub n: usize,
}

impl EnumInstance {
    pub fn m(&self) -> usize {
        self.embeddings.len()
    }

    fn shared_embeddings(&self) -> Vec<SharedHinEmbedding> {
        self.embeddings
            .iter()
            .enumerate()
            .map(|(s, v)| SharedHinEmbedding {
                shared_hin: s,
                vector: v.clone(),
            })
            .collect()
    }

    pub fn label(&self) -> String {
        format!(
            "m={} n={} len={} eps1={} eps2={}",
            self.m(),
            self.n,
            self.adjacency_len,
            self.eps1,
            self.eps2
        )
    }
}

/// Input pair and output attaining the maximum ratio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub input: Vec<bool>,
    pub neighbor: Vec<bool>,
    pub output: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub max_ratio: f64,
    pub witness: Option<Witness>,
    pub bound: f64,
    /// Largest deviation of any enumerated distribution's total from 1.
    pub mass_error: f64,
    /// For the interaction stage: worst per-coordinate ratio after the
    /// degree-keep step, over the keep probabilities the instance can use.
    pub post_processing_ratio: Option<f64>,
    pub pass: bool,
}

fn bit_vectors(len: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..1 << len).map(move |mask| (0..len).map(|i| mask >> i & 1 == 1).collect())
}

fn flips(v: &[bool]) -> impl Iterator<Item = Vec<bool>> + '_ {
    (0..v.len()).map(move |i| {
        let mut w = v.to_vec();
        w[i] = !w[i];
        w
    })
}

fn ratio_bits(a: f64, b: f64) -> Option<f64> {
    (a > 0.0 && b > 0.0).then(|| a / b)
}

struct Tracker {
    max: f64,
    witness: Option<Witness>,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            max: 1.0,
            witness: None,
        }
    }

    fn offer(&mut self, ratio: f64, input: &[bool], neighbor: &[bool], output: &[bool]) {
        if ratio > self.max || self.witness.is_none() {
            if ratio >= self.max {
                self.max = ratio;
            }
            self.witness = Some(Witness {
                input: input.to_vec(),
                neighbor: neighbor.to_vec(),
                output: output.to_vec(),
            });
        }
    }
}

/// Exact semantic-privacy ratio of the selection stage: every non-empty
/// indicator list, every non-empty one-bit neighbor, every size-`n` output.
pub fn enumerate_em_ratio(instance: &EnumInstance) -> Result<RatioReport> {
    let m = instance.m();
    if m == 0 || m > MAX_SHARED {
        return Err(Error::Size(format!("{m} shared HINs; at most {MAX_SHARED} enumerable")));
    }
    if instance.n == 0 || instance.n > m {
        return Err(Error::arg(format!("cannot select {} of {m} shared HINs", instance.n)));
    }
    let embeddings = instance.shared_embeddings();
    let outputs: Vec<Vec<bool>> = bit_vectors(m)
        .filter(|o| o.iter().filter(|&&b| b).count() == instance.n)
        .collect();
    let distribution = |g: &[bool]| -> Result<Vec<f64>> {
        let q = qualities(&SharedHinList(g.to_vec()), &embeddings)?;
        Ok(outputs
            .iter()
            .map(|o| em_output_probability(&q, instance.eps1, &SharedHinList(o.clone())))
            .collect())
    };
    let mut tracker = Tracker::new();
    let mut mass_error: f64 = 0.0;
    for g in bit_vectors(m).filter(|g| g.iter().any(|&b| b)) {
        let pg = distribution(&g)?;
        mass_error = mass_error.max((pg.iter().sum::<f64>() - 1.0).abs());
        for h in flips(&g).filter(|h| h.iter().any(|&b| b)) {
            let ph = distribution(&h)?;
            for (k, o) in outputs.iter().enumerate() {
                if let Some(r) = ratio_bits(pg[k], ph[k]) {
                    tracker.offer(r, &g, &h, o);
                }
            }
        }
    }
    let bound = instance.eps1.exp();
    Ok(RatioReport {
        max_ratio: tracker.max,
        pass: tracker.max <= bound * (1.0 + TOLERANCE) && mass_error <= TOLERANCE,
        witness: tracker.witness,
        bound,
        mass_error,
        post_processing_ratio: None,
    })
}

fn rr_probability(input: &[bool], output: &[bool], p: f64) -> f64 {
    input
        .iter()
        .zip(output)
        .map(|(&b, &o)| rr_transition_probability(b, o, p))
        .product()
}

/// Exact interaction-privacy ratio of randomized response over adjacency
/// lists of the instance's length, plus the per-coordinate check that the
/// degree-keep step cannot raise it.
///
/// The report passes when the maximum equals `(1 - p) / p`, that value
/// equals `e^eps2`, and the keep step stays within it.
pub fn enumerate_rr_ratio(instance: &EnumInstance) -> Result<RatioReport> {
    let len = instance.adjacency_len;
    if len == 0 || len > MAX_ADJACENCY {
        return Err(Error::Size(format!(
            "adjacency length {len}; at most {MAX_ADJACENCY} enumerable"
        )));
    }
    let p = rr_flip_prob(instance.eps2);
    let outputs: Vec<Vec<bool>> = bit_vectors(len).collect();
    let mut tracker = Tracker::new();
    let mut mass_error: f64 = 0.0;
    for a in bit_vectors(len) {
        let pa: Vec<f64> = outputs.iter().map(|o| rr_probability(&a, o, p)).collect();
        mass_error = mass_error.max((pa.iter().sum::<f64>() - 1.0).abs());
        for b in flips(&a) {
            for (k, o) in outputs.iter().enumerate() {
                if let Some(r) = ratio_bits(pa[k], rr_probability(&b, o, p)) {
                    tracker.offer(r, &a, &b, o);
                }
            }
        }
    }

    // The keep step maps an RR output bit r to r AND keep(q). Its ratio per
    // coordinate is over the two outputs, for every keep probability a group
    // of this length can produce.
    let mut keep_ratio: f64 = 1.0;
    let keeps = (1..=len).map(|d| preserve_prob(d, len, p)).chain([1.0]);
    for q in keeps {
        let one = [dprr_one_probability(true, p, q), dprr_one_probability(false, p, q)];
        let zero = [1.0 - one[0], 1.0 - one[1]];
        for probs in [one, zero] {
            for (x, y) in [(probs[0], probs[1]), (probs[1], probs[0])] {
                if let Some(r) = ratio_bits(x, y) {
                    keep_ratio = keep_ratio.max(r);
                }
            }
        }
    }

    let bound = instance.eps2.exp();
    let identity = if p > 0.0 { (1.0 - p) / p } else { f64::INFINITY };
    let close = |a: f64, b: f64| a == b || (a - b).abs() <= TOLERANCE * b.abs();
    let pass = if p > 0.0 {
        close(identity, bound)
            && close(tracker.max, identity)
            && keep_ratio <= identity * (1.0 + TOLERANCE)
            && mass_error <= TOLERANCE
    } else {
        // deterministic identity map: neighbors share no supported output
        tracker.witness.is_none() && mass_error <= TOLERANCE
    };
    Ok(RatioReport {
        max_ratio: tracker.max,
        witness: tracker.witness,
        bound,
        mass_error,
        post_processing_ratio: Some(keep_ratio),
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeAudit {
    pub mean: f64,
    pub stderr: f64,
    /// Whether the keep probability hit its upper clip, in which case the
    /// expectation falls short of `d` by design.
    pub clipped: bool,
    pub pass: bool,
}

/// Publishes a group of `group_size` items holding `d` true interactions
/// `trials` times and compares the mean published degree with `d`.
pub fn monte_carlo_degree_audit<R: Rng + ?Sized>(
    group_size: usize,
    d: usize,
    eps2: f64,
    trials: usize,
    rng: &mut R,
) -> Result<DegreeAudit> {
    if d > group_size || trials < 2 {
        return Err(Error::arg("need d <= group_size and at least two trials"));
    }
    let p = rr_flip_prob(eps2);
    let q = preserve_prob(d, group_size, p);
    let raw = if d == 0 {
        0.0
    } else {
        d as f64 / (d as f64 * (1.0 - 2.0 * p) + group_size as f64 * p)
    };
    let bits: Vec<bool> = (0..group_size).map(|i| i < d).collect();
    let degrees: Vec<f64> = (0..trials)
        .map(|_| dprr_perturb(&bits, p, q, rng).iter().filter(|&&b| b).count() as f64)
        .collect();
    let n = trials as f64;
    let mean = degrees.iter().sum::<f64>() / n;
    let var = degrees.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    let gap = (mean - d as f64).abs();
    Ok(DegreeAudit {
        mean,
        stderr,
        clipped: raw > 1.0,
        pass: gap <= 3.0 * stderr || gap == 0.0,
    })
}

/// The built-in suite: every combination of m in {2,3,4}, n in {1,2} and
/// a budget in {0.5, 1, 2, 6} used for both stages, with seeded
/// nonnegative shared-HIN embeddings and adjacency lengths cycling
/// through 2 to 6.
pub fn default_fixtures() -> Vec<EnumInstance> {
    let mut out = Vec::new();
    let mut rng = crate::rng::stream(0, crate::rng::Purpose::Synth, &[u64::MAX]);
    for m in 2..=4usize {
        for n in 1..=2usize {
            for eps in [0.5, 1.0, 2.0, 6.0] {
                let mut embeddings: Vec<Vec<f64>> = (0..m)
                    .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
                    .collect();
                // one orthogonal pair so qualities span their full range
                if out.len() % 3 == 0 {
                    embeddings[0] = vec![1.0, 0.0, 0.0];
                    embeddings[1] = vec![0.0, 1.0, 0.0];
                }
                out.push(EnumInstance {
                    embeddings,
                    adjacency_len: 2 + out.len() % 5,
                    eps1: eps,
                    eps2: eps,
                    n,
                });
            }
        }
    }
    out
}

/// Reads every `*.json` file in `dir` (sorted by name), each holding a list
/// of instances.
pub fn load_fixtures(dir: &Path) -> Result<Vec<EnumInstance>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let list: Vec<EnumInstance> = serde_json::from_str(&text)?;
        out.extend(list);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub stage: String,
    pub instance: String,
    pub report: RatioReport,
}

/// Runs both enumerators on every instance, in parallel.
pub fn run_suite(instances: &[EnumInstance]) -> Result<Vec<SuiteRow>> {
    let rows: Vec<[SuiteRow; 2]> = instances
        .par_iter()
        .map(|inst| {
            Ok([
                SuiteRow {
                    stage: "selection".into(),
                    instance: inst.label(),
                    report: enumerate_em_ratio(inst)?,
                },
                SuiteRow {
                    stage: "interaction".into(),
                    instance: inst.label(),
                    report: enumerate_rr_ratio(inst)?,
                },
            ])
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}
