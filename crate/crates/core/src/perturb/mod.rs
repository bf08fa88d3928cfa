//! Two-stage interaction publishing.
//!
//! Stage one picks which shared HINs to publish into with the exponential
//! mechanism. Stage two runs degree-preserving randomized response inside
//! each picked shared HIN, after which a repair step tops the total degree
//! back up to the user's true degree when whole groups came out empty.

pub mod mechanism;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mechanism::{
    cosine, dprr_one_probability, dprr_perturb, em_output_probability, em_round_distribution, em_select,
    em_sequence_probability, preserve_prob, qualities, quality, rr_flip_prob, rr_perturb, rr_transition_probability,
    QUALITY_SENSITIVITY,
};

use crate::error::{Error, Result};
use crate::hin::{semantic_guided_item_set, user_shared_hin_list, PrivateView, SharedHinList, SharedHinPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Exponential-mechanism selection followed by per-group degree-preserving RR.
    TwoStage,
    /// Flip every adjacency bit with the RR probability.
    PlainRr,
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-stage" => Ok(PerturbMode::TwoStage),
            "plain-rr" => Ok(PerturbMode::PlainRr),
            other => Err(Error::Config(format!("unknown perturbation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub mode: PerturbMode,
}

impl PerturbConfig {
    pub fn new(eps1: f64, eps2: f64, mode: PerturbMode) -> Result<Self> {
        if !(eps1 > 0.0 && eps1.is_finite()) || eps2.is_nan() || eps2 <= 0.0 {
            return Err(Error::arg("privacy budgets must be positive"));
        }
        Ok(PerturbConfig { eps1, eps2, mode })
    }
}

/// Mean feature vector of the items in one shared HIN.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedHinEmbedding {
    pub shared_hin: usize,
    pub vector: Vec<f64>,
}

pub fn shared_hin_embeddings(
    partition: &SharedHinPartition,
    item_features: &[Vec<f64>],
) -> Result<Vec<SharedHinEmbedding>> {
    if item_features.len() != partition.num_items() {
        return Err(Error::arg("one feature vector per item is required"));
    }
    let dim = item_features.first().map_or(0, Vec::len);
    if item_features.iter().any(|f| f.len() != dim) {
        return Err(Error::arg("item feature vectors differ in dimension"));
    }
    Ok((0..partition.num_shared())
        .map(|s| {
            let members = partition.members(s);
            let mut vector = vec![0.0; dim];
            for &i in members {
                for (acc, x) in vector.iter_mut().zip(&item_features[i]) {
                    *acc += x;
                }
            }
            if !members.is_empty() {
                vector.iter_mut().for_each(|x| *x /= members.len() as f64);
            }
            SharedHinEmbedding { shared_hin: s, vector }
        })
        .collect())
}

/// Perturbed bits for the items of one selected shared HIN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedGroup {
    pub shared_hin: usize,
    pub items: Vec<usize>,
    pub bits: Vec<bool>,
}

impl PublishedGroup {
    fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// What a client uploads: the selected shared HINs and the perturbed
/// adjacency bits inside them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedAdjacency {
    pub user: usize,
    pub selected: SharedHinList,
    pub groups: Vec<PublishedGroup>,
    pub published_degree: usize,
}

impl PerturbedAdjacency {
    pub fn new(user: usize, selected: SharedHinList, groups: Vec<PublishedGroup>) -> Self {
        let published_degree = groups.iter().map(PublishedGroup::ones).sum();
        PerturbedAdjacency {
            user,
            selected,
            groups,
            published_degree,
        }
    }

    /// Published positive items, ascending.
    pub fn positives(&self) -> Vec<usize> {
        let mut items: Vec<usize> = self
            .groups
            .iter()
            .flat_map(|g| g.items.iter().zip(&g.bits).filter(|(_, &b)| b).map(|(&i, _)| i))
            .collect();
        items.sort_unstable();
        items
    }
}

/// Adds uniformly chosen items until the published total reaches
/// `true_degree`, provided at least one group lost its interactions to the
/// selection stage (its true intersection is empty).
///
/// Zero positions in groups whose true intersection was empty are drawn
/// first, then zero positions elsewhere. Excess ones are left alone, and if
/// every position is already set the deficit stays unfilled.
pub fn degree_repair<R: Rng + ?Sized>(
    groups: &mut [PublishedGroup],
    empty_intersection: &[bool],
    true_degree: usize,
    rng: &mut R,
) {
    if !empty_intersection.iter().any(|&e| e) {
        return;
    }
    let published: usize = groups.iter().map(PublishedGroup::ones).sum();
    let mut deficit = true_degree.saturating_sub(published);
    for want_empty in [true, false] {
        if deficit == 0 {
            return;
        }
        let slots: Vec<(usize, usize)> = groups
            .iter()
            .enumerate()
            .filter(|(g, _)| empty_intersection[*g] == want_empty)
            .flat_map(|(g, group)| {
                group
                    .bits
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| !b)
                    .map(move |(j, _)| (g, j))
            })
            .collect();
        let take = deficit.min(slots.len());
        for k in sample(rng, slots.len(), take) {
            let (g, j) = slots[k];
            groups[g].bits[j] = true;
        }
        deficit -= take;
    }
}

/// Runs the full client-side publishing pipeline on one private view.
pub fn publish<R: Rng + ?Sized>(
    view: &PrivateView,
    partition: &SharedHinPartition,
    embeddings: &[SharedHinEmbedding],
    config: &PerturbConfig,
    rng: &mut R,
) -> Result<PerturbedAdjacency> {
    let degree = view.degree();
    if degree == 0 {
        return Err(Error::arg(format!(
            "user {} has no interactions to publish",
            view.user()
        )));
    }
    if embeddings.len() != partition.num_shared() {
        return Err(Error::arg("one embedding per shared HIN is required"));
    }
    let bits = view.bits();
    let p = rr_flip_prob(config.eps2);
    let m = partition.num_shared();

    if config.mode == PerturbMode::PlainRr {
        let all = SharedHinList(vec![true; m]);
        let groups = semantic_guided_item_set(&all, partition)
            .into_iter()
            .map(|g| {
                let raw: Vec<bool> = g.items.iter().map(|&i| bits[i]).collect();
                PublishedGroup {
                    shared_hin: g.shared_hin,
                    bits: rr_perturb(&raw, p, rng),
                    items: g.items,
                }
            })
            .collect();
        return Ok(PerturbedAdjacency::new(view.user(), all, groups));
    }

    let truth = user_shared_hin_list(view, partition);
    let n = truth.count();
    let scores = qualities(&truth, embeddings)?;
    let selected = em_select(&scores, config.eps1, n, rng)?;

    let mut empty_intersection = Vec::with_capacity(n);
    let mut groups: Vec<PublishedGroup> = semantic_guided_item_set(&selected, partition)
        .into_iter()
        .map(|g| {
            let raw: Vec<bool> = g.items.iter().map(|&i| bits[i]).collect();
            let d = raw.iter().filter(|&&b| b).count();
            empty_intersection.push(d == 0);
            let q = preserve_prob(d, raw.len(), p);
            PublishedGroup {
                shared_hin: g.shared_hin,
                bits: dprr_perturb(&raw, p, q, rng),
                items: g.items,
            }
        })
        .collect();
    degree_repair(&mut groups, &empty_intersection, degree, rng);
    Ok(PerturbedAdjacency::new(view.user(), selected, groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blocks(m: usize, size: usize) -> (SharedHinPartition, Vec<Vec<f64>>) {
        let assignment: Vec<usize> = (0..m * size).map(|i| i / size).collect();
        let features = assignment
            .iter()
            .map(|&c| (0..m).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
            .collect();
        (SharedHinPartition::from_assignment(m, assignment).unwrap(), features)
    }

    #[test]
    fn embeddings_are_member_means() {
        let part = SharedHinPartition::from_assignment(3, vec![0, 1, 1, 2, 2, 2]).unwrap();
        let f = vec![
            vec![1.0, 2.0, 3.0],
            vec![1.0, -1.0, 0.5],
            vec![-1.0, 1.0, -0.5],
            vec![1.0, 0.0, 0.0],
            vec![2.0, 3.0, 0.0],
            vec![0.0, 3.0, 6.0],
        ];
        let e = shared_hin_embeddings(&part, &f).unwrap();
        assert_eq!(e[0].vector, vec![1.0, 2.0, 3.0]);
        assert_eq!(e[1].vector, vec![0.0, 0.0, 0.0]);
        assert_eq!(e[2].vector, vec![1.0, 2.0, 2.0]);
        let empty = SharedHinPartition::from_assignment(2, vec![0]).unwrap();
        assert_eq!(
            shared_hin_embeddings(&empty, &[vec![1.0]]).unwrap()[1].vector,
            vec![0.0]
        );
        assert!(shared_hin_embeddings(&part, &f[..2]).is_err());
    }

    #[test]
    fn invalid_budgets_rejected() {
        assert!(PerturbConfig::new(0.0, 1.0, PerturbMode::TwoStage).is_err());
        assert!(PerturbConfig::new(1.0, -1.0, PerturbMode::TwoStage).is_err());
    }

    #[test]
    fn repair_needs_an_emptied_group() {
        let mut groups = vec![PublishedGroup {
            shared_hin: 0,
            items: vec![0, 1, 2],
            bits: vec![false; 3],
        }];
        degree_repair(&mut groups, &[false], 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(groups[0].ones(), 0);
    }

    #[test]
    fn repair_leaves_sufficient_output_alone() {
        let mut groups = vec![PublishedGroup {
            shared_hin: 0,
            items: vec![0, 1, 2],
            bits: vec![true, true, false],
        }];
        let before = groups.clone();
        degree_repair(&mut groups, &[false], 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(groups, before);
    }

    #[test]
    fn repair_fills_empty_groups_to_true_degree() {
        for seed in 0..20 {
            let mut groups = vec![
                PublishedGroup {
                    shared_hin: 0,
                    items: (0..4).collect(),
                    bits: vec![false; 4],
                },
                PublishedGroup {
                    shared_hin: 1,
                    items: (4..10).collect(),
                    bits: vec![false; 6],
                },
            ];
            degree_repair(&mut groups, &[true, true], 3, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(groups.iter().map(PublishedGroup::ones).sum::<usize>(), 3);
        }
    }

    #[test]
    fn repair_prefers_empty_intersection_groups() {
        let mut groups = vec![
            PublishedGroup {
                shared_hin: 0,
                items: vec![0, 1, 2],
                bits: vec![true, false, false],
            },
            PublishedGroup {
                shared_hin: 1,
                items: vec![3, 4, 5],
                bits: vec![false; 3],
            },
        ];
        degree_repair(&mut groups, &[false, true], 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(groups[0].ones(), 1);
        assert_eq!(groups[1].ones(), 2);
    }

    #[test]
    fn repair_is_capacity_bounded() {
        let mut groups = vec![PublishedGroup {
            shared_hin: 0,
            items: vec![0, 1],
            bits: vec![true, false],
        }];
        degree_repair(&mut groups, &[true], 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(groups[0].bits, vec![true, true]);
    }

    #[test]
    fn single_shared_hin_forces_selection() {
        let (part, f) = blocks(1, 12);
        let e = shared_hin_embeddings(&part, &f).unwrap();
        let view = PrivateView::from_items(0, 12, &[1, 5]);
        let cfg = PerturbConfig::new(1.0, 1.0, PerturbMode::TwoStage).unwrap();
        let out = publish(&view, &part, &e, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(out.selected.0, vec![true]);
        assert_eq!(out.groups.len(), 1);
        assert_eq!(out.groups[0].items.len(), 12);
    }

    #[test]
    fn publishing_is_deterministic_and_consistent() {
        let (part, f) = blocks(5, 8);
        let e = shared_hin_embeddings(&part, &f).unwrap();
        let view = PrivateView::from_items(3, 40, &[0, 3, 17, 33]);
        let cfg = PerturbConfig::new(1.0, 1.0, PerturbMode::TwoStage).unwrap();
        let a = publish(&view, &part, &e, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = publish(&view, &part, &e, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.user, 3);
        assert_eq!(a.selected.count(), 3);
        assert_eq!(a.groups.len(), 3);
        assert_eq!(a.published_degree, a.positives().len());
        assert!(a.published_degree >= 4);
    }

    #[test]
    fn zero_degree_user_does_not_publish() {
        let (part, f) = blocks(2, 3);
        let e = shared_hin_embeddings(&part, &f).unwrap();
        let cfg = PerturbConfig::new(1.0, 1.0, PerturbMode::TwoStage).unwrap();
        let view = PrivateView::from_items(0, 6, &[]);
        assert!(publish(&view, &part, &e, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn expected_degree_preserved_when_unclipped() {
        // m = 1 so no selection noise; d = 3 in 60 items keeps q well below 1
        let (part, f) = blocks(1, 60);
        let e = shared_hin_embeddings(&part, &f).unwrap();
        let view = PrivateView::from_items(0, 60, &[2, 30, 41]);
        let cfg = PerturbConfig::new(1.0, 1.0, PerturbMode::TwoStage).unwrap();
        let p = rr_flip_prob(1.0);
        assert!(preserve_prob(3, 60, p) < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 100_000;
        let total: usize = (0..trials)
            .map(|_| publish(&view, &part, &e, &cfg, &mut rng).unwrap().published_degree)
            .sum();
        assert_abs_diff_eq!(total as f64 / trials as f64, 3.0, epsilon = 0.06);
    }

    #[test]
    fn plain_rr_densifies_sparse_views() {
        let (part, f) = blocks(4, 100);
        let e = shared_hin_embeddings(&part, &f).unwrap();
        let view = PrivateView::from_items(0, 400, &[7, 150, 260, 399]);
        let cfg = PerturbConfig::new(1.0, 1.0, PerturbMode::PlainRr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = (0..200)
            .map(|_| publish(&view, &part, &e, &cfg, &mut rng).unwrap().published_degree)
            .sum::<usize>() as f64
            / 200.0;
        assert!(mean > 4.0 * 10.0);
    }
}
