//! Grouping items into shared HINs by their shared-knowledge neighborhoods.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Edge, Hin, InteractionSchema, SharedSubgraph};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

const MAX_ITERATIONS: usize = 100;

/// Assignment of every item to exactly one of `m` shared HINs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedHinPartition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    shared_edges: Vec<Vec<Edge>>,
}

impl SharedHinPartition {
    pub fn from_assignment(m: usize, assignment: Vec<usize>) -> Result<Self> {
        if m < 1 {
            return Err(Error::arg("number of shared HINs must be at least 1"));
        }
        let mut members = vec![Vec::new(); m];
        for (item, &c) in assignment.iter().enumerate() {
            if c >= m {
                return Err(Error::arg(format!("item {item} assigned to shared HIN {c} >= {m}")));
            }
            members[c].push(item);
        }
        Ok(SharedHinPartition {
            assignment,
            members,
            shared_edges: vec![Vec::new(); m],
        })
    }

    /// Attaches each shared edge to the shared HIN of the item it touches.
    pub fn attach_shared_edges(&mut self, schema: &InteractionSchema, hin: &Hin, shared: &SharedSubgraph) {
        for list in &mut self.shared_edges {
            list.clear();
        }
        for e in &shared.edges {
            let item_end = [e.src, e.dst]
                .into_iter()
                .find(|&n| hin.node_type(n) == schema.item_type());
            if let Some(n) = item_end {
                let item = schema.local_index(n).unwrap();
                self.shared_edges[self.assignment[item]].push(*e);
            }
        }
    }

    pub fn num_shared(&self) -> usize {
        self.members.len()
    }

    pub fn num_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn shared_hin_of(&self, item: usize) -> usize {
        self.assignment[item]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, shared_hin: usize) -> &[usize] {
        &self.members[shared_hin]
    }

    pub fn shared_edges(&self, shared_hin: usize) -> &[Edge] {
        &self.shared_edges[shared_hin]
    }
}

/// L2-normalized incidence vectors of items over the non-user, non-item
/// nodes they reach through shared edges. Items without shared edges get the
/// zero vector.
pub fn item_features(hin: &Hin, schema: &InteractionSchema, shared: &SharedSubgraph) -> Vec<Vec<f64>> {
    let mut attribute_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pairs = Vec::new();
    for e in &shared.edges {
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            if hin.node_type(a) == schema.item_type()
                && hin.node_type(b) != schema.item_type()
                && hin.node_type(b) != schema.user_type()
            {
                attribute_of.entry(b).or_insert(0);
                pairs.push((schema.local_index(a).unwrap(), b));
            }
        }
    }
    for (slot, v) in attribute_of.values_mut().enumerate() {
        *v = slot;
    }
    let dim = attribute_of.len();
    let mut features = vec![vec![0.0; dim]; schema.num_items()];
    for (item, attr) in pairs {
        features[item][attribute_of[&attr]] = 1.0;
    }
    for row in &mut features {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    features
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers<R: Rng>(features: &[Vec<f64>], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![features[first].clone()];
    while centers.len() < m {
        let weights: Vec<f64> = features.iter().map(|f| nearest(f, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            while weights[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // Fewer distinct points than clusters: pick an unused item.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(features[pick].clone());
    }
    centers
}

/// Moves far-out points into empty clusters until none is empty.
fn fill_empty(features: &[Vec<f64>], assignment: &mut [usize], centers: &mut [Vec<f64>]) {
    let m = centers.len();
    loop {
        let mut sizes = vec![0usize; m];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(f, &centers[assignment[i]]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let (i, _) = donor.expect("some cluster has two members when m <= n");
        assignment[i] = empty;
        centers[empty] = features[i].clone();
    }
}

fn recompute_centers(features: &[Vec<f64>], assignment: &[usize], centers: &mut [Vec<f64>]) {
    let dim = features[0].len();
    let mut sums = vec![vec![0.0; dim]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (f, &c) in features.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(f) {
            *s += x;
        }
    }
    for (c, sum) in sums.into_iter().enumerate() {
        if counts[c] > 0 {
            centers[c] = sum.into_iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

/// Seeded k-means (k-means++ seeding, Lloyd iterations, ties to the lowest
/// cluster index). No cluster is left empty unless `m` exceeds the number of
/// items.
pub fn kmeans_partition(features: &[Vec<f64>], m: usize, seed: u64) -> Result<SharedHinPartition> {
    if m < 1 {
        return Err(Error::arg("number of shared HINs must be at least 1"));
    }
    let n = features.len();
    if let Some(dim) = features.first().map(Vec::len) {
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::arg("item feature vectors differ in dimension"));
        }
    }
    if m >= n {
        return SharedHinPartition::from_assignment(m, (0..n).collect());
    }
    let mut rng = stream(seed, Purpose::Cluster, &[m as u64]);
    let mut centers = seed_centers(features, m, &mut rng);
    let mut assignment: Vec<usize> = features.iter().map(|f| nearest(f, &centers).0).collect();
    fill_empty(features, &mut assignment, &mut centers);
    for _ in 0..MAX_ITERATIONS {
        recompute_centers(features, &assignment, &mut centers);
        let mut next: Vec<usize> = features.iter().map(|f| nearest(f, &centers).0).collect();
        fill_empty(features, &mut next, &mut centers);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    SharedHinPartition::from_assignment(m, assignment)
}

/// Clusters items into `m` shared HINs from their shared-knowledge
/// incidence vectors.
pub fn cluster_items(
    hin: &Hin,
    schema: &InteractionSchema,
    shared: &SharedSubgraph,
    m: usize,
    seed: u64,
) -> Result<SharedHinPartition> {
    let features = item_features(hin, schema, shared);
    let mut partition = kmeans_partition(&features, m, seed)?;
    partition.attach_shared_edges(schema, hin, shared);
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_cluster_holds_everything() {
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let p = kmeans_partition(&f, 1, 3).unwrap();
        assert_eq!(p.members(0), &[0, 1, 2]);
    }

    #[test]
    fn zero_clusters_rejected() {
        assert!(kmeans_partition(&[vec![1.0]], 0, 0).is_err());
    }

    #[test]
    fn duplicated_vectors_share_a_cluster() {
        let f = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        for m in 2..=3 {
            for seed in 0..20 {
                let p = kmeans_partition(&f, m, seed).unwrap();
                assert_eq!(p.shared_hin_of(0), p.shared_hin_of(2), "m={m} seed={seed}");
            }
        }
    }

    #[test]
    fn more_clusters_than_items() {
        let f = vec![vec![1.0], vec![2.0]];
        let p = kmeans_partition(&f, 4, 0).unwrap();
        assert_eq!(p.num_shared(), 4);
        assert!(p.members(3).is_empty());
    }

    #[test]
    fn fewer_distinct_points_than_clusters_leaves_none_empty() {
        let f: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 3) as f64]).collect();
        let p = kmeans_partition(&f, 5, 1).unwrap();
        assert!((0..5).all(|c| !p.members(c).is_empty()));
    }

    proptest! {
        #[test]
        fn partition_is_total_and_deterministic(
            points in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..40),
            m in 1usize..8,
            seed in any::<u64>(),
        ) {
            let a = kmeans_partition(&points, m, seed).unwrap();
            let b = kmeans_partition(&points, m, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let total: usize = (0..m).map(|c| a.members(c).len()).sum();
            prop_assert_eq!(total, points.len());
            if m <= points.len() {
                prop_assert!((0..m).all(|c| !a.members(c).is_empty()));
            }
        }
    }
}
