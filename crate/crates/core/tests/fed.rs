use std::collections::BTreeSet;

use hinfed::config::{RunConfig, TrainPositives};
use hinfed::dataset::{gen_synth, Dataset, SynthSpec};
use hinfed::fed::{
    local_train, published_graph, recover_neighbors, run, sample_clients, sample_pairs, ClientState, Federation,
    LdpConfig,
};
use hinfed::hgnn::{backward, forward, ModelParams, Neighborhoods};
use hinfed::hin::{partition, Hin, MetaPath, PrivateView, SharedHinList};
use hinfed::perturb::{PerturbedAdjacency, PublishedGroup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn s(x: &str) -> String {
    x.to_string()
}

/// 5 users, 6 items in 2 categories; every user has one private edge so the
/// schema can be inferred.
fn fixture() -> Dataset {
    let mut nodes: Vec<(String, String)> = (0..5).map(|u| (format!("u{u}"), s("U"))).collect();
    nodes.extend((0..6).map(|i| (format!("b{i}"), s("B"))));
    nodes.extend((0..2).map(|c| (format!("c{c}"), s("C"))));
    let mut edges: Vec<(String, String, String)> =
        (0..5).map(|u| (format!("u{u}"), format!("b{u}"), s("U-B"))).collect();
    edges.extend((0..6).map(|i| (format!("b{i}"), format!("c{}", i / 3), s("B-C"))));
    Dataset::new(Hin::from_records(nodes, edges, &["U-B"]).unwrap()).unwrap()
}

fn adjacency(user: usize, num_items: usize, items: &[usize]) -> PerturbedAdjacency {
    PerturbedAdjacency::new(
        user,
        SharedHinList(vec![true]),
        vec![PublishedGroup {
            shared_hin: 0,
            items: (0..num_items).collect(),
            bits: (0..num_items).map(|i| items.contains(&i)).collect(),
        }],
    )
}

/// Walk enumeration straight off an edge list.
fn brute_force(edges: &[(usize, usize, u32)], types: &[u32], path: &MetaPath, start: usize) -> BTreeSet<usize> {
    let mut frontier = vec![start];
    for (hop, et) in path.edge_types().iter().enumerate() {
        let want = path.node_types()[hop + 1].0;
        let mut next = Vec::new();
        for &n in &frontier {
            for &(a, b, t) in edges {
                if t != et.0 {
                    continue;
                }
                for (x, y) in [(a, b), (b, a)] {
                    if x == n && types[y] == want {
                        next.push(y);
                    }
                }
            }
        }
        frontier = next;
    }
    frontier.into_iter().collect()
}

#[test]
fn users_sharing_an_item_are_neighbors() {
    let data = fixture();
    let (_, shared) = partition(&data.hin, &data.schema).unwrap();
    let published = vec![adjacency(0, 6, &[2]), adjacency(1, 6, &[2, 4])];
    let graph = published_graph(&data.hin, &data.schema, &shared, &published).unwrap();
    let path = MetaPath::parse("U-B-U", &data.hin).unwrap();
    let nb = recover_neighbors(&graph, &data.schema, std::slice::from_ref(&path), &[], 64, 0).unwrap();
    assert_eq!(nb.user_paths[0][0], vec![0, 1]);
    assert_eq!(nb.user_paths[0][1], vec![0, 1]);
    // no published interactions: falls back to itself
    assert_eq!(nb.user_paths[0][3], vec![3]);
}

#[test]
fn recovered_neighbors_match_brute_force_walks() {
    let data = fixture();
    let (_, shared) = partition(&data.hin, &data.schema).unwrap();
    let published = vec![
        adjacency(0, 6, &[0, 1]),
        adjacency(1, 6, &[1, 4]),
        adjacency(2, 6, &[5]),
        adjacency(3, 6, &[2, 3]),
        adjacency(4, 6, &[]),
    ];
    let graph = published_graph(&data.hin, &data.schema, &shared, &published).unwrap();
    let user_paths = vec![
        MetaPath::parse("U-B-U", &data.hin).unwrap(),
        MetaPath::parse("U-B-C-B-U", &data.hin).unwrap(),
    ];
    let item_paths = vec![
        MetaPath::parse("B-U-B", &data.hin).unwrap(),
        MetaPath::parse("B-C-B", &data.hin).unwrap(),
    ];
    let nb = recover_neighbors(&graph, &data.schema, &user_paths, &item_paths, 64, 3).unwrap();

    let hin = &data.hin;
    let ub = hin.edge_type_by_name("U-B").unwrap().0;
    let mut edges: Vec<(usize, usize, u32)> = hin
        .edges()
        .iter()
        .filter(|e| !hin.is_private(e.ty))
        .map(|e| (e.src, e.dst, e.ty.0))
        .collect();
    for adj in &published {
        for i in adj.positives() {
            edges.push((data.schema.user_node(adj.user), data.schema.item_node(i), ub));
        }
    }
    let types: Vec<u32> = hin.node_types().iter().map(|t| t.0).collect();
    let local = |set: BTreeSet<usize>, fallback: usize| -> Vec<usize> {
        if set.is_empty() {
            return vec![fallback];
        }
        set.into_iter().map(|n| data.schema.local_index(n).unwrap()).collect()
    };
    for (k, path) in user_paths.iter().enumerate() {
        for u in 0..5 {
            let want = local(brute_force(&edges, &types, path, data.schema.user_node(u)), u);
            assert_eq!(nb.user_paths[k][u], want, "{} user {u}", path.name());
        }
    }
    for (k, path) in item_paths.iter().enumerate() {
        for i in 0..6 {
            let want = local(brute_force(&edges, &types, path, data.schema.item_node(i)), i);
            assert_eq!(nb.item_paths[k][i], want, "{} item {i}", path.name());
        }
    }
}

fn small_synth() -> Dataset {
    gen_synth(&SynthSpec {
        users: 40,
        items: 30,
        blocks: 3,
        intra: 0.3,
        inter: 0.02,
        seed: 1,
    })
    .unwrap()
}

fn small_config() -> RunConfig {
    RunConfig {
        n_shared: 3,
        dim: 8,
        batch: 8,
        rounds: 6,
        eval_every: 3,
        eval_negatives: 10,
        meta_paths_user: vec![s("U-B-U"), s("U-B-C-B-U")],
        meta_paths_item: vec![s("B-U-B"), s("B-C-B")],
        ..RunConfig::default()
    }
}

#[test]
fn zero_degree_users_are_not_clients() {
    let mut nodes: Vec<(String, String)> = (0..3).map(|u| (format!("u{u}"), s("U"))).collect();
    nodes.extend((0..4).map(|i| (format!("b{i}"), s("B"))));
    nodes.push((s("c0"), s("C")));
    let mut edges = vec![
        (s("u0"), s("b0"), s("U-B")),
        (s("u0"), s("b1"), s("U-B")),
        (s("u1"), s("b2"), s("U-B")),
    ];
    edges.extend((0..4).map(|i| (format!("b{i}"), s("c0"), s("B-C"))));
    let data = Dataset::new(Hin::from_records(nodes, edges, &["U-B"]).unwrap()).unwrap();
    let config = RunConfig {
        n_shared: 1,
        dim: 4,
        eval_negatives: 2,
        ..RunConfig::default()
    };
    let fed = Federation::bootstrap(&data, &config).unwrap();
    let users: Vec<usize> = fed.clients.iter().map(|c| c.user).collect();
    assert_eq!(users, vec![0, 1]);
    assert_eq!(fed.split.users.len(), 1);
    assert_eq!(fed.split.excluded, 2);
}

#[test]
fn client_sampling() {
    let roster: Vec<usize> = (0..100).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample_clients(&roster[..5], 32, &mut rng), roster[..5].to_vec());
    let picked = sample_clients(&roster, 32, &mut rng);
    assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), 32);
    let again = sample_clients(&roster, 32, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(again, sample_clients(&roster, 32, &mut ChaCha8Rng::seed_from_u64(9)));
}

fn self_neighbors(users: usize, items: usize) -> Neighborhoods {
    Neighborhoods {
        user_paths: vec![(0..users).map(|u| vec![u]).collect()],
        item_paths: vec![(0..items).map(|i| vec![i]).collect()],
    }
}

fn hand_client(user: usize, num_items: usize, items: &[usize]) -> ClientState {
    ClientState::new(
        PrivateView::from_items(user, num_items, items),
        adjacency(user, num_items, items),
    )
}

#[test]
fn plain_backward_without_privacy_machinery() {
    let params = ModelParams::init(2, 6, 4, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
    let nb = self_neighbors(2, 6);
    let client = hand_client(1, 6, &[0, 3]);
    let ldp = LdpConfig::new(1e9, 0.0, 0).unwrap();
    let reads = client.raw_reads();
    let update = local_train(
        &client,
        &params,
        &nb,
        &ldp,
        2,
        TrainPositives::Private,
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap()
    .unwrap();
    let pairs = sample_pairs(1, &[0, 3], 6, 2, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(pairs.len(), 4);
    assert!(pairs.iter().all(|p| p.negative != 0 && p.negative != 3));
    let cache = forward(&params, &pairs, &nb).unwrap();
    assert_eq!(update.gradients, backward(&params, &cache));
    assert_eq!(update.loss, cache.loss / 4.0);
    // construction reads the view once; training reads the local copy
    assert_eq!(client.raw_reads(), reads);
}

#[test]
fn client_without_positives_is_skipped() {
    let params = ModelParams::init(1, 3, 4, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
    let ldp = LdpConfig::new(0.2, 0.1, 1).unwrap();
    let nb = self_neighbors(1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(local_train(
        &hand_client(0, 3, &[]),
        &params,
        &nb,
        &ldp,
        1,
        TrainPositives::Private,
        &mut rng
    )
    .unwrap()
    .is_none());
    assert!(local_train(
        &hand_client(0, 3, &[0, 1, 2]),
        &params,
        &nb,
        &ldp,
        1,
        TrainPositives::Private,
        &mut rng
    )
    .unwrap()
    .is_none());
}

#[test]
fn pseudo_rows_extend_the_touched_set() {
    let params = ModelParams::init(1, 10, 4, 1, 1, &mut ChaCha8Rng::seed_from_u64(1));
    let nb = self_neighbors(1, 10);
    let client = hand_client(0, 10, &[2, 7]);
    let without = LdpConfig::new(1e9, 0.0, 0).unwrap();
    let with = LdpConfig::new(1e9, 0.0, 3).unwrap();
    let a = local_train(
        &client,
        &params,
        &nb,
        &without,
        1,
        TrainPositives::Private,
        &mut ChaCha8Rng::seed_from_u64(5),
    )
    .unwrap()
    .unwrap();
    let b = local_train(
        &client,
        &params,
        &nb,
        &with,
        1,
        TrainPositives::Private,
        &mut ChaCha8Rng::seed_from_u64(5),
    )
    .unwrap()
    .unwrap();
    let rows_a: BTreeSet<usize> = a.gradients.items.keys().copied().collect();
    let rows_b: BTreeSet<usize> = b.gradients.items.keys().copied().collect();
    assert!(rows_a.is_subset(&rows_b));
    let extra: Vec<usize> = rows_b.difference(&rows_a).copied().collect();
    assert_eq!(extra.len(), 3);
    for i in extra {
        assert!(i != 2 && i != 7);
        assert!(b.gradients.items[&i].iter().all(|&x| x == 0.0));
    }
    assert_eq!(a.gradients.users, b.gradients.users);
}

/// Fraction of uploads carrying each item row, for a client whose only
/// positive is `positive`.
fn row_frequencies(positive: usize, pseudo: usize, trials: u64) -> Vec<f64> {
    let params = ModelParams::init(1, 4, 4, 1, 1, &mut ChaCha8Rng::seed_from_u64(2));
    let nb = self_neighbors(1, 4);
    let client = hand_client(0, 4, &[positive]);
    let ldp = LdpConfig::new(0.2, 0.1, pseudo).unwrap();
    let mut counts = [0usize; 4];
    for t in 0..trials {
        let up = local_train(
            &client,
            &params,
            &nb,
            &ldp,
            1,
            TrainPositives::Private,
            &mut ChaCha8Rng::seed_from_u64(t),
        )
        .unwrap()
        .unwrap();
        for &i in up.gradients.items.keys() {
            counts[i] += 1;
        }
    }
    counts.iter().map(|&c| c as f64 / trials as f64).collect()
}

fn max_z(a: &[f64], b: &[f64], n: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let pooled = (p + q) / 2.0;
            let se = (2.0 * pooled * (1.0 - pooled) / n).sqrt();
            if se == 0.0 {
                if p == q {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (p - q).abs() / se
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn row_presence_does_not_reveal_membership() {
    // On 4 items, one positive plus one negative plus two pseudo rows covers
    // every row, whichever item is the true positive.
    let trials = 2000;
    let a = row_frequencies(0, 2, trials);
    let b = row_frequencies(1, 2, trials);
    assert!(max_z(&a, &b, trials as f64) < 3.0, "{a:?} vs {b:?}");
    // without pseudo rows the same test tells the two clients apart
    let a = row_frequencies(0, 0, trials);
    let b = row_frequencies(1, 0, trials);
    assert!(max_z(&a, &b, trials as f64) > 3.0);
}

#[test]
fn runs_are_deterministic_and_never_reread_private_views() {
    let data = small_synth();
    let config = small_config();
    let (fed_a, a) = run(&data, &config).unwrap();
    let (fed_b, b) = run(&data, &config).unwrap();
    assert_eq!(a.len(), 6);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.round, x.loss.to_bits()), (y.round, y.loss.to_bits()));
        assert_eq!(x.metrics, y.metrics);
    }
    assert_eq!(fed_a.server.params, fed_b.server.params);
    assert!(a[2].metrics.is_some() && a[1].metrics.is_none() && a[5].metrics.is_some());
    assert_eq!(fed_a.raw_reads_since_bootstrap(), 0);
    assert!(fed_a.server.params.is_finite());
}

#[test]
fn zero_rounds_leave_initialization() {
    let data = small_synth();
    let config = RunConfig {
        rounds: 0,
        ..small_config()
    };
    let fresh = Federation::bootstrap(&data, &config).unwrap();
    let (fed, reports) = run(&data, &config).unwrap();
    assert!(reports.is_empty());
    assert_eq!(fed.server.params, fresh.server.params);
}

#[test]
fn patience_stops_early() {
    let data = small_synth();
    let config = RunConfig {
        rounds: 100,
        eval_every: 1,
        patience: 2,
        lr: 1e-9,
        ..small_config()
    };
    let (_, reports) = run(&data, &config).unwrap();
    assert!(reports.len() < 100);
    assert!(reports.last().unwrap().metrics.is_some());
}
