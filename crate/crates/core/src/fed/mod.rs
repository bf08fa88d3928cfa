//! Round-based federated training.
//!
//! [`Federation::bootstrap`] publishes every client's perturbed adjacency
//! exactly once and recovers meta-path neighborhoods on the server from the
//! published graph. [`Federation::train`] then runs rounds of client
//! sampling, concurrent local training, aggregation and an SGD step.

mod ldp;

pub use ldp::{aggregate, laplace, ldp_clip_noise, sgd_update, LdpConfig};

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TrainPositives};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, leave_one_out_split, EvalSplit, Metrics};
use crate::hgnn::{backward, forward, Gradients, ModelParams, Neighborhoods, Pair};
use crate::hin::{
    cluster_items, item_features, meta_path_neighbors, partition, EdgeType, Hin, InteractionSchema, MetaPath,
    PrivateView, SharedHinPartition, SharedSubgraph, TypedAdjacency,
};
use crate::perturb::{publish, shared_hin_embeddings, PerturbedAdjacency};
use crate::rng::{stream, Purpose};

/// A client's local state. The raw view never leaves this struct.
#[derive(Debug)]
pub struct ClientState {
    pub user: usize,
    view: PrivateView,
    local_items: Vec<usize>,
    pub published: PerturbedAdjacency,
}

impl ClientState {
    /// Takes a client-local copy of the view's items; this is the only raw
    /// read a client makes.
    pub fn new(view: PrivateView, published: PerturbedAdjacency) -> Self {
        let local_items = view.items();
        ClientState {
            user: view.user(),
            view,
            local_items,
            published,
        }
    }

    /// Positives used for local training.
    pub fn train_positives(&self, source: TrainPositives) -> Vec<usize> {
        match source {
            TrainPositives::Private => self.local_items.clone(),
            TrainPositives::Published => self.published.positives(),
        }
    }

    pub fn raw_reads(&self) -> usize {
        self.view.read_count()
    }
}

/// What the server holds: parameters, the published graph and the
/// neighborhoods recovered from it.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: ModelParams,
    pub published: Vec<PerturbedAdjacency>,
    pub neighbors: Neighborhoods,
    pub round: usize,
    pub config: RunConfig,
}

/// Per-round training record. Metrics are present on evaluation rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub loss: f64,
    pub metrics: Option<Metrics>,
    pub seconds: f64,
}

/// Resolves the configured meta-path strings, falling back to the direct
/// user-item-user and item-user-item paths.
pub fn resolve_meta_paths(dataset: &Dataset, config: &RunConfig) -> Result<(Vec<MetaPath>, Vec<MetaPath>)> {
    let hin = &dataset.hin;
    let user = hin.node_type_name(dataset.schema.user_type()).to_string();
    let item = hin.node_type_name(dataset.schema.item_type()).to_string();
    let resolve = |specs: &[String], default: String, anchor: &str, key: &str| -> Result<Vec<MetaPath>> {
        let specs = if specs.is_empty() {
            vec![default]
        } else {
            specs.to_vec()
        };
        specs
            .iter()
            .map(|s| {
                let path = MetaPath::parse(s, hin)?;
                let anchor_ty = hin.node_type_by_name(anchor).unwrap();
                if path.start() != anchor_ty || path.end() != anchor_ty {
                    return Err(Error::Config(format!(
                        "{key}: meta-path {s:?} must start and end at {anchor}"
                    )));
                }
                Ok(path)
            })
            .collect()
    };
    Ok((
        resolve(
            &config.meta_paths_user,
            format!("{user}-{item}-{user}"),
            &user,
            "meta_paths_user",
        )?,
        resolve(
            &config.meta_paths_item,
            format!("{item}-{user}-{item}"),
            &item,
            "meta_paths_item",
        )?,
    ))
}

/// The private edge type that carries user-item interactions.
pub fn interaction_type(hin: &Hin, schema: &InteractionSchema) -> Result<EdgeType> {
    let (u, i) = (schema.user_type(), schema.item_type());
    let key = if u <= i { (u, i) } else { (i, u) };
    hin.private_edge_types()
        .find(|&t| hin.edge_type_endpoints(t).contains(&key))
        .ok_or_else(|| Error::Schema("no private edge type links users and items".into()))
}

/// The graph the server sees: shared edges plus published interactions.
pub fn published_graph(
    hin: &Hin,
    schema: &InteractionSchema,
    shared: &SharedSubgraph,
    published: &[PerturbedAdjacency],
) -> Result<TypedAdjacency> {
    let ty = interaction_type(hin, schema)?;
    let interactions = published.iter().flat_map(|adj| {
        let src = schema.user_node(adj.user);
        adj.positives().into_iter().map(move |i| crate::hin::Edge {
            src,
            dst: schema.item_node(i),
            ty,
        })
    });
    let edges: Vec<_> = shared.edges.iter().copied().chain(interactions).collect();
    Ok(TypedAdjacency::new(hin.node_types().to_vec(), edges))
}

/// Meta-path neighbors of every user and item in dense local indices.
pub fn recover_neighbors(
    graph: &TypedAdjacency,
    schema: &InteractionSchema,
    user_paths: &[MetaPath],
    item_paths: &[MetaPath],
    max_neighbors: usize,
    seed: u64,
) -> Result<Neighborhoods> {
    let side = |paths: &[MetaPath], count: usize, node_of: &dyn Fn(usize) -> usize, tag: u64| {
        paths
            .iter()
            .enumerate()
            .map(|(k, path)| {
                (0..count)
                    .map(|local| {
                        let mut rng = stream(seed, Purpose::Neighbors, &[tag, k as u64, local as u64]);
                        let nodes = meta_path_neighbors(graph, node_of(local), path, Some(max_neighbors), &mut rng)?;
                        let mut out: Vec<usize> = nodes.into_iter().filter_map(|n| schema.local_index(n)).collect();
                        out.sort_unstable();
                        Ok(out)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok(Neighborhoods {
        user_paths: side(user_paths, schema.num_users(), &|u| schema.user_node(u), 0)?,
        item_paths: side(item_paths, schema.num_items(), &|i| schema.item_node(i), 1)?,
    })
}

/// Uniform sample without replacement of `min(batch, |roster|)` clients, in
/// roster order.
pub fn sample_clients<R: Rng + ?Sized>(roster: &[usize], batch: usize, rng: &mut R) -> Vec<usize> {
    if batch >= roster.len() {
        return roster.to_vec();
    }
    let mut picked: Vec<usize> = sample(rng, roster.len(), batch).into_iter().collect();
    picked.sort_unstable();
    picked.into_iter().map(|k| roster[k]).collect()
}

/// A client's noised upload and its mean per-pair loss.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub user: usize,
    pub gradients: Gradients,
    pub loss: f64,
}

/// Uniform draw from `0..n` excluding `taken`, or `None` if nothing is left.
fn pick_outside<R: Rng + ?Sized>(n: usize, taken: &BTreeSet<usize>, rng: &mut R) -> Option<usize> {
    let free = n - taken.len();
    if free == 0 {
        return None;
    }
    let k = rng.random_range(0..free);
    (0..n).filter(|i| !taken.contains(i)).nth(k)
}

/// Pairs every positive with `neg_per_pos` uniform draws from the
/// non-positive items. Empty when no such item exists.
pub fn sample_pairs<R: Rng + ?Sized>(
    user: usize,
    positives: &[usize],
    num_items: usize,
    neg_per_pos: usize,
    rng: &mut R,
) -> Vec<Pair> {
    let positive_set: BTreeSet<usize> = positives.iter().copied().collect();
    let mut pairs = Vec::with_capacity(positives.len() * neg_per_pos);
    for &positive in positives {
        for _ in 0..neg_per_pos {
            match pick_outside(num_items, &positive_set, rng) {
                Some(negative) => pairs.push(Pair {
                    user,
                    positive,
                    negative,
                }),
                None => return Vec::new(),
            }
        }
    }
    pairs
}

/// Trains one client on its published positives. Returns `None` when the
/// client has nothing to train on.
pub fn local_train<R: Rng + ?Sized>(
    client: &ClientState,
    params: &ModelParams,
    neighbors: &Neighborhoods,
    ldp: &LdpConfig,
    neg_per_pos: usize,
    source: TrainPositives,
    rng: &mut R,
) -> Result<Option<LocalUpdate>> {
    let positives = client.train_positives(source);
    let num_items = params.num_items();
    let pairs = sample_pairs(client.user, &positives, num_items, neg_per_pos, rng);
    if pairs.is_empty() {
        return Ok(None);
    }
    let cache = forward(params, &pairs, neighbors)?;
    let mut gradients = backward(params, &cache);

    let mut taken: BTreeSet<usize> = gradients.items.keys().copied().collect();
    taken.extend(&positives);
    taken.extend(&client.local_items);
    for _ in 0..ldp.pseudo_items {
        match pick_outside(num_items, &taken, rng) {
            Some(i) => {
                taken.insert(i);
                gradients.items.insert(i, ndarray::Array1::zeros(params.dim));
            }
            None => break,
        }
    }
    Ok(Some(LocalUpdate {
        user: client.user,
        gradients: ldp_clip_noise(gradients, ldp, rng),
        loss: cache.loss / pairs.len() as f64,
    }))
}

/// Saved model plus the config and round that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub round: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Publishes every view with at least one interaction, each from its own
/// stream. Zero-degree views are dropped.
fn publish_views(
    hin: &Hin,
    schema: &InteractionSchema,
    shared: &SharedSubgraph,
    shared_hins: &SharedHinPartition,
    views: Vec<PrivateView>,
    config: &RunConfig,
) -> Result<Vec<(PrivateView, PerturbedAdjacency)>> {
    let perturb_config = config.perturb_config()?;
    let features = item_features(hin, schema, shared);
    let embeddings = shared_hin_embeddings(shared_hins, &features)?;
    views
        .into_par_iter()
        .filter(|v| v.degree() > 0)
        .map(|view| {
            let mut rng = stream(config.seed, Purpose::Publish, &[view.user() as u64]);
            let published = publish(&view, shared_hins, &embeddings, &perturb_config, &mut rng)?;
            Ok((view, published))
        })
        .collect()
}

/// Every user's full view alongside what publishing it reveals, with no
/// evaluation split.
#[derive(Debug)]
pub struct Publication {
    pub views: Vec<PrivateView>,
    pub published: Vec<PerturbedAdjacency>,
    pub shared_hins: SharedHinPartition,
}

pub fn publish_dataset(dataset: &Dataset, config: &RunConfig) -> Result<Publication> {
    config.validate()?;
    let (hin, schema) = (&dataset.hin, &dataset.schema);
    let (views, shared) = partition(hin, schema)?;
    let shared_hins = cluster_items(hin, schema, &shared, config.n_shared, config.seed)?;
    let published = publish_views(hin, schema, &shared, &shared_hins, views.clone(), config)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    Ok(Publication {
        views,
        published,
        shared_hins,
    })
}

/// Server, clients and evaluation split of one run.
#[derive(Debug)]
pub struct Federation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub split: EvalSplit,
    pub shared_hins: SharedHinPartition,
    read_baseline: usize,
}

impl Federation {
    /// Splits off evaluation items, publishes every client with at least one
    /// training interaction, and recovers neighborhoods on the server.
    pub fn bootstrap(dataset: &Dataset, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        config.perturb_config()?;
        LdpConfig::new(config.ldp_clip, config.ldp_noise, config.pseudo_items)?;
        let (user_paths, item_paths) = resolve_meta_paths(dataset, config)?;
        let (hin, schema) = (&dataset.hin, &dataset.schema);

        let (views, shared) = partition(hin, schema)?;
        let split = leave_one_out_split(&views, config.eval_negatives, &mut stream(seed, Purpose::Split, &[]))?;
        let train_views = split.training_views(&views);
        drop(views);

        let shared_hins = cluster_items(hin, schema, &shared, config.n_shared, seed)?;
        let clients = publish_views(hin, schema, &shared, &shared_hins, train_views, config)?
            .into_iter()
            .map(|(view, published)| ClientState::new(view, published))
            .collect::<Vec<_>>();

        let published: Vec<PerturbedAdjacency> = clients.iter().map(|c| c.published.clone()).collect();
        let graph = published_graph(hin, schema, &shared, &published)?;
        let neighbors = recover_neighbors(&graph, schema, &user_paths, &item_paths, config.max_neighbors, seed)?;
        let params = ModelParams::init(
            schema.num_users(),
            schema.num_items(),
            config.dim,
            user_paths.len(),
            item_paths.len(),
            &mut stream(seed, Purpose::Init, &[]),
        );
        let read_baseline = clients.iter().map(ClientState::raw_reads).sum();
        Ok(Federation {
            server: ServerState {
                params,
                published,
                neighbors,
                round: 0,
                config: config.clone(),
            },
            clients,
            split,
            shared_hins,
            read_baseline,
        })
    }

    /// Raw private-view reads since bootstrap finished. Anything other than
    /// zero means private data was touched after publishing.
    pub fn raw_reads_since_bootstrap(&self) -> usize {
        self.clients.iter().map(ClientState::raw_reads).sum::<usize>() - self.read_baseline
    }

    pub fn evaluate(&self) -> Result<Metrics> {
        evaluate(&self.server.params, &self.server.neighbors, &self.split)
    }

    /// One round: sample, train concurrently, aggregate, update. Returns the
    /// mean client loss.
    pub fn step(&mut self) -> Result<f64> {
        let config = &self.server.config;
        let seed = config.seed;
        let round = self.server.round + 1;
        let ldp = LdpConfig::new(config.ldp_clip, config.ldp_noise, config.pseudo_items)?;
        let roster: Vec<usize> = (0..self.clients.len()).collect();
        let chosen = sample_clients(
            &roster,
            config.batch,
            &mut stream(seed, Purpose::Sampling, &[round as u64]),
        );
        let server = &self.server;
        let updates: Vec<LocalUpdate> = chosen
            .par_iter()
            .map(|&c| {
                let client = &self.clients[c];
                let mut rng = stream(seed, Purpose::LocalTrain, &[client.user as u64, round as u64]);
                local_train(
                    client,
                    &server.params,
                    &server.neighbors,
                    &ldp,
                    config.neg_per_pos,
                    config.train_on,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let lr = config.lr;
        self.server.round = round;
        if updates.is_empty() {
            return Ok(0.0);
        }
        let loss = updates.iter().map(|u| u.loss).sum::<f64>() / updates.len() as f64;
        let grads: Vec<Gradients> = updates.into_iter().map(|u| u.gradients).collect();
        sgd_update(&mut self.server.params, &aggregate(&grads)?, lr);
        Ok(loss)
    }

    /// Runs up to `rounds` rounds, evaluating every `eval_every` rounds and on
    /// the last one, and stopping early once HR@10 has not improved for
    /// `patience` rounds. `observe` sees each report with the parameters
    /// after that round.
    pub fn train(
        &mut self,
        mut observe: impl FnMut(&RoundReport, &ModelParams) -> Result<()>,
    ) -> Result<Vec<RoundReport>> {
        let rounds = self.server.config.rounds;
        let eval_every = self.server.config.eval_every;
        let patience = self.server.config.patience;
        let mut reports = Vec::new();
        let mut best: Option<(f64, usize)> = None;
        while self.server.round < rounds {
            let start = Instant::now();
            let loss = self.step()?;
            let round = self.server.round;
            let mut stop = false;
            let metrics = if round.is_multiple_of(eval_every) || round == rounds {
                let m = self.evaluate()?;
                match best {
                    Some((hr, _)) if m.hr10 <= hr => {}
                    _ => best = Some((m.hr10, round)),
                }
                if let Some((_, at)) = best {
                    stop = patience > 0 && round - at >= patience;
                }
                Some(m)
            } else {
                None
            };
            let report = RoundReport {
                round,
                loss,
                metrics,
                seconds: start.elapsed().as_secs_f64(),
            };
            observe(&report, &self.server.params)?;
            reports.push(report);
            if stop {
                break;
            }
        }
        Ok(reports)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.server.config.clone(),
            round: self.server.round,
            params: self.server.params.clone(),
        }
    }
}

/// Bootstraps and trains with no per-round observer.
pub fn run(dataset: &Dataset, config: &RunConfig) -> Result<(Federation, Vec<RoundReport>)> {
    let mut fed = Federation::bootstrap(dataset, config)?;
    let reports = fed.train(|_, _| Ok(()))?;
    Ok((fed, reports))
}
