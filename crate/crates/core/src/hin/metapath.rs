use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::{Edge, EdgeType, Hin, NodeType};
use crate::error::{Error, Result};

/// An alternating node-type / edge-type sequence such as `U-B-C-B-U`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    name: String,
    node_types: Vec<NodeType>,
    edge_types: Vec<EdgeType>,
    symmetric: bool,
}

impl MetaPath {
    /// Builds a path from explicit type sequences.
    pub fn new(name: impl Into<String>, node_types: Vec<NodeType>, edge_types: Vec<EdgeType>) -> Result<Self> {
        if node_types.len() != edge_types.len() + 1 || edge_types.is_empty() {
            return Err(Error::arg(
                "meta-path needs at least one relation and one more node type than relations",
            ));
        }
        let symmetric = node_types.iter().eq(node_types.iter().rev()) && edge_types.iter().eq(edge_types.iter().rev());
        Ok(MetaPath {
            name: name.into(),
            node_types,
            edge_types,
            symmetric,
        })
    }

    /// Parses a hyphen-joined list of node type names, resolving each hop to
    /// the unique edge type connecting the two node types.
    pub fn parse(spec: &str, hin: &Hin) -> Result<Self> {
        let names: Vec<&str> = spec.split('-').map(str::trim).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "meta-path {spec:?} has fewer than two node types"
            )));
        }
        let node_types = names
            .iter()
            .map(|n| {
                hin.node_type_by_name(n)
                    .ok_or_else(|| Error::Config(format!("meta-path {spec:?}: unknown node type {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let endpoints: Vec<_> = (0..hin.num_edge_types())
            .map(|t| hin.edge_type_endpoints(EdgeType(t as u32)))
            .collect();
        let mut edge_types = Vec::with_capacity(node_types.len() - 1);
        for w in node_types.windows(2) {
            let key = if w[0] <= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
            let candidates: Vec<EdgeType> = endpoints
                .iter()
                .enumerate()
                .filter(|(_, set)| set.contains(&key))
                .map(|(t, _)| EdgeType(t as u32))
                .collect();
            match candidates.as_slice() {
                [t] => edge_types.push(*t),
                [] => {
                    return Err(Error::Config(format!(
                        "meta-path {spec:?}: no edge type connects {} and {}",
                        hin.node_type_name(w[0]),
                        hin.node_type_name(w[1])
                    )))
                }
                _ => {
                    return Err(Error::Config(format!(
                        "meta-path {spec:?}: several edge types connect {} and {}",
                        hin.node_type_name(w[0]),
                        hin.node_type_name(w[1])
                    )))
                }
            }
        }
        Self::new(spec, node_types, edge_types)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn start(&self) -> NodeType {
        self.node_types[0]
    }

    pub fn end(&self) -> NodeType {
        *self.node_types.last().unwrap()
    }
}

/// Undirected typed adjacency lists.
#[derive(Debug, Clone)]
pub struct TypedAdjacency {
    node_types: Vec<NodeType>,
    adj: Vec<Vec<(EdgeType, usize)>>,
}

impl TypedAdjacency {
    pub fn new<I>(node_types: Vec<NodeType>, edges: I) -> Self
    where
        I: IntoIterator<Item = Edge>,
    {
        let mut adj = vec![Vec::new(); node_types.len()];
        for e in edges {
            adj[e.src].push((e.ty, e.dst));
            if e.src != e.dst {
                adj[e.dst].push((e.ty, e.src));
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        TypedAdjacency { node_types, adj }
    }

    pub fn node_type(&self, node: usize) -> NodeType {
        self.node_types[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    /// Neighbors of `node` across edges of type `ty`.
    pub fn neighbors(&self, node: usize, ty: EdgeType) -> impl Iterator<Item = usize> + '_ {
        let list = &self.adj[node];
        let start = list.partition_point(|&(t, _)| t < ty);
        list[start..]
            .iter()
            .take_while(move |&&(t, _)| t == ty)
            .map(|&(_, v)| v)
    }

    /// Endpoints of all walks from `node` matching the path's type sequence.
    pub fn walk(&self, node: usize, path: &MetaPath) -> Result<BTreeSet<usize>> {
        if self.node_types[node] != path.start() {
            return Err(Error::arg(format!(
                "node {node} does not have the meta-path's start type"
            )));
        }
        let mut frontier = BTreeSet::from([node]);
        for (hop, &ty) in path.edge_types().iter().enumerate() {
            let next_type = path.node_types()[hop + 1];
            let mut next = BTreeSet::new();
            for &u in &frontier {
                next.extend(self.neighbors(u, ty).filter(|&v| self.node_types[v] == next_type));
            }
            frontier = next;
            if frontier.is_empty() {
                break;
            }
        }
        Ok(frontier)
    }
}

/// Meta-path based neighbors of `node`, sorted ascending.
///
/// Nodes without any matching walk get themselves as sole neighbor. Sets
/// larger than `max_neighbors` are replaced by a uniform subsample drawn from
/// `rng`.
pub fn meta_path_neighbors<R: Rng + ?Sized>(
    adjacency: &TypedAdjacency,
    node: usize,
    path: &MetaPath,
    max_neighbors: Option<usize>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let reached = adjacency.walk(node, path)?;
    if reached.is_empty() {
        return Ok(vec![node]);
    }
    let all: Vec<usize> = reached.into_iter().collect();
    match max_neighbors {
        Some(cap) if cap > 0 && all.len() > cap => {
            let mut picked: Vec<usize> = sample(rng, all.len(), cap).into_iter().map(|i| all[i]).collect();
            picked.sort_unstable();
            Ok(picked)
        }
        _ => Ok(all),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::Hin;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> Hin {
        let nodes = [
            ("u1", "U"),
            ("u2", "U"),
            ("u3", "U"),
            ("b1", "B"),
            ("b2", "B"),
            ("c1", "C"),
        ];
        let edges = [
            ("u1", "b1", "U-B"),
            ("u2", "b1", "U-B"),
            ("u3", "b2", "U-B"),
            ("b1", "c1", "B-C"),
            ("b2", "c1", "B-C"),
        ];
        Hin::from_records(
            nodes.iter().map(|(a, b)| (a.to_string(), b.to_string())),
            edges
                .iter()
                .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())),
            &["U-B"],
        )
        .unwrap()
    }

    fn adjacency(hin: &Hin) -> TypedAdjacency {
        TypedAdjacency::new(hin.node_types().to_vec(), hin.edges().iter().copied())
    }

    #[test]
    fn parse_resolves_edge_types() {
        let hin = fixture();
        let p = MetaPath::parse("U-B-C-B-U", &hin).unwrap();
        assert_eq!(p.edge_types().len(), 4);
        assert!(p.is_symmetric());
        assert!(MetaPath::parse("U-C", &hin).is_err());
        assert!(MetaPath::parse("U-X-U", &hin).is_err());
    }

    #[test]
    fn shared_item_links_users() {
        let hin = fixture();
        let adj = adjacency(&hin);
        let p = MetaPath::parse("U-B-U", &hin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u1 = hin.node_index("u1").unwrap();
        let u2 = hin.node_index("u2").unwrap();
        let n = meta_path_neighbors(&adj, u1, &p, None, &mut rng).unwrap();
        assert!(n.contains(&u2));
        assert!(n.contains(&u1));
        let u3 = hin.node_index("u3").unwrap();
        let long = MetaPath::parse("U-B-C-B-U", &hin).unwrap();
        let n = meta_path_neighbors(&adj, u1, &long, None, &mut rng).unwrap();
        assert_eq!(n, vec![u1, u2, u3]);
    }

    #[test]
    fn isolated_user_falls_back_to_self() {
        let mut hin = fixture();
        hin = Hin::from_records(
            (0..hin.num_nodes())
                .map(|i| {
                    (
                        hin.node_name(i).to_string(),
                        hin.node_type_name(hin.node_type(i)).to_string(),
                    )
                })
                .chain([("u9".to_string(), "U".to_string())]),
            hin.edges().iter().map(|e| {
                (
                    hin.node_name(e.src).to_string(),
                    hin.node_name(e.dst).to_string(),
                    hin.edge_type_name(e.ty).to_string(),
                )
            }),
            &["U-B"],
        )
        .unwrap();
        let adj = adjacency(&hin);
        let p = MetaPath::parse("U-B-U", &hin).unwrap();
        let u9 = hin.node_index("u9").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(meta_path_neighbors(&adj, u9, &p, Some(64), &mut rng).unwrap(), vec![u9]);
    }

    #[test]
    fn type_mismatch_is_argument_error() {
        let hin = fixture();
        let adj = adjacency(&hin);
        let p = MetaPath::parse("U-B-U", &hin).unwrap();
        let b1 = hin.node_index("b1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            meta_path_neighbors(&adj, b1, &p, None, &mut rng),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn subsampling_is_seeded_and_bounded() {
        let hin = fixture();
        let adj = adjacency(&hin);
        let p = MetaPath::parse("U-B-C-B-U", &hin).unwrap();
        let u1 = hin.node_index("u1").unwrap();
        let a = meta_path_neighbors(&adj, u1, &p, Some(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = meta_path_neighbors(&adj, u1, &p, Some(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
    }
}
