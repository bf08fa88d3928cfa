//! Typed heterogeneous graphs.
//!
//! A [`Hin`] stores string-identified nodes and typed edges. Type ids are
//! dense and assigned by first appearance, so loading the same files twice
//! always yields the same internal numbering.

mod cluster;
mod metapath;
mod partition;

pub use cluster::{cluster_items, item_features, kmeans_partition, SharedHinPartition};
pub use metapath::{meta_path_neighbors, MetaPath, TypedAdjacency};
pub use partition::{
    partition, semantic_guided_item_set, user_shared_hin_list, InteractionSchema, ItemGroup, PrivateView,
    SharedHinList, SharedSubgraph,
};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct NodeType(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct EdgeType(pub u32);

/// A typed edge between two dense node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: EdgeType,
}

/// Heterogeneous information network with a private/shared edge-type split.
#[derive(Debug, Clone)]
pub struct Hin {
    node_names: Vec<String>,
    node_types: Vec<NodeType>,
    index: HashMap<String, usize>,
    node_type_names: Vec<String>,
    edge_type_names: Vec<String>,
    edges: Vec<Edge>,
    private_types: BTreeSet<EdgeType>,
}

fn intern(names: &mut Vec<String>, lookup: &mut HashMap<String, u32>, name: &str) -> u32 {
    if let Some(&id) = lookup.get(name) {
        return id;
    }
    let id = names.len() as u32;
    names.push(name.to_string());
    lookup.insert(name.to_string(), id);
    id
}

impl Hin {
    /// Builds a validated graph from `(node_id, node_type)` and
    /// `(src, dst, edge_type)` records.
    ///
    /// Duplicate edges are dropped. Private edge type names that never occur
    /// in `edges` are still registered, after all observed types.
    pub fn from_records<N, E>(nodes: N, edges: E, private_edge_types: &[&str]) -> Result<Self>
    where
        N: IntoIterator<Item = (String, String)>,
        E: IntoIterator<Item = (String, String, String)>,
    {
        let mut node_names = Vec::new();
        let mut node_types = Vec::new();
        let mut index = HashMap::new();
        let mut node_type_names = Vec::new();
        let mut node_type_lookup = HashMap::new();
        for (id, ty) in nodes {
            let t = intern(&mut node_type_names, &mut node_type_lookup, &ty);
            match index.get(&id) {
                Some(&existing) => {
                    if node_types[existing] != NodeType(t) {
                        return Err(Error::Integrity(format!("node {id} declared with two types")));
                    }
                }
                None => {
                    index.insert(id.clone(), node_names.len());
                    node_names.push(id);
                    node_types.push(NodeType(t));
                }
            }
        }

        let mut edge_type_names = Vec::new();
        let mut edge_type_lookup = HashMap::new();
        let mut seen = HashSet::new();
        let mut edge_list = Vec::new();
        for (src, dst, ty) in edges {
            let s = *index
                .get(&src)
                .ok_or_else(|| Error::Integrity(format!("edge references unknown node {src}")))?;
            let d = *index
                .get(&dst)
                .ok_or_else(|| Error::Integrity(format!("edge references unknown node {dst}")))?;
            let t = EdgeType(intern(&mut edge_type_names, &mut edge_type_lookup, &ty));
            let e = Edge { src: s, dst: d, ty: t };
            if seen.insert(e) {
                edge_list.push(e);
            }
        }

        let private_types = private_edge_types
            .iter()
            .map(|name| EdgeType(intern(&mut edge_type_names, &mut edge_type_lookup, name)))
            .collect::<BTreeSet<_>>();

        if node_type_names.len() + edge_type_names.len() <= 2 {
            return Err(Error::Schema(format!(
                "graph is not heterogeneous: {} node types and {} edge types",
                node_type_names.len(),
                edge_type_names.len()
            )));
        }

        Ok(Hin {
            node_names,
            node_types,
            index,
            node_type_names,
            edge_type_names,
            edges: edge_list,
            private_types,
        })
    }

    /// Reads the node and edge TSV files.
    pub fn load(nodes_path: &Path, edges_path: &Path, private_edge_types: &[&str]) -> Result<Self> {
        let nodes = read_tsv(nodes_path, 2)?
            .into_iter()
            .map(|mut f| {
                let ty = f.pop().unwrap();
                (f.pop().unwrap(), ty)
            })
            .collect::<Vec<_>>();
        let edges = read_tsv(edges_path, 3)?
            .into_iter()
            .map(|mut f| {
                let ty = f.pop().unwrap();
                let dst = f.pop().unwrap();
                (f.pop().unwrap(), dst, ty)
            })
            .collect::<Vec<_>>();
        Self::from_records(nodes, edges, private_edge_types)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_type(&self, node: usize) -> NodeType {
        self.node_types[node]
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn node_name(&self, node: usize) -> &str {
        &self.node_names[node]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn node_type_by_name(&self, name: &str) -> Option<NodeType> {
        self.node_type_names
            .iter()
            .position(|n| n == name)
            .map(|i| NodeType(i as u32))
    }

    pub fn edge_type_by_name(&self, name: &str) -> Option<EdgeType> {
        self.edge_type_names
            .iter()
            .position(|n| n == name)
            .map(|i| EdgeType(i as u32))
    }

    pub fn node_type_name(&self, ty: NodeType) -> &str {
        &self.node_type_names[ty.0 as usize]
    }

    pub fn edge_type_name(&self, ty: EdgeType) -> &str {
        &self.edge_type_names[ty.0 as usize]
    }

    pub fn num_node_types(&self) -> usize {
        self.node_type_names.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_type_names.len()
    }

    pub fn is_private(&self, ty: EdgeType) -> bool {
        self.private_types.contains(&ty)
    }

    pub fn private_edge_types(&self) -> impl Iterator<Item = EdgeType> + '_ {
        self.private_types.iter().copied()
    }

    /// Unordered endpoint type pairs observed for an edge type.
    pub fn edge_type_endpoints(&self, ty: EdgeType) -> BTreeSet<(NodeType, NodeType)> {
        self.edges
            .iter()
            .filter(|e| e.ty == ty)
            .map(|e| {
                let (a, b) = (self.node_types[e.src], self.node_types[e.dst]);
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }

    pub fn nodes_of_type(&self, ty: NodeType) -> impl Iterator<Item = usize> + '_ {
        self.node_types
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t == ty)
            .map(|(i, _)| i)
    }

    pub fn count_edges(&self, private: bool) -> usize {
        self.edges.iter().filter(|e| self.is_private(e.ty) == private).count()
    }
}

fn read_tsv(path: &Path, fields: usize) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<String> = line.split('\t').map(str::to_string).collect();
        if parts.len() != fields || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {fields} non-empty tab-separated fields"),
            });
        }
        rows.push(parts);
    }
    Ok(rows)
}
