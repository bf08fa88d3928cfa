use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Edge, Hin, NodeType, SharedHinPartition};
use crate::error::{Error, Result};

/// Which node type plays the user role and which the item role, plus the
/// dense user/item numbering derived from node order.
#[derive(Debug, Clone)]
pub struct InteractionSchema {
    user_type: NodeType,
    item_type: NodeType,
    users: Vec<usize>,
    items: Vec<usize>,
    local: Vec<Option<usize>>,
}

impl InteractionSchema {
    pub fn new(hin: &Hin, user_type: NodeType, item_type: NodeType) -> Result<Self> {
        if user_type == item_type {
            return Err(Error::Schema("user and item types must differ".into()));
        }
        let users: Vec<usize> = hin.nodes_of_type(user_type).collect();
        let items: Vec<usize> = hin.nodes_of_type(item_type).collect();
        let mut local = vec![None; hin.num_nodes()];
        for (i, &n) in users.iter().enumerate() {
            local[n] = Some(i);
        }
        for (i, &n) in items.iter().enumerate() {
            local[n] = Some(i);
        }
        Ok(InteractionSchema {
            user_type,
            item_type,
            users,
            items,
            local,
        })
    }

    pub fn by_names(hin: &Hin, user_type: &str, item_type: &str) -> Result<Self> {
        let find = |n: &str| {
            hin.node_type_by_name(n)
                .ok_or_else(|| Error::Schema(format!("unknown node type {n:?}")))
        };
        Self::new(hin, find(user_type)?, find(item_type)?)
    }

    /// Takes the user type from the source and the item type from the
    /// destination of the first private edge.
    pub fn infer(hin: &Hin) -> Result<Self> {
        let e = hin
            .edges()
            .iter()
            .find(|e| hin.is_private(e.ty))
            .ok_or_else(|| Error::Schema("no private edges to infer user/item roles from".into()))?;
        Self::new(hin, hin.node_type(e.src), hin.node_type(e.dst))
    }

    pub fn user_type(&self) -> NodeType {
        self.user_type
    }

    pub fn item_type(&self) -> NodeType {
        self.item_type
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_node(&self, user: usize) -> usize {
        self.users[user]
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.items[item]
    }

    /// Dense user or item index of a node, if the node plays either role.
    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.local[node]
    }
}

/// One user's raw interactions. Lives only on its client.
///
/// Every read of the raw bits or degree bumps an access counter, which the
/// federated runtime uses as a tripwire for server-side leaks.
#[derive(Debug)]
pub struct PrivateView {
    user: usize,
    bits: Vec<bool>,
    degree: usize,
    reads: AtomicUsize,
}

impl Clone for PrivateView {
    fn clone(&self) -> Self {
        PrivateView {
            user: self.user,
            bits: self.bits.clone(),
            degree: self.degree,
            reads: AtomicUsize::new(0),
        }
    }
}

impl PrivateView {
    pub fn new(user: usize, bits: Vec<bool>) -> Self {
        let degree = bits.iter().filter(|&&b| b).count();
        PrivateView {
            user,
            bits,
            degree,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn from_items(user: usize, num_items: usize, items: &[usize]) -> Self {
        let mut bits = vec![false; num_items];
        for &i in items {
            bits[i] = true;
        }
        Self::new(user, bits)
    }

    pub fn user(&self) -> usize {
        self.user
    }

    pub fn num_items(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.bits
    }

    pub fn degree(&self) -> usize {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.degree
    }

    pub fn items(&self) -> Vec<usize> {
        self.bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of this view with one interaction removed.
    pub fn without(&self, item: usize) -> PrivateView {
        let mut bits = self.bits().to_vec();
        bits[item] = false;
        PrivateView::new(self.user, bits)
    }

    /// Number of raw reads so far.
    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

/// Edges whose types are shared knowledge.
#[derive(Debug, Clone, Default)]
pub struct SharedSubgraph {
    pub edges: Vec<Edge>,
}

/// Splits the graph into one private view per user and the shared subgraph.
pub fn partition(hin: &Hin, schema: &InteractionSchema) -> Result<(Vec<PrivateView>, SharedSubgraph)> {
    let mut bits = vec![vec![false; schema.num_items()]; schema.num_users()];
    let mut shared = SharedSubgraph::default();
    for e in hin.edges() {
        if !hin.is_private(e.ty) {
            shared.edges.push(*e);
            continue;
        }
        if hin.node_type(e.src) != schema.user_type() {
            return Err(Error::Schema(format!(
                "private edge {} -> {} does not start at a user node",
                hin.node_name(e.src),
                hin.node_name(e.dst)
            )));
        }
        if hin.node_type(e.dst) != schema.item_type() {
            return Err(Error::Schema(format!(
                "private edge {} -> {} does not end at an item node",
                hin.node_name(e.src),
                hin.node_name(e.dst)
            )));
        }
        let u = schema.local_index(e.src).unwrap();
        let i = schema.local_index(e.dst).unwrap();
        bits[u][i] = true;
    }
    let views = bits
        .into_iter()
        .enumerate()
        .map(|(u, b)| PrivateView::new(u, b))
        .collect();
    Ok((views, shared))
}

/// Indicator over shared HINs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SharedHinList(pub Vec<bool>);

impl SharedHinList {
    pub fn zeros(m: usize) -> Self {
        SharedHinList(vec![false; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Indices of set bits, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }
}

/// Shared HINs that contain at least one of the user's items.
pub fn user_shared_hin_list(view: &PrivateView, partition: &SharedHinPartition) -> SharedHinList {
    let mut g = SharedHinList::zeros(partition.num_shared());
    for (item, &b) in view.bits().iter().enumerate() {
        if b {
            g.0[partition.shared_hin_of(item)] = true;
        }
    }
    g
}

/// The items of one selected shared HIN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemGroup {
    pub shared_hin: usize,
    pub items: Vec<usize>,
}

/// Items of all selected shared HINs, one group per set bit in ascending order.
pub fn semantic_guided_item_set(selected: &SharedHinList, partition: &SharedHinPartition) -> Vec<ItemGroup> {
    selected
        .selected()
        .into_iter()
        .map(|s| ItemGroup {
            shared_hin: s,
            items: partition.members(s).to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> String {
        x.to_string()
    }

    /// u1,u2 -> b1 ; u1 -> b2 ; b1,b2 -> c1.
    fn five_nodes() -> Hin {
        Hin::from_records(
            vec![
                (s("u1"), s("U")),
                (s("u2"), s("U")),
                (s("b1"), s("B")),
                (s("b2"), s("B")),
                (s("c1"), s("C")),
            ],
            vec![
                (s("u1"), s("b1"), s("U-B")),
                (s("u2"), s("b1"), s("U-B")),
                (s("u1"), s("b2"), s("U-B")),
                (s("b1"), s("c1"), s("B-C")),
                (s("b2"), s("c1"), s("B-C")),
            ],
            &["U-B"],
        )
        .unwrap()
    }

    #[test]
    fn views_and_shared_edges() {
        let hin = five_nodes();
        let schema = InteractionSchema::infer(&hin).unwrap();
        let (views, shared) = partition(&hin, &schema).unwrap();
        assert_eq!(views.len(), 2);
        assert_eq!(views[0].degree(), 2);
        assert_eq!(views[1].degree(), 1);
        // b1 is item 0, set for both users
        assert!(views[0].bits()[0] && views[1].bits()[0]);
        assert!(views[0].bits()[1] && !views[1].bits()[1]);
        assert_eq!(shared.edges.len(), 2);
        let private_total: usize = views.iter().map(|v| v.degree()).sum();
        assert_eq!(private_total, hin.count_edges(true));
    }

    #[test]
    fn zero_private_edges_gives_empty_views() {
        let hin = Hin::from_records(
            vec![(s("u1"), s("U")), (s("b1"), s("B")), (s("c1"), s("C"))],
            vec![(s("b1"), s("c1"), s("B-C"))],
            &["U-B"],
        )
        .unwrap();
        let schema = InteractionSchema::by_names(&hin, "U", "B").unwrap();
        let (views, _) = partition(&hin, &schema).unwrap();
        assert!(views.iter().all(|v| v.degree() == 0));
    }

    #[test]
    fn private_edge_from_non_user_is_schema_error() {
        let hin = Hin::from_records(
            vec![(s("u1"), s("U")), (s("b1"), s("B")), (s("c1"), s("C"))],
            vec![(s("u1"), s("b1"), s("U-B")), (s("c1"), s("b1"), s("U-B"))],
            &["U-B"],
        )
        .unwrap();
        let schema = InteractionSchema::by_names(&hin, "U", "B").unwrap();
        assert!(matches!(partition(&hin, &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn reads_are_counted() {
        let v = PrivateView::from_items(0, 4, &[1, 2]);
        assert_eq!(v.read_count(), 0);
        let _ = v.items();
        let _ = v.degree();
        assert_eq!(v.read_count(), 2);
        assert_eq!(v.clone().read_count(), 0);
    }

    #[test]
    fn shared_hin_lists() {
        // five clusters, items 0..10 assigned round-robin by item % 5
        let assignment: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let part = SharedHinPartition::from_assignment(5, assignment).unwrap();
        let empty = PrivateView::from_items(0, 10, &[]);
        assert_eq!(user_shared_hin_list(&empty, &part), SharedHinList::zeros(5));
        let v = PrivateView::from_items(0, 10, &[3, 8]);
        assert_eq!(
            user_shared_hin_list(&v, &part).0,
            vec![false, false, false, true, false]
        );
        let v = PrivateView::from_items(0, 10, &[1, 4, 9]);
        assert_eq!(user_shared_hin_list(&v, &part).selected(), vec![1, 4]);
    }

    #[test]
    fn guided_item_set_groups() {
        // cluster sizes (2,3,4)
        let assignment = vec![0, 0, 1, 1, 1, 2, 2, 2, 2];
        let part = SharedHinPartition::from_assignment(3, assignment).unwrap();
        let groups = semantic_guided_item_set(&SharedHinList(vec![true, false, true]), &part);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups.iter().map(|g| g.items.len()).sum::<usize>(), 6);
        assert_eq!(groups[1].items, vec![5, 6, 7, 8]);
        assert!(semantic_guided_item_set(&SharedHinList::zeros(3), &part).is_empty());
        let all = semantic_guided_item_set(&SharedHinList(vec![true; 3]), &part);
        assert_eq!(all.iter().map(|g| g.items.len()).sum::<usize>(), 9);
    }
}
