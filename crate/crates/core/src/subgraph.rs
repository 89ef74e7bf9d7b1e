use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::graph::{EntityId, KnowledgeGraph, RelationId, TripleId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubgraphError {
    #[error("triple {0} is not stored in the parent graph")]
    UnknownTriple(TripleId),
    #[error("entity {0} is not in the parent graph")]
    UnknownEntity(EntityId),
    #[error("triple {triple} has endpoint {entity} outside the node set")]
    DanglingTriple { triple: TripleId, entity: EntityId },
}

/// A grounded subgraph `(E*, T*)` of a parent [`KnowledgeGraph`].
///
/// Every triple is a stored triple of the parent and both of its endpoints are
/// members of the node set. Node and triple sets are kept sorted.
#[derive(Clone)]
pub struct Subgraph<'g> {
    graph: &'g KnowledgeGraph,
    nodes: BTreeSet<EntityId>,
    triples: BTreeSet<TripleId>,
}

impl std::fmt::Debug for Subgraph<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subgraph")
            .field("nodes", &self.nodes)
            .field("triples", &self.triples)
            .finish()
    }
}

impl PartialEq for Subgraph<'_> {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.graph, other.graph) && self.nodes == other.nodes && self.triples == other.triples
    }
}

impl Eq for Subgraph<'_> {}

impl<'g> Subgraph<'g> {
    pub fn empty(graph: &'g KnowledgeGraph) -> Self {
        Self {
            graph,
            nodes: BTreeSet::new(),
            triples: BTreeSet::new(),
        }
    }

    /// Validating constructor.
    pub fn new(
        graph: &'g KnowledgeGraph,
        nodes: impl IntoIterator<Item = EntityId>,
        triples: impl IntoIterator<Item = TripleId>,
    ) -> Result<Self, SubgraphError> {
        let nodes: BTreeSet<EntityId> = nodes.into_iter().collect();
        if let Some(&e) = nodes.iter().find(|e| !graph.contains_entity(**e)) {
            return Err(SubgraphError::UnknownEntity(e));
        }
        let triples: BTreeSet<TripleId> = triples.into_iter().collect();
        for &id in &triples {
            if id.index() >= graph.triple_count() {
                return Err(SubgraphError::UnknownTriple(id));
            }
            let t = graph.triple(id);
            for e in [t.head, t.tail] {
                if !nodes.contains(&e) {
                    return Err(SubgraphError::DanglingTriple { triple: id, entity: e });
                }
            }
        }
        Ok(Self { graph, nodes, triples })
    }

    /// Subgraph spanned by the given triples; nodes are their endpoints.
    pub fn from_triples(
        graph: &'g KnowledgeGraph,
        triples: impl IntoIterator<Item = TripleId>,
    ) -> Result<Self, SubgraphError> {
        let triples: BTreeSet<TripleId> = triples.into_iter().collect();
        let mut nodes = BTreeSet::new();
        for &id in &triples {
            if id.index() >= graph.triple_count() {
                return Err(SubgraphError::UnknownTriple(id));
            }
            let t = graph.triple(id);
            nodes.insert(t.head);
            nodes.insert(t.tail);
        }
        Ok(Self { graph, nodes, triples })
    }

    /// Node-induced subgraph of the parent graph.
    pub fn induced(
        graph: &'g KnowledgeGraph,
        nodes: impl IntoIterator<Item = EntityId>,
    ) -> Result<Self, SubgraphError> {
        let nodes: BTreeSet<EntityId> = nodes.into_iter().collect();
        let mut triples = BTreeSet::new();
        for &u in &nodes {
            if !graph.contains_entity(u) {
                return Err(SubgraphError::UnknownEntity(u));
            }
            for adj in graph.neighbors(u) {
                if nodes.contains(&adj.neighbor) {
                    triples.insert(adj.triple);
                }
            }
        }
        Ok(Self { graph, nodes, triples })
    }

    pub(crate) fn from_parts_unchecked(
        graph: &'g KnowledgeGraph,
        nodes: BTreeSet<EntityId>,
        triples: BTreeSet<TripleId>,
    ) -> Self {
        debug_assert!(triples.iter().all(|&id| {
            let t = graph.triple(id);
            nodes.contains(&t.head) && nodes.contains(&t.tail)
        }));
        Self { graph, nodes, triples }
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.graph
    }

    pub fn nodes(&self) -> &BTreeSet<EntityId> {
        &self.nodes
    }

    pub fn triples(&self) -> &BTreeSet<TripleId> {
        &self.triples
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains_node(&self, e: EntityId) -> bool {
        self.nodes.contains(&e)
    }

    /// Distinct relation types used by the triples.
    pub fn relations(&self) -> BTreeSet<RelationId> {
        self.triples.iter().map(|&id| self.graph.triple(id).relation).collect()
    }

    /// Restriction to `keep`, dropping triples that lose an endpoint.
    pub fn restrict(&self, keep: &BTreeSet<EntityId>) -> Self {
        let nodes: BTreeSet<EntityId> = self.nodes.intersection(keep).copied().collect();
        let triples = self
            .triples
            .iter()
            .copied()
            .filter(|&id| {
                let t = self.graph.triple(id);
                nodes.contains(&t.head) && nodes.contains(&t.tail)
            })
            .collect();
        Self {
            graph: self.graph,
            nodes,
            triples,
        }
    }

    /// Connected components of the undirected projection, each sorted,
    /// ordered by their smallest member.
    pub fn components(&self) -> Vec<Vec<EntityId>> {
        let index: HashMap<EntityId, usize> = self.nodes.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let nodes: Vec<EntityId> = self.nodes.iter().copied().collect();
        let mut uf = UnionFind::new(nodes.len());
        for &id in &self.triples {
            let t = self.graph.triple(id);
            uf.union(index[&t.head], index[&t.tail]);
        }
        let mut groups: Vec<Vec<EntityId>> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for (i, &e) in nodes.iter().enumerate() {
            let root = uf.find(i);
            let g = *slot.entry(root).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(e);
        }
        groups
    }

    /// Largest number of `seeds` sharing one component; absent seeds count as
    /// singletons. Zero when `seeds` is empty.
    pub fn max_seed_group(&self, seeds: &[EntityId]) -> usize {
        if seeds.is_empty() {
            return 0;
        }
        let index: HashMap<EntityId, usize> = self.nodes.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut uf = UnionFind::new(self.nodes.len());
        for &id in &self.triples {
            let t = self.graph.triple(id);
            uf.union(index[&t.head], index[&t.tail]);
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let mut best = 1;
        let mut seen = BTreeSet::new();
        for &s in seeds {
            if !seen.insert(s) {
                continue;
            }
            if let Some(&i) = index.get(&s) {
                let c = counts.entry(uf.find(i)).or_insert(0);
                *c += 1;
                best = best.max(*c);
            }
        }
        best
    }

    /// True when every seed is present and all lie in one component.
    pub fn connects(&self, seeds: &[EntityId]) -> bool {
        let distinct: BTreeSet<_> = seeds.iter().collect();
        seeds.iter().all(|s| self.nodes.contains(s)) && self.max_seed_group(seeds) == distinct.len()
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c"), ("d", "s", "e"), ("e", "s", "f")]).unwrap()
    }

    #[test]
    fn validating_constructor_rejects_dangling_triples() {
        let g = graph();
        let t = g
            .find_triple(
                g.entity_id("a").unwrap(),
                g.relation_id("r").unwrap(),
                g.entity_id("b").unwrap(),
            )
            .unwrap();
        let err = Subgraph::new(&g, [g.entity_id("a").unwrap()], [t]).unwrap_err();
        assert!(matches!(err, SubgraphError::DanglingTriple { .. }));
        assert!(Subgraph::from_triples(&g, [TripleId::from_index(17)]).is_err());
    }

    #[test]
    fn induced_picks_up_all_internal_triples() {
        let g = graph();
        let ids = g.resolve_entities(&["a", "b", "c"]).unwrap();
        let s = Subgraph::induced(&g, ids).unwrap();
        assert_eq!(s.triple_count(), 2);
    }

    #[test]
    fn seed_groups() {
        let g = graph();
        let all = Subgraph::from_triples(&g, (0..4).map(TripleId::from_index)).unwrap();
        let seeds = g.resolve_entities(&["a", "c", "d", "f"]).unwrap();
        assert_eq!(all.max_seed_group(&seeds), 2);
        assert!(!all.connects(&seeds));
        assert!(all.connects(&seeds[..2]));
        assert_eq!(all.components().len(), 2);
        let empty = Subgraph::empty(&g);
        assert_eq!(empty.max_seed_group(&seeds), 1);
    }
}
