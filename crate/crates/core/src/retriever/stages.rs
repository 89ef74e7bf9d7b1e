//! The individual retrieval stages. Each stage is a pure function over a
//! shared read-only graph so they can be tested and timed in isolation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use crate::graph::{hub_penalty_for_degree, Direction, EntityId, KnowledgeGraph, TripleId};
use crate::scalar::Scalar;
use crate::subgraph::Subgraph;

use super::{PruneConfig, RetrieveError};

/// Node set of one seed's (possibly pruned) k-hop neighbourhood.
///
/// The triple set is always the subgraph induced on the nodes, so it is
/// derived rather than stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    pub seed: EntityId,
    nodes: HashSet<EntityId>,
}

impl Neighborhood {
    pub fn new(seed: EntityId, nodes: HashSet<EntityId>) -> Self {
        Self { seed, nodes }
    }

    pub fn nodes(&self) -> &HashSet<EntityId> {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.nodes.contains(&e)
    }

    pub fn sorted_nodes(&self) -> Vec<EntityId> {
        let mut v: Vec<_> = self.nodes.iter().copied().collect();
        v.sort_unstable();
        v
    }

    /// Triples with both endpoints inside the neighbourhood.
    pub fn induced_triples(&self, g: &KnowledgeGraph) -> Vec<TripleId> {
        let mut out = Vec::new();
        for &u in &self.nodes {
            for adj in g.neighbors(u) {
                if adj.direction == Direction::Outgoing && self.nodes.contains(&adj.neighbor) {
                    out.push(adj.triple);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn induced_triple_count(&self, g: &KnowledgeGraph) -> usize {
        self.nodes
            .iter()
            .map(|&u| {
                g.neighbors(u)
                    .iter()
                    .filter(|a| a.direction == Direction::Outgoing && self.nodes.contains(&a.neighbor))
                    .count()
            })
            .sum()
    }
}

/// `V^k(e_i)` for every seed.
pub fn expand_neighborhoods(
    g: &KnowledgeGraph,
    seeds: &[EntityId],
    k: usize,
) -> Result<Vec<Neighborhood>, RetrieveError> {
    seeds
        .iter()
        .map(|&s| {
            g.check_entity(s)?;
            Ok(Neighborhood::new(s, g.ball(s, k).into_iter().map(|(e, _)| e).collect()))
        })
        .collect()
}

/// Union of the neighbourhoods: nodes are the union of node sets, triples the
/// union of each neighbourhood's induced triples.
pub fn union_subgraph<'g>(g: &'g KnowledgeGraph, hoods: &[Neighborhood]) -> Subgraph<'g> {
    let mut nodes = BTreeSet::new();
    let mut triples = BTreeSet::new();
    for h in hoods {
        nodes.extend(h.nodes.iter().copied());
        triples.extend(h.induced_triples(g));
    }
    Subgraph::from_parts_unchecked(g, nodes, triples)
}

/// Candidate subgraph `G'`: union of the seeds' k-hop neighbourhoods.
pub fn select_candidate<'g>(
    g: &'g KnowledgeGraph,
    seeds: &[EntityId],
    k: usize,
) -> Result<Subgraph<'g>, RetrieveError> {
    let hoods = expand_neighborhoods(g, seeds, k)?;
    Ok(union_subgraph(g, &hoods))
}

/// Stage 1. Drops every non-seed node whose hub penalty reaches `rho`, then
/// keeps only the component of each neighbourhood that contains its seed
/// (which also discards nodes left isolated).
pub fn local_prune<T: Scalar>(
    g: &KnowledgeGraph,
    hoods: &[Neighborhood],
    seeds: &[EntityId],
    rho: T,
) -> Vec<Neighborhood> {
    let seed_set: HashSet<EntityId> = seeds.iter().copied().collect();
    let survives = |v: EntityId| seed_set.contains(&v) || hub_penalty_for_degree::<T>(g.degree(v)) < rho;
    hoods
        .iter()
        .map(|h| {
            let mut kept = HashSet::with_capacity(h.nodes.len());
            if h.nodes.contains(&h.seed) {
                kept.insert(h.seed);
                let mut queue = VecDeque::from([h.seed]);
                while let Some(u) = queue.pop_front() {
                    for adj in g.neighbors(u) {
                        let v = adj.neighbor;
                        if !kept.contains(&v) && h.nodes.contains(&v) && survives(v) {
                            kept.insert(v);
                            queue.push_back(v);
                        }
                    }
                }
            }
            Neighborhood::new(h.seed, kept)
        })
        .collect()
}

/// Result of the Stage 2 intersection audit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectivityAudit {
    /// `I_ij` for every pair `i < j`, sorted by entity id.
    pub intersections: BTreeMap<(usize, usize), Vec<EntityId>>,
    /// Edges of the auxiliary graph `H_rho`.
    pub aux_edges: Vec<(usize, usize)>,
    pub connected: bool,
}

impl ConnectivityAudit {
    pub fn nonempty(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<EntityId>)> {
        self.intersections.iter().filter(|(_, v)| !v.is_empty())
    }
}

/// Stage 2. Pairwise intersections and connectivity of the auxiliary graph.
pub fn connectivity_audit(hoods: &[Neighborhood]) -> ConnectivityAudit {
    let m = hoods.len();
    let mut intersections = BTreeMap::new();
    let mut aux_edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let (small, large) = if hoods[i].len() <= hoods[j].len() {
                (&hoods[i].nodes, &hoods[j].nodes)
            } else {
                (&hoods[j].nodes, &hoods[i].nodes)
            };
            let mut common: Vec<EntityId> = small.iter().copied().filter(|e| large.contains(e)).collect();
            common.sort_unstable();
            if !common.is_empty() {
                aux_edges.push((i, j));
            }
            intersections.insert((i, j), common);
        }
    }
    let connected = if m == 0 {
        false
    } else {
        let mut seen = vec![false; m];
        seen[0] = true;
        let mut stack = vec![0];
        while let Some(u) = stack.pop() {
            for &(a, b) in &aux_edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    ConnectivityAudit {
        intersections,
        aux_edges,
        connected,
    }
}

/// Stage 3. Queue-based peel of non-seed nodes with at most one distinct
/// neighbour (self-loops ignored) until a fixpoint is reached.
pub fn leaf_prune<'g>(sub: &Subgraph<'g>, seeds: &[EntityId]) -> Subgraph<'g> {
    let g = sub.graph();
    let seed_set: HashSet<EntityId> = seeds.iter().copied().collect();
    let mut nbrs: HashMap<EntityId, HashSet<EntityId>> = sub.nodes().iter().map(|&e| (e, HashSet::new())).collect();
    for &id in sub.triples() {
        let t = g.triple(id);
        if t.head != t.tail {
            nbrs.get_mut(&t.head).unwrap().insert(t.tail);
            nbrs.get_mut(&t.tail).unwrap().insert(t.head);
        }
    }
    let mut queue: VecDeque<EntityId> = sub
        .nodes()
        .iter()
        .copied()
        .filter(|e| !seed_set.contains(e) && nbrs[e].len() <= 1)
        .collect();
    let mut removed = HashSet::new();
    while let Some(v) = queue.pop_front() {
        if removed.contains(&v) {
            continue;
        }
        removed.insert(v);
        let gone = std::mem::take(nbrs.get_mut(&v).unwrap());
        for u in gone {
            let set = nbrs.get_mut(&u).unwrap();
            set.remove(&v);
            if set.len() <= 1 && !seed_set.contains(&u) && !removed.contains(&u) {
                queue.push_back(u);
            }
        }
    }
    let keep: BTreeSet<EntityId> = sub.nodes().iter().copied().filter(|e| !removed.contains(e)).collect();
    sub.restrict(&keep)
}

/// Minimal subsets of `pairs` whose endpoints cover `0..m`, ordered by size
/// and then lexicographically by pair index, at most `limit` of them.
pub fn minimal_covers(pairs: &[(usize, usize)], m: usize, limit: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let p = pairs.len();
    if m == 0 || limit == 0 {
        return out;
    }
    let covers = |combo: &[usize]| {
        let mut hit = vec![false; m];
        for &c in combo {
            hit[pairs[c].0] = true;
            hit[pairs[c].1] = true;
        }
        hit.iter().all(|&h| h)
    };
    let min_size = m.div_ceil(2);
    for size in min_size..=p.min(m.saturating_sub(1)).max(min_size) {
        if size > p {
            break;
        }
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            if covers(&combo) {
                let minimal = (0..size).all(|skip| {
                    let rest: Vec<usize> = combo
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != skip)
                        .map(|(_, &c)| c)
                        .collect();
                    !covers(&rest)
                });
                if minimal {
                    out.push(combo.clone());
                    if out.len() == limit {
                        return out;
                    }
                }
            }
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && combo[i - 1] == p - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..size {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    out
}

/// Best candidate produced by one Stage 4 pass.
#[derive(Clone, Debug)]
pub struct CompactCandidate<'g> {
    pub subgraph: Subgraph<'g>,
    /// Number of intersections in the chosen cover.
    pub lambda: usize,
    pub covers_examined: usize,
}

/// Stage 4. For every enumerated cover, keeps the `s` lowest-penalty members
/// of each intersection, expands them `k` hops inside the two owning
/// neighbourhoods, restricts `refined` to the union and peels leaves. Returns
/// the smallest candidate that still connects all seeds, or `None` when no
/// cover yields one.
pub fn compactness_control<'g, T: Scalar>(
    refined: &Subgraph<'g>,
    hoods: &[Neighborhood],
    audit: &ConnectivityAudit,
    seeds: &[EntityId],
    cfg: &PruneConfig<T>,
    s: usize,
) -> Result<Option<CompactCandidate<'g>>, RetrieveError> {
    let g = refined.graph();
    let nonempty: Vec<((usize, usize), &Vec<EntityId>)> = audit.nonempty().map(|(&k, v)| (k, v)).collect();
    let pairs: Vec<(usize, usize)> = nonempty.iter().map(|(k, _)| *k).collect();
    let covers = minimal_covers(&pairs, hoods.len(), cfg.cover_enum_limit);
    if covers.is_empty() {
        return Err(RetrieveError::NoCover);
    }

    let mut expansion_cache: HashMap<usize, BTreeSet<EntityId>> = HashMap::new();
    let mut best: Option<CompactCandidate<'g>> = None;
    for cover in &covers {
        let mut nodes = BTreeSet::new();
        for &c in cover {
            let ball = expansion_cache.entry(c).or_insert_with(|| {
                let ((i, j), members) = nonempty[c];
                let mut ranked = members.clone();
                ranked.sort_by_key(|&e| (g.degree(e), e));
                ranked.truncate(s);
                restricted_expansion(g, &ranked, &hoods[i], &hoods[j], cfg.k)
            });
            nodes.extend(ball.iter().copied());
        }
        let candidate = leaf_prune(&refined.restrict(&nodes), seeds);
        if !candidate.connects(seeds) {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => (candidate.node_count(), candidate.nodes()) < (b.subgraph.node_count(), b.subgraph.nodes()),
        };
        if better {
            best = Some(CompactCandidate {
                subgraph: candidate,
                lambda: cover.len(),
                covers_examined: covers.len(),
            });
        }
    }
    Ok(best)
}

/// Multi-source BFS of depth `k` from `sources`, moving only along triples
/// that lie inside one of the two neighbourhoods.
fn restricted_expansion(
    g: &KnowledgeGraph,
    sources: &[EntityId],
    a: &Neighborhood,
    b: &Neighborhood,
    k: usize,
) -> BTreeSet<EntityId> {
    let mut dist: HashMap<EntityId, usize> = sources.iter().map(|&e| (e, 0)).collect();
    let mut queue: VecDeque<EntityId> = sources.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du == k {
            continue;
        }
        for adj in g.neighbors(u) {
            let v = adj.neighbor;
            let inside = (a.contains(u) && a.contains(v)) || (b.contains(u) && b.contains(v));
            if inside && !dist.contains_key(&v) {
                dist.insert(v, du + 1);
                queue.push_back(v);
            }
        }
    }
    dist.into_keys().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(g: &KnowledgeGraph, names: &[&str]) -> Vec<EntityId> {
        g.resolve_entities(names).unwrap()
    }

    fn names(g: &KnowledgeGraph, nodes: &BTreeSet<EntityId>) -> Vec<String> {
        let mut v: Vec<String> = nodes.iter().map(|&e| g.entity_name(e).to_owned()).collect();
        v.sort();
        v
    }

    #[test]
    fn select_with_zero_hops_is_just_the_seeds() {
        let g = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c")]).unwrap();
        let seeds = ids(&g, &["a", "c"]);
        let sub = select_candidate(&g, &seeds, 0).unwrap();
        assert_eq!(sub.nodes().iter().copied().collect::<Vec<_>>(), {
            let mut s = seeds.clone();
            s.sort();
            s
        });
        assert_eq!(sub.triple_count(), 0);
    }

    #[test]
    fn select_on_star_graph() {
        let g = KnowledgeGraph::from_triples([("c", "r", "l1"), ("c", "r", "l2"), ("c", "r", "l3"), ("c", "r", "l4")])
            .unwrap();
        let sub = select_candidate(&g, &ids(&g, &["l1", "l2"]), 1).unwrap();
        assert_eq!(names(&g, sub.nodes()), ["c", "l1", "l2"]);
        assert_eq!(sub.triple_count(), 2);
    }

    #[test]
    fn local_prune_removes_hub_and_its_dependents() {
        // "Female" is the hub; x and y hang off it only.
        let g = KnowledgeGraph::from_triples([
            ("s1", "gender", "Female"),
            ("s2", "gender", "Female"),
            ("x", "gender", "Female"),
            ("y", "gender", "Female"),
            ("z", "gender", "Female"),
            ("s1", "spouse", "s2"),
            ("x", "knows", "y"),
        ])
        .unwrap();
        let seeds = ids(&g, &["s1", "s2"]);
        let hoods = expand_neighborhoods(&g, &seeds, 2).unwrap();
        let female = g.entity_id("Female").unwrap();
        let rho = g.hub_penalty::<f64>(female).unwrap() - 1e-9;
        let pruned = local_prune(&g, &hoods, &seeds, rho);
        for h in &pruned {
            assert!(!h.contains(female));
            assert!(!h.contains(g.entity_id("x").unwrap()));
            assert!(!h.contains(g.entity_id("z").unwrap()));
            assert!(h.contains(g.entity_id("s1").unwrap()) && h.contains(g.entity_id("s2").unwrap()));
        }
    }

    #[test]
    fn local_prune_is_a_noop_above_the_max_penalty() {
        let g = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]).unwrap();
        let seeds = ids(&g, &["a", "d"]);
        let hoods = expand_neighborhoods(&g, &seeds, 2).unwrap();
        let pruned = local_prune(&g, &hoods, &seeds, g.hub_penalty_max::<f64>() + 0.1);
        assert_eq!(pruned, hoods);
    }

    #[test]
    fn local_prune_exempts_seeds() {
        let mut triples = vec![("s1".to_owned(), "r".to_owned(), "s2".to_owned())];
        for i in 0..500 {
            triples.push(("s1".into(), "r".into(), format!("n{i}")));
        }
        let g =
            KnowledgeGraph::from_triples(triples.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))).unwrap();
        let seeds = ids(&g, &["s1", "s2"]);
        let hoods = expand_neighborhoods(&g, &seeds, 1).unwrap();
        let pruned = local_prune(&g, &hoods, &seeds, 0.5f64);
        assert!(pruned[0].contains(seeds[0]));
        assert!(pruned[0].contains(seeds[1]));
        assert_eq!(pruned[0].len(), 2);
    }

    #[test]
    fn audit_disjoint_and_shared() {
        let e = EntityId::from_index;
        let a = Neighborhood::new(e(0), [e(0), e(1)].into());
        let b = Neighborhood::new(e(2), [e(2), e(3)].into());
        let audit = connectivity_audit(&[a.clone(), b]);
        assert!(!audit.connected);
        assert!(audit.aux_edges.is_empty());
        let c = Neighborhood::new(e(2), [e(2), e(1)].into());
        let audit = connectivity_audit(&[a, c]);
        assert!(audit.connected);
        assert_eq!(audit.aux_edges, [(0, 1)]);
        assert_eq!(audit.intersections[&(0, 1)], [e(1)]);
    }

    #[test]
    fn audit_path_shaped_aux_graph() {
        let e = EntityId::from_index;
        let hoods = [
            Neighborhood::new(e(0), [e(0), e(10)].into()),
            Neighborhood::new(e(1), [e(1), e(10), e(11)].into()),
            Neighborhood::new(e(2), [e(2), e(11), e(12)].into()),
            Neighborhood::new(e(3), [e(3), e(12)].into()),
        ];
        let audit = connectivity_audit(&hoods);
        assert_eq!(audit.aux_edges, [(0, 1), (1, 2), (2, 3)]);
        assert!(audit.connected);
    }

    #[test]
    fn leaf_prune_drops_pendant() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "a"), ("a", "r", "s2"), ("a", "r", "c")]).unwrap();
        let all = Subgraph::from_triples(&g, (0..3).map(TripleId::from_index)).unwrap();
        let out = leaf_prune(&all, &ids(&g, &["s1", "s2"]));
        assert_eq!(names(&g, out.nodes()), ["a", "s1", "s2"]);
        assert_eq!(out.triple_count(), 2);
    }

    #[test]
    fn leaf_prune_keeps_cycles() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "a"), ("a", "r", "s2"), ("s2", "r", "b"), ("b", "r", "s1")])
            .unwrap();
        let all = Subgraph::from_triples(&g, (0..4).map(TripleId::from_index)).unwrap();
        let out = leaf_prune(&all, &ids(&g, &["s1", "s2"]));
        assert_eq!(out, all);
    }

    #[test]
    fn covers_are_minimal_and_ordered() {
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let covers = minimal_covers(&pairs, 3, 64);
        assert_eq!(covers, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        let pairs = [(0, 1), (1, 2), (2, 3)];
        assert_eq!(minimal_covers(&pairs, 4, 64), vec![vec![0, 2]]);
        assert_eq!(minimal_covers(&pairs, 4, 0), Vec::<Vec<usize>>::new());
    }

    #[test]
    fn compactness_keeps_lowest_penalty_intersection_member() {
        // s1 and s2 meet through x (degree 2) and y (degree 4).
        let g = KnowledgeGraph::from_triples([
            ("s1", "r", "x"),
            ("x", "r", "s2"),
            ("s1", "r", "y"),
            ("y", "r", "s2"),
            ("y", "r", "p"),
            ("y", "r", "q"),
        ])
        .unwrap();
        let seeds = ids(&g, &["s1", "s2"]);
        let hoods = expand_neighborhoods(&g, &seeds, 1).unwrap();
        let audit = connectivity_audit(&hoods);
        assert_eq!(audit.intersections[&(0, 1)], ids(&g, &["x", "y"]));
        let refined = leaf_prune(&union_subgraph(&g, &hoods), &seeds);
        let cfg = PruneConfig::<f64>::default().with_k(1);
        let best = compactness_control(&refined, &hoods, &audit, &seeds, &cfg, 1)
            .unwrap()
            .unwrap();
        assert_eq!(names(&g, best.subgraph.nodes()), ["s1", "s2", "x"]);
        assert_eq!(best.lambda, 1);
    }
}
