//! Exhaustive search for the reward-optimal answer inside a retrieved base
//! subgraph.
//!
//! Candidates are the connected, seed-containing node subsets of the base (up
//! to a node budget), each paired with its induced triple set and with the
//! lexicographically first spanning trees of that set. For a fixed node set the
//! entity term and the connectivity term are fixed, so the best triple subset
//! is always a spanning tree using the fewest and rarest relation types.

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::graph::{EntityId, TripleId};
use crate::scalar::Scalar;
use crate::subgraph::{Subgraph, UnionFind};
use crate::verifier::{score_subgraph, RewardBreakdown, RewardConfig, VerifierError};

/// Bases are encoded as `u64` bitmasks.
pub const MAX_BASE_NODES: usize = 64;
pub const DEFAULT_TREES_PER_NODE_SET: usize = 32;
const MAX_SEARCH_STATES: usize = 1 << 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("base subgraph does not connect all seeds")]
    Disconnected,
    #[error("base subgraph has {0} nodes; at most {MAX_BASE_NODES} are supported")]
    TooLarge(usize),
    #[error("empty candidate set")]
    Empty,
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationLimits {
    /// Maximum nodes per candidate.
    pub budget: usize,
    /// Maximum number of candidates.
    pub cap: usize,
    /// Spanning trees kept per node set.
    pub trees_per_node_set: usize,
}

impl EnumerationLimits {
    pub fn new(budget: usize, cap: usize) -> Self {
        Self {
            budget,
            cap,
            trees_per_node_set: DEFAULT_TREES_PER_NODE_SET,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CandidateSet<'g, T> {
    pub base: Subgraph<'g>,
    pub seeds: Vec<EntityId>,
    pub candidates: Vec<Subgraph<'g>>,
    pub rewards: Vec<RewardBreakdown<T>>,
    /// Set when enumeration stopped early; the optimum is then approximate.
    pub truncated: bool,
}

impl<'g, T: Scalar> CandidateSet<'g, T> {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn totals(&self) -> Vec<T> {
        self.rewards.iter().map(|r| r.total).collect()
    }
}

struct Base {
    nodes: Vec<EntityId>,
    adj: Vec<u64>,
    // (triple, local head, local tail)
    edges: Vec<(TripleId, usize, usize)>,
}

impl Base {
    fn new(base: &Subgraph<'_>) -> Result<Self, OracleError> {
        let nodes: Vec<EntityId> = base.nodes().iter().copied().collect();
        if nodes.len() > MAX_BASE_NODES {
            return Err(OracleError::TooLarge(nodes.len()));
        }
        let g = base.graph();
        let local = |e: EntityId| nodes.binary_search(&e).expect("endpoint in base");
        let mut adj = vec![0u64; nodes.len()];
        let mut edges = Vec::with_capacity(base.triple_count());
        for &id in base.triples() {
            let t = g.triple(id);
            let (h, tl) = (local(t.head), local(t.tail));
            if h != tl {
                adj[h] |= 1 << tl;
                adj[tl] |= 1 << h;
            }
            edges.push((id, h, tl));
        }
        Ok(Self { nodes, adj, edges })
    }

    fn neighbors(&self, mut set: u64) -> u64 {
        let mut out = 0;
        while set != 0 {
            let v = set.trailing_zeros() as usize;
            set &= set - 1;
            out |= self.adj[v];
        }
        out
    }
}

/// Node sets and triple sets of every candidate, without rewards.
pub fn enumerate_subgraphs<'g>(
    base: &Subgraph<'g>,
    seeds: &[EntityId],
    limits: EnumerationLimits,
) -> Result<(Vec<Subgraph<'g>>, bool), OracleError> {
    if !base.connects(seeds) {
        return Err(OracleError::Disconnected);
    }
    let b = Base::new(base)?;
    let g = base.graph();
    let seed_mask = seeds
        .iter()
        .map(|s| 1u64 << b.nodes.binary_search(s).expect("seed in base"))
        .fold(0, |a, m| a | m);
    let root = seed_mask.trailing_zeros() as usize;

    let mut search = SetSearch {
        base: &b,
        seeds: seed_mask,
        budget: limits.budget,
        states: 0,
        found: Vec::new(),
        truncated: false,
    };
    if limits.budget >= seeds.len() {
        search.run(1 << root, 0);
    }
    let mut truncated = search.truncated;
    let mut node_sets = search.found;
    node_sets.sort_unstable_by_key(|&s| (s.count_ones(), s.reverse_bits()));

    let mut out = Vec::new();
    let mut seen: HashSet<(u64, Vec<TripleId>)> = HashSet::new();
    'outer: for set in node_sets {
        let nodes: BTreeSet<EntityId> = (0..b.nodes.len())
            .filter(|&i| set >> i & 1 == 1)
            .map(|i| b.nodes[i])
            .collect();
        let induced: Vec<(TripleId, usize, usize)> = b
            .edges
            .iter()
            .copied()
            .filter(|&(_, h, t)| set >> h & 1 == 1 && set >> t & 1 == 1)
            .collect();
        let mut triple_sets = vec![induced.iter().map(|e| e.0).collect::<Vec<_>>()];
        triple_sets.extend(spanning_trees(set, &induced, limits.trees_per_node_set));
        for triples in triple_sets {
            if !seen.insert((set, triples.clone())) {
                continue;
            }
            if out.len() == limits.cap {
                truncated = true;
                break 'outer;
            }
            out.push(Subgraph::from_parts_unchecked(
                g,
                nodes.clone(),
                triples.into_iter().collect(),
            ));
        }
    }
    Ok((out, truncated))
}

struct SetSearch<'a> {
    base: &'a Base,
    seeds: u64,
    budget: usize,
    states: usize,
    found: Vec<u64>,
    truncated: bool,
}

impl SetSearch<'_> {
    /// Include/exclude branching over the frontier of the current connected
    /// set; every connected set containing the root is reached exactly once.
    fn run(&mut self, set: u64, excluded: u64) {
        self.states += 1;
        if self.states > MAX_SEARCH_STATES {
            self.truncated = true;
            return;
        }
        let size = set.count_ones() as usize;
        let frontier = self.base.neighbors(set) & !set & !excluded;
        if frontier == 0 || size == self.budget {
            if set & self.seeds == self.seeds {
                self.found.push(set);
            }
            return;
        }
        if !self.feasible(set, excluded) {
            return;
        }
        let v = 1u64 << frontier.trailing_zeros();
        self.run(set | v, excluded);
        self.run(set, excluded | v);
    }

    fn feasible(&self, set: u64, excluded: u64) -> bool {
        let missing = self.seeds & !set;
        if missing == 0 {
            return true;
        }
        let mut reach = set;
        let mut steps = 0;
        while missing & !reach != 0 {
            let next = self.base.neighbors(reach) & !excluded & !reach;
            if next == 0 {
                return false;
            }
            reach |= next;
            steps += 1;
        }
        let needed = steps.max(missing.count_ones() as usize);
        set.count_ones() as usize + needed <= self.budget
    }
}

/// Lexicographically first spanning trees (as sorted triple-id lists) of the
/// node set `set` using `edges`; at most `limit`.
fn spanning_trees(set: u64, edges: &[(TripleId, usize, usize)], limit: usize) -> Vec<Vec<TripleId>> {
    let members: Vec<usize> = (0..64).filter(|&i| set >> i & 1 == 1).collect();
    let n = members.len();
    let pos = |v: usize| members.binary_search(&v).unwrap();
    let edges: Vec<(TripleId, usize, usize)> = edges
        .iter()
        .filter(|e| e.1 != e.2)
        .map(|&(id, h, t)| (id, pos(h), pos(t)))
        .collect();
    let mut out = Vec::new();
    if limit == 0 || n < 2 {
        return out;
    }
    let mut chosen = Vec::with_capacity(n - 1);
    tree_search(&edges, 0, n, &mut chosen, &UnionFind::new(n), limit, &mut out);
    out
}

fn tree_search(
    edges: &[(TripleId, usize, usize)],
    i: usize,
    n: usize,
    chosen: &mut Vec<TripleId>,
    uf: &UnionFind,
    limit: usize,
    out: &mut Vec<Vec<TripleId>>,
) {
    if out.len() >= limit {
        return;
    }
    if chosen.len() == n - 1 {
        out.push(chosen.clone());
        return;
    }
    if edges.len() - i < n - 1 - chosen.len() {
        return;
    }
    let (id, h, t) = edges[i];
    let mut with = uf.clone();
    if with.union(h, t) {
        chosen.push(id);
        tree_search(edges, i + 1, n, chosen, &with, limit, out);
        chosen.pop();
    }
    // Skipping edge i is only useful if the rest can still span.
    let mut check = uf.clone();
    let mut comps = n - chosen.len();
    for &(_, a, b) in &edges[i + 1..] {
        if check.union(a, b) {
            comps -= 1;
        }
    }
    if comps == 1 {
        tree_search(edges, i + 1, n, chosen, uf, limit, out);
    }
}

/// Enumerates candidates and scores each with `cfg`.
pub fn enumerate_candidates<'g, T: Scalar>(
    base: &Subgraph<'g>,
    seeds: &[EntityId],
    limits: EnumerationLimits,
    cfg: &RewardConfig<T>,
) -> Result<CandidateSet<'g, T>, OracleError> {
    let (candidates, truncated) = enumerate_subgraphs(base, seeds, limits)?;
    let rewards = candidates
        .iter()
        .map(|c| score_subgraph(c, seeds, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CandidateSet {
        base: base.clone(),
        seeds: seeds.to_vec(),
        candidates,
        rewards,
        truncated,
    })
}

/// Index of the best candidate: highest total, then fewer triples, fewer
/// nodes, smaller node ids, smaller triple ids.
pub fn best_index<T: Scalar>(candidates: &[Subgraph<'_>], totals: &[T]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| {
        totals[b]
            .partial_cmp(&totals[a])
            .expect("rewards are finite")
            .then_with(|| candidates[a].triple_count().cmp(&candidates[b].triple_count()))
            .then_with(|| candidates[a].node_count().cmp(&candidates[b].node_count()))
            .then_with(|| candidates[a].nodes().cmp(candidates[b].nodes()))
            .then_with(|| candidates[a].triples().cmp(candidates[b].triples()))
    })
}

/// The reward-maximal candidate and its reward.
pub fn optimal_answer<'c, 'g, T: Scalar>(
    cs: &'c CandidateSet<'g, T>,
) -> Result<(&'c Subgraph<'g>, &'c RewardBreakdown<T>), OracleError> {
    let i = best_index(&cs.candidates, &cs.totals()).ok_or(OracleError::Empty)?;
    Ok((&cs.candidates[i], &cs.rewards[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::KnowledgeGraph;

    fn all<'g>(g: &'g KnowledgeGraph) -> Subgraph<'g> {
        Subgraph::from_triples(g, (0..g.triple_count()).map(TripleId::from_index)).unwrap()
    }

    #[test]
    fn single_edge_base_has_one_candidate() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "s2")]).unwrap();
        let seeds = g.resolve_entities(&["s1", "s2"]).unwrap();
        let (c, truncated) = enumerate_subgraphs(&all(&g), &seeds, EnumerationLimits::new(24, 1000)).unwrap();
        assert_eq!(c.len(), 1);
        assert!(!truncated);
    }

    #[test]
    fn triangle_candidates() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "s2"), ("s1", "r", "a"), ("a", "r", "s2")]).unwrap();
        let seeds = g.resolve_entities(&["s1", "s2"]).unwrap();
        let (c, _) = enumerate_subgraphs(&all(&g), &seeds, EnumerationLimits::new(24, 1000)).unwrap();
        let sets: BTreeSet<Vec<usize>> = c
            .iter()
            .map(|s| s.triples().iter().map(|t| t.index()).collect())
            .collect();
        let expected: BTreeSet<Vec<usize>> = [vec![0], vec![1, 2], vec![0, 1, 2], vec![0, 1], vec![0, 2]].into();
        assert_eq!(sets, expected);
    }

    #[test]
    fn disconnected_base_is_rejected() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "a"), ("s2", "r", "b")]).unwrap();
        let seeds = g.resolve_entities(&["s1", "s2"]).unwrap();
        let err = enumerate_subgraphs(&all(&g), &seeds, EnumerationLimits::new(24, 10)).unwrap_err();
        assert_eq!(err, OracleError::Disconnected);
    }

    #[test]
    fn cap_truncates() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "s2"), ("s1", "r", "a"), ("a", "r", "s2")]).unwrap();
        let seeds = g.resolve_entities(&["s1", "s2"]).unwrap();
        let (c, truncated) = enumerate_subgraphs(&all(&g), &seeds, EnumerationLimits::new(24, 2)).unwrap();
        assert_eq!(c.len(), 2);
        assert!(truncated);
    }

    #[test]
    fn fewer_entities_win_when_relations_agree() {
        let g = KnowledgeGraph::from_triples([("s1", "r", "s2"), ("s1", "r", "a"), ("a", "r", "s2")]).unwrap();
        let seeds = g.resolve_entities(&["s1", "s2"]).unwrap();
        let cfg = RewardConfig::<f64>::for_graph(&g);
        let cs = enumerate_candidates(&all(&g), &seeds, EnumerationLimits::new(24, 1000), &cfg).unwrap();
        let (best, _) = optimal_answer(&cs).unwrap();
        assert_eq!(best.node_count(), 2);
    }

    #[test]
    fn ties_prefer_fewer_triples() {
        let g = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "a")]).unwrap();
        let one = Subgraph::from_triples(&g, [TripleId::from_index(0)]).unwrap();
        let two = all(&g);
        assert_eq!(best_index(&[two.clone(), one.clone()], &[0.5f64, 0.5]), Some(1));
        assert_eq!(best_index(&[two, one], &[0.6f64, 0.5]), Some(0));
        assert_eq!(best_index::<f64>(&[], &[]), None);
    }

    #[test]
    fn empty_set_has_no_optimum() {
        let g = KnowledgeGraph::from_triples([("a", "r", "b")]).unwrap();
        let cs: CandidateSet<'_, f64> = CandidateSet {
            base: all(&g),
            seeds: vec![],
            candidates: vec![],
            rewards: vec![],
            truncated: false,
        };
        assert_eq!(optimal_answer(&cs).unwrap_err(), OracleError::Empty);
    }
}
