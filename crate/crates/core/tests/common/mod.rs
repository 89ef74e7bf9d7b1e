//! Generators and brute-force reference implementations shared by the
//! integration tests. Nothing here calls the code under test except to build
//! graphs and subgraphs.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use kgrel::graph::{EntityId, KnowledgeGraph, TripleId};
use kgrel::subgraph::Subgraph;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random multigraph on `n` entities `e0..` with `edges` triples over
/// `relations` relation names `r0..`. A random spanning path-forest keeps
/// most of it connected.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, edges: usize, relations: usize) -> KnowledgeGraph {
    let mut triples: Vec<(String, String, String)> = Vec::with_capacity(edges + n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for w in order.windows(2) {
        if rng.gen_bool(0.85) {
            triples.push(name_triple(w[0], rng.gen_range(0..relations), w[1]));
        }
    }
    while triples.len() < edges.max(1) {
        let h = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        triples.push(name_triple(h, rng.gen_range(0..relations), t));
    }
    KnowledgeGraph::from_triples(triples.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())))
        .expect("non-empty triple list")
}

fn name_triple(h: usize, r: usize, t: usize) -> (String, String, String) {
    (format!("e{h}"), format!("r{r}"), format!("e{t}"))
}

/// Undirected adjacency lists from the raw triple list.
pub fn adjacency(g: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.entity_count()];
    for t in g.triples() {
        let (h, tl) = (t.head.index(), t.tail.index());
        adj[h].push(tl);
        if h != tl {
            adj[tl].push(h);
        }
    }
    adj
}

/// Plain queue BFS distances from `src` (usize::MAX when unreachable).
pub fn bfs_distances(adj: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// All-pairs distances by Floyd-Warshall.
pub fn floyd_warshall(g: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let n = g.entity_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for t in g.triples() {
        let (h, tl) = (t.head.index(), t.tail.index());
        if h != tl {
            d[h][tl] = 1;
            d[tl][h] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Seeds in one component, pairwise within `max_dist` of the first seed's
/// chain: each new seed is within `max_dist` of some earlier seed.
pub fn connected_seeds<R: Rng>(rng: &mut R, g: &KnowledgeGraph, m: usize, max_dist: usize) -> Option<Vec<EntityId>> {
    let adj = adjacency(g);
    for _ in 0..200 {
        let first = rng.gen_range(0..g.entity_count());
        let mut seeds = vec![first];
        while seeds.len() < m {
            let anchor = seeds[rng.gen_range(0..seeds.len())];
            let dist = bfs_distances(&adj, anchor);
            let options: Vec<usize> = (0..adj.len())
                .filter(|&v| dist[v] >= 1 && dist[v] <= max_dist && !seeds.contains(&v))
                .collect();
            let Some(&next) = options.choose(rng) else { break };
            seeds.push(next);
        }
        if seeds.len() == m {
            return Some(seeds.into_iter().map(EntityId::from_index).collect());
        }
    }
    None
}

/// Reward computed from first principles on the raw triple list.
pub struct RewardOracle {
    degree: Vec<usize>,
    rel_freq: Vec<usize>,
    triples: usize,
    hub_max: f64,
    idf_max: f64,
}

impl RewardOracle {
    pub fn new(g: &KnowledgeGraph) -> Self {
        let mut degree = vec![0usize; g.entity_count()];
        let mut rel_freq = vec![0usize; g.relation_count()];
        for t in g.triples() {
            degree[t.head.index()] += 1;
            if t.tail != t.head {
                degree[t.tail.index()] += 1;
            }
            rel_freq[t.relation.index()] += 1;
        }
        let n = g.triple_count();
        let hub_max = degree.iter().map(|&d| (1.0 + d as f64).ln()).fold(0.0, f64::max);
        let idf_max = rel_freq.iter().map(|&f| (n as f64 / f as f64).ln()).fold(0.0, f64::max);
        Self {
            degree,
            rel_freq,
            triples: n,
            hub_max,
            idf_max,
        }
    }

    /// Largest number of seeds in one component of the answer's triples.
    pub fn seed_group(&self, triples: &[(usize, usize)], seeds: &[usize]) -> usize {
        let mut label: HashMap<usize, usize> = HashMap::new();
        for &s in seeds {
            label.insert(s, s);
        }
        for &(h, t) in triples {
            label.entry(h).or_insert(h);
            label.entry(t).or_insert(t);
        }
        // Relabel to a fixed point.
        let mut changed = true;
        while changed {
            changed = false;
            for &(h, t) in triples {
                let (a, b) = (label[&h], label[&t]);
                if a != b {
                    let m = a.min(b);
                    label.insert(h, m);
                    label.insert(t, m);
                    changed = true;
                }
            }
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for s in seeds {
            *counts.entry(label[s]).or_default() += 1;
        }
        counts.values().copied().max().unwrap_or(0)
    }

    /// Total reward of a well-formed answer with the given triple ids.
    pub fn total(&self, g: &KnowledgeGraph, answer: &[TripleId], seeds: &[EntityId], x: f64, y: f64) -> f64 {
        let m = seeds.len();
        let half = (m / 2) as f64;
        let pairs: Vec<(usize, usize)> = answer
            .iter()
            .map(|&id| {
                let t = g.triple(id);
                (t.head.index(), t.tail.index())
            })
            .collect();
        let seed_idx: Vec<usize> = seeds.iter().map(|s| s.index()).collect();
        let group = self.seed_group(&pairs, &seed_idx);
        if group <= 1 {
            return -half;
        }
        let r_con = -half + group as f64 - 1.0;
        let entities: BTreeSet<usize> = pairs.iter().flat_map(|&(h, t)| [h, t]).collect();
        let r_ent: f64 = entities
            .iter()
            .map(|&e| -(1.0 + self.degree[e] as f64).ln() / self.hub_max)
            .sum();
        let relations: BTreeSet<usize> = answer.iter().map(|&id| g.triple(id).relation.index()).collect();
        let r_rel: f64 = relations
            .iter()
            .map(|&r| {
                let idf = (self.triples as f64 / self.rel_freq[r] as f64).ln();
                if self.idf_max > 0.0 {
                    idf / self.idf_max - 1.0
                } else {
                    -1.0
                }
            })
            .sum();
        1.0 + r_con + 0.5 * ((r_ent / x).max(-1.0) + (r_rel / y).max(-1.0))
    }
}

/// One candidate: sorted node ids and sorted triple ids.
pub type CandidateKey = (Vec<EntityId>, Vec<TripleId>);

pub fn key_of(sub: &Subgraph<'_>) -> CandidateKey {
    (
        sub.nodes().iter().copied().collect(),
        sub.triples().iter().copied().collect(),
    )
}

fn is_spanning_tree(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    edges.len() + 1 == n
}

/// Advances `c` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Every subset of the base's nodes by bitmask: keeps seed-containing,
/// connected sets within `budget`, each with its induced triples and the
/// first `trees` spanning trees in lexicographic order of triple ids.
pub fn bitmask_candidates(
    base: &Subgraph<'_>,
    seeds: &[EntityId],
    budget: usize,
    trees: usize,
) -> BTreeSet<CandidateKey> {
    let g = base.graph();
    let nodes: Vec<EntityId> = base.nodes().iter().copied().collect();
    let n = nodes.len();
    assert!(n <= 20, "bitmask reference is for small bases");
    let local = |e: EntityId| nodes.iter().position(|&x| x == e).unwrap();
    let edges: Vec<(TripleId, usize, usize)> = base
        .triples()
        .iter()
        .map(|&id| {
            let t = g.triple(id);
            (id, local(t.head), local(t.tail))
        })
        .collect();
    let seed_mask: u32 = seeds.iter().map(|&s| 1u32 << local(s)).sum();
    let mut out = BTreeSet::new();
    for mask in 1u32..(1u32 << n) {
        if mask & seed_mask != seed_mask || mask.count_ones() as usize > budget {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let induced: Vec<(TripleId, usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(_, h, t)| mask >> h & 1 == 1 && mask >> t & 1 == 1)
            .collect();
        // Connectivity of the induced subgraph.
        let mut reach = 1u32 << members[0];
        loop {
            let mut next = reach;
            for &(_, h, t) in &induced {
                if reach >> h & 1 == 1 || reach >> t & 1 == 1 {
                    next |= 1 << h | 1 << t;
                }
            }
            if next == reach {
                break;
            }
            reach = next;
        }
        if reach != mask {
            continue;
        }
        let node_ids: Vec<EntityId> = members.iter().map(|&i| nodes[i]).collect();
        out.insert((node_ids.clone(), induced.iter().map(|e| e.0).collect()));
        if members.len() < 2 || trees == 0 {
            continue;
        }
        let pos = |v: usize| members.iter().position(|&x| x == v).unwrap();
        let proper: Vec<(TripleId, usize, usize)> = induced
            .iter()
            .filter(|e| e.1 != e.2)
            .map(|&(id, h, t)| (id, pos(h), pos(t)))
            .collect();
        let k = members.len() - 1;
        if proper.len() < k {
            continue;
        }
        let mut combo: Vec<usize> = (0..k).collect();
        let mut found = 0;
        loop {
            let chosen: Vec<(usize, usize)> = combo.iter().map(|&i| (proper[i].1, proper[i].2)).collect();
            if is_spanning_tree(members.len(), &chosen) {
                out.insert((node_ids.clone(), combo.iter().map(|&i| proper[i].0).collect()));
                found += 1;
                if found == trees {
                    break;
                }
            }
            if !next_combination(&mut combo, proper.len()) {
                break;
            }
        }
    }
    out
}

/// The component of `g` holding `seed`, as an all-triples subgraph.
pub fn component_subgraph<'g>(g: &'g KnowledgeGraph, seed: EntityId) -> Subgraph<'g> {
    let dist = bfs_distances(&adjacency(g), seed.index());
    let ids: Vec<TripleId> = (0..g.triple_count())
        .map(TripleId::from_index)
        .filter(|&id| dist[g.triple(id).head.index()] != usize::MAX)
        .collect();
    let mut sub = Subgraph::from_triples(g, ids).expect("ids from the graph");
    if sub.is_empty() {
        sub = Subgraph::induced(g, [seed]).expect("seed in graph");
    }
    sub
}
