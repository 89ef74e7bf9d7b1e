//! Seed-driven subgraph retrieval: k-hop selection followed by the five-stage
//! pruning pipeline (hub thresholding, intersection audit with threshold
//! relaxation, leaf peeling, compactness control and iterative reduction).

mod stages;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{hub_penalty_for_degree, EntityId, GraphError, KnowledgeGraph};
use crate::scalar::Scalar;
use crate::subgraph::Subgraph;

pub use stages::{
    compactness_control, connectivity_audit, expand_neighborhoods, leaf_prune, local_prune, minimal_covers,
    select_candidate, union_subgraph, CompactCandidate, ConnectivityAudit, Neighborhood,
};

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("need at least two distinct seed entities, got {0}")]
    TooFewSeeds(usize),
    #[error("seed {0} appears more than once")]
    DuplicateSeed(EntityId),
    #[error("invalid prune configuration: {0}")]
    Config(String),
    #[error("seeds are not connected within {radius} hops of each other")]
    UnreachableSeeds { radius: usize },
    #[error("no intersection cover exists although the auxiliary graph is connected")]
    NoCover,
}

/// Pruning parameters. Unset `rho_init`/`rho_step` are derived from the
/// candidate graph: the median hub penalty of its nodes, and one eighth of the
/// gap between that median and the graph-wide maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig<T> {
    pub k: usize,
    pub rho_init: Option<T>,
    pub rho_step: Option<T>,
    pub s_init: usize,
    pub node_budget: usize,
    pub cover_enum_limit: usize,
}

impl<T: Scalar> Default for PruneConfig<T> {
    fn default() -> Self {
        Self {
            k: 2,
            rho_init: None,
            rho_step: None,
            s_init: 3,
            node_budget: 24,
            cover_enum_limit: 64,
        }
    }
}

impl<T: Scalar> PruneConfig<T> {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_budget(mut self, node_budget: usize) -> Self {
        self.node_budget = node_budget;
        self
    }

    pub fn validate(&self, seed_count: usize) -> Result<(), RetrieveError> {
        if self.k < 1 {
            return Err(RetrieveError::Config("k must be at least 1".into()));
        }
        if let Some(step) = self.rho_step {
            if !(step > T::zero()) {
                return Err(RetrieveError::Config("rho_step must be positive".into()));
            }
        }
        if self.s_init < 1 {
            return Err(RetrieveError::Config("s_init must be at least 1".into()));
        }
        if self.node_budget < seed_count {
            return Err(RetrieveError::Config(format!(
                "node_budget {} is smaller than the seed count {seed_count}",
                self.node_budget
            )));
        }
        if self.cover_enum_limit < 1 {
            return Err(RetrieveError::Config("cover_enum_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Select,
    LocalPrune,
    LeafPrune,
    Compactness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Threshold round (1-based); 0 for candidate selection.
    pub rho_round: usize,
    pub s: Option<usize>,
    pub nodes: usize,
    pub triples: usize,
}

/// Everything the pipeline decided on the way to its output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningTrace<T> {
    pub stages: Vec<StageRecord>,
    pub rho_init: T,
    pub rho_step: T,
    /// Threshold used in each round, in order.
    pub rho_schedule: Vec<T>,
    pub rho_final: T,
    pub relaxation_rounds: usize,
    pub s_init: usize,
    pub s_final: Option<usize>,
    pub reduction_rounds: usize,
    /// Number of intersections in the cover behind the output, when Stage 4 won.
    pub lambda: Option<usize>,
    /// Largest pruned neighbourhood at the final threshold (nodes, triples).
    pub max_neighborhood_nodes: usize,
    pub max_neighborhood_triples: usize,
    pub over_budget: bool,
    pub final_nodes: usize,
    pub final_triples: usize,
}

#[derive(Clone, Debug)]
pub struct Retrieval<'g, T> {
    pub subgraph: Subgraph<'g>,
    pub trace: PruningTrace<T>,
}

pub(crate) fn validate_seeds(g: &KnowledgeGraph, seeds: &[EntityId]) -> Result<(), RetrieveError> {
    let mut seen = HashSet::new();
    for &s in seeds {
        g.check_entity(s)?;
        if !seen.insert(s) {
            return Err(RetrieveError::DuplicateSeed(s));
        }
    }
    if seeds.len() < 2 {
        return Err(RetrieveError::TooFewSeeds(seeds.len()));
    }
    Ok(())
}

fn median_penalty<T: Scalar>(g: &KnowledgeGraph, sub: &Subgraph<'_>) -> T {
    let mut degrees: Vec<usize> = sub.nodes().iter().map(|&e| g.degree(e)).collect();
    degrees.sort_unstable();
    let mid = degrees.get((degrees.len().saturating_sub(1)) / 2).copied().unwrap_or(0);
    hub_penalty_for_degree(mid)
}

/// Runs the full pipeline for `seeds`.
pub fn retrieve<'g, T: Scalar>(
    g: &'g KnowledgeGraph,
    seeds: &[EntityId],
    cfg: &PruneConfig<T>,
) -> Result<Retrieval<'g, T>, RetrieveError> {
    validate_seeds(g, seeds)?;
    cfg.validate(seeds.len())?;

    let hoods = expand_neighborhoods(g, seeds, cfg.k)?;
    let candidate = union_subgraph(g, &hoods);
    let mut stages = vec![StageRecord {
        stage: Stage::Select,
        rho_round: 0,
        s: None,
        nodes: candidate.node_count(),
        triples: candidate.triple_count(),
    }];

    let hub_max: T = g.hub_penalty_max();
    let mut rho_init = cfg.rho_init.unwrap_or_else(|| median_penalty(g, &candidate));
    let rho_step = cfg.rho_step.unwrap_or_else(|| {
        let step = (hub_max - rho_init) / T::of_usize(8);
        if step > T::zero() {
            step
        } else {
            hub_max / T::of_usize(8)
        }
    });
    if !(rho_init > T::zero()) {
        rho_init = rho_step;
    }
    let cap = hub_max + rho_step;

    // Stages 1-2 with threshold relaxation.
    let mut rho = rho_init.min(cap);
    let mut rho_schedule = Vec::new();
    let mut round = 0;
    let (pruned, audit) = loop {
        round += 1;
        rho_schedule.push(rho);
        let pruned = local_prune(g, &hoods, seeds, rho);
        let audit = connectivity_audit(&pruned);
        let union = union_subgraph(g, &pruned);
        stages.push(StageRecord {
            stage: Stage::LocalPrune,
            rho_round: round,
            s: None,
            nodes: union.node_count(),
            triples: union.triple_count(),
        });
        if audit.connected {
            break (pruned, audit);
        }
        if rho >= cap {
            return Err(RetrieveError::UnreachableSeeds { radius: 2 * cfg.k });
        }
        rho = (rho + rho_step).min(cap);
    };

    let max_neighborhood_nodes = pruned.iter().map(Neighborhood::len).max().unwrap_or(0);
    let max_neighborhood_triples = pruned.iter().map(|h| h.induced_triple_count(g)).max().unwrap_or(0);

    // Stage 3.
    let refined = leaf_prune(&union_subgraph(g, &pruned), seeds);
    stages.push(StageRecord {
        stage: Stage::LeafPrune,
        rho_round: round,
        s: None,
        nodes: refined.node_count(),
        triples: refined.triple_count(),
    });

    // Stages 4-5.
    let mut best = refined.clone();
    let mut lambda = None;
    let mut s_final = None;
    let mut reduction_rounds = 0;
    if best.node_count() > cfg.node_budget {
        for s in (1..=cfg.s_init).rev() {
            reduction_rounds += 1;
            if let Some(c) = compactness_control(&refined, &pruned, &audit, seeds, cfg, s)? {
                if (c.subgraph.node_count(), c.subgraph.nodes()) <= (best.node_count(), best.nodes()) {
                    best = c.subgraph;
                    lambda = Some(c.lambda);
                    s_final = Some(s);
                }
            }
            stages.push(StageRecord {
                stage: Stage::Compactness,
                rho_round: round,
                s: Some(s),
                nodes: best.node_count(),
                triples: best.triple_count(),
            });
            if best.node_count() <= cfg.node_budget {
                break;
            }
        }
    }

    let over_budget = best.node_count() > cfg.node_budget;
    let trace = PruningTrace {
        stages,
        rho_init,
        rho_step,
        rho_schedule,
        rho_final: rho,
        relaxation_rounds: round,
        s_init: cfg.s_init,
        s_final,
        reduction_rounds,
        lambda,
        max_neighborhood_nodes,
        max_neighborhood_triples,
        over_budget,
        final_nodes: best.node_count(),
        final_triples: best.triple_count(),
    };
    Ok(Retrieval { subgraph: best, trace })
}
