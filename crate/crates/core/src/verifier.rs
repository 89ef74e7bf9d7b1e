//! Rule-based reward for relational answers.
//!
//! The composite reward is `R_fmt + R_con + (R_ent / x + R_rel / y) / 2`,
//! with two short circuits: a malformed answer scores `-floor(m/2) - 2` and a
//! well-formed answer that connects no pair of seeds scores `-floor(m/2)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::ParsedAnswer;
use crate::graph::{hub_penalty_for_degree, idf_for_frequency, EntityId, KnowledgeGraph};
use crate::scalar::Scalar;
use crate::subgraph::Subgraph;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifierError {
    #[error("need at least two distinct seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("seed {0} appears more than once")]
    DuplicateSeed(EntityId),
    #[error("seed {0} is not an entity of the answer's graph")]
    ForeignSeed(EntityId),
    #[error("invalid reward configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig<T> {
    /// Entity normalisation constant.
    pub x: T,
    /// Relation normalisation constant.
    pub y: T,
    pub hub_penalty_max: T,
    /// Zero when every relation is equally frequent; each relation then
    /// scores -1.
    pub idf_max: T,
    pub clamp_oversize: bool,
}

impl<T: Scalar> RewardConfig<T> {
    pub const DEFAULT_X: f64 = 7.0;
    pub const DEFAULT_Y: f64 = 6.0;

    /// Default constants with normalisers taken from `g`.
    pub fn for_graph(g: &KnowledgeGraph) -> Self {
        Self {
            x: T::of_f64(Self::DEFAULT_X),
            y: T::of_f64(Self::DEFAULT_Y),
            hub_penalty_max: g.hub_penalty_max(),
            idf_max: g.idf_max(),
            clamp_oversize: true,
        }
    }

    pub fn with_constants(mut self, x: T, y: T) -> Self {
        self.x = x;
        self.y = y;
        self
    }

    pub fn validate(&self) -> Result<(), VerifierError> {
        if !(self.x >= T::one() && self.y >= T::one()) {
            return Err(VerifierError::Config("x and y must be at least 1".into()));
        }
        if !(self.hub_penalty_max > T::zero()) {
            return Err(VerifierError::Config("hub_penalty_max must be positive".into()));
        }
        if !(self.idf_max >= T::zero()) {
            return Err(VerifierError::Config("idf_max must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortCircuit {
    None,
    FormatFail,
    FullyDisconnected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    pub r_fmt: i32,
    pub r_con: Option<i64>,
    pub r_ent: Option<T>,
    pub r_rel: Option<T>,
    pub total: T,
    pub short_circuit: ShortCircuit,
    pub m: usize,
    /// Largest number of seeds sharing one component of the grounded answer.
    pub connected_seeds: usize,
    /// Set when `R_ent / x` or `R_rel / y` fell below -1.
    pub oversize: bool,
}

impl<T: Scalar> RewardBreakdown<T> {
    /// Lower end of the reward range for `m` seeds.
    pub fn lower_bound(m: usize) -> T {
        -T::of_usize(m / 2) - T::of_usize(2)
    }

    /// Exclusive upper end of the reward range for `m` seeds.
    pub fn upper_bound(m: usize) -> T {
        T::of_usize(m.div_ceil(2))
    }

    pub fn fully_connected(&self) -> bool {
        self.connected_seeds == self.m
    }
}

/// `-floor(m/2) + l` where `l + 1` seeds share the best component.
pub fn connectivity_reward(answer: &Subgraph<'_>, seeds: &[EntityId]) -> i64 {
    connectivity_from_group(seeds.len(), answer.max_seed_group(seeds))
}

fn connectivity_from_group(m: usize, group: usize) -> i64 {
    -((m / 2) as i64) + group.max(1) as i64 - 1
}

/// Sum over distinct answer entities of `-HubPenalty(e) / max HubPenalty`.
pub fn entity_informativeness<T: Scalar>(answer: &Subgraph<'_>, cfg: &RewardConfig<T>) -> T {
    let g = answer.graph();
    answer
        .nodes()
        .iter()
        .map(|&e| -hub_penalty_for_degree::<T>(g.degree(e)) / cfg.hub_penalty_max)
        .fold(T::zero(), |a, b| a + b)
}

/// Per-relation term `IDF(r) / max IDF - 1`.
pub fn relation_term<T: Scalar>(idf: T, idf_max: T) -> T {
    if idf_max > T::zero() {
        idf / idf_max - T::one()
    } else {
        -T::one()
    }
}

/// Sum over distinct answer relations of [`relation_term`].
pub fn relation_informativeness<T: Scalar>(answer: &Subgraph<'_>, cfg: &RewardConfig<T>) -> T {
    let g = answer.graph();
    answer
        .relations()
        .into_iter()
        .map(|r| {
            relation_term(
                idf_for_frequency::<T>(g.triple_count(), g.relation_frequency(r)),
                cfg.idf_max,
            )
        })
        .fold(T::zero(), |a, b| a + b)
}

fn check_seeds(g: &KnowledgeGraph, seeds: &[EntityId]) -> Result<(), VerifierError> {
    let mut seen = std::collections::HashSet::new();
    for &s in seeds {
        if !g.contains_entity(s) {
            return Err(VerifierError::ForeignSeed(s));
        }
        if !seen.insert(s) {
            return Err(VerifierError::DuplicateSeed(s));
        }
    }
    if seeds.len() < 2 {
        return Err(VerifierError::TooFewSeeds(seeds.len()));
    }
    Ok(())
}

/// Scores a parsed answer against the query's seeds.
pub fn score<T: Scalar>(
    parsed: &ParsedAnswer<'_>,
    seeds: &[EntityId],
    cfg: &RewardConfig<T>,
) -> Result<RewardBreakdown<T>, VerifierError> {
    check_seeds(parsed.graph(), seeds)?;
    cfg.validate()?;
    let m = seeds.len();
    if !parsed.format_ok {
        return Ok(RewardBreakdown {
            r_fmt: -1,
            r_con: None,
            r_ent: None,
            r_rel: None,
            total: RewardBreakdown::<T>::lower_bound(m),
            short_circuit: ShortCircuit::FormatFail,
            m,
            connected_seeds: 0,
            oversize: false,
        });
    }
    Ok(score_grounded(&parsed.grounded, seeds, cfg))
}

/// Scores a well-formed answer given directly as a grounded subgraph.
pub fn score_subgraph<T: Scalar>(
    answer: &Subgraph<'_>,
    seeds: &[EntityId],
    cfg: &RewardConfig<T>,
) -> Result<RewardBreakdown<T>, VerifierError> {
    check_seeds(answer.graph(), seeds)?;
    cfg.validate()?;
    Ok(score_grounded(answer, seeds, cfg))
}

fn score_grounded<T: Scalar>(answer: &Subgraph<'_>, seeds: &[EntityId], cfg: &RewardConfig<T>) -> RewardBreakdown<T> {
    let m = seeds.len();
    let group = answer.max_seed_group(seeds);
    let r_con = connectivity_from_group(m, group);
    if group <= 1 {
        return RewardBreakdown {
            r_fmt: 1,
            r_con: Some(r_con),
            r_ent: None,
            r_rel: None,
            total: -T::of_usize(m / 2),
            short_circuit: ShortCircuit::FullyDisconnected,
            m,
            connected_seeds: group,
            oversize: false,
        };
    }
    let r_ent = entity_informativeness(answer, cfg);
    let r_rel = relation_informativeness(answer, cfg);
    let mut ent = r_ent / cfg.x;
    let mut rel = r_rel / cfg.y;
    let oversize = ent < -T::one() || rel < -T::one();
    if cfg.clamp_oversize {
        ent = ent.max(-T::one());
        rel = rel.max(-T::one());
    }
    let total = T::one() + T::from_i64(r_con).expect("small integer") + T::half() * (ent + rel);
    RewardBreakdown {
        r_fmt: 1,
        r_con: Some(r_con),
        r_ent: Some(r_ent),
        r_rel: Some(r_rel),
        total,
        short_circuit: ShortCircuit::None,
        m,
        connected_seeds: group,
        oversize,
    }
}
