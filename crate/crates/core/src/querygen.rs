//! Benchmark construction: seed sampling, question templates, template-exact
//! seed extraction and the anonymisation transform.

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, GraphError, KnowledgeGraph};

pub const DEFAULT_PAIR_HOPS: usize = 4;
const MAX_SAMPLING_RETRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error("sampling failed after {0} attempts")]
    RetriesExhausted(usize),
    #[error("no entity lies within {k} hops of the current seeds")]
    NoEligibleEntity { k: usize },
    #[error("template {id} expects {expected} entities, got {got}")]
    Arity { id: usize, expected: usize, got: usize },
    #[error("unknown template {0}")]
    UnknownTemplate(usize),
    #[error("no template matches {0:?}")]
    NoTemplateMatch(String),
    #[error("invalid template {0:?}: {1}")]
    BadTemplate(String, String),
    #[error("invalid benchmark request: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub seeds: Vec<EntityId>,
    pub text: String,
    pub template_id: usize,
    pub k_bound: usize,
    pub split: Split,
}

/// One line of a benchmark file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub seeds: Vec<String>,
    pub text: String,
    pub template_id: usize,
    pub k: usize,
    pub split: Split,
}

impl QueryRecord {
    pub fn from_query(q: &Query, g: &KnowledgeGraph) -> Self {
        Self {
            seeds: q.seeds.iter().map(|&e| g.entity_name(e).to_owned()).collect(),
            text: q.text.clone(),
            template_id: q.template_id,
            k: q.k_bound,
            split: q.split,
        }
    }

    pub fn to_query(&self, g: &KnowledgeGraph) -> Result<Query, GraphError> {
        Ok(Query {
            seeds: g.resolve_entities(&self.seeds)?,
            text: self.text.clone(),
            template_id: self.template_id,
            k_bound: self.k,
            split: self.split,
        })
    }
}

/// Draws `(u, v)` with `v` uniform among the entities within `k` hops of a
/// uniformly drawn `u`; `u` is redrawn while its ball holds only itself.
pub fn sample_pair<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    k: usize,
    rng: &mut R,
) -> Result<(EntityId, EntityId), QueryGenError> {
    for _ in 0..MAX_SAMPLING_RETRIES {
        let u = EntityId::from_index(rng.gen_range(0..g.entity_count()));
        let ball = g.ball(u, k);
        if ball.len() < 2 {
            continue;
        }
        let mut others: Vec<EntityId> = ball.into_iter().skip(1).map(|(e, _)| e).collect();
        others.sort_unstable();
        let v = others[rng.gen_range(0..others.len())];
        return Ok((u, v));
    }
    Err(QueryGenError::RetriesExhausted(MAX_SAMPLING_RETRIES))
}

/// Extends `base` to `count` seeds; each new seed lies within `k` hops of at
/// least one earlier seed.
pub fn sample_multi<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    base: &[EntityId],
    k: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>, QueryGenError> {
    let mut seeds = base.to_vec();
    for &s in base {
        g.check_entity(s)?;
    }
    while seeds.len() < count {
        let taken: HashSet<EntityId> = seeds.iter().copied().collect();
        let eligible: BTreeSet<EntityId> = seeds
            .iter()
            .flat_map(|&s| g.ball(s, k))
            .map(|(e, _)| e)
            .filter(|e| !taken.contains(e))
            .collect();
        if eligible.is_empty() {
            return Err(QueryGenError::NoEligibleEntity { k });
        }
        let pick = rng.gen_range(0..eligible.len());
        seeds.push(*eligible.iter().nth(pick).unwrap());
    }
    Ok(seeds)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(usize),
}

/// A question pattern with `{0}`, `{1}`, ... placeholders, each used once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    source: String,
    pieces: Vec<Piece>,
    arity: usize,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, QueryGenError> {
        let bad = |why: &str| QueryGenError::BadTemplate(source.to_owned(), why.to_owned());
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut rest = source;
        let mut slots = Vec::new();
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let close = rest[open..].find('}').ok_or_else(|| bad("unclosed '{'"))? + open;
            let slot: usize = rest[open + 1..close]
                .parse()
                .map_err(|_| bad("placeholder must be a number"))?;
            if !text.is_empty() {
                pieces.push(Piece::Text(std::mem::take(&mut text)));
            } else if matches!(pieces.last(), Some(Piece::Slot(_))) {
                return Err(bad("adjacent placeholders are ambiguous"));
            }
            pieces.push(Piece::Slot(slot));
            slots.push(slot);
            rest = &rest[close + 1..];
        }
        text.push_str(rest);
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        let mut sorted = slots.clone();
        sorted.sort_unstable();
        if sorted != (0..slots.len()).collect::<Vec<_>>() || slots.len() < 2 {
            return Err(bad("placeholders must be {0}..{n-1}, each once, n >= 2"));
        }
        Ok(Self {
            source: source.to_owned(),
            arity: slots.len(),
            pieces,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn fill(&self, names: &[&str]) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Text(t) => t.as_str(),
                Piece::Slot(i) => names[*i],
            })
            .collect()
    }

    /// Every assignment of slots to substrings that reproduces `text` and
    /// whose slot values pass `accept`; the first one found wins.
    fn capture(&self, text: &str, accept: &dyn Fn(&str) -> bool) -> Option<Vec<String>> {
        let mut out = vec![String::new(); self.arity];
        self.capture_from(0, text, accept, &mut out).then_some(out)
    }

    fn capture_from(&self, piece: usize, text: &str, accept: &dyn Fn(&str) -> bool, out: &mut Vec<String>) -> bool {
        match self.pieces.get(piece) {
            None => text.is_empty(),
            Some(Piece::Text(t)) => text
                .strip_prefix(t.as_str())
                .is_some_and(|rest| self.capture_from(piece + 1, rest, accept, out)),
            Some(Piece::Slot(slot)) => {
                let ends: Vec<usize> = match self.pieces.get(piece + 1) {
                    None => vec![text.len()],
                    Some(Piece::Text(next)) => text.match_indices(next.as_str()).map(|(i, _)| i).collect(),
                    Some(Piece::Slot(_)) => unreachable!("adjacent slots are rejected at parse time"),
                };
                for end in ends {
                    let value = &text[..end];
                    if value.is_empty() || !accept(value) {
                        continue;
                    }
                    out[*slot] = value.to_owned();
                    if self.capture_from(piece + 1, &text[end..], accept, out) {
                        return true;
                    }
                }
                false
            }
        }
    }
}

/// Ordered collection of templates; a template's id is its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::from_sources(&[
            "How are {0} and {1} associated?",
            "For what reason are {0} and {1} related?",
            "What is the connection between {0} and {1}?",
            "How are {0}, {1} and {2} associated?",
            "What links {0}, {1} and {2} together?",
            "How are {0}, {1}, {2} and {3} associated?",
            "What links {0}, {1}, {2} and {3} together?",
        ])
        .expect("built-in templates are valid")
    }
}

impl TemplateSet {
    pub fn from_sources<S: AsRef<str>>(sources: &[S]) -> Result<Self, QueryGenError> {
        let templates = sources
            .iter()
            .map(|s| Template::parse(s.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(Self { templates })
    }

    pub fn get(&self, id: usize) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Ids of templates taking `arity` entities.
    pub fn ids_for_arity(&self, arity: usize) -> Vec<usize> {
        (0..self.templates.len())
            .filter(|&i| self.templates[i].arity == arity)
            .collect()
    }

    pub fn render(&self, seeds: &[EntityId], template_id: usize, g: &KnowledgeGraph) -> Result<String, QueryGenError> {
        let t = self
            .get(template_id)
            .ok_or(QueryGenError::UnknownTemplate(template_id))?;
        if t.arity != seeds.len() {
            return Err(QueryGenError::Arity {
                id: template_id,
                expected: t.arity,
                got: seeds.len(),
            });
        }
        for &s in seeds {
            g.check_entity(s)?;
        }
        let names: Vec<&str> = seeds.iter().map(|&e| g.entity_name(e)).collect();
        Ok(t.fill(&names))
    }

    /// Recovers `(seeds, template id)` from a rendered question. Only exact
    /// template matches whose captured names are entities of `g` count.
    pub fn extract_seeds(&self, text: &str, g: &KnowledgeGraph) -> Result<(Vec<EntityId>, usize), QueryGenError> {
        let accept = |name: &str| g.entity_id(name).is_some();
        for (id, t) in self.templates.iter().enumerate() {
            if let Some(names) = t.capture(text, &accept) {
                let seeds = g.resolve_entities(&names)?;
                return Ok((seeds, id));
            }
        }
        Err(QueryGenError::NoTemplateMatch(text.to_owned()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchmarkConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
    /// Seeds per query, 2 to 4.
    pub entities: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 500,
            k: DEFAULT_PAIR_HOPS,
            entities: 2,
            seed: 0,
        }
    }
}

/// Independent generator for query `index` of `split`, attempt `attempt`.
fn query_rng(seed: u64, split: Split, index: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match split {
        Split::Train => 0,
        Split::Test => 1,
    });
    rng.set_word_pos(((index as u128) << 24) | ((attempt as u128) << 8));
    rng
}

fn sample_query(
    g: &KnowledgeGraph,
    templates: &TemplateSet,
    cfg: &BenchmarkConfig,
    split: Split,
    index: usize,
    attempt: usize,
) -> Result<Query, QueryGenError> {
    let mut rng = query_rng(cfg.seed, split, index, attempt);
    let (u, v) = sample_pair(g, cfg.k, &mut rng)?;
    let seeds = sample_multi(g, &[u, v], cfg.k, cfg.entities, &mut rng)?;
    let ids = templates.ids_for_arity(cfg.entities);
    let template_id = ids[rng.gen_range(0..ids.len())];
    Ok(Query {
        text: templates.render(&seeds, template_id, g)?,
        seeds,
        template_id,
        k_bound: cfg.k,
        split,
    })
}

fn seed_key(seeds: &[EntityId]) -> BTreeSet<EntityId> {
    seeds.iter().copied().collect()
}

/// Generates the train split followed by the test split. Test queries never
/// reuse a train seed set; the output depends only on `cfg`.
pub fn generate_benchmark(
    g: &KnowledgeGraph,
    templates: &TemplateSet,
    cfg: &BenchmarkConfig,
) -> Result<Vec<Query>, QueryGenError> {
    if !(2..=4).contains(&cfg.entities) {
        return Err(QueryGenError::Config("entities must be between 2 and 4".into()));
    }
    if templates.ids_for_arity(cfg.entities).is_empty() {
        return Err(QueryGenError::Config(format!(
            "no template takes {} entities",
            cfg.entities
        )));
    }
    let mut out = Vec::with_capacity(cfg.n_train + cfg.n_test);
    let mut train_keys = HashSet::new();
    for i in 0..cfg.n_train {
        let q = sample_query(g, templates, cfg, Split::Train, i, 0)?;
        train_keys.insert(seed_key(&q.seeds));
        out.push(q);
    }
    for i in 0..cfg.n_test {
        let mut attempt = 0;
        loop {
            let q = sample_query(g, templates, cfg, Split::Test, i, attempt)?;
            if !train_keys.contains(&seed_key(&q.seeds)) {
                out.push(q);
                break;
            }
            attempt += 1;
            if attempt == MAX_SAMPLING_RETRIES {
                return Err(QueryGenError::RetriesExhausted(attempt));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameMapping {
    /// `(original, new)` for every entity, in id order.
    pub entities: Vec<(String, String)>,
    /// `(original, new)` for every relation, in id order.
    pub relations: Vec<(String, String)>,
}

impl NameMapping {
    /// Two-column TSV: entity rows, then relation rows.
    pub fn to_tsv(&self) -> String {
        self.entities
            .iter()
            .chain(&self.relations)
            .map(|(a, b)| format!("{a}\t{b}\n"))
            .collect()
    }
}

fn rename_fraction<R: Rng + ?Sized>(names: &[String], fraction: f64, prefix: &str, rng: &mut R) -> Vec<String> {
    let n = names.len();
    let count = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let chosen = sample(rng, n, count).into_vec();
    let chosen_set: HashSet<usize> = chosen.iter().copied().collect();
    let kept: HashSet<&str> = (0..n)
        .filter(|i| !chosen_set.contains(i))
        .map(|i| names[i].as_str())
        .collect();
    let mut out = names.to_vec();
    let mut counter = 0usize;
    for i in chosen {
        let fresh = loop {
            counter += 1;
            let candidate = format!("{prefix}{counter}");
            if !kept.contains(candidate.as_str()) {
                break candidate;
            }
        };
        out[i] = fresh;
    }
    out
}

/// Renames a uniformly chosen `fraction` of entities to `ENT1..` and of
/// relations to `REL1..`, leaving structure and ids untouched.
pub fn anonymize<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    fraction: f64,
    rng: &mut R,
) -> Result<(KnowledgeGraph, NameMapping), QueryGenError> {
    let entity_names: Vec<String> = g.entities().map(|e| g.entity_name(e).to_owned()).collect();
    let relation_names: Vec<String> = g.relations().map(|r| g.relation_name(r).to_owned()).collect();
    let new_entities = rename_fraction(&entity_names, fraction, "ENT", rng);
    let new_relations = rename_fraction(&relation_names, fraction, "REL", rng);
    let mapping = NameMapping {
        entities: entity_names.into_iter().zip(new_entities.iter().cloned()).collect(),
        relations: relation_names.into_iter().zip(new_relations.iter().cloned()).collect(),
    };
    let renamed = g.with_names(new_entities, new_relations)?;
    Ok((renamed, mapping))
}
