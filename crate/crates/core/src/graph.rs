//! Interned triple store with an undirected adjacency index.
//!
//! Entities and relations are interned in first-appearance order, triples are
//! deduplicated, and every statistic the scoring code needs (degrees,
//! relation frequencies and their extrema) is computed once when the graph is
//! built. The graph is immutable afterwards.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Characters that would make the `GRAPH:` answer grammar ambiguous.
pub const RESERVED_NAME_CHARS: [char; 2] = ['"', '|'];

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(u32);

        impl $name {
            pub fn from_index(index: usize) -> Self {
                Self(u32::try_from(index).expect("id space is limited to u32"))
            }

            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Dense id of an interned entity.
    EntityId
);
id_type!(
    /// Dense id of an interned relation.
    RelationId
);
id_type!(
    /// Position of a stored triple in the graph's triple table.
    TripleId
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }

    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// One entry of the undirected adjacency index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Adjacent {
    pub neighbor: EntityId,
    pub relation: RelationId,
    pub triple: TripleId,
    pub direction: Direction,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}name {name:?} contains a reserved character ('\"' or '|')", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    UnsafeName { line: Option<usize>, name: String },
    #[error("graph contains no triples")]
    Empty,
    #[error("aliases map both {first:?} and {second:?} to {alias:?}")]
    AliasCollision {
        alias: String,
        first: String,
        second: String,
    },
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("entity id {0} is not in the graph")]
    UnknownEntityId(EntityId),
    #[error("relation id {0} is not in the graph")]
    UnknownRelationId(RelationId),
    #[error("relation {0} occurs in no triple")]
    UnusedRelation(RelationId),
}

/// Settings for [`KnowledgeGraph::load_tsv`].
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub delimiter: char,
    /// Two-column `raw_id<TAB>name` file substituted for entity names.
    pub entity_aliases: Option<PathBuf>,
    /// Same format, applied to relation names.
    pub relation_aliases: Option<PathBuf>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: '\t',
            entity_aliases: None,
            relation_aliases: None,
        }
    }
}

fn check_name(name: &str, line: Option<usize>) -> Result<(), GraphError> {
    if name.contains(RESERVED_NAME_CHARS) || name.contains(['\n', '\r']) {
        return Err(GraphError::UnsafeName {
            line,
            name: name.to_owned(),
        });
    }
    Ok(())
}

/// Incremental constructor; ids are handed out in first-appearance order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entity_names: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_lookup: HashMap<Triple, TripleId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, name: &str) -> Result<EntityId, GraphError> {
        let name = name.trim();
        if let Some(&id) = self.entity_lookup.get(name) {
            return Ok(id);
        }
        if name.is_empty() {
            return Err(GraphError::Parse {
                line: 0,
                message: "empty entity name".into(),
            });
        }
        check_name(name, None)?;
        let id = EntityId::from_index(self.entity_names.len());
        self.entity_names.push(name.to_owned());
        self.entity_lookup.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn relation(&mut self, name: &str) -> Result<RelationId, GraphError> {
        let name = name.trim();
        if let Some(&id) = self.relation_lookup.get(name) {
            return Ok(id);
        }
        if name.is_empty() {
            return Err(GraphError::Parse {
                line: 0,
                message: "empty relation name".into(),
            });
        }
        check_name(name, None)?;
        let id = RelationId::from_index(self.relation_names.len());
        self.relation_names.push(name.to_owned());
        self.relation_lookup.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Adds a triple by id; returns the stored id (existing one for duplicates).
    pub fn add_ids(&mut self, head: EntityId, relation: RelationId, tail: EntityId) -> TripleId {
        assert!(head.index() < self.entity_names.len() && tail.index() < self.entity_names.len());
        assert!(relation.index() < self.relation_names.len());
        let triple = Triple::new(head, relation, tail);
        match self.triple_lookup.entry(triple) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let id = TripleId::from_index(self.triples.len());
                self.triples.push(triple);
                *e.insert(id)
            }
        }
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> Result<TripleId, GraphError> {
        let h = self.entity(head)?;
        let r = self.relation(relation)?;
        let t = self.entity(tail)?;
        Ok(self.add_ids(h, r, t))
    }

    pub fn build(self) -> Result<KnowledgeGraph, GraphError> {
        if self.triples.is_empty() {
            return Err(GraphError::Empty);
        }
        Ok(KnowledgeGraph::assemble(
            self.entity_names,
            self.entity_lookup,
            self.relation_names,
            self.relation_lookup,
            self.triples,
            self.triple_lookup,
        ))
    }
}

/// Immutable knowledge graph `G = (E, R, T)`.
#[derive(Clone)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_lookup: HashMap<Triple, TripleId>,
    // CSR layout: adjacency of entity e is adjacency[offsets[e]..offsets[e + 1]].
    offsets: Vec<usize>,
    adjacency: Vec<Adjacent>,
    relation_freq: Vec<usize>,
    max_degree: usize,
    min_relation_freq: usize,
}

impl fmt::Debug for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeGraph")
            .field("entities", &self.entity_count())
            .field("relations", &self.relation_count())
            .field("triples", &self.triple_count())
            .finish()
    }
}

/// Summary statistics reported by `load-check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub max_degree: usize,
    pub hub_penalty_max: f64,
    pub idf_max: f64,
}

impl KnowledgeGraph {
    fn assemble(
        entity_names: Vec<String>,
        entity_lookup: HashMap<String, EntityId>,
        relation_names: Vec<String>,
        relation_lookup: HashMap<String, RelationId>,
        triples: Vec<Triple>,
        triple_lookup: HashMap<Triple, TripleId>,
    ) -> Self {
        let n = entity_names.len();
        let mut degree = vec![0usize; n];
        let mut relation_freq = vec![0usize; relation_names.len()];
        for t in &triples {
            degree[t.head.index()] += 1;
            if !t.is_self_loop() {
                degree[t.tail.index()] += 1;
            }
            relation_freq[t.relation.index()] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let placeholder = Adjacent {
            neighbor: EntityId(0),
            relation: RelationId(0),
            triple: TripleId(0),
            direction: Direction::Outgoing,
        };
        let mut adjacency = vec![placeholder; offsets[n]];
        for (i, t) in triples.iter().enumerate() {
            let id = TripleId::from_index(i);
            adjacency[cursor[t.head.index()]] = Adjacent {
                neighbor: t.tail,
                relation: t.relation,
                triple: id,
                direction: Direction::Outgoing,
            };
            cursor[t.head.index()] += 1;
            if !t.is_self_loop() {
                adjacency[cursor[t.tail.index()]] = Adjacent {
                    neighbor: t.head,
                    relation: t.relation,
                    triple: id,
                    direction: Direction::Incoming,
                };
                cursor[t.tail.index()] += 1;
            }
        }
        let max_degree = degree.iter().copied().max().unwrap_or(0);
        let min_relation_freq = relation_freq.iter().copied().filter(|&f| f > 0).min().unwrap_or(0);
        Self {
            entity_names,
            entity_lookup,
            relation_names,
            relation_lookup,
            triples,
            triple_lookup,
            offsets,
            adjacency,
            relation_freq,
            max_degree,
            min_relation_freq,
        }
    }

    /// Builds a graph from `(head, relation, tail)` name triples.
    pub fn from_triples<'a, I>(triples: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut b = GraphBuilder::new();
        for (h, r, t) in triples {
            b.add(h, r, t)?;
        }
        b.build()
    }

    /// Loads a line-oriented `head<TAB>relation<TAB>tail` file.
    ///
    /// Blank lines are skipped; CRLF line endings are accepted.
    pub fn load_tsv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let entity_aliases = options
            .entity_aliases
            .as_deref()
            .map(|p| read_aliases(p, options.delimiter))
            .transpose()?;
        let relation_aliases = options
            .relation_aliases
            .as_deref()
            .map(|p| read_aliases(p, options.delimiter))
            .transpose()?;
        Self::parse_tsv(
            &text,
            options.delimiter,
            entity_aliases.as_ref(),
            relation_aliases.as_ref(),
        )
    }

    /// Parses TSV text already in memory.
    pub fn parse_tsv(
        text: &str,
        delimiter: char,
        entity_aliases: Option<&HashMap<String, String>>,
        relation_aliases: Option<&HashMap<String, String>>,
    ) -> Result<Self, GraphError> {
        let mut b = GraphBuilder::new();
        let mut entity_origin: HashMap<String, String> = HashMap::new();
        let mut relation_origin: HashMap<String, String> = HashMap::new();
        for (i, raw) in text.split('\n').enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
            if fields.len() != 3 {
                return Err(GraphError::Parse {
                    line: line_no,
                    message: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(GraphError::Parse {
                    line: line_no,
                    message: "empty field".into(),
                });
            }
            let head = substitute(fields[0], entity_aliases, &mut entity_origin)?;
            let rel = substitute(fields[1], relation_aliases, &mut relation_origin)?;
            let tail = substitute(fields[2], entity_aliases, &mut entity_origin)?;
            for name in [head, rel, tail] {
                check_name(name, Some(line_no))?;
            }
            b.add(head, rel, tail).map_err(|e| match e {
                GraphError::UnsafeName { name, .. } => GraphError::UnsafeName {
                    line: Some(line_no),
                    name,
                },
                GraphError::Parse { message, .. } => GraphError::Parse { line: line_no, message },
                other => other,
            })?;
        }
        b.build()
    }

    /// Writes the graph back out as TSV in triple-id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_name(t.head),
                self.relation_name(t.relation),
                self.entity_name(t.tail)
            )?;
        }
        Ok(())
    }

    /// Same structure, new names. Name vectors must match the id spaces.
    pub(crate) fn with_names(
        &self,
        entity_names: Vec<String>,
        relation_names: Vec<String>,
    ) -> Result<Self, GraphError> {
        assert_eq!(entity_names.len(), self.entity_names.len());
        assert_eq!(relation_names.len(), self.relation_names.len());
        let mut entity_lookup = HashMap::with_capacity(entity_names.len());
        for (i, n) in entity_names.iter().enumerate() {
            check_name(n, None)?;
            if entity_lookup.insert(n.clone(), EntityId::from_index(i)).is_some() {
                return Err(GraphError::AliasCollision {
                    alias: n.clone(),
                    first: n.clone(),
                    second: n.clone(),
                });
            }
        }
        let mut relation_lookup = HashMap::with_capacity(relation_names.len());
        for (i, n) in relation_names.iter().enumerate() {
            check_name(n, None)?;
            if relation_lookup.insert(n.clone(), RelationId::from_index(i)).is_some() {
                return Err(GraphError::AliasCollision {
                    alias: n.clone(),
                    first: n.clone(),
                    second: n.clone(),
                });
            }
        }
        Ok(Self {
            entity_names,
            entity_lookup,
            relation_names,
            relation_lookup,
            ..self.clone()
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entity_count()).map(EntityId::from_index)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relation_count()).map(RelationId::from_index)
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        e.index() < self.entity_names.len()
    }

    pub fn check_entity(&self, e: EntityId) -> Result<(), GraphError> {
        if self.contains_entity(e) {
            Ok(())
        } else {
            Err(GraphError::UnknownEntityId(e))
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<(), GraphError> {
        if r.index() < self.relation_names.len() {
            Ok(())
        } else {
            Err(GraphError::UnknownRelationId(r))
        }
    }

    /// Panics if `e` does not belong to this graph.
    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entity_names[e.index()]
    }

    /// Panics if `r` does not belong to this graph.
    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relation_names[r.index()]
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_lookup.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_lookup.get(name).copied()
    }

    pub fn resolve_entity(&self, name: &str) -> Result<EntityId, GraphError> {
        self.entity_id(name)
            .ok_or_else(|| GraphError::UnknownEntity(name.to_owned()))
    }

    pub fn resolve_entities<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<EntityId>, GraphError> {
        names.iter().map(|n| self.resolve_entity(n.as_ref())).collect()
    }

    pub fn triple(&self, id: TripleId) -> Triple {
        self.triples[id.index()]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn find_triple(&self, head: EntityId, relation: RelationId, tail: EntityId) -> Option<TripleId> {
        self.triple_lookup.get(&Triple::new(head, relation, tail)).copied()
    }

    #[inline]
    pub fn neighbors(&self, e: EntityId) -> &[Adjacent] {
        &self.adjacency[self.offsets[e.index()]..self.offsets[e.index() + 1]]
    }

    /// Undirected degree; a self-loop counts once.
    #[inline]
    pub fn degree(&self, e: EntityId) -> usize {
        self.offsets[e.index() + 1] - self.offsets[e.index()]
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of stored triples carrying relation `r`.
    pub fn relation_frequency(&self, r: RelationId) -> usize {
        self.relation_freq[r.index()]
    }

    /// `log(1 + deg(e))`, natural logarithm.
    pub fn hub_penalty<T: Scalar>(&self, e: EntityId) -> Result<T, GraphError> {
        self.check_entity(e)?;
        Ok(hub_penalty_for_degree(self.degree(e)))
    }

    pub fn hub_penalty_max<T: Scalar>(&self) -> T {
        hub_penalty_for_degree(self.max_degree)
    }

    /// `log(|T| / freq(r))`, natural logarithm.
    pub fn idf<T: Scalar>(&self, r: RelationId) -> Result<T, GraphError> {
        self.check_relation(r)?;
        let freq = self.relation_freq[r.index()];
        if freq == 0 {
            return Err(GraphError::UnusedRelation(r));
        }
        Ok(idf_for_frequency(self.triple_count(), freq))
    }

    pub fn idf_max<T: Scalar>(&self) -> T {
        idf_for_frequency(self.triple_count(), self.min_relation_freq)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            entities: self.entity_count(),
            relations: self.relation_count(),
            triples: self.triple_count(),
            max_degree: self.max_degree,
            hub_penalty_max: self.hub_penalty_max(),
            idf_max: self.idf_max(),
        }
    }

    /// Exact undirected distances of every entity within `k` hops of `source`.
    pub fn bounded_bfs(&self, source: EntityId, k: usize) -> Result<BTreeMap<EntityId, usize>, GraphError> {
        self.check_entity(source)?;
        Ok(self.ball(source, k).into_iter().collect())
    }

    /// Truncated BFS returning `(entity, distance)` in discovery order.
    pub fn ball(&self, source: EntityId, k: usize) -> Vec<(EntityId, usize)> {
        let mut seen = HashMap::new();
        seen.insert(source, 0usize);
        let mut order = vec![(source, 0)];
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = seen[&u];
            if du == k {
                continue;
            }
            for adj in self.neighbors(u) {
                if let Entry::Vacant(slot) = seen.entry(adj.neighbor) {
                    slot.insert(du + 1);
                    order.push((adj.neighbor, du + 1));
                    queue.push_back(adj.neighbor);
                }
            }
        }
        order
    }
}

/// `log(1 + degree)`.
pub fn hub_penalty_for_degree<T: Scalar>(degree: usize) -> T {
    (T::one() + T::of_usize(degree)).ln()
}

/// `log(triples / frequency)`; zero frequency yields zero.
pub fn idf_for_frequency<T: Scalar>(triples: usize, frequency: usize) -> T {
    if frequency == 0 {
        return T::zero();
    }
    (T::of_usize(triples) / T::of_usize(frequency)).ln()
}

fn read_text(path: &Path) -> Result<String, GraphError> {
    let bytes = fs::read(path).map_err(|source| GraphError::Io {
        path: path.to_owned(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| GraphError::Parse {
        line: 0,
        message: format!("{} is not valid UTF-8: {e}", path.display()),
    })
}

/// Reads a two-column `raw<TAB>name` alias file.
pub fn read_aliases(path: &Path, delimiter: char) -> Result<HashMap<String, String>, GraphError> {
    let text = read_text(path)?;
    let mut map = HashMap::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let Some((from, to)) = line.split_once(delimiter) else {
            return Err(GraphError::Parse {
                line: i + 1,
                message: format!("{}: expected 2 fields", path.display()),
            });
        };
        let (from, to) = (from.trim(), to.trim());
        if from.is_empty() || to.is_empty() || to.contains(delimiter) {
            return Err(GraphError::Parse {
                line: i + 1,
                message: format!("{}: expected 2 nonempty fields", path.display()),
            });
        }
        map.insert(from.to_owned(), to.to_owned());
    }
    Ok(map)
}

fn substitute<'a>(
    raw: &'a str,
    aliases: Option<&'a HashMap<String, String>>,
    origin: &mut HashMap<String, String>,
) -> Result<&'a str, GraphError> {
    let Some(aliases) = aliases else {
        return Ok(raw);
    };
    let name = aliases.get(raw).map(String::as_str).unwrap_or(raw);
    match origin.entry(name.to_owned()) {
        Entry::Occupied(e) if e.get() != raw => Err(GraphError::AliasCollision {
            alias: name.to_owned(),
            first: e.get().clone(),
            second: raw.to_owned(),
        }),
        Entry::Occupied(_) => Ok(name),
        Entry::Vacant(e) => {
            e.insert(raw.to_owned());
            Ok(name)
        }
    }
}
