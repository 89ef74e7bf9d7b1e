//! Text formats exchanged with a language model: the node/edge table context
//! and the strict `GRAPH:` ... `END` answer block.
//!
//! Answer block grammar (after trimming surrounding whitespace):
//!
//! ```text
//! block   = "GRAPH:" LF *(triple LF) "END"
//! triple  = "(" DQUOTE name DQUOTE "|" rel "|" DQUOTE name DQUOTE ")"
//! name    = 1*(any char except DQUOTE, LF)
//! rel     = 1*(any char except "|", DQUOTE, LF)
//! ```

use std::collections::BTreeSet;

use thiserror::Error;

use crate::graph::{EntityId, KnowledgeGraph, TripleId};
use crate::subgraph::Subgraph;

pub const NODE_HEADER: &str = "node_id, node_attr";
pub const EDGE_HEADER: &str = "src, edge_attr, dst";
pub const BLOCK_START: &str = "GRAPH:";
pub const BLOCK_END: &str = "END";

/// Node table, blank line, edge table. Nodes are numbered `1..=n` in
/// ascending entity-id order; edges follow ascending triple id.
pub fn textualize(sub: &Subgraph<'_>) -> String {
    let g = sub.graph();
    let mut out = String::new();
    out.push_str(NODE_HEADER);
    out.push('\n');
    let nodes: Vec<EntityId> = sub.nodes().iter().copied().collect();
    for (i, &e) in nodes.iter().enumerate() {
        out.push_str(&format!("{}, {}\n", i + 1, g.entity_name(e)));
    }
    out.push('\n');
    out.push_str(EDGE_HEADER);
    out.push('\n');
    for &id in sub.triples() {
        let t = g.triple(id);
        let src = nodes.binary_search(&t.head).expect("triple endpoint is a node") + 1;
        let dst = nodes.binary_search(&t.tail).expect("triple endpoint is a node") + 1;
        out.push_str(&format!("{src}, {}, {dst}\n", g.relation_name(t.relation)));
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {name:?} is not in the graph")]
    Unknown { line: usize, name: String },
}

/// Inverse of [`textualize`]: resolves the tables back against `g`.
pub fn parse_tables<'g>(text: &str, g: &'g KnowledgeGraph) -> Result<Subgraph<'g>, TableError> {
    let malformed = |line: usize, message: &str| TableError::Malformed {
        line,
        message: message.to_owned(),
    };
    let lines: Vec<&str> = text.strip_suffix('\n').unwrap_or(text).split('\n').collect();
    if lines.first() != Some(&NODE_HEADER) {
        return Err(malformed(1, "missing node table header"));
    }
    let mut local: Vec<EntityId> = Vec::new();
    let mut i = 1;
    while i < lines.len() && !lines[i].is_empty() {
        let (id, name) = lines[i]
            .split_once(", ")
            .ok_or_else(|| malformed(i + 1, "expected `id, name`"))?;
        if id.parse::<usize>().ok() != Some(local.len() + 1) {
            return Err(malformed(i + 1, "node ids must count up from 1"));
        }
        let e = g.entity_id(name).ok_or_else(|| TableError::Unknown {
            line: i + 1,
            name: name.to_owned(),
        })?;
        local.push(e);
        i += 1;
    }
    i += 1;
    if lines.get(i) != Some(&EDGE_HEADER) {
        return Err(malformed(i + 1, "missing edge table header"));
    }
    i += 1;
    let mut triples = BTreeSet::new();
    for (offset, line) in lines[i..].iter().enumerate() {
        let line_no = i + offset + 1;
        let (src, rest) = line
            .split_once(", ")
            .ok_or_else(|| malformed(line_no, "expected `src, rel, dst`"))?;
        let (rel, dst) = rest
            .rsplit_once(", ")
            .ok_or_else(|| malformed(line_no, "expected `src, rel, dst`"))?;
        let node = |s: &str| -> Result<EntityId, TableError> {
            s.parse::<usize>()
                .ok()
                .and_then(|n| n.checked_sub(1))
                .and_then(|n| local.get(n).copied())
                .ok_or_else(|| malformed(line_no, "edge references an unknown node id"))
        };
        let (h, t) = (node(src)?, node(dst)?);
        let r = g.relation_id(rel).ok_or_else(|| TableError::Unknown {
            line: line_no,
            name: rel.to_owned(),
        })?;
        let id = g
            .find_triple(h, r, t)
            .ok_or_else(|| malformed(line_no, "edge is not stored in the graph"))?;
        triples.insert(id);
    }
    Subgraph::new(g, local, triples).map_err(|e| malformed(0, &e.to_string()))
}

/// Renders `sub`'s triples as an answer block, in triple-id order.
pub fn format_answer(sub: &Subgraph<'_>) -> String {
    let g = sub.graph();
    let mut out = String::from(BLOCK_START);
    out.push('\n');
    for &id in sub.triples() {
        let t = g.triple(id);
        out.push_str(&format!(
            "(\"{}\"|{}|\"{}\")\n",
            g.entity_name(t.head),
            g.relation_name(t.relation),
            g.entity_name(t.tail)
        ));
    }
    out.push_str(BLOCK_END);
    out
}

/// Full instruction prompt around a textualized subgraph and a question.
pub fn build_prompt(sub: &Subgraph<'_>, question: &str) -> String {
    format!(
        "You are given a directed graph as two CSV-like sections in this order:

1) Node table (header included):
{NODE_HEADER}

2) Edge table (header included):
{EDGE_HEADER}

Task
- Use ONLY edges from the Edge table to answer the question by outputting
  a path.
- When printing each edge, replace IDs with the exact node_attr from the
  Node table.
- Output MUST be text triples, not numeric IDs.

Output format (STRICT \u{2014} no extra text):
GRAPH:
(\"subject\"|predicate|\"object\")
...
END

Rules
- Use only listed edges; do NOT invent edges.
- Map IDs \u{2192} node_attr; preserve node_attr exactly.
- Output NOTHING outside the SUBGRAPH block.
- If no subgraph exists, output exactly:
GRAPH:
END

Graph:
{}
Question: {question}

Your output must be ONLY the SUBGRAPH block.
",
        textualize(sub)
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Ground `(s|p|o)` against a stored `(o, p, s)` when the forward
    /// direction is missing.
    pub allow_reversed: bool,
}

/// Outcome of parsing and grounding one model answer.
#[derive(Clone, Debug)]
pub struct ParsedAnswer<'g> {
    pub format_ok: bool,
    pub raw_triples: Vec<RawTriple>,
    pub grounded: Subgraph<'g>,
    pub ungrounded: Vec<RawTriple>,
}

impl<'g> ParsedAnswer<'g> {
    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.grounded.graph()
    }

    /// Grounded answer built directly from a subgraph, bypassing text.
    pub fn from_subgraph(sub: Subgraph<'g>) -> Self {
        let g = sub.graph();
        let raw_triples = sub
            .triples()
            .iter()
            .map(|&id| {
                let t = g.triple(id);
                RawTriple {
                    subject: g.entity_name(t.head).to_owned(),
                    predicate: g.relation_name(t.relation).to_owned(),
                    object: g.entity_name(t.tail).to_owned(),
                }
            })
            .collect();
        Self {
            format_ok: true,
            raw_triples,
            grounded: Subgraph::from_triples(g, sub.triples().iter().copied()).expect("triples from a subgraph"),
            ungrounded: Vec::new(),
        }
    }

    fn format_failure(g: &'g KnowledgeGraph) -> Self {
        Self {
            format_ok: false,
            raw_triples: Vec::new(),
            grounded: Subgraph::empty(g),
            ungrounded: Vec::new(),
        }
    }
}

fn parse_triple_line(line: &str) -> Option<RawTriple> {
    let inner = line.strip_prefix("(\"")?.strip_suffix("\")")?;
    let (subject, rest) = inner.split_once("\"|")?;
    let (predicate, object) = rest.split_once("|\"")?;
    let ok_name = |s: &str| !s.is_empty() && !s.contains('"');
    if !ok_name(subject) || !ok_name(object) || predicate.is_empty() || predicate.contains(['|', '"']) {
        return None;
    }
    Some(RawTriple {
        subject: subject.to_owned(),
        predicate: predicate.to_owned(),
        object: object.to_owned(),
    })
}

/// Strict block syntax check; `None` when the text is not a valid block.
pub fn parse_block(text: &str) -> Option<Vec<RawTriple>> {
    let lines: Vec<&str> = text.trim().split('\n').collect();
    if lines.len() < 2 || lines[0] != BLOCK_START || lines[lines.len() - 1] != BLOCK_END {
        return None;
    }
    lines[1..lines.len() - 1].iter().map(|l| parse_triple_line(l)).collect()
}

/// Parses and grounds a raw model answer. Never fails: malformed input comes
/// back with `format_ok == false`.
pub fn parse_answer<'g>(text: &str, g: &'g KnowledgeGraph, opts: ParseOptions) -> ParsedAnswer<'g> {
    let Some(raw_triples) = parse_block(text) else {
        return ParsedAnswer::format_failure(g);
    };
    let mut grounded: BTreeSet<TripleId> = BTreeSet::new();
    let mut ungrounded = Vec::new();
    for raw in &raw_triples {
        match ground(raw, g, opts) {
            Some(id) => {
                grounded.insert(id);
            }
            None => ungrounded.push(raw.clone()),
        }
    }
    ParsedAnswer {
        format_ok: true,
        grounded: Subgraph::from_triples(g, grounded).expect("grounded ids come from the graph"),
        raw_triples,
        ungrounded,
    }
}

/// Byte-level entry point; invalid UTF-8 is a format failure.
pub fn parse_answer_bytes<'g>(bytes: &[u8], g: &'g KnowledgeGraph, opts: ParseOptions) -> ParsedAnswer<'g> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_answer(text, g, opts),
        Err(_) => ParsedAnswer::format_failure(g),
    }
}

fn ground(raw: &RawTriple, g: &KnowledgeGraph, opts: ParseOptions) -> Option<TripleId> {
    let h = g.entity_id(&raw.subject)?;
    let r = g.relation_id(&raw.predicate)?;
    let t = g.entity_id(&raw.object)?;
    g.find_triple(h, r, t)
        .or_else(|| opts.allow_reversed.then(|| g.find_triple(t, r, h)).flatten())
}
