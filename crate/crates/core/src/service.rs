//! Line-delimited JSON scoring protocol.
//!
//! Each input line is one [`ScoreRequest`]; each yields exactly one
//! [`ScoreResponse`] line, in request order. Requests name a graph by handle,
//! the query's seed entities by name, and carry either one `answer` or a
//! batch of `answers` for one query.
//!
//! ```text
//! -> {"id":1,"graph":"toy","seeds":["a","c"],"answer":"GRAPH:\n(\"a\"|r|\"b\")\n(\"b\"|r|\"c\")\nEND"}
//! <- {"id":1,"ok":true,"result":{"r_fmt":1,...,"grounded":2,"ungrounded":0}}
//! -> {"id":2,"graph":"toy","seeds":["a","c"],"answers":[]}
//! <- {"id":2,"ok":true,"results":[]}
//! -> not json
//! <- {"id":null,"ok":false,"error":{"code":"malformed_request","message":"..."}}
//! ```

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::answer::{parse_answer, ParseOptions};
use crate::graph::KnowledgeGraph;
use crate::verifier::{score, RewardBreakdown, RewardConfig, VerifierError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("unknown graph handle {0:?}")]
    UnknownGraph(String),
    #[error("request names no graph and {0} graphs are loaded")]
    MissingGraph(usize),
    #[error("unknown seed entity {0:?}")]
    UnknownSeed(String),
    #[error("exactly one of `answer` and `answers` is required")]
    AnswerShape,
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed(_) => "malformed_request",
            Self::UnknownGraph(_) => "unknown_graph",
            Self::MissingGraph(_) => "missing_graph",
            Self::UnknownSeed(_) => "unknown_seed",
            Self::AnswerShape => "bad_answer_field",
            Self::Verifier(_) => "invalid_seeds",
        }
    }
}

/// A loaded graph with the reward configuration used to score against it.
#[derive(Debug)]
pub struct GraphEntry {
    pub graph: KnowledgeGraph,
    pub reward: RewardConfig<f64>,
}

/// Graphs addressable by handle.
#[derive(Debug, Default)]
pub struct Registry {
    graphs: BTreeMap<String, GraphEntry>,
    pub parse: ParseOptions,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(name: &str, graph: KnowledgeGraph) -> Self {
        let mut r = Self::new();
        r.insert_default(name, graph);
        r
    }

    pub fn insert(&mut self, name: &str, graph: KnowledgeGraph, reward: RewardConfig<f64>) {
        self.graphs.insert(name.to_owned(), GraphEntry { graph, reward });
    }

    /// Inserts with the default reward constants for `graph`.
    pub fn insert_default(&mut self, name: &str, graph: KnowledgeGraph) {
        let reward = RewardConfig::for_graph(&graph);
        self.insert(name, graph, reward);
    }

    pub fn handles(&self) -> impl Iterator<Item = &str> {
        self.graphs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Looks up `handle`, or the only graph when `handle` is absent.
    pub fn get(&self, handle: Option<&str>) -> Result<&GraphEntry, ServiceError> {
        match handle {
            Some(h) => self
                .graphs
                .get(h)
                .ok_or_else(|| ServiceError::UnknownGraph(h.to_owned())),
            None if self.graphs.len() == 1 => Ok(self.graphs.values().next().unwrap()),
            None => Err(ServiceError::MissingGraph(self.graphs.len())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    #[serde(default)]
    pub id: Value,
    #[serde(default)]
    pub graph: Option<String>,
    pub seeds: Vec<String>,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub answers: Option<Vec<String>>,
}

/// Reward breakdown plus grounding counts for one answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    #[serde(flatten)]
    pub reward: RewardBreakdown<f64>,
    pub grounded: usize,
    pub ungrounded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: Value,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub result: Option<ScoreResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub results: Option<Vec<ScoreResult>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorBody>,
}

impl ScoreResponse {
    fn failure(id: Value, err: &ServiceError) -> Self {
        Self {
            id,
            ok: false,
            result: None,
            results: None,
            error: Some(ErrorBody {
                code: err.code().to_owned(),
                message: err.to_string(),
            }),
        }
    }
}

/// The single scoring path shared by the command line and the service.
pub fn score_answer_text(
    entry: &GraphEntry,
    seeds: &[String],
    answer: &str,
    opts: ParseOptions,
) -> Result<ScoreResult, ServiceError> {
    let g = &entry.graph;
    let ids = seeds
        .iter()
        .map(|s| g.entity_id(s).ok_or_else(|| ServiceError::UnknownSeed(s.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let parsed = parse_answer(answer, g, opts);
    let reward = score(&parsed, &ids, &entry.reward)?;
    Ok(ScoreResult {
        reward,
        grounded: parsed.grounded.triple_count(),
        ungrounded: parsed.ungrounded.len(),
    })
}

fn answer_request(registry: &Registry, req: &ScoreRequest) -> Result<ScoreResponse, ServiceError> {
    let entry = registry.get(req.graph.as_deref())?;
    let (result, results) = match (&req.answer, &req.answers) {
        (Some(a), None) => (Some(score_answer_text(entry, &req.seeds, a, registry.parse)?), None),
        (None, Some(batch)) => {
            let scored = batch
                .iter()
                .map(|a| score_answer_text(entry, &req.seeds, a, registry.parse))
                .collect::<Result<Vec<_>, _>>()?;
            (None, Some(scored))
        }
        _ => return Err(ServiceError::AnswerShape),
    };
    Ok(ScoreResponse {
        id: req.id.clone(),
        ok: true,
        result,
        results,
        error: None,
    })
}

/// Answers one request line. Never fails: errors become error responses.
pub fn handle_line(registry: &Registry, line: &str) -> ScoreResponse {
    let req: ScoreRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            // Echo the id back when the line is JSON with an id field.
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").cloned())
                .unwrap_or(Value::Null);
            return ScoreResponse::failure(id, &ServiceError::Malformed(e.to_string()));
        }
    };
    answer_request(registry, &req).unwrap_or_else(|e| ScoreResponse::failure(req.id.clone(), &e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: usize,
    pub errors: usize,
}

/// Serves requests from `input` until end of input or until `stop` is set.
/// Blank lines are skipped. Every response is flushed before the next line
/// is read.
pub fn serve<R: BufRead, W: Write>(
    registry: &Registry,
    input: R,
    mut output: W,
    stop: &AtomicBool,
) -> io::Result<ServeStats> {
    let mut stats = ServeStats::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(registry, &line);
        stats.requests += 1;
        stats.errors += usize::from(!resp.ok);
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if stop.load(Ordering::SeqCst) {
            break;
        }
    }
    Ok(stats)
}
