mod serve;

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgrel::answer::{build_prompt, format_answer, textualize};
use kgrel::eval::{subgraph_f1, EvalAccumulator, QueryRow};
use kgrel::grpo::{argmax, train};
use kgrel::oracle::{best_index, enumerate_candidates, optimal_answer, EnumerationLimits};
use kgrel::querygen::{anonymize, generate_benchmark, BenchmarkConfig, QueryRecord, Split, TemplateSet};
use kgrel::service::{score_answer_text, GraphEntry};
use kgrel::{
    retrieve, EntityId, GrpoConfig64, KnowledgeGraph, LoadOptions, ParseOptions, PruneConfig64, RewardConfig64,
    Subgraph,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "kgrel",
    version,
    about = "Relation-centric question answering over knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a triple file and print its statistics.
    LoadCheck(GraphArgs),
    /// Retrieve and prune the subgraph around a set of seeds.
    Retrieve(RetrieveArgs),
    /// Print the node/edge tables (or the full prompt) for a retrieval.
    Textualize(TextualizeArgs),
    /// Score one answer block against a set of seeds.
    Score(ScoreArgs),
    /// Exhaustively search the retrieved subgraph for the best answer.
    Oracle(OracleArgs),
    /// Generate a query benchmark as JSON lines.
    GenQueries(GenQueriesArgs),
    /// Replace a fraction of entity and relation names with opaque ids.
    Anonymize(AnonymizeArgs),
    /// Evaluate a file of answers against a benchmark.
    Eval(EvalArgs),
    /// Train a softmax policy over oracle candidates with GRPO.
    GrpoDemo(GrpoArgs),
    /// Run the line-delimited scoring service.
    Serve(serve::ServeArgs),
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Triple file, one `head<TAB>relation<TAB>tail` per line.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = '\t')]
    delimiter: char,
    /// Two-column file mapping raw entity ids to names.
    #[arg(long)]
    entity_aliases: Option<PathBuf>,
    /// Two-column file mapping raw relation ids to names.
    #[arg(long)]
    relation_aliases: Option<PathBuf>,
}

impl GraphArgs {
    fn load(&self) -> Result<KnowledgeGraph> {
        let opts = LoadOptions {
            delimiter: self.delimiter,
            entity_aliases: self.entity_aliases.clone(),
            relation_aliases: self.relation_aliases.clone(),
        };
        KnowledgeGraph::load_tsv(&self.graph, &opts).with_context(|| format!("loading {}", self.graph.display()))
    }
}

#[derive(Args, Clone)]
struct SeedArgs {
    /// Comma-separated seed names.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<String>,
    /// One seed name; repeat for names that contain commas.
    #[arg(long = "seed-name")]
    seed_names: Vec<String>,
}

impl SeedArgs {
    fn names(&self) -> Vec<String> {
        self.seeds
            .iter()
            .chain(&self.seed_names)
            .map(|s| s.trim().to_owned())
            .collect()
    }

    fn resolve(&self, g: &KnowledgeGraph) -> Result<Vec<EntityId>> {
        let names = self.names();
        if names.is_empty() {
            bail!("no seeds given; use --seeds or --seed-name");
        }
        Ok(g.resolve_entities(&names)?)
    }
}

#[derive(Args, Clone)]
struct PruneArgs {
    /// Hop bound of the seed neighbourhoods.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Node budget of the pruned subgraph.
    #[arg(long, default_value_t = 24)]
    budget: usize,
    #[arg(long)]
    rho_init: Option<f64>,
    #[arg(long)]
    rho_step: Option<f64>,
    #[arg(long, default_value_t = 3)]
    s_init: usize,
}

impl PruneArgs {
    fn config(&self) -> PruneConfig64 {
        PruneConfig64 {
            k: self.k,
            rho_init: self.rho_init,
            rho_step: self.rho_step,
            s_init: self.s_init,
            node_budget: self.budget,
            ..PruneConfig64::default()
        }
    }
}

#[derive(Args, Clone)]
struct RewardArgs {
    #[arg(long, default_value_t = 7.0)]
    x: f64,
    #[arg(long, default_value_t = 6.0)]
    y: f64,
    /// Do not clamp the informativeness ratios at -1.
    #[arg(long)]
    no_clamp: bool,
}

impl RewardArgs {
    fn config(&self, g: &KnowledgeGraph) -> RewardConfig64 {
        let mut cfg = RewardConfig64::for_graph(g).with_constants(self.x, self.y);
        cfg.clamp_oversize = !self.no_clamp;
        cfg
    }
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[command(flatten)]
    prune: PruneArgs,
    /// Write the pruning trace as JSON to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TextualizeArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[command(flatten)]
    prune: PruneArgs,
    /// Print the complete prompt for this question instead of the tables.
    #[arg(long)]
    question: Option<String>,
    /// Print the complete prompt with the question rendered from a template.
    #[arg(long, conflicts_with = "question")]
    prompt: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[command(flatten)]
    reward: RewardArgs,
    /// File holding the answer text; read from stdin when absent.
    #[arg(long)]
    answer_file: Option<PathBuf>,
    /// Accept triples written in reverse direction.
    #[arg(long)]
    allow_reversed: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[command(flatten)]
    prune: PruneArgs,
    #[command(flatten)]
    reward: RewardArgs,
    /// Maximum number of candidates to enumerate.
    #[arg(long, default_value_t = 200_000)]
    cap: usize,
    /// Also write the optimal answer block to this path.
    #[arg(long)]
    block_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenQueriesArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Total number of queries.
    #[arg(long, default_value_t = 2500)]
    n: usize,
    /// Train and test counts as `TRAIN:TEST`; defaults to a 4:1 split of `--n`.
    #[arg(long)]
    split: Option<String>,
    /// Hop bound between sampled seeds.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Seeds per query (2 to 4).
    #[arg(long, default_value_t = 2)]
    entities: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnonymizeArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Fraction of entities and of relations to rename.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Renamed triple file.
    #[arg(long)]
    out: PathBuf,
    /// Two-column original-to-new name mapping.
    #[arg(long)]
    mapping: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    prune: PruneArgs,
    #[command(flatten)]
    reward: RewardArgs,
    /// Benchmark file written by `gen-queries`.
    #[arg(long)]
    benchmark: PathBuf,
    /// One answer per benchmark record: a JSON string or `{"answer": ...}`.
    #[arg(long)]
    answers: PathBuf,
    /// Only evaluate records of this split.
    #[arg(long, value_parser = ["train", "test"])]
    split: Option<String>,
    #[arg(long, default_value_t = 200_000)]
    cap: usize,
    /// Report file; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GrpoArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[command(flatten)]
    prune: PruneArgs,
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    group_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    beta: f64,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 200_000)]
    cap: usize,
    /// Write `step,expected_reward,eval_expected_reward` rows here.
    #[arg(long)]
    curve: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::LoadCheck(a) => load_check(a),
        Command::Retrieve(a) => retrieve_cmd(a),
        Command::Textualize(a) => textualize_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::GenQueries(a) => gen_queries(a),
        Command::Anonymize(a) => anonymize_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::GrpoDemo(a) => grpo_demo(a),
        Command::Serve(a) => serve::run(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn subgraph_json(sub: &Subgraph<'_>) -> serde_json::Value {
    let g = sub.graph();
    let nodes: Vec<&str> = sub.nodes().iter().map(|&e| g.entity_name(e)).collect();
    let triples: Vec<[&str; 3]> = sub
        .triples()
        .iter()
        .map(|&id| {
            let t = g.triple(id);
            [
                g.entity_name(t.head),
                g.relation_name(t.relation),
                g.entity_name(t.tail),
            ]
        })
        .collect();
    json!({ "nodes": nodes, "triples": triples })
}

fn load_check(a: GraphArgs) -> Result<()> {
    let g = a.load()?;
    print_json(&g.stats())
}

fn retrieve_cmd(a: RetrieveArgs) -> Result<()> {
    let g = a.graph.load()?;
    let seeds = a.seeds.resolve(&g)?;
    let out = retrieve(&g, &seeds, &a.prune.config())?;
    if let Some(path) = &a.trace {
        write_json(path, &out.trace)?;
    }
    if out.trace.over_budget {
        eprintln!(
            "warning: {} nodes remain above the budget of {}",
            out.trace.final_nodes, a.prune.budget
        );
    }
    let mut doc = subgraph_json(&out.subgraph);
    doc["over_budget"] = json!(out.trace.over_budget);
    print_json(&doc)
}

fn textualize_cmd(a: TextualizeArgs) -> Result<()> {
    let g = a.graph.load()?;
    let seeds = a.seeds.resolve(&g)?;
    let out = retrieve(&g, &seeds, &a.prune.config())?;
    let question = match (a.question, a.prompt) {
        (Some(q), _) => Some(q),
        (None, true) => {
            let ts = TemplateSet::default();
            let id = *ts
                .ids_for_arity(seeds.len())
                .first()
                .ok_or_else(|| anyhow!("no template takes {} entities", seeds.len()))?;
            Some(ts.render(&seeds, id, &g)?)
        }
        (None, false) => None,
    };
    let text = match question {
        Some(q) => build_prompt(&out.subgraph, &q),
        None => textualize(&out.subgraph),
    };
    print!("{text}");
    Ok(())
}

fn read_answer(path: Option<&Path>) -> Result<String> {
    let mut text = String::new();
    match path {
        Some(p) => {
            File::open(p)
                .with_context(|| format!("opening {}", p.display()))?
                .read_to_string(&mut text)?;
        }
        None => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    Ok(text)
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let g = a.graph.load()?;
    let reward = a.reward.config(&g);
    let entry = GraphEntry { graph: g, reward };
    let answer = read_answer(a.answer_file.as_deref())?;
    let opts = ParseOptions {
        allow_reversed: a.allow_reversed,
    };
    let result = score_answer_text(&entry, &a.seeds.names(), &answer, opts)?;
    print_json(&result)
}

fn oracle_cmd(a: OracleArgs) -> Result<()> {
    let g = a.graph.load()?;
    let seeds = a.seeds.resolve(&g)?;
    let out = retrieve(&g, &seeds, &a.prune.config())?;
    let cfg = a.reward.config(&g);
    let cs = enumerate_candidates(
        &out.subgraph,
        &seeds,
        EnumerationLimits::new(a.prune.budget, a.cap),
        &cfg,
    )?;
    if cs.truncated {
        eprintln!(
            "warning: candidate cap of {} reached; the optimum is approximate",
            a.cap
        );
    }
    let (best, reward) = optimal_answer(&cs)?;
    let block = format_answer(best);
    if let Some(path) = &a.block_out {
        fs::write(path, &block).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{block}");
    print_json(&json!({
        "reward": reward,
        "candidates": cs.len(),
        "truncated": cs.truncated,
    }))
}

fn parse_split(spec: &str) -> Result<(usize, usize)> {
    let (a, b) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("--split must look like TRAIN:TEST"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn gen_queries(a: GenQueriesArgs) -> Result<()> {
    let g = a.graph.load()?;
    let (n_train, n_test) = match &a.split {
        Some(s) => {
            let (tr, te) = parse_split(s)?;
            if tr + te != a.n {
                bail!("--split {tr}:{te} does not add up to --n {}", a.n);
            }
            (tr, te)
        }
        None => (a.n * 4 / 5, a.n - a.n * 4 / 5),
    };
    let cfg = BenchmarkConfig {
        n_train,
        n_test,
        k: a.k,
        entities: a.entities,
        seed: a.seed,
    };
    let queries = generate_benchmark(&g, &TemplateSet::default(), &cfg)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for q in &queries {
        serde_json::to_writer(&mut out, &QueryRecord::from_query(q, &g))?;
        writeln!(out)?;
    }
    out.flush()?;
    eprintln!("{n_train} train + {n_test} test queries");
    Ok(())
}

fn anonymize_cmd(a: AnonymizeArgs) -> Result<()> {
    let g = a.graph.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (renamed, mapping) = anonymize(&g, a.fraction, &mut rng)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    renamed.write_tsv(&mut w)?;
    w.flush()?;
    fs::write(&a.mapping, mapping.to_tsv())?;
    print_json(&renamed.stats())
}

fn read_jsonl_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

fn answer_from_line(line: &str, n: usize) -> Result<String> {
    let v: serde_json::Value = serde_json::from_str(line).with_context(|| format!("answer line {n}"))?;
    match v {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Object(mut m) => match m.remove("answer") {
            Some(serde_json::Value::String(s)) => Ok(s),
            _ => bail!("answer line {n} has no string `answer` field"),
        },
        _ => bail!("answer line {n} is neither a string nor an object"),
    }
}

#[derive(Serialize)]
struct EvalRow {
    text: String,
    reference_reward: Option<f64>,
    #[serde(flatten)]
    row: QueryRow<f64>,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let g = a.graph.load()?;
    let reward_cfg = a.reward.config(&g);
    let prune = a.prune.config();
    let wanted = a
        .split
        .as_deref()
        .map(|s| if s == "train" { Split::Train } else { Split::Test });
    let records: Vec<QueryRecord> = read_jsonl_lines(&a.benchmark)?
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("benchmark line {}", i + 1)))
        .collect::<Result<_>>()?;
    let records: Vec<QueryRecord> = records
        .into_iter()
        .filter(|r| wanted.is_none_or(|w| r.split == w))
        .collect();
    let answers = read_jsonl_lines(&a.answers)?;
    if answers.len() != records.len() {
        bail!("{} answers for {} benchmark records", answers.len(), records.len());
    }
    let entry = GraphEntry {
        graph: g,
        reward: reward_cfg,
    };
    let g = &entry.graph;
    let mut acc = EvalAccumulator::new();
    let mut rows = Vec::with_capacity(records.len());
    for (i, (rec, line)) in records.iter().zip(&answers).enumerate() {
        let seeds = g.resolve_entities(&rec.seeds)?;
        let reference = retrieve(g, &seeds, &prune)
            .map_err(anyhow::Error::from)
            .and_then(|out| {
                let cs = enumerate_candidates(
                    &out.subgraph,
                    &seeds,
                    EnumerationLimits::new(prune.node_budget, a.cap),
                    &entry.reward,
                )?;
                let (best, r) = optimal_answer(&cs)?;
                Ok((best.clone(), r.total))
            });
        let (reference, reference_reward) = match reference {
            Ok((sub, r)) => (sub, Some(r)),
            Err(e) => {
                eprintln!("warning: query {i}: no reference ({e:#}); F1 counts as 0");
                (Subgraph::empty(g), None)
            }
        };
        let answer = answer_from_line(line, i + 1)?;
        let parsed = kgrel::parse_answer(&answer, g, ParseOptions::default());
        let reward = kgrel::score(&parsed, &seeds, &entry.reward)?;
        let f1 = subgraph_f1(&parsed.grounded, &reference);
        acc.push(&reward, f1)?;
        rows.push(EvalRow {
            text: rec.text.clone(),
            reference_reward,
            row: QueryRow::new(i, &reward, f1),
        });
    }
    let report = acc.finish()?;
    eprintln!("{report}");
    let doc = json!({ "report": report, "rows": rows });
    match &a.report {
        Some(p) => write_json(p, &doc),
        None => print_json(&doc),
    }
}

fn grpo_demo(a: GrpoArgs) -> Result<()> {
    let g = a.graph.load()?;
    let seeds = a.seeds.resolve(&g)?;
    let out = retrieve(&g, &seeds, &a.prune.config())?;
    let cfg = a.reward.config(&g);
    let cs = enumerate_candidates(
        &out.subgraph,
        &seeds,
        EnumerationLimits::new(a.prune.budget, a.cap),
        &cfg,
    )?;
    let totals = cs.totals();
    let oracle = best_index(&cs.candidates, &totals).ok_or_else(|| anyhow!("no candidates"))?;
    let gcfg = GrpoConfig64 {
        group_size: a.group_size,
        beta: a.beta,
        lr: a.lr,
        alpha: a.alpha,
        steps: a.steps,
        seed: a.seed,
        ..GrpoConfig64::default()
    };
    let outcome = train(&totals, &gcfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &a.curve {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,expected_reward,eval_expected_reward")?;
        for (step, (r, e)) in outcome.reward_curve.iter().zip(&outcome.eval_curve).enumerate() {
            writeln!(w, "{step},{r},{e}")?;
        }
        w.flush()?;
    }
    let policy_argmax = argmax(&outcome.state.theta).expect("at least two candidates");
    print_json(&json!({
        "candidates": cs.len(),
        "truncated": cs.truncated,
        "oracle_index": oracle,
        "oracle_reward": totals[oracle],
        "policy_argmax": policy_argmax,
        "policy_matches_oracle": totals[policy_argmax] == totals[oracle],
        "initial_expected_reward": outcome.reward_curve[0],
        "final_expected_reward": outcome.reward_curve.last(),
        "final_eval_expected_reward": outcome.eval_curve.last(),
        "best_answer": format_answer(&cs.candidates[policy_argmax]),
    }))
}
