//! `kgrel serve`: the scoring protocol of `kgrel::service` over stdio or TCP.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use kgrel::service::{handle_line, Registry};
use kgrel::{KnowledgeGraph, LoadOptions, RewardConfig64};
use serde::Deserialize;

const POLL: Duration = Duration::from_millis(50);

#[derive(Args)]
pub struct ServeArgs {
    /// TOML file listing the graphs to load.
    #[arg(long, required_unless_present = "graph")]
    config: Option<PathBuf>,
    /// Serve a single graph instead of a config file.
    #[arg(long, conflicts_with = "config")]
    graph: Option<PathBuf>,
    /// Handle of the `--graph` graph.
    #[arg(long, default_value = "default", requires = "graph")]
    name: String,
    /// Listen on this TCP address instead of stdio.
    #[arg(long, env = "KGREL_LISTEN")]
    listen: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceConfig {
    listen: Option<String>,
    #[serde(default)]
    allow_reversed: bool,
    #[serde(rename = "graph")]
    graphs: Vec<GraphConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphConfig {
    name: String,
    path: PathBuf,
    #[serde(default = "tab")]
    delimiter: char,
    entity_aliases: Option<PathBuf>,
    relation_aliases: Option<PathBuf>,
    x: Option<f64>,
    y: Option<f64>,
    #[serde(default = "yes")]
    clamp: bool,
}

fn tab() -> char {
    '\t'
}

fn yes() -> bool {
    true
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

fn load_config(path: &Path) -> Result<(Registry, Option<String>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ServiceConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if cfg.graphs.is_empty() {
        bail!("{} lists no [[graph]] entries", path.display());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut registry = Registry::new();
    registry.parse.allow_reversed = cfg.allow_reversed;
    for gc in cfg.graphs {
        let opts = LoadOptions {
            delimiter: gc.delimiter,
            entity_aliases: gc.entity_aliases.map(|p| resolve(base, &p)),
            relation_aliases: gc.relation_aliases.map(|p| resolve(base, &p)),
        };
        let file = resolve(base, &gc.path);
        let g = KnowledgeGraph::load_tsv(&file, &opts).with_context(|| format!("loading {}", file.display()))?;
        let mut reward = RewardConfig64::for_graph(&g);
        reward.x = gc.x.unwrap_or(reward.x);
        reward.y = gc.y.unwrap_or(reward.y);
        reward.clamp_oversize = gc.clamp;
        reward.validate().with_context(|| format!("graph {:?}", gc.name))?;
        eprintln!("loaded graph {:?}: {} triples", gc.name, g.triple_count());
        registry.insert(&gc.name, g, reward);
    }
    Ok((registry, cfg.listen))
}

/// Answers lines from `rx` until the sender hangs up or `stop` is set; lines
/// already received when `stop` is seen are still answered.
fn pump<W: Write>(registry: &Registry, rx: Receiver<String>, mut out: W, stop: &AtomicBool) -> io::Result<()> {
    let answer = |line: String, out: &mut W| -> io::Result<()> {
        if line.trim().is_empty() {
            return Ok(());
        }
        serde_json::to_writer(&mut *out, &handle_line(registry, &line))?;
        out.write_all(b"\n")?;
        out.flush()
    };
    loop {
        match rx.recv_timeout(POLL) {
            Ok(line) => answer(line, &mut out)?,
            Err(RecvTimeoutError::Timeout) if stop.load(Ordering::SeqCst) => break,
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        }
    }
    while let Ok(line) = rx.try_recv() {
        answer(line, &mut out)?;
    }
    Ok(())
}

fn spawn_reader<R: BufRead + Send + 'static>(input: R) -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in input.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

fn serve_connection(registry: &Registry, stream: TcpStream, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let rx = spawn_reader(BufReader::new(stream.try_clone()?));
    pump(registry, rx, BufWriter::new(stream), stop)
}

fn serve_tcp(registry: Arc<Registry>, addr: &str, stop: Arc<AtomicBool>) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    listener.set_nonblocking(true)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let registry = Arc::clone(&registry);
                let stop = Arc::clone(&stop);
                workers.push(thread::spawn(move || {
                    if let Err(e) = serve_connection(&registry, stream, &stop) {
                        eprintln!("connection {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => return Err(e.into()),
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

pub fn run(a: ServeArgs) -> Result<()> {
    let (registry, config_listen) = match (&a.config, &a.graph) {
        (Some(path), _) => load_config(path)?,
        (None, Some(graph)) => {
            let g = KnowledgeGraph::load_tsv(graph, &LoadOptions::default())
                .with_context(|| format!("loading {}", graph.display()))?;
            (Registry::single(&a.name, g), None)
        }
        (None, None) => bail!("either --config or --graph is required"),
    };
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, Arc::clone(&stop))?;
    }
    let registry = Arc::new(registry);
    match a.listen.or(config_listen) {
        Some(addr) => serve_tcp(registry, &addr, stop)?,
        None => {
            let rx = spawn_reader(BufReader::new(io::stdin()));
            pump(&registry, rx, BufWriter::new(io::stdout().lock()), &stop)?;
        }
    }
    eprintln!("shutting down");
    Ok(())
}
