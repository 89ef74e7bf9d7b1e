use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use tempfile::TempDir;

const ROYALS: &str = "\
Meghan Markle\tspouse\tPrince Harry
Prince Harry\tbrother\tPrince William
Prince William\tgrandson\tQueen Elizabeth II
Prince Harry\tgrandson\tQueen Elizabeth II
Queen Elizabeth II\tgender\tFemale
Meghan Markle\tgender\tFemale
Kate Middleton\tgender\tFemale
Kate Middleton\tspouse\tPrince William
Prince Harry\tborn_in\tLondon
Prince William\tborn_in\tLondon
Queen Elizabeth II\tborn_in\tLondon
";

fn kgrel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgrel"))
}

fn fixture() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("royals.tsv");
    fs::write(&path, ROYALS).unwrap();
    (dir, path)
}

fn run_with_stdin(cmd: &mut Command, stdin: &str) -> Output {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SEEDS: &str = "Meghan Markle,Queen Elizabeth II";

#[test]
fn format_failure_scores_the_floor_and_exits_zero() {
    let (_dir, graph) = fixture();
    let out = run_with_stdin(
        kgrel().args(["score", "--graph", path_str(&graph), "--seeds", SEEDS]),
        "I think they are related through Harry.",
    );
    let v = stdout_json(&out);
    assert_eq!(v["total"], -3.0);
    assert_eq!(v["r_fmt"], -1);
    assert_eq!(v["short_circuit"], "format_fail");
}

#[test]
fn oracle_block_rescores_to_the_same_total() {
    let (dir, graph) = fixture();
    let block = dir.path().join("best.txt");
    let out = kgrel()
        .args([
            "oracle",
            "--graph",
            path_str(&graph),
            "--seeds",
            SEEDS,
            "--block-out",
            path_str(&block),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(text.starts_with("GRAPH:\n"));
    let scored = kgrel()
        .args([
            "score",
            "--graph",
            path_str(&graph),
            "--seeds",
            SEEDS,
            "--answer-file",
            path_str(&block),
        ])
        .output()
        .unwrap();
    let v = stdout_json(&scored);
    assert_eq!(v["total"], summary["reward"]["total"]);
    assert_eq!(v["connected_seeds"], 2);
}

#[test]
fn seed_names_with_commas_can_be_given_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.tsv");
    fs::write(&graph, "Windsor, House of\tmember\tCharles\nCharles\tchild\tWilliam\n").unwrap();
    let out = run_with_stdin(
        kgrel().args([
            "score",
            "--graph",
            path_str(&graph),
            "--seed-name",
            "Windsor, House of",
            "--seed-name",
            "William",
        ]),
        "GRAPH:\n(\"Windsor, House of\"|member|\"Charles\")\n(\"Charles\"|child|\"William\")\nEND",
    );
    assert_eq!(stdout_json(&out)["connected_seeds"], 2);
}

#[test]
fn retrieve_textualize_and_load_check() {
    let (dir, graph) = fixture();
    let trace = dir.path().join("trace.json");
    let out = kgrel()
        .args([
            "retrieve",
            "--graph",
            path_str(&graph),
            "--seeds",
            SEEDS,
            "--trace",
            path_str(&trace),
        ])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    let nodes: Vec<&str> = v["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n.as_str().unwrap())
        .collect();
    assert!(nodes.contains(&"Meghan Markle") && nodes.contains(&"Queen Elizabeth II"));
    let trace: Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(trace["stages"].as_array().is_some_and(|s| !s.is_empty()));

    let out = kgrel()
        .args([
            "textualize",
            "--graph",
            path_str(&graph),
            "--seeds",
            SEEDS,
            "--question",
            "How are they associated?",
        ])
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("node_id, node_attr") && text.contains("Question: How are they associated?"));

    let out = kgrel()
        .args(["load-check", "--graph", path_str(&graph)])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["triples"], 11);
}

fn ladder_graph(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("ladder.tsv");
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!("n{i}\tr{}\tn{}\n", i % 7, i + 1));
        text.push_str(&format!("n{i}\tq{}\tm{}\n", i % 5, i / 3));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn gen_queries_honours_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let graph = ladder_graph(dir.path(), 600);
    let bench = dir.path().join("bench.jsonl");
    let out = kgrel()
        .args([
            "gen-queries",
            "--graph",
            path_str(&graph),
            "--n",
            "2500",
            "--split",
            "2000:500",
            "--seed",
            "3",
        ])
        .args(["--out", path_str(&bench)])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: Vec<Value> = fs::read_to_string(&bench)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2500);
    assert_eq!(records.iter().filter(|r| r["split"] == "train").count(), 2000);
    assert_eq!(records.iter().filter(|r| r["split"] == "test").count(), 500);

    let again = dir.path().join("again.jsonl");
    kgrel()
        .args([
            "gen-queries",
            "--graph",
            path_str(&graph),
            "--n",
            "2500",
            "--split",
            "2000:500",
            "--seed",
            "3",
        ])
        .args(["--out", path_str(&again)])
        .output()
        .unwrap();
    assert_eq!(fs::read(&bench).unwrap(), fs::read(&again).unwrap());

    let bad = kgrel()
        .args([
            "gen-queries",
            "--graph",
            path_str(&graph),
            "--n",
            "10",
            "--split",
            "3:3",
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_reports_a_floor_row_for_unusable_answers() {
    let dir = tempfile::tempdir().unwrap();
    let graph = ladder_graph(dir.path(), 60);
    let bench = dir.path().join("bench.jsonl");
    let out = kgrel()
        .args([
            "gen-queries",
            "--graph",
            path_str(&graph),
            "--n",
            "5",
            "--split",
            "5:0",
            "--out",
            path_str(&bench),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let answers = dir.path().join("answers.jsonl");
    fs::write(&answers, "\"no idea\"\n".repeat(5)).unwrap();
    let report = dir.path().join("report.json");
    let out = kgrel()
        .args(["eval", "--graph", path_str(&graph), "--benchmark", path_str(&bench)])
        .args(["--answers", path_str(&answers), "--report", path_str(&report)])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["report"]["avg_reward"], -3.0);
    assert_eq!(v["report"]["format_pct"], 0.0);
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn anonymize_writes_graph_and_mapping() {
    let (dir, graph) = fixture();
    let renamed = dir.path().join("anon.tsv");
    let mapping = dir.path().join("map.tsv");
    let out = kgrel()
        .args([
            "anonymize",
            "--graph",
            path_str(&graph),
            "--out",
            path_str(&renamed),
            "--mapping",
            path_str(&mapping),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(&renamed).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(!text.contains("Meghan"));
    let map = fs::read_to_string(&mapping).unwrap();
    assert!(map.lines().any(|l| l.starts_with("Meghan Markle\tENT")));
}

#[test]
fn grpo_demo_writes_a_curve() {
    let (dir, graph) = fixture();
    let curve = dir.path().join("curve.csv");
    let out = kgrel()
        .args([
            "grpo-demo",
            "--graph",
            path_str(&graph),
            "--seeds",
            SEEDS,
            "--steps",
            "50",
            "--curve",
            path_str(&curve),
        ])
        .args(["--rho-init", "100"])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert!(v.is_object());
    let csv = fs::read_to_string(&curve).unwrap();
    assert_eq!(csv.lines().next(), Some("step,expected_reward,eval_expected_reward"));
    assert_eq!(csv.lines().count(), 52);
}

#[test]
fn usage_errors_exit_two_and_operational_errors_exit_one() {
    let out = kgrel().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = kgrel().args(["score", "--seeds", "a,b"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = kgrel()
        .args(["load-check", "--graph", "/nonexistent/graph.tsv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let (_dir, graph) = fixture();
    let out = run_with_stdin(
        kgrel().args(["score", "--graph", path_str(&graph), "--seeds", "Nobody,Prince Harry"]),
        "",
    );
    assert_eq!(out.status.code(), Some(1));
}
