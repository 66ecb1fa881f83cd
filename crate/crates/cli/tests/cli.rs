use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mtdistill"));
    c.env_remove("MTDISTILL_BACKEND_URL").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const SENTENCES: &[&str] = &[
    "The museum opens at nine.",
    "Rain is expected over the northern hills tonight.",
    "She folded the letter twice before sealing it.",
    "Trains to the coast were delayed by an hour.",
    "A quiet street can hide a very old bakery.",
    "We planted tomatoes and beans along the fence.",
    "The committee postponed its vote until spring.",
    "His grandmother still writes every recipe by hand.",
    "Few people noticed the clock had stopped.",
    "The bridge was painted green in nineteen fifty.",
    "Please leave the keys with the neighbour.",
    "Fresh snow covered the valley by morning.",
];

/// Writes a monolingual corpus and a config into `dir`.
fn setup(dir: &Path, backend: &str) -> PathBuf {
    std::fs::write(dir.join("mono.txt"), SENTENCES.join("\n") + "\n").unwrap();
    let cfg = format!(
        r#"seed = 7
jobs = 2

[corpus]
source_lang = "en-US"
target_langs = ["de-DE", "ja-JP"]
inputs = ["mono.txt"]
boundaries = [1, 8, 16]
target_size = 8

[backend]
{backend}

[distill]
n = 16
cap_per_pair = 3
k = 5
shard_size = 2
"#
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn pipeline(config: &Path, out: &Path) {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    for stage in ["ingest", "bucket", "sample", "prefilter", "distill", "filter", "emit"] {
        ok(&[stage, "--config", c, "--out", o]);
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                out.insert(e.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&e).unwrap());
            }
        }
    }
    out
}

fn shards(files: &BTreeMap<String, Vec<u8>>) -> BTreeMap<&String, &Vec<u8>> {
    files.iter().filter(|(k, _)| k.starts_with("data/")).collect()
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "kind = \"mock\"");
    pipeline(&cfg, &dir.path().join("a"));
    pipeline(&cfg, &dir.path().join("b"));
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert_eq!(a, b);
    let shard_files = shards(&a);
    assert!(shard_files.keys().any(|k| k.starts_with("data/en-US_de-DE/shard-")), "{:?}", a.keys());
    let lines: usize = shard_files.values().map(|v| v.iter().filter(|&&b| b == b'\n').count()).sum();
    assert!(lines > 0 && lines <= 6, "{lines} emitted examples");
}

struct Served(Child);

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn http_backend_against_mock_serve_matches_in_process() {
    let mut child = bin()
        .args(["mock-serve", "--addr", "127.0.0.1:0", "--seed", "7"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _guard = Served(child);
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let dir = tempfile::tempdir().unwrap();
    let local = setup(dir.path(), "kind = \"mock\"");
    pipeline(&local, &dir.path().join("local"));

    let remote_dir = dir.path().join("remote-cfg");
    std::fs::create_dir(&remote_dir).unwrap();
    let remote = setup(
        &remote_dir,
        &format!("kind = \"http\"\n\n[backend.http]\ngenerate_url = \"{url}\"\nscore_url = \"{url}\"\nconcurrency = 2"),
    );
    pipeline(&remote, &dir.path().join("remote"));

    let (l, r) = (tree(&dir.path().join("local")), tree(&dir.path().join("remote")));
    assert_eq!(shards(&l), shards(&r));
    assert_eq!(l["audit/en-US_ja-JP.jsonl"], r["audit/en-US_ja-JP.jsonl"]);
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn missing_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[corpus]\nsource_lang = \"en\"\ntarget_langs = [\"de-DE\"]\n").unwrap();
    let out = run(&["sample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "config");
    assert_eq!(err["key"], "corpus.target_size");
}

#[test]
fn unknown_key_and_missing_section_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[distill]\nn = 4\nsamples = 9\n").unwrap();
    let out = run(&["distill", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["key"], "distill.samples");

    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let out = run(&["prefilter", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["key"], "corpus");
}

#[test]
fn stage_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "kind = \"mock\"");
    // bucket before ingest: segments file is missing
    let out = run(&["bucket", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["kind"], "stage");
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "kind = \"mock\"");
    let out_dir = dir.path().join("o");
    let stdout = ok(&["ingest", "--dry-run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let plan: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(plan["plan"]["stage"], "ingest");
    assert!(!out_dir.exists());
}

#[test]
fn report_renders_table_with_best_marks() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "report",
        "--annotations",
        fixture("annotations.jsonl").to_str().unwrap(),
        "--manifest",
        fixture("manifest.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("en->")).collect();
    assert_eq!(rows.len(), 2, "{stdout}");
    // en->ja has the lower best score (0.000), so it sorts first.
    assert!(rows[0].starts_with("en->ja") && rows[0].contains("0.000*"), "{stdout}");
    assert!(rows[1].starts_with("en->de") && rows[1].contains("0.500*"), "{stdout}");
    assert!(stdout.contains("Excluded annotations (1)"));
    let json: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report/mqm.json")).unwrap()).unwrap();
    assert_eq!(json["rows"][1]["scores"], serde_json::json!([1.25, 0.5, 6.25]));
}

#[test]
fn evalprep_chunks_and_assigns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&[
        "evalprep",
        "--documents",
        fixture("documents.jsonl").to_str().unwrap(),
        "--lang-pair",
        "en->de",
        "--systems",
        "A,B",
        "--raters",
        "r1,r2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let chunks = std::fs::read_to_string(out.join("evalprep/en_de/chunks.jsonl")).unwrap();
    let sizes: Vec<u64> = chunks
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["sentence_count"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes, vec![9, 10, 8]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("evalprep/en_de/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["chunks"].as_array().unwrap().len(), 3);
    let skips = std::fs::read_to_string(out.join("evalprep/en_de/skips.jsonl")).unwrap();
    assert_eq!(skips.lines().count(), 1);
}

#[test]
fn rewards_and_mix_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let stdout = ok(&[
        "rewards",
        "--input",
        fixture("rewards.jsonl").to_str().unwrap(),
        "--no-normalize",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("2 sequences"));
    let adv = std::fs::read_to_string(out.join("rewards/advantages.jsonl")).unwrap();
    let first: Value = serde_json::from_str(adv.lines().next().unwrap()).unwrap();
    assert_eq!(first["advantages"], serde_json::json!([2.0, -3.0, 2.0]));

    for (name, n, tokens) in [("instr", 400, 30), ("sent", 400, 20), ("blob", 100, 200)] {
        let lines: Vec<String> = (0..n).map(|i| format!(r#"{{"id":{i},"token_count":{tokens}}}"#)).collect();
        std::fs::write(dir.path().join(format!("{name}.jsonl")), lines.join("\n")).unwrap();
    }
    let cfg = dir.path().join("mix.toml");
    std::fs::write(
        &cfg,
        r#"seed = 3
[mixture]
total_tokens = 20000
entries = [
  { name = "instruction", fraction = 0.3, shards = ["instr.jsonl"] },
  { name = "sentence", fraction = 0.5, shards = ["sent.jsonl"] },
  { name = "blob", fraction = 0.2, shards = ["blob*.jsonl"] },
]
"#,
    )
    .unwrap();
    let args = ["mix", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    ok(&args);
    let first = std::fs::read(out.join("mix/stream.jsonl")).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(out.join("mix/stream.jsonl")).unwrap());
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("mix/report.json")).unwrap()).unwrap();
    for s in report["sources"].as_array().unwrap() {
        let d = s["fraction"].as_f64().unwrap() - s["target_fraction"].as_f64().unwrap();
        assert!(d.abs() <= 0.01, "{s}");
    }
}
